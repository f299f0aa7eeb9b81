use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};
use streetdcm::data::{Dataset, ZoneMap};
use streetdcm::model::{evaluate_split, FitReport, ModelParams};
use streetdcm::simulator::{parameter_recovery_experiment, recovery_train_config, simulate, SyntheticSpec};
use streetdcm::spatial::{
    aggregate_zones, decompose_all, join_geojson, joint_distribution_stats, score_images,
    write_decomposition, write_image_scores, write_zone_scores, Aggregation, Decomposition,
    ImageScore,
};
use streetdcm::trainer::{gradient_audit, train_sequential_with, TrainConfig};

use crate::config::{layered, train_config};
use crate::{
    CheckArgs, Command, DecomposeArgs, EvalArgs, Failure, RecoverArgs, ScoreArgs, SimulateArgs,
    SplitChoice, TrainArgs,
};

type Outcome = Result<Value, Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Score(a) => score(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Decompose(a) => decompose(a),
        Command::Report(a) => report(a),
        Command::CheckGradients(a) => check_gradients(a),
        Command::Recover(a) => recover(a),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    Ok(streetdcm::json::write_file(path, value)?)
}

/// Records the subcommand and its effective settings next to its outputs.
fn write_run(dir: &Path, command: &str, settings: Value) -> Result<(), Failure> {
    write_json(&dir.join("run.json"), &json!({ "command": command, "settings": settings }))
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(runtime)
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{what} {} does not exist", path.display())))
    }
}

fn load_dataset(manifest: &Path) -> Result<Dataset, Failure> {
    require_file(manifest, "manifest")?;
    let d = Dataset::load(manifest)?;
    if !d.label_report.renormalised.is_empty() {
        warn!(
            "{} label rows over-covered the frame and were renormalised",
            d.label_report.renormalised.len()
        );
    }
    Ok(d)
}

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    require_file(path, "model")?;
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let p = ModelParams::from_json(&text)?;
    p.validate()?;
    Ok(p)
}

fn simulate_cmd(a: SimulateArgs) -> Outcome {
    let mut spec = layered(SyntheticSpec::default(), a.spec.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.n {
        spec.n_observations = n;
    }
    if let Some(k) = a.k {
        spec.k = k;
    }
    if let Some(s) = a.sigma_z {
        spec.sigma_z = s;
    }
    spec.validate()?;
    let data = simulate(&spec)?;
    create_dir(&a.out)?;
    data.write(&a.out)?;
    write_run(&a.out, "simulate", to_value(&spec)?)?;
    info!("wrote {} observations to {}", spec.n_observations, a.out.display());
    Ok(json!({
        "command": "simulate",
        "out": a.out,
        "n_observations": spec.n_observations,
        "n_images": data.embeddings.len(),
        "k": spec.k,
        "train": data.split.train.len(),
        "test": data.split.test.len(),
        "encoder_rank_deficient": data.encoder.rank_deficient,
    }))
}

fn train(a: TrainArgs) -> Outcome {
    let config = train_config(TrainConfig::default(), &a.train)?;
    let dataset = load_dataset(&a.manifest)?;
    let units = dataset.units();
    create_dir(&a.out)?;
    write_run(&a.out, "train", to_value(&config)?)?;
    let out = a.out.clone();
    let outcome = train_sequential_with(&dataset.training_input(&units), &config, |params, phase| {
        info!(
            "phase {} stopped after {} epochs ({:?}), train loss {:.6}",
            phase.phase, phase.epochs_run, phase.stop_reason, phase.final_train.combined
        );
        std::fs::write(out.join(format!("model_phase{}.json", phase.phase)), params.to_json()?)
            .map_err(|e| streetdcm::Error::io(&out, e))?;
        streetdcm::json::write_file(&out.join(format!("phase{}.json", phase.phase)), phase)
    })?;
    write_text(&a.out.join("model.json"), &outcome.params.to_json()?)?;
    write_json(&a.out.join("fit_report.json"), &outcome.fit)?;
    write_text(&a.out.join("fit_report.txt"), &outcome.fit.render())?;
    eprint!("{}", outcome.fit.render());
    let phases: Vec<Value> = outcome
        .phases
        .iter()
        .map(|p| json!({ "phase": p.phase, "epochs_run": p.epochs_run, "kept_epoch": p.kept_epoch, "stop_reason": p.stop_reason }))
        .collect();
    Ok(json!({
        "command": "train",
        "out": a.out,
        "train": outcome.fit.train,
        "test": outcome.fit.test,
        "phases": phases,
    }))
}

fn eval(a: EvalArgs) -> Outcome {
    let dataset = load_dataset(&a.manifest)?;
    let params = load_model(&a.model)?;
    let obs = match a.split {
        SplitChoice::Train => dataset.train_observations()?,
        SplitChoice::Test => dataset.test_observations()?,
        SplitChoice::All => dataset.choices.observations.iter().collect(),
    };
    if obs.is_empty() {
        return Err(Failure::Validation(format!("the {:?} split has no observations", a.split).to_lowercase()));
    }
    let fit = evaluate_split(&params, &obs, &dataset.embeddings, dataset.labels.as_ref())?;
    let table = FitReport::new(&params, fit.clone(), None).render();
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_json(&dir.join("eval.json"), &fit)?;
            write_text(&dir.join("eval.txt"), &table)?;
        }
        None => eprint!("{table}"),
    }
    let split = match a.split {
        SplitChoice::Train => "train",
        SplitChoice::Test => "test",
        SplitChoice::All => "all",
    };
    Ok(json!({ "command": "eval", "split": split, "fit": fit }))
}

struct Scored {
    dataset: Dataset,
    params: ModelParams,
    scores: Vec<ImageScore>,
}

fn scored(a: &ScoreArgs) -> Result<Scored, Failure> {
    let dataset = load_dataset(&a.manifest)?;
    let params = load_model(&a.model)?;
    let scores = score_images(&params, &dataset.embeddings, !a.no_residual)?;
    Ok(Scored { dataset, params, scores })
}

fn zones_of(d: &Dataset) -> Result<&ZoneMap, Failure> {
    d.zones
        .as_ref()
        .ok_or_else(|| Failure::Validation("the manifest lists no zone map".into()))
}

fn settings(a: &ScoreArgs) -> Value {
    json!({
        "manifest": a.manifest,
        "model": a.model,
        "include_residual": !a.no_residual,
        "min_zone_count": a.min_zone_count,
    })
}

fn score(a: ScoreArgs) -> Outcome {
    let s = scored(&a)?;
    create_dir(&a.out)?;
    write_image_scores(&a.out.join("image_scores.csv"), &s.scores, s.dataset.zones.as_ref())?;
    write_run(&a.out, "score", settings(&a))?;
    let mean = s.scores.iter().map(|x| x.utility.v_total).sum::<f64>() / s.scores.len().max(1) as f64;
    Ok(json!({ "command": "score", "out": a.out, "n_images": s.scores.len(), "mean_utility": mean }))
}

fn aggregated(a: &ScoreArgs) -> Result<(Scored, Aggregation), Failure> {
    let s = scored(a)?;
    let agg = aggregate_zones(&s.scores, zones_of(&s.dataset)?, a.min_zone_count)?;
    if !agg.unmapped.is_empty() {
        warn!("{} images have no zone and were left out", agg.unmapped.len());
    }
    Ok((s, agg))
}

fn aggregation_summary(command: &str, out: &Path, agg: &Aggregation) -> Value {
    json!({
        "command": command,
        "out": out,
        "zones": agg.zones.len(),
        "low_confidence_zones": agg.zones.iter().filter(|z| z.low_confidence).count(),
        "unmapped_images": agg.unmapped.len(),
        "citywide_mean_utility": agg.citywide.mean_utility,
    })
}

fn aggregate(a: ScoreArgs) -> Outcome {
    let (_, agg) = aggregated(&a)?;
    create_dir(&a.out)?;
    write_zone_scores(&a.out.join("zone_scores.csv"), &agg.zones)?;
    write_json(&a.out.join("zones.json"), &agg)?;
    write_run(&a.out, "aggregate", settings(&a))?;
    Ok(aggregation_summary("aggregate", &a.out, &agg))
}

pub fn bar_table(decompositions: &[Decomposition]) -> String {
    let mut out = String::new();
    for d in decompositions {
        let _ = writeln!(out, "{}  total {:+.4}", d.zone_id, d.total);
        for b in &d.bars {
            let width = (b.delta.abs() * 50.0).round().min(40.0) as usize;
            let _ = writeln!(out, "  {:<16}{:+.4}  {}", b.label, b.delta, "#".repeat(width));
        }
    }
    out
}

fn decompose(a: DecomposeArgs) -> Outcome {
    let sa = &a.scoring;
    let (s, agg) = aggregated(sa)?;
    let decomps = decompose_all(&agg, &s.params);
    create_dir(&sa.out)?;
    write_decomposition(&sa.out.join("decomposition.csv"), &decomps)?;
    write_text(&sa.out.join("bars.txt"), &bar_table(&decomps))?;
    let geometry: Option<PathBuf> = a
        .geojson
        .clone()
        .or_else(|| s.dataset.manifest.geometry.as_deref().map(|g| s.dataset.resolve(g)));
    let mut summary = aggregation_summary("decompose", &sa.out, &agg);
    if let Some(path) = geometry {
        require_file(&path, "GeoJSON")?;
        let text = std::fs::read_to_string(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let joined = join_geojson(&text, &agg.zones, &decomps)?;
        write_text(&sa.out.join("zones_joined.geojson"), &joined.text)?;
        if !joined.zones_missing_geometry.is_empty() {
            warn!("{} zones have no polygon", joined.zones_missing_geometry.len());
        }
        summary["geojson"] = to_value(&joined)?;
    }
    let mut run = settings(sa);
    run["geojson"] = to_value(&a.geojson)?;
    write_run(&sa.out, "decompose", run)?;
    let worst = decomps.iter().map(|d| d.identity_error().abs()).fold(0.0, f64::max);
    summary["max_identity_error"] = worst.into();
    Ok(summary)
}

fn report(a: ScoreArgs) -> Outcome {
    let (_, agg) = aggregated(&a)?;
    let stats = joint_distribution_stats(&agg.zones)?;
    create_dir(&a.out)?;
    stats.write_correlation(&a.out.join("correlation.csv"))?;
    stats.write_summary(&a.out.join("summary.csv"))?;
    write_json(&a.out.join("report.json"), &stats)?;
    write_run(&a.out, "report", settings(&a))?;
    Ok(json!({ "command": "report", "out": a.out, "zones": agg.zones.len(), "variables": stats.variables }))
}

fn check_gradients(a: CheckArgs) -> Outcome {
    let audit = gradient_audit(a.cases, a.seed, a.tolerance)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("gradient_check.json"), &audit)?;
    }
    let summary = json!({ "command": "check-gradients", "audit": audit });
    if audit.passed {
        Ok(summary)
    } else {
        println!("{summary}");
        Err(Failure::Runtime(format!(
            "largest relative gradient error {:.3e} is above {:.1e}",
            audit.max_relative_error, audit.tolerance
        )))
    }
}

fn recover(a: RecoverArgs) -> Outcome {
    let seed = a.train.seed.unwrap_or(0);
    let mut spec = layered(SyntheticSpec::recovery(a.n, seed), a.spec.as_deref())?;
    spec.n_observations = a.n;
    if let Some(s) = a.train.seed {
        spec.seed = s;
    }
    let config = train_config(recovery_train_config(spec.seed), &a.train)?;
    let outcome = parameter_recovery_experiment(&spec, &config)?;
    let r = &outcome.report;
    let mut table = String::new();
    let _ = writeln!(table, "{:<16}{:>10}{:>10}{:>10}{:>10}", "coefficient", "truth", "estimate", "error", "s.e.");
    for c in &r.coefficients {
        let se = c.standard_error.map_or("-".to_string(), |s| format!("{s:.3}"));
        let mark = if c.within_tolerance { "" } else { "  *" };
        let _ = writeln!(table, "{:<16}{:>10.3}{:>10.3}{:>10.3}{:>10}{mark}", c.name, c.truth, c.estimate, c.abs_error, se);
    }
    let _ = writeln!(table, "* error above {}", r.tolerance);
    eprint!("{table}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("recovery.json"), r)?;
        write_text(&dir.join("recovery.txt"), &table)?;
        write_text(&dir.join("model.json"), &outcome.params.to_json()?)?;
        write_run(dir, "recover", json!({ "spec": spec, "train": config }))?;
    }
    Ok(json!({
        "command": "recover",
        "n_observations": r.n_observations,
        "tolerance": r.tolerance,
        "all_within_tolerance": r.all_within_tolerance,
        "mean_abs_error": r.mean_abs_error,
        "max_abs_error": r.max_abs_error,
        "test_cross_entropy": r.test.as_ref().map(|t| t.cross_entropy),
        "bayes_cross_entropy": r.bayes_cross_entropy,
    }))
}
