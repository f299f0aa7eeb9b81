use std::time::Duration;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::gradient::{gradient, sgd_step, StepConfig};
use crate::data::{
    validate_dataset, ChoiceData, ChoiceObservation, Dataset, DatasetSplit, EmbeddingStore, Issue,
    SemanticStore,
};
use crate::error::{Error, Result};
use crate::model::{
    evaluate_split, log_likelihood, loss_components, FitReport, Groups, HistoryEntry,
    LossComponents, ModelParams, ParamGroup,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Semantic head only, `kappa = 1`.
    Head = 1,
    /// Numeric and semantic coefficients, `kappa = 0`.
    Utility = 2,
    /// Residual coefficients, `kappa = 0`.
    Residual = 3,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Head, Phase::Utility, Phase::Residual];

    pub fn id(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    /// Monitored loss did not improve by `min_delta` for `patience` epochs.
    Patience,
    /// Training log-likelihood dropped by more than the tolerance (phase 3).
    LikelihoodDecrease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: u8,
    pub epochs_run: usize,
    /// Epoch whose parameters were kept (0 = the incoming parameters).
    pub kept_epoch: usize,
    pub stop_reason: StopReason,
    pub final_train: LossComponents,
    pub final_validation: Option<LossComponents>,
    #[serde(skip)]
    pub wall_time: Duration,
    pub checksums_before: IndexMap<ParamGroup, String>,
    pub checksums_after: IndexMap<ParamGroup, String>,
}

impl PhaseResult {
    /// Groups whose checksum changed.
    pub fn changed_groups(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL
            .iter()
            .copied()
            .filter(|g| self.checksums_before[g] != self.checksums_after[g])
            .collect()
    }
}

/// Wall-clock timer; reads zero where the platform has no clock.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed();
        #[cfg(target_arch = "wasm32")]
        Duration::ZERO
    }
}

/// Observations a phase trains and validates on.
#[derive(Debug, Clone)]
pub struct TrainingData<'a> {
    pub train: Vec<&'a ChoiceObservation>,
    pub validation: Vec<&'a ChoiceObservation>,
    pub embeddings: &'a EmbeddingStore,
    pub labels: Option<&'a SemanticStore>,
}

impl<'a> TrainingData<'a> {
    fn labels_cover(&self, obs: &[&ChoiceObservation]) -> bool {
        self.labels.is_some_and(|l| {
            obs.iter()
                .all(|o| o.alternatives.iter().all(|a| l.contains_key(&a.image_id)))
        })
    }
}

fn components(
    params: &ModelParams,
    obs: &[&ChoiceObservation],
    data: &TrainingData<'_>,
    kappa: f64,
) -> Result<LossComponents> {
    loss_components(params, obs, data.embeddings, data.labels, kappa)
}

/// Runs one phase of plain minibatch SGD.
///
/// Batches come from a seeded Fisher-Yates shuffle per epoch, the last short
/// batch included. The monitored loss is the validation combined loss when a
/// validation set is usable, otherwise the training loss. Phases 1 and 2 keep
/// the parameters of the best monitored epoch; phase 3 additionally stops at
/// the first epoch whose training log-likelihood drops by more than
/// `ll_tolerance` and keeps the epoch before it.
pub fn train_phase(
    params: &mut ModelParams,
    data: &TrainingData<'_>,
    config: &TrainConfig,
    phase: Phase,
) -> Result<PhaseResult> {
    config.validate()?;
    let started = Stopwatch::start();
    let pc = config.phase(phase.id());
    let kappa = pc.kappa;
    let trainable = pc.trainable;
    if data.train.is_empty() {
        return Err(Error::InvalidDataset("no training observations".into()));
    }
    if kappa > 0.0 {
        let labels = data
            .labels
            .ok_or_else(|| Error::InvalidDataset("phase needs semantic labels".into()))?;
        for o in &data.train {
            for a in &o.alternatives {
                if !labels.contains_key(&a.image_id) {
                    return Err(Error::MissingLabel(a.image_id.clone()));
                }
            }
        }
    }
    let validation = (!data.validation.is_empty()
        && (kappa == 0.0 || data.labels_cover(&data.validation)))
    .then_some(&data.validation);

    let checksums_before = params.checksums();
    let step = StepConfig {
        learning_rate: config.phase_learning_rate(phase.id()),
        l2_lambda: config.l2_lambda,
        l2_groups: config.l2_groups,
        trainable,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(
        config
            .rng_seed
            .wrapping_add(u64::from(phase.id()).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    );

    let evaluate = |p: &ModelParams| -> Result<(LossComponents, Option<LossComponents>)> {
        let train = components(p, &data.train, data, kappa)?;
        let val = validation
            .map(|v| components(p, v, data, kappa))
            .transpose()?;
        Ok((train, val))
    };
    let monitored = |t: &LossComponents, v: &Option<LossComponents>| {
        v.as_ref().map_or(t.combined, |v| v.combined)
    };

    let (mut train_c, mut val_c) = evaluate(params)?;
    let mut best = (monitored(&train_c, &val_c), 0usize, params.clone(), train_c, val_c);
    let mut prev_ll = if phase == Phase::Residual {
        Some(log_likelihood(params, &data.train, data.embeddings)?)
    } else {
        None
    };
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut stop = StopReason::MaxEpochs;
    let mut epochs_run = 0;

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut batch: Vec<&ChoiceObservation> = Vec::with_capacity(config.batch_size);
    for epoch in 1..=pc.max_epochs {
        let snapshot = (phase == Phase::Residual).then(|| params.clone());
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data.train[i]));
            let g = gradient(params, &batch, data.embeddings, data.labels, kappa, trainable)?;
            sgd_step(params, &g, &step);
        }
        epochs_run = epoch;
        (train_c, val_c) = evaluate(params)?;
        history.push(HistoryEntry {
            phase: phase.id(),
            epoch,
            train: train_c,
            validation: val_c,
        });

        if let Some(prev) = prev_ll {
            let ll = log_likelihood(params, &data.train, data.embeddings)?;
            if ll < prev - config.ll_tolerance {
                *params = snapshot.expect("phase 3 keeps a snapshot");
                stop = StopReason::LikelihoodDecrease;
                let (t, v) = evaluate(params)?;
                best = (monitored(&t, &v), epoch - 1, params.clone(), t, v);
                break;
            }
            prev_ll = Some(ll);
            best = (monitored(&train_c, &val_c), epoch, params.clone(), train_c, val_c);
            continue;
        }

        let m = monitored(&train_c, &val_c);
        if m < best.0 - config.min_delta {
            best = (m, epoch, params.clone(), train_c, val_c);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stop = StopReason::Patience;
                break;
            }
        }
    }

    let (_, kept_epoch, kept, final_train, final_validation) = best;
    *params = kept;
    params.meta.history.extend(history);
    let checksums_after = params.checksums();
    for g in ParamGroup::ALL {
        if !trainable.contains(g) && checksums_before[&g] != checksums_after[&g] {
            return Err(Error::NumericalFailure(format!("frozen group {g:?} changed")));
        }
    }
    Ok(PhaseResult {
        phase: phase.id(),
        epochs_run,
        kept_epoch,
        stop_reason: stop,
        final_train,
        final_validation,
        wall_time: started.elapsed(),
        checksums_before,
        checksums_after,
    })
}

/// Head only, `kappa = 1`, using the configured phase-1 settings.
pub fn train_phase1(
    params: &mut ModelParams,
    data: &TrainingData<'_>,
    config: &TrainConfig,
) -> Result<PhaseResult> {
    train_phase(params, data, config, Phase::Head)
}

/// Numeric and semantic coefficients with the head frozen, `kappa = 0`.
pub fn train_phase2(
    params: &mut ModelParams,
    data: &TrainingData<'_>,
    config: &TrainConfig,
) -> Result<PhaseResult> {
    train_phase(params, data, config, Phase::Utility)
}

/// Residual coefficients with everything else frozen, `kappa = 0`.
pub fn train_phase3(
    params: &mut ModelParams,
    data: &TrainingData<'_>,
    config: &TrainConfig,
) -> Result<PhaseResult> {
    train_phase(params, data, config, Phase::Residual)
}

/// In-memory inputs of a sequential training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainingInput<'a> {
    pub choices: &'a ChoiceData,
    pub embeddings: &'a EmbeddingStore,
    pub labels: Option<&'a SemanticStore>,
    pub split: Option<&'a DatasetSplit>,
    pub units: &'a [String],
}

impl Dataset {
    pub fn training_input<'a>(&'a self, units: &'a [String]) -> TrainingInput<'a> {
        TrainingInput {
            choices: &self.choices,
            embeddings: &self.embeddings,
            labels: self.labels.as_ref(),
            split: self.split.as_ref(),
            units,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequentialOutcome {
    pub params: ModelParams,
    pub phases: Vec<PhaseResult>,
    pub fit: FitReport,
}

pub fn train_sequential(input: &TrainingInput<'_>, config: &TrainConfig) -> Result<SequentialOutcome> {
    train_sequential_with(input, config, |_, _| Ok(()))
}

/// Like [`train_sequential`], calling `on_phase` after each completed phase
/// so callers can checkpoint partial results.
pub fn train_sequential_with<F>(
    input: &TrainingInput<'_>,
    config: &TrainConfig,
    mut on_phase: F,
) -> Result<SequentialOutcome>
where
    F: FnMut(&ModelParams, &PhaseResult) -> Result<()>,
{
    config.validate()?;
    let report = validate_dataset(input.choices, input.embeddings, None, None, input.split);
    if let Some(issue) = report.issues.first() {
        return Err(match issue {
            Issue::MissingEmbedding(id) => Error::MissingEmbedding(id.clone()),
            other => Error::InvalidDataset(format!("{other:?}")),
        });
    }

    let by_id = input.choices.by_id();
    let pick = |ids: &[String]| -> Vec<&ChoiceObservation> {
        ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect()
    };
    let (train, test) = match input.split {
        Some(s) => (pick(&s.train), pick(&s.test)),
        None => (input.choices.observations.iter().collect(), Vec::new()),
    };
    let data = TrainingData {
        train,
        validation: test,
        embeddings: input.embeddings,
        labels: input.labels,
    };

    let mut params = ModelParams::with_head(
        config.head,
        input.embeddings.k(),
        input.choices.attribute_names.clone(),
    );
    params.set_reference_class(config.reference_class)?;
    params.init_head(config.rng_seed);
    params.meta.rmse_weights = config.rmse_weights;
    params.meta.numeric_units = input.units.to_vec();
    params.meta.config = Some(serde_json::to_value(config)?);

    let mut phases = Vec::with_capacity(3);
    for phase in Phase::ALL {
        let result = train_phase(&mut params, &data, config, phase)?;
        on_phase(&params, &result)?;
        phases.push(result);
    }

    let train_fit = evaluate_split(&params, &data.train, data.embeddings, data.labels)?;
    let test_fit = if data.validation.is_empty() {
        None
    } else {
        Some(evaluate_split(&params, &data.validation, data.embeddings, data.labels)?)
    };
    let fit = FitReport::new(&params, train_fit, test_fit);
    Ok(SequentialOutcome { params, phases, fit })
}

impl Groups {
    pub fn describe(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL
            .iter()
            .copied()
            .filter(|g| self.contains(*g))
            .collect()
    }
}
