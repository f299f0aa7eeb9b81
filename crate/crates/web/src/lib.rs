//! WebAssembly bindings for the browser demo. Every export takes and returns
//! JSON text; the plain functions behind them are usable from Rust too.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use streetdcm::model::{choice_probabilities, systematic_utility, reported_params, Terms};
use streetdcm::semantics::N_CLASSES;
use streetdcm::simulator::{simulate_embeddings, simulate_semantics, simulate_zones, SyntheticSpec};
use streetdcm::spatial::{aggregate_zones, decompose_all, score_images};
use streetdcm::trainer::gradient_audit;
use streetdcm::{Attribute, SemanticVector};
use wasm_bindgen::prelude::*;

/// One alternative of the choice explorer.
#[derive(Debug, Clone, Deserialize)]
pub struct AlternativeInput {
    pub hhcost: f64,
    pub tt: f64,
    pub car_count: f64,
    /// Class proportions keyed by attribute name (`p_car`, `p_trees`, ...);
    /// missing classes are zero and the rest of the frame is unsegmented.
    #[serde(default)]
    pub proportions: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExplorerInput {
    pub alternatives: Vec<AlternativeInput>,
    /// Constant added to every proportion coefficient.
    #[serde(default)]
    pub shift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlternativeOutput {
    pub utility: f64,
    pub probability: f64,
    pub shifted_utility: f64,
    pub shifted_probability: f64,
    pub numeric: f64,
    pub semantic: f64,
    pub unsegmented: f64,
    pub renormalised: bool,
    /// `beta_t * s_t` for every attribute, by name.
    pub contributions: Vec<(String, f64)>,
}

fn semantics_of(a: &AlternativeInput, i: usize) -> Result<(SemanticVector, bool), String> {
    let mut props = [0.0; N_CLASSES];
    for (name, &v) in &a.proportions {
        let attr: Attribute = name.parse().map_err(|_| format!("unknown class {name:?}"))?;
        if !attr.is_proportion() || attr == Attribute::Unsegmented {
            return Err(format!("{name} is not a class proportion"));
        }
        props[attr.index() - 1] = v;
    }
    let out = SemanticVector::from_labels(&format!("alternative {}", i + 1), a.car_count, props)
        .map_err(|e| e.to_string())?;
    Ok((out.vector, out.renormalised))
}

/// Utilities and logit probabilities under the reported coefficients, before
/// and after adding `shift` to every proportion coefficient.
pub fn explore(input: &ExplorerInput) -> Result<Vec<AlternativeOutput>, String> {
    if input.alternatives.len() < 2 {
        return Err("need at least two alternatives".into());
    }
    let base = reported_params(1);
    let mut shifted = base.clone();
    for a in Attribute::ALL {
        if a.is_proportion() {
            shifted.beta_sem[a.index()] += input.shift;
        }
    }
    let mut rows = Vec::new();
    for (i, alt) in input.alternatives.iter().enumerate() {
        let (s, renormalised) = semantics_of(alt, i)?;
        let x = [alt.hhcost, alt.tt];
        let u = systematic_utility(&base, &x, &s, &[0.0], Terms::FULL).map_err(|e| e.to_string())?;
        let v = systematic_utility(&shifted, &x, &s, &[0.0], Terms::FULL).map_err(|e| e.to_string())?;
        rows.push((s, renormalised, u, v.v_total));
    }
    let utilities: Vec<f64> = rows.iter().map(|r| r.2.v_total).collect();
    let shifted_utilities: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let p = choice_probabilities(&utilities).map_err(|e| e.to_string())?;
    let q = choice_probabilities(&shifted_utilities).map_err(|e| e.to_string())?;
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, (s, renormalised, u, sv))| AlternativeOutput {
            utility: u.v_total,
            probability: p[i],
            shifted_utility: *sv,
            shifted_probability: q[i],
            numeric: u.v_numeric,
            semantic: u.v_semantic,
            unsegmented: s.unsegmented,
            renormalised: *renormalised,
            contributions: Attribute::ALL
                .iter()
                .map(|a| (a.name().to_string(), u.per_attribute[a.index()]))
                .collect(),
        })
        .collect())
}

/// Simulates a city of `n_images` street images on a `grid_side` square
/// grid, scores them with the generating model and decomposes every zone.
pub fn city(seed: u64, n_images: usize, grid_side: usize, min_zone_count: usize) -> Result<Value, String> {
    if !(1..=40).contains(&grid_side) {
        return Err("grid side must be between 1 and 40".into());
    }
    if !(1..=200_000).contains(&n_images) {
        return Err("image count must be between 1 and 200000".into());
    }
    let spec = SyntheticSpec { seed, grid_side, sigma_z: 0.02, ..SyntheticSpec::default() };
    let e = |x: streetdcm::Error| x.to_string();
    let (ids, labels) = simulate_semantics(&spec, n_images).map_err(e)?;
    let emb = simulate_embeddings(&spec, &labels).map_err(e)?;
    let params = spec.true_params(&emb.encoder).map_err(e)?;
    let zones = simulate_zones(&spec, &ids);
    let scores = score_images(&params, &emb.store, true).map_err(e)?;
    let agg = aggregate_zones(&scores, &zones, min_zone_count).map_err(e)?;
    let decomps = decompose_all(&agg, &params);
    let cells: Vec<Value> = agg
        .zones
        .iter()
        .zip(&decomps)
        .map(|(z, d)| {
            let row: usize = z.zone_id[1..3].parse().unwrap_or(0);
            let col: usize = z.zone_id[3..].parse().unwrap_or(0);
            json!({
                "zone_id": z.zone_id,
                "row": row,
                "col": col,
                "image_count": z.means.image_count,
                "mean_utility": z.means.mean_utility,
                "median_utility": z.median_utility,
                "low_confidence": z.low_confidence,
                "total_deviation": d.total,
                "bars": d.bars,
            })
        })
        .collect();
    Ok(json!({
        "grid_side": grid_side,
        "n_images": n_images,
        "citywide_mean_utility": agg.citywide.mean_utility,
        "zones": cells,
    }))
}

fn js_err(e: String) -> JsValue {
    JsValue::from_str(&e)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(|e| js_err(e.to_string()))
}

#[wasm_bindgen(js_name = exploreChoice)]
pub fn explore_choice(input: &str) -> Result<String, JsValue> {
    let input: ExplorerInput = serde_json::from_str(input).map_err(|e| js_err(e.to_string()))?;
    to_json(&explore(&input).map_err(js_err)?)
}

#[wasm_bindgen(js_name = simulateCity)]
pub fn simulate_city(seed: u32, n_images: u32, grid_side: u32, min_zone_count: u32) -> Result<String, JsValue> {
    to_json(&city(seed.into(), n_images as usize, grid_side as usize, min_zone_count as usize).map_err(js_err)?)
}

#[wasm_bindgen(js_name = checkGradients)]
pub fn check_gradients(cases: u32, seed: u32) -> Result<String, JsValue> {
    let report = gradient_audit(cases as usize, seed.into(), 1e-5).map_err(|e| js_err(e.to_string()))?;
    to_json(&report)
}
