use std::borrow::Borrow;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::loss::{log_likelihood, rho_squared, semantic_rmse};
use super::params::ModelParams;
use crate::data::{ChoiceObservation, EmbeddingStore, SemanticStore};
use crate::error::Result;
use crate::semantics::Attribute;

/// Fit statistics on one data split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFit {
    pub n: usize,
    pub log_likelihood: f64,
    pub rho_squared: f64,
    /// Always `-log_likelihood / n`.
    pub cross_entropy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_rmse: Option<f64>,
}

pub fn evaluate_split<O: Borrow<ChoiceObservation>>(
    params: &ModelParams,
    observations: &[O],
    embeddings: &EmbeddingStore,
    labels: Option<&SemanticStore>,
) -> Result<SplitFit> {
    let n = observations.len();
    let ll = log_likelihood(params, observations, embeddings)?;
    let j = observations
        .first()
        .map_or(2, |o| o.borrow().alternatives.len());
    let covered = labels.filter(|l| {
        observations
            .iter()
            .all(|o| o.borrow().alternatives.iter().all(|a| l.contains_key(&a.image_id)))
    });
    let semantic_rmse = match covered {
        Some(l) if n > 0 => Some(semantic_rmse(params, observations, embeddings, l)?),
        _ => None,
    };
    Ok(SplitFit {
        n,
        log_likelihood: ll,
        rho_squared: rho_squared(ll, n, j)?,
        cross_entropy: -ll / n as f64,
        semantic_rmse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default)]
    pub fixed: bool,
}

/// Train/test fit and interpretable coefficients, laid out like a results
/// table of a choice-model paper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train: SplitFit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<SplitFit>,
    pub numeric: Vec<ParamRow>,
    pub semantic: Vec<ParamRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl FitReport {
    pub fn new(params: &ModelParams, train: SplitFit, test: Option<SplitFit>) -> Self {
        let numeric = params
            .meta
            .numeric_attributes
            .iter()
            .zip(&params.beta_num)
            .enumerate()
            .map(|(i, (name, &estimate))| ParamRow {
                name: name.clone(),
                estimate,
                unit: params.meta.numeric_units.get(i).cloned(),
                fixed: false,
            })
            .collect();
        let semantic = Attribute::ALL
            .iter()
            .map(|&a| ParamRow {
                name: a.name().to_string(),
                estimate: params.beta_sem[a.index()],
                unit: None,
                fixed: params.fixed_sem[a.index()],
            })
            .collect();
        FitReport {
            train,
            test,
            numeric,
            semantic,
            config: params.meta.config.clone(),
        }
    }

    /// Plain-text table: fit per split, then the interpretable coefficients.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut split = |label: &str, f: &SplitFit| {
            let _ = writeln!(out, "{label} data (N = {})", f.n);
            let _ = writeln!(out, "  {:<24}{:>12.1}", "Log-likelihood", f.log_likelihood);
            let _ = writeln!(out, "  {:<24}{:>12.3}", "rho^2", f.rho_squared);
            let _ = writeln!(out, "  {:<24}{:>12.3}", "Cross entropy", f.cross_entropy);
            if let Some(r) = f.semantic_rmse {
                let _ = writeln!(out, "  {:<24}{:>12.4}", "Semantic RMSE", r);
            }
        };
        split("Train", &self.train);
        if let Some(t) = &self.test {
            split("Test", t);
        }
        let _ = writeln!(out, "Numeric attributes");
        for r in &self.numeric {
            let unit = r.unit.as_deref().filter(|u| !u.is_empty());
            let unit = unit.map(|u| format!(" [{u}]")).unwrap_or_default();
            let _ = writeln!(out, "  {:<24}{:>12.2}", format!("beta_{}{}", r.name, unit), r.estimate);
        }
        let _ = writeln!(out, "Semantic attributes");
        for r in &self.semantic {
            let mark = if r.fixed { "*" } else { "" };
            let _ = writeln!(out, "  {:<24}{:>12.2}{mark}", format!("beta_{}", r.name), r.estimate);
        }
        let _ = writeln!(out, "* fixed for normalisation");
        out
    }
}
