use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ZoneReport;
use crate::error::{Error, Result};
use crate::semantics::Attribute;

/// Marker written in place of an undefined correlation.
pub const UNDEFINED: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Pearson correlations and ranges of zone-level means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointStats {
    pub variables: Vec<String>,
    /// `None` where either variable has zero variance.
    pub correlation: Vec<Vec<Option<f64>>>,
    pub summary: Vec<VariableSummary>,
}

/// Sample Pearson correlation, `None` if either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn joint_distribution_stats(zones: &[ZoneReport]) -> Result<JointStats> {
    if zones.len() < 3 {
        return Err(Error::TooFewZones {
            needed: 3,
            found: zones.len(),
        });
    }
    let mut variables = vec!["mean_utility".to_string()];
    let mut columns = vec![zones.iter().map(|z| z.means.mean_utility).collect::<Vec<_>>()];
    for a in Attribute::ALL {
        variables.push(format!("mean_{}", a.name()));
        columns.push(zones.iter().map(|z| z.means.mean_attributes[a.index()]).collect());
    }
    variables.push("mean_residual".into());
    columns.push(zones.iter().map(|z| z.means.mean_residual).collect());

    let correlation = columns
        .iter()
        .map(|x| columns.iter().map(|y| pearson(x, y)).collect())
        .collect();
    let summary = variables
        .iter()
        .zip(&columns)
        .map(|(name, c)| VariableSummary {
            name: name.clone(),
            min: c.iter().copied().fold(f64::INFINITY, f64::min),
            max: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: c.iter().sum::<f64>() / c.len() as f64,
        })
        .collect();
    Ok(JointStats {
        variables,
        correlation,
        summary,
    })
}

impl JointStats {
    /// `variable,<variables...>` with one row per variable.
    pub fn write_correlation(&self, path: &Path) -> Result<()> {
        let mut w = crate::data::csv_writer(path)?;
        w.write_record(std::iter::once("variable").chain(self.variables.iter().map(String::as_str)))?;
        for (name, row) in self.variables.iter().zip(&self.correlation) {
            let cells = row
                .iter()
                .map(|c| c.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string()));
            w.write_record(std::iter::once(name.clone()).chain(cells))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `variable,min,max,mean`.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let mut w = crate::data::csv_writer(path)?;
        w.write_record(["variable", "min", "max", "mean"])?;
        for s in &self.summary {
            w.write_record([s.name.clone(), s.min.to_string(), s.max.to_string(), s.mean.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
