use serde::{Deserialize, Serialize};

use super::{Aggregation, GroupMeans, ZoneReport};
use crate::model::ModelParams;
use crate::semantics::{Attribute, N_ATTRIBUTES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub label: String,
    pub delta: f64,
}

/// Why a zone's mean utility differs from the citywide mean, split by
/// attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub zone_id: String,
    /// `beta_t * (zone mean - citywide mean)`, in coefficient order.
    pub deltas: [f64; N_ATTRIBUTES],
    pub delta_residual: f64,
    /// Zone mean utility minus citywide mean utility.
    pub total: f64,
    /// Non-zero-coefficient attributes and the residual, largest `|delta|`
    /// first.
    pub bars: Vec<Bar>,
}

impl Decomposition {
    pub fn delta(&self, attribute: Attribute) -> f64 {
        self.deltas[attribute.index()]
    }

    /// `sum of deltas + delta_residual - total`; zero up to rounding.
    pub fn identity_error(&self) -> f64 {
        self.deltas.iter().sum::<f64>() + self.delta_residual - self.total
    }
}

pub fn decompose_zone(zone: &ZoneReport, citywide: &GroupMeans, params: &ModelParams) -> Decomposition {
    let deltas: [f64; N_ATTRIBUTES] = std::array::from_fn(|t| {
        let beta = params.beta_sem[t];
        if beta == 0.0 {
            0.0
        } else {
            beta * (zone.means.mean_attributes[t] - citywide.mean_attributes[t])
        }
    });
    let delta_residual = zone.means.mean_residual - citywide.mean_residual;
    let mut bars: Vec<Bar> = Attribute::ALL
        .iter()
        .filter(|a| params.beta_sem[a.index()] != 0.0)
        .map(|a| Bar {
            label: a.name().to_string(),
            delta: deltas[a.index()],
        })
        .collect();
    bars.push(Bar {
        label: "residual".into(),
        delta: delta_residual,
    });
    bars.sort_by(|a, b| b.delta.abs().total_cmp(&a.delta.abs()));
    Decomposition {
        zone_id: zone.zone_id.clone(),
        deltas,
        delta_residual,
        total: zone.means.mean_utility - citywide.mean_utility,
        bars,
    }
}

pub fn decompose_all(aggregation: &Aggregation, params: &ModelParams) -> Vec<Decomposition> {
    aggregation
        .zones
        .iter()
        .map(|z| decompose_zone(z, &aggregation.citywide, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reported_params;

    fn means(attrs: [f64; N_ATTRIBUTES], utility: f64) -> GroupMeans {
        GroupMeans {
            image_count: 10,
            mean_utility: utility,
            mean_attributes: attrs,
            mean_residual: 0.0,
        }
    }

    #[test]
    fn more_trees_than_average() {
        let p = reported_params(1);
        let mut city = [0.1; N_ATTRIBUTES];
        city[0] = 2.0;
        let mut zone = city;
        zone[Attribute::Trees.index()] += 0.10;
        let u_city: f64 = city.iter().zip(&p.beta_sem).map(|(s, b)| s * b).sum();
        let u_zone: f64 = zone.iter().zip(&p.beta_sem).map(|(s, b)| s * b).sum();
        let report = ZoneReport {
            zone_id: "z".into(),
            means: means(zone, u_zone),
            median_utility: u_zone,
            low_confidence: false,
        };
        let d = decompose_zone(&report, &means(city, u_city), &p);
        assert!((d.delta(Attribute::Trees) - 0.14).abs() < 1e-12);
        assert!((d.total - 0.14).abs() < 1e-12);
        assert_eq!(d.delta(Attribute::Building), 0.0);
        assert_eq!(d.bars[0].label, "p_trees");
        assert!(d.bars.iter().all(|b| b.label != "p_building"));
        assert!(d.identity_error().abs() < 1e-12);
    }

    #[test]
    fn zone_equal_to_city() {
        let p = reported_params(1);
        let m = means([0.3; N_ATTRIBUTES], 0.7);
        let report = ZoneReport {
            zone_id: "z".into(),
            means: m.clone(),
            median_utility: 0.7,
            low_confidence: false,
        };
        let d = decompose_zone(&report, &m, &p);
        assert!(d.deltas.iter().all(|&v| v == 0.0));
        assert_eq!((d.delta_residual, d.total), (0.0, 0.0));
    }
}
