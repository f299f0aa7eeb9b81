use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;

use super::{Decomposition, ImageScore, ZoneReport};
use crate::data::ZoneMap;
use crate::error::{Error, Result};
use crate::semantics::Attribute;

pub const ZONE_SCORES_HEADER: [&str; 15] = [
    "zone_id",
    "image_count",
    "mean_utility",
    "mean_car_count",
    "mean_p_car",
    "mean_p_building",
    "mean_p_grass",
    "mean_p_road",
    "mean_p_sky",
    "mean_p_trees",
    "mean_p_plants",
    "mean_p_fence",
    "mean_p_water",
    "mean_unsegmented",
    "mean_residual",
];

fn flush<W: std::io::Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_zone_scores(path: &Path, zones: &[ZoneReport]) -> Result<()> {
    let mut w = crate::data::csv_writer(path)?;
    w.write_record(ZONE_SCORES_HEADER)?;
    for z in zones {
        let m = &z.means;
        let mut row = vec![z.zone_id.clone(), m.image_count.to_string(), m.mean_utility.to_string()];
        row.extend(m.mean_attributes.iter().map(f64::to_string));
        row.push(m.mean_residual.to_string());
        w.write_record(&row)?;
    }
    flush(w, path)
}

/// `zone_id,attribute,delta`: every attribute, then `residual` and `total`.
pub fn write_decomposition(path: &Path, decompositions: &[Decomposition]) -> Result<()> {
    let mut w = crate::data::csv_writer(path)?;
    w.write_record(["zone_id", "attribute", "delta"])?;
    for d in decompositions {
        for a in Attribute::ALL {
            w.write_record([d.zone_id.as_str(), a.name(), &d.delta(a).to_string()])?;
        }
        w.write_record([d.zone_id.as_str(), "residual", &d.delta_residual.to_string()])?;
        w.write_record([d.zone_id.as_str(), "total", &d.total.to_string()])?;
    }
    flush(w, path)
}

/// One row per image: zone (empty if unmapped), utility parts and the
/// predicted semantics.
pub fn write_image_scores(path: &Path, scores: &[ImageScore], zones: Option<&ZoneMap>) -> Result<()> {
    let mut w = crate::data::csv_writer(path)?;
    let mut header = vec!["image_id", "zone_id", "utility", "v_semantic", "v_residual"];
    header.extend(Attribute::ALL.iter().map(|a| a.name()));
    w.write_record(&header)?;
    for s in scores {
        let zone = zones
            .and_then(|z| z.get(&s.image_id))
            .map_or("", |e| e.zone_id.as_str());
        let mut row = vec![
            s.image_id.clone(),
            zone.to_string(),
            s.utility.v_total.to_string(),
            s.utility.v_semantic.to_string(),
            s.utility.v_residual.to_string(),
        ];
        row.extend(s.semantics.to_array().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    flush(w, path)
}

/// Result of attaching zone results to a GeoJSON feature collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoJoin {
    /// The joined document; geometries are copied byte for byte.
    #[serde(skip)]
    pub text: String,
    pub features: usize,
    pub joined: usize,
    /// Zone reports with no feature of the same `zone_id`.
    pub zones_missing_geometry: Vec<String>,
    /// Features whose `zone_id` has no report.
    pub features_without_report: Vec<String>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedGeoJson(msg.into())
}

fn parse<'a, T: Deserialize<'a>>(raw: &'a RawValue, what: &str) -> Result<T> {
    serde_json::from_str(raw.get()).map_err(|e| malformed(format!("{what}: {e}")))
}

/// Adds `mean_utility`, `image_count`, `low_confidence`, `total_deviation`,
/// `delta_residual` and one `delta_<attribute>` per attribute to the
/// properties of every feature whose `zone_id` property matches a report.
///
/// Every member other than `properties` (geometry and CRS included) is
/// passed through unparsed.
pub fn join_geojson(geojson: &str, zones: &[ZoneReport], decompositions: &[Decomposition]) -> Result<GeoJoin> {
    let mut top: IndexMap<String, Box<RawValue>> =
        serde_json::from_str(geojson).map_err(|e| malformed(e.to_string()))?;
    match top.get("type").map(|t| parse::<String>(t, "type")).transpose()? {
        Some(t) if t == "FeatureCollection" => {}
        other => return Err(malformed(format!("expected a FeatureCollection, found {other:?}"))),
    }
    let raw_features = top
        .get("features")
        .ok_or_else(|| malformed("missing features"))?;
    let features: Vec<IndexMap<String, Box<RawValue>>> = parse(raw_features, "features")?;

    let reports: IndexMap<&str, &ZoneReport> = zones.iter().map(|z| (z.zone_id.as_str(), z)).collect();
    let decomps: IndexMap<&str, &Decomposition> =
        decompositions.iter().map(|d| (d.zone_id.as_str(), d)).collect();

    let mut seen = HashSet::new();
    let mut joined = 0;
    let mut features_without_report = Vec::new();
    let mut out_features = Vec::with_capacity(features.len());
    for (i, mut feature) in features.into_iter().enumerate() {
        let mut props: IndexMap<String, Value> = match feature.get("properties") {
            Some(p) => parse::<Option<IndexMap<String, Value>>>(p, "properties")?.unwrap_or_default(),
            None => IndexMap::new(),
        };
        let zone_id = match props.get("zone_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(malformed(format!("feature {i} has no zone_id property"))),
        };
        if !seen.insert(zone_id.clone()) {
            return Err(Error::DuplicateZoneFeature(zone_id));
        }
        if let Some(z) = reports.get(zone_id.as_str()) {
            joined += 1;
            props.insert("mean_utility".into(), z.means.mean_utility.into());
            props.insert("image_count".into(), z.means.image_count.into());
            props.insert("low_confidence".into(), z.low_confidence.into());
            if let Some(d) = decomps.get(zone_id.as_str()) {
                props.insert("total_deviation".into(), d.total.into());
                props.insert("delta_residual".into(), d.delta_residual.into());
                for a in Attribute::ALL {
                    props.insert(format!("delta_{}", a.name()), d.delta(a).into());
                }
            }
            let raw = serde_json::value::to_raw_value(&props)?;
            feature.insert("properties".into(), raw);
        } else {
            features_without_report.push(zone_id);
        }
        out_features.push(feature);
    }
    let zones_missing_geometry = zones
        .iter()
        .filter(|z| !seen.contains(&z.zone_id))
        .map(|z| z.zone_id.clone())
        .collect();
    let count = out_features.len();
    top.insert("features".into(), serde_json::value::to_raw_value(&out_features)?);
    let mut text = serde_json::to_string(&top)?;
    text.push('\n');
    Ok(GeoJoin {
        text,
        features: count,
        joined,
        zones_missing_geometry,
        features_without_report,
    })
}
