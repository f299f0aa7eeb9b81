use std::path::Path;

use indexmap::IndexMap;

use super::{check_header, csv_reader, csv_writer, line_of, parse_f64};
use crate::error::{Error, Result};
use crate::semantics::{SemanticVector, N_CLASSES};

pub const SEMANTICS_HEADER: [&str; 11] = [
    "image_id",
    "car_count",
    "p_car",
    "p_building",
    "p_grass",
    "p_road",
    "p_sky",
    "p_trees",
    "p_plants",
    "p_fence",
    "p_water",
];

/// Ground-truth semantic attributes keyed by image id. Equality is keyed and
/// ignores row order.
pub type SemanticStore = IndexMap<String, SemanticVector>;

/// Images whose proportions over-covered the frame within tolerance and were
/// rescaled to sum to one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelReport {
    pub renormalised: Vec<String>,
}

pub fn load_semantic_labels(path: &Path) -> Result<(SemanticStore, LabelReport)> {
    let mut reader = csv_reader(path)?;
    check_header(&mut reader, &SEMANTICS_HEADER)?;
    let mut store = SemanticStore::new();
    let mut report = LabelReport::default();
    for record in reader.records() {
        let record = record?;
        let line = line_of(&record);
        let image_id = record[0].to_string();
        let car_count = parse_f64(&record[1], line, "car_count")?;
        let mut proportions = [0.0; N_CLASSES];
        for (c, p) in proportions.iter_mut().enumerate() {
            *p = parse_f64(&record[2 + c], line, SEMANTICS_HEADER[2 + c])?;
        }
        let outcome = SemanticVector::from_labels(&image_id, car_count, proportions)?;
        if outcome.renormalised {
            report.renormalised.push(image_id.clone());
        }
        if store.insert(image_id.clone(), outcome.vector).is_some() {
            return Err(Error::DuplicateKey(image_id));
        }
    }
    Ok((store, report))
}

pub fn write_semantic_labels(path: &Path, labels: &SemanticStore) -> Result<()> {
    let mut writer = csv_writer(path)?;
    writer.write_record(SEMANTICS_HEADER)?;
    for (id, s) in labels {
        let mut row = Vec::with_capacity(SEMANTICS_HEADER.len());
        row.push(id.clone());
        row.push(s.car_count.to_string());
        row.extend(s.proportions.iter().map(|p| p.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(body: &str) -> Result<(SemanticStore, LabelReport)> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, format!("{}\n{body}", SEMANTICS_HEADER.join(","))).unwrap();
        load_semantic_labels(&path)
    }

    #[test]
    fn remainder_tolerance_and_rejection() {
        let (store, report) = load_str(
            "a,2,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.05,0.05\n\
             b,0,0.2,0.2,0.2,0.1,0.1,0.1,0.05,0.05,0.015\n",
        )
        .unwrap();
        assert!((store["a"].unsegmented - 0.2).abs() < 1e-12);
        assert_eq!(report.renormalised, vec!["b".to_string()]);
        assert!((store["b"].proportion_sum() - 1.0).abs() < 1e-12);

        let err = load_str("c,0,0.5,0.5,0.5,0,0,0,0,0,0\n").unwrap_err();
        assert!(matches!(err, Error::OverCoverage { .. }));
        let err = load_str("c,-1,0,0,0,0,0,0,0,0,0\n").unwrap_err();
        assert!(matches!(err, Error::NegativeValue { .. }));
    }
}
