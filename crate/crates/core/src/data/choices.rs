use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{csv_reader, csv_writer, line_of, parse_f64};
use crate::error::{Error, Result};

/// Alternatives per choice task in the stated-choice format.
pub const ALTERNATIVES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub image_id: String,
    /// Numeric attributes in the column order of the source file.
    pub numeric: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceObservation {
    pub obs_id: String,
    pub respondent_id: String,
    pub alternatives: Vec<Alternative>,
    pub chosen: usize,
}

/// Choice observations plus the names of their numeric attribute columns
/// (without the `attr_` prefix).
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceData {
    pub attribute_names: Vec<String>,
    pub observations: Vec<ChoiceObservation>,
}

impl ChoiceData {
    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn by_id(&self) -> IndexMap<&str, &ChoiceObservation> {
        self.observations
            .iter()
            .map(|o| (o.obs_id.as_str(), o))
            .collect()
    }

    /// Distinct image ids in first-appearance order.
    pub fn image_ids(&self) -> Vec<&str> {
        let mut seen = indexmap::IndexSet::new();
        for obs in &self.observations {
            for alt in &obs.alternatives {
                seen.insert(alt.image_id.as_str());
            }
        }
        seen.into_iter().collect()
    }
}

struct Row {
    line: u64,
    respondent_id: String,
    alt_id: usize,
    image_id: String,
    numeric: Vec<f64>,
    chosen: bool,
}

pub fn load_choice_data(path: &Path) -> Result<ChoiceData> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let fixed_front = ["obs_id", "respondent_id", "alt_id", "image_id"];
    let malformed_header = || Error::MalformedRow {
        line: 1,
        reason: format!("unexpected choices header {:?}", cols.join(",")),
    };
    if cols.len() < fixed_front.len() + 1
        || cols[..fixed_front.len()] != fixed_front
        || cols.last() != Some(&"chosen")
    {
        return Err(malformed_header());
    }
    let attr_cols = &cols[fixed_front.len()..cols.len() - 1];
    let mut attribute_names = Vec::with_capacity(attr_cols.len());
    for c in attr_cols {
        match c.strip_prefix("attr_") {
            Some(name) if !name.is_empty() => attribute_names.push(name.to_string()),
            _ => return Err(malformed_header()),
        }
    }
    let n_attr = attribute_names.len();

    let mut groups: IndexMap<String, Vec<Row>> = IndexMap::new();
    for record in reader.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != cols.len() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", cols.len(), record.len()),
            });
        }
        let alt_id = match &record[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("alt_id must be 0 or 1, found {other:?}"),
                })
            }
        };
        let chosen = match &record[record.len() - 1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("chosen must be 0 or 1, found {other:?}"),
                })
            }
        };
        if record[0].is_empty() || record[3].is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty obs_id or image_id".into(),
            });
        }
        let numeric = (0..n_attr)
            .map(|m| parse_f64(&record[4 + m], line, attr_cols[m]))
            .collect::<Result<Vec<_>>>()?;
        groups.entry(record[0].to_string()).or_default().push(Row {
            line,
            respondent_id: record[1].to_string(),
            alt_id,
            image_id: record[3].to_string(),
            numeric,
            chosen,
        });
    }

    let mut observations = Vec::with_capacity(groups.len());
    for (obs_id, mut rows) in groups {
        rows.sort_by_key(|r| r.alt_id);
        if rows.windows(2).any(|w| w[0].alt_id == w[1].alt_id) {
            let dup = rows.windows(2).find(|w| w[0].alt_id == w[1].alt_id).unwrap()[0].alt_id;
            return Err(Error::DuplicateAlternative { obs_id, alt_id: dup });
        }
        if rows.len() != ALTERNATIVES {
            return Err(Error::AlternativeCount {
                obs_id,
                count: rows.len(),
            });
        }
        let n_chosen = rows.iter().filter(|r| r.chosen).count();
        if n_chosen != 1 {
            return Err(Error::ChosenCount {
                obs_id,
                count: n_chosen,
            });
        }
        if rows[0].respondent_id != rows[1].respondent_id {
            return Err(Error::MalformedRow {
                line: rows[1].line,
                reason: format!("observation {obs_id} has inconsistent respondent ids"),
            });
        }
        let chosen = rows.iter().position(|r| r.chosen).unwrap();
        let respondent_id = rows[0].respondent_id.clone();
        observations.push(ChoiceObservation {
            obs_id,
            respondent_id,
            alternatives: rows
                .into_iter()
                .map(|r| Alternative {
                    image_id: r.image_id,
                    numeric: r.numeric,
                })
                .collect(),
            chosen,
        });
    }
    Ok(ChoiceData {
        attribute_names,
        observations,
    })
}

pub fn write_choice_data(path: &Path, data: &ChoiceData) -> Result<()> {
    let mut writer = csv_writer(path)?;
    let mut header = vec![
        "obs_id".to_string(),
        "respondent_id".into(),
        "alt_id".into(),
        "image_id".into(),
    ];
    header.extend(data.attribute_names.iter().map(|n| format!("attr_{n}")));
    header.push("chosen".into());
    writer.write_record(&header)?;
    for obs in &data.observations {
        for (j, alt) in obs.alternatives.iter().enumerate() {
            if alt.numeric.len() != data.n_attributes() {
                return Err(Error::DimensionMismatch {
                    what: "numeric attributes",
                    expected: data.n_attributes(),
                    found: alt.numeric.len(),
                });
            }
            let mut row = vec![
                obs.obs_id.clone(),
                obs.respondent_id.clone(),
                j.to_string(),
                alt.image_id.clone(),
            ];
            row.extend(alt.numeric.iter().map(|v| v.to_string()));
            row.push(u8::from(obs.chosen == j).to_string());
            writer.write_record(&row)?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "obs_id,respondent_id,alt_id,image_id,attr_hhcost,attr_tt,chosen\n";

    fn load_str(body: &str) -> Result<ChoiceData> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("choices.csv");
        std::fs::write(&path, format!("{HEADER}{body}")).unwrap();
        load_choice_data(&path)
    }

    #[test]
    fn minimal_file() {
        let data = load_str("o1,r1,0,img_a,1.5,0.5,1\no1,r1,1,img_b,1,2,0\n").unwrap();
        assert_eq!(data.attribute_names, vec!["hhcost", "tt"]);
        assert_eq!(data.observations.len(), 1);
        let obs = &data.observations[0];
        assert_eq!(obs.chosen, 0);
        assert_eq!(obs.alternatives[0].numeric, vec![1.5, 0.5]);
        assert_eq!(obs.alternatives[1].image_id, "img_b");
    }

    #[test]
    fn rows_may_arrive_out_of_order() {
        let data = load_str("o1,r1,1,img_b,1,2,1\no2,r1,0,c,0,0,1\no1,r1,0,img_a,1,1,0\no2,r1,1,d,0,0,0\n")
            .unwrap();
        assert_eq!(data.observations[0].chosen, 1);
        assert_eq!(data.observations[0].alternatives[0].image_id, "img_a");
    }

    #[test]
    fn both_chosen_is_rejected() {
        let err = load_str("o1,r1,0,a,1,1,1\no1,r1,1,b,1,1,1\n").unwrap_err();
        assert!(err.to_string().contains("chosen-count"), "{err}");
    }

    #[test]
    fn none_chosen_is_rejected() {
        let err = load_str("o1,r1,0,a,1,1,0\no1,r1,1,b,1,1,0\n").unwrap_err();
        assert!(matches!(err, Error::ChosenCount { count: 0, .. }));
    }

    #[test]
    fn single_alternative_is_rejected() {
        let err = load_str("o1,r1,0,a,1,1,1\n").unwrap_err();
        assert!(matches!(err, Error::AlternativeCount { count: 1, .. }));
    }

    #[test]
    fn duplicate_alternative_is_rejected() {
        let err = load_str("o1,r1,0,a,1,1,1\no1,r1,0,b,1,1,0\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateAlternative { alt_id: 0, .. }));
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(matches!(
            load_str("o1,r1,0,a,abc,1,1\no1,r1,1,b,1,1,0\n"),
            Err(Error::MalformedRow { .. })
        ));
        assert!(matches!(
            load_str("o1,r1,2,a,1,1,1\no1,r1,1,b,1,1,0\n"),
            Err(Error::MalformedRow { .. })
        ));
        assert!(load_str("o1,r1,0,a,1,1\no1,r1,1,b,1,1,0\n").is_err());
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "obs,respondent_id,alt_id,image_id,attr_x,chosen\n").unwrap();
        assert!(matches!(
            load_choice_data(&path),
            Err(Error::MalformedRow { line: 1, .. })
        ));
    }
}
