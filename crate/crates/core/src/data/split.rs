use std::path::Path;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use super::{check_header, csv_reader, csv_writer, line_of};
use crate::error::{Error, Result};

/// Train and test observation ids. Written as `split.csv` with header
/// `obs_id,set` and `set` in `{train, test}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn load_split(path: &Path) -> Result<DatasetSplit> {
    let mut reader = csv_reader(path)?;
    check_header(&mut reader, &["obs_id", "set"])?;
    let mut seen = IndexSet::new();
    let mut split = DatasetSplit::default();
    for record in reader.records() {
        let record = record?;
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateKey(id));
        }
        match &record[1] {
            "train" => split.train.push(id),
            "test" => split.test.push(id),
            other => {
                return Err(Error::MalformedRow {
                    line: line_of(&record),
                    reason: format!("set must be train or test, found {other:?}"),
                })
            }
        }
    }
    Ok(split)
}

pub fn write_split(path: &Path, split: &DatasetSplit) -> Result<()> {
    let mut writer = csv_writer(path)?;
    writer.write_record(["obs_id", "set"])?;
    for id in &split.train {
        writer.write_record([id.as_str(), "train"])?;
    }
    for id in &split.test {
        writer.write_record([id.as_str(), "test"])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
