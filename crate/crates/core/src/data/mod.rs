//! Domain types, file formats and validation for choice data, embeddings,
//! semantic labels and zone maps.

mod choices;
mod embeddings;
mod labels;
mod manifest;
mod split;
mod validate;
mod zones;

pub use choices::{load_choice_data, write_choice_data, Alternative, ChoiceData, ChoiceObservation};
pub use embeddings::{load_embeddings, EmbeddingStore, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use labels::{load_semantic_labels, write_semantic_labels, LabelReport, SemanticStore};
pub use manifest::{Dataset, Manifest};
pub use split::{load_split, write_split, DatasetSplit};
pub use validate::{validate_dataset, Issue, ValidationReport};
pub use zones::{load_zone_map, write_zone_map, ZoneEntry, ZoneMap};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

pub(crate) fn check_header(
    reader: &mut csv::Reader<std::fs::File>,
    expected: &[&str],
) -> Result<()> {
    let header = reader.headers()?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("expected header {:?}, found {:?}", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

pub(crate) fn parse_f64(field: &str, line: u64, name: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("{name}: cannot parse {field:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{name} on line {line}")));
    }
    Ok(v)
}

pub(crate) fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}
