use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    load_choice_data, load_embeddings, load_semantic_labels, load_split, load_zone_map,
    ChoiceData, ChoiceObservation, DatasetSplit, EmbeddingStore, LabelReport, SemanticStore,
    ZoneMap,
};
use crate::error::{Error, Result};

/// `manifest.json`: file locations (relative to the manifest's directory),
/// embedding width and the unit string of every numeric attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub choices: PathBuf,
    pub embeddings: PathBuf,
    pub embedding_index: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<PathBuf>,
    pub k: usize,
    pub units: IndexMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        crate::json::read_file(path)
    }
}

/// Everything a manifest points at, loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub base_dir: PathBuf,
    pub choices: ChoiceData,
    pub embeddings: EmbeddingStore,
    pub labels: Option<SemanticStore>,
    pub label_report: LabelReport,
    pub zones: Option<ZoneMap>,
    pub split: Option<DatasetSplit>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let base_dir = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let resolve = |p: &Path| base_dir.join(p);

        let choices = load_choice_data(&resolve(&manifest.choices))?;
        let embeddings = load_embeddings(
            &resolve(&manifest.embeddings),
            &resolve(&manifest.embedding_index),
        )?;
        if embeddings.k() != manifest.k {
            return Err(Error::DimensionMismatch {
                what: "manifest K",
                expected: manifest.k,
                found: embeddings.k(),
            });
        }
        for name in &choices.attribute_names {
            if !manifest.units.contains_key(name) {
                return Err(Error::InvalidDataset(format!(
                    "manifest declares no unit for attribute {name:?}"
                )));
            }
        }
        let (labels, label_report) = match &manifest.semantics {
            Some(p) => {
                let (s, r) = load_semantic_labels(&resolve(p))?;
                (Some(s), r)
            }
            None => (None, LabelReport::default()),
        };
        let zones = manifest
            .zones
            .as_deref()
            .map(|p| load_zone_map(&resolve(p)))
            .transpose()?;
        let split = manifest
            .split
            .as_deref()
            .map(|p| load_split(&resolve(p)))
            .transpose()?;
        Ok(Dataset {
            manifest,
            base_dir,
            choices,
            embeddings,
            labels,
            label_report,
            zones,
            split,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Observations of the training split (all observations without a split).
    pub fn train_observations(&self) -> Result<Vec<&ChoiceObservation>> {
        match &self.split {
            Some(s) => self.select(&s.train),
            None => Ok(self.choices.observations.iter().collect()),
        }
    }

    pub fn test_observations(&self) -> Result<Vec<&ChoiceObservation>> {
        match &self.split {
            Some(s) => self.select(&s.test),
            None => Ok(Vec::new()),
        }
    }

    fn select(&self, ids: &[String]) -> Result<Vec<&ChoiceObservation>> {
        let by_id = self.choices.by_id();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidDataset(format!("split references unknown observation {id}")))
            })
            .collect()
    }

    pub fn units(&self) -> Vec<String> {
        self.choices
            .attribute_names
            .iter()
            .map(|n| self.manifest.units.get(n).cloned().unwrap_or_default())
            .collect()
    }
}
