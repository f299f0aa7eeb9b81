use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use super::{ChoiceData, DatasetSplit, EmbeddingStore, SemanticStore, ZoneMap};
use crate::semantics::N_ATTRIBUTES;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Issue {
    MissingEmbedding(String),
    MissingLabel(String),
    UnmappedImage(String),
    /// Image used by both a training and a test observation.
    SplitImageOverlap(String),
    /// Observation id listed in both splits.
    SplitObservationOverlap(String),
    UnknownSplitObservation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    pub k: usize,
    pub m: usize,
    pub t: usize,
    pub n: usize,
    pub j: usize,
    pub n_images: usize,
    /// Every referenced image has an embedding and a ground-truth label.
    pub trainable_phase1: bool,
    /// Every referenced image has an embedding; semantics are predicted.
    pub trainable_phase23: bool,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_dataset(
    choices: &ChoiceData,
    embeddings: &EmbeddingStore,
    labels: Option<&SemanticStore>,
    zones: Option<&ZoneMap>,
    split: Option<&DatasetSplit>,
) -> ValidationReport {
    let mut issues = Vec::new();
    let images = choices.image_ids();
    let mut missing_embedding = false;
    let mut missing_label = labels.is_none();
    for id in &images {
        if !embeddings.contains(id) {
            missing_embedding = true;
            issues.push(Issue::MissingEmbedding(id.to_string()));
        }
        if let Some(l) = labels {
            if !l.contains_key(*id) {
                missing_label = true;
                issues.push(Issue::MissingLabel(id.to_string()));
            }
        }
    }
    if let Some(z) = zones {
        for id in embeddings.image_ids() {
            if !z.contains_key(id) {
                issues.push(Issue::UnmappedImage(id.to_string()));
            }
        }
    }
    if let Some(s) = split {
        let by_id = choices.by_id();
        let train: IndexSet<&str> = s.train.iter().map(String::as_str).collect();
        for id in &s.test {
            if train.contains(id.as_str()) {
                issues.push(Issue::SplitObservationOverlap(id.clone()));
            }
        }
        let mut train_images = IndexSet::new();
        for id in &s.train {
            match by_id.get(id.as_str()) {
                Some(o) => train_images.extend(o.alternatives.iter().map(|a| a.image_id.as_str())),
                None => issues.push(Issue::UnknownSplitObservation(id.clone())),
            }
        }
        let mut reported = IndexSet::new();
        for id in &s.test {
            match by_id.get(id.as_str()) {
                Some(o) => {
                    for a in &o.alternatives {
                        if train_images.contains(a.image_id.as_str())
                            && reported.insert(a.image_id.as_str())
                        {
                            issues.push(Issue::SplitImageOverlap(a.image_id.clone()));
                        }
                    }
                }
                None => issues.push(Issue::UnknownSplitObservation(id.clone())),
            }
        }
    }
    ValidationReport {
        issues,
        k: embeddings.k(),
        m: choices.n_attributes(),
        t: N_ATTRIBUTES,
        n: choices.observations.len(),
        j: choices
            .observations
            .first()
            .map_or(0, |o| o.alternatives.len()),
        n_images: images.len(),
        trainable_phase1: !missing_embedding && !missing_label,
        trainable_phase23: !missing_embedding,
    }
}
