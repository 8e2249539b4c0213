//! Manual inspection: an event-sourced decision log over pseudo-annotations,
//! checkout leases for concurrent reviewers, and dataset export.

mod export;
mod store;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::{PseudoAnnotation, ReviewStatus};
use crate::error::{Result, ScdError};

pub use export::{export_dataset, load_exported, ExportEntry, ExportManifest, EXPORT_MANIFEST};
pub use store::{Checkout, Clock, ManualClock, Progress, ReviewConfig, ReviewStore, SystemClock, DECISION_LOG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewAction {
    Accept,
    Discard,
    RemoveInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub pair_id: String,
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
}

impl ReviewDecision {
    pub fn new(
        pair_id: impl Into<String>,
        action: ReviewAction,
        reviewer: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Self {
            pair_id: pair_id.into(),
            action,
            instance_id: None,
            reviewer: reviewer.into(),
            timestamp,
        }
    }

    pub fn remove(
        pair_id: impl Into<String>,
        instance_id: impl Into<String>,
        reviewer: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Self {
            instance_id: Some(instance_id.into()),
            ..Self::new(pair_id, ReviewAction::RemoveInstance, reviewer, timestamp)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.action, &self.instance_id) {
            (ReviewAction::RemoveInstance, None) => {
                Err(ScdError::InvalidConfig("remove_instance needs an instance_id".into()))
            }
            (ReviewAction::Accept | ReviewAction::Discard, Some(_)) => Err(ScdError::InvalidConfig(format!(
                "{:?} takes no instance_id",
                self.action
            ))),
            _ if self.reviewer.trim().is_empty() => Err(ScdError::InvalidConfig("empty reviewer".into())),
            _ => Ok(()),
        }
    }
}

/// Store contents as a pure fold of decisions over the initial annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewState {
    annotations: BTreeMap<String, PseudoAnnotation>,
    removed: BTreeMap<String, Vec<String>>,
    decisions: usize,
}

impl ReviewState {
    pub fn new(initial: Vec<PseudoAnnotation>) -> Result<Self> {
        let mut annotations = BTreeMap::new();
        for a in initial {
            if a.status != ReviewStatus::PendingReview {
                return Err(ScdError::InvalidConfig(format!(
                    "pair {} enters review already {:?}",
                    a.pair_id, a.status
                )));
            }
            let id = a.pair_id.clone();
            if annotations.insert(id.clone(), a).is_some() {
                return Err(ScdError::InvalidConfig(format!("duplicate pair {id}")));
            }
        }
        Ok(Self {
            annotations,
            removed: BTreeMap::new(),
            decisions: 0,
        })
    }

    pub fn replay(initial: Vec<PseudoAnnotation>, log: &[ReviewDecision]) -> Result<Self> {
        let mut state = Self::new(initial)?;
        for d in log {
            state.apply(d)?;
        }
        Ok(state)
    }

    /// The annotation a decision would produce, without applying it.
    pub fn preview(&self, d: &ReviewDecision) -> Result<PseudoAnnotation> {
        d.validate()?;
        let current = self
            .annotations
            .get(&d.pair_id)
            .ok_or_else(|| ScdError::NotFound(format!("pair {}", d.pair_id)))?;
        if current.status != ReviewStatus::PendingReview {
            return Err(ScdError::Conflict(format!(
                "pair {} is already {:?}",
                d.pair_id, current.status
            )));
        }
        Ok(match d.action {
            ReviewAction::Accept => PseudoAnnotation {
                status: current.status.transition(ReviewStatus::Accepted)?,
                ..current.clone()
            },
            ReviewAction::Discard => PseudoAnnotation {
                status: current.status.transition(ReviewStatus::Discarded)?,
                ..current.clone()
            },
            ReviewAction::RemoveInstance => {
                current.without_instances(std::slice::from_ref(d.instance_id.as_ref().expect("validated")))?
            }
        })
    }

    /// Applies one decision. On error the state is unchanged.
    pub fn apply(&mut self, d: &ReviewDecision) -> Result<&PseudoAnnotation> {
        let next = self.preview(d)?;
        Ok(self.commit(d, next))
    }

    fn commit(&mut self, d: &ReviewDecision, next: PseudoAnnotation) -> &PseudoAnnotation {
        if let Some(id) = &d.instance_id {
            self.removed.entry(d.pair_id.clone()).or_default().push(id.clone());
        }
        self.decisions += 1;
        let slot = self.annotations.get_mut(&d.pair_id).expect("previewed");
        *slot = next;
        slot
    }

    pub fn get(&self, pair_id: &str) -> Option<&PseudoAnnotation> {
        self.annotations.get(pair_id)
    }

    /// Annotations in pair-id order, which is also the review queue order.
    pub fn annotations(&self) -> impl Iterator<Item = &PseudoAnnotation> {
        self.annotations.values()
    }

    /// Instance ids removed from a pair so far.
    pub fn removed(&self, pair_id: &str) -> &[String] {
        self.removed.get(pair_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn decision_count(&self) -> usize {
        self.decisions
    }
}

#[cfg(test)]
mod tests;
