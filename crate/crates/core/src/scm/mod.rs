//! Structural causal models fitted over the streams of a dataflow graph.

mod fit;
pub mod frame;
mod mechanism;
mod sample;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{CausalGraph, StreamId};
use crate::log::StreamLog;
use crate::stats::{Cell, StatsError};
use crate::value::{StreamSchema, Value};

pub use fit::{fit, fit_frame, fit_mechanism, FitConfig, RootFamily};
pub use frame::Frame;
pub use mechanism::{
    draw_level, sorted_quantile, threshold_table, ConditionalTable, FieldModel, FixedCell,
    Mechanism, MechanismKind, Presence,
};
pub use sample::sample_mechanisms;

#[derive(Debug, thiserror::Error)]
pub enum ScmError {
    #[error("stream `{stream}` has {have} observations, need {need}")]
    InsufficientData {
        stream: StreamId,
        have: usize,
        need: usize,
    },
    #[error("unknown variable `{0}`")]
    UnknownVariable(StreamId),
    #[error("value for `{stream}` violates its schema: {reason}")]
    SchemaViolation { stream: StreamId, reason: String },
    #[error("density undefined for `{0}`")]
    DensityUndefined(StreamId),
    #[error("mechanism for `{stream}` uses parent `{parent}` that is not a parent in the graph")]
    ParentMismatch { stream: StreamId, parent: StreamId },
    #[error("`{0}` is intervened on more than once")]
    DuplicateTarget(StreamId),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("SCM file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Causal graph plus one mechanism per variable; noises are jointly independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scm {
    pub causal: CausalGraph,
    pub schemas: BTreeMap<StreamId, StreamSchema>,
    pub mechanisms: BTreeMap<StreamId, Arc<Mechanism>>,
    pub noise_independent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InterventionKind {
    /// do(X = x0).
    Atomic(Value),
    /// Replace the mechanism by `q(x | pa)`.
    Soft(Mechanism),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intervention {
    pub target: StreamId,
    pub kind: InterventionKind,
}

impl Intervention {
    pub fn atomic(target: impl Into<StreamId>, value: Value) -> Self {
        Intervention {
            target: target.into(),
            kind: InterventionKind::Atomic(value),
        }
    }

    pub fn soft(target: impl Into<StreamId>, mechanism: Mechanism) -> Self {
        Intervention {
            target: target.into(),
            kind: InterventionKind::Soft(mechanism),
        }
    }
}

impl Scm {
    /// Assembles an SCM, checking one mechanism per variable with matching parents.
    pub fn new(
        causal: CausalGraph,
        schemas: BTreeMap<StreamId, StreamSchema>,
        mechanisms: Vec<Mechanism>,
    ) -> Result<Scm, ScmError> {
        let mut map = BTreeMap::new();
        for m in mechanisms {
            let parents = causal
                .parents(&m.target)
                .map_err(|_| ScmError::UnknownVariable(m.target.clone()))?;
            if let Some(p) = m
                .parents
                .iter()
                .chain(parents)
                .find(|p| !(m.parents.contains(p) && parents.contains(p)))
            {
                return Err(ScmError::ParentMismatch {
                    stream: m.target.clone(),
                    parent: p.clone(),
                });
            }
            if map.contains_key(&m.target) {
                return Err(ScmError::DuplicateTarget(m.target));
            }
            map.insert(m.target.clone(), Arc::new(m));
        }
        for v in &causal.variables {
            if !map.contains_key(v) || !schemas.contains_key(v) {
                return Err(ScmError::UnknownVariable(v.clone()));
            }
        }
        Ok(Scm {
            causal,
            schemas,
            mechanisms: map,
            noise_independent: true,
        })
    }

    pub fn mechanism(&self, stream: &StreamId) -> Result<&Arc<Mechanism>, ScmError> {
        self.mechanisms
            .get(stream)
            .ok_or_else(|| ScmError::UnknownVariable(stream.clone()))
    }

    pub fn variables(&self) -> &[StreamId] {
        &self.causal.variables
    }

    /// Mechanisms in topological order.
    pub fn ordered(&self) -> Vec<&Mechanism> {
        self.causal
            .variables
            .iter()
            .map(|v| self.mechanisms[v].as_ref())
            .collect()
    }

    pub fn sample_frame(&self, n: usize, seed: u64) -> Frame {
        sample_mechanisms(&self.causal.variables, &self.schemas, &self.ordered(), n, seed)
    }

    /// Ancestral sampling; output is shaped like a runtime log.
    pub fn sample(&self, n: usize, seed: u64, label: &str) -> StreamLog {
        self.sample_frame(n, seed).to_log(label)
    }

    /// The sub-model over `stream` and its ancestors.
    pub fn ancestral(&self, stream: &StreamId) -> Result<Scm, ScmError> {
        let causal = self
            .causal
            .ancestral(stream)
            .map_err(|_| ScmError::UnknownVariable(stream.clone()))?;
        let keep: BTreeSet<&StreamId> = causal.variables.iter().collect();
        Ok(Scm {
            mechanisms: self
                .mechanisms
                .iter()
                .filter(|(k, _)| keep.contains(k))
                .map(|(k, m)| (k.clone(), Arc::clone(m)))
                .collect(),
            schemas: self
                .schemas
                .iter()
                .filter(|(k, _)| keep.contains(k))
                .map(|(k, s)| (k.clone(), s.clone()))
                .collect(),
            causal,
            noise_independent: true,
        })
    }

    /// Truncated factorisation: swaps out the intervened mechanisms and keeps
    /// every other mechanism object as is.
    pub fn intervene(&self, interventions: &[Intervention]) -> Result<Scm, ScmError> {
        let mut seen = BTreeSet::new();
        let mut out = self.clone();
        for iv in interventions {
            if !seen.insert(iv.target.clone()) {
                return Err(ScmError::DuplicateTarget(iv.target.clone()));
            }
            let original = self.mechanism(&iv.target)?;
            let schema = &self.schemas[&iv.target];
            let replacement = match &iv.kind {
                InterventionKind::Atomic(value) => {
                    schema.check(value).map_err(|reason| ScmError::SchemaViolation {
                        stream: iv.target.clone(),
                        reason,
                    })?;
                    let fields = schema
                        .fields()
                        .iter()
                        .zip(schema.split(value))
                        .map(|(f, s)| {
                            let cell = match frame::scalar_to_cell(&f.kind, &s) {
                                Cell::Num(x) => FixedCell::Number(x),
                                Cell::Level(l) => FixedCell::Level(l),
                                Cell::Absent => unreachable!("checked against schema"),
                            };
                            FieldModel::Fixed { cell }
                        })
                        .collect();
                    Mechanism {
                        target: iv.target.clone(),
                        parents: original.parents.clone(),
                        presence: Presence::Forced,
                        fields,
                        samples: 0,
                    }
                }
                InterventionKind::Soft(m) => {
                    if let Some(p) = m.parents.iter().find(|p| !original.parents.contains(p)) {
                        return Err(ScmError::ParentMismatch {
                            stream: iv.target.clone(),
                            parent: p.clone(),
                        });
                    }
                    if m.fields.len() != schema.fields().len() {
                        return Err(ScmError::SchemaViolation {
                            stream: iv.target.clone(),
                            reason: format!(
                                "mechanism has {} fields, schema has {}",
                                m.fields.len(),
                                schema.fields().len()
                            ),
                        });
                    }
                    let mut m = m.clone();
                    m.target = iv.target.clone();
                    m
                }
            };
            out.mechanisms.insert(iv.target.clone(), Arc::new(replacement));
        }
        Ok(out)
    }

    /// `Σ_i log p(x_i | pa_i)` for a full assignment; streams missing from
    /// `assignment` are treated as absent.
    pub fn joint_log_density(&self, assignment: &BTreeMap<StreamId, Value>) -> Result<f64, ScmError> {
        for k in assignment.keys() {
            if !self.mechanisms.contains_key(k) {
                return Err(ScmError::UnknownVariable(k.clone()));
            }
        }
        let cells_of = |s: &StreamId| -> Option<Vec<Cell>> {
            let schema = &self.schemas[s];
            assignment.get(s).map(|v| {
                schema
                    .fields()
                    .iter()
                    .zip(schema.split(v))
                    .map(|(f, sc)| frame::scalar_to_cell(&f.kind, &sc))
                    .collect()
            })
        };
        let mut total = 0.0;
        for v in &self.causal.variables {
            let m = &self.mechanisms[v];
            let mut parents = Vec::new();
            let mut any_parent = false;
            for p in &m.parents {
                match cells_of(p) {
                    Some(c) => {
                        any_parent = true;
                        parents.extend(c);
                    }
                    None => {
                        let width = self.schemas[p].fields().len();
                        parents.extend(std::iter::repeat_n(Cell::Absent, width));
                    }
                }
            }
            let p_present = m.presence_probability(&parents, any_parent);
            match cells_of(v) {
                None => total += (1.0 - p_present).ln(),
                Some(cells) => {
                    total += p_present.ln();
                    if cells.contains(&Cell::Absent) {
                        return Ok(f64::NEG_INFINITY);
                    }
                    for (model, cell) in m.fields.iter().zip(cells) {
                        total += model
                            .log_density(&parents, cell)
                            .ok_or_else(|| ScmError::DensityUndefined(v.clone()))?;
                    }
                }
            }
        }
        Ok(total)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("SCM serialises")
    }

    pub fn from_json(text: &str) -> Result<Scm, ScmError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScmError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scm, ScmError> {
        Scm::from_json(&std::fs::read_to_string(path)?)
    }
}
