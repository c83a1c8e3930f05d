//! Change attribution: detect a shift on a target stream, walk the graph
//! backwards scoring component deviations, and attribute the shift to
//! upstream streams.

mod deviation;
mod divergence;
mod game;
mod proportional;
mod report;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::graph::{ComponentId, StreamId, ValidatedGraph};
use crate::log::StreamLog;
use crate::scm::{fit_frame, fit_mechanism, FitConfig, Frame, Scm, ScmError};
use crate::stats::{KlEstimator, StatsError};
use crate::value::StreamSchema;

pub use deviation::{deviation_between, Deviation};
pub use divergence::{bootstrap_threshold, stream_divergence, StreamSample};
pub use game::{shapley_attribution, GameConfig, MechanismGame};
pub use proportional::{aggregate_ratios, ProportionalScores, KL_FLOOR};
pub use report::{render_csv, render_table, to_probabilities, SCORE_FLOOR};

#[derive(Debug, thiserror::Error)]
pub enum AttributionError {
    #[error("stream `{stream}` has {have} records in a window, need {need}")]
    InsufficientData {
        stream: StreamId,
        have: usize,
        need: usize,
    },
    #[error("unknown stream `{0}`")]
    UnknownStream(StreamId),
    #[error("windows do not match: {0}")]
    WindowMismatch(String),
    #[error("KL of `{0}` is too small to divide by")]
    DegenerateDenominator(StreamId),
    #[error("all attribution scores are zero")]
    NoSignal,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

/// Old and new time windows of the same graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeWindows {
    pub old: StreamLog,
    pub new: StreamLog,
    pub target: StreamId,
}

impl ChangeWindows {
    pub fn new(old: StreamLog, new: StreamLog, target: impl Into<StreamId>) -> Result<Self, AttributionError> {
        let target = target.into();
        let a: BTreeSet<_> = old.streams.keys().collect();
        let b: BTreeSet<_> = new.streams.keys().collect();
        if a != b {
            return Err(AttributionError::WindowMismatch(
                "windows cover different stream sets".into(),
            ));
        }
        if !a.contains(&target) {
            return Err(AttributionError::UnknownStream(target));
        }
        for log in [&old, &new] {
            if log.len(&target) == 0 {
                return Err(AttributionError::InsufficientData {
                    stream: target,
                    have: 0,
                    need: 1,
                });
            }
        }
        Ok(ChangeWindows { old, new, target })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Shapley,
    ProportionalKl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Shapley => "shapley",
            Method::ProportionalKl => "proportional",
        }
    }
}

/// Per-stream attribution scores; `None` marks a stream that could not be attributed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionMap {
    pub method: Method,
    pub scores: IndexMap<StreamId, Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributionConfig {
    pub method: Method,
    pub estimator: KlEstimator,
    pub min_samples: usize,
    pub bootstrap_rounds: usize,
    pub shift_quantile: f64,
    pub game: GameConfig,
    /// Mechanisms whose change test has `p >= change_alpha` are refitted
    /// on both windows together and shared by the old and new models.
    pub pool_unchanged: bool,
    pub change_alpha: f64,
    pub seed: u64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            method: Method::Shapley,
            estimator: KlEstimator::default(),
            min_samples: 50,
            bootstrap_rounds: 200,
            shift_quantile: 0.95,
            game: GameConfig::default(),
            pool_unchanged: true,
            change_alpha: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftDetection {
    pub delta: f64,
    pub threshold: f64,
    pub shifted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionReport {
    pub target: StreamId,
    pub seed: u64,
    pub method: Method,
    pub estimator: String,
    pub shift: ShiftDetection,
    pub attribution: AttributionMap,
    /// `None` when no score carries signal.
    pub probabilities: Option<IndexMap<StreamId, f64>>,
    /// Keyed by output stream.
    pub deviations: IndexMap<StreamId, Deviation>,
    /// Two-sample tests of the source marginals upstream of the target.
    pub source_deviations: IndexMap<StreamId, Deviation>,
    pub warnings: Vec<String>,
}

impl AttributionReport {
    /// Stream with the largest `|score|`, if any score is nonzero.
    pub fn top(&self) -> Option<(&StreamId, f64)> {
        self.attribution
            .scores
            .iter()
            .filter_map(|(s, v)| v.map(|v| (s, v)))
            .filter(|(_, v)| v.abs() > SCORE_FLOOR)
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    }
}

pub fn estimator_name(e: KlEstimator) -> String {
    match e {
        KlEstimator::Histogram { bins } => format!("histogram({bins})"),
        KlEstimator::Knn { k } => format!("knn({k})"),
        KlEstimator::Discrete => "discrete".into(),
        KlEstimator::SmoothedDiscrete { pseudocount } => format!("smoothed-discrete({pseudocount})"),
    }
}

struct Prepared {
    schemas: BTreeMap<StreamId, StreamSchema>,
    old: Frame,
    new: Frame,
}

fn prepare(graph: &ValidatedGraph, windows: &ChangeWindows) -> Result<Prepared, AttributionError> {
    let causal = graph.causal_graph();
    let upstream = causal
        .upstream(&windows.target)
        .map_err(|_| AttributionError::UnknownStream(windows.target.clone()))?;
    let schemas: BTreeMap<StreamId, StreamSchema> = upstream
        .iter()
        .chain(std::iter::once(&windows.target))
        .map(|s| {
            graph
                .schema(s)
                .map(|sc| (s.clone(), sc.clone()))
                .map_err(|_| AttributionError::UnknownStream(s.clone()))
        })
        .collect::<Result<_, _>>()?;
    Ok(Prepared {
        old: Frame::from_log(&windows.old, &schemas),
        new: Frame::from_log(&windows.new, &schemas),
        schemas,
    })
}

fn target_samples(p: &Prepared, target: &StreamId, min: usize) -> Result<(StreamSample, StreamSample), AttributionError> {
    let a = StreamSample::from_column(&p.old.columns[target]);
    let b = StreamSample::from_column(&p.new.columns[target]);
    let have = a.len().min(b.len());
    if have < min {
        return Err(AttributionError::InsufficientData {
            stream: target.clone(),
            have,
            need: min,
        });
    }
    Ok((a, b))
}

fn detect(p: &Prepared, target: &StreamId, config: &AttributionConfig) -> Result<ShiftDetection, AttributionError> {
    let (old, new) = target_samples(p, target, config.min_samples)?;
    let delta = stream_divergence(&old, &new, config.estimator)?;
    let threshold = bootstrap_threshold(
        &old,
        old.len(),
        new.len(),
        config.estimator,
        config.bootstrap_rounds,
        config.shift_quantile,
        config.seed,
    )?;
    Ok(ShiftDetection {
        delta,
        threshold,
        shifted: delta > threshold,
    })
}

/// `Δ_Y = D(p(y) || q(y))` and whether it exceeds the bootstrap null threshold.
pub fn detect_shift(
    graph: &ValidatedGraph,
    windows: &ChangeWindows,
    config: &AttributionConfig,
) -> Result<ShiftDetection, AttributionError> {
    detect(&prepare(graph, windows)?, &windows.target, config)
}

/// Deviation of the mechanism `component` implements for `output`.
pub fn deviation(
    graph: &ValidatedGraph,
    component: &ComponentId,
    output: &StreamId,
    windows: &ChangeWindows,
    min_samples: usize,
) -> Result<Deviation, AttributionError> {
    let spec = graph
        .component(component)
        .map_err(|_| AttributionError::UnknownStream(output.clone()))?;
    if !spec.outputs.values().any(|s| s == output) {
        return Err(AttributionError::UnknownStream(output.clone()));
    }
    let parents: Vec<StreamId> = graph
        .causal_graph()
        .parents(output)
        .map_err(|_| AttributionError::UnknownStream(output.clone()))?
        .to_vec();
    let mut schemas = BTreeMap::new();
    for s in parents.iter().chain(std::iter::once(output)) {
        let schema = graph
            .schema(s)
            .map_err(|_| AttributionError::UnknownStream(s.clone()))?;
        schemas.insert(s.clone(), schema.clone());
    }
    let old = Frame::from_log(&windows.old, &schemas);
    let new = Frame::from_log(&windows.new, &schemas);
    deviation_between(Some(component), output, &parents, &old, &new, min_samples).map_err(|e| match e {
        StatsError::InsufficientData { have, need } => AttributionError::InsufficientData {
            stream: output.clone(),
            have,
            need,
        },
        e => e.into(),
    })
}

/// Breadth-first walk from the target towards the sources; every stream is
/// visited once. Returns `(component, output)` pairs in visiting order.
fn traverse(graph: &ValidatedGraph, target: &StreamId) -> Vec<(ComponentId, StreamId)> {
    let mut visited = BTreeSet::from([target.clone()]);
    let mut queue = VecDeque::from([target.clone()]);
    let mut out = Vec::new();
    while let Some(s) = queue.pop_front() {
        let Some(c) = graph.producer(&s) else { continue };
        out.push((c.id.clone(), s.clone()));
        for input in c.inputs.values() {
            if visited.insert(input.clone()) {
                queue.push_back(input.clone());
            }
        }
    }
    out
}

/// Full change attribution on `windows.target`. Per-node failures become
/// report warnings. Shapley attribution runs only when a shift is detected.
pub fn attribute_change(
    graph: &ValidatedGraph,
    windows: &ChangeWindows,
    config: &AttributionConfig,
) -> Result<AttributionReport, AttributionError> {
    let target = &windows.target;
    let prepared = prepare(graph, windows)?;
    let shift = detect(&prepared, target, config)?;
    let mut warnings = Vec::new();

    let visits = traverse(graph, target);
    let causal = graph.causal_graph();
    let results: Vec<_> = visits
        .par_iter()
        .map(|(c, s)| {
            let parents = causal.parents(s).expect("validated");
            (
                c,
                s,
                deviation_between(Some(c), s, parents, &prepared.old, &prepared.new, config.min_samples),
            )
        })
        .collect();
    let mut deviations = IndexMap::new();
    for (c, s, r) in results {
        match r {
            Ok(d) => {
                deviations.insert(s.clone(), d);
            }
            Err(e) => warnings.push(format!("deviation of `{c}` for `{s}`: {e}")),
        }
    }

    let ancestral = causal.ancestral(target).expect("target is known");
    let mut source_deviations = IndexMap::new();
    for v in ancestral.variables.iter().filter(|v| graph.producer(v).is_none()) {
        match deviation_between(None, v, &[], &prepared.old, &prepared.new, config.min_samples) {
            Ok(d) => {
                source_deviations.insert(v.clone(), d);
            }
            Err(e) => warnings.push(format!("deviation of source `{v}`: {e}")),
        }
    }
    let mut scores: IndexMap<StreamId, Option<f64>> =
        ancestral.variables.iter().map(|v| (v.clone(), Some(0.0))).collect();
    if !shift.shifted && config.method == Method::Shapley {
        warnings.push("no shift detected on target; attribution skipped".into());
    } else if graph.producer(target).is_none() {
        scores.insert(target.clone(), Some(shift.delta));
    } else {
        match config.method {
            Method::Shapley => {
                let fit_config = FitConfig {
                    min_samples: config.min_samples,
                    ..FitConfig::default()
                };
                let changed = |v: &StreamId| {
                    deviations
                        .get(v)
                        .or_else(|| source_deviations.get(v))
                        .is_none_or(|d: &Deviation| d.p_value < config.change_alpha)
                };
                let fitted = fit_pair(&ancestral, &prepared, &fit_config, config.pool_unchanged, changed);
                let game = GameConfig {
                    seed: config.seed,
                    estimator: config.estimator,
                    ..config.game
                };
                match fitted.map_err(AttributionError::from).and_then(|(old, new)| shapley_attribution(&old, &new, target, game)) {
                    Ok(phi) => {
                        for (s, v) in phi {
                            scores.insert(s, Some(v));
                        }
                    }
                    Err(e) => {
                        warnings.push(format!("shapley attribution failed: {e}"));
                        scores.values_mut().for_each(|v| *v = None);
                    }
                }
            }
            Method::ProportionalKl => {
                if !shift.shifted {
                    warnings.push("no shift detected on target".into());
                }
                let mut kl = BTreeMap::new();
                for v in &ancestral.variables {
                    let a = StreamSample::from_column(&prepared.old.columns[v]);
                    let b = StreamSample::from_column(&prepared.new.columns[v]);
                    if a.is_empty() || b.is_empty() {
                        warnings.push(format!("stream `{v}` is empty in a window"));
                        continue;
                    }
                    match stream_divergence(&a, &b, config.estimator) {
                        Ok(d) => {
                            kl.insert(v.clone(), d);
                        }
                        Err(e) => warnings.push(format!("KL of `{v}`: {e}")),
                    }
                }
                let agg = aggregate_ratios(&ancestral, target, &kl);
                for s in &agg.degenerate {
                    warnings.push(AttributionError::DegenerateDenominator(s.clone()).to_string());
                }
                for (s, v) in agg.scores {
                    scores.insert(s, v);
                }
            }
        }
    }

    let attribution = AttributionMap {
        method: config.method,
        scores,
    };
    let probabilities = match to_probabilities(&attribution) {
        Ok(p) => Some(p),
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };
    Ok(AttributionReport {
        target: target.clone(),
        seed: config.seed,
        method: config.method,
        estimator: estimator_name(config.estimator),
        shift,
        attribution,
        probabilities,
        deviations,
        source_deviations,
        warnings,
    })
}

/// Old and new SCMs; with `pool`, mechanisms for which `changed` is false
/// come from one fit on both windows and are shared.
fn fit_pair(
    causal: &crate::graph::CausalGraph,
    prepared: &Prepared,
    config: &FitConfig,
    pool: bool,
    changed: impl Fn(&StreamId) -> bool,
) -> Result<(Scm, Scm), ScmError> {
    let mut old = fit_frame(causal, &prepared.schemas, &prepared.old, config)?;
    let mut new = fit_frame(causal, &prepared.schemas, &prepared.new, config)?;
    let unchanged: Vec<&StreamId> = causal.variables.iter().filter(|v| !changed(v)).collect();
    if pool && !unchanged.is_empty() {
        let pooled = prepared.old.stack(&prepared.new);
        for v in unchanged {
            let parents = causal.parents(v).map_err(|_| ScmError::UnknownVariable(v.clone()))?;
            let m = std::sync::Arc::new(fit_mechanism(v, parents, &pooled, config)?);
            old.mechanisms.insert(v.clone(), m.clone());
            new.mechanisms.insert(v.clone(), m);
        }
    }
    Ok((old, new))
}
