//! Repeated fault-injection, data-shift and control experiments on the
//! claims application.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::attribution::{attribute_change, AttributionConfig, AttributionError, ChangeWindows, Method};
use crate::claims::{self, build_claims_graph, claims_registry, inject_data_shift, inject_fault, ClaimGenerator, ClaimsParams};
use crate::graph::{StreamId, ValidatedGraph};
use crate::log::StreamLog;
use crate::runtime::{derive_seed, run, RuntimeError, SourceGenerator};
use crate::stats::{binomial_excess_test, confidence_interval, mean, welch_t_test, SampleSet, WelchResult};

const REPEAT_DOMAIN: u64 = 3 << 32;
/// Nominal false-positive rate for shift detection and deviation tests.
pub const NOMINAL_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FaultInjection,
    DataShift,
    /// Both windows come from the healthy pipeline.
    Control,
}

impl ExperimentKind {
    /// Stream the attribution should single out.
    pub fn expected_top(self) -> Option<&'static str> {
        match self {
            ExperimentKind::FaultInjection => Some(claims::SIMPLE),
            ExperimentKind::DataShift => Some(claims::NEW_CLAIMS),
            ExperimentKind::Control => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub repeats: usize,
    pub records: u64,
    pub seed: u64,
    pub method: Method,
    pub params: ClaimsParams,
    /// Seed and method are overridden per run.
    pub attribution: AttributionConfig,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        ExperimentConfig {
            kind,
            repeats: 30,
            records: 1000,
            seed,
            method: Method::Shapley,
            params: ClaimsParams::default(),
            attribution: AttributionConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("run {run}: {source}")]
    Runtime { run: usize, source: RuntimeError },
    #[error("run {run}: {source}")]
    Attribution { run: usize, source: AttributionError },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub delta: f64,
    pub threshold: f64,
    pub shifted: bool,
    /// Unattributable streams score 0.
    pub scores: IndexMap<StreamId, f64>,
    pub top: Option<StreamId>,
    /// Deviation p-value per computed output stream.
    pub deviation_p: IndexMap<StreamId, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamSummary {
    pub stream: StreamId,
    pub mean_score: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_abs: f64,
    pub abs_ci_hi: f64,
    pub abs_ci_lo: f64,
    /// Runs where this stream had the largest `|score|`.
    pub top_count: usize,
    /// Runs where the deviation of its producing component had p < 0.05.
    pub deviation_flags: usize,
    /// One-sided binomial p of `deviation_flags` against the nominal rate.
    pub deviation_excess_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub repeats: usize,
    pub records: u64,
    pub method: Method,
    pub streams: Vec<StreamSummary>,
    /// Stream with the largest mean `|score|`.
    pub top: Option<StreamId>,
    pub runner_up: Option<StreamId>,
    /// Welch test of `|score|` between top and runner-up; `None` when degenerate.
    pub welch: Option<WelchResult>,
    pub shift_count: usize,
    pub shift_excess_p: f64,
    pub runs: Vec<RunResult>,
}

impl ExperimentReport {
    pub fn summary(&self, stream: &str) -> Option<&StreamSummary> {
        self.streams.iter().find(|s| s.stream.as_str() == stream)
    }

    /// Welch p below `alpha`.
    pub fn top_significant(&self, alpha: f64) -> bool {
        self.welch.is_some_and(|w| w.p_value < alpha)
    }
}

fn generator(params: &ClaimsParams, shifted: bool) -> BTreeMap<StreamId, Box<dyn SourceGenerator>> {
    let base: Box<dyn SourceGenerator> = Box::new(ClaimGenerator::new(*params));
    let g = if shifted { inject_data_shift(base) } else { base };
    BTreeMap::from([(StreamId::new(claims::NEW_CLAIMS), g)])
}

/// The healthy and perturbed windows of one repeat.
pub fn experiment_windows(
    kind: ExperimentKind,
    params: &ClaimsParams,
    records: u64,
    seed: u64,
) -> Result<(ValidatedGraph, StreamLog, StreamLog), RuntimeError> {
    let healthy = build_claims_graph();
    let registry = claims_registry(params);
    let old = run(&healthy, &registry, generator(params, false), records, derive_seed(seed, 0, 0), "old")?;
    let new_graph = match kind {
        ExperimentKind::FaultInjection => inject_fault(&healthy).expect("classifier exists"),
        _ => healthy.clone(),
    };
    let new = run(
        &new_graph,
        &registry,
        generator(params, kind == ExperimentKind::DataShift),
        records,
        derive_seed(seed, 0, 1),
        "new",
    )?;
    Ok((healthy, old, new))
}

fn one_run(config: &ExperimentConfig, run_index: usize) -> Result<RunResult, ExperimentError> {
    let seed = derive_seed(config.seed, REPEAT_DOMAIN, run_index as u64);
    let (graph, old, new) = experiment_windows(config.kind, &config.params, config.records, seed)
        .map_err(|source| ExperimentError::Runtime { run: run_index, source })?;
    let attr_err = |source| ExperimentError::Attribution { run: run_index, source };
    let windows = ChangeWindows::new(old, new, claims::PAYOUT).map_err(attr_err)?;
    let attribution = AttributionConfig {
        method: config.method,
        seed: derive_seed(seed, 0, 2),
        ..config.attribution
    };
    let report = attribute_change(&graph, &windows, &attribution).map_err(attr_err)?;
    Ok(RunResult {
        run: run_index,
        seed,
        delta: report.shift.delta,
        threshold: report.shift.threshold,
        shifted: report.shift.shifted,
        top: report.top().map(|(s, _)| s.clone()),
        scores: report
            .attribution
            .scores
            .iter()
            .map(|(s, v)| (s.clone(), v.unwrap_or(0.0)))
            .collect(),
        deviation_p: report
            .deviations
            .iter()
            .map(|(s, d)| (s.clone(), d.p_value))
            .collect(),
        warnings: report.warnings,
    })
}

fn ci(values: &[f64]) -> (f64, f64) {
    confidence_interval(&SampleSet::numeric(values.to_vec()), 0.95).unwrap_or((f64::NAN, f64::NAN))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    if config.repeats < 2 {
        return Err(ExperimentError::Config("repeats must be at least 2".into()));
    }
    if config.records < config.attribution.min_samples as u64 {
        return Err(ExperimentError::Config(format!(
            "records must be at least {}",
            config.attribution.min_samples
        )));
    }
    let runs: Vec<RunResult> = (0..config.repeats)
        .into_par_iter()
        .map(|r| one_run(config, r))
        .collect::<Result<_, _>>()?;

    let streams: Vec<StreamSummary> = claims::STREAMS
        .iter()
        .map(|name| {
            let id = StreamId::new(*name);
            let scores: Vec<f64> = runs.iter().map(|r| r.scores.get(&id).copied().unwrap_or(0.0)).collect();
            let abs: Vec<f64> = scores.iter().map(|s| s.abs()).collect();
            let (ci_lo, ci_hi) = ci(&scores);
            let (abs_ci_lo, abs_ci_hi) = ci(&abs);
            let flags = runs
                .iter()
                .filter(|r| r.deviation_p.get(&id).is_some_and(|&p| p < NOMINAL_RATE))
                .count();
            let tested = runs.iter().filter(|r| r.deviation_p.contains_key(&id)).count();
            StreamSummary {
                stream: id.clone(),
                mean_score: mean(&scores),
                ci_lo,
                ci_hi,
                mean_abs: mean(&abs),
                abs_ci_lo,
                abs_ci_hi,
                top_count: runs.iter().filter(|r| r.top.as_ref() == Some(&id)).count(),
                deviation_flags: flags,
                deviation_excess_p: binomial_excess_test(flags as u64, tested as u64, NOMINAL_RATE),
            }
        })
        .collect();

    let mut ranked: Vec<&StreamSummary> = streams.iter().collect();
    ranked.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs));
    let (top, runner_up) = match (ranked.first(), ranked.get(1)) {
        (Some(a), Some(b)) if a.mean_abs > 0.0 => (Some(a.stream.clone()), Some(b.stream.clone())),
        _ => (None, None),
    };
    let abs_scores = |id: &StreamId| -> SampleSet {
        SampleSet::numeric(runs.iter().map(|r| r.scores.get(id).copied().unwrap_or(0.0).abs()).collect())
    };
    let welch = match (&top, &runner_up) {
        (Some(a), Some(b)) => welch_t_test(&abs_scores(a), &abs_scores(b)).ok(),
        _ => None,
    };
    let shift_count = runs.iter().filter(|r| r.shifted).count();
    Ok(ExperimentReport {
        kind: config.kind,
        seed: config.seed,
        repeats: config.repeats,
        records: config.records,
        method: config.method,
        streams,
        top,
        runner_up,
        welch,
        shift_count,
        shift_excess_p: binomial_excess_test(shift_count as u64, config.repeats as u64, NOMINAL_RATE),
        runs,
    })
}
