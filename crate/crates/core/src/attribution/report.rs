use std::fmt::Write;

use indexmap::IndexMap;

use crate::graph::StreamId;

use super::{AttributionError, AttributionMap, AttributionReport};

/// Scores at or below this magnitude carry no signal.
pub const SCORE_FLOOR: f64 = 1e-12;

/// `|score_i| / Σ_j |score_j|` over attributable streams.
pub fn to_probabilities(attr: &AttributionMap) -> Result<IndexMap<StreamId, f64>, AttributionError> {
    let scored: Vec<(&StreamId, f64)> = attr
        .scores
        .iter()
        .filter_map(|(s, v)| v.map(|v| (s, v.abs())))
        .collect();
    if scored.iter().all(|(_, v)| *v <= SCORE_FLOOR) {
        return Err(AttributionError::NoSignal);
    }
    let total: f64 = scored.iter().map(|(_, v)| v).sum();
    Ok(scored.into_iter().map(|(s, v)| (s.clone(), v / total)).collect())
}

fn fmt_opt(v: Option<f64>, precision: usize) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.precision$}"))
}

pub fn render_table(report: &AttributionReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# seed={} target={} method={} estimator={}",
        report.seed,
        report.target,
        report.method.name(),
        report.estimator
    );
    let _ = writeln!(
        out,
        "delta={:.6} threshold={:.6} shifted={}",
        report.shift.delta, report.shift.threshold, report.shift.shifted
    );
    let width = report
        .attribution
        .scores
        .keys()
        .map(|s| s.as_str().len())
        .chain(report.deviations.values().filter_map(|d| d.component.as_ref()).map(|c| c.as_str().len()))
        .max()
        .unwrap_or(4)
        .max(9);
    let _ = writeln!(out, "\n{:<width$}  {:>12}  {:>11}", "node", "score", "probability");
    for (s, v) in &report.attribution.scores {
        let p = report.probabilities.as_ref().and_then(|p| p.get(s).copied());
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>11}", s, fmt_opt(*v, 6), fmt_opt(p, 2));
    }
    if !report.deviations.is_empty() {
        let _ = writeln!(
            out,
            "\n{:<width$}  {:<width$}  {:>10}  {:>10}",
            "component", "output", "deviation", "p_value"
        );
        for d in report.source_deviations.values().chain(report.deviations.values()) {
            let _ = writeln!(
                out,
                "{:<width$}  {:<width$}  {:>10.3}  {:>10.3e}",
                d.component.as_ref().map_or("(source)", |c| c.as_str()),
                d.output,
                d.statistic,
                d.p_value
            );
        }
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// Columns `node,score,probability,deviation,p_value,method`; sources carry
/// the two-sample test of their marginal.
pub fn render_csv(report: &AttributionReport) -> String {
    let mut out = format!("# seed={} target={}\n", report.seed, report.target);
    out.push_str("node,score,probability,deviation,p_value,method\n");
    for (s, v) in &report.attribution.scores {
        let p = report.probabilities.as_ref().and_then(|p| p.get(s).copied());
        let d = report.deviations.get(s).or_else(|| report.source_deviations.get(s));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s,
            v.map_or(String::new(), |v| v.to_string()),
            p.map_or(String::new(), |v| v.to_string()),
            d.map_or(String::new(), |d| d.statistic.to_string()),
            d.map_or(String::new(), |d| d.p_value.to_string()),
            report.method.name()
        );
    }
    out
}
