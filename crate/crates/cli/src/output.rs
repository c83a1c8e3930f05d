//! Plain-text and CSV rendering for the commands.

use std::fmt::Write;
use std::path::Path;

use flowcause::experiment::{ExperimentKind, ExperimentReport};
use flowcause::graph::ValidatedGraph;
use flowcause::log::StreamLog;
use flowcause::scm::Scm;
use flowcause::value::{Scalar, StreamSchema};

fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::FaultInjection => "fault",
        ExperimentKind::DataShift => "shift",
        ExperimentKind::Control => "control",
    }
}

fn list<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    let parts: Vec<String> = items.into_iter().map(|s| s.to_string()).collect();
    if parts.is_empty() {
        "-".into()
    } else {
        parts.join(", ")
    }
}

pub fn graph_summary(g: &ValidatedGraph) -> String {
    let mut out = String::new();
    let causal = g.causal_graph();
    let _ = writeln!(
        out,
        "ok: {} streams, {} components, topology {:016x}",
        g.graph().streams.len(),
        g.component_order().len(),
        g.topology_hash()
    );
    let _ = writeln!(out, "sources: {}", list(g.sources()));
    let _ = writeln!(out, "component order: {}", list(g.component_order()));
    let _ = writeln!(out, "\ncausal parents:");
    for s in &causal.variables {
        let parents = causal.parents(s).unwrap_or(&[]);
        let _ = writeln!(out, "  {s} <- {}", list(parents));
    }
    out
}

pub fn run_summary(log: &StreamLog, dir: &Path, seed: u64) -> String {
    let mut out = format!("# seed={seed} label={}\n", log.label());
    for (s, records) in &log.streams {
        let _ = writeln!(out, "{s}: {} records", records.len());
    }
    let _ = writeln!(out, "wrote {}", dir.display());
    out
}

pub fn fit_summary(scm: &Scm, path: &Path) -> String {
    let mut out = String::new();
    for m in scm.ordered() {
        let kind = serde_json::to_value(m.kind()).ok();
        let kind = kind.as_ref().and_then(|k| k.as_str()).unwrap_or("?");
        let _ = writeln!(out, "{} <- {}: {kind}, {} samples", m.target, list(&m.parents), m.samples);
    }
    let _ = writeln!(out, "wrote {}", path.display());
    out
}

/// Mean and spread of numeric fields, level frequencies of categorical ones.
pub fn sample_summary(scm: &Scm, log: &StreamLog, seed: u64, set: &[String], soft: &[String]) -> String {
    let mut out = format!("# seed={seed}");
    for s in set {
        let _ = write!(out, " do({s})");
    }
    for s in soft {
        let _ = write!(out, " soft({s})");
    }
    out.push('\n');
    for (stream, schema) in &scm.schemas {
        let records = log.records(stream);
        let _ = writeln!(out, "{stream}: {} records", records.len());
        if records.is_empty() {
            continue;
        }
        for (i, field) in schema.fields().iter().enumerate() {
            let values: Vec<Scalar> = records.iter().map(|r| schema.split(&r.value).swap_remove(i)).collect();
            let name = if matches!(schema, StreamSchema::Tuple(_)) {
                format!(".{}", field.name)
            } else {
                String::new()
            };
            match field.kind.levels() {
                Some(levels) => {
                    let freq: Vec<String> = levels
                        .iter()
                        .map(|l| {
                            let c = values.iter().filter(|v| v.as_level() == Some(l)).count();
                            format!("{l}={:.3}", c as f64 / values.len() as f64)
                        })
                        .collect();
                    let _ = writeln!(out, "  {name} {}", freq.join(" "));
                }
                None => {
                    let xs: Vec<f64> = values.iter().filter_map(Scalar::as_number).collect();
                    let n = xs.len() as f64;
                    let mean = xs.iter().sum::<f64>() / n;
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                    let _ = writeln!(out, "  {name} mean={mean:.4} sd={:.4}", var.sqrt());
                }
            }
        }
    }
    out
}

fn header(r: &ExperimentReport) -> String {
    format!(
        "# seed={} kind={} repeats={} records={} method={}\n",
        r.seed,
        kind_name(r.kind),
        r.repeats,
        r.records,
        r.method.name()
    )
}

pub fn experiment_table(r: &ExperimentReport) -> String {
    let mut out = header(r);
    let width = r.streams.iter().map(|s| s.stream.as_str().len()).max().unwrap_or(6).max(6);
    let _ = writeln!(
        out,
        "{:<width$}  {:>11}  {:>24}  {:>5}  {:>5}",
        "stream", "mean_score", "95% ci", "top", "flags"
    );
    for s in &r.streams {
        let ci = format!("[{:.5}, {:.5}]", s.ci_lo, s.ci_hi);
        let _ = writeln!(
            out,
            "{:<width$}  {:>11.6}  {:>24}  {:>5}  {:>5}",
            s.stream, s.mean_score, ci, s.top_count, s.deviation_flags
        );
    }
    let _ = writeln!(out, "\nshifts detected: {}/{} (excess p={:.3})", r.shift_count, r.repeats, r.shift_excess_p);
    match (&r.top, &r.runner_up, r.welch) {
        (Some(top), Some(runner), Some(w)) => {
            let _ = writeln!(
                out,
                "top: {top} vs {runner}: welch t={:.3} df={:.1} p={:.3e}",
                w.t, w.df, w.p_value
            );
        }
        (Some(top), _, _) => {
            let _ = writeln!(out, "top: {top}");
        }
        _ => {
            let _ = writeln!(out, "top: none");
        }
    }
    out
}

pub fn experiment_csv(r: &ExperimentReport) -> String {
    let mut out = header(r);
    out.push_str("stream,mean_score,ci_lo,ci_hi\n");
    for s in &r.streams {
        let _ = writeln!(out, "{},{},{},{}", s.stream, s.mean_score, s.ci_lo, s.ci_hi);
    }
    out
}

/// One row per run and stream.
pub fn runs_csv(r: &ExperimentReport) -> String {
    let mut out = header(r);
    out.push_str("run,seed,shifted,stream,score,deviation_p\n");
    for run in &r.runs {
        for (s, score) in &run.scores {
            let p = run.deviation_p.get(s).map_or(String::new(), |p| p.to_string());
            let _ = writeln!(out, "{},{},{},{s},{score},{p}", run.run, run.seed, run.shifted);
        }
    }
    out
}
