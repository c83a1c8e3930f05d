use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use flowcause::attribution::{
    attribute_change, render_csv, render_table, AttributionConfig, AttributionError, ChangeWindows, Method,
};
use flowcause::claims::{self, claims_registry, inject_data_shift, inject_fault, ClaimGenerator, ClaimsParams};
use flowcause::experiment::{run_experiment, ExperimentConfig, ExperimentError, ExperimentKind};
use flowcause::graph::{validate, DataflowGraph, GraphError, StreamId, ValidatedGraph};
use flowcause::log::{LogError, StreamLog};
use flowcause::runtime::{run, RuntimeError, SourceGenerator};
use flowcause::scm::{fit, FitConfig, Intervention, Mechanism, Scm, ScmError};
use flowcause::stats::KlEstimator;
use flowcause::value::{Scalar, ScalarSchema, StreamSchema, Value};
use rand::{Rng, RngCore};

mod output;

#[derive(Parser)]
#[command(name = "flowcause")]
#[command(about = "Run dataflow graphs, fit their causal models and attribute output shifts")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a graph spec file and print its derived causal structure
    Validate {
        graph: PathBuf,
    },

    /// Execute a graph and write every stream to `<out>/<label>/`
    Run {
        graph: PathBuf,

        /// Number of source records
        #[arg(long, default_value_t = 1000)]
        n: u64,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        /// Root directory for the window
        #[arg(long)]
        out: PathBuf,

        /// Window label, used as the directory name
        #[arg(long, default_value = "window")]
        label: String,

        /// Scale claimed amounts on NewClaimsStream by 1.5
        #[arg(long)]
        data_shift: bool,

        /// Swap in the faulty ClassifyClaimComplexity transform
        #[arg(long)]
        fault: bool,
    },

    /// Fit a structural causal model from a window and write it as JSON
    Fit {
        graph: PathBuf,

        /// Window directory written by `run`
        #[arg(long)]
        log: PathBuf,

        #[arg(long)]
        out: PathBuf,

        #[arg(long, default_value_t = 50)]
        min_samples: usize,
    },

    /// Attribute the shift of a target stream between two windows
    Attribute {
        #[arg(long)]
        old: PathBuf,

        #[arg(long)]
        new: PathBuf,

        #[arg(long)]
        target: String,

        /// Graph spec; defaults to the claims graph
        #[arg(long)]
        graph: Option<PathBuf>,

        #[arg(long, value_enum, default_value_t = MethodArg::Shapley)]
        method: MethodArg,

        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,

        /// KL estimator: histogram[:bins] or knn[:k]
        #[arg(long, default_value = "histogram:32")]
        estimator: String,

        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Sample from an intervened model
    Intervene {
        /// SCM file written by `fit`
        scm: PathBuf,

        /// Atomic intervention `<stream>=<value>`; value is JSON or a bare level
        #[arg(long = "set")]
        set: Vec<String>,

        /// Soft intervention `<stream>=<mechanism-file>`
        #[arg(long = "soft")]
        soft: Vec<String>,

        #[arg(long, default_value_t = 1000)]
        n: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        /// Write the samples as a window under this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Repeated fault-injection, data-shift or control experiment on the claims app
    Experiment {
        #[arg(value_enum)]
        kind: KindArg,

        #[arg(long, default_value_t = 30)]
        repeats: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        /// Records per window
        #[arg(long, default_value_t = 1000)]
        records: u64,

        #[arg(long, value_enum, default_value_t = MethodArg::Shapley)]
        method: MethodArg,

        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,

        /// Also write per-run scores as CSV
        #[arg(long)]
        runs: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Shapley,
    Proportional,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Shapley => Method::Shapley,
            MethodArg::Proportional => Method::ProportionalKl,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Fault,
    Shift,
    Control,
}

impl From<KindArg> for ExperimentKind {
    fn from(k: KindArg) -> ExperimentKind {
        match k {
            KindArg::Fault => ExperimentKind::FaultInjection,
            KindArg::Shift => ExperimentKind::DataShift,
            KindArg::Control => ExperimentKind::Control,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(error_kind(&e), &error_message(&e));
            ExitCode::FAILURE
        }
    }
}

fn report_error(kind: &str, message: &str) {
    let body = serde_json::json!({"error": kind, "message": message.trim_end()});
    eprintln!("{body}");
}

/// Context chain joined by `: `, skipping causes already spelled out by their wrapper.
fn error_message(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if parts.last().is_some_and(|p| p.ends_with(&text)) {
            continue;
        }
        parts.push(text);
    }
    parts.join(": ")
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<GraphError>() {
            return "graph";
        }
        if cause.is::<LogError>() {
            return "log";
        }
        if cause.is::<RuntimeError>() {
            return "runtime";
        }
        if cause.is::<ScmError>() {
            return "scm";
        }
        if cause.is::<AttributionError>() {
            return "attribution";
        }
        if cause.is::<ExperimentError>() {
            return "experiment";
        }
        if cause.is::<serde_json::Error>() {
            return "format";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "usage"
}

fn execute(command: Command) -> Result<String> {
    match command {
        Command::Validate { graph } => {
            let g = load_graph(&graph)?;
            Ok(output::graph_summary(&g))
        }
        Command::Run {
            graph,
            n,
            seed,
            out,
            label,
            data_shift,
            fault,
        } => {
            let mut g = load_graph(&graph)?;
            if fault {
                g = inject_fault(&g)?;
            }
            let params = ClaimsParams::default();
            let sources = source_generators(&g, &params, data_shift)?;
            let log = run(&g, &claims_registry(&params), sources, n, seed, &label)?;
            let dir = log.save(&out)?;
            Ok(output::run_summary(&log, &dir, seed))
        }
        Command::Fit {
            graph,
            log,
            out,
            min_samples,
        } => {
            let g = load_graph(&graph)?;
            let window = StreamLog::load(&log, &g).with_context(|| format!("loading {}", log.display()))?;
            let config = FitConfig {
                min_samples,
                ..FitConfig::default()
            };
            let scm = fit(&g, &window, &config)?;
            scm.save(&out)?;
            Ok(output::fit_summary(&scm, &out))
        }
        Command::Attribute {
            old,
            new,
            target,
            graph,
            method,
            format,
            estimator,
            seed,
        } => {
            let g = match graph {
                Some(path) => load_graph(&path)?,
                None => claims::build_claims_graph(),
            };
            let old = StreamLog::load(&old, &g).with_context(|| format!("loading {}", old.display()))?;
            let new = StreamLog::load(&new, &g).with_context(|| format!("loading {}", new.display()))?;
            let target = StreamId::try_from(target).map_err(|e| anyhow!(e))?;
            let windows = ChangeWindows::new(old, new, target)?;
            let config = AttributionConfig {
                method: method.into(),
                estimator: parse_estimator(&estimator)?,
                seed,
                ..AttributionConfig::default()
            };
            let report = attribute_change(&g, &windows, &config)?;
            Ok(match format {
                Format::Table => render_table(&report),
                Format::Csv => render_csv(&report),
                Format::Json => serde_json::to_string_pretty(&report)? + "\n",
            })
        }
        Command::Intervene {
            scm,
            set,
            soft,
            n,
            seed,
            out,
        } => {
            let model = Scm::load(&scm).with_context(|| format!("loading {}", scm.display()))?;
            let mut interventions = Vec::new();
            for spec in &set {
                let (stream, text) = split_assignment(spec)?;
                let schema = model
                    .schemas
                    .get(&stream)
                    .ok_or_else(|| ScmError::UnknownVariable(stream.clone()))?;
                interventions.push(Intervention::atomic(stream.clone(), parse_value(schema, text)?));
            }
            for spec in &soft {
                let (stream, file) = split_assignment(spec)?;
                let text = fs::read_to_string(file).with_context(|| format!("reading {file}"))?;
                let mechanism: Mechanism = serde_json::from_str(&text).with_context(|| format!("parsing {file}"))?;
                interventions.push(Intervention::soft(stream, mechanism));
            }
            let model = model.intervene(&interventions)?;
            let log = model.sample(n, seed, "intervened");
            if let Some(root) = out {
                log.save(root)?;
            }
            Ok(output::sample_summary(&model, &log, seed, &set, &soft))
        }
        Command::Experiment {
            kind,
            repeats,
            seed,
            records,
            method,
            format,
            runs,
        } => {
            let config = ExperimentConfig {
                repeats,
                records,
                method: method.into(),
                ..ExperimentConfig::new(kind.into(), seed)
            };
            let report = run_experiment(&config)?;
            if let Some(path) = runs {
                fs::write(&path, output::runs_csv(&report)).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(match format {
                Format::Table => output::experiment_table(&report),
                Format::Csv => output::experiment_csv(&report),
                Format::Json => serde_json::to_string_pretty(&report)? + "\n",
            })
        }
    }
}

fn load_graph(path: &Path) -> Result<ValidatedGraph> {
    let raw = DataflowGraph::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(validate(raw)?)
}

fn source_generators(
    graph: &ValidatedGraph,
    params: &ClaimsParams,
    data_shift: bool,
) -> Result<BTreeMap<StreamId, Box<dyn SourceGenerator>>> {
    let claims_source = claims::stream(claims::NEW_CLAIMS);
    if data_shift && !graph.sources().contains(&claims_source) {
        bail!("--data-shift needs a `{claims_source}` source stream");
    }
    let mut out = BTreeMap::new();
    for s in graph.sources() {
        let schema = graph.schema(s)?.clone();
        let generator: Box<dyn SourceGenerator> = if *s == claims_source {
            let base: Box<dyn SourceGenerator> = Box::new(ClaimGenerator::new(*params));
            if data_shift {
                inject_data_shift(base)
            } else {
                base
            }
        } else {
            schema_generator(schema)
        };
        out.insert(s.clone(), generator);
    }
    Ok(out)
}

/// Standard normal numbers and uniform levels, field by field.
fn schema_generator(schema: StreamSchema) -> Box<dyn SourceGenerator> {
    Box::new(move |_: u64, rng: &mut dyn RngCore| {
        let scalars = schema
            .fields()
            .iter()
            .map(|f| match &f.kind {
                ScalarSchema::Numeric => {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    Scalar::Number(z)
                }
                ScalarSchema::Categorical(levels) => Scalar::Level(levels[rng.random_range(0..levels.len())].clone()),
            })
            .collect();
        schema.assemble(scalars)
    })
}

fn split_assignment(spec: &str) -> Result<(StreamId, &str)> {
    let (stream, rest) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("expected `<stream>=<value>`, got `{spec}`"))?;
    let stream = StreamId::try_from(stream.trim().to_string()).map_err(|e| anyhow!(e))?;
    Ok((stream, rest.trim()))
}

fn parse_value(schema: &StreamSchema, text: &str) -> Result<Value> {
    let parsed: Option<Value> = serde_json::from_str(text).ok();
    let value = match (schema, parsed) {
        (StreamSchema::Categorical(_), Some(Value::Level(l))) => Value::Level(l),
        (StreamSchema::Categorical(_), _) => Value::Level(text.to_string()),
        (_, Some(v)) => v,
        (_, None) => bail!("cannot parse `{text}` as a value"),
    };
    Ok(value)
}

fn parse_estimator(text: &str) -> Result<KlEstimator> {
    let (name, arg) = match text.split_once(':') {
        Some((n, a)) => (n, Some(a.parse::<usize>().with_context(|| format!("bad estimator argument `{a}`"))?)),
        None => (text, None),
    };
    match name {
        "histogram" => Ok(KlEstimator::Histogram { bins: arg.unwrap_or(32) }),
        "knn" => Ok(KlEstimator::Knn { k: arg.unwrap_or(5) }),
        other => bail!("unknown estimator `{other}`"),
    }
}
