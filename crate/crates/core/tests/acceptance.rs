//! One PASS/FAIL line per acceptance criterion. Exits nonzero on any failure.

#[path = "common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use flowcause::attribution::{to_probabilities, AttributionMap, Method};
use flowcause::claims::{self, build_claims_graph, claims_registry, inject_fault, ClaimGenerator, ClaimsParams};
use flowcause::experiment::{run_experiment, ExperimentConfig, ExperimentKind, ExperimentReport};
use flowcause::graph::StreamId;
use flowcause::runtime::{run, SourceGenerator};
use flowcause::scm::{Intervention, Scm};
use flowcause::stats::{kl_divergence, shapley_values, Cell, Coalition, KlEstimator, SampleSet, ShapleyMode};
use flowcause::value::Value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SEED: u64 = 7;
const ALPHA: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn experiment(kind: ExperimentKind, repeats: usize) -> ExperimentReport {
    let config = ExperimentConfig {
        repeats,
        ..ExperimentConfig::new(kind, SEED)
    };
    run_experiment(&config).expect("experiment runs")
}

fn fault_localisation() -> Outcome {
    let r = experiment(ExperimentKind::FaultInjection, 30);
    let top = r.top.as_ref().map_or("none", |s| s.as_str());
    let p = r.welch.map_or(f64::NAN, |w| w.p_value);
    let runner = r.runner_up.as_ref().map_or("none", |s| s.as_str());
    outcome(
        top == claims::SIMPLE && r.top_significant(ALPHA),
        format!("top={top} runner_up={runner} welch_p={p:.3e} shifts={}/30", r.shift_count),
    )
}

fn data_shift() -> Outcome {
    let r = experiment(ExperimentKind::DataShift, 30);
    let top = r.top.as_ref().map_or("none", |s| s.as_str());
    let p = r.welch.map_or(f64::NAN, |w| w.p_value);
    let computational: Vec<_> = r
        .streams
        .iter()
        .filter(|s| s.stream.as_str() != claims::NEW_CLAIMS)
        .collect();
    let flags: usize = computational.iter().map(|s| s.deviation_flags).sum();
    let quiet = computational.iter().all(|s| s.deviation_excess_p >= ALPHA);
    outcome(
        top == claims::NEW_CLAIMS && r.top_significant(ALPHA) && quiet,
        format!(
            "top={top} welch_p={p:.3e} deviation flags at 5%: {flags} of {} component tests",
            computational.len() * 30
        ),
    )
}

fn probability_rule() -> Outcome {
    let scores = [0.0011, 0.0033, 0.0012, 0.0009, 0.014, -0.0087, 0.0004];
    let expected = [0.04, 0.11, 0.04, 0.03, 0.47, 0.29, 0.01];
    let attr = AttributionMap {
        method: Method::Shapley,
        scores: claims::STREAMS
            .iter()
            .zip(scores)
            .map(|(s, v)| (StreamId::new(*s), Some(v)))
            .collect(),
    };
    let p = to_probabilities(&attr).expect("nonzero scores");
    let worst = p
        .values()
        .zip(expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let rendered: Vec<String> = p.values().map(|v| format!("{v:.2}")).collect();
    outcome(worst <= 0.01, format!("[{}] max error {worst:.4}", rendered.join(", ")))
}

fn gaussian(mean: f64, n: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(mean, 1.0).unwrap();
    SampleSet::numeric((0..n).map(|_| d.sample(&mut rng)).collect())
}

fn kl_oracle() -> Outcome {
    let p = gaussian(0.0, 10000, SEED);
    let q = gaussian(1.0, 10000, SEED + 1);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, e) in [("histogram", KlEstimator::Histogram { bins: 32 }), ("knn", KlEstimator::Knn { k: 5 })] {
        let shifted = kl_divergence(&p, &q, e).unwrap().value;
        let same = kl_divergence(&p, &p, e).unwrap().value;
        pass &= (shifted - 0.5).abs() <= 0.07 && same.abs() <= 0.01;
        parts.push(format!("{name}: {shifted:.4} / identical {same:.4}"));
    }
    outcome(pass, parts.join("; "))
}

/// Exact joint of the chain under `factor(x, y, z)`, indexed `4x + 2y + z`.
fn enumerate(factor: impl Fn(usize, usize, usize) -> f64) -> Vec<f64> {
    let mut joint = vec![0.0; 8];
    for x in 0..2 {
        for y in 0..2 {
            for z in 0..2 {
                joint[4 * x + 2 * y + z] = factor(x, y, z);
            }
        }
    }
    joint
}

fn empirical_joint(scm: &Scm, n: usize, seed: u64) -> Vec<f64> {
    let frame = scm.sample_frame(n, seed);
    let level = |s: &str, r: usize| match frame.columns[&StreamId::new(s)].fields[0].cells[r] {
        Cell::Level(l) => l as usize,
        other => panic!("unexpected cell {other:?}"),
    };
    let mut joint = vec![0.0; 8];
    for r in 0..n {
        joint[4 * level("X", r) + 2 * level("Y", r) + level("Z", r)] += 1.0 / n as f64;
    }
    joint
}

fn truncated_factorisation() -> Outcome {
    let (a, b, c) = (0.3, [0.2, 0.7], [0.1, 0.6]);
    let scm = common::binary_chain(&["X", "Y", "Z"], a, &[b, c]);
    let bern = |p: f64, v: usize| if v == 1 { p } else { 1.0 - p };
    let n = 50000;

    let hard = scm
        .intervene(&[Intervention::atomic("Z", Value::Level("1".into()))])
        .unwrap();
    let exact_hard = enumerate(|x, y, z| bern(a, x) * bern(b[x], y) * if z == 1 { 1.0 } else { 0.0 });
    let tv_hard = common::total_variation(&empirical_joint(&hard, n, SEED), &exact_hard);

    let identity = scm.mechanism(&StreamId::new("Y")).unwrap().as_ref().clone();
    let soft = scm.intervene(&[Intervention::soft("Y", identity)]).unwrap();
    let exact_soft = enumerate(|x, y, z| bern(a, x) * bern(b[x], y) * bern(c[y], z));
    let tv_soft = common::total_variation(&empirical_joint(&soft, n, SEED + 1), &exact_soft);

    outcome(
        tv_hard <= 0.02 && tv_soft <= 0.02,
        format!("joint TV do(Z=1) {tv_hard:.4}, identity soft on Y {tv_soft:.4}, n={n}"),
    )
}

fn swap(s: Coalition, i: usize, j: usize) -> Coalition {
    let (bi, bj) = (s >> i & 1, s >> j & 1);
    (s & !(1 << i) & !(1 << j)) | bi << j | bj << i
}

fn shapley_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_axiom: f64 = 0.0;
    let mut worst_perm: f64 = 0.0;
    for trial in 0..50 {
        let n = 2 + trial % 3;
        let table: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let full = (1u64 << n) - 1;
        let v = |s: Coalition| if s == 0 { 0.0 } else { table[s as usize] };

        let phi = shapley_values(n, ShapleyMode::Exact, &v).unwrap();
        worst_axiom = worst_axiom.max((phi.iter().sum::<f64>() - v(full)).abs());

        let sym = |s: Coalition| 0.5 * (v(s) + v(swap(s, 0, 1)));
        let phi = shapley_values(n, ShapleyMode::Exact, &sym).unwrap();
        worst_axiom = worst_axiom.max((phi[0] - phi[1]).abs());

        let d = n - 1;
        let dummy = |s: Coalition| v(s & !(1 << d));
        let phi = shapley_values(n, ShapleyMode::Exact, &dummy).unwrap();
        worst_axiom = worst_axiom.max(phi[d].abs());

        let exact = shapley_values(n, ShapleyMode::Exact, &v).unwrap();
        let mode = ShapleyMode::Permutation {
            samples: 2000,
            seed: SEED + trial as u64,
        };
        let approx = shapley_values(n, mode, &v).unwrap();
        for (e, p) in exact.iter().zip(&approx) {
            worst_perm = worst_perm.max((e - p).abs());
        }
    }
    outcome(
        worst_axiom <= 1e-12 && worst_perm <= 0.05,
        format!("50 games on 2..4 players: axiom error {worst_axiom:.1e}, permutation error {worst_perm:.4}"),
    )
}

fn claims_log(faulty: bool) -> flowcause::log::StreamLog {
    let params = ClaimsParams::default();
    let healthy = build_claims_graph();
    let graph = if faulty { inject_fault(&healthy).unwrap() } else { healthy };
    let generator: Box<dyn SourceGenerator> = Box::new(ClaimGenerator::new(params));
    let sources = BTreeMap::from([(claims::stream(claims::NEW_CLAIMS), generator)]);
    run(&graph, &claims_registry(&params), sources, 1000, SEED, "window").unwrap()
}

fn determinism() -> Outcome {
    let logs = [false, true].iter().all(|&f| claims_log(f) == claims_log(f));
    let a = serde_json::to_string(&experiment(ExperimentKind::FaultInjection, 4)).unwrap();
    let b = serde_json::to_string(&experiment(ExperimentKind::FaultInjection, 4)).unwrap();
    outcome(
        logs && a == b,
        format!("stream logs identical: {logs}; experiment report JSON identical: {} ({} bytes)", a == b, a.len()),
    )
}

fn calibration() -> Outcome {
    let r = experiment(ExperimentKind::Control, 50);
    let quiet = r
        .runs
        .iter()
        .filter(|run| !run.shifted && run.top.is_none())
        .count();
    let significant_top = r.top_significant(0.05);
    outcome(
        quiet >= 45 && !significant_top,
        format!("{quiet}/50 seeds with no shift and no top node; experiment-level significant top: {significant_top}"),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("fault localisation", fault_localisation),
        ("data-shift localisation", data_shift),
        ("probability rule", probability_rule),
        ("KL oracle", kl_oracle),
        ("truncated factorisation", truncated_factorisation),
        ("Shapley oracle", shapley_oracle),
        ("determinism", determinism),
        ("control calibration", calibration),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!(
            "criterion {}: {status} {name}: {} [{:.1}s]",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
