mod common;

use std::collections::BTreeSet;

use flowcause::attribution::{
    attribute_change, detect_shift, shapley_attribution, to_probabilities, AttributionConfig,
    AttributionError, ChangeWindows, GameConfig, MechanismGame, Method,
};
use flowcause::graph::StreamId;
use flowcause::log::{Record, StreamLog};
use flowcause::value::{StreamSchema, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::{binary_chain, chain};

fn gaussian(mean: f64, sd: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(mean, sd).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn numeric_log(label: &str, columns: &[(&str, &[f64])]) -> StreamLog {
    let mut log = StreamLog::new(label);
    for (name, xs) in columns {
        let records = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| Record {
                correlation_id: i as u64,
                t: i as u64,
                value: Value::Number(x),
            })
            .collect();
        log.streams.insert(StreamId::new(*name), records);
    }
    log.refresh_meta();
    log
}

fn mass_share(report: &flowcause::attribution::AttributionReport, stream: &str) -> f64 {
    let scores = &report.attribution.scores;
    let total: f64 = scores.values().map(|v| v.unwrap().abs()).sum();
    scores[&StreamId::new(stream)].unwrap().abs() / total
}

fn binary_windows(old: [f64; 3], new: [f64; 3], n: usize) -> ChangeWindows {
    let a = binary_chain(&["X", "Y"], old[0], &[[old[1], old[2]]]);
    let b = binary_chain(&["X", "Y"], new[0], &[[new[1], new[2]]]);
    ChangeWindows::new(a.sample(n, 1, "old"), b.sample(n, 2, "new"), "Y").unwrap()
}

#[test]
fn root_change_is_attributed_to_root() {
    let g = chain(&["X", "Y"], &common::binary());
    let w = binary_windows([0.3, 0.2, 0.8], [0.7, 0.2, 0.8], 20000);
    let r = attribute_change(&g, &w, &AttributionConfig::default()).unwrap();
    assert!(r.shift.shifted);
    assert!(mass_share(&r, "X") >= 0.95, "{:?}", r.attribution.scores);
    assert_eq!(r.top().unwrap().0.as_str(), "X");
}

#[test]
fn conditional_change_is_attributed_to_child() {
    let g = chain(&["X", "Y"], &common::binary());
    let w = binary_windows([0.5, 0.2, 0.8], [0.5, 0.6, 0.3], 20000);
    let r = attribute_change(&g, &w, &AttributionConfig::default()).unwrap();
    assert!(r.shift.shifted);
    assert!(mass_share(&r, "Y") >= 0.95, "{:?}", r.attribution.scores);
    assert!(r.deviations[&StreamId::new("Y")].p_value < 1e-6);
}

#[test]
fn identical_windows_are_not_attributed() {
    let g = chain(&["X", "Y"], &common::binary());
    let scm = binary_chain(&["X", "Y"], 0.4, &[[0.2, 0.8]]);
    let log = scm.sample(2000, 3, "w");
    let w = ChangeWindows::new(log.clone(), log, "Y").unwrap();
    let r = attribute_change(&g, &w, &AttributionConfig::default()).unwrap();
    assert_eq!(r.shift.delta, 0.0);
    assert!(!r.shift.shifted);
    assert!(r.attribution.scores.values().all(|v| *v == Some(0.0)));
    assert!(r.probabilities.is_none());
    assert!(r.warnings.iter().any(|w| w.contains("no shift detected")));
}

#[test]
fn unchanged_models_give_zero_scores() {
    let scm = binary_chain(&["X", "Y", "Z"], 0.4, &[[0.2, 0.8], [0.3, 0.9]]);
    let phi = shapley_attribution(&scm, &scm, &StreamId::new("Z"), GameConfig::default()).unwrap();
    assert_eq!(phi.len(), 3);
    assert!(phi.values().all(|v| v.abs() < 1e-12));
}

#[test]
fn game_scores_are_efficient() {
    let old = binary_chain(&["X", "Y", "Z"], 0.4, &[[0.2, 0.8], [0.3, 0.9]]);
    let new = binary_chain(&["X", "Y", "Z"], 0.6, &[[0.2, 0.8], [0.5, 0.7]]);
    let game = MechanismGame::new(&old, &new, &StreamId::new("Z"), GameConfig::default()).unwrap();
    let phi = game.shapley().unwrap();
    let total: f64 = phi.values().sum();
    assert!((total - game.value(0b111)).abs() < 1e-9);
    assert_eq!(game.value(0), 0.0);
    assert!(phi[&StreamId::new("Y")].abs() < 0.2 * phi.values().map(|v| v.abs()).sum::<f64>());
}

#[test]
fn proportional_chain_recovers_unit_ratios() {
    let g = chain(&["A", "B", "Y"], &StreamSchema::Numeric);
    let a_old = gaussian(0.0, 1.0, 5000, 10);
    let a_new = gaussian(1.0, 1.0, 5000, 11);
    let w = ChangeWindows::new(
        numeric_log("old", &[("A", &a_old), ("B", &a_old), ("Y", &a_old)]),
        numeric_log("new", &[("A", &a_new), ("B", &a_new), ("Y", &a_new)]),
        "Y",
    )
    .unwrap();
    let config = AttributionConfig {
        method: Method::ProportionalKl,
        ..AttributionConfig::default()
    };
    let r = attribute_change(&g, &w, &config).unwrap();
    for s in ["A", "B", "Y"] {
        let v = r.attribution.scores[&StreamId::new(s)].unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{s}: {v}");
    }
}

#[test]
fn proportional_chain_with_noisy_hops() {
    let g = chain(&["A", "B", "Y"], &StreamSchema::Numeric);
    let window = |mean: f64, seed: u64| {
        let a = gaussian(mean, 1.0, 10000, seed);
        let b: Vec<f64> = a.iter().zip(gaussian(0.0, 0.1, 10000, seed + 100)).map(|(x, e)| x + e).collect();
        let y: Vec<f64> = b.iter().zip(gaussian(0.0, 0.1, 10000, seed + 200)).map(|(x, e)| x + e).collect();
        numeric_log("w", &[("A", &a), ("B", &b), ("Y", &y)])
    };
    let w = ChangeWindows::new(window(0.0, 1), window(1.0, 2), "Y").unwrap();
    let config = AttributionConfig {
        method: Method::ProportionalKl,
        ..AttributionConfig::default()
    };
    let r = attribute_change(&g, &w, &config).unwrap();
    let a = r.attribution.scores[&StreamId::new("A")].unwrap();
    let b = r.attribution.scores[&StreamId::new("B")].unwrap();
    assert!((a - 1.0).abs() < 0.15, "A {a}");
    assert!((b - 1.0).abs() < 0.15, "B {b}");
}

#[test]
fn proportional_without_shift_is_degenerate() {
    let g = chain(&["A", "B"], &StreamSchema::Numeric);
    let xs = gaussian(0.0, 1.0, 500, 4);
    let log = numeric_log("w", &[("A", &xs), ("B", &xs)]);
    let w = ChangeWindows::new(log.clone(), log, "B").unwrap();
    let config = AttributionConfig {
        method: Method::ProportionalKl,
        ..AttributionConfig::default()
    };
    let r = attribute_change(&g, &w, &config).unwrap();
    assert!(r.attribution.scores.values().all(Option::is_none));
    assert!(r.warnings.iter().any(|w| w.contains("too small to divide by")));
    assert!(matches!(to_probabilities(&r.attribution), Err(AttributionError::NoSignal)));
}

#[test]
fn source_target_scores_its_own_shift() {
    let g = chain(&["Y"], &StreamSchema::Numeric);
    let w = ChangeWindows::new(
        numeric_log("old", &[("Y", &gaussian(0.0, 1.0, 10000, 5))]),
        numeric_log("new", &[("Y", &gaussian(1.0, 1.0, 10000, 6))]),
        "Y",
    )
    .unwrap();
    let r = attribute_change(&g, &w, &AttributionConfig::default()).unwrap();
    assert!(r.deviations.is_empty());
    assert_eq!(r.attribution.scores.len(), 1);
    assert_eq!(r.attribution.scores[&StreamId::new("Y")], Some(r.shift.delta));
    assert!((r.shift.delta - 0.5).abs() < 0.1, "{}", r.shift.delta);
}

#[test]
fn detect_shift_on_gaussian_mean_change() {
    let g = chain(&["Y"], &StreamSchema::Numeric);
    let old = numeric_log("old", &[("Y", &gaussian(0.0, 1.0, 5000, 7))]);
    let same = numeric_log("same", &[("Y", &gaussian(0.0, 1.0, 5000, 8))]);
    let moved = numeric_log("moved", &[("Y", &gaussian(1.0, 1.0, 5000, 9))]);
    let config = AttributionConfig::default();
    let s = detect_shift(&g, &ChangeWindows::new(old.clone(), moved, "Y").unwrap(), &config).unwrap();
    assert!(s.shifted && (s.delta - 0.5).abs() < 0.1, "{s:?}");
    let s = detect_shift(&g, &ChangeWindows::new(old.clone(), old.clone(), "Y").unwrap(), &config).unwrap();
    assert!(!s.shifted && s.delta == 0.0);
    let s = detect_shift(&g, &ChangeWindows::new(old, same, "Y").unwrap(), &config).unwrap();
    assert!(!s.shifted, "{s:?}");
}

#[test]
fn detect_shift_needs_enough_samples() {
    let g = chain(&["Y"], &StreamSchema::Numeric);
    let w = ChangeWindows::new(
        numeric_log("old", &[("Y", &gaussian(0.0, 1.0, 20, 1))]),
        numeric_log("new", &[("Y", &gaussian(0.0, 1.0, 20, 2))]),
        "Y",
    )
    .unwrap();
    let err = detect_shift(&g, &w, &AttributionConfig::default()).unwrap_err();
    assert!(matches!(err, AttributionError::InsufficientData { have: 20, need: 50, .. }));
}

#[test]
fn keys_are_target_and_upstream() {
    let g = chain(&["X", "Y", "Z"], &common::binary());
    let old = binary_chain(&["X", "Y", "Z"], 0.3, &[[0.2, 0.8], [0.3, 0.9]]);
    let new = binary_chain(&["X", "Y", "Z"], 0.7, &[[0.2, 0.8], [0.3, 0.9]]);
    let w = ChangeWindows::new(old.sample(3000, 1, "old"), new.sample(3000, 2, "new"), "Y").unwrap();
    for method in [Method::Shapley, Method::ProportionalKl] {
        let config = AttributionConfig {
            method,
            ..AttributionConfig::default()
        };
        let r = attribute_change(&g, &w, &config).unwrap();
        let keys: BTreeSet<&str> = r.attribution.scores.keys().map(StreamId::as_str).collect();
        assert_eq!(keys, BTreeSet::from(["X", "Y"]));
        let devs: BTreeSet<&str> = r.deviations.keys().map(StreamId::as_str).collect();
        assert_eq!(devs, BTreeSet::from(["Y"]));
    }
}

#[test]
fn window_errors() {
    let a = numeric_log("a", &[("Y", &[1.0])]);
    let b = numeric_log("b", &[("Z", &[1.0])]);
    assert!(matches!(
        ChangeWindows::new(a.clone(), b, "Y"),
        Err(AttributionError::WindowMismatch(_))
    ));
    assert!(matches!(
        ChangeWindows::new(a.clone(), a, "Q"),
        Err(AttributionError::UnknownStream(_))
    ));
}

#[test]
fn reports_are_reproducible() {
    let g = chain(&["X", "Y"], &common::binary());
    let w = binary_windows([0.3, 0.2, 0.8], [0.5, 0.3, 0.8], 3000);
    let config = AttributionConfig {
        seed: 17,
        ..AttributionConfig::default()
    };
    let a = attribute_change(&g, &w, &config).unwrap();
    let b = attribute_change(&g, &w, &config).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
