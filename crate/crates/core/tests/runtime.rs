mod common;

use std::collections::{BTreeMap, BTreeSet};

use flowcause::claims::{self, build_claims_graph, claims_registry, ClaimGenerator, ClaimsParams};
use flowcause::graph::{validate, DataflowGraph, StreamId, ValidatedGraph};
use flowcause::log::{join_io_pairs, StreamLog};
use flowcause::runtime::{run, SourceGenerator, TransformRegistry};
use flowcause::value::{StreamSchema, Value};
use rand::{Rng, RngCore};

fn uniform_source() -> Box<dyn SourceGenerator> {
    Box::new(|_: u64, rng: &mut dyn RngCore| Value::Number(rng.random::<f64>()))
}

fn diamond() -> ValidatedGraph {
    let spec = serde_json::json!({
        "streams": [
            {"id": "a", "schema": "numeric"},
            {"id": "b", "schema": "numeric"},
            {"id": "left", "schema": "numeric"},
            {"id": "right", "schema": "numeric"},
            {"id": "out", "schema": "numeric", "terminal": true}
        ],
        "components": [
            {"id": "fork", "kind": "jitter", "inputs": {"x": "a"}, "outputs": {"l": "left", "r": "right"}},
            {"id": "join", "kind": "sum", "inputs": {"l": "left", "r": "right", "b": "b"}, "outputs": {"y": "out"}}
        ],
        "sources": ["a", "b"]
    });
    validate(DataflowGraph::from_json(&spec.to_string()).unwrap()).unwrap()
}

fn registry() -> TransformRegistry {
    let mut r = TransformRegistry::with_builtins();
    r.register(
        "jitter",
        |inputs: &[Option<Value>], outputs: usize, rng: &mut dyn RngCore| {
            let x = inputs[0].as_ref().and_then(Value::as_number).unwrap_or(0.0);
            (0..outputs).map(|_| Some(Value::Number(x + rng.random::<f64>()))).collect()
        },
    );
    r
}

fn run_case(case: usize, seed: u64) -> StreamLog {
    match case {
        0 => {
            let g = common::chain(&["x", "y", "z"], &StreamSchema::Numeric);
            let sources = BTreeMap::from([(StreamId::new("x"), uniform_source())]);
            run(&g, &registry(), sources, 200, seed, "chain").unwrap()
        }
        1 => {
            let sources = BTreeMap::from([
                (StreamId::new("a"), uniform_source()),
                (StreamId::new("b"), uniform_source()),
            ]);
            run(&diamond(), &registry(), sources, 200, seed, "diamond").unwrap()
        }
        _ => {
            let params = ClaimsParams::default();
            let g = claims::inject_fault(&build_claims_graph()).unwrap();
            let gen: Box<dyn SourceGenerator> = Box::new(ClaimGenerator::new(params));
            let sources = BTreeMap::from([(claims::stream(claims::NEW_CLAIMS), gen)]);
            run(&g, &claims_registry(&params), sources, 500, seed, "claims").unwrap()
        }
    }
}

#[test]
fn equal_seeds_give_identical_logs() {
    for case in 0..3 {
        let a = run_case(case, 42);
        let b = run_case(case, 42);
        assert_eq!(a, b, "case {case}");
        assert_ne!(a, run_case(case, 43), "case {case}");
    }
}

#[test]
fn correlation_ids_come_from_sources() {
    let graphs = [
        common::chain(&["x", "y", "z"], &StreamSchema::Numeric),
        diamond(),
        build_claims_graph(),
    ];
    for (case, g) in graphs.iter().enumerate() {
        let log = run_case(case, 5);
        let source_ids: BTreeSet<u64> = g
            .sources()
            .iter()
            .flat_map(|s| log.records(s).iter().map(|r| r.correlation_id))
            .collect();
        for (s, records) in &log.streams {
            assert!(records.iter().all(|r| source_ids.contains(&r.correlation_id)), "{s}");
            assert!(records.windows(2).all(|w| w[0].t < w[1].t), "{s}");
        }
    }
}

#[test]
fn claims_routing_partitions_records() {
    let log = run_case(2, 9);
    let n = log.len(&claims::stream(claims::NEW_CLAIMS));
    assert_eq!(n, 500);
    assert_eq!(log.len(&claims::stream(claims::PAYOUT)), n);
    let low = log.len(&claims::stream(claims::LOW_VALUE));
    let high = log.len(&claims::stream(claims::HIGH_VALUE));
    assert_eq!(low + high, n);
    let simple = log.len(&claims::stream(claims::SIMPLE));
    let complex = log.len(&claims::stream(claims::COMPLEX));
    assert_eq!(simple + complex, n);
}

#[test]
fn io_pairs_of_classifier() {
    let g = build_claims_graph();
    let log = run_case(2, 11);
    let joined = join_io_pairs(&log, &g, &claims::CLASSIFY.into()).unwrap();
    assert_eq!(joined.dropped(), 0);
    let total: usize = joined.per_output.iter().map(|o| o.pairs.len()).sum();
    assert_eq!(total, 500);
    for o in &joined.per_output {
        for (bundle, record) in &o.pairs {
            assert_eq!(bundle.correlation_id, record.correlation_id);
            assert_eq!(bundle.inputs.iter().flatten().count(), 1);
        }
    }
}

#[test]
fn log_round_trips_through_disk() {
    let g = build_claims_graph();
    let log = run_case(2, 13);
    let dir = tempfile::tempdir().unwrap();
    let path = log.save(dir.path()).unwrap();
    let back = StreamLog::load(&path, &g).unwrap();
    assert_eq!(back, log);
}
