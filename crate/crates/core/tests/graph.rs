use std::collections::{BTreeMap, BTreeSet};

use flowcause::graph::{validate, DataflowGraph, GraphError, GraphViolation, StreamId};
use proptest::prelude::*;

/// One entry per stream after the first: 0 = source, 1 = extra output of
/// the previous component, otherwise a new component reading `mask`.
type Plan = Vec<(u8, u32)>;

fn build(plan: &Plan) -> DataflowGraph {
    let n = plan.len() + 1;
    let name = |i: usize| format!("s{i:02}");
    let mut sources = vec![name(0)];
    let mut components: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for (k, &(choice, mask)) in plan.iter().enumerate() {
        let j = k + 1;
        match choice % 4 {
            0 => sources.push(name(j)),
            1 if !components.is_empty() => components.last_mut().unwrap().1.push(j),
            _ => {
                let mut inputs: Vec<usize> = (0..j).filter(|i| mask >> (i % 32) & 1 == 1).collect();
                if inputs.is_empty() {
                    inputs.push(mask as usize % j);
                }
                components.push((inputs, vec![j]));
            }
        }
    }
    let consumed: BTreeSet<usize> = components.iter().flat_map(|c| c.0.clone()).collect();
    let streams: Vec<_> = (0..n)
        .rev()
        .map(|i| {
            serde_json::json!({
                "id": name(i),
                "schema": "numeric",
                "terminal": !consumed.contains(&i),
            })
        })
        .collect();
    let comps: Vec<_> = components
        .iter()
        .enumerate()
        .map(|(c, (ins, outs))| {
            let inputs: serde_json::Map<_, _> = ins
                .iter()
                .enumerate()
                .map(|(p, &i)| (format!("in{p}"), name(i).into()))
                .collect();
            let outputs: serde_json::Map<_, _> = outs
                .iter()
                .enumerate()
                .map(|(p, &i)| (format!("out{p}"), name(i).into()))
                .collect();
            serde_json::json!({"id": format!("c{c}"), "kind": "sum", "inputs": inputs, "outputs": outputs})
        })
        .collect();
    let spec = serde_json::json!({"streams": streams, "components": comps, "sources": sources});
    DataflowGraph::from_json(&spec.to_string()).unwrap()
}

/// Streams reachable from `start` through component nodes, excluding `start`.
fn reachable(g: &DataflowGraph, start: &StreamId) -> BTreeSet<StreamId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![start.clone()];
    while let Some(s) = stack.pop() {
        for c in g.components.iter().filter(|c| c.inputs.values().any(|i| *i == s)) {
            for o in c.outputs.values() {
                if seen.insert(o.clone()) {
                    stack.push(o.clone());
                }
            }
        }
    }
    seen
}

fn plan() -> impl Strategy<Value = Plan> {
    prop::collection::vec((any::<u8>(), any::<u32>()), 1..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn causal_graph_preserves_reachability(plan in plan()) {
        let raw = build(&plan);
        let g = validate(raw.clone()).unwrap();
        let causal = g.causal_graph();
        let position: BTreeMap<&StreamId, usize> =
            causal.variables.iter().enumerate().map(|(i, s)| (s, i)).collect();
        prop_assert_eq!(position.len(), raw.streams.len());
        for s in &causal.variables {
            for p in causal.parents(s).unwrap() {
                prop_assert!(position[p] < position[s]);
            }
            prop_assert_eq!(g.downstream(s).unwrap(), reachable(&raw, s));
        }
    }

    #[test]
    fn upstream_and_downstream_agree(plan in plan()) {
        let g = validate(build(&plan)).unwrap();
        let vars = g.causal_graph().variables.clone();
        for x in &vars {
            let down = g.downstream(x).unwrap();
            for y in &vars {
                prop_assert_eq!(down.contains(y), g.upstream(y).unwrap().contains(x));
            }
        }
    }

    #[test]
    fn revalidation_is_idempotent(plan in plan()) {
        let g = validate(build(&plan)).unwrap();
        let again = validate(g.graph().clone()).unwrap();
        prop_assert_eq!(again.causal_graph(), g.causal_graph());
        prop_assert_eq!(again.component_order(), g.component_order());
        prop_assert_eq!(again.topology_hash(), g.topology_hash());
    }

    #[test]
    fn back_edge_is_a_cycle(plan in plan()) {
        let mut raw = build(&plan);
        let Some(last) = raw.components.last_mut() else { return Ok(()) };
        let out = last.outputs.values().next().unwrap().clone();
        last.inputs.insert("loop".into(), out);
        match validate(raw) {
            Err(GraphError::Invalid(v)) => {
                let closed = matches!(&v[..], [GraphViolation::CycleDetected { path }] if path.first() == path.last());
                prop_assert!(closed, "{:?}", v);
            }
            other => prop_assert!(false, "expected cycle, got {other:?}"),
        }
    }
}

#[test]
fn claims_graph_shape() {
    let g = flowcause::claims::build_claims_graph();
    let payout = StreamId::new("ClaimPayoutStream");
    assert_eq!(g.upstream(&payout).unwrap().len(), 6);
    assert!(g.downstream(&payout).unwrap().is_empty());
    assert_eq!(g.sources(), [StreamId::new("NewClaimsStream")]);
    assert_eq!(g.component_order().len(), 4);
}
