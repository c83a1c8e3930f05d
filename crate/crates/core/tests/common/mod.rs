#![allow(dead_code)]

use std::collections::BTreeMap;

use flowcause::graph::{validate, DataflowGraph, StreamId, ValidatedGraph};
use flowcause::scm::{ConditionalTable, FieldModel, Mechanism, Presence, Scm};
use flowcause::value::StreamSchema;

/// A chain `names[0] -> names[1] -> ...` of identity components.
pub fn chain(names: &[&str], schema: &StreamSchema) -> ValidatedGraph {
    let streams: Vec<_> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            serde_json::json!({
                "id": n,
                "schema": schema,
                "terminal": i + 1 == names.len(),
            })
        })
        .collect();
    let components: Vec<_> = names
        .windows(2)
        .map(|w| {
            serde_json::json!({
                "id": format!("make_{}", w[1]),
                "kind": "identity",
                "inputs": {"in": w[0]},
                "outputs": {"out": w[1]},
            })
        })
        .collect();
    let spec = serde_json::json!({
        "streams": streams,
        "components": components,
        "sources": [names[0]],
    });
    validate(DataflowGraph::from_json(&spec.to_string()).unwrap()).unwrap()
}

pub fn binary() -> StreamSchema {
    StreamSchema::Categorical(vec!["0".into(), "1".into()])
}

/// Binary chain SCM: `p1[0]` is P(root = 1), `p1[k]` holds
/// P(X_k = 1 | X_{k-1} = 0) and P(X_k = 1 | X_{k-1} = 1).
pub fn binary_chain(names: &[&str], root: f64, conditionals: &[[f64; 2]]) -> Scm {
    let g = chain(names, &binary());
    let causal = g.causal_graph().clone();
    let schemas: BTreeMap<StreamId, StreamSchema> =
        names.iter().map(|n| (StreamId::new(*n), binary())).collect();
    let mut mechanisms = vec![table_mechanism(
        names[0],
        &[],
        ConditionalTable::categorical(&[], 2, &[(vec![], vec![1.0 - root, root])]),
    )];
    for (w, c) in names.windows(2).zip(conditionals) {
        mechanisms.push(table_mechanism(
            w[1],
            &[w[0]],
            ConditionalTable::categorical(
                &[2],
                2,
                &[
                    (vec![0], vec![1.0 - c[0], c[0]]),
                    (vec![1], vec![1.0 - c[1], c[1]]),
                ],
            ),
        ));
    }
    Scm::new(causal, schemas, mechanisms).unwrap()
}

pub fn table_mechanism(target: &str, parents: &[&str], table: ConditionalTable) -> Mechanism {
    Mechanism {
        target: target.into(),
        parents: parents.iter().map(|p| StreamId::new(*p)).collect(),
        presence: Presence::Always,
        fields: vec![FieldModel::Table(table)],
        samples: 0,
    }
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
