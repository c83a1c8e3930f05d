use std::collections::BTreeMap;

use crate::graph::{CausalGraph, StreamId};

/// Denominator KLs at or below this make a hop ratio undefined.
pub const KL_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalScores {
    /// `None` when every path to the target crosses a degenerate denominator.
    pub scores: BTreeMap<StreamId, Option<f64>>,
    /// Streams whose KL was too small to divide by.
    pub degenerate: Vec<StreamId>,
}

/// Chains per-hop ratios `KL(input) / KL(output)` multiplicatively along
/// every path from a stream to `target` and sums over paths. The target
/// scores 1.
pub fn aggregate_ratios(
    causal: &CausalGraph,
    target: &StreamId,
    kl: &BTreeMap<StreamId, f64>,
) -> ProportionalScores {
    let upstream = causal.upstream(target).unwrap_or_default();
    let mut degenerate: Vec<StreamId> = std::iter::once(target)
        .chain(&upstream)
        .filter(|s| kl.get(*s).is_none_or(|&d| d <= KL_FLOOR))
        .cloned()
        .collect();
    degenerate.sort();
    // reverse topological order: every child is scored before its parents
    let order: Vec<&StreamId> = causal
        .variables
        .iter()
        .rev()
        .filter(|v| *v == target || upstream.contains(*v))
        .collect();
    let mut scores: BTreeMap<StreamId, Option<f64>> = BTreeMap::new();
    let target_ok = !degenerate.contains(target);
    scores.insert(target.clone(), target_ok.then_some(1.0));
    for s in order.into_iter().skip(1) {
        let mut total = None;
        for child in causal.children(s) {
            if child != *target && !upstream.contains(&child) {
                continue;
            }
            let Some(Some(child_score)) = scores.get(&child) else {
                continue;
            };
            let denom = kl.get(&child).copied().unwrap_or(0.0);
            let Some(&num) = kl.get(s) else { continue };
            if denom <= KL_FLOOR {
                continue;
            }
            *total.get_or_insert(0.0) += child_score * num / denom;
        }
        scores.insert(s.clone(), total);
    }
    ProportionalScores { scores, degenerate }
}
