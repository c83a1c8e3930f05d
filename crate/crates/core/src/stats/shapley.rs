use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::StatsError;

pub const MAX_EXACT_PLAYERS: usize = 12;
pub const DEFAULT_PERMUTATIONS: usize = 2000;

/// Coalitions are bitmasks over player indices.
pub type Coalition = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapleyMode {
    Exact,
    Permutation { samples: usize, seed: u64 },
}

pub struct ShapleyProblem<'a> {
    pub players: Vec<String>,
    pub value_fn: Box<dyn Fn(Coalition) -> f64 + Sync + 'a>,
    pub mode: ShapleyMode,
}

impl std::fmt::Debug for ShapleyProblem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShapleyProblem")
            .field("players", &self.players)
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

pub fn shapley(problem: &ShapleyProblem<'_>) -> Result<IndexMap<String, f64>, StatsError> {
    let phi = shapley_values(problem.players.len(), problem.mode, &*problem.value_fn)?;
    Ok(problem.players.iter().cloned().zip(phi).collect())
}

/// Shapley values of the game `v` over `n` players.
pub fn shapley_values(
    n: usize,
    mode: ShapleyMode,
    v: &(dyn Fn(Coalition) -> f64 + Sync),
) -> Result<Vec<f64>, StatsError> {
    if n >= 64 {
        return Err(StatsError::InvalidArgument(format!("{n} players exceed 63")));
    }
    match mode {
        ShapleyMode::Exact => exact(n, v),
        ShapleyMode::Permutation { samples, seed } => permutation(n, samples, seed, v),
    }
}

fn exact(n: usize, v: &(dyn Fn(Coalition) -> f64 + Sync)) -> Result<Vec<f64>, StatsError> {
    if n > MAX_EXACT_PLAYERS {
        return Err(StatsError::TooManyPlayersForExact {
            players: n,
            max: MAX_EXACT_PLAYERS,
        });
    }
    let values: Vec<f64> = (0..1u64 << n).into_par_iter().map(v).collect();
    // weight(|S|) = |S|! (n - |S| - 1)! / n!
    let mut weight = vec![0.0; n.max(1)];
    for (s, w) in weight.iter_mut().enumerate() {
        *w = 1.0 / (n as f64 * binomial(n - 1, s));
    }
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        for s in 0..1u64 << n {
            if s & bit == 0 {
                *p += weight[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]);
            }
        }
    }
    Ok(phi)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn permutation(
    n: usize,
    samples: usize,
    seed: u64,
    v: &(dyn Fn(Coalition) -> f64 + Sync),
) -> Result<Vec<f64>, StatsError> {
    if samples == 0 {
        return Err(StatsError::InvalidArgument("need at least one permutation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let perms: Vec<Vec<usize>> = (0..samples)
        .map(|_| {
            order.shuffle(&mut rng);
            order.clone()
        })
        .collect();
    let mut needed = BTreeSet::new();
    for perm in &perms {
        let mut s = 0u64;
        needed.insert(s);
        for &i in perm {
            s |= 1 << i;
            needed.insert(s);
        }
    }
    let needed: Vec<Coalition> = needed.into_iter().collect();
    let cache: HashMap<Coalition, f64> = needed.par_iter().map(|&s| (s, v(s))).collect();
    let mut phi = vec![0.0; n];
    for perm in &perms {
        let mut s = 0u64;
        for &i in perm {
            let next = s | 1 << i;
            phi[i] += cache[&next] - cache[&s];
            s = next;
        }
    }
    for p in &mut phi {
        *p /= samples as f64;
    }
    Ok(phi)
}
