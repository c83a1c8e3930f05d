use serde::{Deserialize, Serialize};

use super::{Cell, CellKind, Covariate, StatsError};

pub const MAX_LEAVES: usize = 8;
pub const MIN_LEAF: usize = 5;
pub const MIN_GAIN: f64 = 0.01;

/// Sorted cut points; a number falls into bin `#edges below it`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretiser {
    pub edges: Vec<f64>,
}

impl Discretiser {
    pub fn bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn bin(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| e < x)
    }

    pub fn equal_width(values: &[f64], bins: usize) -> Self {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        if bins < 2 || hi <= lo {
            return Discretiser { edges: vec![] };
        }
        let w = (hi - lo) / bins as f64;
        Discretiser {
            edges: (1..bins).map(|i| lo + w * i as f64).collect(),
        }
    }
}

struct Leaf {
    lo: usize,
    hi: usize,
    split: Option<(usize, f64)>,
}

fn gini(counts: &[f64], n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n).powi(2)).sum::<f64>()
}

/// Best split of `pairs[lo..hi]` as (split index, weighted Gini gain).
fn best_split(pairs: &[(f64, u32)], lo: usize, hi: usize, labels: usize, total: f64) -> Option<(usize, f64)> {
    let n = (hi - lo) as f64;
    let mut right = vec![0.0; labels];
    for &(_, l) in &pairs[lo..hi] {
        right[l as usize] += 1.0;
    }
    let parent = gini(&right, n);
    let mut left = vec![0.0; labels];
    let mut best: Option<(usize, f64)> = None;
    for i in lo..hi - 1 {
        let l = pairs[i].1 as usize;
        left[l] += 1.0;
        right[l] -= 1.0;
        let nl = (i + 1 - lo) as f64;
        if pairs[i].0 == pairs[i + 1].0 || (nl as usize) < MIN_LEAF || (hi - i - 1) < MIN_LEAF {
            continue;
        }
        let nr = n - nl;
        let child = (nl * gini(&left, nl) + nr * gini(&right, nr)) / n;
        let gain = (parent - child) * n / total;
        if best.is_none_or(|(_, g)| gain > g) {
            best = Some((i + 1, gain));
        }
    }
    best.filter(|&(_, g)| g >= MIN_GAIN)
}

/// Supervised binning of a numeric covariate: greedy classification tree on
/// the Gini impurity of `labels`, at most [`MAX_LEAVES`] leaves of at least
/// [`MIN_LEAF`] rows, cuts at midpoints between adjacent observed values.
pub fn fit_bins(values: &[f64], labels: &[u32], n_labels: usize) -> Result<Discretiser, StatsError> {
    if values.len() != labels.len() {
        return Err(StatsError::InvalidArgument(
            "values and labels differ in length".into(),
        ));
    }
    if values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut pairs: Vec<(f64, u32)> = values.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let labels = n_labels.max(1 + labels.iter().copied().max().unwrap_or(0) as usize);
    let total = pairs.len() as f64;
    let mut leaves = vec![Leaf {
        lo: 0,
        hi: pairs.len(),
        split: best_split(&pairs, 0, pairs.len(), labels, total),
    }];
    while leaves.len() < MAX_LEAVES {
        let Some((idx, at)) = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.split.map(|(at, g)| (i, at, g)))
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(i, at, _)| (i, at))
        else {
            break;
        };
        let Leaf { lo, hi, .. } = leaves.swap_remove(idx);
        for (a, b) in [(lo, at), (at, hi)] {
            leaves.push(Leaf {
                lo: a,
                hi: b,
                split: best_split(&pairs, a, b, labels, total),
            });
        }
    }
    let mut edges: Vec<f64> = leaves
        .iter()
        .filter(|l| l.lo > 0)
        .map(|l| 0.5 * (pairs[l.lo - 1].0 + pairs[l.lo].0))
        .collect();
    edges.sort_by(f64::total_cmp);
    Ok(Discretiser { edges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellCoder {
    Numeric(Discretiser),
    Categorical(usize),
}

impl CellCoder {
    /// Number of codes including the absent code 0.
    fn radix(&self) -> u64 {
        1 + match self {
            CellCoder::Numeric(d) => d.bins() as u64,
            CellCoder::Categorical(levels) => *levels as u64,
        }
    }

    fn code(&self, cell: Cell) -> u64 {
        match (self, cell) {
            (_, Cell::Absent) => 0,
            (CellCoder::Numeric(d), Cell::Num(x)) => 1 + d.bin(x) as u64,
            (CellCoder::Categorical(levels), Cell::Level(l)) => 1 + (l as u64).min(*levels as u64 - 1),
            (CellCoder::Numeric(_), Cell::Level(l)) => 1 + l as u64,
            (CellCoder::Categorical(_), Cell::Num(_)) => 0,
        }
    }
}

/// Packs a row of covariate cells into one configuration key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coder {
    pub cells: Vec<CellCoder>,
}

impl Coder {
    /// Fits numeric binnings against the categorical target `labels`.
    pub fn fit(covariates: &[Covariate], labels: &[u32], n_labels: usize) -> Result<Self, StatsError> {
        let mut cells = Vec::with_capacity(covariates.len());
        for c in covariates {
            cells.push(match c.kind {
                CellKind::Categorical(levels) => CellCoder::Categorical(levels),
                CellKind::Numeric => {
                    let (xs, ls): (Vec<f64>, Vec<u32>) = c
                        .cells
                        .iter()
                        .zip(labels)
                        .filter_map(|(cell, &l)| match cell {
                            Cell::Num(x) => Some((*x, l)),
                            _ => None,
                        })
                        .unzip();
                    if xs.is_empty() {
                        CellCoder::Numeric(Discretiser { edges: vec![] })
                    } else {
                        CellCoder::Numeric(fit_bins(&xs, &ls, n_labels)?)
                    }
                }
            });
        }
        let coder = Coder { cells };
        if coder.cells.iter().try_fold(1u64, |acc, c| acc.checked_mul(c.radix())).is_none() {
            return Err(StatsError::InvalidArgument(
                "too many parent configurations".into(),
            ));
        }
        Ok(coder)
    }

    pub fn key(&self, row: &[Cell]) -> u64 {
        self.cells
            .iter()
            .zip(row)
            .fold(0u64, |acc, (c, &cell)| acc * c.radix() + c.code(cell))
    }

    pub fn keys(&self, covariates: &[Covariate], rows: usize) -> Vec<u64> {
        let mut row = Vec::with_capacity(covariates.len());
        (0..rows)
            .map(|r| {
                row.clear();
                row.extend(covariates.iter().map(|c| c.cells[r]));
                self.key(&row)
            })
            .collect()
    }
}
