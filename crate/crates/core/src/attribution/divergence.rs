use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::runtime::derive_seed;
use crate::scm::frame::StreamColumn;
use crate::stats::{kl_divergence, Cell, CellKind, KlEstimator, SampleSet, StatsError};

/// Pseudo-count for categorical fields, matching the histogram estimator's.
const LEVEL_PSEUDOCOUNT: f64 = 0.5;

const BOOTSTRAP_DOMAIN: u64 = 2 << 32;

/// Rows of one stream where it is present: one cell per field.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub kinds: Vec<CellKind>,
    pub rows: Vec<Vec<Cell>>,
}

impl StreamSample {
    pub fn from_column(col: &StreamColumn) -> Self {
        StreamSample {
            kinds: col.fields.iter().map(|f| f.kind).collect(),
            rows: (0..col.present.len())
                .filter(|&r| col.present[r])
                .map(|r| col.fields.iter().map(|f| f.cells[r]).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn field(&self, k: usize) -> SampleSet {
        match self.kinds[k] {
            CellKind::Numeric => SampleSet::numeric(
                self.rows
                    .iter()
                    .map(|r| match r[k] {
                        Cell::Num(x) => x,
                        _ => f64::NAN,
                    })
                    .collect(),
            ),
            CellKind::Categorical(levels) => SampleSet::levels(
                levels,
                self.rows
                    .iter()
                    .map(|r| match r[k] {
                        Cell::Level(l) => l,
                        _ => 0,
                    })
                    .collect(),
            ),
        }
    }

    fn resample(&self, n: usize, rng: &mut ChaCha8Rng) -> StreamSample {
        StreamSample {
            kinds: self.kinds.clone(),
            rows: (0..n)
                .map(|_| self.rows[rng.random_range(0..self.rows.len())].clone())
                .collect(),
        }
    }
}

/// `D(p || q)` of a stream's values: the sum of per-field marginal KLs.
/// Numeric fields use `estimator`, categorical fields a smoothed plug-in.
pub fn stream_divergence(
    p: &StreamSample,
    q: &StreamSample,
    estimator: KlEstimator,
) -> Result<f64, StatsError> {
    let mut total = 0.0;
    for (k, kind) in p.kinds.iter().enumerate() {
        let est = match kind {
            CellKind::Numeric => estimator,
            CellKind::Categorical(_) => KlEstimator::SmoothedDiscrete {
                pseudocount: LEVEL_PSEUDOCOUNT,
            },
        };
        total += kl_divergence(&p.field(k), &q.field(k), est)?.value;
    }
    Ok(total)
}

/// Null distribution of the divergence between two windows of sizes
/// `(n_p, n_q)` drawn from `sample` alone; returns its `quantile`.
pub fn bootstrap_threshold(
    sample: &StreamSample,
    n_p: usize,
    n_q: usize,
    estimator: KlEstimator,
    rounds: usize,
    quantile: f64,
    seed: u64,
) -> Result<f64, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut null = Vec::with_capacity(rounds);
    for b in 0..rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, BOOTSTRAP_DOMAIN, b as u64));
        let p = sample.resample(n_p, &mut rng);
        let q = sample.resample(n_q, &mut rng);
        null.push(stream_divergence(&p, &q, estimator)?);
    }
    null.sort_by(f64::total_cmp);
    let idx = ((quantile * rounds as f64).ceil() as usize).clamp(1, rounds) - 1;
    Ok(null[idx])
}
