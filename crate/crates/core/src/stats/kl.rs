use super::{SampleSet, SampleValues, StatsError};

/// Pseudo-count added to every histogram bin of both samples.
const HISTOGRAM_PSEUDOCOUNT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlEstimator {
    /// Equal-width bins over the pooled range of both samples.
    Histogram { bins: usize },
    /// k-nearest-neighbour estimator for one-dimensional samples.
    Knn { k: usize },
    /// Plug-in estimate over levels; fails when q misses a level p uses.
    Discrete,
    /// Plug-in estimate over levels with an additive pseudo-count.
    SmoothedDiscrete { pseudocount: f64 },
}

impl Default for KlEstimator {
    fn default() -> Self {
        KlEstimator::Histogram { bins: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    /// Set when a negative raw estimate was clamped to zero.
    pub clamped: bool,
}

/// Estimates KL(p || q).
pub fn kl_divergence(
    p: &SampleSet,
    q: &SampleSet,
    estimator: KlEstimator,
) -> Result<KlEstimate, StatsError> {
    if p.is_empty() || q.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let raw = match (&p.values, &q.values, estimator) {
        (SampleValues::Numeric(a), SampleValues::Numeric(b), KlEstimator::Histogram { bins }) => {
            histogram(a, &p.normalised_weights(), b, &q.normalised_weights(), bins)?
        }
        (SampleValues::Numeric(a), SampleValues::Numeric(b), KlEstimator::Knn { k }) => {
            if p.weights.is_some() || q.weights.is_some() {
                return Err(StatsError::WeightsUnsupported("kNN KL estimator"));
            }
            knn(a, b, k)?
        }
        (
            SampleValues::Levels { levels: la, codes: a },
            SampleValues::Levels { levels: lb, codes: b },
            KlEstimator::Discrete | KlEstimator::SmoothedDiscrete { .. },
        ) => {
            let levels = (*la).max(*lb);
            let pseudocount = match estimator {
                KlEstimator::SmoothedDiscrete { pseudocount } => pseudocount,
                _ => 0.0,
            };
            discrete(
                &level_counts(a, &p.normalised_weights(), levels),
                &level_counts(b, &q.normalised_weights(), levels),
                pseudocount,
            )?
        }
        _ => return Err(StatsError::KindMismatch),
    };
    Ok(if raw < 0.0 {
        KlEstimate {
            value: 0.0,
            clamped: true,
        }
    } else {
        KlEstimate {
            value: raw,
            clamped: false,
        }
    })
}

fn histogram(p: &[f64], wp: &[f64], q: &[f64], wq: &[f64], bins: usize) -> Result<f64, StatsError> {
    if bins == 0 {
        return Err(StatsError::InvalidArgument("histogram needs at least one bin".into()));
    }
    let (lo, hi) = p
        .iter()
        .chain(q)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi <= lo {
        return Ok(0.0);
    }
    let width = (hi - lo) / bins as f64;
    let count = |xs: &[f64], ws: &[f64]| {
        let mut c = vec![HISTOGRAM_PSEUDOCOUNT; bins];
        for (&x, &w) in xs.iter().zip(ws) {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            c[b] += w;
        }
        c
    };
    discrete(&count(p, wp), &count(q, wq), 0.0)
}

fn level_counts(codes: &[u32], weights: &[f64], levels: usize) -> Vec<f64> {
    let top = codes.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut counts = vec![0.0; levels.max(top)];
    for (&c, &w) in codes.iter().zip(weights) {
        counts[c as usize] += w;
    }
    counts
}

fn discrete(p: &[f64], q: &[f64], pseudocount: f64) -> Result<f64, StatsError> {
    let len = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0) + pseudocount;
    let tp: f64 = (0..len).map(|i| at(p, i)).sum();
    let tq: f64 = (0..len).map(|i| at(q, i)).sum();
    let mut kl = 0.0;
    for i in 0..len {
        let pi = at(p, i) / tp;
        if pi == 0.0 {
            continue;
        }
        let qi = at(q, i) / tq;
        if qi == 0.0 {
            return Err(StatsError::AbsoluteContinuityViolation { level: i as u32 });
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl)
}

/// One-dimensional k-NN divergence estimator:
/// `D = mean(ln(nu_k / rho_k)) + ln(m / (n - 1))`, where `rho_k` is the
/// distance to the k-th neighbour within p (excluding the point itself) and
/// `nu_k` the distance to the k-th neighbour in q.
fn knn(p: &[f64], q: &[f64], k: usize) -> Result<f64, StatsError> {
    if k == 0 {
        return Err(StatsError::InvalidArgument("k must be positive".into()));
    }
    if p.len() <= k || q.len() < k {
        return Err(StatsError::InsufficientData {
            have: p.len().min(q.len()),
            need: k + 1,
        });
    }
    let mut ps = p.to_vec();
    let mut qs = q.to_vec();
    ps.sort_by(f64::total_cmp);
    qs.sort_by(f64::total_cmp);
    let span = (ps[ps.len() - 1].max(qs[qs.len() - 1]) - ps[0].min(qs[0])).abs();
    let floor = (span * 1e-12).max(f64::MIN_POSITIVE);

    let n = ps.len() as f64;
    let m = qs.len() as f64;
    let mut total = 0.0;
    for (i, &x) in ps.iter().enumerate() {
        let rho = kth_distance(&ps, x, i, Some(i), k).max(floor);
        let j = qs.partition_point(|&y| y < x);
        let nu = kth_distance(&qs, x, j, None, k).max(floor);
        total += (nu / rho).ln();
    }
    Ok(total / n + (m / (n - 1.0)).ln())
}

/// Distance from `x` to its k-th nearest neighbour in `sorted`. `at` is the
/// insertion point of `x`; `skip` excludes the point's own index.
fn kth_distance(sorted: &[f64], x: f64, at: usize, skip: Option<usize>, k: usize) -> f64 {
    let (mut lo, mut hi) = match skip {
        Some(i) => (i as isize - 1, i + 1),
        None => (at as isize - 1, at),
    };
    let mut d = 0.0;
    for _ in 0..k {
        let left = (lo >= 0).then(|| x - sorted[lo as usize]);
        let right = (hi < sorted.len()).then(|| sorted[hi] - x);
        d = match (left, right) {
            (Some(l), Some(r)) if l <= r => {
                lo -= 1;
                l
            }
            (_, Some(r)) => {
                hi += 1;
                r
            }
            (Some(l), None) => {
                lo -= 1;
                l
            }
            (None, None) => return f64::INFINITY,
        };
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn normal(mean: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    /// Closed form for equal-variance Gaussians.
    fn gaussian_kl(mu_p: f64, mu_q: f64, sigma: f64) -> f64 {
        (mu_p - mu_q).powi(2) / (2.0 * sigma * sigma)
    }

    #[test]
    fn identical_samples_give_zero() {
        let x = SampleSet::numeric(normal(0.0, 2000, 1));
        for est in [KlEstimator::Histogram { bins: 32 }, KlEstimator::Knn { k: 5 }] {
            let kl = kl_divergence(&x, &x, est).unwrap();
            assert!(kl.value.abs() <= 0.01, "{est:?}: {kl:?}");
        }
    }

    #[test]
    fn recovers_gaussian_shift() {
        let expected = gaussian_kl(1.0, 0.0, 1.0);
        let p = SampleSet::numeric(normal(1.0, 10_000, 2));
        let q = SampleSet::numeric(normal(0.0, 10_000, 3));
        for est in [KlEstimator::Histogram { bins: 32 }, KlEstimator::Knn { k: 5 }] {
            let kl = kl_divergence(&p, &q, est).unwrap();
            assert!((kl.value - expected).abs() <= 0.07, "{est:?}: {kl:?}");
        }
    }

    #[test]
    fn discrete_needs_support() {
        let p = SampleSet::levels(2, vec![0, 1, 0, 1]);
        let q = SampleSet::levels(2, vec![0, 0, 0, 0]);
        assert!(matches!(
            kl_divergence(&p, &q, KlEstimator::Discrete),
            Err(StatsError::AbsoluteContinuityViolation { level: 1 })
        ));
        let smoothed =
            kl_divergence(&p, &q, KlEstimator::SmoothedDiscrete { pseudocount: 0.5 }).unwrap();
        assert!(smoothed.value > 0.0);
    }

    #[test]
    fn discrete_matches_hand_value() {
        // p = (0.75, 0.25), q = (0.5, 0.5)
        let p = SampleSet::levels(2, vec![0, 0, 0, 1]);
        let q = SampleSet::levels(2, vec![0, 1]);
        let expected = 0.75 * (1.5f64).ln() + 0.25 * (0.5f64).ln();
        let kl = kl_divergence(&p, &q, KlEstimator::Discrete).unwrap();
        assert!((kl.value - expected).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let e = SampleSet::numeric(vec![]);
        let x = SampleSet::numeric(vec![1.0, 2.0]);
        assert_eq!(
            kl_divergence(&e, &x, KlEstimator::default()),
            Err(StatsError::EmptySample)
        );
        assert_eq!(
            kl_divergence(&x, &SampleSet::levels(2, vec![0]), KlEstimator::default()),
            Err(StatsError::KindMismatch)
        );
    }

    #[test]
    fn weights_scale_invariant() {
        let p = SampleSet::numeric(normal(0.5, 500, 4));
        let q = SampleSet::numeric(normal(0.0, 500, 5));
        let w = vec![2.0; 500];
        let a = kl_divergence(&p, &q, KlEstimator::default()).unwrap();
        let b = kl_divergence(&p.clone().with_weights(w).unwrap(), &q, KlEstimator::default())
            .unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn knn_negative_values_are_clamped() {
        let x = SampleSet::numeric(normal(0.0, 500, 6));
        let kl = kl_divergence(&x, &x, KlEstimator::Knn { k: 5 }).unwrap();
        assert!(kl.clamped);
        assert_eq!(kl.value, 0.0);
    }
}
