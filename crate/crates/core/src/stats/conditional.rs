use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::discretise::Coder;
use super::hypothesis::{chi_square_sf, ks_two_sample};
use super::regression::{least_squares, FeatureEncoder};
use super::{Covariate, StatsError};

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Numeric(Vec<f64>),
    Levels { levels: usize, codes: Vec<u32> },
}

impl Response {
    pub fn len(&self) -> usize {
        match self {
            Response::Numeric(v) => v.len(),
            Response::Levels { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Joined (parents, value) rows from one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSample {
    pub covariates: Vec<Covariate>,
    pub response: Response,
}

impl ConditionalSample {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTest {
    pub statistic: f64,
    pub p_value: f64,
    pub method: &'static str,
}

/// Tests whether `p(value | parents)` differs between two windows.
///
/// Numeric responses: a pooled linear fit is compared against one with
/// window interactions (F test), and pooled residuals are compared across
/// windows (Kolmogorov–Smirnov); the two p-values are Bonferroni-combined.
/// Categorical responses: Pearson chi-square of window × level, stratified
/// by the discretised parent configuration.
pub fn conditional_shift_test(
    old: &ConditionalSample,
    new: &ConditionalSample,
    min_samples: usize,
) -> Result<ShiftTest, StatsError> {
    let have = old.len().min(new.len());
    if have < min_samples.max(2) {
        return Err(StatsError::InsufficientData {
            have,
            need: min_samples.max(2),
        });
    }
    if old.covariates.len() != new.covariates.len()
        || old
            .covariates
            .iter()
            .zip(&new.covariates)
            .any(|(a, b)| a.kind != b.kind)
    {
        return Err(StatsError::KindMismatch);
    }
    let pooled: Vec<Covariate> = old
        .covariates
        .iter()
        .zip(&new.covariates)
        .map(|(a, b)| Covariate {
            kind: a.kind,
            cells: a.cells.iter().chain(&b.cells).copied().collect(),
        })
        .collect();
    match (&old.response, &new.response) {
        (Response::Numeric(a), Response::Numeric(b)) => numeric(&pooled, a, b),
        (Response::Levels { levels: la, codes: a }, Response::Levels { levels: lb, codes: b }) => {
            categorical(&pooled, a, b, (*la).max(*lb))
        }
        _ => Err(StatsError::KindMismatch),
    }
}

fn numeric(pooled: &[Covariate], a: &[f64], b: &[f64]) -> Result<ShiftTest, StatsError> {
    let n = a.len() + b.len();
    let y: Vec<f64> = a.iter().chain(b).copied().collect();
    let enc = FeatureEncoder::fit(pooled);
    let w = enc.width();
    let restricted_design = enc.design(pooled, n);
    let restricted = least_squares(&restricted_design, w, &y)?;

    let mut full = Vec::with_capacity(n * 2 * w);
    for (r, row) in restricted_design.chunks(w).enumerate() {
        let label = if r < a.len() { 0.0 } else { 1.0 };
        full.extend_from_slice(row);
        full.extend(row.iter().map(|x| x * label));
    }
    let unrestricted = least_squares(&full, 2 * w, &y)?;

    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let exact = 1e-20 * scale;
    if restricted.rss <= exact {
        return Ok(ShiftTest {
            statistic: 0.0,
            p_value: 1.0,
            method: "chow-ks",
        });
    }

    let df1 = unrestricted.rank.saturating_sub(restricted.rank);
    let df2 = n.saturating_sub(unrestricted.rank);
    let (f, p_f) = if df1 == 0 || df2 == 0 {
        (0.0, 1.0)
    } else if unrestricted.rss <= exact {
        (f64::INFINITY, 0.0)
    } else {
        let f = ((restricted.rss - unrestricted.rss).max(0.0) / df1 as f64)
            / (unrestricted.rss / df2 as f64);
        let dist = FisherSnedecor::new(df1 as f64, df2 as f64).expect("positive df");
        (f, dist.sf(f))
    };

    let (ra, rb) = restricted.residuals.split_at(a.len());
    let ks = ks_two_sample(ra, rb)?;

    let p_value = (2.0 * p_f.min(ks.p_value)).min(1.0);
    Ok(ShiftTest {
        statistic: f,
        p_value,
        method: "chow-ks",
    })
}

fn categorical(pooled: &[Covariate], a: &[u32], b: &[u32], levels: usize) -> Result<ShiftTest, StatsError> {
    let n = a.len() + b.len();
    let labels: Vec<u32> = a.iter().chain(b).copied().collect();
    let levels = levels.max(1 + labels.iter().copied().max().unwrap_or(0) as usize);
    let coder = Coder::fit(pooled, &labels, levels)?;
    let keys = coder.keys(pooled, n);
    let mut strata: BTreeMap<u64, [Vec<f64>; 2]> = BTreeMap::new();
    for (r, (&key, &label)) in keys.iter().zip(&labels).enumerate() {
        let window = usize::from(r >= a.len());
        let entry = strata
            .entry(key)
            .or_insert_with(|| [vec![0.0; levels], vec![0.0; levels]]);
        entry[window][label as usize] += 1.0;
    }
    let mut statistic = 0.0;
    let mut df = 0usize;
    for [old, new] in strata.values() {
        let (no, nn): (f64, f64) = (old.iter().sum(), new.iter().sum());
        if no == 0.0 || nn == 0.0 {
            continue;
        }
        let total = no + nn;
        let mut used = 0usize;
        for l in 0..levels {
            let col = old[l] + new[l];
            if col == 0.0 {
                continue;
            }
            used += 1;
            for (obs, rowsum) in [(old[l], no), (new[l], nn)] {
                let expected = rowsum * col / total;
                statistic += (obs - expected).powi(2) / expected;
            }
        }
        df += used.saturating_sub(1);
    }
    Ok(ShiftTest {
        statistic,
        p_value: chi_square_sf(statistic, df as f64),
        method: "stratified-chi-square",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{Cell, CellKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(kind: CellKind, cells: Vec<Cell>) -> Covariate {
        Covariate { kind, cells }
    }

    fn linear(slope: f64, n: usize, rng: &mut ChaCha8Rng) -> ConditionalSample {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = x.iter().map(|v| slope * v + rng.random_range(-1.0..1.0)).collect();
        ConditionalSample {
            covariates: vec![column(CellKind::Numeric, x.into_iter().map(Cell::Num).collect())],
            response: Response::Numeric(y),
        }
    }

    fn binary(p1: [f64; 2], n: usize, rng: &mut ChaCha8Rng) -> ConditionalSample {
        let x: Vec<u32> = (0..n).map(|_| u32::from(rng.random_bool(0.5))).collect();
        let y = x.iter().map(|&v| u32::from(rng.random_bool(p1[v as usize]))).collect();
        ConditionalSample {
            covariates: vec![column(
                CellKind::Categorical(2),
                x.into_iter().map(Cell::Level).collect(),
            )],
            response: Response::Levels { levels: 2, codes: y },
        }
    }

    #[test]
    fn calibrated_under_identical_mechanism() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let accepted = (0..100)
            .filter(|_| {
                let a = linear(2.0, 500, &mut rng);
                let b = linear(2.0, 500, &mut rng);
                conditional_shift_test(&a, &b, 50).unwrap().p_value > 0.05
            })
            .count();
        assert!(accepted >= 90, "accepted {accepted}/100");
    }

    #[test]
    fn detects_slope_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = linear(2.0, 2000, &mut rng);
        let b = linear(3.0, 2000, &mut rng);
        assert!(conditional_shift_test(&a, &b, 50).unwrap().p_value < 0.01);
    }

    #[test]
    fn empty_window_is_insufficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = linear(2.0, 100, &mut rng);
        let b = linear(2.0, 0, &mut rng);
        assert!(matches!(
            conditional_shift_test(&a, &b, 50),
            Err(StatsError::InsufficientData { have: 0, .. })
        ));
    }

    #[test]
    fn marginal_shift_in_parent_is_not_a_mechanism_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = linear(2.0, 1000, &mut rng);
        let mut b = linear(2.0, 1000, &mut rng);
        // shift x by +3 and keep y = 2x + e
        if let (Response::Numeric(y), [cov]) = (&mut b.response, b.covariates.as_mut_slice()) {
            for (yi, c) in y.iter_mut().zip(cov.cells.iter_mut()) {
                if let Cell::Num(x) = c {
                    *x += 3.0;
                    *yi += 6.0;
                }
            }
        }
        assert!(conditional_shift_test(&a, &b, 50).unwrap().p_value > 0.01);
    }

    #[test]
    fn categorical_calibration_and_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let accepted = (0..100)
            .filter(|_| {
                let a = binary([0.2, 0.9], 500, &mut rng);
                let b = binary([0.2, 0.9], 500, &mut rng);
                conditional_shift_test(&a, &b, 50).unwrap().p_value > 0.05
            })
            .count();
        assert!(accepted >= 90, "accepted {accepted}/100");
        let a = binary([0.2, 0.9], 1000, &mut rng);
        let b = binary([0.2, 0.5], 1000, &mut rng);
        assert!(conditional_shift_test(&a, &b, 50).unwrap().p_value < 0.01);
    }

    #[test]
    fn deterministic_mechanism_unchanged() {
        let x: Vec<f64> = (0..100).map(f64::from).collect();
        let mk = |xs: &[f64]| ConditionalSample {
            covariates: vec![column(CellKind::Numeric, xs.iter().map(|&v| Cell::Num(v)).collect())],
            response: Response::Numeric(xs.iter().map(|v| 3.0 * v + 1.0).collect()),
        };
        let shifted: Vec<f64> = x.iter().map(|v| v * 1.5).collect();
        let r = conditional_shift_test(&mk(&x), &mk(&shifted), 50).unwrap();
        assert_eq!(r.p_value, 1.0);
    }
}
