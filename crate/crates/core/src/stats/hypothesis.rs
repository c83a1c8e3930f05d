use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};

use super::{SampleSet, StatsError};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn unweighted<'a>(s: &'a SampleSet, what: &'static str) -> Result<&'a [f64], StatsError> {
    if s.weights.is_some() {
        return Err(StatsError::WeightsUnsupported(what));
    }
    s.as_numeric().ok_or(StatsError::KindMismatch)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided Welch's unequal-variance t-test.
pub fn welch_t_test(a: &SampleSet, b: &SampleSet) -> Result<WelchResult, StatsError> {
    let (a, b) = (unweighted(a, "Welch's t-test")?, unweighted(b, "Welch's t-test")?);
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::DegenerateSample(
            "each sample needs at least two values".into(),
        ));
    }
    let (va, vb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    if va + vb <= 0.0 {
        return Err(StatsError::DegenerateSample(
            "both samples have zero variance".into(),
        ));
    }
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let df = (va + vb).powi(2)
        / (va.powi(2) / (a.len() as f64 - 1.0) + vb.powi(2) / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p_value })
}

/// `mean ± t_{(1+level)/2, n-1} · s/√n`.
pub fn confidence_interval(samples: &SampleSet, level: f64) -> Result<(f64, f64), StatsError> {
    if !(0.0 < level && level < 1.0) {
        return Err(StatsError::InvalidArgument(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let xs = unweighted(samples, "confidence_interval")?;
    if xs.len() < 2 {
        return Err(StatsError::DegenerateSample(
            "confidence interval needs at least two values".into(),
        ));
    }
    let m = mean(xs);
    let se = (variance(xs) / xs.len() as f64).sqrt();
    if se == 0.0 {
        return Ok((m, m));
    }
    let dist = StudentsT::new(0.0, 1.0, xs.len() as f64 - 1.0).expect("n >= 2");
    let half = dist.inverse_cdf(0.5 + level / 2.0) * se;
    Ok((m - half, m + half))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let p_value = kolmogorov_sf((en + 0.12 + 0.11 / en) * d);
    Ok(KsResult {
        statistic: d,
        p_value,
    })
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64 * lambda).powi(2)).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn chi_square_sf(statistic: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df)
        .expect("positive degrees of freedom")
        .sf(statistic.max(0.0))
}

/// One-sided p-value of observing at least `count` events out of `trials`
/// when each occurs with probability `rate`.
pub fn binomial_excess_test(count: u64, trials: u64, rate: f64) -> f64 {
    if count == 0 {
        return 1.0;
    }
    let dist = Binomial::new(rate, trials).expect("rate in [0, 1]");
    dist.sf(count - 1)
}
