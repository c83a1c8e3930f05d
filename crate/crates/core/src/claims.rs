//! Insurance-claims processing application: graph, transforms, claim
//! generator and the fault and data-shift injectors.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, LogNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::graph::{ComponentId, DataflowGraph, GraphError, StreamId, ValidatedGraph};
use crate::runtime::{SourceGenerator, TransformRegistry};
use crate::value::{Scalar, Value};

pub const GRAPH_JSON: &str = include_str!("../../../fixtures/claims_graph.json");

pub const NEW_CLAIMS: &str = "NewClaimsStream";
pub const CLAIM_VALUE: &str = "ClaimValueStream";
pub const LOW_VALUE: &str = "LowValueClaimsStream";
pub const HIGH_VALUE: &str = "HighValueClaimsStream";
pub const SIMPLE: &str = "SimpleClaimsStream";
pub const COMPLEX: &str = "ComplexClaimsStream";
pub const PAYOUT: &str = "ClaimPayoutStream";

/// Streams in pipeline order.
pub const STREAMS: [&str; 7] = [NEW_CLAIMS, CLAIM_VALUE, LOW_VALUE, HIGH_VALUE, SIMPLE, COMPLEX, PAYOUT];

pub const CLASSIFY: &str = "ClassifyClaimComplexity";
pub const CLASSIFY_KIND: &str = "claims.classify_complexity";
/// Classifies every low-value claim as simple.
pub const BUGGY_CLASSIFY_KIND: &str = "claims.classify_complexity_low_value_simple";

pub const SEVERITIES: [&str; 3] = ["minor", "moderate", "severe"];

/// Handling fee per severity level, added to the claimed amount.
const FEES: [f64; 3] = [0.0, 150.0, 400.0];
const PAYOUT_NOISE: f64 = 25.0;

/// Payout as a function of claim value, complexity class and severity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoutRule {
    pub simple_rate: f64,
    pub simple_offset: f64,
    pub complex_rate: f64,
    pub complex_offset: f64,
    /// Severity bonus on complex payouts.
    pub complex_bonus: [f64; 3],
}

impl Default for PayoutRule {
    fn default() -> Self {
        PayoutRule {
            simple_rate: 0.9,
            simple_offset: 1600.0,
            complex_rate: 0.75,
            complex_offset: 200.0,
            complex_bonus: [0.0, 500.0, 5000.0],
        }
    }
}

impl PayoutRule {
    pub fn simple(&self, value: f64) -> f64 {
        self.simple_rate * value + self.simple_offset
    }

    pub fn complex(&self, value: f64, severity: usize) -> f64 {
        self.complex_rate * value + self.complex_offset + self.complex_bonus[severity]
    }
}
/// Quantile of the claimed amount used as the low/high split.
const SPLIT_QUANTILE: f64 = 0.6;

/// Parameters of the synthetic claim generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaimsParams {
    pub median_amount: f64,
    /// Log-scale spread of the claimed amount.
    pub sigma: f64,
    pub severity: [f64; 3],
    pub payout: PayoutRule,
}

impl Default for ClaimsParams {
    fn default() -> Self {
        ClaimsParams {
            median_amount: 2000.0,
            sigma: 0.8,
            severity: [0.5, 0.3, 0.2],
            payout: PayoutRule::default(),
        }
    }
}

impl ClaimsParams {
    /// The default generator plus two alternatives used for sensitivity checks.
    pub fn sensitivity_set() -> [ClaimsParams; 3] {
        [
            ClaimsParams::default(),
            ClaimsParams {
                median_amount: 1500.0,
                sigma: 0.6,
                severity: [0.4, 0.35, 0.25],
                ..ClaimsParams::default()
            },
            ClaimsParams {
                median_amount: 2500.0,
                sigma: 1.0,
                severity: [0.6, 0.25, 0.15],
                ..ClaimsParams::default()
            },
        ]
    }

    /// Value above which a claim counts as high value.
    pub fn split_threshold(&self) -> f64 {
        let z = Normal::standard().inverse_cdf(SPLIT_QUANTILE);
        self.median_amount * (self.sigma * z).exp()
    }
}

pub fn build_claims_graph() -> ValidatedGraph {
    crate::graph::validate(DataflowGraph::from_json(GRAPH_JSON).expect("fixture parses")).expect("fixture validates")
}

/// Swaps the classifier for the buggy one; wiring is unchanged.
pub fn inject_fault(graph: &ValidatedGraph) -> Result<ValidatedGraph, GraphError> {
    graph.with_component_kind(&ComponentId::new(CLASSIFY), BUGGY_CLASSIFY_KIND)
}

fn claim(value: f64, severity: usize) -> Value {
    Value::tuple([
        ("value", Scalar::Number(value)),
        ("severity", Scalar::Level(SEVERITIES[severity].into())),
    ])
}

fn unpack(v: &Value, amount_field: &str) -> Option<(f64, usize)> {
    let x = v.field(amount_field)?.as_number()?;
    let s = v.field("severity")?.as_level()?;
    Some((x, SEVERITIES.iter().position(|l| *l == s)?))
}

fn classify(buggy: bool) -> impl Fn(&[Option<Value>], usize, &mut dyn RngCore) -> Vec<Option<Value>> {
    move |inputs, _, _| {
        let (low, high) = (&inputs[0], &inputs[1]);
        let simple = match (low, high) {
            (Some(v), _) => unpack(v, "value").map(|(_, s)| buggy || s != 2),
            (None, Some(v)) => unpack(v, "value").map(|(_, s)| s == 0),
            (None, None) => None,
        };
        let record = low.clone().or_else(|| high.clone());
        match simple {
            Some(true) => vec![record, None],
            Some(false) => vec![None, record],
            None => vec![None, None],
        }
    }
}

/// Transforms of the claims graph for a given generator parameterisation.
pub fn claims_registry(params: &ClaimsParams) -> TransformRegistry {
    let threshold = params.split_threshold();
    let mut r = TransformRegistry::with_builtins();
    r.register("claims.calculate_value", |inputs: &[Option<Value>], _: usize, _: &mut dyn RngCore| {
        let out = inputs[0]
            .as_ref()
            .and_then(|v| unpack(v, "amount"))
            .map(|(amount, s)| claim(amount + FEES[s], s));
        vec![out]
    });
    r.register(
        "claims.split_by_value",
        move |inputs: &[Option<Value>], _: usize, _: &mut dyn RngCore| match inputs[0].as_ref() {
            Some(v) if unpack(v, "value").is_some_and(|(x, _)| x > threshold) => vec![None, Some(v.clone())],
            Some(v) => vec![Some(v.clone()), None],
            None => vec![None, None],
        },
    );
    r.register(CLASSIFY_KIND, classify(false));
    r.register(BUGGY_CLASSIFY_KIND, classify(true));
    let rule = params.payout;
    r.register(
        "claims.calculate_payout",
        move |inputs: &[Option<Value>], _: usize, rng: &mut dyn RngCore| {
            let noise = rng.random_range(-PAYOUT_NOISE..=PAYOUT_NOISE);
            let payout = match (&inputs[0], &inputs[1]) {
                (Some(v), _) => unpack(v, "value").map(|(x, _)| rule.simple(x)),
                (None, Some(v)) => unpack(v, "value").map(|(x, s)| rule.complex(x, s)),
                (None, None) => None,
            };
            vec![payout.map(|p| Value::Number(p + noise))]
        },
    );
    r
}

/// Source generator for `NewClaimsStream`.
#[derive(Debug, Clone)]
pub struct ClaimGenerator {
    params: ClaimsParams,
    amount: LogNormal<f64>,
}

impl ClaimGenerator {
    pub fn new(params: ClaimsParams) -> Self {
        ClaimGenerator {
            amount: LogNormal::new(params.median_amount.ln(), params.sigma).expect("positive sigma"),
            params,
        }
    }
}

impl SourceGenerator for ClaimGenerator {
    fn generate(&mut self, _: u64, rng: &mut dyn RngCore) -> Value {
        let amount = self.amount.sample(rng);
        let u: f64 = rng.random();
        let p = self.params.severity;
        let severity = if u < p[0] {
            0
        } else if u < p[0] + p[1] {
            1
        } else {
            2
        };
        Value::tuple([
            ("amount", Scalar::Number(amount)),
            ("severity", Scalar::Level(SEVERITIES[severity].into())),
        ])
    }
}

/// Multiplies the claimed amount of another generator's records.
pub struct ScaledAmount {
    inner: Box<dyn SourceGenerator>,
    factor: f64,
}

impl SourceGenerator for ScaledAmount {
    fn generate(&mut self, index: u64, rng: &mut dyn RngCore) -> Value {
        let mut v = self.inner.generate(index, rng);
        if let Value::Tuple(map) = &mut v {
            if let Some(Scalar::Number(x)) = map.get_mut("amount") {
                *x *= self.factor;
            }
        }
        v
    }
}

/// Raises every claimed amount by 50%.
pub fn inject_data_shift(generator: Box<dyn SourceGenerator>) -> Box<dyn SourceGenerator> {
    Box::new(ScaledAmount {
        inner: generator,
        factor: 1.5,
    })
}

pub fn stream(name: &str) -> StreamId {
    StreamId::new(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_is_sixtieth_percentile() {
        let t = ClaimsParams::default().split_threshold();
        assert!((t - 2449.7).abs() < 1.0, "{t}");
        let mut g = ClaimGenerator::new(ClaimsParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let below = (0..20_000)
            .filter(|&i| g.generate(i, &mut rng).field("amount").unwrap().as_number().unwrap() <= t)
            .count();
        assert!((below as f64 / 20_000.0 - 0.6).abs() < 0.015);
    }

    #[test]
    fn healthy_and_buggy_classifier() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let healthy = classify(false);
        let buggy = classify(true);
        let low = |s| vec![Some(claim(100.0, s)), None];
        let high = |s| vec![None, Some(claim(9000.0, s))];
        for s in 0..3 {
            let h = healthy(&low(s), 2, &mut rng);
            assert_eq!(h[1].is_some(), s == 2);
            assert!(buggy(&low(s), 2, &mut rng)[0].is_some());
            assert_eq!(healthy(&high(s), 2, &mut rng), buggy(&high(s), 2, &mut rng));
            assert_eq!(healthy(&high(s), 2, &mut rng)[0].is_some(), s == 0);
        }
    }

    #[test]
    fn shift_scales_amount_only() {
        let mut base = ClaimGenerator::new(ClaimsParams::default());
        let mut shifted = inject_data_shift(Box::new(base.clone()));
        let a = base.generate(0, &mut ChaCha8Rng::seed_from_u64(3));
        let b = shifted.generate(0, &mut ChaCha8Rng::seed_from_u64(3));
        let amount = |v: &Value| v.field("amount").unwrap().as_number().unwrap();
        assert!((amount(&b) - 1.5 * amount(&a)).abs() < 1e-9);
        assert_eq!(a.field("severity"), b.field("severity"));
    }
}
