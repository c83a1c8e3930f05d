//! Statistical primitives used by attribution.

mod conditional;
mod discretise;
mod hypothesis;
mod kl;
mod regression;
mod shapley;

pub use conditional::{conditional_shift_test, ConditionalSample, Response, ShiftTest};
pub use discretise::{fit_bins, CellCoder, Coder, Discretiser};
pub use hypothesis::{
    binomial_excess_test, chi_square_sf, confidence_interval, ks_two_sample, mean, variance,
    welch_t_test, KsResult, WelchResult,
};
pub use kl::{kl_divergence, KlEstimate, KlEstimator};
pub use regression::{least_squares, FeatureEncoder, LeastSquares};
pub use shapley::{
    shapley, shapley_values, Coalition, ShapleyMode, ShapleyProblem, DEFAULT_PERMUTATIONS,
    MAX_EXACT_PLAYERS,
};

/// One observed cell of a covariate: missing, a number, or a level index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Absent,
    Num(f64),
    Level(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Numeric,
    Categorical(usize),
}

/// A column of cells with a shared kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub kind: CellKind,
    pub cells: Vec<Cell>,
}

/// Draws used by the estimators: numeric values or level codes, optionally weighted.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub values: SampleValues,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleValues {
    Numeric(Vec<f64>),
    Levels { levels: usize, codes: Vec<u32> },
}

impl SampleSet {
    pub fn numeric(values: Vec<f64>) -> Self {
        SampleSet {
            values: SampleValues::Numeric(values),
            weights: None,
        }
    }

    pub fn levels(levels: usize, codes: Vec<u32>) -> Self {
        SampleSet {
            values: SampleValues::Levels { levels, codes },
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, StatsError> {
        if weights.len() != self.len() {
            return Err(StatsError::BadWeights("length differs from values".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(StatsError::BadWeights("weights must be finite and non-negative".into()));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(StatsError::BadWeights("weights sum to zero".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        match &self.values {
            SampleValues::Numeric(v) => v.len(),
            SampleValues::Levels { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match &self.values {
            SampleValues::Numeric(v) => Some(v),
            SampleValues::Levels { .. } => None,
        }
    }

    /// Weights normalised to sum to the sample size (all ones when unweighted).
    pub(crate) fn normalised_weights(&self) -> Vec<f64> {
        match &self.weights {
            None => vec![1.0; self.len()],
            Some(w) => {
                let total: f64 = w.iter().sum();
                let n = self.len() as f64;
                w.iter().map(|x| x * n / total).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("samples have different value kinds")]
    KindMismatch,
    #[error("q assigns zero mass to a level p observes (level {level})")]
    AbsoluteContinuityViolation { level: u32 },
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("insufficient data: have {have}, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("exact Shapley values need at most {max} players, got {players}")]
    TooManyPlayersForExact { players: usize, max: usize },
    #[error("invalid weights: {0}")]
    BadWeights(String),
    #[error("{0} does not support weighted samples")]
    WeightsUnsupported(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
