use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::graph::StreamId;
use crate::stats::{Cell, CellCoder, Coder, Discretiser, FeatureEncoder};

/// Smoothed frequency table of a categorical outcome given discretised parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub coder: Coder,
    pub levels: usize,
    pub alpha: f64,
    #[serde(with = "keyed_rows")]
    pub counts: BTreeMap<u64, Vec<f64>>,
    /// Outcome counts over all rows, used for unseen configurations.
    pub marginal: Vec<f64>,
}

/// Integer map keys do not survive internally tagged enums in JSON, so the
/// table is stored as a list of `[key, counts]` pairs.
mod keyed_rows {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<u64, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u64, Vec<f64>>, D::Error> {
        Ok(Vec::<(u64, Vec<f64>)>::deserialize(d)?.into_iter().collect())
    }
}

impl ConditionalTable {
    pub fn fit(coder: Coder, rows: &[Vec<Cell>], labels: &[u32], levels: usize, alpha: f64) -> Self {
        let mut counts: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut marginal = vec![0.0; levels];
        for (row, &l) in rows.iter().zip(labels) {
            counts
                .entry(coder.key(row))
                .or_insert_with(|| vec![0.0; levels])[l as usize] += 1.0;
            marginal[l as usize] += 1.0;
        }
        ConditionalTable {
            coder,
            levels,
            alpha,
            counts,
            marginal,
        }
    }

    /// A table with exact probabilities over categorical parents. Each row
    /// pairs parent level indices with the outcome distribution.
    pub fn categorical(parent_levels: &[usize], levels: usize, rows: &[(Vec<u32>, Vec<f64>)]) -> Self {
        let coder = Coder {
            cells: parent_levels.iter().map(|&l| CellCoder::Categorical(l)).collect(),
        };
        let mut counts = BTreeMap::new();
        let mut marginal = vec![0.0; levels];
        for (parents, probs) in rows {
            let cells: Vec<Cell> = parents.iter().map(|&l| Cell::Level(l)).collect();
            counts.insert(coder.key(&cells), probs.clone());
            for (m, p) in marginal.iter_mut().zip(probs) {
                *m += p;
            }
        }
        ConditionalTable {
            coder,
            levels,
            alpha: 0.0,
            counts,
            marginal,
        }
    }

    fn normalise(&self, counts: &[f64]) -> Vec<f64> {
        let total: f64 = counts.iter().sum::<f64>() + self.alpha * self.levels as f64;
        if total <= 0.0 {
            return vec![1.0 / self.levels as f64; self.levels];
        }
        counts.iter().map(|c| (c + self.alpha) / total).collect()
    }

    pub fn probabilities(&self, row: &[Cell]) -> Vec<f64> {
        match self.counts.get(&self.coder.key(row)) {
            Some(c) => self.normalise(c),
            None => self.normalise(&self.marginal),
        }
    }
}

/// Inverse-CDF draw of a level index.
pub fn draw_level(probs: &[f64], u: f64) -> u32 {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
}

/// Quantile of a sorted sample at `u ∈ [0, 1)`.
pub fn sorted_quantile(sorted: &[f64], u: f64) -> f64 {
    let i = ((u * sorted.len() as f64) as usize).min(sorted.len() - 1);
    sorted[i]
}

/// Model of one field of a stream given the stream's parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FieldModel {
    /// Resampling of observed values (root numeric fields).
    Empirical { sorted: Vec<f64> },
    /// Normal marginal (root numeric fields with a density).
    Gaussian { mean: f64, sd: f64 },
    /// Linear regression on encoded parents plus resampled residuals.
    AdditiveNoise {
        encoder: FeatureEncoder,
        coefficients: Vec<f64>,
        /// Sorted.
        residuals: Vec<f64>,
        residual_variance: f64,
    },
    /// Categorical outcome table; roots use a table with no parents.
    Table(ConditionalTable),
    /// Pinned value from an atomic intervention.
    Fixed { cell: FixedCell },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedCell {
    Number(f64),
    Level(u32),
}

impl From<FixedCell> for Cell {
    fn from(c: FixedCell) -> Cell {
        match c {
            FixedCell::Number(x) => Cell::Num(x),
            FixedCell::Level(l) => Cell::Level(l),
        }
    }
}

impl FieldModel {
    pub fn family(&self) -> &'static str {
        match self {
            FieldModel::Empirical { .. } => "empirical",
            FieldModel::Gaussian { .. } => "gaussian",
            FieldModel::AdditiveNoise { .. } => "additive_noise",
            FieldModel::Table(_) => "table",
            FieldModel::Fixed { .. } => "fixed",
        }
    }

    /// Draws the field given parent cells and one uniform `u ∈ [0, 1)`.
    pub fn draw(&self, parents: &[Cell], u: f64, features: &mut Vec<f64>) -> Cell {
        match self {
            FieldModel::Empirical { sorted } => Cell::Num(sorted_quantile(sorted, u)),
            FieldModel::Gaussian { mean, sd } => {
                let z = Normal::standard().inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12));
                Cell::Num(mean + sd * z)
            }
            FieldModel::AdditiveNoise {
                encoder,
                coefficients,
                residuals,
                ..
            } => {
                features.clear();
                encoder.encode_into(parents, features);
                let fitted: f64 = coefficients.iter().zip(features.iter()).map(|(b, x)| b * x).sum();
                Cell::Num(fitted + sorted_quantile(residuals, u))
            }
            FieldModel::Table(t) => Cell::Level(draw_level(&t.probabilities(parents), u)),
            FieldModel::Fixed { cell } => (*cell).into(),
        }
    }

    /// Regression mean for additive-noise fields.
    pub fn predict(&self, parents: &[Cell]) -> Option<f64> {
        match self {
            FieldModel::AdditiveNoise {
                encoder,
                coefficients,
                ..
            } => Some(
                coefficients
                    .iter()
                    .zip(encoder.encode(parents))
                    .map(|(b, x)| b * x)
                    .sum(),
            ),
            _ => None,
        }
    }

    /// Conditional log density or mass; `None` when undefined for the family.
    pub fn log_density(&self, parents: &[Cell], value: Cell) -> Option<f64> {
        match (self, value) {
            (FieldModel::Gaussian { mean, sd }, Cell::Num(x)) => {
                Some(Normal::new(*mean, *sd).ok()?.ln_pdf(x))
            }
            (FieldModel::Table(t), Cell::Level(l)) => {
                let p = t.probabilities(parents).get(l as usize).copied().unwrap_or(0.0);
                Some(p.ln())
            }
            (FieldModel::Table(_), _) => Some(f64::NEG_INFINITY),
            (FieldModel::Fixed { cell: FixedCell::Level(a) }, Cell::Level(b)) => {
                Some(if *a == b { 0.0 } else { f64::NEG_INFINITY })
            }
            (FieldModel::Fixed { cell: FixedCell::Level(_) }, _) => Some(f64::NEG_INFINITY),
            _ => None,
        }
    }
}

/// When a stream emits a record for a correlation id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "presence", rename_all = "snake_case")]
pub enum Presence {
    /// Present whenever any parent is present (always for roots).
    Always,
    /// Present for every row, regardless of parents.
    Forced,
    /// Bernoulli presence (level 1 = present) given parents, among rows
    /// where any parent is present.
    Table { table: ConditionalTable },
}

/// Causal conditional of one stream given its parent streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub target: StreamId,
    pub parents: Vec<StreamId>,
    pub presence: Presence,
    pub fields: Vec<FieldModel>,
    /// Rows with the target present at fit time.
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    RootMarginal,
    AdditiveNoiseRegression,
    ConditionalTable,
    Mixed,
    Atomic,
}

impl Mechanism {
    pub fn kind(&self) -> MechanismKind {
        if self.fields.iter().all(|f| matches!(f, FieldModel::Fixed { .. })) {
            return MechanismKind::Atomic;
        }
        if self.parents.is_empty() {
            return MechanismKind::RootMarginal;
        }
        let regression = self.fields.iter().any(|f| matches!(f, FieldModel::AdditiveNoise { .. }));
        let table = self.fields.iter().any(|f| matches!(f, FieldModel::Table(_)));
        match (regression, table) {
            (true, false) => MechanismKind::AdditiveNoiseRegression,
            (false, true) => MechanismKind::ConditionalTable,
            _ => MechanismKind::Mixed,
        }
    }

    /// Probability that the stream emits, given parent cells and whether any
    /// parent stream is present.
    pub fn presence_probability(&self, parents: &[Cell], any_parent: bool) -> f64 {
        match &self.presence {
            Presence::Forced => 1.0,
            _ if !self.parents.is_empty() && !any_parent => 0.0,
            Presence::Always => 1.0,
            Presence::Table { table } => table.probabilities(parents).get(1).copied().unwrap_or(0.0),
        }
    }

    pub fn residual_variances(&self) -> Vec<Option<f64>> {
        self.fields
            .iter()
            .map(|f| match f {
                FieldModel::AdditiveNoise {
                    residual_variance, ..
                } => Some(*residual_variance),
                _ => None,
            })
            .collect()
    }
}

/// A table over a single numeric parent split at the given cut points.
pub fn threshold_table(edges: Vec<f64>, levels: usize, rows: Vec<Vec<f64>>) -> ConditionalTable {
    let coder = Coder {
        cells: vec![CellCoder::Numeric(Discretiser { edges })],
    };
    let mut counts = BTreeMap::new();
    let mut marginal = vec![0.0; levels];
    for (bin, probs) in rows.into_iter().enumerate() {
        for (m, p) in marginal.iter_mut().zip(&probs) {
            *m += p;
        }
        counts.insert(1 + bin as u64, probs);
    }
    ConditionalTable {
        coder,
        levels,
        alpha: 0.0,
        counts,
        marginal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_draws_follow_cdf() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(draw_level(&p, 0.0), 0);
        assert_eq!(draw_level(&p, 0.19), 0);
        assert_eq!(draw_level(&p, 0.2), 1);
        assert_eq!(draw_level(&p, 0.69), 1);
        assert_eq!(draw_level(&p, 0.7), 2);
        assert_eq!(draw_level(&p, 0.999_999_9), 2);
    }

    #[test]
    fn laplace_smoothing() {
        let coder = Coder { cells: vec![CellCoder::Categorical(2)] };
        let rows = vec![vec![Cell::Level(0)], vec![Cell::Level(0)], vec![Cell::Level(1)]];
        let t = ConditionalTable::fit(coder, &rows, &[1, 1, 0], 2, 1.0);
        assert_eq!(t.probabilities(&[Cell::Level(0)]), vec![0.25, 0.75]);
        assert_eq!(t.probabilities(&[Cell::Level(1)]), vec![2.0 / 3.0, 1.0 / 3.0]);
        // unseen configuration (absent parent) uses the smoothed marginal
        assert_eq!(t.probabilities(&[Cell::Absent]), vec![2.0 / 5.0, 3.0 / 5.0]);
    }

    #[test]
    fn fixed_density() {
        let f = FieldModel::Fixed { cell: FixedCell::Level(1) };
        assert_eq!(f.log_density(&[], Cell::Level(1)), Some(0.0));
        assert_eq!(f.log_density(&[], Cell::Level(0)), Some(f64::NEG_INFINITY));
        let g = FieldModel::Fixed { cell: FixedCell::Number(1.0) };
        assert_eq!(g.log_density(&[], Cell::Num(1.0)), None);
    }

    #[test]
    fn threshold_table_routes() {
        let t = threshold_table(vec![10.0], 2, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(t.probabilities(&[Cell::Num(3.0)]), vec![1.0, 0.0]);
        assert_eq!(t.probabilities(&[Cell::Num(30.0)]), vec![0.0, 1.0]);
    }
}
