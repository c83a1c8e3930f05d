use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Cell, CellKind, Covariate, StatsError};

/// Maps a row of covariate cells to a real feature vector.
///
/// Layout: intercept, then per covariate a presence indicator followed by
/// either the number divided by its spread or a one-hot block for levels
/// `1..L`. Numbers are not centred, so an absent covariate (all zeros) adds
/// nothing beyond its indicator coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub kinds: Vec<CellKind>,
    pub scale: Vec<f64>,
}

impl FeatureEncoder {
    pub fn fit(covariates: &[Covariate]) -> Self {
        let mut scale = Vec::with_capacity(covariates.len());
        for c in covariates {
            let xs: Vec<f64> = c
                .cells
                .iter()
                .filter_map(|cell| match cell {
                    Cell::Num(x) => Some(*x),
                    _ => None,
                })
                .collect();
            if xs.is_empty() {
                scale.push(1.0);
                continue;
            }
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            scale.push(if sd > 0.0 { sd } else { 1.0 });
        }
        FeatureEncoder {
            kinds: covariates.iter().map(|c| c.kind).collect(),
            scale,
        }
    }

    pub fn width(&self) -> usize {
        1 + self
            .kinds
            .iter()
            .map(|k| match k {
                CellKind::Numeric => 2,
                CellKind::Categorical(levels) => 1 + levels.saturating_sub(1),
            })
            .sum::<usize>()
    }

    pub fn encode_into(&self, cells: &[Cell], out: &mut Vec<f64>) {
        out.push(1.0);
        for (i, (kind, cell)) in self.kinds.iter().zip(cells).enumerate() {
            match (kind, cell) {
                (CellKind::Numeric, Cell::Num(x)) => {
                    out.push(1.0);
                    out.push(x / self.scale[i]);
                }
                (CellKind::Categorical(levels), Cell::Level(l)) => {
                    out.push(1.0);
                    for k in 1..*levels {
                        out.push(if *l as usize == k { 1.0 } else { 0.0 });
                    }
                }
                (CellKind::Numeric, _) => out.extend([0.0, 0.0]),
                (CellKind::Categorical(levels), _) => {
                    out.extend(std::iter::repeat_n(0.0, *levels));
                }
            }
        }
    }

    pub fn encode(&self, cells: &[Cell]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        self.encode_into(cells, &mut out);
        out
    }

    /// Row-major design matrix for all rows of `covariates`.
    pub fn design(&self, covariates: &[Covariate], rows: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * self.width());
        let mut cells = Vec::with_capacity(covariates.len());
        for r in 0..rows {
            cells.clear();
            cells.extend(covariates.iter().map(|c| c.cells[r]));
            self.encode_into(&cells, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rank: usize,
    pub rss: f64,
}

impl LeastSquares {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.coefficients.iter().zip(features).map(|(b, x)| b * x).sum()
    }
}

/// Minimum-norm least squares through the eigendecomposition of the Gram
/// matrix; rank-deficient designs are allowed.
pub fn least_squares(design: &[f64], cols: usize, y: &[f64]) -> Result<LeastSquares, StatsError> {
    let rows = y.len();
    if rows == 0 {
        return Err(StatsError::EmptySample);
    }
    if cols == 0 || design.len() != rows * cols {
        return Err(StatsError::InvalidArgument(format!(
            "design has {} entries, expected {rows}x{cols}",
            design.len()
        )));
    }
    let x = DMatrix::from_row_slice(rows, cols, design);
    let b = DVector::from_column_slice(y);
    let gram = x.tr_mul(&x);
    let xty = x.tr_mul(&b);
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l));
    let tol = lmax * 1e-12;
    let mut beta = DVector::zeros(cols);
    let mut rank = 0;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > tol {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            beta += v * (v.dot(&xty) / l);
        }
    }
    let residuals: Vec<f64> = (&b - &x * &beta).iter().copied().collect();
    let rss = residuals.iter().map(|r| r * r).sum();
    Ok(LeastSquares {
        coefficients: beta.iter().copied().collect(),
        residuals,
        rank,
        rss,
    })
}
