use std::collections::BTreeMap;
use std::sync::Arc;

use crate::graph::{CausalGraph, StreamId, ValidatedGraph};
use crate::log::StreamLog;
use crate::stats::{least_squares, Cell, CellKind, Coder, Covariate, FeatureEncoder};
use crate::value::StreamSchema;

use super::frame::Frame;
use super::mechanism::{ConditionalTable, FieldModel, Mechanism, Presence};
use super::{Scm, ScmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RootFamily {
    #[default]
    Empirical,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub min_samples: usize,
    /// Laplace pseudo-count for tables.
    pub alpha: f64,
    pub root_numeric: RootFamily,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            min_samples: 50,
            alpha: 1.0,
            root_numeric: RootFamily::Empirical,
        }
    }
}

/// Fits one mechanism per stream of `graph` from the joined records of `log`.
pub fn fit(graph: &ValidatedGraph, log: &StreamLog, config: &FitConfig) -> Result<Scm, ScmError> {
    let schemas: BTreeMap<StreamId, StreamSchema> = graph
        .graph()
        .streams
        .iter()
        .map(|s| (s.id.clone(), s.schema.clone()))
        .collect();
    let frame = Frame::from_log(log, &schemas);
    fit_frame(graph.causal_graph(), &schemas, &frame, config)
}

pub fn fit_frame(
    causal: &CausalGraph,
    schemas: &BTreeMap<StreamId, StreamSchema>,
    frame: &Frame,
    config: &FitConfig,
) -> Result<Scm, ScmError> {
    let mut mechanisms = BTreeMap::new();
    for v in &causal.variables {
        let parents = causal.parents(v).map_err(|_| ScmError::UnknownVariable(v.clone()))?;
        let m = fit_mechanism(v, parents, frame, config)?;
        mechanisms.insert(v.clone(), Arc::new(m));
    }
    Ok(Scm {
        causal: causal.clone(),
        schemas: causal
            .variables
            .iter()
            .map(|v| (v.clone(), schemas[v].clone()))
            .collect(),
        mechanisms,
        noise_independent: true,
    })
}

pub(crate) fn rows_of(covariates: &[Covariate], n: usize) -> Vec<Vec<Cell>> {
    (0..n)
        .map(|r| covariates.iter().map(|c| c.cells[r]).collect())
        .collect()
}

fn level_codes(cells: &[Cell]) -> Vec<u32> {
    cells
        .iter()
        .map(|c| match c {
            Cell::Level(l) => *l,
            _ => 0,
        })
        .collect()
}

pub fn fit_mechanism(
    target: &StreamId,
    parents: &[StreamId],
    frame: &Frame,
    config: &FitConfig,
) -> Result<Mechanism, ScmError> {
    let col = frame
        .column(target)
        .ok_or_else(|| ScmError::UnknownVariable(target.clone()))?;
    let eligible = frame.eligible_rows(parents);
    let present: Vec<usize> = eligible.iter().copied().filter(|&r| col.present[r]).collect();
    if present.len() < config.min_samples {
        return Err(ScmError::InsufficientData {
            stream: target.clone(),
            have: present.len(),
            need: config.min_samples,
        });
    }

    let presence = if present.len() == eligible.len() {
        Presence::Always
    } else {
        let covs = frame.covariates(parents, &eligible);
        let labels: Vec<u32> = eligible.iter().map(|&r| u32::from(col.present[r])).collect();
        let coder = Coder::fit(&covs, &labels, 2)?;
        let rows = rows_of(&covs, eligible.len());
        Presence::Table {
            table: ConditionalTable::fit(coder, &rows, &labels, 2, config.alpha),
        }
    };

    let covs = frame.covariates(parents, &present);
    let rows = rows_of(&covs, present.len());
    let mut fields = Vec::with_capacity(col.fields.len());
    for field in &col.fields {
        let y: Vec<Cell> = present.iter().map(|&r| field.cells[r]).collect();
        fields.push(match field.kind {
            CellKind::Numeric => {
                let ys: Vec<f64> = y
                    .iter()
                    .map(|c| match c {
                        Cell::Num(x) => *x,
                        _ => 0.0,
                    })
                    .collect();
                numeric_field(&covs, ys, config)?
            }
            CellKind::Categorical(levels) => {
                let labels = level_codes(&y);
                let coder = Coder::fit(&covs, &labels, levels)?;
                FieldModel::Table(ConditionalTable::fit(coder, &rows, &labels, levels, config.alpha))
            }
        });
    }
    Ok(Mechanism {
        target: target.clone(),
        parents: parents.to_vec(),
        presence,
        fields,
        samples: present.len(),
    })
}

fn numeric_field(covs: &[Covariate], mut ys: Vec<f64>, config: &FitConfig) -> Result<FieldModel, ScmError> {
    if covs.is_empty() {
        return Ok(match config.root_numeric {
            RootFamily::Empirical => {
                ys.sort_by(f64::total_cmp);
                FieldModel::Empirical { sorted: ys }
            }
            RootFamily::Gaussian => {
                let n = ys.len() as f64;
                let mean = ys.iter().sum::<f64>() / n;
                let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                FieldModel::Gaussian {
                    mean,
                    sd: var.sqrt().max(f64::MIN_POSITIVE),
                }
            }
        });
    }
    let encoder = FeatureEncoder::fit(covs);
    let design = encoder.design(covs, ys.len());
    let ls = least_squares(&design, encoder.width(), &ys)?;
    let dof = ys.len().saturating_sub(ls.rank).max(1);
    let mut residuals = ls.residuals;
    residuals.sort_by(f64::total_cmp);
    Ok(FieldModel::AdditiveNoise {
        encoder,
        coefficients: ls.coefficients,
        residuals,
        residual_variance: ls.rss / dof as f64,
    })
}
