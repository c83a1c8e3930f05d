use std::collections::{BTreeMap, BTreeSet};

use crate::graph::StreamId;
use crate::log::{CorrelationId, Record, StreamLog};
use crate::stats::{Cell, CellKind, Covariate};
use crate::value::{Scalar, ScalarSchema, StreamSchema};

/// Presence flags and per-field cells of one stream, indexed by row.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamColumn {
    pub schema: StreamSchema,
    pub present: Vec<bool>,
    pub fields: Vec<Covariate>,
}

impl StreamColumn {
    pub fn empty(schema: &StreamSchema, rows: usize) -> Self {
        StreamColumn {
            schema: schema.clone(),
            present: vec![false; rows],
            fields: schema
                .fields()
                .iter()
                .map(|f| Covariate {
                    kind: cell_kind(&f.kind),
                    cells: vec![Cell::Absent; rows],
                })
                .collect(),
        }
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Field values on rows where the stream is present.
    pub fn present_cells(&self, field: usize) -> Vec<Cell> {
        self.fields[field]
            .cells
            .iter()
            .zip(&self.present)
            .filter(|(_, &p)| p)
            .map(|(c, _)| *c)
            .collect()
    }
}

pub fn cell_kind(schema: &ScalarSchema) -> CellKind {
    match schema {
        ScalarSchema::Numeric => CellKind::Numeric,
        ScalarSchema::Categorical(levels) => CellKind::Categorical(levels.len()),
    }
}

pub fn scalar_to_cell(schema: &ScalarSchema, scalar: &Scalar) -> Cell {
    match (schema, scalar) {
        (ScalarSchema::Numeric, Scalar::Number(x)) => Cell::Num(*x),
        (ScalarSchema::Categorical(levels), Scalar::Level(l)) => levels
            .iter()
            .position(|x| x == l)
            .map_or(Cell::Absent, |i| Cell::Level(i as u32)),
        _ => Cell::Absent,
    }
}

pub fn cell_to_scalar(schema: &ScalarSchema, cell: Cell) -> Option<Scalar> {
    match (schema, cell) {
        (ScalarSchema::Numeric, Cell::Num(x)) => Some(Scalar::Number(x)),
        (ScalarSchema::Categorical(levels), Cell::Level(i)) => {
            levels.get(i as usize).map(|l| Scalar::Level(l.clone()))
        }
        _ => None,
    }
}

/// Row-aligned view of several streams joined on correlation id.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub ids: Vec<CorrelationId>,
    pub columns: BTreeMap<StreamId, StreamColumn>,
}

impl Frame {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn column(&self, stream: &StreamId) -> Option<&StreamColumn> {
        self.columns.get(stream)
    }

    /// Joins the listed streams of `log` on correlation id.
    pub fn from_log(log: &StreamLog, schemas: &BTreeMap<StreamId, StreamSchema>) -> Frame {
        let ids: BTreeSet<CorrelationId> = schemas
            .keys()
            .flat_map(|s| log.records(s).iter().map(|r| r.correlation_id))
            .collect();
        let ids: Vec<CorrelationId> = ids.into_iter().collect();
        let row: BTreeMap<CorrelationId, usize> =
            ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let columns = schemas
            .iter()
            .map(|(s, schema)| {
                let mut col = StreamColumn::empty(schema, ids.len());
                let fields = schema.fields();
                for r in log.records(s) {
                    let i = row[&r.correlation_id];
                    col.present[i] = true;
                    for (k, scalar) in schema.split(&r.value).iter().enumerate() {
                        col.fields[k].cells[i] = scalar_to_cell(&fields[k].kind, scalar);
                    }
                }
                (s.clone(), col)
            })
            .collect();
        Frame { ids, columns }
    }

    /// Converts back into a log; `t` equals the correlation id.
    pub fn to_log(&self, label: &str) -> StreamLog {
        let mut log = StreamLog::new(label);
        for (s, col) in &self.columns {
            let fields = col.schema.fields();
            let records = (0..self.rows())
                .filter(|&i| col.present[i])
                .filter_map(|i| {
                    let scalars: Option<Vec<Scalar>> = fields
                        .iter()
                        .zip(&col.fields)
                        .map(|(f, c)| cell_to_scalar(&f.kind, c.cells[i]))
                        .collect();
                    scalars.map(|sc| Record {
                        correlation_id: self.ids[i],
                        t: self.ids[i],
                        value: col.schema.assemble(sc),
                    })
                })
                .collect();
            log.streams.insert(s.clone(), records);
        }
        log.refresh_meta();
        log
    }

    /// Rows of `self` followed by rows of `other`, renumbered `0..`.
    /// Both frames must hold the same streams.
    pub fn stack(&self, other: &Frame) -> Frame {
        let columns = self
            .columns
            .iter()
            .map(|(s, a)| {
                let b = &other.columns[s];
                let col = StreamColumn {
                    schema: a.schema.clone(),
                    present: a.present.iter().chain(&b.present).copied().collect(),
                    fields: a
                        .fields
                        .iter()
                        .zip(&b.fields)
                        .map(|(x, y)| Covariate {
                            kind: x.kind,
                            cells: x.cells.iter().chain(&y.cells).copied().collect(),
                        })
                        .collect(),
                };
                (s.clone(), col)
            })
            .collect();
        Frame {
            ids: (0..(self.rows() + other.rows()) as u64).collect(),
            columns,
        }
    }

    /// Field covariates of `streams`, concatenated, restricted to `rows`.
    pub fn covariates(&self, streams: &[StreamId], rows: &[usize]) -> Vec<Covariate> {
        streams
            .iter()
            .flat_map(|s| self.columns[s].fields.iter())
            .map(|c| Covariate {
                kind: c.kind,
                cells: rows.iter().map(|&r| c.cells[r]).collect(),
            })
            .collect()
    }

    /// Rows where any of `streams` is present (all rows when `streams` is empty).
    pub fn eligible_rows(&self, streams: &[StreamId]) -> Vec<usize> {
        (0..self.rows())
            .filter(|&r| streams.is_empty() || streams.iter().any(|s| self.columns[s].present[r]))
            .collect()
    }
}
