use serde::Serialize;

use crate::graph::{ComponentId, StreamId};
use crate::scm::Frame;
use crate::stats::{conditional_shift_test, Cell, CellKind, ConditionalSample, Response, StatsError};

/// p-values below this are reported as this.
const P_FLOOR: f64 = 1e-300;

/// Change of the conditional law of one output stream given its component's inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    /// `None` for a source stream, whose marginal is tested.
    pub component: Option<ComponentId>,
    pub output: StreamId,
    /// `-log10(p)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Sub-tests run: presence first, then one per field.
    pub tests: Vec<String>,
}

fn sample(frame: &Frame, parents: &[StreamId], rows: &[usize], response: Response) -> ConditionalSample {
    ConditionalSample {
        covariates: frame.covariates(parents, rows),
        response,
    }
}

fn response(cells: &[Cell], kind: CellKind) -> Response {
    match kind {
        CellKind::Numeric => Response::Numeric(
            cells
                .iter()
                .map(|c| match c {
                    Cell::Num(x) => *x,
                    _ => f64::NAN,
                })
                .collect(),
        ),
        CellKind::Categorical(levels) => Response::Levels {
            levels,
            codes: cells
                .iter()
                .map(|c| match c {
                    Cell::Level(l) => *l,
                    _ => 0,
                })
                .collect(),
        },
    }
}

/// Tests `p(s | pa_s)` against `q(s | pa_s)`: presence on rows where some
/// parent is present, each field on rows where `output` is present.
/// Sub-test p-values are Bonferroni-combined.
pub fn deviation_between(
    component: Option<&ComponentId>,
    output: &StreamId,
    parents: &[StreamId],
    old: &Frame,
    new: &Frame,
    min_samples: usize,
) -> Result<Deviation, StatsError> {
    let (Some(col_old), Some(col_new)) = (old.column(output), new.column(output)) else {
        return Err(StatsError::InvalidArgument(format!("stream `{output}` missing from window")));
    };
    let elig_old = old.eligible_rows(parents);
    let elig_new = new.eligible_rows(parents);
    let present = |elig: &[usize], col: &crate::scm::frame::StreamColumn| -> Vec<usize> {
        elig.iter().copied().filter(|&r| col.present[r]).collect()
    };
    let pres_old = present(&elig_old, col_old);
    let pres_new = present(&elig_new, col_new);

    let mut p_values = Vec::new();
    let mut tests = Vec::new();
    let always = pres_old.len() == elig_old.len() && pres_new.len() == elig_new.len();
    if !always {
        let flags = |elig: &[usize], col: &crate::scm::frame::StreamColumn| Response::Levels {
            levels: 2,
            codes: elig.iter().map(|&r| u32::from(col.present[r])).collect(),
        };
        let t = conditional_shift_test(
            &sample(old, parents, &elig_old, flags(&elig_old, col_old)),
            &sample(new, parents, &elig_new, flags(&elig_new, col_new)),
            min_samples,
        )?;
        p_values.push(t.p_value);
        tests.push(format!("presence:{}", t.method));
    }
    for (k, field) in col_old.fields.iter().enumerate() {
        let cells = |rows: &[usize], col: &crate::scm::frame::StreamColumn| -> Vec<Cell> {
            rows.iter().map(|&r| col.fields[k].cells[r]).collect()
        };
        let t = conditional_shift_test(
            &sample(old, parents, &pres_old, response(&cells(&pres_old, col_old), field.kind)),
            &sample(new, parents, &pres_new, response(&cells(&pres_new, col_new), field.kind)),
            min_samples,
        )?;
        p_values.push(t.p_value);
        tests.push(format!("{}:{}", col_old.schema.fields()[k].name, t.method));
    }
    let m = p_values.len().max(1) as f64;
    let p = p_values
        .iter()
        .fold(1.0f64, |acc, &p| acc.min(p * m))
        .clamp(P_FLOOR, 1.0);
    Ok(Deviation {
        component: component.cloned(),
        output: output.clone(),
        statistic: 0.0 - p.log10(),
        p_value: p,
        tests,
    })
}
