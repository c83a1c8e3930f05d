use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::StreamId;
use crate::runtime::derive_seed;
use crate::stats::Cell;
use crate::value::StreamSchema;

use super::frame::{Frame, StreamColumn};
use super::mechanism::Mechanism;

/// Offset separating sampling seeds from runtime seeds.
const SAMPLING_DOMAIN: u64 = 1 << 32;

/// Ancestral sampling of `n` rows. `variables` must be topologically ordered;
/// variable `k` draws its noise from sub-streams derived from `(seed, k)`,
/// one uniform per part (presence, then each field) per row, so swapping a
/// mechanism leaves every other variable's noise unchanged.
pub fn sample_mechanisms(
    variables: &[StreamId],
    schemas: &BTreeMap<StreamId, StreamSchema>,
    mechanisms: &[&Mechanism],
    n: usize,
    seed: u64,
) -> Frame {
    let mut columns: BTreeMap<StreamId, StreamColumn> = BTreeMap::new();
    let mut parent_cells: Vec<Cell> = Vec::new();
    let mut features: Vec<f64> = Vec::new();
    for (k, (v, m)) in variables.iter().zip(mechanisms).enumerate() {
        let schema = &schemas[v];
        let mut col = StreamColumn::empty(schema, n);
        let mut rngs: Vec<ChaCha8Rng> = (0..=m.fields.len() as u64)
            .map(|part| ChaCha8Rng::seed_from_u64(derive_seed(seed, SAMPLING_DOMAIN + k as u64, part)))
            .collect();
        let parents: Vec<&StreamColumn> = m.parents.iter().map(|p| &columns[p]).collect();
        for r in 0..n {
            parent_cells.clear();
            let mut any_parent = false;
            for p in &parents {
                any_parent |= p.present[r];
                parent_cells.extend(p.fields.iter().map(|f| f.cells[r]));
            }
            let (presence_rng, field_rngs) = rngs.split_first_mut().expect("presence stream");
            let u: f64 = presence_rng.random();
            let draws: Vec<f64> = field_rngs.iter_mut().map(|g| g.random()).collect();
            if u >= m.presence_probability(&parent_cells, any_parent) {
                continue;
            }
            col.present[r] = true;
            for ((field, model), u) in col.fields.iter_mut().zip(&m.fields).zip(draws) {
                field.cells[r] = model.draw(&parent_cells, u, &mut features);
            }
        }
        columns.insert(v.clone(), col);
    }
    Frame {
        ids: (0..n as u64).collect(),
        columns,
    }
}
