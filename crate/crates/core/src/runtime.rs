//! Deterministic single-pass executor for validated dataflow graphs.
//!
//! Source record `i` gets correlation id `i` and timestamp `i`; it is pushed
//! through every component in topological order before record `i + 1`
//! enters. Every stream is tapped into the resulting [`StreamLog`].

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{ComponentId, StreamId, ValidatedGraph};
use crate::log::{CorrelationId, Record, StreamLog};
use crate::value::Value;

/// A component's behaviour. Given one bundle of inputs (one optional value
/// per input port, joined on correlation id) it returns exactly `outputs`
/// slots, at most one value per output port. Output must depend only on the
/// inputs and `rng`.
pub trait Transform: Send + Sync {
    fn apply(
        &self,
        inputs: &[Option<Value>],
        outputs: usize,
        rng: &mut dyn RngCore,
    ) -> Vec<Option<Value>>;
}

impl<F> Transform for F
where
    F: Fn(&[Option<Value>], usize, &mut dyn RngCore) -> Vec<Option<Value>> + Send + Sync,
{
    fn apply(
        &self,
        inputs: &[Option<Value>],
        outputs: usize,
        rng: &mut dyn RngCore,
    ) -> Vec<Option<Value>> {
        self(inputs, outputs, rng)
    }
}

/// Produces the value of source record `index`.
pub trait SourceGenerator: Send {
    fn generate(&mut self, index: u64, rng: &mut dyn RngCore) -> Value;
}

impl<F> SourceGenerator for F
where
    F: FnMut(u64, &mut dyn RngCore) -> Value + Send,
{
    fn generate(&mut self, index: u64, rng: &mut dyn RngCore) -> Value {
        self(index, rng)
    }
}

/// Transforms registered by name; graph specs refer to them through `kind`.
#[derive(Clone, Default)]
pub struct TransformRegistry {
    transforms: BTreeMap<String, Arc<dyn Transform>>,
}

impl TransformRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the generic transforms below.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register("identity", identity_transform);
        r.register("sum", sum_transform);
        r
    }

    pub fn register(&mut self, kind: impl Into<String>, t: impl Transform + 'static) {
        self.transforms.insert(kind.into(), Arc::new(t));
    }

    pub fn get(&self, kind: &str) -> Option<Arc<dyn Transform>> {
        self.transforms.get(kind).cloned()
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.transforms.keys().map(String::as_str)
    }
}

/// Forwards the first present input to every output port.
fn identity_transform(
    inputs: &[Option<Value>],
    outputs: usize,
    _: &mut dyn RngCore,
) -> Vec<Option<Value>> {
    vec![inputs.iter().flatten().next().cloned(); outputs]
}

/// Sums the present numeric inputs onto every output port.
fn sum_transform(inputs: &[Option<Value>], outputs: usize, _: &mut dyn RngCore) -> Vec<Option<Value>> {
    let total = inputs.iter().flatten().filter_map(Value::as_number).sum();
    vec![Some(Value::Number(total)); outputs]
}

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("no generator for source stream `{0}`")]
    MissingSource(StreamId),
    #[error("`{0}` is not a source stream")]
    NotASource(StreamId),
    #[error("component `{component}` refers to unregistered transform `{kind}`")]
    UnknownTransform { component: ComponentId, kind: String },
    #[error("record {correlation_id} on stream `{stream}` violates its schema: {reason}")]
    SchemaViolation {
        stream: StreamId,
        correlation_id: CorrelationId,
        reason: String,
    },
    #[error("component `{component}` emitted {got} outputs for {expected} ports")]
    OutputArity {
        component: ComponentId,
        expected: usize,
        got: usize,
    },
    #[error("record count must be at least 1")]
    EmptyRun,
}

struct Stage {
    id: ComponentId,
    transform: Arc<dyn Transform>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    rng: ChaCha8Rng,
}

/// Splits a master seed into independent, reproducible sub-seeds.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Executes `graph` over `n` source records.
pub fn run(
    graph: &ValidatedGraph,
    registry: &TransformRegistry,
    mut sources: BTreeMap<StreamId, Box<dyn SourceGenerator>>,
    n: u64,
    seed: u64,
    label: &str,
) -> Result<StreamLog, RuntimeError> {
    if n == 0 {
        return Err(RuntimeError::EmptyRun);
    }
    for s in sources.keys() {
        if !graph.sources().contains(s) {
            return Err(RuntimeError::NotASource(s.clone()));
        }
    }
    let streams: Vec<StreamId> = graph
        .graph()
        .streams
        .iter()
        .map(|s| s.id.clone())
        .collect();
    let slot = |s: &StreamId| streams.iter().position(|x| x == s).expect("validated");

    let mut source_slots = Vec::new();
    for (i, s) in graph.sources().iter().enumerate() {
        let generator = sources
            .remove(s)
            .ok_or_else(|| RuntimeError::MissingSource(s.clone()))?;
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, i as u64));
        source_slots.push((slot(s), generator, rng));
    }

    let mut stages = Vec::new();
    for (i, id) in graph.component_order().iter().enumerate() {
        let spec = graph.component(id).expect("ordered components exist");
        let transform = registry
            .get(&spec.kind)
            .ok_or_else(|| RuntimeError::UnknownTransform {
                component: id.clone(),
                kind: spec.kind.clone(),
            })?;
        stages.push(Stage {
            id: id.clone(),
            transform,
            inputs: spec.inputs.values().map(slot).collect(),
            outputs: spec.outputs.values().map(slot).collect(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, i as u64)),
        });
    }

    let schemas: Vec<_> = graph
        .graph()
        .streams
        .iter()
        .map(|s| s.schema.clone())
        .collect();
    let mut logged: Vec<Vec<Record>> = vec![Vec::new(); streams.len()];
    let mut current: Vec<Option<Value>> = vec![None; streams.len()];

    for index in 0..n {
        current.iter_mut().for_each(|v| *v = None);
        for (s, generator, rng) in source_slots.iter_mut() {
            let value = generator.generate(index, rng);
            emit(&streams, &schemas, &mut logged, &mut current, *s, index, value)?;
        }
        for stage in stages.iter_mut() {
            let bundle: Vec<Option<Value>> =
                stage.inputs.iter().map(|&s| current[s].clone()).collect();
            if bundle.iter().all(Option::is_none) {
                continue;
            }
            let out = stage
                .transform
                .apply(&bundle, stage.outputs.len(), &mut stage.rng);
            if out.len() != stage.outputs.len() {
                return Err(RuntimeError::OutputArity {
                    component: stage.id.clone(),
                    expected: stage.outputs.len(),
                    got: out.len(),
                });
            }
            for (&s, value) in stage.outputs.iter().zip(out) {
                if let Some(value) = value {
                    emit(&streams, &schemas, &mut logged, &mut current, s, index, value)?;
                }
            }
        }
    }

    let mut log = StreamLog::new(label);
    log.streams = streams.into_iter().zip(logged).collect();
    log.refresh_meta();
    Ok(log)
}

fn emit(
    streams: &[StreamId],
    schemas: &[crate::value::StreamSchema],
    logged: &mut [Vec<Record>],
    current: &mut [Option<Value>],
    slot: usize,
    index: u64,
    value: Value,
) -> Result<(), RuntimeError> {
    schemas[slot]
        .check(&value)
        .map_err(|reason| RuntimeError::SchemaViolation {
            stream: streams[slot].clone(),
            correlation_id: index,
            reason,
        })?;
    logged[slot].push(Record {
        correlation_id: index,
        t: index,
        value: value.clone(),
    });
    current[slot] = Some(value);
    Ok(())
}
