//! Dataflow graph model: components with named ports wired by streams.
//!
//! A validated graph is complete: every stream has at most one producer and
//! there are no hidden inputs. That makes the derived [`CausalGraph`], whose
//! variables are the streams and whose parent sets are the producer's input
//! streams, a faithful causal graph of the running system.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::value::StreamSchema;

macro_rules! identifier {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            /// Panics on an empty identifier; use `TryFrom` for untrusted input.
            pub fn new(id: impl Into<String>) -> Self {
                Self::try_from(id.into()).expect("identifier must be non-empty")
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = String;

            fn try_from(s: String) -> Result<Self, Self::Error> {
                if s.trim().is_empty() {
                    Err(format!("{} must be a non-empty string", stringify!($name)))
                } else {
                    Ok(Self(s))
                }
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.pad(&self.0)
            }
        }
    };
}

identifier!(
    /// Identifier of a data stream, unique graph-wide.
    StreamId
);
identifier!(
    /// Identifier of a computational node.
    ComponentId
);
identifier!(
    /// Name of a port on a component.
    PortName
);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamDecl {
    pub id: StreamId,
    pub schema: StreamSchema,
    /// Marks a stream that is allowed to have no consumer.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: ComponentId,
    /// Name of the registered transform implementing this component.
    pub kind: String,
    #[serde(default)]
    pub inputs: IndexMap<PortName, StreamId>,
    pub outputs: IndexMap<PortName, StreamId>,
}

/// Declarative graph description, as stored in a graph spec file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowGraph {
    pub streams: Vec<StreamDecl>,
    pub components: Vec<ComponentSpec>,
    pub sources: Vec<StreamId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphViolation {
    #[error("cycle detected: {}", path.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" -> "))]
    CycleDetected { path: Vec<StreamId> },
    #[error("stream `{0}` has more than one producer")]
    MultipleProducers(StreamId),
    #[error("port `{port}` of component `{component}` reads a stream that is neither produced nor a source")]
    DanglingPort { component: ComponentId, port: PortName },
    #[error("unknown stream `{0}`")]
    UnknownStream(StreamId),
    #[error("stream `{0}` declared more than once")]
    DuplicateStream(StreamId),
    #[error("component `{0}` declared more than once")]
    DuplicateComponent(ComponentId),
    #[error("component `{component}` uses port name `{port}` more than once")]
    DuplicatePort { component: ComponentId, port: PortName },
    #[error("component `{0}` has no output ports")]
    NoOutputPorts(ComponentId),
    #[error("component `{0}` has no input ports")]
    NoInputPorts(ComponentId),
    #[error("source stream `{0}` is produced by a component")]
    SourceHasProducer(StreamId),
    #[error("stream `{0}` is not referenced by any port and not marked terminal")]
    UnreferencedStream(StreamId),
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("graph is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<GraphViolation>),
    #[error("unknown stream `{0}`")]
    UnknownStream(StreamId),
    #[error("unknown component `{0}`")]
    NodeNotFound(ComponentId),
    #[error("graph spec file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("graph spec file: {0}")]
    Io(#[from] std::io::Error),
}

impl DataflowGraph {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialises")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn component(&self, id: &ComponentId) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| &c.id == id)
    }

    pub fn stream(&self, id: &StreamId) -> Option<&StreamDecl> {
        self.streams.iter().find(|s| &s.id == id)
    }
}

/// A graph that passed [`validate`], with precomputed wiring indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedGraph {
    graph: DataflowGraph,
    producers: BTreeMap<StreamId, ComponentId>,
    /// Components in deterministic topological order.
    component_order: Vec<ComponentId>,
    causal: CausalGraph,
}

/// Checks every structural invariant and collects all violations.
pub fn validate(graph: DataflowGraph) -> Result<ValidatedGraph, GraphError> {
    let mut violations = Vec::new();

    let mut declared = BTreeSet::new();
    for s in &graph.streams {
        if !declared.insert(s.id.clone()) {
            violations.push(GraphViolation::DuplicateStream(s.id.clone()));
        }
    }

    let mut component_ids = BTreeSet::new();
    let mut producers: BTreeMap<StreamId, ComponentId> = BTreeMap::new();
    let mut consumed = BTreeSet::new();
    for c in &graph.components {
        if !component_ids.insert(c.id.clone()) {
            violations.push(GraphViolation::DuplicateComponent(c.id.clone()));
        }
        if c.outputs.is_empty() {
            violations.push(GraphViolation::NoOutputPorts(c.id.clone()));
        }
        if c.inputs.is_empty() {
            violations.push(GraphViolation::NoInputPorts(c.id.clone()));
        }
        for port in c.inputs.keys() {
            if c.outputs.contains_key(port) {
                violations.push(GraphViolation::DuplicatePort {
                    component: c.id.clone(),
                    port: port.clone(),
                });
            }
        }
        for stream in c.inputs.values().chain(c.outputs.values()) {
            if !declared.contains(stream) {
                violations.push(GraphViolation::UnknownStream(stream.clone()));
            }
        }
        consumed.extend(c.inputs.values().cloned());
        let mut own_outputs = BTreeSet::new();
        for stream in c.outputs.values() {
            let repeated_here = !own_outputs.insert(stream.clone());
            if repeated_here || producers.insert(stream.clone(), c.id.clone()).is_some() {
                violations.push(GraphViolation::MultipleProducers(stream.clone()));
            }
        }
    }

    let sources: BTreeSet<StreamId> = graph.sources.iter().cloned().collect();
    for s in &graph.sources {
        if !declared.contains(s) {
            violations.push(GraphViolation::UnknownStream(s.clone()));
        }
        if producers.contains_key(s) {
            violations.push(GraphViolation::SourceHasProducer(s.clone()));
        }
    }

    for c in &graph.components {
        for (port, stream) in &c.inputs {
            if declared.contains(stream)
                && !producers.contains_key(stream)
                && !sources.contains(stream)
            {
                violations.push(GraphViolation::DanglingPort {
                    component: c.id.clone(),
                    port: port.clone(),
                });
            }
        }
    }

    for s in &graph.streams {
        let referenced =
            consumed.contains(&s.id) || producers.contains_key(&s.id) || sources.contains(&s.id);
        if !referenced && !s.terminal {
            violations.push(GraphViolation::UnreferencedStream(s.id.clone()));
        }
    }

    violations.dedup();
    if !violations.is_empty() {
        return Err(GraphError::Invalid(violations));
    }

    let parents = stream_parents(&graph, &producers);
    let stream_order = match topological_order(&declared, &parents) {
        Ok(order) => order,
        Err(path) => {
            return Err(GraphError::Invalid(vec![GraphViolation::CycleDetected {
                path,
            }]))
        }
    };

    let mut component_order = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &stream_order {
        if let Some(c) = producers.get(s) {
            if seen.insert(c.clone()) {
                component_order.push(c.clone());
            }
        }
    }

    let causal = CausalGraph {
        variables: stream_order,
        parents,
    };
    Ok(ValidatedGraph {
        graph,
        producers,
        component_order,
        causal,
    })
}

fn stream_parents(
    graph: &DataflowGraph,
    producers: &BTreeMap<StreamId, ComponentId>,
) -> BTreeMap<StreamId, Vec<StreamId>> {
    let mut parents = BTreeMap::new();
    for s in &graph.streams {
        let mut ps: Vec<StreamId> = Vec::new();
        if let Some(c) = producers.get(&s.id).and_then(|c| graph.component(c)) {
            for input in c.inputs.values() {
                if !ps.contains(input) {
                    ps.push(input.clone());
                }
            }
        }
        parents.insert(s.id.clone(), ps);
    }
    parents
}

/// Kahn's algorithm with lexicographic tie-breaking. On failure returns a cycle.
fn topological_order(
    nodes: &BTreeSet<StreamId>,
    parents: &BTreeMap<StreamId, Vec<StreamId>>,
) -> Result<Vec<StreamId>, Vec<StreamId>> {
    let mut indegree: BTreeMap<&StreamId, usize> = nodes
        .iter()
        .map(|n| (n, parents.get(n).map_or(0, Vec::len)))
        .collect();
    let mut children: BTreeMap<&StreamId, Vec<&StreamId>> = BTreeMap::new();
    for (child, ps) in parents {
        for p in ps {
            children.entry(p).or_default().push(child);
        }
    }
    let mut ready: BTreeSet<&StreamId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.clone());
        for child in children.get(next).into_iter().flatten() {
            let d = indegree.get_mut(child).expect("child is a node");
            *d -= 1;
            if *d == 0 {
                ready.insert(child);
            }
        }
    }
    if order.len() == nodes.len() {
        return Ok(order);
    }

    // Walk parent links among the unresolved nodes until one repeats.
    let remaining: BTreeSet<&StreamId> = indegree
        .iter()
        .filter(|(_, &d)| d > 0)
        .map(|(n, _)| *n)
        .collect();
    let mut path: Vec<StreamId> = Vec::new();
    let mut current = *remaining.iter().next().expect("cycle leaves nodes behind");
    loop {
        if let Some(pos) = path.iter().position(|p| p == current) {
            let mut cycle = path.split_off(pos);
            cycle.reverse();
            cycle.push(cycle[0].clone());
            return Err(cycle);
        }
        path.push(current.clone());
        current = parents[current]
            .iter()
            .find(|p| remaining.contains(p))
            .expect("unresolved node has an unresolved parent");
    }
}

impl ValidatedGraph {
    pub fn graph(&self) -> &DataflowGraph {
        &self.graph
    }

    pub fn into_inner(self) -> DataflowGraph {
        self.graph
    }

    pub fn causal_graph(&self) -> &CausalGraph {
        &self.causal
    }

    /// Components in the deterministic processing order.
    pub fn component_order(&self) -> &[ComponentId] {
        &self.component_order
    }

    pub fn producer(&self, stream: &StreamId) -> Option<&ComponentSpec> {
        self.producers
            .get(stream)
            .and_then(|c| self.graph.component(c))
    }

    pub fn component(&self, id: &ComponentId) -> Result<&ComponentSpec, GraphError> {
        self.graph
            .component(id)
            .ok_or_else(|| GraphError::NodeNotFound(id.clone()))
    }

    pub fn schema(&self, stream: &StreamId) -> Result<&StreamSchema, GraphError> {
        self.graph
            .stream(stream)
            .map(|s| &s.schema)
            .ok_or_else(|| GraphError::UnknownStream(stream.clone()))
    }

    pub fn sources(&self) -> &[StreamId] {
        &self.graph.sources
    }

    pub fn upstream(&self, stream: &StreamId) -> Result<BTreeSet<StreamId>, GraphError> {
        self.causal.upstream(stream)
    }

    pub fn downstream(&self, stream: &StreamId) -> Result<BTreeSet<StreamId>, GraphError> {
        self.causal.downstream(stream)
    }

    /// Replaces the transform kind of one component; wiring is untouched.
    pub fn with_component_kind(
        &self,
        component: &ComponentId,
        kind: impl Into<String>,
    ) -> Result<ValidatedGraph, GraphError> {
        let mut out = self.clone();
        let spec = out
            .graph
            .components
            .iter_mut()
            .find(|c| &c.id == component)
            .ok_or_else(|| GraphError::NodeNotFound(component.clone()))?;
        spec.kind = kind.into();
        Ok(out)
    }

    /// Hash of the wiring only (streams, schemas, ports), ignoring transform kinds.
    pub fn topology_hash(&self) -> u64 {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let mut h = DefaultHasher::new();
        for s in &self.graph.streams {
            s.id.hash(&mut h);
            serde_json::to_string(&s.schema)
                .expect("schema serialises")
                .hash(&mut h);
        }
        for c in &self.graph.components {
            c.id.hash(&mut h);
            for (p, s) in c.inputs.iter().chain(c.outputs.iter()) {
                p.hash(&mut h);
                s.hash(&mut h);
            }
        }
        self.graph.sources.hash(&mut h);
        h.finish()
    }
}

/// Causal graph over streams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalGraph {
    /// Variables in deterministic topological order.
    pub variables: Vec<StreamId>,
    /// Parents of each variable, in the producer's input-port order.
    pub parents: BTreeMap<StreamId, Vec<StreamId>>,
}

/// Derives the causal graph of a validated dataflow graph.
pub fn derive_causal_graph(graph: &ValidatedGraph) -> CausalGraph {
    graph.causal.clone()
}

impl CausalGraph {
    pub fn contains(&self, stream: &StreamId) -> bool {
        self.parents.contains_key(stream)
    }

    pub fn parents(&self, stream: &StreamId) -> Result<&[StreamId], GraphError> {
        self.parents
            .get(stream)
            .map(Vec::as_slice)
            .ok_or_else(|| GraphError::UnknownStream(stream.clone()))
    }

    pub fn children(&self, stream: &StreamId) -> Vec<StreamId> {
        self.parents
            .iter()
            .filter(|(_, ps)| ps.contains(stream))
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn position(&self, stream: &StreamId) -> Option<usize> {
        self.variables.iter().position(|v| v == stream)
    }

    pub fn upstream(&self, stream: &StreamId) -> Result<BTreeSet<StreamId>, GraphError> {
        self.closure(stream, |s| self.parents[s].clone())
    }

    pub fn downstream(&self, stream: &StreamId) -> Result<BTreeSet<StreamId>, GraphError> {
        self.closure(stream, |s| self.children(s))
    }

    fn closure<F>(&self, start: &StreamId, next: F) -> Result<BTreeSet<StreamId>, GraphError>
    where
        F: Fn(&StreamId) -> Vec<StreamId>,
    {
        if !self.contains(start) {
            return Err(GraphError::UnknownStream(start.clone()));
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start.clone()]);
        while let Some(s) = queue.pop_front() {
            for n in next(&s) {
                if seen.insert(n.clone()) {
                    queue.push_back(n);
                }
            }
        }
        seen.remove(start);
        Ok(seen)
    }

    /// Sub-graph induced by `stream` and its ancestors, order preserved.
    pub fn ancestral(&self, stream: &StreamId) -> Result<CausalGraph, GraphError> {
        let mut keep = self.upstream(stream)?;
        keep.insert(stream.clone());
        Ok(CausalGraph {
            variables: self
                .variables
                .iter()
                .filter(|v| keep.contains(*v))
                .cloned()
                .collect(),
            parents: self
                .parents
                .iter()
                .filter(|(k, _)| keep.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        })
    }
}
