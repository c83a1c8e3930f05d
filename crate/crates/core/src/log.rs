//! Recorded stream contents and their on-disk form.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::{ComponentId, StreamId, ValidatedGraph};
use crate::value::Value;

/// Key propagated from a source record to everything derived from it.
pub type CorrelationId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub correlation_id: CorrelationId,
    pub t: u64,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowMeta {
    pub label: String,
    pub first_t: Option<u64>,
    pub last_t: Option<u64>,
    /// Streams that ended up with no records in this window.
    pub empty_streams: Vec<StreamId>,
}

/// Ordered records per stream, plus window metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamLog {
    pub streams: BTreeMap<StreamId, Vec<Record>>,
    pub meta: WindowMeta,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("stream `{0}` is not part of the graph")]
    UnknownStream(StreamId),
    #[error("stream `{stream}` line {line}: {reason}")]
    BadRecord {
        stream: StreamId,
        line: usize,
        reason: String,
    },
    #[error("window bounds reversed: from {from} > to {to}")]
    ReversedWindow { from: u64, to: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StreamLog {
    pub fn new(label: impl Into<String>) -> Self {
        StreamLog {
            streams: BTreeMap::new(),
            meta: WindowMeta {
                label: label.into(),
                ..WindowMeta::default()
            },
        }
    }

    pub fn records(&self, stream: &StreamId) -> &[Record] {
        self.streams.get(stream).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self, stream: &StreamId) -> usize {
        self.records(stream).len()
    }

    pub fn label(&self) -> &str {
        &self.meta.label
    }

    /// Recomputes first/last timestamps and the empty-stream list.
    pub fn refresh_meta(&mut self) {
        let ts = self.streams.values().flatten().map(|r| r.t);
        self.meta.first_t = ts.clone().min();
        self.meta.last_t = ts.max();
        self.meta.empty_streams = self
            .streams
            .iter()
            .filter(|(_, rs)| rs.is_empty())
            .map(|(s, _)| s.clone())
            .collect();
    }

    /// Slices every stream to timestamps in `[from_t, to_t)`.
    pub fn window(&self, from_t: u64, to_t: u64, label: &str) -> Result<StreamLog, LogError> {
        if from_t > to_t {
            return Err(LogError::ReversedWindow {
                from: from_t,
                to: to_t,
            });
        }
        let mut out = StreamLog::new(label);
        for (s, records) in &self.streams {
            let slice = records
                .iter()
                .filter(|r| r.t >= from_t && r.t < to_t)
                .cloned()
                .collect();
            out.streams.insert(s.clone(), slice);
        }
        out.refresh_meta();
        Ok(out)
    }

    /// Every correlation id that appears anywhere in the log, ascending.
    pub fn correlation_ids(&self) -> BTreeSet<CorrelationId> {
        self.streams
            .values()
            .flatten()
            .map(|r| r.correlation_id)
            .collect()
    }

    /// Writes `<root>/<label>/<stream>.ndjson`, one record per line.
    pub fn save(&self, root: impl AsRef<Path>) -> Result<std::path::PathBuf, LogError> {
        let dir = root.as_ref().join(&self.meta.label);
        fs::create_dir_all(&dir)?;
        for (stream, records) in &self.streams {
            let file = fs::File::create(dir.join(format!("{stream}.ndjson")))?;
            let mut w = BufWriter::new(file);
            for r in records {
                serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Ok(dir)
    }

    /// Loads a window directory written by [`StreamLog::save`], validating
    /// every record against the graph's schemas. The window label is the
    /// directory name; graph streams without a file load as empty.
    pub fn load(dir: impl AsRef<Path>, graph: &ValidatedGraph) -> Result<StreamLog, LogError> {
        let dir = dir.as_ref();
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "window".to_string());
        let mut log = StreamLog::new(label);
        let mut entries: Vec<_> = fs::read_dir(dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "ndjson"))
            .collect();
        entries.sort();
        for path in entries {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let stream = StreamId::try_from(name.clone()).map_err(|reason| LogError::BadRecord {
                stream: StreamId::new("?"),
                line: 0,
                reason,
            })?;
            let schema = graph
                .schema(&stream)
                .map_err(|_| LogError::UnknownStream(stream.clone()))?;
            let mut records: Vec<Record> = Vec::new();
            let reader = BufReader::new(fs::File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let bad = |reason: String| LogError::BadRecord {
                    stream: stream.clone(),
                    line: i + 1,
                    reason,
                };
                let record: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                schema.check(&record.value).map_err(bad)?;
                if let Some(prev) = records.last() {
                    if record.t <= prev.t {
                        return Err(bad(format!(
                            "timestamp {} not after previous {}",
                            record.t, prev.t
                        )));
                    }
                }
                records.push(record);
            }
            log.streams.insert(stream, records);
        }
        for decl in &graph.graph().streams {
            log.streams.entry(decl.id.clone()).or_default();
        }
        log.refresh_meta();
        Ok(log)
    }
}

/// Inputs observed for one correlation id, one slot per input port.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBundle {
    pub correlation_id: CorrelationId,
    pub inputs: Vec<Option<Value>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoPairs {
    pub output: StreamId,
    pub pairs: Vec<(InputBundle, Record)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedIo {
    pub component: ComponentId,
    pub per_output: Vec<IoPairs>,
    /// Output records whose correlation id has no input record.
    pub orphan_outputs: usize,
    /// Input bundles that produced no output on any port.
    pub unmatched_inputs: usize,
}

impl JoinedIo {
    pub fn dropped(&self) -> usize {
        self.orphan_outputs + self.unmatched_inputs
    }
}

/// Joins a component's input and output records on correlation id.
pub fn join_io_pairs(
    log: &StreamLog,
    graph: &ValidatedGraph,
    component: &ComponentId,
) -> Result<JoinedIo, crate::graph::GraphError> {
    let spec = graph.component(component)?;
    let index = |s: &StreamId| -> BTreeMap<CorrelationId, &Record> {
        log.records(s).iter().map(|r| (r.correlation_id, r)).collect()
    };
    let inputs: Vec<_> = spec.inputs.values().map(index).collect();
    let mut bundles: BTreeMap<CorrelationId, InputBundle> = BTreeMap::new();
    for (slot, idx) in inputs.iter().enumerate() {
        for (&cid, r) in idx {
            bundles
                .entry(cid)
                .or_insert_with(|| InputBundle {
                    correlation_id: cid,
                    inputs: vec![None; inputs.len()],
                })
                .inputs[slot] = Some(r.value.clone());
        }
    }

    let mut used = BTreeSet::new();
    let mut orphan_outputs = 0;
    let mut per_output = Vec::new();
    for stream in spec.outputs.values() {
        let mut pairs = Vec::new();
        for r in log.records(stream) {
            match bundles.get(&r.correlation_id) {
                Some(b) => {
                    used.insert(r.correlation_id);
                    pairs.push((b.clone(), r.clone()));
                }
                None => orphan_outputs += 1,
            }
        }
        per_output.push(IoPairs {
            output: stream.clone(),
            pairs,
        });
    }
    Ok(JoinedIo {
        component: component.clone(),
        per_output,
        orphan_outputs,
        unmatched_inputs: bundles.len() - used.len(),
    })
}
