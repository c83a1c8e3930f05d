use indexmap::IndexMap;

use crate::graph::StreamId;
use crate::scm::{sample_mechanisms, Mechanism, Scm};
use crate::stats::{shapley_values, KlEstimator, ShapleyMode, StatsError, MAX_EXACT_PLAYERS};

use super::divergence::{stream_divergence, StreamSample};
use super::AttributionError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameConfig {
    /// Rows sampled per coalition.
    pub samples: usize,
    pub seed: u64,
    pub estimator: KlEstimator,
    /// `None` picks exact enumeration up to the exact-mode limit.
    pub mode: Option<ShapleyMode>,
    pub permutations: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            samples: 2000,
            seed: 0,
            estimator: KlEstimator::default(),
            mode: None,
            permutations: crate::stats::DEFAULT_PERMUTATIONS,
        }
    }
}

/// Mechanism-replacement game over the ancestors of `target`.
///
/// Player `i` is the mechanism of the `i`-th ancestral stream. A coalition
/// takes its members' mechanisms from `new` and the rest from `old`; its
/// value is the divergence of the sampled target from the target sampled
/// under `old`, with common random numbers across coalitions.
pub struct MechanismGame<'a> {
    pub players: Vec<StreamId>,
    old: Vec<&'a Mechanism>,
    new: Vec<&'a Mechanism>,
    scm: &'a Scm,
    target: StreamId,
    baseline: StreamSample,
    config: GameConfig,
}

impl<'a> MechanismGame<'a> {
    pub fn new(old: &'a Scm, new: &'a Scm, target: &StreamId, config: GameConfig) -> Result<Self, AttributionError> {
        if old.causal != new.causal {
            return Err(AttributionError::WindowMismatch(
                "SCMs are fitted on different causal graphs".into(),
            ));
        }
        let players = old
            .causal
            .ancestral(target)
            .map_err(|_| AttributionError::UnknownStream(target.clone()))?
            .variables;
        let pick = |scm: &'a Scm| -> Vec<&'a Mechanism> { players.iter().map(|p| scm.mechanisms[p].as_ref()).collect() };
        let mut game = MechanismGame {
            old: pick(old),
            new: pick(new),
            players,
            scm: old,
            target: target.clone(),
            baseline: StreamSample {
                kinds: Vec::new(),
                rows: Vec::new(),
            },
            config,
        };
        game.baseline = game.target_sample(0);
        Ok(game)
    }

    fn target_sample(&self, coalition: u64) -> StreamSample {
        let mechanisms: Vec<&Mechanism> = (0..self.players.len())
            .map(|i| {
                if coalition & (1 << i) != 0 {
                    self.new[i]
                } else {
                    self.old[i]
                }
            })
            .collect();
        let frame = sample_mechanisms(
            &self.players,
            &self.scm.schemas,
            &mechanisms,
            self.config.samples,
            self.config.seed,
        );
        StreamSample::from_column(&frame.columns[&self.target])
    }

    /// Value of a coalition given as a bit set over `players`.
    pub fn value(&self, coalition: u64) -> f64 {
        if coalition == 0 {
            return 0.0;
        }
        let sample = self.target_sample(coalition);
        if sample.is_empty() || self.baseline.is_empty() {
            return 0.0;
        }
        stream_divergence(&sample, &self.baseline, self.config.estimator).unwrap_or(0.0)
    }

    pub fn mode(&self) -> ShapleyMode {
        self.config.mode.unwrap_or(if self.players.len() <= MAX_EXACT_PLAYERS {
            ShapleyMode::Exact
        } else {
            ShapleyMode::Permutation {
                samples: self.config.permutations,
                seed: self.config.seed,
            }
        })
    }

    pub fn shapley(&self) -> Result<IndexMap<StreamId, f64>, StatsError> {
        let phi = shapley_values(self.players.len(), self.mode(), &|s| self.value(s))?;
        Ok(self.players.iter().cloned().zip(phi).collect())
    }
}

/// Shapley attribution of the target's change to the mechanisms of its ancestors.
pub fn shapley_attribution(
    old: &Scm,
    new: &Scm,
    target: &StreamId,
    config: GameConfig,
) -> Result<IndexMap<StreamId, f64>, AttributionError> {
    Ok(MechanismGame::new(old, new, target, config)?.shapley()?)
}
