//! Batch selection strategies.
//!
//! Every selector maps one batch and a filter ratio (the fraction of the
//! batch to drop) to a sorted list of retained row indices.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, FeatureBatch, SimilarityGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Keep the rows with the largest |Fiedler| component.
    Saln,
    /// Learnability-scored greedy chunks with redundancy and history terms.
    Jest,
    /// Uniform sample without replacement.
    Random,
    /// Keep everything.
    Standard,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Standard, Strategy::Saln, Strategy::Jest, Strategy::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Saln => "saln",
            Strategy::Jest => "jest",
            Strategy::Random => "random",
            Strategy::Standard => "standard",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saln" => Ok(Strategy::Saln),
            "jest" => Ok(Strategy::Jest),
            "random" => Ok(Strategy::Random),
            "standard" => Ok(Strategy::Standard),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected saln, jest, random or standard)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    /// Fraction of each batch that is DROPPED.
    pub filter_ratio: f64,
    /// Number of greedy rounds JEST splits the kept set into. Clamped to the
    /// kept count of each batch.
    pub chunk_count: usize,
    /// Multiplier applied to the score of samples picked in earlier batches.
    pub history_suppression_weight: f64,
    /// Weight of the max-similarity-to-selected penalty in JEST.
    pub redundancy_weight: f64,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Saln,
            filter_ratio: 0.8,
            chunk_count: 4,
            history_suppression_weight: 0.001,
            redundancy_weight: 0.5,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn new(strategy: Strategy, filter_ratio: f64) -> Self {
        Self {
            strategy,
            filter_ratio,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_filter_ratio(self.filter_ratio)?;
        if self.chunk_count == 0 {
            return Err(Error::Config("chunk_count must be at least 1".into()));
        }
        let w = self.history_suppression_weight;
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::Config(format!(
                "history_suppression_weight {w} is outside (0, 1]"
            )));
        }
        if !(self.redundancy_weight >= 0.0 && self.redundancy_weight.is_finite()) {
            return Err(Error::Config(format!(
                "redundancy_weight {} must be finite and non-negative",
                self.redundancy_weight
            )));
        }
        Ok(())
    }
}

pub fn validate_filter_ratio(r: f64) -> Result<()> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::InvalidFilterRatio(r))
    }
}

/// `max(1, floor(n * (1 - r)))`.
///
/// The product is nudged by `1e-9` before flooring so that decimal ratios
/// land on the integer they denote (`10 * (1 - 0.8)` evaluates to
/// `1.9999999999999996` in binary floating point).
pub fn kept_count(n: usize, filter_ratio: f64) -> usize {
    let exact = n as f64 * (1.0 - filter_ratio);
    ((exact + 1e-9).floor() as usize).clamp(1, n.max(1))
}

/// Outcome of one selection call. Serialises to the selection JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub batch_id: u64,
    pub strategy: Strategy,
    pub filter_ratio: f64,
    /// Sorted ascending, unique, in `0..n`.
    pub indices: Vec<usize>,
    /// One informativeness score per row of the batch.
    pub scores: Vec<f64>,
    pub degenerate_spectrum: bool,
}

impl SelectionResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Indices of the `k` largest scores. Ties go to the smaller `priority`,
/// which is the index itself unless the caller supplies another order.
fn top_k(scores: &[f64], k: usize, priority: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => priority[a].cmp(&priority[b]),
        o => o,
    });
    order.truncate(k);
    order
}

/// Spectral selection: score each row by the magnitude of its Fiedler
/// component and keep the largest.
pub fn saln_select(batch: &FeatureBatch, cfg: &SelectionConfig) -> Result<SelectionResult> {
    validate_filter_ratio(cfg.filter_ratio)?;
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall { n, min: 2 });
    }
    let graph = SimilarityGraph::from_batch(batch)?;
    let fiedler = spectral::fiedler_vector(&graph.laplacian)?;
    let scores: Vec<f64> = fiedler.vector.iter().map(|v| v.abs()).collect();

    let identity: Vec<usize> = (0..n).collect();
    let mut indices = top_k(&scores, kept_count(n, cfg.filter_ratio), &identity);
    indices.sort_unstable();

    Ok(SelectionResult {
        batch_id: batch.batch_id(),
        strategy: Strategy::Saln,
        filter_ratio: cfg.filter_ratio,
        indices,
        scores,
        degenerate_spectrum: fiedler.degenerate_spectrum,
    })
}

/// Per-batch inputs for JEST scoring.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JestState {
    /// Current model's loss on each row.
    pub learner_losses: Vec<f64>,
    /// Frozen reference model's loss on each row.
    pub reference_losses: Vec<f64>,
    /// Global ids of samples selected in earlier batches.
    pub selection_history: BTreeSet<usize>,
    /// Global id of each row. `None` means row `i` has id `i`.
    pub sample_ids: Option<Vec<usize>>,
}

impl JestState {
    pub fn new(learner_losses: Vec<f64>, reference_losses: Vec<f64>) -> Self {
        Self {
            learner_losses,
            reference_losses,
            ..Self::default()
        }
    }

    pub fn with_history(mut self, sample_ids: Vec<usize>, history: BTreeSet<usize>) -> Self {
        self.sample_ids = Some(sample_ids);
        self.selection_history = history;
        self
    }

    fn in_history(&self, row: usize) -> bool {
        let id = self.sample_ids.as_ref().map_or(row, |ids| ids[row]);
        self.selection_history.contains(&id)
    }
}

/// JEST-style joint selection.
///
/// `learnability = learner_loss - reference_loss`, multiplied by the
/// suppression weight for samples already in the history. The kept set is
/// filled in `chunk_count` rounds of near-equal size; within a round each
/// remaining row is scored `s[i] - rho * max_{j selected} S[i][j]` against
/// the rows chosen in earlier rounds, and the round takes its top rows.
/// Exact ties are broken by a permutation drawn from `cfg.seed`.
pub fn jest_select(batch: &FeatureBatch, state: &JestState, cfg: &SelectionConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::BatchTooSmall { n, min: 1 });
    }
    for (what, len) in [
        ("learner_losses", state.learner_losses.len()),
        ("reference_losses", state.reference_losses.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch { what, got: len, expected: n });
        }
    }
    if let Some(ids) = &state.sample_ids {
        if ids.len() != n {
            return Err(Error::LengthMismatch {
                what: "sample_ids",
                got: ids.len(),
                expected: n,
            });
        }
    }
    if let Some(i) = state
        .learner_losses
        .iter()
        .chain(&state.reference_losses)
        .position(|v| !v.is_finite())
    {
        return Err(Error::NonFiniteInput { row: i % n, col: 0 });
    }

    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let learnability = state.learner_losses[i] - state.reference_losses[i];
            if state.in_history(i) {
                learnability * cfg.history_suppression_weight
            } else {
                learnability
            }
        })
        .collect();

    let similarity = spectral::cosine_similarity_matrix(batch)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut priority = vec![0; n];
    for (rank, &i) in perm.iter().enumerate() {
        priority[i] = rank;
    }

    let indices = greedy_chunks(
        &scores,
        &similarity,
        kept_count(n, cfg.filter_ratio),
        cfg.chunk_count,
        cfg.redundancy_weight,
        &priority,
    );

    Ok(SelectionResult {
        batch_id: batch.batch_id(),
        strategy: Strategy::Jest,
        filter_ratio: cfg.filter_ratio,
        indices,
        scores,
        degenerate_spectrum: false,
    })
}

fn greedy_chunks(
    scores: &[f64],
    similarity: &Array2<f64>,
    kept: usize,
    chunk_count: usize,
    redundancy: f64,
    priority: &[usize],
) -> Vec<usize> {
    let n = scores.len();
    let chunks = chunk_count.min(kept);
    let mut selected: Vec<usize> = Vec::with_capacity(kept);
    let mut taken = vec![false; n];

    for c in 0..chunks {
        let size = kept / chunks + usize::from(c < kept % chunks);
        let remaining: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
        let marginal: Vec<f64> = remaining
            .iter()
            .map(|&i| {
                let penalty = selected
                    .iter()
                    .map(|&j| similarity[[i, j]])
                    .fold(f64::NEG_INFINITY, f64::max);
                if penalty.is_finite() {
                    scores[i] - redundancy * penalty
                } else {
                    scores[i]
                }
            })
            .collect();
        let local_priority: Vec<usize> = remaining.iter().map(|&i| priority[i]).collect();
        for local in top_k(&marginal, size, &local_priority) {
            let i = remaining[local];
            taken[i] = true;
            selected.push(i);
        }
    }
    selected.sort_unstable();
    selected
}

/// Seeded uniform subset of `0..n`.
pub fn random_select(n: usize, cfg: &SelectionConfig) -> Result<SelectionResult> {
    validate_filter_ratio(cfg.filter_ratio)?;
    if n == 0 {
        return Err(Error::BatchTooSmall { n, min: 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices = rand::seq::index::sample(&mut rng, n, kept_count(n, cfg.filter_ratio)).into_vec();
    indices.sort_unstable();
    Ok(SelectionResult {
        batch_id: 0,
        strategy: Strategy::Random,
        filter_ratio: cfg.filter_ratio,
        indices,
        scores: vec![1.0; n],
        degenerate_spectrum: false,
    })
}

/// The no-selection baseline: every row is kept.
pub fn standard_select(n: usize) -> SelectionResult {
    SelectionResult {
        batch_id: 0,
        strategy: Strategy::Standard,
        filter_ratio: 0.0,
        indices: (0..n).collect(),
        scores: vec![1.0; n],
        degenerate_spectrum: false,
    }
}

/// Dispatches on `cfg.strategy`. JEST needs `jest_state`.
pub fn select(batch: &FeatureBatch, cfg: &SelectionConfig, jest_state: Option<&JestState>) -> Result<SelectionResult> {
    let mut result = match cfg.strategy {
        Strategy::Saln => saln_select(batch, cfg)?,
        Strategy::Jest => {
            let state = jest_state.ok_or_else(|| Error::Config("JEST selection requires learner and reference losses".into()))?;
            jest_select(batch, state, cfg)?
        }
        Strategy::Random => random_select(batch.len(), cfg)?,
        Strategy::Standard => standard_select(batch.len()),
    };
    result.batch_id = batch.batch_id();
    Ok(result)
}
