//! One-index attacks on a VQ index stream.
//!
//! A [`Perturbation`] names one grid cell and the `C` replacement indices
//! written there. The attack minimizes the oracle's probability for the true
//! class over all such perturbations, using either differential evolution
//! ([`de_attack`]) or uniform random sampling ([`random_search_attack`]).

mod de;
mod random_search;

pub use de::{de_attack, de_attack_with_probe, DeConfig};
pub use random_search::{random_search_attack, random_search_attack_with_probe};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image_io::ImageTensor;
use crate::oracle::{OracleError, OracleHandle};
use crate::vq_codec::{decode, CodecError, Codebook, IndexTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid attack context: {0}")]
    InvalidContext(String),
    #[error("perturbation out of range: {0}")]
    PerturbationOutOfRange(String),
    #[error("genotype contains a non-finite coordinate")]
    NonFiniteGenotype,
    #[error("evaluation budget of {budget} exhausted")]
    BudgetExhausted { budget: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("oracle failed after {evaluations} evaluations: {source}")]
    Oracle {
        #[source]
        source: OracleError,
        /// Best fitness per completed generation before the failure.
        trajectory: Vec<f64>,
        evaluations: usize,
    },
}

/// One grid cell `(row, col)` and the replacement index for each channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Perturbation {
    pub row: usize,
    pub col: usize,
    pub values: Vec<u16>,
}

impl Perturbation {
    /// The perturbation that rewrites a cell with its current indices.
    pub fn identity_at(idx: &IndexTensor, row: usize, col: usize) -> Self {
        Self {
            row,
            col,
            values: idx.cell(row, col).to_vec(),
        }
    }

    pub fn to_genotype(&self) -> Genotype {
        let mut g = vec![self.row as f64, self.col as f64];
        g.extend(self.values.iter().map(|&v| v as f64));
        Genotype(g)
    }
}

/// Continuous search-space coordinates `(row, col, v_1, …, v_C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genotype(pub Vec<f64>);

/// Per-coordinate box of the continuous search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBounds {
    pub rows: usize,
    pub cols: usize,
    pub codebook_len: usize,
    pub channels: usize,
}

impl SearchBounds {
    pub fn of(idx: &IndexTensor) -> Self {
        Self {
            rows: idx.rows(),
            cols: idx.cols(),
            codebook_len: idx.codebook_len(),
            channels: idx.channels(),
        }
    }

    pub fn dims(&self) -> usize {
        2 + self.channels
    }

    /// Inclusive upper bound of coordinate `k`; every lower bound is 0.
    pub fn upper(&self, k: usize) -> f64 {
        match k {
            0 => (self.rows - 1) as f64,
            1 => (self.cols - 1) as f64,
            _ => (self.codebook_len - 1) as f64,
        }
    }

    pub fn clamp(&self, g: &mut Genotype) {
        for (k, x) in g.0.iter_mut().enumerate() {
            *x = x.clamp(0.0, self.upper(k));
        }
    }

    /// Number of distinct perturbations, `s · t · L^C`.
    pub fn cardinality(&self) -> u128 {
        (self.rows * self.cols) as u128 * (self.codebook_len as u128).pow(self.channels as u32)
    }
}

/// Clamps each coordinate to its bound, then rounds half-up.
pub fn genotype_to_perturbation(
    g: &Genotype,
    bounds: &SearchBounds,
) -> Result<Perturbation, AttackError> {
    if g.0.len() != bounds.dims() {
        return Err(AttackError::InvalidConfig(format!(
            "genotype has {} coordinates, expected {}",
            g.0.len(),
            bounds.dims()
        )));
    }
    if g.0.iter().any(|x| !x.is_finite()) {
        return Err(AttackError::NonFiniteGenotype);
    }
    let snap = |k: usize| (g.0[k].clamp(0.0, bounds.upper(k)) + 0.5).floor() as usize;
    Ok(Perturbation {
        row: snap(0),
        col: snap(1),
        values: (2..bounds.dims()).map(|k| snap(k) as u16).collect(),
    })
}

/// Copy of `idx` with cell `(p.row, p.col)` overwritten by `p.values`.
pub fn apply_perturbation(idx: &IndexTensor, p: &Perturbation) -> Result<IndexTensor, AttackError> {
    if p.row >= idx.rows() || p.col >= idx.cols() {
        return Err(AttackError::PerturbationOutOfRange(format!(
            "cell ({}, {}) outside {}x{} grid",
            p.row,
            p.col,
            idx.rows(),
            idx.cols()
        )));
    }
    if p.values.len() != idx.channels() {
        return Err(AttackError::PerturbationOutOfRange(format!(
            "{} values for {} channels",
            p.values.len(),
            idx.channels()
        )));
    }
    if let Some(&v) = p.values.iter().find(|&&v| v as usize >= idx.codebook_len()) {
        return Err(AttackError::PerturbationOutOfRange(format!(
            "index {v} outside codebook of length {}",
            idx.codebook_len()
        )));
    }
    let mut out = idx.clone();
    out.cell_mut(p.row, p.col).copy_from_slice(&p.values);
    Ok(out)
}

/// Everything one attack run needs.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub indices: &'a IndexTensor,
    pub codebook: &'a Codebook,
    pub oracle: &'a OracleHandle,
    pub true_label: usize,
    /// Maximum number of fitness evaluations.
    pub budget: usize,
    pub seed: u64,
}

impl<'a> AttackContext<'a> {
    pub fn new(
        indices: &'a IndexTensor,
        codebook: &'a Codebook,
        oracle: &'a OracleHandle,
        true_label: usize,
        budget: usize,
        seed: u64,
    ) -> Result<Self, AttackError> {
        if indices.codebook_id() != codebook.id() {
            return Err(AttackError::Codec(CodecError::CodebookMismatch {
                expected: indices.codebook_id(),
                found: codebook.id(),
            }));
        }
        if true_label >= oracle.classes() {
            return Err(AttackError::InvalidContext(format!(
                "true label {true_label} outside [0, {})",
                oracle.classes()
            )));
        }
        let probe = ImageTensor::filled(
            indices.rows() * codebook.block_h(),
            indices.cols() * codebook.block_w(),
            indices.channels(),
            0,
        )
        .map_err(|e| AttackError::InvalidContext(e.to_string()))?;
        if !oracle.expected_shape().accepts(&probe) {
            return Err(AttackError::InvalidContext(format!(
                "decoded images are {:?} but the oracle expects {}",
                probe.shape(),
                oracle.expected_shape()
            )));
        }
        Ok(Self {
            indices,
            codebook,
            oracle,
            true_label,
            budget,
            seed,
        })
    }

    pub fn bounds(&self) -> SearchBounds {
        SearchBounds::of(self.indices)
    }

    /// Oracle verdict on the unperturbed stream. Not charged to any budget.
    pub fn baseline(&self) -> Result<Evaluation, AttackError> {
        let img = decode(self.indices, self.codebook)?;
        let probs = self.oracle.classify(&img).map_err(|source| AttackError::Oracle {
            source,
            trajectory: Vec::new(),
            evaluations: 0,
        })?;
        Ok(Evaluation::from_probs(probs.as_slice(), self.true_label))
    }
}

/// The oracle's verdict on one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Probability of the true class.
    pub fitness: f64,
    /// Predicted class.
    pub label: usize,
    /// Probability of the predicted class.
    pub confidence: f64,
}

impl Evaluation {
    fn from_probs(probs: &[f64], true_label: usize) -> Self {
        let mut label = 0;
        for (k, &p) in probs.iter().enumerate() {
            if p > probs[label] {
                label = k;
            }
        }
        Self {
            fitness: probs[true_label],
            label,
            confidence: probs[label],
        }
    }
}

/// Observes an attack run; used for instrumentation in tests and diagnostics.
pub trait AttackProbe {
    /// Called once per DE mutation with the target and its three donors.
    fn on_mutation(&mut self, _target: usize, _donors: [usize; 3]) {}

    /// Called once per evaluation site, including cache hits.
    fn on_evaluation(
        &mut self,
        _candidate: &IndexTensor,
        _perturbation: &Perturbation,
        _evaluation: &Evaluation,
    ) {
    }
}

/// A probe that records nothing.
pub struct NoProbe;

impl AttackProbe for NoProbe {}

/// Budget-enforcing fitness evaluator with an optional answer cache.
///
/// Each call counts one evaluation, cached or not. Oracle queries are
/// counted separately.
pub struct Evaluator<'c, 'a> {
    ctx: &'c AttackContext<'a>,
    cache: Option<HashMap<Perturbation, Evaluation>>,
    evaluations: usize,
    oracle_queries: usize,
}

impl<'c, 'a> Evaluator<'c, 'a> {
    pub fn new(ctx: &'c AttackContext<'a>, cache: bool) -> Self {
        Self {
            ctx,
            cache: cache.then(HashMap::new),
            evaluations: 0,
            oracle_queries: 0,
        }
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn oracle_queries(&self) -> usize {
        self.oracle_queries
    }

    pub fn remaining(&self) -> usize {
        self.ctx.budget.saturating_sub(self.evaluations)
    }

    pub fn evaluate(
        &mut self,
        p: &Perturbation,
        probe: &mut dyn AttackProbe,
    ) -> Result<Evaluation, AttackError> {
        if self.evaluations >= self.ctx.budget {
            return Err(AttackError::BudgetExhausted {
                budget: self.ctx.budget,
            });
        }
        let candidate = apply_perturbation(self.ctx.indices, p)?;
        debug_assert!(candidate.differing_cells(self.ctx.indices).len() <= 1);
        self.evaluations += 1;
        let cached = self.cache.as_ref().and_then(|c| c.get(p)).copied();
        let evaluation = match cached {
            Some(e) => e,
            None => {
                let img = decode(&candidate, self.ctx.codebook)?;
                self.oracle_queries += 1;
                let probs = self.ctx.oracle.classify(&img).map_err(|source| AttackError::Oracle {
                    source,
                    trajectory: Vec::new(),
                    evaluations: self.evaluations,
                })?;
                let e = Evaluation::from_probs(probs.as_slice(), self.ctx.true_label);
                if let Some(cache) = self.cache.as_mut() {
                    cache.insert(p.clone(), e);
                }
                e
            }
        };
        probe.on_evaluation(&candidate, p, &evaluation);
        Ok(evaluation)
    }
}

/// True-class probability of the decoded, perturbed stream.
pub fn fitness(ctx: &AttackContext<'_>, p: &Perturbation) -> Result<f64, AttackError> {
    Ok(Evaluator::new(ctx, false).evaluate(p, &mut NoProbe)?.fitness)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    DifferentialEvolution,
    RandomSearch,
}

/// Phenotypes of the whole population at three points of a DE run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSnapshots {
    pub initial: Vec<Perturbation>,
    pub middle_generation: usize,
    pub middle: Vec<Perturbation>,
    #[serde(rename = "final")]
    pub final_: Vec<Perturbation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub method: SearchMethod,
    pub best: Perturbation,
    /// The best perturbation's decoded image is not classified as the true label.
    pub success: bool,
    pub true_label: usize,
    pub adversarial_label: usize,
    /// Probability of `adversarial_label` for the best perturbation.
    pub confidence: f64,
    /// True-class probability for the best perturbation.
    pub fitness: f64,
    /// Evaluation sites charged to the budget.
    pub evaluations: usize,
    /// Queries actually sent to the oracle (lower when answers were cached).
    pub oracle_queries: usize,
    /// Best fitness so far: entry 0 after initialization (DE) or the first
    /// draw (random search), then one entry per generation or draw.
    pub trajectory: Vec<f64>,
    pub snapshots: Option<PopulationSnapshots>,
}

impl AttackResult {
    fn from_best(
        method: SearchMethod,
        ctx: &AttackContext<'_>,
        best: Perturbation,
        eval: Evaluation,
        evaluator: &Evaluator<'_, '_>,
        trajectory: Vec<f64>,
        snapshots: Option<PopulationSnapshots>,
    ) -> Self {
        Self {
            method,
            best,
            success: eval.label != ctx.true_label,
            true_label: ctx.true_label,
            adversarial_label: eval.label,
            confidence: eval.confidence,
            fitness: eval.fitness,
            evaluations: evaluator.evaluations(),
            oracle_queries: evaluator.oracle_queries(),
            trajectory,
            snapshots,
        }
    }

    /// The attacked index stream.
    pub fn adversarial_indices(&self, original: &IndexTensor) -> Result<IndexTensor, AttackError> {
        apply_perturbation(original, &self.best)
    }
}
