//! Momentum gradient descent for clients and server, plus the closed-form
//! unrollings of both recurrences.
//!
//! Both optimizers use the heavy-ball form `m ← μ·m + g`, `w ← w − η·m`. The
//! local buffer is cleared at the start of every communication round; the
//! global buffer lives for the whole run.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("momentum decay {0} outside [0, 1)")]
    InvalidDecay(f64),
    #[error("learning rate {0} must be positive and finite")]
    InvalidLearningRate(f64),
    #[error("non-finite gradient entry at index {index}")]
    NonFinite { index: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("no rounds recorded")]
    EmptyHistory,
}

fn validate(decay: f64, lr: f64) -> Result<(), OptimError> {
    if !(0.0..1.0).contains(&decay) {
        return Err(OptimError::InvalidDecay(decay));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(OptimError::InvalidLearningRate(lr));
    }
    Ok(())
}

fn check_len(expected: usize, found: usize) -> Result<(), OptimError> {
    if expected != found {
        return Err(OptimError::ShapeMismatch { expected, found });
    }
    Ok(())
}

fn check_finite(grad: &[f64]) -> Result<(), OptimError> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(index) => Err(OptimError::NonFinite { index }),
        None => Ok(()),
    }
}

/// `1 + μ + … + μ^{n−1}`
fn geometric(decay: f64, n: usize) -> f64 {
    (1.0 - decay.powi(n as i32)) / (1.0 - decay)
}

/// Client-side momentum state for one communication round.
#[derive(Debug, Clone)]
pub struct LocalMomentum {
    buffer: Vec<f64>,
    buffer_sum: Vec<f64>,
    decay: f64,
    lr: f64,
    steps: usize,
    history: Option<Vec<Vec<f64>>>,
}

impl LocalMomentum {
    pub fn new(dim: usize, decay: f64, lr: f64) -> Result<Self, OptimError> {
        validate(decay, lr)?;
        Ok(Self {
            buffer: vec![0.0; dim],
            buffer_sum: vec![0.0; dim],
            decay,
            lr,
            steps: 0,
            history: None,
        })
    }

    /// Retain every gradient of the round for [`expand_local`].
    pub fn with_history(mut self) -> Self {
        self.history = Some(Vec::new());
        self
    }

    /// Start of a communication round.
    pub fn reset(&mut self) {
        self.buffer.iter_mut().for_each(|v| *v = 0.0);
        self.buffer_sum.iter_mut().for_each(|v| *v = 0.0);
        self.steps = 0;
        if let Some(h) = self.history.as_mut() {
            h.clear();
        }
    }

    pub fn step(&mut self, grad: &[f64], params: &mut [f64]) -> Result<(), OptimError> {
        check_len(self.buffer.len(), grad.len())?;
        check_len(self.buffer.len(), params.len())?;
        check_finite(grad)?;
        for ((m, s), (&g, w)) in self
            .buffer
            .iter_mut()
            .zip(self.buffer_sum.iter_mut())
            .zip(grad.iter().zip(params.iter_mut()))
        {
            *m = self.decay * *m + g;
            *s += *m;
            *w -= self.lr * *m;
        }
        self.steps += 1;
        if let Some(h) = self.history.as_mut() {
            h.push(grad.to_vec());
        }
        Ok(())
    }

    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }

    /// `ν^(1) + … + ν^(e)`: sum of the buffers after each step this round, so
    /// that the round's displacement is `−η` times this.
    pub fn buffer_sum(&self) -> &[f64] {
        &self.buffer_sum
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn history(&self) -> Option<&[Vec<f64>]> {
        self.history.as_deref()
    }
}

/// One client's share of a server aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub client: usize,
    pub weight: f64,
    pub update: Vec<f64>,
}

/// Everything the server aggregated in one round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundHistory {
    pub contributions: Vec<Contribution>,
}

/// Server-side momentum. The learning rate is applied at the server, so with
/// zero decay and an aggregate of `(w_in − w_out)/η` a step lands exactly on
/// the weighted mean of the client models.
#[derive(Debug, Clone)]
pub struct GlobalMomentum {
    buffer: Vec<f64>,
    decay: f64,
    lr: f64,
    history: Option<Vec<RoundHistory>>,
}

impl GlobalMomentum {
    pub fn new(dim: usize, decay: f64, lr: f64) -> Result<Self, OptimError> {
        validate(decay, lr)?;
        Ok(Self {
            buffer: vec![0.0; dim],
            decay,
            lr,
            history: None,
        })
    }

    pub fn with_history(mut self) -> Self {
        self.history = Some(Vec::new());
        self
    }

    /// `m ← μ·m + p·g`, `w ← w − η·m`.
    pub fn step(&mut self, aggregate: &[f64], weight: f64, params: &mut [f64]) -> Result<(), OptimError> {
        check_len(self.buffer.len(), aggregate.len())?;
        check_len(self.buffer.len(), params.len())?;
        check_finite(aggregate)?;
        for ((m, &g), w) in self.buffer.iter_mut().zip(aggregate).zip(params.iter_mut()) {
            *m = self.decay * *m + weight * g;
            *w -= self.lr * *m;
        }
        Ok(())
    }

    /// Weighted sum of the contributions (in the given order) followed by a
    /// unit-weight [`step`](Self::step). Records the round when history is on.
    pub fn step_round(&mut self, contributions: &[Contribution], params: &mut [f64]) -> Result<Vec<f64>, OptimError> {
        let mut aggregate = vec![0.0; self.buffer.len()];
        for c in contributions {
            check_len(aggregate.len(), c.update.len())?;
            for (a, u) in aggregate.iter_mut().zip(&c.update) {
                *a += c.weight * u;
            }
        }
        self.step(&aggregate, 1.0, params)?;
        if let Some(h) = self.history.as_mut() {
            h.push(RoundHistory {
                contributions: contributions.to_vec(),
            });
        }
        Ok(aggregate)
    }

    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn history(&self) -> Option<&[RoundHistory]> {
        self.history.as_deref()
    }
}

/// Displacement `w^(e) − w^(0)` after `e = history.len()` local steps:
/// batch `j` contributes `−η ζ^(j) (1 − μ^{e+1−j}) / (1 − μ)`.
pub fn expand_local(history: &[Vec<f64>], decay: f64, lr: f64) -> Result<Vec<f64>, OptimError> {
    validate(decay, lr)?;
    let Some(first) = history.first() else {
        return Err(OptimError::EmptyHistory);
    };
    let e = history.len();
    let mut out = vec![0.0; first.len()];
    for (j, grad) in history.iter().enumerate() {
        check_len(out.len(), grad.len())?;
        // j is zero-based, so the exponent e + 1 − (j + 1) = e − j
        let coeff = -lr * geometric(decay, e - j);
        for (o, g) in out.iter_mut().zip(grad) {
            *o += coeff * g;
        }
    }
    Ok(out)
}

/// Unrolled server trajectory after `n = history.len()` rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalExpansion {
    /// Buffer after the last round: `Σ_s μ^{n−s} Σ_k p_k^(s) ξ_k^(s)`.
    pub momentum: Vec<f64>,
    /// `w^(n) − w^(0) = −η Σ_s (1 − μ^{n−s+1})/(1 − μ) Σ_k p_k^(s) ξ_k^(s)`.
    pub displacement: Vec<f64>,
    /// The displacement split by client; sums to `displacement`.
    pub per_client: BTreeMap<usize, Vec<f64>>,
}

pub fn expand_global(history: &[RoundHistory], decay: f64, lr: f64) -> Result<GlobalExpansion, OptimError> {
    validate(decay, lr)?;
    let dim = history
        .iter()
        .flat_map(|r| r.contributions.first())
        .map(|c| c.update.len())
        .next()
        .ok_or(OptimError::EmptyHistory)?;
    let n = history.len();
    let mut momentum = vec![0.0; dim];
    let mut displacement = vec![0.0; dim];
    let mut per_client: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (s, round) in history.iter().enumerate() {
        // s is zero-based: round s+1 of n
        let mom_coeff = decay.powi((n - 1 - s) as i32);
        let disp_coeff = -lr * geometric(decay, n - s);
        for c in &round.contributions {
            check_len(dim, c.update.len())?;
            let share = per_client.entry(c.client).or_insert_with(|| vec![0.0; dim]);
            for i in 0..dim {
                let term = c.weight * c.update[i];
                momentum[i] += mom_coeff * term;
                displacement[i] += disp_coeff * term;
                share[i] += disp_coeff * term;
            }
        }
    }
    Ok(GlobalExpansion {
        momentum,
        displacement,
        per_client,
    })
}
