//! Lane-state hidden Markov model.
//!
//! A road with `L` lanes has `2L - 1` lane-states. Even indices are lane
//! centers (index `2k` is lane `k`, counted from the right edge), odd indices
//! are switching states straddling the boundary between two adjacent lanes.
//! Transitions only connect a state to itself and its immediate neighbours.

use crate::error::{Error, Result};

const PARAM_TOL: f64 = 1e-9;

/// Probabilities of staying in a state and of moving to one adjacent state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionParams {
    pub stay: f64,
    pub switch: f64,
}

impl TransitionParams {
    pub fn new(stay: f64, switch: f64) -> Result<Self> {
        let params = Self { stay, switch };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !in_unit(self.stay) || !in_unit(self.switch) {
            return Err(Error::InvalidParameter(format!(
                "transition probabilities must lie in [0, 1] (stay={}, switch={})",
                self.stay, self.switch
            )));
        }
        if self.stay + 2.0 * self.switch > 1.0 + PARAM_TOL {
            return Err(Error::InvalidParameter(format!(
                "stay + 2*switch = {} exceeds 1",
                self.stay + 2.0 * self.switch
            )));
        }
        Ok(())
    }
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self {
            stay: 0.8,
            switch: 0.1,
        }
    }
}

/// What a lane-state represents on the road.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    /// Centered in lane `k` (0 = rightmost lane).
    LaneCenter(usize),
    /// Straddling the boundary between lanes `k` and `k + 1`.
    Switching(usize),
}

/// Classifies a state index.
pub fn state_kind(index: usize) -> StateKind {
    if index.is_multiple_of(2) {
        StateKind::LaneCenter(index / 2)
    } else {
        StateKind::Switching(index / 2)
    }
}

/// Number of lane-states for a road with `lane_count` lanes.
pub fn state_count_for(lane_count: usize) -> usize {
    2 * lane_count - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneHmm {
    lane_count: usize,
    params: TransitionParams,
    // row-major, state_count x state_count
    transition: Vec<f64>,
}

impl LaneHmm {
    pub fn lane_count(&self) -> usize {
        self.lane_count
    }

    pub fn state_count(&self) -> usize {
        state_count_for(self.lane_count)
    }

    pub fn params(&self) -> TransitionParams {
        self.params
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.state_count() + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let n = self.state_count();
        &self.transition[from * n..(from + 1) * n]
    }

    /// Row-major copy of the full transition matrix.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.state_count()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn state_labels(&self) -> Vec<StateKind> {
        (0..self.state_count()).map(state_kind).collect()
    }
}

/// Builds the tri-diagonal lane-state chain for `lane_count` lanes.
///
/// Rows are renormalized after filling, so boundary rows (which have only one
/// neighbour) remain stochastic.
pub fn build_transition(lane_count: usize, params: TransitionParams) -> Result<LaneHmm> {
    if lane_count == 0 {
        return Err(Error::InvalidParameter("lane count must be at least 1".into()));
    }
    params.validate()?;
    let n = state_count_for(lane_count);
    let mut transition = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut transition[i * n..(i + 1) * n];
        row[i] = params.stay;
        if i > 0 {
            row[i - 1] = params.switch;
        }
        if i + 1 < n {
            row[i + 1] = params.switch;
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|p| *p /= total);
        } else {
            // stay = switch = 0: the only sensible chain is the identity
            row[i] = 1.0;
        }
    }
    Ok(LaneHmm {
        lane_count,
        params,
        transition,
    })
}

/// A normalized distribution over the states of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    weights: Vec<f64>,
}

impl Belief {
    /// Validates non-negativity and unit mass (within 1e-9) and renormalizes
    /// away the residual rounding.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::NotNormalized("empty belief".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NotNormalized(
                "belief weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized(format!("belief sums to {total}")));
        }
        Ok(Self::normalized_unchecked(weights))
    }

    /// Normalizes an arbitrary non-negative mass vector.
    pub fn from_mass(mass: Vec<f64>) -> Result<Self> {
        if mass.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NotNormalized(
                "mass must be finite and non-negative".into(),
            ));
        }
        let total: f64 = mass.iter().sum();
        if mass.is_empty() || total <= 0.0 {
            return Err(Error::ZeroEvidence);
        }
        Ok(Self::normalized_unchecked(mass))
    }

    fn normalized_unchecked(mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { weights }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn point(n: usize, index: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[index] = 1.0;
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Index of the largest weight (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// All states whose weight is within relative tolerance `rel_tol` of the
    /// maximum.
    pub fn argmax_set(&self, rel_tol: f64) -> Vec<usize> {
        let max = self.weights[self.argmax()];
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w >= max * (1.0 - rel_tol))
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_likelihoods(likelihoods: &[f64], n: usize) -> Result<()> {
    if likelihoods.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: likelihoods.len(),
        });
    }
    if likelihoods.iter().any(|l| l.is_nan() || *l < 0.0 || l.is_infinite()) {
        return Err(Error::InvalidParameter(
            "likelihoods must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Pushes a belief through the transition matrix without any evidence.
pub fn predict(hmm: &LaneHmm, belief: &Belief) -> Result<Vec<f64>> {
    let n = hmm.state_count();
    if belief.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: belief.len(),
        });
    }
    let mut predicted = vec![0.0; n];
    for (i, b) in belief.weights().iter().enumerate() {
        if *b == 0.0 {
            continue;
        }
        // tri-diagonal: only the neighbours carry mass
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        for j in lo..=hi {
            predicted[j] += b * hmm.transition(i, j);
        }
    }
    Ok(predicted)
}

/// One step of the forward algorithm: predict through the chain, weight by the
/// frame likelihoods and renormalize.
///
/// An all-zero likelihood vector carries no information and yields the pure
/// prediction.
pub fn forward_update(hmm: &LaneHmm, belief: &Belief, likelihoods: &[f64]) -> Result<Belief> {
    check_likelihoods(likelihoods, hmm.state_count())?;
    let predicted = predict(hmm, belief)?;
    if likelihoods.iter().all(|l| *l == 0.0) {
        return Belief::from_mass(predicted);
    }
    let posterior: Vec<f64> = predicted
        .iter()
        .zip(likelihoods)
        .map(|(p, l)| p * l)
        .collect();
    Belief::from_mass(posterior)
}

/// Shannon entropy scaled by `1 / ln(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedEntropy {
    pub value: f64,
    /// Set for single-state models, where the scaling is undefined and the
    /// value is pinned to 0.
    pub degenerate: bool,
}

pub fn normalized_entropy(belief: &Belief) -> NormalizedEntropy {
    let n = belief.len();
    if n < 2 {
        return NormalizedEntropy {
            value: 0.0,
            degenerate: true,
        };
    }
    let h: f64 = belief
        .weights()
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| -w * w.ln())
        .sum();
    NormalizedEntropy {
        value: (h / (n as f64).ln()).clamp(0.0, 1.0),
        degenerate: false,
    }
}
