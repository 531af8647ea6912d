//! Variable-structure bank of lane HMMs.
//!
//! The universe holds one chain per hypothesized lane count. Each step the
//! likely model set is re-selected from model likelihoods (map prior times
//! the best single-state frame likelihood), newly activated models receive a
//! belief transferred from the most certain active model, and every active
//! model runs one forward update on its own frame likelihoods. Normalized
//! entropies then drive localization and map discrepancy detection.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::hmm::{self, build_transition, normalized_entropy, Belief, LaneHmm, TransitionParams};
use crate::obsmodel::{frame_likelihoods, LaneGeometry, ObsParams, ObservationFrame};
use crate::transport::{
    baseline_init, minimize_eemd, BaselineStrategy, GroundMetric, MappingPrior, SimplexDist,
};

/// Relative tolerance for treating two belief weights as tied.
pub const BELIEF_TIE_TOL: f64 = 1e-9;

/// Absolute tolerance for treating two normalized entropies as tied.
pub const ENTROPY_TIE_TOL: f64 = 1e-12;

fn cmp_entropy(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= ENTROPY_TIE_TOL {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// How a newly activated model gets its first belief.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeliefTransfer {
    /// EEMD minimization against the donor belief under an even
    /// left/right-alignment prior.
    Eemd,
    /// One of the prior-free heuristics.
    Baseline(BaselineStrategy),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmsConfig {
    /// Maximum number of simultaneously active models.
    pub kappa: usize,
    /// Minimum likelihood ratio to the best model for activation.
    pub t_active: f64,
    pub transfer: BeliefTransfer,
}

impl Default for LmsConfig {
    fn default() -> Self {
        Self {
            kappa: 3,
            t_active: 0.3,
            transfer: BeliefTransfer::Eemd,
        }
    }
}

impl LmsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa == 0 {
            return Err(Error::InvalidParameter("kappa must be at least 1".into()));
        }
        if !(self.t_active > 0.0 && self.t_active <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "activation threshold {} outside (0, 1]",
                self.t_active
            )));
        }
        Ok(())
    }
}

/// The lane count the map suggests for the current road.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapHint {
    pub lanes: usize,
}

/// Lateral geometry and noise model shared by every hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub lane_width: f64,
    pub params: ObsParams,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            lane_width: 3.5,
            params: ObsParams::default(),
        }
    }
}

impl SensorModel {
    pub fn geometry(&self, lanes: usize) -> Result<LaneGeometry> {
        LaneGeometry::new(self.lane_width, lanes)
    }

    pub fn likelihoods(&self, lanes: usize, frame: &ObservationFrame) -> Result<Vec<f64>> {
        let geom = self.geometry(lanes)?;
        frame_likelihoods(geom.state_count(), frame, &geom, &self.params)
    }
}

/// All hypotheses; a model is active exactly when it carries a belief.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBank {
    models: Vec<LaneHmm>,
    beliefs: Vec<Option<Belief>>,
}

impl ModelBank {
    /// One model per lane count in `lane_counts`, none active yet.
    pub fn new(lane_counts: impl IntoIterator<Item = usize>, params: TransitionParams) -> Result<Self> {
        let mut counts: Vec<usize> = lane_counts.into_iter().collect();
        counts.sort_unstable();
        counts.dedup();
        if counts.is_empty() {
            return Err(Error::EmptyModelSet("no lane counts given".into()));
        }
        let models = counts
            .iter()
            .map(|l| build_transition(*l, params))
            .collect::<Result<Vec<_>>>()?;
        let beliefs = vec![None; models.len()];
        Ok(Self { models, beliefs })
    }

    /// Bank with only the map's model active, starting from a uniform belief.
    pub fn start(
        lane_counts: impl IntoIterator<Item = usize>,
        params: TransitionParams,
        hint: MapHint,
    ) -> Result<Self> {
        let mut bank = Self::new(lane_counts, params)?;
        let idx = bank.index_of(hint.lanes)?;
        bank.beliefs[idx] = Some(Belief::uniform(bank.models[idx].state_count()));
        Ok(bank)
    }

    pub fn models(&self) -> &[LaneHmm] {
        &self.models
    }

    pub fn index_of(&self, lanes: usize) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m.lane_count() == lanes)
            .ok_or_else(|| Error::InvalidParameter(format!("no {lanes}-lane model in the bank")))
    }

    pub fn belief(&self, lanes: usize) -> Option<&Belief> {
        self.index_of(lanes).ok().and_then(|i| self.beliefs[i].as_ref())
    }

    pub fn is_active(&self, lanes: usize) -> bool {
        self.belief(lanes).is_some()
    }

    /// Lane counts of the active models, ascending.
    pub fn active(&self) -> Vec<usize> {
        self.iter_active().map(|(m, _)| m.lane_count()).collect()
    }

    /// Lane counts of the inactive models, ascending.
    pub fn inactive(&self) -> Vec<usize> {
        self.models
            .iter()
            .zip(&self.beliefs)
            .filter(|(_, b)| b.is_none())
            .map(|(m, _)| m.lane_count())
            .collect()
    }

    pub fn iter_active(&self) -> impl Iterator<Item = (&LaneHmm, &Belief)> {
        self.models
            .iter()
            .zip(&self.beliefs)
            .filter_map(|(m, b)| b.as_ref().map(|b| (m, b)))
    }

    /// Replaces the belief of a model, activating it.
    pub fn set_belief(&mut self, lanes: usize, belief: Belief) -> Result<()> {
        let idx = self.index_of(lanes)?;
        let n = self.models[idx].state_count();
        if belief.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: belief.len(),
            });
        }
        self.beliefs[idx] = Some(belief);
        Ok(())
    }

    pub fn deactivate(&mut self, lanes: usize) -> Result<()> {
        let idx = self.index_of(lanes)?;
        self.beliefs[idx] = None;
        Ok(())
    }

    fn check_hint(&self, hint: MapHint) -> Result<usize> {
        self.index_of(hint.lanes)
    }

    /// Entropies of the active models.
    pub fn entropies(&self) -> Vec<ModelEntropy> {
        self.iter_active()
            .map(|(m, b)| {
                let h = normalized_entropy(b);
                ModelEntropy {
                    lanes: m.lane_count(),
                    value: h.value,
                    degenerate: h.degenerate,
                }
            })
            .collect()
    }

    /// Active-model entropies plus the map's model at entropy 1 when it is
    /// inactive (it carries no belief, which is maximal uncertainty).
    pub fn entropies_with_map_model(&self, hint: MapHint) -> Vec<ModelEntropy> {
        let mut out = self.entropies();
        if !out.iter().any(|e| e.lanes == hint.lanes) {
            out.push(ModelEntropy {
                lanes: hint.lanes,
                value: 1.0,
                degenerate: hint.lanes == 1,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelEntropy {
    pub lanes: usize,
    pub value: f64,
    /// Single-state model; its entropy is pinned to 0 and carries no
    /// positional information.
    pub degenerate: bool,
}

/// Map-conditioned prior `alpha * 2^(-|n_u - n_map| / 2)` over state counts,
/// normalized over the whole universe.
pub fn model_prior(lanes: usize, hint: MapHint, bank: &ModelBank) -> Result<f64> {
    bank.check_hint(hint)?;
    bank.index_of(lanes)?;
    let n_map = hmm::state_count_for(hint.lanes) as f64;
    let raw = |l: usize| 2f64.powf(-((hmm::state_count_for(l) as f64 - n_map) / 2.0).abs());
    let total: f64 = bank.models.iter().map(|m| raw(m.lane_count())).sum();
    Ok(raw(lanes) / total)
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().cloned().fold(0.0, f64::max)
}

/// Prior times the best single-state likelihood of the frame.
pub fn model_likelihood(
    lanes: usize,
    frame: &ObservationFrame,
    hint: MapHint,
    bank: &ModelBank,
    sensor: &SensorModel,
) -> Result<f64> {
    Ok(model_prior(lanes, hint, bank)? * max_of(&sensor.likelihoods(lanes, frame)?))
}

/// Per-model evaluation of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub lanes: usize,
    pub likelihood: f64,
}

fn closer_to_map(a: usize, b: usize, hint: MapHint) -> Ordering {
    a.abs_diff(hint.lanes)
        .cmp(&b.abs_diff(hint.lanes))
        .then(a.cmp(&b))
}

/// Ranks models by likelihood and admits them in order: the best always,
/// the rest while fewer than `kappa` are admitted and their likelihood ratio
/// to the best exceeds `t_active`. Returns lane counts of the admitted set.
pub fn select_models(scores: &[ModelScore], hint: MapHint, cfg: &LmsConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(Error::EmptyModelSet("no models to select from".into()));
    }
    let mut ranked: Vec<&ModelScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.likelihood
            .total_cmp(&a.likelihood)
            .then(closer_to_map(a.lanes, b.lanes, hint))
    });
    let best = ranked[0].likelihood;
    let mut admitted = Vec::new();
    for s in ranked {
        if admitted.is_empty() {
            admitted.push(s.lanes);
        } else if admitted.len() < cfg.kappa && s.likelihood / best > cfg.t_active {
            admitted.push(s.lanes);
        }
    }
    admitted.sort_unstable();
    Ok(admitted)
}

/// Most certain active belief, preferring informative (multi-state) models.
fn donor(bank: &ModelBank, hint: MapHint) -> Option<(usize, Belief)> {
    bank.iter_active()
        .map(|(m, b)| (m.lane_count(), b, normalized_entropy(b)))
        .min_by(|a, b| {
            a.2.degenerate
                .cmp(&b.2.degenerate)
                .then(cmp_entropy(a.2.value, b.2.value))
                .then(closer_to_map(a.0, b.0, hint))
        })
        .map(|(l, b, _)| (l, b.clone()))
}

/// Initial belief for a model of `lanes` lanes transferred from `source`.
pub fn transfer_belief(source: &Belief, lanes: usize, how: BeliefTransfer) -> Result<Belief> {
    let beta = SimplexDist::from(source);
    let target = hmm::state_count_for(lanes);
    let out = match how {
        BeliefTransfer::Eemd => {
            let n = beta.dim().max(target);
            let small = beta.dim().min(target);
            let prior = MappingPrior::left_right(small, n)?;
            minimize_eemd(&beta, target, &prior, &GroundMetric::unit(n))?
        }
        BeliefTransfer::Baseline(strategy) => baseline_init(strategy, &beta, target)?,
    };
    Belief::from_mass(out.into_weights())
}

/// Builds the next bank from the selected lane counts: beliefs of models
/// that stay active are copied, new ones are transferred from the donor.
fn rebuild(bank: &ModelBank, selected: &[usize], hint: MapHint, cfg: &LmsConfig) -> Result<ModelBank> {
    let source = donor(bank, hint);
    let mut next = ModelBank {
        models: bank.models.clone(),
        beliefs: vec![None; bank.models.len()],
    };
    for lanes in selected {
        let belief = match bank.belief(*lanes) {
            Some(b) => b.clone(),
            None => match &source {
                Some((_, b)) => transfer_belief(b, *lanes, cfg.transfer)?,
                None => Belief::uniform(hmm::state_count_for(*lanes)),
            },
        };
        next.set_belief(*lanes, belief)?;
    }
    Ok(next)
}

/// Likely model set selection for one frame.
pub fn likely_model_set(
    bank: &ModelBank,
    frame: &ObservationFrame,
    hint: MapHint,
    cfg: &LmsConfig,
    sensor: &SensorModel,
) -> Result<ModelBank> {
    let scores = bank
        .models
        .iter()
        .map(|m| {
            Ok(ModelScore {
                lanes: m.lane_count(),
                likelihood: model_likelihood(m.lane_count(), frame, hint, bank, sensor)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let selected = select_models(&scores, hint, cfg)?;
    rebuild(bank, &selected, hint, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub bank: ModelBank,
    pub scores: Vec<ModelScore>,
    pub entropies: Vec<ModelEntropy>,
}

/// Selection, belief transfer and one forward update per active model.
pub fn step(
    bank: &ModelBank,
    frame: &ObservationFrame,
    hint: MapHint,
    cfg: &LmsConfig,
    sensor: &SensorModel,
) -> Result<StepOutcome> {
    frame.validate()?;
    bank.check_hint(hint)?;
    let per_model: Vec<Vec<f64>> = bank
        .models
        .iter()
        .map(|m| sensor.likelihoods(m.lane_count(), frame))
        .collect::<Result<_>>()?;
    let scores: Vec<ModelScore> = bank
        .models
        .iter()
        .zip(&per_model)
        .map(|(m, lik)| {
            Ok(ModelScore {
                lanes: m.lane_count(),
                likelihood: model_prior(m.lane_count(), hint, bank)? * max_of(lik),
            })
        })
        .collect::<Result<_>>()?;
    let selected = select_models(&scores, hint, cfg)?;
    let mut next = rebuild(bank, &selected, hint, cfg)?;
    for (idx, lik) in per_model.iter().enumerate() {
        if let Some(belief) = next.beliefs[idx].take() {
            next.beliefs[idx] = Some(hmm::forward_update(&next.models[idx], &belief, lik)?);
        }
    }
    let entropies = next.entropies();
    Ok(StepOutcome {
        bank: next,
        scores,
        entropies,
    })
}

/// Outcome of comparing the map's model against the alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discrepancy {
    Consistent,
    MapError { best_lanes: usize },
}

fn lowest_entropy(entropies: &[ModelEntropy], hint: MapHint) -> Option<ModelEntropy> {
    let informative: Vec<&ModelEntropy> = entropies.iter().filter(|e| !e.degenerate).collect();
    let pool: Vec<&ModelEntropy> = if informative.is_empty() {
        entropies.iter().collect()
    } else {
        informative
    };
    pool.into_iter()
        .min_by(|a, b| cmp_entropy(a.value, b.value).then(closer_to_map(a.lanes, b.lanes, hint)))
        .copied()
}

/// Flags the map when its model's entropy exceeds the lowest entropy by more
/// than `ratio_threshold` and the lowest belongs to another model.
pub fn detect_discrepancy(
    entropies: &[ModelEntropy],
    hint: MapHint,
    ratio_threshold: f64,
) -> Result<Discrepancy> {
    if !(ratio_threshold > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "entropy ratio threshold must exceed 1, got {ratio_threshold}"
        )));
    }
    let map_entropy = entropies
        .iter()
        .find(|e| e.lanes == hint.lanes)
        .ok_or_else(|| Error::InvalidParameter("map model has no entropy".into()))?;
    let best = lowest_entropy(entropies, hint).expect("non-empty");
    if best.lanes == hint.lanes || map_entropy.value == 0.0 {
        return Ok(Discrepancy::Consistent);
    }
    // best.value == 0 with a positive map entropy gives an infinite ratio
    if map_entropy.value > ratio_threshold * best.value {
        Ok(Discrepancy::MapError {
            best_lanes: best.lanes,
        })
    } else {
        Ok(Discrepancy::Consistent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub lanes: usize,
    pub state: usize,
    pub belief: f64,
    /// Every state tied with the maximum belief.
    pub argmax_set: Vec<usize>,
}

/// Most likely state of the lowest-entropy active model. Entropy ties go to
/// the map's model, then to the smaller model.
pub fn localize(bank: &ModelBank, hint: MapHint) -> Result<Localization> {
    let best = lowest_entropy(&bank.entropies(), hint)
        .ok_or_else(|| Error::EmptyModelSet("no active model".into()))?;
    let belief = bank.belief(best.lanes).expect("active");
    let state = belief.argmax();
    Ok(Localization {
        lanes: best.lanes,
        state,
        belief: belief.weights()[state],
        argmax_set: belief.argmax_set(BELIEF_TIE_TOL),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalogConfig {
    /// Transition mass between any two states of different models.
    pub t_m: f64,
}

/// One HMM over the union of every model's states: each model's chain on
/// the block diagonal and `t_m` everywhere off it, rows renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogHmm {
    /// `(lane count, first state index, state count)` per block.
    pub blocks: Vec<(usize, usize, usize)>,
    size: usize,
    transition: Vec<f64>,
}

impl AnalogHmm {
    pub fn state_count(&self) -> usize {
        self.size
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.size + to]
    }

    /// Dense forward update over the joint state space.
    pub fn forward_update(&self, belief: &[f64], likelihoods: &[f64]) -> Result<Vec<f64>> {
        for len in [belief.len(), likelihoods.len()] {
            if len != self.size {
                return Err(Error::DimensionMismatch {
                    expected: self.size,
                    actual: len,
                });
            }
        }
        let mut out = vec![0.0; self.size];
        for (i, b) in belief.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += b * self.transition(i, j);
            }
        }
        out.iter_mut().zip(likelihoods).for_each(|(o, l)| *o *= l);
        let total: f64 = out.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroEvidence);
        }
        out.iter_mut().for_each(|o| *o /= total);
        Ok(out)
    }
}

pub fn build_analog(bank: &ModelBank, cfg: AnalogConfig) -> Result<AnalogHmm> {
    if !(0.0..=1.0).contains(&cfg.t_m) {
        return Err(Error::InvalidParameter(format!("t_m {} outside [0, 1]", cfg.t_m)));
    }
    let mut blocks = Vec::new();
    let mut offset = 0;
    for m in &bank.models {
        blocks.push((m.lane_count(), offset, m.state_count()));
        offset += m.state_count();
    }
    let size = offset;
    let mut transition = vec![cfg.t_m; size * size];
    for ((_, start, n), m) in blocks.iter().zip(&bank.models) {
        for i in 0..*n {
            for j in 0..*n {
                transition[(start + i) * size + start + j] = m.transition(i, j);
            }
        }
    }
    for row in transition.chunks_mut(size) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    Ok(AnalogHmm {
        blocks,
        size,
        transition,
    })
}
