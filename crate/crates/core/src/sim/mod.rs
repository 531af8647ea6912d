//! Synthetic observation generation, topology-estimation experiments and
//! localization scoring.
//!
//! Randomness comes from ChaCha8 seeded with the episode seed. Each consumer
//! owns a separate ChaCha stream of that seed so adding draws to one channel
//! never shifts another:
//!
//! | stream | consumer |
//! |---|---|
//! | 0 | ground-truth state sequence |
//! | 1 | emit / no-emit decision per timestep |
//! | 2 | lane-line detections and noise |
//! | 3 | vehicle detections and noise |
//! | 4 | topology each emitted frame is drawn from |
//!
//! Grid cells derive their seeds from the base seed and the cell index.

pub mod replay;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{build_transition, state_count_for, state_kind, StateKind, TransitionParams};
use crate::obsmodel::{LaneLineDetection, ObservationFrame, VehicleDetection};
use crate::vsm::{
    self, Discrepancy, Localization, LmsConfig, MapHint, ModelBank, ModelEntropy, SensorModel,
};

const STREAM_TRUTH: u64 = 0;
const STREAM_EMIT: u64 = 1;
const STREAM_LINES: u64 = 2;
const STREAM_VEHICLES: u64 = 3;
const STREAM_TOPOLOGY: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seed of grid cell `index` under `base`.
pub fn cell_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {p} outside [0, 1]")))
    }
}

/// Standard deviations of the simulated detections at `K_sigma = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub line_sigma: f64,
    pub heading_sigma: f64,
    pub vehicle_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            line_sigma: 0.3,
            heading_sigma: 0.1,
            vehicle_sigma: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Probability that an emitted frame is drawn from the true topology.
    pub p_map: f64,
    /// Probability that a timestep emits observations at all.
    pub p_emit: f64,
    /// Variance scale applied to every noise source.
    pub k_sigma: f64,
    pub noise: NoiseModel,
    pub true_lanes: usize,
    /// Lane counts available as wrong topologies.
    pub alternatives: Vec<usize>,
    pub lane_width: f64,
    /// Chance that each lane line of the sampled topology is detected.
    pub line_detect_prob: f64,
    /// Chance that each lane of the sampled topology holds a vehicle.
    pub vehicle_rate: f64,
    /// Vehicles are placed uniformly within this longitudinal distance.
    pub vehicle_range: f64,
    /// Vehicles in the ego's lanes stay at least this far ahead or behind.
    pub overlap_length: f64,
    pub timesteps: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            p_map: 0.9,
            p_emit: 0.9,
            k_sigma: 1.0,
            noise: NoiseModel::default(),
            true_lanes: 3,
            alternatives: (1..=6).collect(),
            lane_width: 3.5,
            line_detect_prob: 1.0,
            vehicle_rate: 0.5,
            vehicle_range: 40.0,
            overlap_length: 5.0,
            timesteps: 1000,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("p_map", self.p_map)?;
        check_probability("p_emit", self.p_emit)?;
        check_probability("line_detect_prob", self.line_detect_prob)?;
        check_probability("vehicle_rate", self.vehicle_rate)?;
        if !(self.k_sigma >= 0.0 && self.k_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("k_sigma = {} must be >= 0", self.k_sigma)));
        }
        for (name, v) in [
            ("line_sigma", self.noise.line_sigma),
            ("heading_sigma", self.noise.heading_sigma),
            ("vehicle_sigma", self.noise.vehicle_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.true_lanes == 0 || self.alternatives.contains(&0) {
            return Err(Error::InvalidParameter("lane counts must be positive".into()));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::InvalidParameter("lane_width must be positive".into()));
        }
        if !(self.vehicle_range > self.overlap_length && self.overlap_length >= 0.0) {
            return Err(Error::InvalidParameter(
                "vehicle_range must exceed overlap_length >= 0".into(),
            ));
        }
        if self.timesteps == 0 {
            return Err(Error::InvalidParameter("timesteps must be at least 1".into()));
        }
        Ok(())
    }

    fn wrong_topologies(&self) -> Vec<usize> {
        let mut alts: Vec<usize> = self
            .alternatives
            .iter()
            .copied()
            .filter(|l| *l != self.true_lanes)
            .collect();
        alts.sort_unstable();
        alts.dedup();
        alts
    }
}

/// Independent random sources of one episode.
#[derive(Debug, Clone)]
pub struct SimRng {
    pub emit: ChaCha8Rng,
    pub lines: ChaCha8Rng,
    pub vehicles: ChaCha8Rng,
    pub topology: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            emit: stream(seed, STREAM_EMIT),
            lines: stream(seed, STREAM_LINES),
            vehicles: stream(seed, STREAM_VEHICLES),
            topology: stream(seed, STREAM_TOPOLOGY),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    std * z
}

/// Topology a frame is sampled from: the truth with probability `p_map`,
/// otherwise a uniformly drawn wrong one. The ego keeps its distance to the
/// right road edge, clamped to the sampled road.
fn frame_topology(cfg: &SimConfig, state: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let alts = cfg.wrong_topologies();
    if alts.is_empty() || rng.random_bool(cfg.p_map) {
        return (cfg.true_lanes, state);
    }
    let lanes = alts[rng.random_range(0..alts.len())];
    (lanes, state.min(state_count_for(lanes) - 1))
}

fn ego_offset(lane_width: f64, state: usize) -> f64 {
    (state as f64 + 1.0) * lane_width / 2.0
}

fn sample_lines(cfg: &SimConfig, lanes: usize, state: usize, rng: &mut ChaCha8Rng) -> Vec<LaneLineDetection> {
    let y = ego_offset(cfg.lane_width, state);
    let scale = cfg.k_sigma.sqrt();
    let mut out = Vec::new();
    for j in 0..=lanes {
        if !rng.random_bool(cfg.line_detect_prob) {
            continue;
        }
        let offset = j as f64 * cfg.lane_width - y + normal(rng, scale * cfg.noise.line_sigma);
        let heading = normal(rng, scale * cfg.noise.heading_sigma);
        out.push(LaneLineDetection {
            lateral_offset: offset,
            heading,
            confidence: 1.0,
        });
    }
    out
}

fn sample_vehicles(cfg: &SimConfig, lanes: usize, state: usize, rng: &mut ChaCha8Rng) -> Vec<VehicleDetection> {
    let y = ego_offset(cfg.lane_width, state);
    let (lo, hi) = match state_kind(state) {
        StateKind::LaneCenter(k) => (k, k),
        StateKind::Switching(k) => (k, k + 1),
    };
    let scale = cfg.k_sigma.sqrt();
    let mut out = Vec::new();
    for k in 0..lanes {
        if !rng.random_bool(cfg.vehicle_rate) {
            continue;
        }
        let lon = if (lo..=hi).contains(&k) {
            let d = rng.random_range(cfg.overlap_length..cfg.vehicle_range);
            if rng.random_bool(0.5) {
                d
            } else {
                -d
            }
        } else {
            rng.random_range(-cfg.vehicle_range..cfg.vehicle_range)
        };
        let center = (k as f64 + 0.5) * cfg.lane_width - y;
        out.push(VehicleDetection {
            rel_lateral: center + normal(rng, scale * cfg.noise.vehicle_sigma),
            rel_longitudinal: lon,
        });
    }
    out
}

/// One simulated frame with the ego in `true_state` of the true topology.
pub fn generate_frame(
    cfg: &SimConfig,
    true_state: usize,
    timestamp: f64,
    rng: &mut SimRng,
) -> Result<ObservationFrame> {
    Ok(generate_sourced_frame(cfg, true_state, timestamp, rng)?.0)
}

/// Like [`generate_frame`], also returning the lane count the frame was
/// drawn from (`None` for an empty frame).
pub fn generate_sourced_frame(
    cfg: &SimConfig,
    true_state: usize,
    timestamp: f64,
    rng: &mut SimRng,
) -> Result<(ObservationFrame, Option<usize>)> {
    if true_state >= state_count_for(cfg.true_lanes) {
        return Err(Error::StateOutOfRange {
            index: true_state,
            state_count: state_count_for(cfg.true_lanes),
        });
    }
    if !rng.emit.random_bool(cfg.p_emit) {
        return Ok((ObservationFrame::empty(timestamp), None));
    }
    let (lanes, state) = frame_topology(cfg, true_state, &mut rng.topology);
    let frame = ObservationFrame {
        timestamp,
        lane_lines: sample_lines(cfg, lanes, state, &mut rng.lines),
        vehicles: sample_vehicles(cfg, lanes, state, &mut rng.vehicles),
    };
    Ok((frame, Some(lanes)))
}

/// Markov-chain state sequence of length `timesteps` from a uniform start.
pub fn simulate_truth(
    lanes: usize,
    params: TransitionParams,
    timesteps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let hmm = build_transition(lanes, params)?;
    let n = hmm.state_count();
    let mut state = rng.random_range(0..n);
    let mut out = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        if t > 0 {
            let u: f64 = rng.random();
            let row = hmm.row(state);
            let mut acc = 0.0;
            let mut next = n - 1;
            for (j, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            state = next;
        }
        out.push(state);
    }
    Ok(out)
}

/// Everything the estimator needs besides the frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Lane counts of the model universe.
    pub universe: Vec<usize>,
    pub transition: TransitionParams,
    pub lms: LmsConfig,
    pub sensor: SensorModel,
    /// Entropy ratio above which the map is flagged.
    pub ratio_threshold: f64,
    /// States within this factor of the best frame likelihood are voted for.
    pub vote_factor: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            universe: (1..=6).collect(),
            transition: TransitionParams::default(),
            lms: LmsConfig::default(),
            sensor: SensorModel::default(),
            ratio_threshold: 1.5,
            vote_factor: 0.9,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.universe.is_empty() || self.universe.contains(&0) {
            return Err(Error::InvalidParameter("universe needs positive lane counts".into()));
        }
        self.transition.validate()?;
        self.lms.validate()?;
        self.sensor.params.validate()?;
        if !(self.sensor.lane_width > 0.0) {
            return Err(Error::InvalidParameter("lane width must be positive".into()));
        }
        if !(self.ratio_threshold > 1.0) {
            return Err(Error::InvalidParameter("ratio_threshold must exceed 1".into()));
        }
        if !(self.vote_factor > 0.0 && self.vote_factor <= 1.0) {
            return Err(Error::InvalidParameter("vote_factor must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Whether a frame is too uninformative to score: no detections, or
/// detections that vote for at least half of the map model's states.
pub fn is_missing_observation(frame: &ObservationFrame, map_likelihoods: &[f64], vote_factor: f64) -> bool {
    if frame.is_empty() {
        return true;
    }
    let best = map_likelihoods.iter().cloned().fold(0.0, f64::max);
    let votes = map_likelihoods.iter().filter(|l| **l >= vote_factor * best).count();
    2 * votes >= map_likelihoods.len()
}

/// Filter output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackStep {
    pub active: Vec<usize>,
    /// Active-model entropies plus the map model's (1 when inactive).
    pub entropies: Vec<ModelEntropy>,
    pub localization: Localization,
    pub discrepancy: Discrepancy,
    pub missing: bool,
}

impl TrackStep {
    /// The model of `lanes` lanes is active and its entropy is strictly
    /// below that of every other active informative model.
    pub fn topology_is(&self, lanes: usize) -> bool {
        let Some(own) = self
            .entropies
            .iter()
            .find(|e| e.lanes == lanes && self.active.contains(&lanes))
        else {
            return false;
        };
        self.entropies
            .iter()
            .filter(|e| e.lanes != lanes && !e.degenerate && self.active.contains(&e.lanes))
            .all(|e| own.value < e.value)
    }

    /// The true state is among the maximum-belief states. State indices
    /// count from the right road edge, so they agree across models.
    pub fn localized_correctly(&self, truth: usize) -> bool {
        self.localization.argmax_set.contains(&truth)
    }
}

/// Runs the model bank over a stream of frames.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: FilterConfig,
    hint: MapHint,
    bank: ModelBank,
}

impl Tracker {
    pub fn new(cfg: FilterConfig, hint: MapHint) -> Result<Self> {
        cfg.validate()?;
        let bank = ModelBank::start(cfg.universe.iter().copied(), cfg.transition, hint)?;
        Ok(Self { cfg, hint, bank })
    }

    pub fn bank(&self) -> &ModelBank {
        &self.bank
    }

    pub fn step(&mut self, frame: &ObservationFrame) -> Result<TrackStep> {
        let out = vsm::step(&self.bank, frame, self.hint, &self.cfg.lms, &self.cfg.sensor)?;
        self.bank = out.bank;
        let map_lik = self.cfg.sensor.likelihoods(self.hint.lanes, frame)?;
        let entropies = self.bank.entropies_with_map_model(self.hint);
        Ok(TrackStep {
            active: self.bank.active(),
            discrepancy: vsm::detect_discrepancy(&entropies, self.hint, self.cfg.ratio_threshold)?,
            localization: vsm::localize(&self.bank, self.hint)?,
            entropies,
            missing: is_missing_observation(frame, &map_lik, self.cfg.vote_factor),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub truth: usize,
    pub frame: ObservationFrame,
    /// Lane count the frame was drawn from, `None` when nothing was emitted.
    pub source_lanes: Option<usize>,
    pub step: TrackStep,
    pub topology_correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub timesteps: usize,
    pub topology_accuracy: f64,
    /// `None` when every timestep was a missing observation.
    pub localization_accuracy: Option<f64>,
    pub missing_obs_fraction: f64,
    pub discrepancy_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub records: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Simulates one episode and tracks it with the map hinting `map_lanes`.
pub fn run_episode(sim: &SimConfig, filter: &FilterConfig, map_lanes: usize) -> Result<EpisodeResult> {
    sim.validate()?;
    let truth = simulate_truth(
        sim.true_lanes,
        filter.transition,
        sim.timesteps,
        &mut stream(sim.seed, STREAM_TRUTH),
    )?;
    let mut rng = SimRng::new(sim.seed);
    let mut tracker = Tracker::new(filter.clone(), MapHint { lanes: map_lanes })?;
    let mut records = Vec::with_capacity(sim.timesteps);
    for (t, state) in truth.iter().enumerate() {
        let (frame, source_lanes) = generate_sourced_frame(sim, *state, t as f64 * 0.1, &mut rng)?;
        let step = tracker.step(&frame)?;
        records.push(StepRecord {
            truth: *state,
            source_lanes,
            topology_correct: step.topology_is(sim.true_lanes),
            frame,
            step,
        });
    }
    let summary = summarize(records.iter().map(|r| (&r.step, Some(r.truth), r.topology_correct)));
    Ok(EpisodeResult { records, summary })
}

pub(crate) fn summarize<'a>(
    steps: impl Iterator<Item = (&'a TrackStep, Option<usize>, bool)>,
) -> EpisodeSummary {
    let (mut total, mut topo, mut missing, mut flagged, mut scored, mut correct) = (0, 0, 0, 0, 0, 0);
    for (step, truth, topology_correct) in steps {
        total += 1;
        topo += usize::from(topology_correct);
        flagged += usize::from(matches!(step.discrepancy, Discrepancy::MapError { .. }));
        if step.missing {
            missing += 1;
        } else if let Some(truth) = truth {
            scored += 1;
            correct += usize::from(step.localized_correctly(truth));
        }
    }
    EpisodeSummary {
        timesteps: total,
        topology_accuracy: fraction(topo, total),
        localization_accuracy: (scored > 0).then(|| fraction(correct, scored)),
        missing_obs_fraction: fraction(missing, total),
        discrepancy_fraction: fraction(flagged, total),
    }
}

/// Axes of the topology-estimation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub p_map: Vec<f64>,
    pub p_emit: Vec<f64>,
    pub k_sigma: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            p_map: vec![0.9, 0.8, 0.7, 0.6],
            p_emit: vec![0.9, 0.7, 0.5],
            k_sigma: vec![1.0, 2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub p_map: f64,
    pub p_emit: f64,
    pub k_sigma: f64,
    pub accuracy: f64,
    pub timesteps: usize,
    pub seed: u64,
}

/// Topology accuracy for every `(p_map, p_emit, k_sigma)` cell, ordered by
/// p_map, then p_emit, then k_sigma. `base` supplies every other setting;
/// the map hints the true topology.
pub fn run_grid(grid: &GridSpec, base: &SimConfig, filter: &FilterConfig) -> Result<Vec<GridCell>> {
    let mut cells = Vec::new();
    for pm in &grid.p_map {
        for pe in &grid.p_emit {
            for k in &grid.k_sigma {
                cells.push((*pm, *pe, *k));
            }
        }
    }
    cells
        .par_iter()
        .enumerate()
        .map(|(i, (pm, pe, k))| {
            let sim = SimConfig {
                p_map: *pm,
                p_emit: *pe,
                k_sigma: *k,
                seed: cell_seed(base.seed, i),
                ..base.clone()
            };
            let result = run_episode(&sim, filter, sim.true_lanes)?;
            Ok(GridCell {
                p_map: *pm,
                p_emit: *pe,
                k_sigma: *k,
                accuracy: result.summary.topology_accuracy,
                timesteps: sim.timesteps,
                seed: sim.seed,
            })
        })
        .collect()
}

/// CSV rendering with header `P_M,P_E,K_sigma,accuracy,timesteps,seed`.
pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut out = String::from("P_M,P_E,K_sigma,accuracy,timesteps,seed\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{:.4},{},{}\n",
            c.p_map, c.p_emit, c.k_sigma, c.accuracy, c.timesteps, c.seed
        ));
    }
    out
}
