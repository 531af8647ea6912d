//! Line-delimited JSON observation logs.
//!
//! One object per timestep:
//! `{"ts": 0.1, "lines": [{"offset_m": 1.7, "heading_rad": 0.0, "conf": 1.0}],
//!   "vehicles": [{"rel_lat_m": -3.5, "rel_lon_m": 12.0}], "truth_state": 2}`.
//! `truth_state` is optional; blank lines are ignored.

use serde::{Deserialize, Serialize};

use super::{
    generate_frame, simulate_truth, stream, summarize, EpisodeSummary, FilterConfig, SimConfig, SimRng,
    Tracker, STREAM_TRUTH,
};
use crate::error::{Error, Result};
use crate::obsmodel::{LaneLineDetection, ObservationFrame, VehicleDetection};
use crate::vsm::{Discrepancy, MapHint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: f64,
    #[serde(default)]
    pub lines: Vec<LaneLineDetection>,
    #[serde(default)]
    pub vehicles: Vec<VehicleDetection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_state: Option<usize>,
}

impl LogRecord {
    pub fn frame(&self) -> ObservationFrame {
        ObservationFrame {
            timestamp: self.ts,
            lane_lines: self.lines.clone(),
            vehicles: self.vehicles.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogIssue {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

/// Parses a log. Malformed records are fatal when `strict`, otherwise they
/// are skipped and reported.
pub fn parse_log(text: &str, strict: bool) -> Result<(Vec<LogRecord>, Vec<LogIssue>)> {
    let mut records: Vec<LogRecord> = Vec::new();
    let mut issues = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<LogRecord>(raw)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                r.frame().validate().map_err(|e| e.to_string())?;
                match records.last() {
                    Some(prev) if r.ts < prev.ts => {
                        Err(format!("timestamp {} precedes {}", r.ts, prev.ts))
                    }
                    _ => Ok(r),
                }
            });
        match parsed {
            Ok(r) => records.push(r),
            Err(message) if strict => {
                return Err(Error::InvalidParameter(format!("line {}: {message}", i + 1)));
            }
            Err(message) => issues.push(LogIssue { line: i + 1, message }),
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidParameter("log has no records".into()));
    }
    Ok((records, issues))
}

pub fn write_log(records: &[LogRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::InvalidParameter(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscrepancyEvent {
    pub ts: f64,
    pub best_lanes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayResult {
    pub map_lanes: usize,
    pub summary: EpisodeSummary,
    pub discrepancy_events: Vec<DiscrepancyEvent>,
}

/// Tracks a log with the map hinting `map_lanes` and scores localization
/// against `truth_state` where present.
pub fn score_replay(records: &[LogRecord], map_lanes: usize, filter: &FilterConfig) -> Result<ReplayResult> {
    let mut tracker = Tracker::new(filter.clone(), MapHint { lanes: map_lanes })?;
    let mut steps = Vec::with_capacity(records.len());
    let mut events = Vec::new();
    for r in records {
        let step = tracker.step(&r.frame())?;
        if let Discrepancy::MapError { best_lanes } = step.discrepancy {
            events.push(DiscrepancyEvent { ts: r.ts, best_lanes });
        }
        let topo = step.topology_is(map_lanes);
        steps.push((step, r.truth_state, topo));
    }
    Ok(ReplayResult {
        map_lanes,
        summary: summarize(steps.iter().map(|(s, t, c)| (s, *t, *c))),
        discrepancy_events: events,
    })
}

/// Synthetic log of `sim` with ground truth annotations.
pub fn generate_log(sim: &SimConfig, filter: &FilterConfig) -> Result<Vec<LogRecord>> {
    sim.validate()?;
    let truth = simulate_truth(
        sim.true_lanes,
        filter.transition,
        sim.timesteps,
        &mut stream(sim.seed, STREAM_TRUTH),
    )?;
    let mut rng = SimRng::new(sim.seed);
    truth
        .iter()
        .enumerate()
        .map(|(t, state)| {
            let f = generate_frame(sim, *state, t as f64 * 0.1, &mut rng)?;
            Ok(LogRecord {
                ts: f.timestamp,
                lines: f.lane_lines,
                vehicles: f.vehicles,
                truth_state: Some(*state),
            })
        })
        .collect()
}
