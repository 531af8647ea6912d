//! Per-state observation likelihoods for lane-line and vehicle detections.
//!
//! Lateral coordinates are ego-relative in meters, positive to the left. The
//! road's right edge sits at lateral position 0 and the ego of state `i` sits
//! at `(i + 1) * lane_width / 2`, so lane lines are expected at
//! `j * lane_width - ego` for `j = 0..=L` and other vehicles near the lane
//! centers `(k + 0.5) * lane_width - ego`.
//!
//! Each expected line (or lane center) contributes one unit-weight Gaussian
//! kernel. A detection's density is mixed with an outlier floor as
//! `(1 - eps) * density + eps`, raised to the detection confidence, and
//! detections combine by product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{state_count_for, state_kind, StateKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneGeometry {
    pub lane_width: f64,
    pub lane_count: usize,
}

impl LaneGeometry {
    pub fn new(lane_width: f64, lane_count: usize) -> Result<Self> {
        if !(lane_width.is_finite() && lane_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lane width must be positive, got {lane_width}"
            )));
        }
        if lane_count == 0 {
            return Err(Error::InvalidParameter("lane count must be at least 1".into()));
        }
        Ok(Self {
            lane_width,
            lane_count,
        })
    }

    pub fn state_count(&self) -> usize {
        state_count_for(self.lane_count)
    }

    /// Lateral position of the ego in state `index`, measured from the right
    /// road edge.
    pub fn ego_position(&self, index: usize) -> f64 {
        (index as f64 + 1.0) * self.lane_width / 2.0
    }

    /// Ego-relative offsets of every lane line (right edge first).
    pub fn expected_line_offsets(&self, index: usize) -> Vec<f64> {
        let ego = self.ego_position(index);
        (0..=self.lane_count)
            .map(|j| j as f64 * self.lane_width - ego)
            .collect()
    }

    /// Ego-relative offsets of every lane center (rightmost lane first).
    pub fn expected_lane_centers(&self, index: usize) -> Vec<f64> {
        let ego = self.ego_position(index);
        (0..self.lane_count)
            .map(|k| (k as f64 + 0.5) * self.lane_width - ego)
            .collect()
    }

    fn check_state(&self, index: usize) -> Result<()> {
        if index >= self.state_count() {
            return Err(Error::StateOutOfRange {
                index,
                state_count: self.state_count(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneLineDetection {
    #[serde(rename = "offset_m")]
    pub lateral_offset: f64,
    #[serde(rename = "heading_rad")]
    pub heading: f64,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDetection {
    #[serde(rename = "rel_lat_m")]
    pub rel_lateral: f64,
    #[serde(rename = "rel_lon_m")]
    pub rel_longitudinal: f64,
}

/// Detections gathered in one timestep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationFrame {
    pub timestamp: f64,
    pub lane_lines: Vec<LaneLineDetection>,
    pub vehicles: Vec<VehicleDetection>,
}

impl ObservationFrame {
    pub fn empty(timestamp: f64) -> Self {
        Self {
            timestamp,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lane_lines.is_empty() && self.vehicles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.timestamp.is_finite() {
            return Err(Error::InvalidParameter("non-finite timestamp".into()));
        }
        for line in &self.lane_lines {
            if !(line.lateral_offset.is_finite() && line.heading.is_finite()) {
                return Err(Error::InvalidParameter("non-finite lane line".into()));
            }
            if !(0.0..=1.0).contains(&line.confidence) {
                return Err(Error::InvalidParameter(format!(
                    "lane line confidence {} outside [0, 1]",
                    line.confidence
                )));
            }
        }
        for v in &self.vehicles {
            if !(v.rel_lateral.is_finite() && v.rel_longitudinal.is_finite()) {
                return Err(Error::InvalidParameter("non-finite vehicle".into()));
            }
        }
        Ok(())
    }

    /// The same frame seen in a mirror: lateral offsets and headings negated.
    pub fn mirrored(&self) -> Self {
        Self {
            timestamp: self.timestamp,
            lane_lines: self
                .lane_lines
                .iter()
                .map(|l| LaneLineDetection {
                    lateral_offset: -l.lateral_offset,
                    heading: -l.heading,
                    confidence: l.confidence,
                })
                .collect(),
            vehicles: self
                .vehicles
                .iter()
                .map(|v| VehicleDetection {
                    rel_lateral: -v.rel_lateral,
                    rel_longitudinal: v.rel_longitudinal,
                })
                .collect(),
        }
    }

    /// Every detection moved `delta` meters to the left.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.lane_lines
            .iter_mut()
            .for_each(|l| l.lateral_offset += delta);
        out.vehicles.iter_mut().for_each(|v| v.rel_lateral += delta);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsParams {
    /// Lateral standard deviation of a lane-line kernel (m).
    pub line_sigma: f64,
    /// Heading standard deviation of a lane-line kernel (rad).
    pub heading_sigma: f64,
    /// Lateral standard deviation of a vehicle kernel (m).
    pub vehicle_sigma: f64,
    /// Mixing weight of the uniform outlier component.
    pub outlier_floor: f64,
    /// Vehicles closer than this longitudinally cannot share a lane with the
    /// ego (they would overlap it).
    pub overlap_length: f64,
}

impl Default for ObsParams {
    fn default() -> Self {
        Self {
            line_sigma: 0.3,
            heading_sigma: 0.1,
            vehicle_sigma: 0.8,
            outlier_floor: 0.2,
            overlap_length: 5.0,
        }
    }
}

impl ObsParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.line_sigma) || !positive(self.heading_sigma) || !positive(self.vehicle_sigma)
        {
            return Err(Error::InvalidParameter("sigmas must be positive".into()));
        }
        if !(self.outlier_floor > 0.0 && self.outlier_floor < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "outlier floor {} outside (0, 1)",
                self.outlier_floor
            )));
        }
        if !(self.overlap_length.is_finite() && self.overlap_length >= 0.0) {
            return Err(Error::InvalidParameter("overlap length must be >= 0".into()));
        }
        Ok(())
    }

    fn with_floor(&self, density: f64) -> f64 {
        (1.0 - self.outlier_floor) * density + self.outlier_floor
    }
}

fn gaussian(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Likelihood of the frame's lane-line detections given state `index`.
pub fn line_likelihood(
    index: usize,
    frame: &ObservationFrame,
    geom: &LaneGeometry,
    params: &ObsParams,
) -> Result<f64> {
    geom.check_state(index)?;
    if frame.lane_lines.is_empty() {
        return Ok(1.0);
    }
    let expected = geom.expected_line_offsets(index);
    Ok(frame
        .lane_lines
        .iter()
        .map(|line| {
            let lateral: f64 = expected
                .iter()
                .map(|e| gaussian(line.lateral_offset, *e, params.line_sigma))
                .sum();
            let density = lateral * gaussian(line.heading, 0.0, params.heading_sigma);
            params.with_floor(density).powf(line.confidence)
        })
        .product())
}

fn occupied_lanes(index: usize) -> (usize, usize) {
    match state_kind(index) {
        StateKind::LaneCenter(k) => (k, k),
        StateKind::Switching(k) => (k, k + 1),
    }
}

/// Likelihood of the frame's vehicle detections given state `index`.
///
/// Only lanes that exist in the hypothesized road carry kernels, so a vehicle
/// beyond the road edge is explained by the outlier floor alone.
pub fn vehicle_likelihood(
    index: usize,
    frame: &ObservationFrame,
    geom: &LaneGeometry,
    params: &ObsParams,
) -> Result<f64> {
    geom.check_state(index)?;
    if frame.vehicles.is_empty() {
        return Ok(1.0);
    }
    let centers = geom.expected_lane_centers(index);
    let (lo, hi) = occupied_lanes(index);
    Ok(frame
        .vehicles
        .iter()
        .map(|v| {
            let overlapping = v.rel_longitudinal.abs() < params.overlap_length;
            let density: f64 = centers
                .iter()
                .enumerate()
                .filter(|(k, _)| !(overlapping && (lo..=hi).contains(k)))
                .map(|(_, c)| gaussian(v.rel_lateral, *c, params.vehicle_sigma))
                .sum();
            params.with_floor(density)
        })
        .product())
}

/// Combined per-state likelihoods of every detection in the frame.
pub fn frame_likelihoods(
    state_count: usize,
    frame: &ObservationFrame,
    geom: &LaneGeometry,
    params: &ObsParams,
) -> Result<Vec<f64>> {
    if state_count != geom.state_count() {
        return Err(Error::DimensionMismatch {
            expected: geom.state_count(),
            actual: state_count,
        });
    }
    (0..state_count)
        .map(|i| {
            Ok(line_likelihood(i, frame, geom, params)? * vehicle_likelihood(i, frame, geom, params)?)
        })
        .collect()
}
