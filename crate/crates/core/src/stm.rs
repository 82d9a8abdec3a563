//! Spatio-temporal modulation trajectory.
//!
//! A single focus hops around a discretized circle (the contact area) at the
//! STM repetition rate while the circle's center sways sinusoidally along a
//! straight path at the user-controlled movement frequency.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::param_space::HapticParams;
use crate::waveform::{envelope, WaveformSpec};
use crate::Vec3;

/// Absorbs round-off in `t * rate` so a frame timestamp never floors to the previous hop.
const HOP_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StmError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} must be a unit vector")]
    NotUnit(&'static str),
    #[error("path axis must be perpendicular to the plane normal")]
    NotPerpendicular,
    #[error("duration must be positive")]
    EmptyDuration,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StmConfig {
    pub circle_radius_mm: f64,
    pub stm_freq_hz: f64,
    pub step_mm: f64,
    pub path_length_mm: f64,
    pub workspace_origin: Vec3,
    pub path_axis: Vec3,
    pub plane_normal: Vec3,
}

impl Default for StmConfig {
    fn default() -> Self {
        Self {
            circle_radius_mm: 8.0,
            stm_freq_hz: 10.0,
            step_mm: 5.0,
            path_length_mm: 30.0,
            workspace_origin: Vec3::new(0.0, 0.0, 200.0),
            path_axis: Vec3::x(),
            plane_normal: Vec3::z(),
        }
    }
}

impl StmConfig {
    pub fn validate(&self) -> Result<(), StmError> {
        for (name, v) in [
            ("circle_radius_mm", self.circle_radius_mm),
            ("stm_freq_hz", self.stm_freq_hz),
            ("step_mm", self.step_mm),
            ("path_length_mm", self.path_length_mm),
        ] {
            if !(v > 0.0) {
                return Err(StmError::NonPositive(name));
            }
        }
        if (self.path_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(StmError::NotUnit("path_axis"));
        }
        if (self.plane_normal.norm() - 1.0).abs() > 1e-9 {
            return Err(StmError::NotUnit("plane_normal"));
        }
        if self.path_axis.dot(&self.plane_normal).abs() > 1e-9 {
            return Err(StmError::NotPerpendicular);
        }
        Ok(())
    }

    /// In-plane basis: `e1` is the path axis, `e2 = normal x e1`.
    pub fn plane_basis(&self) -> (Vec3, Vec3) {
        (self.path_axis, self.plane_normal.cross(&self.path_axis))
    }

    /// Focus hops per second, `stm_freq * N`.
    pub fn hop_rate_hz(&self) -> f64 {
        self.stm_freq_hz * points_per_revolution(self) as f64
    }
}

/// `round(2 pi r / step)`, at least 3.
pub fn points_per_revolution(cfg: &StmConfig) -> usize {
    let n = (TAU * cfg.circle_radius_mm / cfg.step_mm).round();
    if n.is_finite() {
        (n as usize).max(3)
    } else {
        3
    }
}

/// Arc length between consecutive circle points.
pub fn effective_step(cfg: &StmConfig) -> f64 {
    TAU * cfg.circle_radius_mm / points_per_revolution(cfg) as f64
}

/// Straight-line distance between consecutive circle points.
pub fn chord_step(cfg: &StmConfig) -> f64 {
    2.0 * cfg.circle_radius_mm * (PI / points_per_revolution(cfg) as f64).sin()
}

/// Lateral displacement of the circle center along the path axis.
pub fn center_offset(cfg: &StmConfig, move_freq_hz: f64, t: f64) -> f64 {
    0.5 * cfg.path_length_mm * (TAU * move_freq_hz * t).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusFrame {
    pub t: f64,
    pub position: Vec3,
    pub amplitude: f64,
}

/// Index of the circle point active at time `t`.
pub fn hop_index(cfg: &StmConfig, t: f64) -> usize {
    let n = points_per_revolution(cfg);
    let hops = (t * cfg.stm_freq_hz * n as f64 + HOP_EPS).floor();
    (hops as i64).rem_euclid(n as i64) as usize
}

pub fn focus_at(cfg: &StmConfig, p: &HapticParams, spec: &WaveformSpec, t: f64) -> FocusFrame {
    let n = points_per_revolution(cfg);
    let k = hop_index(cfg, t);
    let angle = TAU * k as f64 / n as f64;
    let (e1, e2) = cfg.plane_basis();
    let position = cfg.workspace_origin
        + center_offset(cfg, p.move_freq_hz, t) * cfg.path_axis
        + cfg.circle_radius_mm * (angle.cos() * e1 + angle.sin() * e2);
    FocusFrame {
        t,
        position,
        amplitude: envelope(spec, t),
    }
}

/// Frames on the global hop grid `i / hop_rate` that fall in `[t0, t0 + duration)`.
pub fn schedule(
    cfg: &StmConfig,
    p: &HapticParams,
    spec: &WaveformSpec,
    t0: f64,
    duration: f64,
) -> Result<Vec<FocusFrame>, StmError> {
    cfg.validate()?;
    if !(duration > 0.0) {
        return Err(StmError::EmptyDuration);
    }
    let rate = cfg.hop_rate_hz();
    let first = (t0 * rate - HOP_EPS).ceil() as i64;
    let end = ((t0 + duration) * rate - HOP_EPS).ceil() as i64;
    Ok((first..end)
        .map(|i| focus_at(cfg, p, spec, i as f64 / rate))
        .collect())
}

/// Writes frames as CSV with columns `t_s, x_mm, y_mm, z_mm, amplitude`.
pub fn write_schedule_csv<W: Write>(frames: &[FocusFrame], out: W) -> Result<(), StmError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_s", "x_mm", "y_mm", "z_mm", "amplitude"])?;
    for f in frames {
        w.serialize((f.t, f.position.x, f.position.y, f.position.z, f.amplitude))?;
    }
    w.flush()?;
    Ok(())
}
