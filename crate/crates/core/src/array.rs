//! Simulated four-unit ultrasound phased array.
//!
//! Each transducer is modelled as a monopole with `1/d` spreading and no
//! directivity. Focusing assigns every element the phase `k d mod 2 pi`, so
//! all contributions arrive at the target in phase.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{Complex, Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use crate::Vec3;

/// Minimum transducer-to-point distance accepted by the field model.
pub const MIN_DISTANCE_MM: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ArrayError {
    #[error("omitted cell {0} listed twice")]
    DuplicateOmitted(usize),
    #[error("omitted cell {index} outside the {cells}-cell grid")]
    OmittedOutOfGrid { index: usize, cells: usize },
    #[error("grid must have at least one column, one row and a positive pitch")]
    EmptyGrid,
    #[error("array has no units")]
    NoUnits,
    #[error("point is {distance_mm:.3} mm from transducer {index}; at least {MIN_DISTANCE_MM} mm required")]
    Degenerate { index: usize, distance_mm: f64 },
    #[error("phase set has {got} entries for a {expected}-element array")]
    PhaseCount { expected: usize, got: usize },
    #[error("scan resolution and extents must be positive")]
    BadGrid,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcousticConfig {
    pub drive_freq_hz: f64,
    pub speed_of_sound_mps: f64,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            drive_freq_hz: 40_000.0,
            speed_of_sound_mps: 340.0,
        }
    }
}

impl AcousticConfig {
    pub fn wavelength_mm(&self) -> f64 {
        1000.0 * self.speed_of_sound_mps / self.drive_freq_hz
    }

    /// Radians per millimetre.
    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength_mm()
    }
}

/// Placement of one unit: the local grid is rotated by `tilt_deg` about the
/// horizontal axis at azimuth `tilt_axis_deg`, then translated so that local
/// cell (0, 0) sits at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitPlacement {
    pub origin: Vec3,
    pub tilt_deg: f64,
    pub tilt_axis_deg: f64,
}

impl UnitPlacement {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let az = self.tilt_axis_deg.to_radians();
        let axis = Unit::new_normalize(Vec3::new(az.cos(), az.sin(), 0.0));
        UnitQuaternion::from_axis_angle(&axis, self.tilt_deg.to_radians())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayConfig {
    pub units: Vec<UnitPlacement>,
    pub columns: usize,
    pub rows: usize,
    pub pitch_mm: f64,
    /// Row-major cell indices (`row * columns + column`) with no transducer.
    pub omitted: Vec<usize>,
}

impl Default for ArrayConfig {
    /// Four 18x14 units (249 elements each) in a 2x2 layout centered on the
    /// origin, each tilted 15 degrees toward the shared vertical axis.
    fn default() -> Self {
        Self::tilted_quad(15.0, 10.0)
    }
}

impl ArrayConfig {
    pub const COLUMNS: usize = 18;
    pub const ROWS: usize = 14;
    pub const PITCH_MM: f64 = 10.16;

    /// 2x2 layout with `gap_mm` between the grids' edge elements (before tilt).
    pub fn tilted_quad(tilt_deg: f64, gap_mm: f64) -> Self {
        let (columns, rows, pitch) = (Self::COLUMNS, Self::ROWS, Self::PITCH_MM);
        let half_w = 0.5 * (columns - 1) as f64 * pitch;
        let half_h = 0.5 * (rows - 1) as f64 * pitch;
        let local_center = Vec3::new(half_w, half_h, 0.0);
        let units = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .into_iter()
            .map(|(sx, sy)| {
                let center = Vec3::new(
                    sx * (half_w + pitch / 2.0 + gap_mm / 2.0),
                    sy * (half_h + pitch / 2.0 + gap_mm / 2.0),
                    0.0,
                );
                // normal leans toward the vertical axis: (a x z) = inward direction
                let inward = -Vec3::new(center.x, center.y, 0.0).normalize();
                let tilt_axis_deg = inward.x.atan2(-inward.y).to_degrees();
                let mut unit = UnitPlacement {
                    origin: Vec3::zeros(),
                    tilt_deg,
                    tilt_axis_deg,
                };
                unit.origin = center - unit.rotation() * local_center;
                unit
            })
            .collect();
        Self {
            units,
            columns,
            rows,
            pitch_mm: pitch,
            omitted: vec![19, 20, 34],
        }
    }

    pub fn validate(&self) -> Result<(), ArrayError> {
        if self.units.is_empty() {
            return Err(ArrayError::NoUnits);
        }
        if self.columns == 0 || self.rows == 0 || !(self.pitch_mm > 0.0) {
            return Err(ArrayError::EmptyGrid);
        }
        let cells = self.columns * self.rows;
        let mut seen = vec![false; cells];
        for &index in &self.omitted {
            if index >= cells {
                return Err(ArrayError::OmittedOutOfGrid { index, cells });
            }
            if std::mem::replace(&mut seen[index], true) {
                return Err(ArrayError::DuplicateOmitted(index));
            }
        }
        Ok(())
    }

    pub fn per_unit_count(&self) -> usize {
        self.columns * self.rows - self.omitted.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transducer {
    pub position: Vec3,
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransducerArray {
    pub transducers: Vec<Transducer>,
}

impl TransducerArray {
    pub fn len(&self) -> usize {
        self.transducers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transducers.is_empty()
    }
}

pub fn build_array(cfg: &ArrayConfig) -> Result<TransducerArray, ArrayError> {
    cfg.validate()?;
    let mut omitted = vec![false; cfg.columns * cfg.rows];
    for &i in &cfg.omitted {
        omitted[i] = true;
    }
    let mut transducers = Vec::with_capacity(cfg.units.len() * cfg.per_unit_count());
    for unit in &cfg.units {
        let rot = unit.rotation();
        let normal = (rot * Vec3::z()).normalize();
        for row in 0..cfg.rows {
            for col in 0..cfg.columns {
                if omitted[row * cfg.columns + col] {
                    continue;
                }
                let local = Vec3::new(col as f64 * cfg.pitch_mm, row as f64 * cfg.pitch_mm, 0.0);
                transducers.push(Transducer {
                    position: unit.origin + rot * local,
                    normal,
                });
            }
        }
    }
    Ok(TransducerArray { transducers })
}

/// Drive phases in radians, wrapped into [0, 2 pi).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSet(pub Vec<f64>);

fn checked_distance(array: &TransducerArray, point: &Vec3) -> Result<Vec<f64>, ArrayError> {
    array
        .transducers
        .iter()
        .enumerate()
        .map(|(index, tr)| {
            let d = (point - tr.position).norm();
            if d < MIN_DISTANCE_MM {
                Err(ArrayError::Degenerate {
                    index,
                    distance_mm: d,
                })
            } else {
                Ok(d)
            }
        })
        .collect()
}

#[inline]
fn wrapped(k: f64, d: f64) -> f64 {
    (k * d).rem_euclid(TAU)
}

pub fn focus_phases(
    array: &TransducerArray,
    acoustic: &AcousticConfig,
    target: &Vec3,
) -> Result<PhaseSet, ArrayError> {
    let k = acoustic.wavenumber();
    let d = checked_distance(array, target)?;
    Ok(PhaseSet(d.into_iter().map(|d| wrapped(k, d)).collect()))
}

/// Complex pressure `sum(drive_amp / d_i * exp(j (phi_i - k d_i)))`, arbitrary units.
pub fn pressure_at(
    array: &TransducerArray,
    acoustic: &AcousticConfig,
    phases: &PhaseSet,
    point: &Vec3,
    drive_amp: f64,
) -> Result<Complex<f64>, ArrayError> {
    if phases.0.len() != array.len() {
        return Err(ArrayError::PhaseCount {
            expected: array.len(),
            got: phases.0.len(),
        });
    }
    let k = acoustic.wavenumber();
    let mut p = Complex::new(0.0, 0.0);
    for (index, (tr, &phi)) in array.transducers.iter().zip(&phases.0).enumerate() {
        let d = (point - tr.position).norm();
        if d < MIN_DISTANCE_MM {
            return Err(ArrayError::Degenerate {
                index,
                distance_mm: d,
            });
        }
        // wrapping k d the same way focus_phases does makes the focal term exactly zero
        p += Complex::from_polar(drive_amp / d, phi - wrapped(k, d));
    }
    Ok(p)
}

/// Planar scan grid: nodes at `center + u_off * axis_u + v_off * axis_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub center: Vec3,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
    /// Full extent along u and v, mm.
    pub extent_mm: [f64; 2],
    pub resolution_mm: f64,
}

impl ScanGrid {
    /// Horizontal (x-y) scan centered on `center`.
    pub fn lateral(center: Vec3, extent_mm: f64, resolution_mm: f64) -> Self {
        Self {
            center,
            axis_u: Vec3::x(),
            axis_v: Vec3::y(),
            extent_mm: [extent_mm, extent_mm],
            resolution_mm,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        let n = |e: f64| (e / self.resolution_mm).round() as usize + 1;
        (n(self.extent_mm[0]), n(self.extent_mm[1]))
    }

    /// In-plane offsets of node `(iu, iv)` from the center.
    pub fn offsets(&self, iu: usize, iv: usize) -> (f64, f64) {
        let (nu, nv) = self.dims();
        let off = |i: usize, n: usize| (i as f64 - (n - 1) as f64 / 2.0) * self.resolution_mm;
        (off(iu, nu), off(iv, nv))
    }

    pub fn node(&self, iu: usize, iv: usize) -> Vec3 {
        let (u, v) = self.offsets(iu, iv);
        self.center + u * self.axis_u + v * self.axis_v
    }

    fn validate(&self) -> Result<(), ArrayError> {
        let ok = self.resolution_mm > 0.0
            && self.extent_mm.iter().all(|e| *e >= 0.0 && e.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ArrayError::BadGrid)
        }
    }
}

/// `|p|` on a scan grid, row-major with `v` as the row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMap {
    pub grid: ScanGrid,
    pub nu: usize,
    pub nv: usize,
    pub values: Vec<f64>,
}

impl FieldMap {
    pub fn at(&self, iu: usize, iv: usize) -> f64 {
        self.values[iv * self.nu + iu]
    }

    /// `(iu, iv)` of the largest magnitude; first occurrence wins.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.nu, best / self.nu)
    }
}

pub fn field_scan(
    array: &TransducerArray,
    acoustic: &AcousticConfig,
    phases: &PhaseSet,
    grid: &ScanGrid,
    exec: Execution,
) -> Result<FieldMap, ArrayError> {
    grid.validate()?;
    let (nu, nv) = grid.dims();
    let values = exec
        .map_range(nu * nv, |i| {
            let p = grid.node(i % nu, i / nu);
            pressure_at(array, acoustic, phases, &p, 1.0).map(|c| c.norm())
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FieldMap {
        grid: grid.clone(),
        nu,
        nv,
        values,
    })
}

/// Sidecar describing an exported field map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub grid: ScanGrid,
    pub nu: usize,
    pub nv: usize,
    pub target: Vec3,
    pub acoustic: AcousticConfig,
    /// Hex digest of the array and acoustic configuration.
    pub config_hash: String,
}

pub fn config_hash(array: &ArrayConfig, acoustic: &AcousticConfig) -> String {
    format!("{:016x}", crate::digest64(&(array, acoustic)))
}

/// CSV rows `x_mm, y_mm, magnitude`, where x/y are the in-plane offsets along
/// the grid's u/v axes; the sidecar carries the plane itself.
pub fn write_field_csv<W: Write>(map: &FieldMap, out: W) -> Result<(), ArrayError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x_mm", "y_mm", "magnitude"])?;
    for iv in 0..map.nv {
        for iu in 0..map.nu {
            let (u, v) = map.grid.offsets(iu, iv);
            w.serialize((u, v, map.at(iu, iv)))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_field_metadata<W: Write>(
    map: &FieldMap,
    target: Vec3,
    array_cfg: &ArrayConfig,
    acoustic: &AcousticConfig,
    out: W,
) -> Result<(), ArrayError> {
    let meta = FieldMetadata {
        grid: map.grid.clone(),
        nu: map.nu,
        nv: map.nv,
        target,
        acoustic: *acoustic,
        config_hash: config_hash(array_cfg, acoustic),
    };
    serde_json::to_writer_pretty(out, &meta)?;
    Ok(())
}
