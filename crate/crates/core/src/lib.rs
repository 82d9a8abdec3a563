//! Core engine for the grass-texture haptic design studio.
//!
//! The crate is organized bottom-up:
//!
//! * [`param_space`]: the seven haptic parameters and their unit-cube encoding.
//! * [`waveform`]: three-band modulation synthesis with phase accumulators.
//! * [`stm`]: the spatio-temporal focal trajectory (circle + lateral sway).
//! * [`array`]: a simulated four-unit phased array, focusing solver and field scans.
//! * [`optimizer`]: sequential line search over the unit cube (GP preference model + EI).
//! * [`synthetic`]: a deterministic stand-in user for closed-loop benchmarks.
//! * [`viz`]: parameter to "growing grass" scene mapping.
//! * [`session`]: the live session state machine, wire protocol, event log and replay.
//! * [`headless`]: synthetic-user driven session runs.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iterators otherwise.

// `!(x > 0.0)` is the NaN-rejecting form used by the validators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod headless;
pub mod optimizer;
pub mod par;
pub mod param_space;
pub mod session;
pub mod stm;
pub mod synthetic;
pub mod viz;
pub mod waveform;

pub use param_space::{HapticParams, ParamDomain, ParamVector};

/// Millimetre-valued 3-vector used for positions and directions.
pub type Vec3 = nalgebra::Vector3<f64>;

/// 64-bit digest of a value's canonical JSON encoding (first 8 bytes of SHA-256).
pub fn digest64<T: serde::Serialize>(value: &T) -> u64 {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("serializable value");
    let hash = Sha256::digest(&bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&hash[..8]);
    u64::from_be_bytes(head)
}
