//! "Growing grass" scene description derived from the haptic parameters.
//!
//! Blade count follows band frequency, blade size follows band amplitude and
//! the wind speed follows the contact-area movement frequency.

use serde::{Deserialize, Serialize};

use crate::param_space::{HapticParams, ParamDomain};

pub const MIN_BLADES: u32 = 20;
pub const MAX_BLADES: u32 = 120;
pub const MIN_SCALE: f64 = 0.2;
pub const MAX_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorTag {
    BandLow,
    BandMid,
    BandHigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrassBandSpec {
    pub color_tag: ColorTag,
    pub blade_count: u32,
    pub blade_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrassSceneSpec {
    pub bands: [GrassBandSpec; 3],
    pub wind_speed_norm: f64,
}

fn unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

pub fn scene_from_params(domain: &ParamDomain, p: &HapticParams) -> GrassSceneSpec {
    let raw = p.to_array();
    let norm = |i: usize| unit(domain.descriptor(i).unlerp(raw[i]));
    let band = |color_tag, f: usize, a: usize| {
        let fnorm = norm(f);
        let amp = unit(raw[a]);
        GrassBandSpec {
            color_tag,
            blade_count: (MIN_BLADES as f64 + (MAX_BLADES - MIN_BLADES) as f64 * fnorm).round() as u32,
            blade_scale: (1.0 - amp) * MIN_SCALE + amp * MAX_SCALE,
        }
    };
    GrassSceneSpec {
        bands: [
            band(ColorTag::BandLow, 0, 1),
            band(ColorTag::BandMid, 2, 3),
            band(ColorTag::BandHigh, 4, 5),
        ],
        wind_speed_norm: norm(6),
    }
}
