//! Three-band sinusoidal modulation waveform.
//!
//! The bipolar vibration signal is `sum(a_i sin(2 pi f_i t)) / max(1, sum(a_i))`
//! and the unipolar ultrasound drive envelope is `(1 + s) / 2`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::param_space::HapticParams;

/// Number of samples in the preview attached to state messages.
pub const PREVIEW_LEN: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("sample rate {rate} Hz must exceed {min} Hz")]
    SampleRateTooLow { rate: f64, min: f64 },
    #[error("block size must be positive")]
    EmptyBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub freq_hz: f64,
    pub amp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub bands: [Band; 3],
}

impl WaveformSpec {
    pub fn new(bands: [(f64, f64); 3]) -> Self {
        Self {
            bands: bands.map(|(freq_hz, amp)| Band { freq_hz, amp }),
        }
    }

    /// Divisor that keeps the band sum inside [-1, 1].
    pub fn norm(&self) -> f64 {
        self.bands.iter().map(|b| b.amp).sum::<f64>().max(1.0)
    }
}

/// Projects the frequency/amplitude pairs out of the haptic parameters.
pub fn spec_from_params(p: &HapticParams) -> WaveformSpec {
    WaveformSpec::new([
        (p.f_low_hz, p.a_low),
        (p.f_mid_hz, p.a_mid),
        (p.f_high_hz, p.a_high),
    ])
}

pub fn sample(spec: &WaveformSpec, t: f64) -> f64 {
    let s: f64 = spec
        .bands
        .iter()
        .map(|b| b.amp * (TAU * b.freq_hz * t).sin())
        .sum();
    (s / spec.norm()).clamp(-1.0, 1.0)
}

pub fn envelope(spec: &WaveformSpec, t: f64) -> f64 {
    envelope_of(sample(spec, t))
}

#[inline]
pub fn envelope_of(sample: f64) -> f64 {
    0.5 * (1.0 + sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub sample_rate_hz: f64,
    pub block_size: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 4000.0,
            block_size: 64,
        }
    }
}

impl RenderConfig {
    /// Twice the top of the high band.
    pub const MIN_RATE_HZ: f64 = 600.0;

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.sample_rate_hz > Self::MIN_RATE_HZ) {
            return Err(RenderError::SampleRateTooLow {
                rate: self.sample_rate_hz,
                min: Self::MIN_RATE_HZ,
            });
        }
        if self.block_size == 0 {
            return Err(RenderError::EmptyBlock);
        }
        Ok(())
    }

    pub fn block_duration(&self) -> f64 {
        self.block_size as f64 / self.sample_rate_hz
    }
}

/// Per-band phase accumulators plus the index of the next sample to render.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phases: [f64; 3],
    pub next_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBlock {
    pub start_index: u64,
    pub samples: Vec<f64>,
}

/// Renders one block. Each sample is taken at the current accumulated phase,
/// then every accumulator advances by `2 pi f_i / rate` and wraps into [0, 2 pi).
/// Frequency changes between blocks therefore never jump the phase.
pub fn render_block(
    spec: &WaveformSpec,
    cfg: &RenderConfig,
    state: PhaseState,
) -> Result<(SampleBlock, PhaseState), RenderError> {
    cfg.validate()?;
    let mut phases = state.phases;
    let incs = spec.bands.map(|b| TAU * b.freq_hz / cfg.sample_rate_hz);
    let norm = spec.norm();
    let samples = (0..cfg.block_size)
        .map(|_| {
            let mut s = 0.0;
            for ((phase, inc), band) in phases.iter_mut().zip(incs).zip(&spec.bands) {
                s += band.amp * phase.sin();
                *phase = wrap_phase(*phase + inc);
            }
            (s / norm).clamp(-1.0, 1.0)
        })
        .collect();
    let block = SampleBlock {
        start_index: state.next_index,
        samples,
    };
    let next = PhaseState {
        phases,
        next_index: state.next_index + cfg.block_size as u64,
    };
    Ok((block, next))
}

#[inline]
fn wrap_phase(p: f64) -> f64 {
    if p >= TAU {
        (p - TAU).rem_euclid(TAU)
    } else {
        p
    }
}

/// Preview window for state messages: [`PREVIEW_LEN`] samples at the default
/// 4 kHz rate (64 ms), rendered from zero phase so it depends only on the spec.
pub fn preview(spec: &WaveformSpec) -> Vec<f64> {
    let cfg = RenderConfig {
        sample_rate_hz: RenderConfig::default().sample_rate_hz,
        block_size: PREVIEW_LEN,
    };
    render_block(spec, &cfg, PhaseState::default())
        .expect("default render config is valid")
        .0
        .samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn projection() {
        let p = HapticParams::from_array([20.0, 0.5, 65.0, 0.3, 200.0, 0.2, 0.6]);
        assert_eq!(
            spec_from_params(&p),
            WaveformSpec::new([(20.0, 0.5), (65.0, 0.3), (200.0, 0.2)])
        );
        let p = HapticParams::from_array([10.0, 1.0, 30.0, 0.0, 100.0, 0.0, 0.2]);
        assert_eq!(spec_from_params(&p).bands[0], Band { freq_hz: 10.0, amp: 1.0 });
    }

    #[test]
    fn sample_examples() {
        let spec = WaveformSpec::new([(20.0, 0.5), (65.0, 0.3), (200.0, 0.2)]);
        assert_eq!(sample(&spec, 0.0), 0.0);

        let single = WaveformSpec::new([(10.0, 1.0), (30.0, 0.0), (100.0, 0.0)]);
        assert_relative_eq!(sample(&single, 0.025), 1.0, epsilon = 1e-12);

        let three = WaveformSpec::new([(10.0, 0.5), (50.0, 0.3), (200.0, 0.2)]);
        assert_relative_eq!(sample(&three, 0.005), 0.4545085, epsilon = 1e-7);
        assert_relative_eq!(envelope(&three, 0.005), 0.7272543, epsilon = 1e-7);
        assert_eq!(envelope(&spec, 0.0), 0.5);
        assert_eq!(envelope_of(1.0), 1.0);
    }

    #[test]
    fn single_band_keeps_its_amplitude() {
        let spec = WaveformSpec::new([(10.0, 0.3), (30.0, 0.0), (100.0, 0.0)]);
        assert_relative_eq!(sample(&spec, 0.025), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn zero_amplitude_block_advances_phase() {
        let spec = WaveformSpec::new([(10.0, 0.0), (30.0, 0.0), (100.0, 0.0)]);
        let (block, next) =
            render_block(&spec, &RenderConfig::default(), PhaseState::default()).unwrap();
        assert!(block.samples.iter().all(|&s| s == 0.0));
        assert!(next.phases.iter().all(|&p| p > 0.0));
        assert_eq!(next.next_index, 64);
    }

    #[test]
    fn two_blocks_match_one_long_block() {
        let spec = WaveformSpec::new([(23.0, 0.4), (71.0, 0.7), (280.0, 0.5)]);
        let cfg = RenderConfig::default();
        let (a, s1) = render_block(&spec, &cfg, PhaseState::default()).unwrap();
        let (b, _) = render_block(&spec, &cfg, s1).unwrap();
        let long = RenderConfig {
            block_size: 128,
            ..cfg
        };
        let (whole, _) = render_block(&spec, &long, PhaseState::default()).unwrap();
        assert_eq!(b.start_index, 64);
        for (x, y) in a.samples.iter().chain(&b.samples).zip(&whole.samples) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn accumulator_wraps_after_full_cycle() {
        let spec = WaveformSpec::new([(10.0, 1.0), (30.0, 0.0), (100.0, 0.0)]);
        let cfg = RenderConfig {
            sample_rate_hz: 4000.0,
            block_size: 400,
        };
        let (_, next) = render_block(&spec, &cfg, PhaseState::default()).unwrap();
        let p = next.phases[0];
        assert!(p < 1e-9 || (TAU - p) < 1e-9, "phase {p}");
    }

    #[test]
    fn accumulated_render_matches_absolute_time() {
        let spec = WaveformSpec::new([(17.0, 0.2), (44.0, 0.9), (133.0, 0.4)]);
        let cfg = RenderConfig {
            sample_rate_hz: 4000.0,
            block_size: 1000,
        };
        let (block, _) = render_block(&spec, &cfg, PhaseState::default()).unwrap();
        for (n, s) in block.samples.iter().enumerate() {
            assert!((s - sample(&spec, n as f64 / 4000.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_low_sample_rate() {
        let spec = WaveformSpec::new([(10.0, 1.0), (30.0, 0.0), (100.0, 0.0)]);
        let cfg = RenderConfig {
            sample_rate_hz: 500.0,
            block_size: 64,
        };
        assert!(matches!(
            render_block(&spec, &cfg, PhaseState::default()),
            Err(RenderError::SampleRateTooLow { .. })
        ));
    }

    #[test]
    fn frequency_change_is_click_free() {
        let cfg = RenderConfig::default();
        let before = WaveformSpec::new([(12.0, 0.6), (40.0, 0.3), (150.0, 0.4)]);
        let after = WaveformSpec::new([(28.0, 0.6), (95.0, 0.3), (290.0, 0.4)]);
        let mut state = PhaseState::default();
        let mut pre = Vec::new();
        // 0.1 s covers a full period of the slowest pre-change component
        for _ in 0..7 {
            let (b, s) = render_block(&before, &cfg, state).unwrap();
            pre.extend(b.samples);
            state = s;
        }
        let (post, _) = render_block(&after, &cfg, state).unwrap();
        let max_step = pre.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        let jump = (post.samples[0] - pre.last().unwrap()).abs();
        assert!(jump <= max_step, "jump {jump} > {max_step}");
    }

    #[test]
    fn preview_shape() {
        let spec = WaveformSpec::new([(10.0, 1.0), (30.0, 0.0), (100.0, 0.0)]);
        let p = preview(&spec);
        assert_eq!(p.len(), PREVIEW_LEN);
        // 64 ms of a 10 Hz tone is 0.64 of a period: one positive lobe then a partial negative one
        assert!(p.iter().all(|s| s.abs() <= 1.0));
        assert_eq!(p[0], 0.0);
    }

    fn arb_spec() -> impl Strategy<Value = WaveformSpec> {
        (
            10.0f64..30.0, 0.0f64..1.0,
            30.0f64..100.0, 0.0f64..1.0,
            100.0f64..300.0, 0.0f64..1.0,
        )
            .prop_map(|(f0, a0, f1, a1, f2, a2)| WaveformSpec::new([(f0, a0), (f1, a1), (f2, a2)]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn output_bounded(spec in arb_spec(), t in 0.0f64..100.0) {
            let s = sample(&spec, t);
            prop_assert!(s.abs() <= 1.0);
            let e = envelope(&spec, t);
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
