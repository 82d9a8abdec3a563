//! Deterministic stand-in for the human at the slider.
//!
//! The latent goodness is a Gaussian bump around a hidden target; the choice
//! policy evaluates it on a uniform grid along the slider and picks the best
//! grid point, optionally after adding seeded Gumbel noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::optimizer::{
    incorporate_choice, next_slider, GpConfig, OptimizerError, OptimizerState, SliderSegment,
};
use crate::par::Execution;
use crate::param_space::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentGoodness {
    pub target: ParamVector,
    pub width: f64,
}

impl LatentGoodness {
    pub fn new(target: ParamVector) -> Self {
        Self { target, width: 0.4 }
    }

    pub fn goodness(&self, x: &ParamVector) -> f64 {
        let d2 = x.distance(&self.target).powi(2);
        (-d2 / (2.0 * self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoicePolicy {
    pub grid_points: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for ChoicePolicy {
    fn default() -> Self {
        Self {
            grid_points: 101,
            noise_scale: 0.0,
            seed: 0,
        }
    }
}

/// Grid argmax of `goodness + noise_scale * Gumbel` along the slider.
/// Ties resolve to the smallest t.
pub fn choose(
    policy: &ChoicePolicy,
    latent: &LatentGoodness,
    seg: &SliderSegment,
    rng: &mut impl Rng,
) -> f64 {
    let k = policy.grid_points.max(2);
    let mut best_t = 0.0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..k {
        let t = i as f64 / (k - 1) as f64;
        let mut score = latent.goodness(&seg.x0.lerp(&seg.x1, t));
        if policy.noise_scale > 0.0 {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            score += policy.noise_scale * -(-u.ln()).ln();
        }
        if score > best {
            best = score;
            best_t = t;
        }
    }
    best_t
}

/// A latent function plus a policy with its own noise stream.
#[derive(Debug, Clone)]
pub struct SyntheticUser {
    pub latent: LatentGoodness,
    pub policy: ChoicePolicy,
    rng: ChaCha8Rng,
}

impl SyntheticUser {
    pub fn new(latent: LatentGoodness, policy: ChoicePolicy) -> Self {
        Self {
            latent,
            policy,
            rng: ChaCha8Rng::seed_from_u64(policy.seed),
        }
    }

    pub fn choose(&mut self, seg: &SliderSegment) -> f64 {
        choose(&self.policy, &self.latent, seg, &mut self.rng)
    }
}

/// Target drawn uniformly from the cube for a benchmark seed.
pub fn target_for_seed(seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a26_e7c1_5eed_0001);
    ParamVector::clamped(std::array::from_fn(|_| rng.random::<f64>()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentStrategy {
    /// Incumbent to EI maximizer.
    LineSearch,
    /// Both endpoints uniform in the cube; the reported point is the best
    /// chosen point under the latent goodness.
    RandomSegments,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub best_goodness: f64,
    pub distance_to_target: f64,
    /// Incumbent MAP value; absent for the random baseline.
    pub incumbent_map: Option<f64>,
}

/// Runs `iterations` slider rounds and records the reported point after each.
pub fn run_closed_loop(
    gp: &GpConfig,
    user: &mut SyntheticUser,
    iterations: usize,
    strategy: SegmentStrategy,
    exec: Execution,
) -> Result<Vec<IterationRecord>, OptimizerError> {
    let mut records = Vec::with_capacity(iterations);
    match strategy {
        SegmentStrategy::LineSearch => {
            let mut state = OptimizerState::new(gp.seed);
            for _ in 0..iterations {
                let seg = next_slider(&state, gp, exec)?;
                let t = user.choose(&seg);
                state = incorporate_choice(&state, &seg, t, gp)?;
                let x = state.incumbent_point().expect("fitted state has an incumbent");
                records.push(IterationRecord {
                    iteration: state.iteration,
                    best_goodness: user.latent.goodness(&x),
                    distance_to_target: x.distance(&user.latent.target),
                    incumbent_map: state.incumbent_value(),
                });
            }
        }
        SegmentStrategy::RandomSegments => {
            let mut rng = ChaCha8Rng::seed_from_u64(gp.seed);
            let mut best: Option<(f64, ParamVector)> = None;
            let draw = |rng: &mut ChaCha8Rng| {
                ParamVector::clamped(std::array::from_fn(|_| rng.random::<f64>()))
            };
            for i in 0..iterations {
                let seg = SliderSegment {
                    x0: draw(&mut rng),
                    x1: draw(&mut rng),
                };
                let t = user.choose(&seg);
                let x = seg.x0.lerp(&seg.x1, t);
                let g = user.latent.goodness(&x);
                if best.is_none_or(|(bg, _)| g > bg) {
                    best = Some((g, x));
                }
                let (g, x) = best.expect("set above");
                records.push(IterationRecord {
                    iteration: i as u64 + 1,
                    best_goodness: g,
                    distance_to_target: x.distance(&user.latent.target),
                    incumbent_map: None,
                });
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub iterations: usize,
    pub width: f64,
    pub noise_scale: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            iterations: 15,
            width: 0.4,
            noise_scale: 0.0,
        }
    }
}

/// Paired outcome of both strategies on one seed (same target, same policy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub line_search: Vec<IterationRecord>,
    pub random: Vec<IterationRecord>,
}

impl PairedRun {
    pub fn final_distances(&self) -> (f64, f64) {
        let last = |r: &[IterationRecord]| r.last().map_or(f64::NAN, |x| x.distance_to_target);
        (last(&self.line_search), last(&self.random))
    }
}

/// Runs both strategies for each seed; seeds are processed in parallel.
pub fn compare_strategies(
    gp: &GpConfig,
    spec: &BenchmarkSpec,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<PairedRun>, OptimizerError> {
    exec.map(seeds, |&seed| {
        let latent = LatentGoodness {
            target: target_for_seed(seed),
            width: spec.width,
        };
        let policy = ChoicePolicy {
            noise_scale: spec.noise_scale,
            seed,
            ..ChoicePolicy::default()
        };
        let gp = GpConfig { seed, ..gp.clone() };
        let line_search = run_closed_loop(
            &gp,
            &mut SyntheticUser::new(latent, policy),
            spec.iterations,
            SegmentStrategy::LineSearch,
            Execution::Sequential,
        )?;
        let random = run_closed_loop(
            &gp,
            &mut SyntheticUser::new(latent, policy),
            spec.iterations,
            SegmentStrategy::RandomSegments,
            Execution::Sequential,
        )?;
        Ok(PairedRun {
            seed,
            line_search,
            random,
        })
    })
    .into_iter()
    .collect()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::param_space::DIM;

    fn pv(v: [f64; DIM]) -> ParamVector {
        ParamVector::new(v).unwrap()
    }

    #[test]
    fn goodness_examples() {
        let f = LatentGoodness::new(pv([0.3; DIM]));
        assert_eq!(f.goodness(&f.target), 1.0);
        let at_w = f.target.with(0, 0.7).unwrap();
        assert_relative_eq!(f.goodness(&at_w), 0.60653, epsilon = 1e-5);
        let mut last = 1.0;
        for i in 1..=10 {
            let g = f.goodness(&f.target.with(2, 0.3 + 0.07 * i as f64).unwrap());
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn greedy_finds_target_on_segment() {
        let x0 = pv([0.0; DIM]);
        let x1 = pv([1.0; DIM]);
        let seg = SliderSegment { x0, x1 };
        let f = LatentGoodness::new(x0.lerp(&x1, 0.3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = choose(&ChoicePolicy::default(), &f, &seg, &mut rng);
        assert!((t - 0.3).abs() <= 0.01 + 1e-12);
        assert_eq!(t, choose(&ChoicePolicy::default(), &f, &seg, &mut rng));
    }

    #[test]
    fn monotone_segment_picks_endpoint() {
        let seg = SliderSegment {
            x0: pv([0.2; DIM]),
            x1: pv([0.6; DIM]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let toward_x1 = LatentGoodness::new(pv([0.9; DIM]));
        assert_eq!(choose(&ChoicePolicy::default(), &toward_x1, &seg, &mut rng), 1.0);
        let toward_x0 = LatentGoodness::new(pv([0.0; DIM]));
        assert_eq!(choose(&ChoicePolicy::default(), &toward_x0, &seg, &mut rng), 0.0);
    }

    #[test]
    fn greedy_never_picks_a_dominated_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let policy = ChoicePolicy::default();
        for _ in 0..50 {
            let mut draw = || ParamVector::clamped(std::array::from_fn(|_| rng.random::<f64>()));
            let seg = SliderSegment { x0: draw(), x1: draw() };
            let f = LatentGoodness::new(draw());
            let t = choose(&policy, &f, &seg, &mut ChaCha8Rng::seed_from_u64(0));
            let chosen = f.goodness(&seg.x0.lerp(&seg.x1, t));
            for i in 0..policy.grid_points {
                let g = f.goodness(&seg.x0.lerp(&seg.x1, i as f64 / 100.0));
                assert!(chosen >= g);
            }
        }
    }

    #[test]
    fn noisy_choices_reproduce_under_seed() {
        let seg = SliderSegment {
            x0: pv([0.1; DIM]),
            x1: pv([0.9; DIM]),
        };
        let latent = LatentGoodness::new(pv([0.5; DIM]));
        let policy = ChoicePolicy {
            noise_scale: 0.5,
            seed: 99,
            ..ChoicePolicy::default()
        };
        let mut a = SyntheticUser::new(latent, policy);
        let mut b = SyntheticUser::new(latent, policy);
        let ta: Vec<f64> = (0..20).map(|_| a.choose(&seg)).collect();
        let tb: Vec<f64> = (0..20).map(|_| b.choose(&seg)).collect();
        assert_eq!(ta, tb);
        assert!(ta.iter().any(|t| *t != ta[0]));
    }

    #[test]
    fn incumbent_map_mostly_non_decreasing() {
        let gp = GpConfig::default();
        let spec = BenchmarkSpec::default();
        let seeds: Vec<u64> = (0..20).collect();
        let runs = compare_strategies(&gp, &spec, &seeds, Execution::Parallel).unwrap();
        let monotone = runs
            .iter()
            .filter(|r| {
                r.line_search.windows(2).all(|w| {
                    w[1].incumbent_map.unwrap() >= w[0].incumbent_map.unwrap() - 1e-12
                })
            })
            .count();
        assert!(monotone as f64 >= 0.9 * runs.len() as f64, "{monotone}/20 monotone");
    }
}
