//! Sequential line search over the unit 7-cube.
//!
//! Latent goodness values at the observed points get a zero-mean GP prior
//! (ARD squared-exponential kernel plus a small diagonal jitter) and a
//! Bradley-Terry likelihood for each pairwise preference. The MAP goodness
//! vector is found by Newton ascent. Predictions away from the data are plain
//! GP regression on the MAP values, and each new slider runs from the
//! incumbent (best MAP point) to the expected-improvement maximizer.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use crate::param_space::{ParamError, ParamVector, DIM};

/// Observations closer than this are treated as the same point.
pub const SAME_POINT_TOL: f64 = 1e-9;
/// A chosen point this close to an endpoint certifies no preference over it.
pub const TIE_TOL: f64 = 1e-6;
pub const MAP_GRAD_TOL: f64 = 1e-6;
pub const MAP_MAX_ITERS: usize = 500;
pub const EI_CANDIDATES: usize = 1024;
pub const EI_POLISH_STEPS: usize = 50;
/// Half-width of the per-coordinate golden-section bracket.
const POLISH_RADIUS: f64 = 0.125;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid GP configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("kernel matrix over {0} observations is not positive definite")]
    NotPositiveDefinite(usize),
    #[error("goodness vector has {got} entries for {expected} observations")]
    LengthMismatch { expected: usize, got: usize },
    #[error("MAP estimate needs at least one observation")]
    NoObservations,
    #[error("MAP ascent stopped after {iterations} iterations with gradient norm {grad_norm:e}")]
    MapNotConverged { iterations: usize, grad_norm: f64 },
    #[error("MAP goodness values are stale; re-estimate before predicting")]
    StaleMap,
    #[error("slider position {0} is outside [0, 1]")]
    SliderOutOfRange(f64),
    #[error("preference {0} references an unknown observation or lists its winner as a loser")]
    BadPreference(usize),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub signal_variance: f64,
    pub lengthscales: [f64; DIM],
    pub noise_variance: f64,
    pub btl_scale: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            lengthscales: [0.5; DIM],
            noise_variance: 1e-4,
            btl_scale: 0.1,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if !(self.signal_variance > 0.0) {
            return Err(OptimizerError::InvalidConfig("signal_variance must be positive"));
        }
        if !self.lengthscales.iter().all(|l| *l > 0.0) {
            return Err(OptimizerError::InvalidConfig("lengthscales must be positive"));
        }
        if !(self.noise_variance > 0.0) {
            return Err(OptimizerError::InvalidConfig("noise_variance must be positive"));
        }
        if !(self.btl_scale > 0.0) {
            return Err(OptimizerError::InvalidConfig("btl_scale must be positive"));
        }
        Ok(())
    }
}

/// ARD squared-exponential kernel.
pub fn kernel(a: &ParamVector, b: &ParamVector, cfg: &GpConfig) -> f64 {
    let r2: f64 = a
        .as_array()
        .iter()
        .zip(b.as_array())
        .zip(&cfg.lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    cfg.signal_variance * (-0.5 * r2).exp()
}

/// Bradley-Terry probability that the winner is preferred.
pub fn pref_likelihood(g_winner: f64, g_loser: f64, scale: f64) -> f64 {
    1.0 / (1.0 + (-(g_winner - g_loser) / scale).exp())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// One chosen point preferred over one or two others.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub winner: usize,
    pub losers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliderSegment {
    pub x0: ParamVector,
    pub x1: ParamVector,
}

pub fn slider_point(seg: &SliderSegment, t: f64) -> Result<ParamVector, OptimizerError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(OptimizerError::SliderOutOfRange(t));
    }
    Ok(seg.x0.lerp(&seg.x1, t))
}

/// Everything the optimizer has learned so far. Serializes to the session snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub seed: u64,
    pub observations: Vec<ParamVector>,
    pub prefs: Vec<PreferenceTriple>,
    pub map_goodness: Vec<f64>,
    /// Number of preferences the current `map_goodness` was fitted on.
    pub fitted_prefs: usize,
    pub incumbent: Option<usize>,
    pub iteration: u64,
}

/// Independent random streams derived from `(seed, iteration)`.
#[derive(Clone, Copy)]
enum Stream {
    Initial = 0,
    Acquisition = 1,
    Redraw = 2,
}

impl OptimizerState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            observations: Vec::new(),
            prefs: Vec::new(),
            map_goodness: Vec::new(),
            fitted_prefs: 0,
            incumbent: None,
            iteration: 0,
        }
    }

    fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.iteration.wrapping_mul(4).wrapping_add(stream as u64));
        rng
    }

    pub fn is_fitted(&self) -> bool {
        self.map_goodness.len() == self.observations.len() && self.fitted_prefs == self.prefs.len()
    }

    pub fn incumbent_point(&self) -> Option<ParamVector> {
        self.incumbent.map(|i| self.observations[i])
    }

    pub fn incumbent_value(&self) -> Option<f64> {
        self.incumbent.map(|i| self.map_goodness[i])
    }

    fn validate_prefs(&self) -> Result<(), OptimizerError> {
        let n = self.observations.len();
        for (i, p) in self.prefs.iter().enumerate() {
            let ok = p.winner < n
                && !p.losers.is_empty()
                && p.losers.len() <= 2
                && p.losers.iter().all(|&l| l < n && l != p.winner);
            if !ok {
                return Err(OptimizerError::BadPreference(i));
            }
        }
        Ok(())
    }

    /// Index of an observation within [`SAME_POINT_TOL`] of `x`, appending it if none.
    fn observe(&mut self, x: ParamVector) -> usize {
        match self
            .observations
            .iter()
            .position(|o| o.distance(&x) <= SAME_POINT_TOL)
        {
            Some(i) => i,
            None => {
                self.observations.push(x);
                self.observations.len() - 1
            }
        }
    }
}

/// `K + noise_variance I` over the observations.
pub fn kernel_matrix(xs: &[ParamVector], cfg: &GpConfig) -> DMatrix<f64> {
    let n = xs.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = kernel(&xs[i], &xs[j], cfg);
        if i == j {
            k + cfg.noise_variance
        } else {
            k
        }
    })
}

fn factor(xs: &[ParamVector], cfg: &GpConfig) -> Result<Cholesky<f64, Dyn>, OptimizerError> {
    kernel_matrix(xs, cfg)
        .cholesky()
        .ok_or(OptimizerError::NotPositiveDefinite(xs.len()))
}

/// Iterates `(winner, loser)` pairs.
fn pairs(prefs: &[PreferenceTriple]) -> impl Iterator<Item = (usize, usize)> + '_ {
    prefs
        .iter()
        .flat_map(|p| p.losers.iter().map(move |&l| (p.winner, l)))
}

/// Log-likelihood, its gradient and the negated Hessian (`W`, positive semidefinite).
fn likelihood_terms(g: &DVector<f64>, prefs: &[PreferenceTriple], s: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = g.len();
    let mut value = 0.0;
    let mut grad = DVector::zeros(n);
    let mut w = DMatrix::zeros(n, n);
    for (win, lose) in pairs(prefs) {
        let z = (g[win] - g[lose]) / s;
        value -= softplus(-z);
        let p = pref_likelihood(g[win], g[lose], s);
        let d = (1.0 - p) / s;
        grad[win] += d;
        grad[lose] -= d;
        let c = p * (1.0 - p) / (s * s);
        w[(win, win)] += c;
        w[(lose, lose)] += c;
        w[(win, lose)] -= c;
        w[(lose, win)] -= c;
    }
    (value, grad, w)
}

/// Log posterior `sum(log P(w > l)) - g^T K^-1 g / 2` and its exact gradient.
pub fn log_posterior(
    g: &[f64],
    state: &OptimizerState,
    cfg: &GpConfig,
) -> Result<(f64, Vec<f64>), OptimizerError> {
    let n = state.observations.len();
    if g.len() != n {
        return Err(OptimizerError::LengthMismatch {
            expected: n,
            got: g.len(),
        });
    }
    state.validate_prefs()?;
    let chol = factor(&state.observations, cfg)?;
    let g = DVector::from_column_slice(g);
    let (value, grad) = posterior_terms(&g, &state.prefs, &chol, cfg.btl_scale);
    Ok((value, grad.as_slice().to_vec()))
}

fn posterior_terms(
    g: &DVector<f64>,
    prefs: &[PreferenceTriple],
    chol: &Cholesky<f64, Dyn>,
    s: f64,
) -> (f64, DVector<f64>) {
    let (ll, dll, _) = likelihood_terms(g, prefs, s);
    let alpha = chol.solve(g);
    (ll - 0.5 * g.dot(&alpha), dll - alpha)
}

/// Newton ascent with backtracking from `g = 0`.
pub fn map_estimate(state: &OptimizerState, cfg: &GpConfig) -> Result<Vec<f64>, OptimizerError> {
    cfg.validate()?;
    let n = state.observations.len();
    if n == 0 {
        return Err(OptimizerError::NoObservations);
    }
    state.validate_prefs()?;
    let chol = factor(&state.observations, cfg)?;
    let k_inv = chol.inverse();
    let s = cfg.btl_scale;

    let mut g = DVector::zeros(n);
    let (mut value, mut grad) = posterior_terms(&g, &state.prefs, &chol, s);
    for _ in 0..MAP_MAX_ITERS {
        if grad.amax() <= MAP_GRAD_TOL {
            return Ok(g.as_slice().to_vec());
        }
        let (_, _, w) = likelihood_terms(&g, &state.prefs, s);
        let hess = w + &k_inv;
        let step = match hess.clone().cholesky() {
            Some(h) => h.solve(&grad),
            // fall back to a gradient step if round-off broke definiteness
            None => grad.clone(),
        };
        let slope = grad.dot(&step);
        let mut lr = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &g + lr * &step;
            let (v, gr) = posterior_terms(&trial, &state.prefs, &chol, s);
            if v >= value + 1e-4 * lr * slope {
                g = trial;
                value = v;
                grad = gr;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if grad.amax() <= MAP_GRAD_TOL {
        return Ok(g.as_slice().to_vec());
    }
    Err(OptimizerError::MapNotConverged {
        iterations: MAP_MAX_ITERS,
        grad_norm: grad.amax(),
    })
}

/// GP regression on the fitted MAP values, factored once for repeated queries.
pub struct Posterior<'a> {
    state: &'a OptimizerState,
    cfg: &'a GpConfig,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    best: f64,
}

impl<'a> Posterior<'a> {
    pub fn new(state: &'a OptimizerState, cfg: &'a GpConfig) -> Result<Self, OptimizerError> {
        if state.observations.is_empty() {
            return Err(OptimizerError::NoObservations);
        }
        if !state.is_fitted() {
            return Err(OptimizerError::StaleMap);
        }
        let chol = factor(&state.observations, cfg)?;
        let alpha = chol.solve(&DVector::from_column_slice(&state.map_goodness));
        let best = state
            .incumbent_value()
            .unwrap_or_else(|| state.map_goodness.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        Ok(Self {
            state,
            cfg,
            chol,
            alpha,
            best,
        })
    }

    /// Incumbent MAP value `g+`.
    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn predict(&self, x: &ParamVector) -> (f64, f64) {
        let k_star = DVector::from_iterator(
            self.state.observations.len(),
            self.state.observations.iter().map(|o| kernel(x, o, self.cfg)),
        );
        let mean = k_star.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k_star).expect("non-singular factor");
        let var = kernel(x, x, self.cfg) - v.dot(&v);
        (mean, var.max(0.0))
    }

    pub fn expected_improvement(&self, x: &ParamVector) -> f64 {
        let (mean, var) = self.predict(x);
        ei_closed_form(mean, var.sqrt(), self.best)
    }
}

pub fn posterior_predict(
    x: &ParamVector,
    state: &OptimizerState,
    cfg: &GpConfig,
) -> Result<(f64, f64), OptimizerError> {
    Ok(Posterior::new(state, cfg)?.predict(x))
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `(mu - best) Phi(z) + sigma phi(z)` with `z = (mu - best) / sigma`.
pub fn ei_closed_form(mean: f64, sigma: f64, best: f64) -> f64 {
    let gap = mean - best;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * std_normal_cdf(z) + sigma * std_normal_pdf(z)).max(0.0)
}

pub fn expected_improvement(
    x: &ParamVector,
    state: &OptimizerState,
    cfg: &GpConfig,
) -> Result<f64, OptimizerError> {
    Ok(Posterior::new(state, cfg)?.expected_improvement(x))
}

const HALTON_BASES: [u32; DIM] = [2, 3, 5, 7, 11, 13, 17];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// Halton points with a seeded random shift (Cranley-Patterson rotation).
fn shifted_halton(n: usize, rng: &mut impl Rng) -> Vec<ParamVector> {
    let shift: [f64; DIM] = std::array::from_fn(|_| rng.random::<f64>());
    (0..n)
        .map(|i| {
            ParamVector::clamped(std::array::from_fn(|d| {
                (radical_inverse(i as u64 + 1, HALTON_BASES[d]) + shift[d]).fract()
            }))
        })
        .collect()
}

fn random_point(rng: &mut impl Rng) -> ParamVector {
    ParamVector::clamped(std::array::from_fn(|_| rng.random::<f64>()))
}

/// Maximizes EI over a golden-section bracket on coordinate `d`; returns the
/// improved point only if it beats `(x, value)`.
fn polish_coordinate(post: &Posterior, x: ParamVector, value: f64, d: usize) -> (ParamVector, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let at = |c: f64| x.with(d, c.clamp(0.0, 1.0)).expect("clamped");
    let mut lo = (x.get(d) - POLISH_RADIUS).max(0.0);
    let mut hi = (x.get(d) + POLISH_RADIUS).min(1.0);
    let mut c1 = hi - INV_PHI * (hi - lo);
    let mut c2 = lo + INV_PHI * (hi - lo);
    let mut f1 = post.expected_improvement(&at(c1));
    let mut f2 = post.expected_improvement(&at(c2));
    for _ in 0..EI_POLISH_STEPS {
        if f1 >= f2 {
            hi = c2;
            c2 = c1;
            f2 = f1;
            c1 = hi - INV_PHI * (hi - lo);
            f1 = post.expected_improvement(&at(c1));
        } else {
            lo = c1;
            c1 = c2;
            f1 = f2;
            c2 = lo + INV_PHI * (hi - lo);
            f2 = post.expected_improvement(&at(c2));
        }
    }
    let (c, f) = if f1 >= f2 { (c1, f1) } else { (c2, f2) };
    if f > value {
        (at(c), f)
    } else {
        (x, value)
    }
}

/// Best of [`EI_CANDIDATES`] shifted-Halton points, then one sweep of
/// coordinate-wise golden-section polish ([`EI_POLISH_STEPS`] steps per axis).
pub fn argmax_ei(
    state: &OptimizerState,
    cfg: &GpConfig,
    exec: Execution,
) -> Result<ParamVector, OptimizerError> {
    let post = Posterior::new(state, cfg)?;
    let mut rng = state.rng(Stream::Acquisition);
    let candidates = shifted_halton(EI_CANDIDATES, &mut rng);
    let scores = exec.map(&candidates, |x| post.expected_improvement(x));
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let (mut x, mut value) = (candidates[best], scores[best]);
    for d in 0..DIM {
        (x, value) = polish_coordinate(&post, x, value, d);
    }
    Ok(x)
}

/// Slider for the next iteration: cube center to a random point on the first
/// iteration, incumbent to EI maximizer afterwards.
pub fn next_slider(
    state: &OptimizerState,
    cfg: &GpConfig,
    exec: Execution,
) -> Result<SliderSegment, OptimizerError> {
    let (x0, mut x1) = match state.incumbent_point() {
        Some(x0) if state.iteration > 0 => (x0, argmax_ei(state, cfg, exec)?),
        _ => (ParamVector::center(), random_point(&mut state.rng(Stream::Initial))),
    };
    let mut redraw = state.rng(Stream::Redraw);
    while x0.distance(&x1) < TIE_TOL {
        x1 = random_point(&mut redraw);
    }
    Ok(SliderSegment { x0, x1 })
}

/// Records a slider choice: the chosen point beats both endpoints (except an
/// endpoint it coincides with), then the MAP values and incumbent are refitted.
///
/// Points within [`SAME_POINT_TOL`] of an existing observation reuse its index,
/// so the chosen point is only appended when it is new.
pub fn incorporate_choice(
    state: &OptimizerState,
    seg: &SliderSegment,
    t: f64,
    cfg: &GpConfig,
) -> Result<OptimizerState, OptimizerError> {
    let chosen = slider_point(seg, t)?;
    let mut next = state.clone();
    let i0 = next.observe(seg.x0);
    let i1 = next.observe(seg.x1);
    let ic = next.observe(chosen);
    let mut losers = Vec::with_capacity(2);
    for (x, i) in [(seg.x0, i0), (seg.x1, i1)] {
        if chosen.distance(&x) >= TIE_TOL && i != ic && !losers.contains(&i) {
            losers.push(i);
        }
    }
    if !losers.is_empty() {
        next.prefs.push(PreferenceTriple { winner: ic, losers });
    }
    next.map_goodness = map_estimate(&next, cfg)?;
    next.fitted_prefs = next.prefs.len();
    next.incumbent = argmax_first(&next.map_goodness);
    next.iteration += 1;
    Ok(next)
}

fn argmax_first(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, x) in xs.iter().enumerate() {
        match best {
            Some(b) if xs[b] >= *x => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pv(v: [f64; DIM]) -> ParamVector {
        ParamVector::new(v).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> OptimizerState {
        let mut s = OptimizerState::new(1);
        s.observations = (0..n).map(|_| random_point(rng)).collect();
        for _ in 0..rng.random_range(1..=2 * n) {
            let w = rng.random_range(0..n);
            let mut l = rng.random_range(0..n);
            if l == w {
                l = (l + 1) % n;
            }
            s.prefs.push(PreferenceTriple { winner: w, losers: vec![l] });
        }
        s
    }

    #[test]
    fn kernel_examples() {
        let cfg = GpConfig::default();
        let a = pv([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        let b = pv([0.9, 0.1, 0.3, 0.0, 0.5, 0.2, 0.4]);
        assert_eq!(kernel(&a, &a, &cfg), 1.0);
        assert_eq!(kernel(&a, &b, &cfg), kernel(&b, &a, &cfg));
        let c = a.with(0, 0.6).unwrap();
        assert_relative_eq!(kernel(&a, &c, &cfg), 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn likelihood_examples() {
        assert_eq!(pref_likelihood(0.3, 0.3, 0.1), 0.5);
        assert_relative_eq!(pref_likelihood(0.1 * 3f64.ln(), 0.0, 0.1), 0.75, epsilon = 1e-12);
        for (a, b) in [(0.2, -0.4), (1.5, 1.4), (-3.0, 2.0)] {
            let sum = pref_likelihood(a, b, 0.1) + pref_likelihood(b, a, 0.1);
            assert!((sum - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn prior_mode_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = random_state(&mut rng, 4);
        s.prefs.clear();
        let (v, g) = log_posterior(&[0.0; 4], &s, &GpConfig::default()).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn duplicate_preference_doubles_likelihood() {
        let cfg = GpConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = random_state(&mut rng, 3);
        s.prefs = vec![PreferenceTriple { winner: 0, losers: vec![2] }];
        let g = [0.05, -0.1, 0.02];
        let mut none = s.clone();
        none.prefs.clear();
        let (prior, _) = log_posterior(&g, &none, &cfg).unwrap();
        let (one, _) = log_posterior(&g, &s, &cfg).unwrap();
        s.prefs.push(s.prefs[0].clone());
        let (two, _) = log_posterior(&g, &s, &cfg).unwrap();
        assert_relative_eq!(two - prior, 2.0 * (one - prior), epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = GpConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let s = random_state(&mut rng, 5);
            let g: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
            let (_, grad) = log_posterior(&g, &s, &cfg).unwrap();
            for i in 0..5 {
                let h = 1e-5;
                let mut up = g.clone();
                up[i] += h;
                let mut dn = g.clone();
                dn[i] -= h;
                let fd = (log_posterior(&up, &s, &cfg).unwrap().0
                    - log_posterior(&dn, &s, &cfg).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(rel <= 1e-4, "component {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn map_examples() {
        let cfg = GpConfig::default();
        let mut s = OptimizerState::new(0);
        s.observations.push(ParamVector::center());
        assert_eq!(map_estimate(&s, &cfg).unwrap(), vec![0.0]);

        s.observations.push(pv([0.1; DIM]));
        s.prefs.push(PreferenceTriple { winner: 0, losers: vec![1] });
        let g = map_estimate(&s, &cfg).unwrap();
        assert!(g[0] > g[1]);
        let (_, grad) = log_posterior(&g, &s, &cfg).unwrap();
        assert!(grad.iter().all(|x| x.abs() <= MAP_GRAD_TOL));

        assert_eq!(
            map_estimate(&OptimizerState::new(0), &cfg),
            Err(OptimizerError::NoObservations)
        );
        s.prefs.push(PreferenceTriple { winner: 0, losers: vec![0] });
        assert_eq!(map_estimate(&s, &cfg), Err(OptimizerError::BadPreference(1)));
    }

    fn fitted(mut s: OptimizerState, cfg: &GpConfig) -> OptimizerState {
        s.map_goodness = map_estimate(&s, cfg).unwrap();
        s.fitted_prefs = s.prefs.len();
        s.incumbent = argmax_first(&s.map_goodness);
        s
    }

    #[test]
    fn prediction_examples() {
        let cfg = GpConfig {
            noise_variance: 1e-10,
            ..GpConfig::default()
        };
        let mut s = OptimizerState::new(0);
        s.observations = vec![pv([0.2; DIM]), pv([0.4; DIM]), pv([0.3, 0.5, 0.2, 0.4, 0.3, 0.2, 0.1])];
        s.prefs = vec![PreferenceTriple { winner: 1, losers: vec![0, 2] }];
        let s = fitted(s, &cfg);
        let (m, v) = posterior_predict(&s.observations[1], &s, &cfg).unwrap();
        assert_relative_eq!(m, s.map_goodness[1], epsilon = 1e-6);
        assert!(v < 1e-6);

        // far from the data the prior returns
        let far_cfg = GpConfig {
            lengthscales: [0.05; DIM],
            ..cfg.clone()
        };
        let mut near = OptimizerState::new(0);
        near.observations = vec![pv([0.0; DIM])];
        let near = fitted(near, &far_cfg);
        let (m, v) = posterior_predict(&pv([1.0; DIM]), &near, &far_cfg).unwrap();
        assert!(m.abs() < 1e-10);
        assert_relative_eq!(v, 1.0, epsilon = 1e-10);

        let (_, v_obs) = posterior_predict(&s.observations[0], &s, &cfg).unwrap();
        let (_, v_far) = posterior_predict(&pv([1.0; DIM]), &s, &cfg).unwrap();
        assert!(v_obs <= v_far);

        let mut stale = s.clone();
        stale.prefs.push(PreferenceTriple { winner: 0, losers: vec![1] });
        assert!(matches!(
            posterior_predict(&s.observations[0], &stale, &cfg),
            Err(OptimizerError::StaleMap)
        ));
    }

    #[test]
    fn ei_examples() {
        assert_relative_eq!(ei_closed_form(0.3, 1.0, 0.3), 0.39894, epsilon = 1e-5);
        assert_eq!(ei_closed_form(0.1, 0.0, 0.3), 0.0);
        assert_eq!(ei_closed_form(0.5, 0.0, 0.3), 0.5 - 0.3);
        let mut last = 0.0;
        for i in 0..50 {
            let e = ei_closed_form(-2.0 + 0.1 * i as f64, 0.4, 0.0);
            assert!(e >= 0.0 && e >= last);
            last = e;
        }
    }

    #[test]
    fn halton_in_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = shifted_halton(64, &mut rng);
        assert!(pts.iter().all(|p| p.as_array().iter().all(|x| (0.0..=1.0).contains(x))));
        assert_relative_eq!(radical_inverse(1, 2), 0.5);
        assert_relative_eq!(radical_inverse(5, 3), 7.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn argmax_dominates_random_probes() {
        let cfg = GpConfig::default();
        let mut s = OptimizerState::new(9);
        s.observations.push(pv([0.3, 0.6, 0.2, 0.8, 0.5, 0.4, 0.7]));
        s.iteration = 1;
        let s = fitted(s, &cfg);
        let x = argmax_ei(&s, &cfg, Execution::Sequential).unwrap();
        let post = Posterior::new(&s, &cfg).unwrap();
        let best = post.expected_improvement(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..100 {
            assert!(best >= post.expected_improvement(&random_point(&mut rng)));
        }
        assert_eq!(x, argmax_ei(&s, &cfg, Execution::Parallel).unwrap());
    }

    #[test]
    fn slider_rules() {
        let cfg = GpConfig::default();
        let s = OptimizerState::new(42);
        let seg = next_slider(&s, &cfg, Execution::default()).unwrap();
        assert_eq!(seg.x0, ParamVector::center());
        assert!(seg.x0.distance(&seg.x1) >= TIE_TOL);
        assert_eq!(seg, next_slider(&s, &cfg, Execution::default()).unwrap());

        assert_eq!(slider_point(&seg, 0.0).unwrap(), seg.x0);
        assert_eq!(slider_point(&seg, 1.0).unwrap(), seg.x1);
        let mid = slider_point(&seg, 0.5).unwrap();
        for d in 0..DIM {
            assert_relative_eq!(mid.get(d), 0.5 * (seg.x0.get(d) + seg.x1.get(d)), epsilon = 1e-15);
        }
        assert_eq!(slider_point(&seg, 1.5), Err(OptimizerError::SliderOutOfRange(1.5)));
    }

    #[test]
    fn choice_counting() {
        let cfg = GpConfig::default();
        let s = OptimizerState::new(42);
        let seg = next_slider(&s, &cfg, Execution::default()).unwrap();
        let half = incorporate_choice(&s, &seg, 0.5, &cfg).unwrap();
        assert_eq!(half.observations.len(), 3);
        assert_eq!(half.prefs.len(), 1);
        assert_eq!(half.prefs[0].losers.len(), 2);
        assert_eq!(half.iteration, 1);
        assert_eq!(half.incumbent, Some(2));

        let zero = incorporate_choice(&s, &seg, 0.0, &cfg).unwrap();
        assert_eq!(zero.prefs, vec![PreferenceTriple { winner: 0, losers: vec![1] }]);
        assert_eq!(zero.observations.len(), 2);

        let seg2 = next_slider(&half, &cfg, Execution::default()).unwrap();
        assert_eq!(seg2.x0, half.observations[2]);
        let third = incorporate_choice(&half, &seg2, 0.3, &cfg).unwrap();
        assert_eq!(third.observations.len(), 5);
        assert_eq!(third.iteration, 2);
    }

    #[test]
    fn state_json_roundtrip_is_exact() {
        let cfg = GpConfig::default();
        let s = OptimizerState::new(7);
        let seg = next_slider(&s, &cfg, Execution::default()).unwrap();
        let s = incorporate_choice(&s, &seg, 0.37, &cfg).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: OptimizerState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
