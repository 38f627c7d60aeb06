//! Noise schedule, forward noising and deterministic DDIM stepping.
//!
//! Positions index the sampler grid: position `0` is the clean latent and
//! position `S` the noisiest. Denoising step `j` (counted from the noisy end,
//! `j = 1` first) runs at position `S − j + 1` and moves the latent to
//! position `S − j`.

use serde::{Deserialize, Serialize};

use crate::attention::CrossAttentionMaps;
use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Sampler steps `S`.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Length of the underlying discrete diffusion process.
    pub train_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 50, beta_start: 0.00085, beta_end: 0.012, train_steps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    alpha_bar: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Scaled-linear betas over `train_steps`, subsampled at `steps` evenly
    /// spaced positions. Position 0 is pinned to `ᾱ = 1`.
    pub fn scaled_linear(config: &ScheduleConfig) -> Result<Self> {
        let ScheduleConfig { steps, beta_start, beta_end, train_steps } = *config;
        if steps == 0 || train_steps < steps {
            return Err(Error::Parameter(format!(
                "need 1 <= steps <= train_steps, got steps={steps}, train_steps={train_steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let (s0, s1) = (beta_start.sqrt(), beta_end.sqrt());
        let denom = (train_steps - 1).max(1) as f64;
        let mut cumulative = Vec::with_capacity(train_steps);
        let mut acc = 1.0f64;
        for i in 0..train_steps {
            let b = s0 + (s1 - s0) * i as f64 / denom;
            acc *= 1.0 - b * b;
            cumulative.push(acc);
        }
        let mut alpha_bar = vec![T::one()];
        for p in 1..=steps {
            let t = p * train_steps / steps - 1;
            alpha_bar.push(T::lit(cumulative[t]));
        }
        Self::from_alpha_bar(alpha_bar)
    }

    /// Schedule from an explicit `ᾱ` table, position 0 first.
    pub fn from_alpha_bar(alpha_bar: Vec<T>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if alpha_bar.iter().any(|&a| !(a > T::zero() && a <= T::one())) {
            return Err(Error::Parameter("every ᾱ must lie in (0, 1]".into()));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Parameter("ᾱ must be strictly decreasing with position".into()));
        }
        Ok(Self { alpha_bar })
    }

    /// Number of sampler steps `S`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, position: usize) -> T {
        self.alpha_bar[position]
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bar
    }

    /// Position at which denoising step `j` (1-based from the noisy end) runs.
    pub fn position_of_step(&self, step: usize) -> Result<usize> {
        let s = self.steps();
        if step == 0 || step > s {
            return Err(Error::Parameter(format!("denoising step {step} outside 1..={s}")));
        }
        Ok(s - step + 1)
    }

    fn check_position(&self, position: usize) -> Result<()> {
        if position > self.steps() {
            return Err(Error::Parameter(format!("position {position} outside 0..={}", self.steps())));
        }
        Ok(())
    }

    /// The `ᾱ` table as an `(S+1) × 1 × 1` grid, for dumping.
    pub fn to_grid(&self) -> FeatureGrid<T> {
        FeatureGrid::from_raw(self.alpha_bar.len(), 1, 1, self.alpha_bar.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr<T> {
    pub value: T,
    /// Set when `ᾱ = 1` had to be pulled below one to keep the ratio finite.
    pub clamped: bool,
}

const SNR_CLAMP: f64 = 1e-9;

/// `sqrt(ᾱ / (1 − ᾱ))` at `position`.
pub fn snr<T: Scalar>(position: usize, sched: &NoiseSchedule<T>) -> Result<Snr<T>> {
    sched.check_position(position)?;
    let mut a = sched.alpha_bar(position);
    let limit = T::one() - T::lit(SNR_CLAMP);
    let clamped = a > limit;
    if clamped {
        a = limit;
    }
    Ok(Snr { value: (a / (T::one() - a)).sqrt(), clamped })
}

/// `sqrt(ᾱ)·z0 + sqrt(1 − ᾱ)·eps` at `position`.
pub fn forward_noise<T: Scalar>(
    z0: &FeatureGrid<T>,
    position: usize,
    eps: &FeatureGrid<T>,
    sched: &NoiseSchedule<T>,
) -> Result<FeatureGrid<T>> {
    sched.check_position(position)?;
    let a = sched.alpha_bar(position);
    z0.lin_comb(a.sqrt(), eps, (T::one() - a).sqrt())
}

/// A latent at a sampler position.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    pub step: usize,
    pub latent: FeatureGrid<T>,
}

impl<T: Scalar> LatentState<T> {
    pub fn new(step: usize, latent: FeatureGrid<T>, sched: &NoiseSchedule<T>) -> Result<Self> {
        sched.check_position(step)?;
        Ok(Self { step, latent })
    }
}

/// Moves `z` from position `from` to position `to` along the deterministic
/// DDIM path implied by `eps`.
fn ddim_transfer<T: Scalar>(
    z: &FeatureGrid<T>,
    eps: &FeatureGrid<T>,
    from: usize,
    to: usize,
    sched: &NoiseSchedule<T>,
) -> Result<FeatureGrid<T>> {
    z.ensure_same_shape(eps)?;
    let (a_from, a_to) = (sched.alpha_bar(from), sched.alpha_bar(to));
    let (sa, sb) = (a_from.sqrt(), (T::one() - a_from).sqrt());
    let (ta, tb) = (a_to.sqrt(), (T::one() - a_to).sqrt());
    z.zip_with(eps, |zv, ev| {
        let x0 = (zv - sb * ev) / sa;
        ta * x0 + tb * ev
    })
}

/// One deterministic (η = 0) denoising step from `state.step` to `state.step − 1`.
pub fn ddim_step<T: Scalar>(
    state: &LatentState<T>,
    noise_pred: &FeatureGrid<T>,
    sched: &NoiseSchedule<T>,
) -> Result<LatentState<T>> {
    if state.step == 0 {
        return Err(Error::AlreadyClean);
    }
    sched.check_position(state.step)?;
    let latent = ddim_transfer(&state.latent, noise_pred, state.step, state.step - 1, sched)?;
    Ok(LatentState { step: state.step - 1, latent })
}

/// One inversion step from `state.step` to `state.step + 1`.
pub fn ddim_invert_step<T: Scalar>(
    state: &LatentState<T>,
    noise_pred: &FeatureGrid<T>,
    sched: &NoiseSchedule<T>,
) -> Result<LatentState<T>> {
    if state.step >= sched.steps() {
        return Err(Error::Parameter("latent is already at the noisy end of the schedule".into()));
    }
    let latent = ddim_transfer(&state.latent, noise_pred, state.step, state.step + 1, sched)?;
    Ok(LatentState { step: state.step + 1, latent })
}

/// A noise-prediction network as seen by the sampler.
pub trait NoisePredictor<T: Scalar> {
    /// Predicts the noise in `latent` for a step that runs at `position`,
    /// together with the cross-attention maps observed on the way.
    fn predict(&self, latent: &FeatureGrid<T>, position: usize) -> Result<(FeatureGrid<T>, CrossAttentionMaps<T>)>;
}

/// Inverts a clean latent to the noisy end of the schedule.
///
/// The step into position `p` evaluates the predictor on the current latent
/// at position `p`, mirroring the pairing used by [`ddim_step`] on the way
/// back. Returns the noisy state and the cross-attention maps of every pass,
/// in inversion order.
pub fn ddim_invert<T: Scalar, P: NoisePredictor<T> + ?Sized>(
    z0: &FeatureGrid<T>,
    denoiser: &P,
    sched: &NoiseSchedule<T>,
) -> Result<(LatentState<T>, Vec<CrossAttentionMaps<T>>)> {
    let mut state = LatentState { step: 0, latent: z0.clone() };
    let mut maps = Vec::with_capacity(sched.steps());
    while state.step < sched.steps() {
        let (eps, step_maps) = denoiser.predict(&state.latent, state.step + 1)?;
        state = ddim_invert_step(&state, &eps, sched)?;
        maps.push(step_maps);
    }
    Ok((state, maps))
}

/// Runs the full deterministic sampler from `state` down to position 0.
pub fn ddim_sample<T: Scalar, P: NoisePredictor<T> + ?Sized>(
    mut state: LatentState<T>,
    denoiser: &P,
    sched: &NoiseSchedule<T>,
) -> Result<LatentState<T>> {
    while state.step > 0 {
        let (eps, _) = denoiser.predict(&state.latent, state.step)?;
        state = ddim_step(&state, &eps, sched)?;
    }
    Ok(state)
}

/// Classifier-free guidance: `uncond + scale·(cond − uncond)`.
/// A scale of exactly one returns `eps_cond` unchanged.
pub fn cfg_combine<T: Scalar>(eps_uncond: &FeatureGrid<T>, eps_cond: &FeatureGrid<T>, scale: T) -> Result<FeatureGrid<T>> {
    if scale == T::one() {
        eps_uncond.ensure_same_shape(eps_cond)?;
        return Ok(eps_cond.clone());
    }
    eps_uncond.zip_with(eps_cond, |u, c| u + scale * (c - u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: f64) -> FeatureGrid<f64> {
        FeatureGrid::filled(2, 2, 2, v).unwrap()
    }

    #[test]
    fn default_schedule_bounds() {
        let s = NoiseSchedule::<f64>::scaled_linear(&ScheduleConfig::default()).unwrap();
        assert_eq!(s.steps(), 50);
        assert!(s.alpha_bar(0) > 0.999 && s.alpha_bar(0) <= 1.0);
        assert!(s.alpha_bar(50) > 0.0 && s.alpha_bar(50) < 0.01);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn forward_noise_endpoints_and_value() {
        let s = NoiseSchedule::from_alpha_bar(vec![1.0, 0.25, 1e-12]).unwrap();
        let z0 = grid(1.0);
        let eps = grid(1.0);
        assert_eq!(forward_noise(&z0, 0, &grid(7.0), &s).unwrap(), z0);
        let mid = forward_noise(&z0, 1, &eps, &s).unwrap();
        let expect = 0.5 + 0.75f64.sqrt();
        assert!(mid.as_slice().iter().all(|&v| (v - expect).abs() < 1e-15));
        let noisy = forward_noise(&grid(3.0), 2, &grid(-2.0), &s).unwrap();
        assert!(noisy.as_slice().iter().all(|&v| (v + 2.0).abs() < 1e-5));
        assert!(forward_noise(&z0, 1, &FeatureGrid::zeros(2, 2, 1).unwrap(), &s).is_err());
    }

    #[test]
    fn snr_values_and_clamp() {
        let s = NoiseSchedule::<f64>::from_alpha_bar(vec![1.0, 0.8, 0.5]).unwrap();
        assert!((snr(1, &s).unwrap().value - 2.0).abs() < 1e-12);
        assert_eq!(snr(2, &s).unwrap().value, 1.0);
        let clean = snr(0, &s).unwrap();
        assert!(clean.clamped && clean.value.is_finite());
    }

    #[test]
    fn snr_monotone_over_default_schedule() {
        let s = NoiseSchedule::<f64>::scaled_linear(&ScheduleConfig::default()).unwrap();
        let vals: Vec<f64> = (0..=50).map(|p| snr(p, &s).unwrap().value).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ddim_step_recovers_trajectory() {
        let s = NoiseSchedule::<f64>::scaled_linear(&ScheduleConfig::default()).unwrap();
        let z0 = FeatureGrid::from_fn(3, 3, 2, |h, w, c| (h as f64 - w as f64) * 0.3 + c as f64).unwrap();
        let eps = FeatureGrid::from_fn(3, 3, 2, |h, w, c| ((h * 5 + w * 3 + c) % 7) as f64 / 3.0 - 1.0).unwrap();
        for p in 1..=50 {
            let state = LatentState::new(p, forward_noise(&z0, p, &eps, &s).unwrap(), &s).unwrap();
            let next = ddim_step(&state, &eps, &s).unwrap();
            let expect = forward_noise(&z0, p - 1, &eps, &s).unwrap();
            assert_eq!(next.step, p - 1);
            assert!(next.latent.max_abs_diff(&expect).unwrap() < 1e-9, "position {p}");
        }
    }

    #[test]
    fn zero_prediction_rescales() {
        let s = NoiseSchedule::from_alpha_bar(vec![1.0, 0.64, 0.36]).unwrap();
        let state = LatentState::new(2, grid(1.5), &s).unwrap();
        let next = ddim_step(&state, &grid(0.0), &s).unwrap();
        let ratio = (0.64f64 / 0.36).sqrt();
        assert!(next.latent.as_slice().iter().all(|&v| (v - 1.5 * ratio).abs() < 1e-14));
    }

    #[test]
    fn two_steps_compose_affinely() {
        // Consecutive steps with one prediction collapse to a single transfer
        // from position 2 to position 0 in (x0-estimate, eps) coordinates.
        let s = NoiseSchedule::from_alpha_bar(vec![0.99, 0.7, 0.3]).unwrap();
        let z = grid(0.8);
        let eps = grid(-0.4);
        let once = ddim_step(&LatentState::new(2, z.clone(), &s).unwrap(), &eps, &s).unwrap();
        let twice = ddim_step(&once, &eps, &s).unwrap();
        let x0 = (0.8 - 0.7f64.sqrt() * -0.4) / 0.3f64.sqrt();
        let direct = 0.99f64.sqrt() * x0 + 0.01f64.sqrt() * -0.4;
        assert!(twice.latent.as_slice().iter().all(|&v| (v - direct).abs() < 1e-12));
    }

    #[test]
    fn step_from_clean_is_an_error() {
        let s = NoiseSchedule::from_alpha_bar(vec![1.0, 0.5]).unwrap();
        let state = LatentState::new(0, grid(1.0), &s).unwrap();
        assert!(matches!(ddim_step(&state, &grid(0.0), &s), Err(Error::AlreadyClean)));
    }

    #[test]
    fn cfg_examples() {
        let u = grid(0.0);
        let c = grid(1.0);
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&c, &c, 13.0).unwrap(), c);
        assert!(cfg_combine(&u, &c, 7.5).unwrap().as_slice().iter().all(|&v| v == 7.5));
    }

    struct Zero;

    impl NoisePredictor<f64> for Zero {
        fn predict(&self, latent: &FeatureGrid<f64>, _: usize) -> Result<(FeatureGrid<f64>, CrossAttentionMaps<f64>)> {
            let (h, w, c) = latent.shape();
            Ok((FeatureGrid::zeros(h, w, c)?, CrossAttentionMaps::default()))
        }
    }

    #[test]
    fn zero_denoiser_inversion_is_rescaling() {
        let s = NoiseSchedule::<f64>::scaled_linear(&ScheduleConfig { steps: 10, ..Default::default() }).unwrap();
        let z0 = grid(0.7);
        let (state, maps) = ddim_invert(&z0, &Zero, &s).unwrap();
        assert_eq!(state.step, 10);
        assert_eq!(maps.len(), 10);
        let expect = 0.7 * s.alpha_bar(10).sqrt();
        assert!(state.latent.as_slice().iter().all(|&v| (v - expect).abs() < 1e-12));
    }
}
