//! Deterministic DDIM (eta = 0) inversion and sampling.
//!
//! Timesteps run `0..=T`, with `alpha_bar(0) = 1`. The step between `t` and
//! `t + 1` evaluates the denoiser once, at `(z, t + 1)`:
//!
//! - inversion `t -> t+1` uses `eps(z_t, t+1)`;
//! - sampling `t+1 -> t` uses `eps(z_{t+1}, t+1)`.
//!
//! Both directions therefore query the denoiser at the same timestep labels
//! `1..=T`, and features captured during inversion at label `t` are injected
//! at label `t` during sampling.
//!
//! Both directions share one update: `x0 = (z - sqrt(1 - a) eps) / sqrt(a)`
//! followed by `z' = sqrt(a') x0 + sqrt(1 - a') eps`.

use std::path::Path;

use ndarray::Array3;

use crate::codec::LatentState;
use crate::error::{Error, Result};
use crate::hooks::AttentionHookSet;
use crate::tensor_io::write_tnsr;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_MIN: f64 = 0.00085;
pub const DEFAULT_BETA_MAX: f64 = 0.012;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit per-step betas (`betas[0]` is step 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let alpha_bars: Vec<f64> = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("alpha_bar must strictly decrease".into()));
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_bar` for `t = 1..=T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `alpha_bar(t)` with `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("default schedule is valid")
    }
}

/// Scaled-linear schedule: `sqrt(beta)` linear from `sqrt(beta_min)` to `sqrt(beta_max)`.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("step count must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let (lo, hi) = (beta_min.sqrt(), beta_max.sqrt());
    let betas = (0..steps)
        .map(|i| {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            let s = lo + frac * (hi - lo);
            s * s
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// A noise-prediction network.
pub trait Denoiser: Send + Sync {
    /// Predicts the noise in `z` at timestep `t`. Every self-attention call
    /// goes through `hooks`.
    fn predict_noise(&self, z: &LatentState, t: usize, hooks: &mut AttentionHookSet<'_>) -> Result<Array3<f64>>;
}

/// Predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_noise(&self, z: &LatentState, _t: usize, _hooks: &mut AttentionHookSet<'_>) -> Result<Array3<f64>> {
        Ok(Array3::zeros(z.tensor.dim()))
    }
}

/// Predicts the same value everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantDenoiser(pub f64);

impl Denoiser for ConstantDenoiser {
    fn predict_noise(&self, z: &LatentState, _t: usize, _hooks: &mut AttentionHookSet<'_>) -> Result<Array3<f64>> {
        Ok(Array3::from_elem(z.tensor.dim(), self.0))
    }
}

fn ddim_step(z: &Array3<f64>, eps: &Array3<f64>, a_from: f64, a_to: f64) -> Array3<f64> {
    let (sa, sn) = (a_from.sqrt(), (1.0 - a_from).sqrt());
    let (ta, tn) = (a_to.sqrt(), (1.0 - a_to).sqrt());
    let mut out = z.clone();
    out.zip_mut_with(eps, |zv, &e| {
        let x0 = (*zv - sn * e) / sa;
        *zv = ta * x0 + tn * e;
    });
    out
}

fn checked_eps(
    d: &dyn Denoiser,
    z: &LatentState,
    t: usize,
    hooks: &mut AttentionHookSet<'_>,
) -> Result<Array3<f64>> {
    let eps = d.predict_noise(z, t, hooks)?;
    if eps.dim() != z.tensor.dim() {
        return Err(Error::Shape(format!(
            "denoiser returned {:?} for a {:?} latent",
            eps.dim(),
            z.tensor.dim()
        )));
    }
    if !eps.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { timestep: t });
    }
    Ok(eps)
}

/// Inverts a clean latent to `t = T`. Returns the trajectory `z_0..=z_T`.
pub fn ddim_invert(
    z0: &LatentState,
    sched: &NoiseSchedule,
    d: &dyn Denoiser,
    hooks: &mut AttentionHookSet<'_>,
) -> Result<Vec<LatentState>> {
    if z0.timestep != 0 {
        return Err(Error::InvalidArgument(format!(
            "inversion starts at t = 0, latent is at t = {}",
            z0.timestep
        )));
    }
    if !z0.is_finite() {
        return Err(Error::NonFinite { timestep: 0 });
    }
    let mut traj = Vec::with_capacity(sched.steps() + 1);
    traj.push(z0.clone());
    for t in 0..sched.steps() {
        let z = &traj[t];
        let eps = checked_eps(d, z, t + 1, hooks)?;
        let next = ddim_step(&z.tensor, &eps, sched.alpha_bar(t), sched.alpha_bar(t + 1));
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { timestep: t + 1 });
        }
        traj.push(LatentState::new(next, t + 1, z0.branch));
    }
    Ok(traj)
}

/// Samples from `z_T` down to `t = 0`, returning the whole trajectory
/// `z_T, ..., z_0`.
pub fn ddim_sample_trajectory(
    z_t: &LatentState,
    sched: &NoiseSchedule,
    d: &dyn Denoiser,
    hooks: &mut AttentionHookSet<'_>,
) -> Result<Vec<LatentState>> {
    let steps = sched.steps();
    if z_t.timestep != steps {
        return Err(Error::InvalidArgument(format!(
            "sampling starts at t = {steps}, latent is at t = {}",
            z_t.timestep
        )));
    }
    if !z_t.is_finite() {
        return Err(Error::NonFinite { timestep: steps });
    }
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(z_t.clone());
    for t in (1..=steps).rev() {
        let z = traj.last().expect("trajectory is never empty");
        let eps = checked_eps(d, z, t, hooks)?;
        let prev = ddim_step(&z.tensor, &eps, sched.alpha_bar(t), sched.alpha_bar(t - 1));
        if !prev.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { timestep: t - 1 });
        }
        traj.push(LatentState::new(prev, t - 1, z_t.branch));
    }
    Ok(traj)
}

/// Samples from `z_T` down to `t = 0`.
pub fn ddim_sample(
    z_t: &LatentState,
    sched: &NoiseSchedule,
    d: &dyn Denoiser,
    hooks: &mut AttentionHookSet<'_>,
) -> Result<LatentState> {
    let mut traj = ddim_sample_trajectory(z_t, sched, d, hooks)?;
    Ok(traj.pop().expect("trajectory is never empty"))
}

/// Writes one `<branch>_t<NNN>.tnsr` per state into `dir`.
pub fn dump_trajectory(dir: impl AsRef<Path>, traj: &[LatentState]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for z in traj {
        let branch = serde_json::to_value(z.branch)?;
        let name = format!("{}_t{:03}.tnsr", branch.as_str().unwrap_or("latent"), z.timestep);
        write_tnsr(dir.join(name), &z.tensor.clone().into_dyn())?;
    }
    Ok(())
}
