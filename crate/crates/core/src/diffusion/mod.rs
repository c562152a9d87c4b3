//! DDPM noise schedule, ancestral sampling with ε-prediction, and masked
//! blending of each step with a forward-diffused reference.
//!
//! Samples are `[rows, cols]` tensors. Masks select rows: a coarse voxel of
//! the structure grid or a node of the code graph.

mod models;
mod train;

pub use models::{structure_cond, EpsModel, LatentDenoiser, StructureDenoiser};
pub use train::{eps_loss, train_denoiser, DiffusionExample, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Real, Rng, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Step `t` runs from 1 to `steps`; index 0 stands for clean data.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidParameter("diffusion needs at least one step".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
    };
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Variance of `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0·x0 + ct·x_t`.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let c0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct)
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::InvalidParameter(format!("step {t} outside 0..={}", self.steps())));
        }
        Ok(())
    }
}

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · eps`; `t = 0` returns `x0` unchanged.
pub fn forward_diffuse<T: Real>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    sched.check_t(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::shape("forward_diffuse", x0.shape(), eps.shape()));
    }
    if t == 0 {
        return Ok(x0.clone());
    }
    let a = T::lit(sched.alpha_bar(t).sqrt());
    let b = T::lit((1.0 - sched.alpha_bar(t)).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + b * e).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// An ε-predictor evaluated outside of training.
pub trait Denoiser<T: Real> {
    fn predict(&self, x: &Tensor<T>, t: usize) -> Result<Tensor<T>>;
}

impl<T: Real, F: Fn(&Tensor<T>, usize) -> Result<Tensor<T>>> Denoiser<T> for F {
    fn predict(&self, x: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        self(x, t)
    }
}

/// A trainable model bound to its parameters and conditioning.
pub struct Bound<'a, T: Real, M: EpsModel<T>> {
    pub model: &'a M,
    pub params: &'a ParamStore<T>,
    pub cond: &'a Tensor<T>,
    /// Schedule length used to normalize `t`.
    pub steps: usize,
}

impl<T: Real, M: EpsModel<T>> Denoiser<T> for Bound<'_, T, M> {
    fn predict(&self, x: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.model.forward(&mut tape, self.params, xv, t, self.steps, self.cond)?;
        Ok(tape.value(y).clone())
    }
}

/// Ancestral step `x_t → x̃_{t-1}` from the predicted noise. No noise is
/// added at `t = 1`.
pub fn reverse_step<T: Real>(
    model: &dyn Denoiser<T>,
    x_t: &Tensor<T>,
    t: usize,
    sched: &NoiseSchedule,
    rng: &Rng,
) -> Result<Tensor<T>> {
    if t == 0 {
        return Err(Error::InvalidParameter("reverse step from t = 0".into()));
    }
    sched.check_t(t)?;
    let eps = model.predict(x_t, t)?;
    if eps.shape() != x_t.shape() {
        return Err(Error::shape("reverse_step", eps.shape(), x_t.shape()));
    }
    if !eps.is_finite() {
        return Err(Error::NonFinite { op: "reverse_step" });
    }
    let inv_sqrt_alpha = T::lit(1.0 / sched.alpha(t).sqrt());
    let k = T::lit(sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt());
    let mut out: Vec<T> = x_t
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| inv_sqrt_alpha * (x - k * e))
        .collect();
    if t > 1 {
        let sigma = T::lit(sched.posterior_variance(t).sqrt());
        let z: Tensor<T> = rng.normal(x_t.shape());
        for (o, &n) in out.iter_mut().zip(z.data()) {
            *o += sigma * n;
        }
    }
    Tensor::new(x_t.shape().to_vec(), out)
}

/// Rows marked in `mask` are pinned to `reference` during sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendMask<T> {
    pub mask: Vec<bool>,
    pub reference: Tensor<T>,
}

impl<T: Real> BlendMask<T> {
    pub fn new(mask: Vec<bool>, reference: Tensor<T>) -> Result<Self> {
        if mask.len() != reference.rows() {
            return Err(Error::shape("BlendMask", &[mask.len()], reference.shape()));
        }
        Ok(BlendMask { mask, reference })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        BlendMask {
            mask: vec![false; shape[0]],
            reference: Tensor::zeros(shape),
        }
    }

    pub fn complement(&self) -> Self {
        BlendMask {
            mask: self.mask.iter().map(|&m| !m).collect(),
            reference: self.reference.clone(),
        }
    }
}

/// `x̂ = (1 − m) ⊙ x̃ + m ⊙ x^ref_{t_prev}` with the reference noised afresh.
pub fn blend_step<T: Real>(
    x_tilde: &Tensor<T>,
    mask: &BlendMask<T>,
    t_prev: usize,
    sched: &NoiseSchedule,
    rng: &Rng,
) -> Result<Tensor<T>> {
    if x_tilde.shape() != mask.reference.shape() || mask.mask.len() != x_tilde.rows() {
        return Err(Error::shape("blend_step", x_tilde.shape(), mask.reference.shape()));
    }
    let eps: Tensor<T> = rng.normal(x_tilde.shape());
    let r = forward_diffuse(&mask.reference, t_prev, &eps, sched)?;
    let c = x_tilde.cols();
    let mut out = x_tilde.clone();
    for (i, &m) in mask.mask.iter().enumerate() {
        if m {
            out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&r.data()[i * c..(i + 1) * c]);
        }
    }
    Ok(out)
}

#[derive(Default)]
pub struct SampleOptions<'a, T> {
    /// Extra noise-and-redo rounds per step (RePaint-style); 0 disables.
    pub resample: usize,
    /// Called with `(t, x_t)` for the initial noise and after every step.
    pub on_step: Option<&'a mut dyn FnMut(usize, &Tensor<T>)>,
}

/// Full reverse trajectory from `x_T ~ N(0, I)` to `x_0`.
///
/// Stream layout under `rng`: `"init"` for `x_T`, and per step `t` the
/// streams `derive(t)` → `"reverse"`, `"reference"`, `"resample"`.
pub fn sample<T: Real>(
    model: &dyn Denoiser<T>,
    shape: &[usize],
    sched: &NoiseSchedule,
    mask: Option<&BlendMask<T>>,
    rng: &Rng,
    mut opts: SampleOptions<'_, T>,
) -> Result<Tensor<T>> {
    if let Some(m) = mask {
        if m.reference.shape() != shape {
            return Err(Error::shape("sample", m.reference.shape(), shape));
        }
    }
    let mut x: Tensor<T> = rng.derive_str("init").normal(shape);
    if let Some(f) = opts.on_step.as_mut() {
        f(sched.steps(), &x);
    }
    for t in (1..=sched.steps()).rev() {
        let step_rng = rng.derive(t as u64);
        for u in 0..=opts.resample {
            let sub = |label: &str| {
                let r = step_rng.derive_str(label);
                if u == 0 {
                    r
                } else {
                    r.derive(u as u64)
                }
            };
            let x_tilde = reverse_step(model, &x, t, sched, &sub("reverse"))?;
            let x_prev = match mask {
                Some(m) => blend_step(&x_tilde, m, t - 1, sched, &sub("reference"))?,
                None => x_tilde,
            };
            if u < opts.resample && t > 1 {
                // Re-noise one step and repeat.
                let n: Tensor<T> = sub("resample").normal(shape);
                let (a, b) = (T::lit(sched.alpha(t).sqrt()), T::lit(sched.beta(t).sqrt()));
                let data = x_prev.data().iter().zip(n.data()).map(|(&v, &e)| a * v + b * e).collect();
                x = Tensor::new(shape.to_vec(), data)?;
            } else {
                x = x_prev;
                break;
            }
        }
        if let Some(f) = opts.on_step.as_mut() {
            f(t - 1, &x);
        }
    }
    Ok(x)
}

/// Sampler settings as stored in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Threshold on sampled coarse values; above means occupied.
    #[serde(default)]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    /// Sampling step count replacing `T`; the β range is rescaled by
    /// `T / steps_override` to keep the total noise level.
    #[serde(default)]
    pub steps_override: Option<usize>,
    #[serde(default)]
    pub resample: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            threshold: 0.0,
            seed: 0,
            steps_override: None,
            resample: 0,
        }
    }
}

impl SamplerConfig {
    /// Linear schedule over `steps`, with the standard 1000-step β range
    /// rescaled so the total noise level is comparable.
    pub fn for_steps(steps: usize) -> Self {
        let s = 1000.0 / steps as f64;
        SamplerConfig {
            steps,
            beta_min: 1e-4 * s,
            beta_max: (0.02 * s).min(0.999),
            ..Default::default()
        }
    }

    pub fn effective_steps(&self) -> usize {
        self.steps_override.unwrap_or(self.steps)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let n = self.effective_steps();
        let s = if n == 0 { 1.0 } else { self.steps as f64 / n as f64 };
        make_schedule(n, self.beta_min * s, (self.beta_max * s).min(0.999), ScheduleKind::Linear)
            .map_err(|e| Error::Config(e.to_string()))
    }
}
