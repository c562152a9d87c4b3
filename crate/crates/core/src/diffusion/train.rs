use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_diffuse, EpsModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numeric::{adam_step, AdamConfig, AdamState, ParamStore, Real, Rng, Tape, Tensor, Var};

/// One clean sample and its per-row conditioning.
#[derive(Clone, Debug)]
pub struct DiffusionExample<T> {
    pub x0: Tensor<T>,
    pub cond: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Noise draws per example and optimizer step.
    #[serde(default = "one")]
    pub draws: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            adam: AdamConfig::default(),
            draws: 1,
        }
    }
}

/// `‖ε̂(x_t, t) − ε‖²` summed over elements.
#[allow(clippy::too_many_arguments)]
pub fn eps_loss<T: Real, M: EpsModel<T>>(
    tape: &mut Tape<T>,
    model: &M,
    p: &ParamStore<T>,
    ex: &DiffusionExample<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let xt = forward_diffuse(&ex.x0, t, eps, sched)?;
    let x = tape.constant(xt);
    let pred = model.forward(tape, p, x, t, sched.steps(), &ex.cond)?;
    let e = tape.constant(eps.clone());
    let d = tape.sub(pred, e)?;
    let sq = tape.mul(d, d)?;
    tape.sum(sq)
}

/// Adam on the ε objective; returns the loss of every optimizer step.
///
/// Step `s` draws its timesteps and noise from `rng.derive(s)`.
pub fn train_denoiser<T: Real, M: EpsModel<T>>(
    model: &M,
    params: &mut ParamStore<T>,
    data: &[DiffusionExample<T>],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<Vec<f64>> {
    if data.is_empty() || cfg.draws == 0 {
        return Err(Error::InvalidParameter("no training examples".into()));
    }
    let mut state = AdamState::new();
    let mut curve = Vec::with_capacity(cfg.steps);
    let n = (data.len() * cfg.draws) as f64;
    for s in 0..cfg.steps {
        let srng = rng.derive(s as u64);
        let mut tape = Tape::new();
        let mut total = tape.constant(Tensor::scalar(T::zero()));
        for (i, ex) in data.iter().enumerate() {
            for d in 0..cfg.draws {
                let r = srng.derive((i * cfg.draws + d) as u64);
                let t = r.derive_str("t").generator().gen_range(1..=sched.steps());
                let eps = r.derive_str("eps").normal(ex.x0.shape());
                let l = eps_loss(&mut tape, model, params, ex, t, &eps, sched)?;
                let l = tape.scale(l, T::lit(1.0 / n))?;
                total = tape.add(total, l)?;
            }
        }
        curve.push(tape.value(total).item().as_f64());
        let grads = tape.param_gradients(total)?;
        adam_step(params, &grads, &mut state, &cfg.adam)?;
    }
    Ok(curve)
}
