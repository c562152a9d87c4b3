//! Central finite-difference checking of tape gradients.
//!
//! The checker only ever calls the forward closure; the numerical estimate
//! never touches the backward pass it is compared against.

use rand::Rng as _;

use crate::error::Result;
use crate::numeric::{ParamStore, Real, Rng, Tape, Var};

/// Magnitude below which gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares autodiff gradients of `loss_fn` with central differences.
///
/// `loss_fn` must build a scalar loss on the given tape, binding parameters
/// from the given store. Up to `coords_per_param` coordinates of each
/// parameter are sampled with `rng`.
pub fn check_gradients<T, F>(
    params: &ParamStore<T>,
    loss_fn: F,
    step: f64,
    coords_per_param: usize,
    rng: &Rng,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let grads = tape.param_gradients(loss)?;

    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss_fn(&mut t, store)?;
        Ok(t.value(l).item().as_f64())
    };

    let mut report = GradCheckReport::default();
    let mut g = rng.generator();
    let mut probe = params.clone();
    for (name, grad) in &grads {
        let n = grad.len();
        let picks: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            (0..coords_per_param).map(|_| g.gen_range(0..n)).collect()
        };
        for idx in picks {
            let orig = params.get(name).expect("bound parameter").data()[idx];
            let h = T::lit(step);
            probe.get_mut(name).unwrap().data_mut()[idx] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[idx] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * step);
            let err = rel_error(fd, grad.data()[idx].as_f64());
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((name.clone(), idx));
                }
            }
        }
    }
    Ok(report)
}
