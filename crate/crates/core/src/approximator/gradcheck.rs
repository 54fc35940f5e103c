use super::matrix::Matrix;
use super::params::ParamVector;
use super::tape::{ParamVars, Tape, Var};
use crate::error::Result;

/// Central-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Below this magnitude the relative error falls back to an absolute one.
const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-4)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of a scalar function against central differences.
///
/// `f` builds the function on a fresh tape from the registered parameters and
/// returns a `1 x 1` node. It is called once taped and `2 * params.len()`
/// times on perturbed copies, so any randomness must be fixed inside `f`.
pub fn gradient_check<F>(f: F, params: &ParamVector, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let analytic = taped_gradient(&f, params)?;
    check_against(&f, params, analytic.values(), tol)
}

/// Like [`gradient_check`] but with a caller-supplied gradient, so a corrupted
/// or independently assembled gradient can be tested.
pub fn check_against<F>(f: &F, params: &ParamVector, gradient: &[f64], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let eval = |p: &ParamVector| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = tape.register(p, false);
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).as_scalar())
    };
    let mut worst = 0.0;
    let mut worst_index = 0;
    let mut probe = params.clone();
    for k in 0..params.len() {
        let base = params.values()[k];
        probe.values_mut()[k] = base + FD_STEP;
        let fp = eval(&probe)?;
        probe.values_mut()[k] = base - FD_STEP;
        let fm = eval(&probe)?;
        probe.values_mut()[k] = base;
        let fd = (fp - fm) / (2.0 * FD_STEP);
        let err = relative_error(gradient[k], fd);
        if err > worst || err.is_nan() {
            worst = err;
            worst_index = k;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_index,
        tolerance: tol,
        passed: worst <= tol,
    })
}

pub fn taped_gradient<F>(f: &F, params: &ParamVector) -> Result<ParamVector>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.register(params, true);
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out, &Matrix::scalar(1.0))?;
    Ok(grads.params(params, &vars))
}
