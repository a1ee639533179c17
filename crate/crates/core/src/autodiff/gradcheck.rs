//! Central finite-difference gradient checking in 64-bit arithmetic.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Denominator floor of the relative error. Below this magnitude the
/// comparison is effectively absolute, so round-off in gradients that are
/// analytically ~0 does not register as a large relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Number of scalar coordinates checked.
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    let v = tape.value(y);
    if v.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of a scalar `f` against central
/// differences with respect to every coordinate of every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    if !tape.value(y).all_finite() {
        return Err(Error::Contract("grad_check: non-finite function value".into()));
    }
    let grads = tape.backward(y)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        tol,
        passed: true,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[which].shape()));
        if !analytic.all_finite() {
            return Err(Error::Contract(format!("grad_check: non-finite gradient for input {which}")));
        }
        for i in 0..inputs[which].numel() {
            let x0 = inputs[which].data()[i];
            probe[which].data_mut()[i] = x0 + eps;
            let up = eval_scalar(&f, &probe)?;
            probe[which].data_mut()[i] = x0 - eps;
            let down = eval_scalar(&f, &probe)?;
            probe[which].data_mut()[i] = x0;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Contract(format!(
                    "grad_check: non-finite value when perturbing input {which}[{i}]"
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Tensor<f64> {
        Tensor::from_f64(&[2, 3], &[0.3, -1.2, 0.8, 2.0, -0.4, 0.1]).unwrap()
    }

    #[test]
    fn sum_of_squares_is_essentially_exact() {
        let r = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &x(),
            DEFAULT_EPS,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert!(r.passed);
    }

    #[test]
    fn softmax_log_within_tolerance() {
        let w = Tensor::from_f64(&[2, 3], &[1.0, 0.0, 2.0, -1.0, 0.5, 0.25]).unwrap();
        let r = grad_check(
            move |t, x| {
                let s = t.softmax(x, 1)?;
                let l = t.log(s);
                let wv = t.constant(w.clone());
                let p = t.mul(l, wv)?;
                Ok(t.sum(p))
            },
            &x(),
            DEFAULT_EPS,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut tape = Tape::new();
        let xv = tape.variable(x());
        let c = tape.constant(Tensor::scalar(3.0));
        let z = tape.scale(xv, 0.0);
        let s = tape.sum(z);
        let y = tape.add(s, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(xv).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_output_is_a_diagnostic_failure() {
        let bad = Tensor::from_f64(&[1], &[-1.0]).unwrap();
        let r = grad_check(
            |t, x| {
                let s = t.sqrt(x);
                Ok(t.sum(s))
            },
            &bad,
            DEFAULT_EPS,
            DEFAULT_TOL,
        );
        assert!(r.is_err());
    }
}
