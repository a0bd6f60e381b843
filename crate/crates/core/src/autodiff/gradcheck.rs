//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck<T> {
    /// `max |analytic − numeric| / max(1, |analytic|)` over all elements.
    pub max_rel_error: T,
    /// `(tensor index, element index)` where the maximum occurred.
    pub worst: (usize, usize),
    pub evaluations: usize,
}

fn eval_loss<T: Scalar, F>(f: &mut F, params: &[Tensor<T>]) -> Result<T>
where
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::contract(format!("loss must be scalar, got {:?}", v.shape())));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the tape gradient of `f` against central differences for every
/// element of every tensor in `params`.
pub fn check_gradients<T: Scalar, F>(mut f: F, params: &[Tensor<T>], epsilon: T) -> Result<GradCheck<T>>
where
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(epsilon > T::zero()) {
        return Err(Error::contract("epsilon must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite("loss at the base point".into()));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .map(|&v| grads.get(v).cloned().expect("leaf gradient"))
        .collect();
    drop(tape);

    let mut work = params.to_vec();
    let two_eps = epsilon + epsilon;
    let mut report = GradCheck {
        max_rel_error: T::zero(),
        worst: (0, 0),
        evaluations: 1,
    };
    for ti in 0..work.len() {
        for ei in 0..work[ti].len() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + epsilon;
            let up = eval_loss(&mut f, &work)?;
            work[ti].data_mut()[ei] = orig - epsilon;
            let down = eval_loss(&mut f, &work)?;
            work[ti].data_mut()[ei] = orig;
            report.evaluations += 2;

            let numeric = (up - down) / two_eps;
            let a = analytic[ti].data()[ei];
            let err = (a - numeric).abs() / T::one().max(a.abs());
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, ei);
            }
        }
    }
    Ok(report)
}

/// Single-tensor form of [`check_gradients`]; returns the max relative error.
pub fn finite_difference_check<T: Scalar, F>(mut f: F, params: &Tensor<T>, epsilon: T) -> Result<T>
where
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    check_gradients(|tape, vars| f(tape, vars[0]), std::slice::from_ref(params), epsilon)
        .map(|r| r.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact_to_rounding() {
        let err = finite_difference_check(
            |tape, x| tape.mul(x, x),
            &Tensor::scalar(2.0),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = finite_difference_check(
            |tape, _x| Ok(tape.constant(Tensor::scalar(4.0))),
            &Tensor::vector(vec![1.0, 2.0]),
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_bad_epsilon_and_non_finite() {
        let x = Tensor::scalar(1.0);
        assert!(finite_difference_check(|t, v| t.mul(v, v), &x, 0.0).is_err());
        let r = finite_difference_check(
            |t, v| {
                let big = t.scale(v, 1e6)?;
                t.exp(big)
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
