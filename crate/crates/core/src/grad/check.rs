use super::tape::{GradResult, Node, Tape};
use crate::real::Real;

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck<T> {
    /// max over coordinates of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: T,
    pub worst_index: Option<usize>,
    pub analytic: Vec<T>,
    pub numeric: Vec<T>,
}

/// Compares the adjoint of `f` at `x0` against central differences with
/// step `step`. `f` builds a scalar loss from a leaf on a fresh tape.
pub fn grad_check<T, F>(f: F, x0: &[T], shape: &[usize], step: T) -> GradResult<GradCheck<T>>
where
    T: Real,
    F: Fn(&mut Tape<T>, Node) -> GradResult<Node>,
{
    grad_check_excluding(f, x0, shape, step, &[])
}

/// [`grad_check`] skipping the listed coordinates (e.g. ones sitting on a kink).
pub fn grad_check_excluding<T, F>(
    f: F,
    x0: &[T],
    shape: &[usize],
    step: T,
    exclude: &[usize],
) -> GradResult<GradCheck<T>>
where
    T: Real,
    F: Fn(&mut Tape<T>, Node) -> GradResult<Node>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(x0.to_vec(), shape, true)?;
    let loss = f(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get_or_zeros(x, x0.len());

    let eval = |point: Vec<T>| -> GradResult<T> {
        let mut tape = Tape::new();
        let x = tape.leaf(point, shape, false)?;
        let loss = f(&mut tape, x)?;
        Ok(tape.scalar_value(loss))
    };

    let two = T::lit(2.0);
    let mut numeric = vec![T::zero(); x0.len()];
    let mut max_rel_error = T::zero();
    let mut worst_index = None;
    for i in 0..x0.len() {
        if exclude.contains(&i) {
            continue;
        }
        let mut plus = x0.to_vec();
        plus[i] = plus[i] + step;
        let mut minus = x0.to_vec();
        minus[i] = minus[i] - step;
        numeric[i] = (eval(plus)? - eval(minus)?) / (two * step);
        let err = (analytic[i] - numeric[i]).abs() / numeric[i].abs().max(T::one());
        if err > max_rel_error || err.is_nan() {
            max_rel_error = err;
            worst_index = Some(i);
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
