//! Trainable parameters and gradient evaluation helpers.
//!
//! A [`Parameter`] is a named dense array with a matching gradient buffer.
//! Objectives are expressed as closures that rebuild a fresh [`Tape`] each
//! evaluation ([`value_and_grad`]); this keeps parameters plain data between
//! steps and makes every loss evaluation independently reproducible.

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::mathcore::tape::{Arr, Tape, Var};

/// A named array of trainable values with an accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    /// Stable identifier used in checkpoints and diagnostics.
    pub name: String,
    pub value: Arr,
    pub grad: Arr,
    /// Frozen parameters keep their value but are skipped by optimizers.
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Arr) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Parameter {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    /// A parameter excluded from optimization (its gradient is still defined).
    pub fn frozen(name: impl Into<String>, value: Arr) -> Self {
        let mut p = Parameter::new(name, value);
        p.trainable = false;
        p
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Evaluate `build` on a fresh tape with each array in `values` registered as
/// the leaf for its index, returning the scalar objective and one gradient per
/// entry (zeros for entries the objective does not touch).
pub fn value_and_grad<F>(values: &[&Arr], build: F) -> Result<(f64, Vec<Arr>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = values
        .iter()
        .enumerate()
        .map(|(slot, v)| tape.leaf(slot, (*v).clone()))
        .collect();
    let root = build(&mut tape, &vars)?;
    if tape.value(root).ndim() != 0 {
        return Err(Error::shape(
            "value_and_grad",
            format!(
                "objective must be scalar, got shape {:?}",
                tape.value(root).shape()
            ),
        ));
    }
    let val = tape.scalar_value(root);
    let mut grads = tape.backward(root)?;
    let out = (0..values.len())
        .map(|slot| {
            grads
                .take(slot)
                .unwrap_or_else(|| ArrayD::zeros(values[slot].raw_dim()))
        })
        .collect();
    Ok((val, out))
}

/// Forward-only counterpart of [`value_and_grad`].
pub fn eval_scalar<F>(values: &[&Arr], build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = values
        .iter()
        .enumerate()
        .map(|(slot, v)| tape.leaf(slot, (*v).clone()))
        .collect();
    let root = build(&mut tape, &vars)?;
    if tape.value(root).ndim() != 0 {
        return Err(Error::shape(
            "eval_scalar",
            format!(
                "objective must be scalar, got shape {:?}",
                tape.value(root).shape()
            ),
        ));
    }
    Ok(tape.scalar_value(root))
}

/// Central-difference gradients of a scalar function of several arrays,
/// used by tests to validate the tape's reverse sweep.
///
/// Cost is two function evaluations per coordinate, so keep test problems
/// small. `step` is the absolute perturbation per coordinate.
pub fn finite_diff<F>(values: &[&Arr], eval: F, step: f64) -> Result<Vec<Arr>>
where
    F: Fn(&[&Arr]) -> Result<f64>,
{
    let mut work: Vec<Arr> = values.iter().map(|v| (*v).clone()).collect();
    let mut grads: Vec<Arr> = values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect();
    for pi in 0..work.len() {
        for idx in 0..work[pi].len() {
            let orig = work[pi].as_slice_mut().expect("contiguous parameter")[idx];

            work[pi].as_slice_mut().unwrap()[idx] = orig + step;
            let refs: Vec<&Arr> = work.iter().collect();
            let plus = eval(&refs)?;

            work[pi].as_slice_mut().unwrap()[idx] = orig - step;
            let refs: Vec<&Arr> = work.iter().collect();
            let minus = eval(&refs)?;

            work[pi].as_slice_mut().unwrap()[idx] = orig;
            grads[pi].as_slice_mut().unwrap()[idx] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Largest relative gradient discrepancy between `analytic` and `numeric`,
/// with an absolute floor so near-zero entries compare absolutely.
pub fn max_rel_gradient_error(analytic: &[Arr], numeric: &[Arr], floor: f64) -> f64 {
    let mut worst = 0.0_f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.iter().zip(n.iter()) {
            let denom = av.abs().max(nv.abs()).max(floor);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, IxDyn};

    /// A composite objective exercising most tape operations:
    /// f(W, b) = mean(row_lse(phi W^T + broadcast(b))) + ln(sum(exp(b))).
    fn composite(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        let phi = tape.constant2(&array![[0.3, -0.7], [1.1, 0.2], [-0.4, 0.9]]);
        let wt = tape.transpose(vars[0]);
        let z = tape.matmul(phi, wt);
        let rows = tape.value(z).shape()[0];
        let bb = tape.broadcast_row(vars[1], rows);
        let scores = tape.add(z, bb);
        let lse = tape.row_logsumexp(scores);
        let data = tape.mean(lse);
        let eb = tape.exp(vars[1]);
        let se = tape.sum(eb);
        let reg = tape.ln(se);
        Ok(tape.add(data, reg))
    }

    #[test]
    fn tape_gradients_match_central_differences() {
        let w = array![[0.5, -0.2], [0.1, 0.8], [-0.6, 0.3]].into_dyn();
        let b = array![0.2, -0.1, 0.4].into_dyn();
        let values = [&w, &b];
        let (_, analytic) = value_and_grad(&values, composite).expect("grad");
        let numeric =
            finite_diff(&values, |vals| eval_scalar(vals, composite), 1e-5).expect("fd");
        let err = max_rel_gradient_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-7, "max relative gradient error {err}");
    }

    #[test]
    fn untouched_parameters_get_zero_gradients() {
        let a = array![1.0, 2.0].into_dyn();
        let b = array![3.0].into_dyn();
        let (v, g) = value_and_grad(&[&a, &b], |tape, vars| Ok(tape.sum(vars[0])))
            .expect("grad");
        assert_eq!(v, 3.0);
        assert_eq!(g[1], ArrayD::<f64>::zeros(IxDyn(&[1])));
    }

    #[test]
    fn parameter_construction_and_zero_grad() {
        let mut p = Parameter::new("w_mean", array![[1.0, 2.0]].into_dyn());
        assert!(p.trainable);
        assert_eq!(p.numel(), 2);
        p.grad.fill(5.0);
        p.zero_grad();
        assert_eq!(p.grad.sum(), 0.0);
        let q = Parameter::frozen("noise", array![0.0].into_dyn());
        assert!(!q.trainable);
    }
}
