//! Central-difference gradient verification.

use crate::error::{Result, TensorError};
use crate::float::{lit, Float};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Compare reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate.
///
/// Returns `max |analytic - numeric| / max(1, |analytic|, |numeric|)` over all
/// coordinates of `input`. `eps` must lie in `[1e-7, 1e-3]`.
pub fn grad_check<F: Float>(
    f: impl Fn(&mut Graph<F>, Var) -> Result<Var>,
    input: &Tensor<F>,
    eps: F,
) -> Result<F> {
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(input), eps)
}

/// [`grad_check`] over several differentiable inputs at once.
pub fn grad_check_many<F: Float>(
    f: impl Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<F>],
    eps: F,
) -> Result<F> {
    if !(eps >= lit(1e-7) && eps <= lit(1e-3)) {
        return Err(TensorError::Invalid(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |values: &[Tensor<F>]| -> Result<(Graph<F>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(TensorError::Invalid(format!("grad_check needs a scalar, got {:?}", v.shape())));
        }
        if !v.all_finite() {
            return Err(TensorError::NonFinite("grad_check objective".into()));
        }
        Ok((g, vars, out))
    };
    let (g, vars, out) = eval(inputs)?;
    let mut grads = g.backward(out)?;
    let analytic: Vec<Tensor<F>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    for a in &analytic {
        if !a.all_finite() {
            return Err(TensorError::NonFinite("analytic gradient".into()));
        }
    }
    let mut worst = F::zero();
    let mut probe = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let base = input.data()[i];
            probe[which].data_mut()[i] = base + eps;
            let (gp, _, op) = eval(&probe)?;
            let plus = gp.value(op).data()[0];
            probe[which].data_mut()[i] = base - eps;
            let (gm, _, om) = eval(&probe)?;
            let minus = gm.value(om).data()[0];
            probe[which].data_mut()[i] = base;
            let numeric = (plus - minus) / (eps + eps);
            let a = analytic[which].data()[i];
            let denom = F::one().max(a.abs()).max(numeric.abs());
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
