//! Finite-difference gradient oracle.
//!
//! [`grad_check`] compares the graph's reverse-mode gradient of a
//! scalar-valued function against central finite differences, coordinate by
//! coordinate, and reports the worst relative disagreement.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Default perturbation for 64-bit checks: large enough to dominate rounding
/// noise, small enough that the O(eps^2) truncation term stays below the
/// 1e-4 acceptance threshold.
pub const GRAD_CHECK_EPS: f64 = 1e-5;

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let mut input = x.clone();
    input.set_requires_grad(false);
    let v = g.leaf(input);
    let y = f(&mut g, v)?;
    if g.tensor(y).numel() != 1 {
        return Err(Error::NonScalarLoss {
            shape: g.shape(y).to_vec(),
        });
    }
    let out = g.value(y)[0];
    if !out.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check function value".into(),
        });
    }
    Ok(out)
}

/// Max over coordinates of `|autodiff - central_difference| /
/// max(|autodiff|, |central_difference|, 1e-8)` for a scalar-valued
/// function `f` of one tensor.
///
/// `f` receives a fresh graph and the leaf for `x` on every evaluation; it
/// may add constants and any operations it needs. Functions of many
/// parameters are checked by packing them into one flat tensor and slicing
/// inside `f`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    assert!(eps > 0.0, "grad_check eps must be positive");
    // Analytic pass: one forward + backward with gradients enabled.
    let mut g = Graph::new();
    let v = g.leaf(x.clone().with_grad());
    let y = f(&mut g, v)?;
    if g.tensor(y).numel() != 1 {
        return Err(Error::NonScalarLoss {
            shape: g.shape(y).to_vec(),
        });
    }
    if !g.all_finite() {
        return Err(Error::NonFinite {
            context: "grad_check forward pass".into(),
        });
    }
    g.backward(y)?;
    // A function that ignores x legitimately leaves no gradient; that is a
    // zero gradient, not an error.
    let analytic: Vec<f64> = match g.grad(v) {
        Some(grad) => grad.to_vec(),
        None => vec![0.0; x.numel()],
    };
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "grad_check backward pass".into(),
        });
    }

    // Central differences; only the scalar output is finiteness-checked per
    // evaluation (the analytic pass already scanned every intermediate).
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
