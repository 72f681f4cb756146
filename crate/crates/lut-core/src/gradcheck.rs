//! Finite-difference gradient verification. Used pervasively by the test
//! suites: any differentiable scalar function built on [`Graph`] can be
//! checked coordinate-by-coordinate against central differences.

use crate::error::{LutError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Coordinates whose analytic and numeric gradients are both below this
/// magnitude are compared against it instead of against each other, since
/// central differences carry ~1e-10 absolute noise around zero.
pub const DENOM_FLOOR: f64 = 1e-5;

#[derive(Debug)]
pub struct GradCheckReport {
    /// Relative error per input coordinate.
    pub rel_errs: Vec<f64>,
    pub max_rel_err: f64,
    /// (coordinate, analytic, numeric, relative error) for every coordinate
    /// that exceeded the tolerance.
    pub flagged: Vec<(usize, f64, f64, f64)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn ok(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Compare the tape's gradient of `f` at `point` against central differences
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
///
/// `f` must build the same computation whenever it is called; it receives the
/// graph and the node holding the current input and returns the scalar output
/// node.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let x = g.leaf(point);
    let loss = f(&mut g, x)?;
    if g.data(loss).len() != 1 {
        return Err(LutError::shape(
            "grad_check",
            format!("f must return a scalar, got shape {:?}", g.shape(loss)),
        ));
    }
    if !g.scalar_value(loss).is_finite() {
        return Err(LutError::NonFinite("grad_check: f(x)".into()));
    }
    g.backward(loss)?;
    let analytic: Vec<f64> = g
        .grad(x)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![0.0; point.numel()]);

    let eval = |p: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(p);
        let out = f(&mut g, x)?;
        let v = g.scalar_value(out);
        if !v.is_finite() {
            return Err(LutError::NonFinite("grad_check: finite-difference probe".into()));
        }
        Ok(v)
    };

    let mut rel_errs = Vec::with_capacity(point.numel());
    let mut flagged = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(DENOM_FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        max_rel_err = max_rel_err.max(rel);
        if rel > tol {
            flagged.push((i, analytic[i], numeric, rel));
        }
        rel_errs.push(rel);
    }
    Ok(GradCheckReport { rel_errs, max_rel_err, flagged, tol })
}
