use crate::autodiff::{sigmoid, Graph, Reduction, Tensor, Var};
use crate::error::{Error, Result};

/// Target for the unsigned occupancy of points on the observed surface.
pub const SURFACE_TARGET: f64 = 0.5;
/// Target for the unsigned occupancy of points off the surface.
pub const OFF_SURFACE_TARGET: f64 = 1.0;

/// Unsigned occupancy `sigmoid(|g|)`, in `[0.5, 1)`.
pub fn unsigned_occupancy(logit: f64) -> f64 {
    sigmoid(logit.abs())
}

/// Unsigned cross-entropy on the tape: BCE of `sigmoid(|g|)` against 0.5 for
/// surface logits and 1.0 for the rest.
pub fn uce_graph(g: &mut Graph, surface: Option<Var>, off_surface: Option<Var>, reduction: Reduction) -> Result<Var> {
    let mut parts = Vec::new();
    let mut target = Vec::new();
    for (v, y) in [(surface, SURFACE_TARGET), (off_surface, OFF_SURFACE_TARGET)] {
        if let Some(v) = v {
            let n = g.value(v).numel();
            let flat = g.reshape(v, &[n])?;
            parts.push(flat);
            target.extend(std::iter::repeat(y).take(n));
        }
    }
    if target.is_empty() {
        return Err(Error::contract("uce needs at least one logit"));
    }
    let logits = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 0)? };
    let a = g.abs(logits)?;
    let o = g.sigmoid(a)?;
    g.bce(o, &target, reduction)
}

/// Mean unsigned cross-entropy of plain logit slices.
pub fn uce_loss(surface_logits: &[f64], off_surface_logits: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let mut var = |x: &[f64]| -> Result<Option<Var>> {
        if x.is_empty() {
            Ok(None)
        } else {
            Ok(Some(g.constant(Tensor::new(vec![x.len()], x.to_vec())?)))
        }
    };
    let s = var(surface_logits)?;
    let k = var(off_surface_logits)?;
    let loss = uce_graph(&mut g, s, k, Reduction::Mean)?;
    Ok(g.value(loss).item())
}
