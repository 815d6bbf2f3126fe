use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Analytic vs central-difference comparison of a scalar function's gradient.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_abs: f64,
    /// Largest `|analytic − numeric| / max(|numeric|, abs_floor)`.
    pub max_rel: f64,
    /// Coordinate where `max_rel` occurs.
    pub worst: usize,
    pub abs_floor: f64,
}

impl GradcheckReport {
    /// Every coordinate within `max(atol, rtol · |numeric|)`.
    pub fn passes(&self, rtol: f64, atol: f64) -> bool {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .all(|(a, n)| (a - n).abs() <= atol.max(rtol * n.abs()))
    }
}

/// Checks the tape gradient of `f` at `point` against central differences
/// with step `h`.
///
/// `f` receives a fresh graph and the leaf holding the point and must
/// return a scalar node. `abs_floor` keeps the relative error finite for
/// coordinates whose gradient is essentially zero; `atol / rtol` is the
/// natural choice.
pub fn gradcheck<F>(f: F, point: &Tensor, h: f64, abs_floor: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut graph = Graph::new();
    let x = graph.param(point.clone());
    let y = f(&mut graph, x)?;
    let g = graph.grad(y, &[x])?[0];
    let analytic = graph.value(g).data().to_vec();

    let eval = |p: Tensor| -> Result<f64> {
        let mut graph = Graph::new();
        let x = graph.constant(p);
        let y = f(&mut graph, x)?;
        Ok(graph.value(y).item())
    };

    let mut numeric = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }

    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut worst = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let diff = (a - n).abs();
        max_abs = max_abs.max(diff);
        let rel = diff / n.abs().max(abs_floor);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    Ok(GradcheckReport {
        analytic,
        numeric,
        max_abs,
        max_rel,
        worst,
        abs_floor,
    })
}
