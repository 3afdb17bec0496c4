//! Finite-difference check of tape gradients.

use super::{Tape, Tensor, Var};

/// Largest entry-wise relative error between the reverse-mode gradient of
/// the scalar `f` at `point` and central differences with step `delta`.
///
/// Entries are compared relative to `max(|a|, |n|, 1e-3·‖g‖∞)` so that
/// near-zero components do not dominate.
pub fn gradcheck<F>(f: F, point: &[Tensor], delta: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let eval = |inputs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.var(t.clone())).collect();
        f(&tape, &vars).item()
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = point.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape
        .backward(out)
        .expect("gradcheck needs a scalar function");
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(point)
        .map(|(v, p)| {
            grads
                .wrt(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(&p.shape))
        })
        .collect();

    let mut numeric = analytic.clone();
    let mut probe = point.to_vec();
    for (i, t) in point.iter().enumerate() {
        for j in 0..t.numel() {
            let x = t.data[j];
            probe[i].data[j] = x + delta;
            let up = eval(&probe);
            probe[i].data[j] = x - delta;
            let down = eval(&probe);
            probe[i].data[j] = x;
            numeric[i].data[j] = (up - down) / (2.0 * delta);
        }
    }

    let scale = analytic
        .iter()
        .flat_map(|t| t.data.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-300);
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (x, y) in a.data.iter().zip(&n.data) {
            let denom = x.abs().max(y.abs()).max(floor);
            let diff = (x - y).abs();
            if diff > 0.0 {
                worst = worst.max(diff / denom);
            }
        }
    }
    worst
}
