//! The analytic sum rate recorded on a gradient tape.
//!
//! Everything is batched: channels and precoders are `[B, M, K]` real/imag
//! tensor pairs, noise is `[B, 1]`. The distortion power of user `k` is
//! evaluated as `Re Σ_m u_m (T_n ū)_m` with `u = h_k ⊙ L_n` and
//! `T_n = C_x ⊙ |C_x|^{∘2n}`, which avoids forming `C_e` explicitly.

use crate::bussgang::{gain_coeffs, l_coeffs, NoiseSpec};
use crate::grad::{CVar, Tape, Tensor, Var};
use crate::pa::PolynomialPa;
use crate::{CMat, Result, C64};

/// Packs `B` complex `M × K` matrices into `[B, M, K]` real and imaginary
/// tensors.
pub fn pack(mats: &[&CMat]) -> (Tensor, Tensor) {
    let (m, k) = mats.first().map(|h| h.shape()).unwrap_or((0, 0));
    let mut re = Vec::with_capacity(mats.len() * m * k);
    let mut im = Vec::with_capacity(mats.len() * m * k);
    for h in mats {
        assert_eq!(
            h.shape(),
            (m, k),
            "all matrices in a batch must share a shape"
        );
        for i in 0..m {
            for j in 0..k {
                re.push(h[(i, j)].re);
                im.push(h[(i, j)].im);
            }
        }
    }
    let shape = vec![mats.len(), m, k];
    (
        Tensor::new(shape.clone(), re).unwrap(),
        Tensor::new(shape, im).unwrap(),
    )
}

/// Inverse of [`pack`].
pub fn unpack(re: &Tensor, im: &Tensor) -> Vec<CMat> {
    let (b, m, k) = (re.shape[0], re.shape[1], re.shape[2]);
    (0..b)
        .map(|s| {
            CMat::from_fn(m, k, |i, j| {
                let o = s * m * k + i * k + j;
                C64::new(re.data[o], im.data[o])
            })
        })
        .collect()
}

/// Complex polynomial in a real tape value, by Horner's rule.
fn poly<'t>(p: Var<'t>, coeffs: &[C64]) -> CVar<'t> {
    let last = coeffs[coeffs.len() - 1];
    let mut re = p.scale(0.0).add_scalar(last.re);
    let mut im = p.scale(0.0).add_scalar(last.im);
    for c in coeffs.iter().rev().skip(1) {
        re = (re * p).add_scalar(c.re);
        im = (im * p).add_scalar(c.im);
    }
    CVar::new(re, im)
}

/// Scales each `W_b` so that `Tr(W_b W_bᴴ) = P_T`.
pub fn normalize_power<'t>(w: CVar<'t>, total_power: f64) -> CVar<'t> {
    let tr = w.abs2().sum_axis(2).sum_axis(1);
    let alpha = tr.sqrt().recip().scale(total_power.sqrt());
    w.mul_real(alpha)
}

/// Per-sample sum rate `[B]` for channels `h`, precoders `w` and noise
/// variances `sigma2` of shape `[B, 1]`.
pub fn sum_rate<'t>(h: CVar<'t>, w: CVar<'t>, pa: &PolynomialPa, sigma2: Var<'t>) -> Var<'t> {
    let shape = h.re.shape();
    let (b, k) = (shape[0], shape[2]);

    let p = w.abs2().sum_axis(2); // [B, M, 1]
    let g = poly(p, &gain_coeffs(pa));
    let gw = g.cmul(w);
    let s = h.bmm(true, gw, false).abs2(); // [B, K, K]
    let desired = s.diag();
    let interference = s.sum_axis(2).reshape(&[b, k]) - desired;

    let mut impairment = interference + sigma2;
    if !pa.is_linear() {
        let cx = w.bmm(false, w.conj(), true); // [B, M, M]
        let mag = cx.abs2();
        for n in 1..=pa.order_index() {
            let u = h.cmul(poly(p, &l_coeffs(pa, n)));
            let t = cx.mul_real(mag.powi(n as i32));
            let v = t.bmm(false, u.conj(), false);
            let d = (u.re * v.re - u.im * v.im).sum_axis(1).reshape(&[b, k]);
            impairment = impairment + d;
        }
    }
    let snidr = desired * impairment.recip();
    snidr.add_scalar(1.0).log2().sum_axis(1).reshape(&[b])
}

/// Sum rate of one `(H, W)` pair and its gradient `∂R/∂Re W + j ∂R/∂Im W`.
pub fn rate_and_gradient(
    h: &CMat,
    w: &CMat,
    pa: &PolynomialPa,
    noise: NoiseSpec,
) -> Result<(f64, CMat)> {
    let tape = Tape::new();
    let (hr, hi) = pack(&[h]);
    let (wr, wi) = pack(&[w]);
    let hv = CVar::new(tape.constant(hr), tape.constant(hi));
    let wv = CVar::new(tape.var(wr), tape.var(wi));
    let s2 = tape.constant(Tensor::full(&[1, 1], noise.sigma2));
    let rate = sum_rate(hv, wv, pa, s2).sum();
    let grads = tape.backward(rate)?;
    let zeros = Tensor::zeros(&[1, w.nrows(), w.ncols()]);
    let gr = grads.wrt(wv.re).unwrap_or(&zeros);
    let gi = grads.wrt(wv.im).unwrap_or(&zeros);
    let g = unpack(gr, gi).pop().expect("one sample");
    Ok((rate.item(), g))
}

/// Sum rate of one `(H, W)` pair evaluated on the tape.
pub fn rate(h: &CMat, w: &CMat, pa: &PolynomialPa, noise: NoiseSpec) -> f64 {
    let tape = Tape::new();
    let (hr, hi) = pack(&[h]);
    let (wr, wi) = pack(&[w]);
    let hv = CVar::new(tape.constant(hr), tape.constant(hi));
    let wv = CVar::new(tape.constant(wr), tape.constant(wi));
    let s2 = tape.constant(Tensor::full(&[1, 1], noise.sigma2));
    sum_rate(hv, wv, pa, s2).item()
}
