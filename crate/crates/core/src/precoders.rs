//! Closed-form benchmark precoders.

use crate::bussgang::PrecodingMatrix;
use crate::linalg::power;
use crate::{CMat, Error, Result, C64};

/// Scales `w` so that `Tr(W Wᴴ) = P_T`.
pub fn normalize_power(w: CMat, total_power: f64) -> Result<PrecodingMatrix> {
    let p = power(&w);
    if !(p > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let alpha = (total_power / p).sqrt();
    Ok(PrecodingMatrix {
        w: w * C64::new(alpha, 0.0),
        budget: total_power,
    })
}

/// Maximum ratio transmission, `W = α H*`.
pub fn mrt(h: &CMat, total_power: f64) -> Result<PrecodingMatrix> {
    if power(h) == 0.0 {
        return Err(Error::ZeroChannel);
    }
    normalize_power(h.conjugate(), total_power)
}

/// Zero-forcing, `W = α H* (Hᵀ H*)⁻¹`, inverting the `K × K` Gram matrix
/// through its Cholesky factor.
pub fn zf(h: &CMat, total_power: f64) -> Result<PrecodingMatrix> {
    let (m, k) = h.shape();
    if k > m {
        return Err(Error::SingularChannel);
    }
    let hc = h.conjugate();
    let gram = h.transpose() * &hc;
    let chol = nalgebra::Cholesky::new(gram).ok_or(Error::SingularChannel)?;
    let pivots = chol.l_dirty().diagonal();
    let largest = pivots.iter().map(|z| z.re).fold(0.0, f64::max);
    if pivots.iter().any(|z| !(z.re > 1e-7 * largest)) {
        return Err(Error::SingularChannel);
    }
    let inv = chol.solve(&CMat::identity(k, k));
    normalize_power(hc * inv, total_power)
}

/// Single-user Z3RO precoder: the first `saturated` antennas transmit with an
/// inverted, amplified phase so that the third-order distortion cancels at
/// the user.
pub fn z3ro(h: &CMat, total_power: f64, saturated: usize) -> Result<PrecodingMatrix> {
    let (m, k) = h.shape();
    if k != 1 {
        return Err(Error::InvalidDimensions(format!(
            "z3ro needs K = 1, got {k}"
        )));
    }
    if saturated == 0 || saturated >= m {
        return Err(Error::InvalidDimensions(format!(
            "z3ro needs 1 <= M_s < M, got M_s = {saturated}, M = {m}"
        )));
    }
    let fourth =
        |r: std::ops::Range<usize>| -> f64 { r.map(|i| h[(i, 0)].norm_sqr().powi(2)).sum() };
    let sat = fourth(0..saturated);
    if sat == 0.0 {
        return Err(Error::ZeroGainSaturatedAntenna);
    }
    let gamma = (fourth(saturated..m) / sat).cbrt();
    let w = CMat::from_fn(m, 1, |i, _| {
        let c = h[(i, 0)].conj();
        if i < saturated {
            c * -gamma
        } else {
            c
        }
    });
    normalize_power(w, total_power)
}
