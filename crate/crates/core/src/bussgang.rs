//! Bussgang-based link metrics.
//!
//! With Gaussian symbols `s ~ CN(0, I_K)` and linear precoding `x = W s`, the
//! amplified signal splits into `φ(x) = G x + e` where `G` is diagonal and
//! `e` is uncorrelated with `x`. For a polynomial amplifier both `G` and the
//! covariance of `e` have closed forms in `C_x = W Wᴴ`; for any other
//! amplifier the same quantities are estimated by Monte-Carlo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pa::{PaModel, PolynomialPa};
use crate::rng::{complex_normal, stream};
use crate::{CMat, Error, Result, C64};

/// Precoding matrix `W` (`M × K`) together with its total power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingMatrix {
    pub w: CMat,
    pub budget: f64,
}

impl PrecodingMatrix {
    /// Wraps `w`, checking `Tr(W Wᴴ) ≤ P_T (1 + 1e-9)`.
    pub fn new(w: CMat, budget: f64) -> Result<Self> {
        let power = crate::linalg::power(&w);
        if power > budget * (1.0 + 1e-9) {
            return Err(Error::InvalidDimensions(format!(
                "precoder power {power} exceeds budget {budget}"
            )));
        }
        Ok(PrecodingMatrix { w, budget })
    }

    pub fn power(&self) -> f64 {
        crate::linalg::power(&self.w)
    }
}

impl AsRef<CMat> for PrecodingMatrix {
    fn as_ref(&self) -> &CMat {
        &self.w
    }
}

/// Receiver noise variance `σ_v²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma2: f64,
}

impl NoiseSpec {
    pub fn new(sigma2: f64) -> Self {
        assert!(sigma2 > 0.0, "noise variance must be positive");
        NoiseSpec { sigma2 }
    }

    /// Noise level giving `P_T / σ² = snr_db`.
    pub fn from_snr_db(total_power: f64, snr_db: f64) -> Self {
        NoiseSpec::new(total_power / 10f64.powf(snr_db / 10.0))
    }
}

/// Per-user link budget and the resulting sum rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub snidr: Vec<f64>,
    pub sum_rate: f64,
    pub desired: Vec<f64>,
    pub interference: Vec<f64>,
    pub distortion: Vec<f64>,
    pub noise: Vec<f64>,
}

impl LinkMetrics {
    fn from_parts(
        desired: Vec<f64>,
        interference: Vec<f64>,
        distortion: Vec<f64>,
        sigma2: f64,
    ) -> Self {
        let snidr: Vec<f64> = desired
            .iter()
            .zip(&interference)
            .zip(&distortion)
            .map(|((d, i), e)| d / (i + e + sigma2))
            .collect();
        let sum_rate = snidr.iter().map(|s| (1.0 + s).log2()).sum();
        let noise = vec![sigma2; snidr.len()];
        LinkMetrics {
            snidr,
            sum_rate,
            desired,
            interference,
            distortion,
            noise,
        }
    }
}

/// `Σ_k log2(1 + snidr_k)`.
pub fn sum_rate(snidr: &[f64]) -> Result<f64> {
    if let Some(&bad) = snidr.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::NegativeSnidr(bad));
    }
    Ok(snidr.iter().map(|s| (1.0 + s).log2()).sum())
}

/// `C_x = W Wᴴ`.
pub fn input_cov(w: &CMat) -> CMat {
    w * w.adjoint()
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Coefficients `c_j` of `G(p) = Σ_j c_j p^j`.
pub(crate) fn gain_coeffs(pa: &PolynomialPa) -> Vec<C64> {
    pa.coeffs
        .iter()
        .enumerate()
        .map(|(n, b)| b * factorial(n + 1))
        .collect()
}

/// Coefficients `c_j` of `L_n(p) = Σ_j c_j p^j`, for `n ≥ 1`.
pub(crate) fn l_coeffs(pa: &PolynomialPa, n: usize) -> Vec<C64> {
    let norm = 1.0 / ((n + 1) as f64).sqrt();
    (n..=pa.order_index())
        .map(|l| pa.coeffs[l] * (binomial(l, n) * factorial(l + 1) * norm))
        .collect()
}

fn horner(coeffs: &[C64], p: f64) -> C64 {
    coeffs
        .iter()
        .rev()
        .fold(C64::new(0.0, 0.0), |acc, c| acc * p + c)
}

/// Diagonal Bussgang gains `G_mm = Σ_n (n+1)! β_{2n+1} p_m^n` for per-antenna
/// input powers `p_m`.
pub fn gain_diag(input_power: &[f64], pa: &PolynomialPa) -> Vec<C64> {
    let c = gain_coeffs(pa);
    input_power.iter().map(|&p| horner(&c, p)).collect()
}

/// Diagonal of `L_n` for `n ≥ 1`.
fn l_diag(input_power: &[f64], pa: &PolynomialPa, n: usize) -> Vec<C64> {
    let c = l_coeffs(pa, n);
    input_power.iter().map(|&p| horner(&c, p)).collect()
}

fn diag_re(c: &CMat) -> Vec<f64> {
    (0..c.nrows()).map(|i| c[(i, i)].re).collect()
}

/// Diagonal Bussgang gain matrix `G(W)`.
pub fn gain_matrix(w: &CMat, pa: &PolynomialPa) -> CMat {
    let g = gain_diag(&diag_re(&input_cov(w)), pa);
    CMat::from_diagonal(&nalgebra::DVector::from_vec(g))
}

/// Distortion covariance `C_e = Σ_{n≥1} L_n (C_x ⊙ |C_x|^{∘2n}) L_nᴴ`.
pub fn distortion_cov(w: &CMat, pa: &PolynomialPa) -> CMat {
    distortion_cov_from(&input_cov(w), pa)
}

pub(crate) fn distortion_cov_from(cx: &CMat, pa: &PolynomialPa) -> CMat {
    let m = cx.nrows();
    let p = diag_re(cx);
    let mut ce = CMat::zeros(m, m);
    for n in 1..=pa.order_index() {
        let l = l_diag(&p, pa, n);
        for i in 0..m {
            for j in 0..m {
                let c = cx[(i, j)];
                ce[(i, j)] += l[i] * c * c.norm_sqr().powi(n as i32) * l[j].conj();
            }
        }
    }
    ce
}

/// Expected per-antenna output power `[G C_x Gᴴ + C_e]_mm`.
pub fn output_power_analytic(w: &CMat, pa: &PolynomialPa) -> Vec<f64> {
    let cx = input_cov(w);
    let p = diag_re(&cx);
    let g = gain_diag(&p, pa);
    let ce = distortion_cov_from(&cx, pa);
    (0..p.len())
        .map(|i| g[i].norm_sqr() * p[i] + ce[(i, i)].re)
        .collect()
}

/// Analytic SNIDR of every user for a polynomial amplifier.
pub fn snidr_analytic(h: &CMat, w: &CMat, pa: &PolynomialPa, noise: NoiseSpec) -> LinkMetrics {
    assert_eq!(h.shape(), w.shape(), "H and W must both be M x K");
    let (m, k) = h.shape();
    let cx = input_cov(w);
    let p = diag_re(&cx);
    let g = gain_diag(&p, pa);
    let ce = distortion_cov_from(&cx, pa);

    let mut gw = w.clone();
    for row in 0..m {
        for col in 0..k {
            gw[(row, col)] *= g[row];
        }
    }
    // s[(k, k')] = h_kᵀ G w_k'
    let s = h.transpose() * gw;
    let mut desired = vec![0.0; k];
    let mut interference = vec![0.0; k];
    let mut distortion = vec![0.0; k];
    for u in 0..k {
        for v in 0..k {
            let pw = s[(u, v)].norm_sqr();
            if u == v {
                desired[u] = pw;
            } else {
                interference[u] += pw;
            }
        }
        let hk = h.column(u);
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                acc += hk[i] * ce[(i, j)] * hk[j].conj();
            }
        }
        distortion[u] = acc.re.max(0.0);
    }
    LinkMetrics::from_parts(desired, interference, distortion, noise.sigma2)
}

const MC_BATCH: usize = 8192;

fn batches(n: usize) -> Vec<(u64, usize)> {
    (0..n.div_ceil(MC_BATCH))
        .map(|b| (b as u64, MC_BATCH.min(n - b * MC_BATCH)))
        .collect()
}

/// Numerical SNIDR for an arbitrary amplifier.
///
/// Estimates `B_k = E(r_k s_k*)` and the residual power `E|r_k − B_k s_k|²`
/// from noiseless received samples `r = Hᵀ φ(W s)`; noise enters
/// analytically. Leakage `Σ_{k'≠k} |E(r_k s_k'*)|²` is reported as
/// interference and the remainder of the residual as distortion.
pub fn snidr_mc(
    h: &CMat,
    w: &CMat,
    pa: &dyn PaModel,
    noise: NoiseSpec,
    n_mc: usize,
    seed: u64,
) -> LinkMetrics {
    assert_eq!(h.shape(), w.shape(), "H and W must both be M x K");
    if n_mc < 1000 {
        log::warn!("Monte-Carlo SNIDR with only {n_mc} samples");
    }
    let (m, k) = h.shape();
    let ht = h.transpose();

    struct Acc {
        rs: Vec<C64>, // Σ r_u s_v*, row-major u*k+v
        ss: Vec<f64>, // Σ |s_v|²
        rr: Vec<f64>, // Σ |r_u|²
    }
    let partial: Vec<Acc> = batches(n_mc)
        .into_par_iter()
        .map(|(b, len)| {
            let mut rng = stream(seed, b);
            let mut acc = Acc {
                rs: vec![C64::new(0.0, 0.0); k * k],
                ss: vec![0.0; k],
                rr: vec![0.0; k],
            };
            let mut s = vec![C64::new(0.0, 0.0); k];
            let mut y = vec![C64::new(0.0, 0.0); m];
            for _ in 0..len {
                for sv in s.iter_mut() {
                    *sv = complex_normal(&mut rng, 1.0);
                }
                for (row, yv) in y.iter_mut().enumerate() {
                    let mut x = C64::new(0.0, 0.0);
                    for col in 0..k {
                        x += w[(row, col)] * s[col];
                    }
                    *yv = pa.apply(x);
                }
                for u in 0..k {
                    let mut r = C64::new(0.0, 0.0);
                    for (row, yv) in y.iter().enumerate() {
                        r += ht[(u, row)] * yv;
                    }
                    acc.rr[u] += r.norm_sqr();
                    for v in 0..k {
                        acc.rs[u * k + v] += r * s[v].conj();
                    }
                }
                for v in 0..k {
                    acc.ss[v] += s[v].norm_sqr();
                }
            }
            acc
        })
        .collect();

    let mut rs = vec![C64::new(0.0, 0.0); k * k];
    let mut ss = vec![0.0; k];
    let mut rr = vec![0.0; k];
    for a in &partial {
        for (t, v) in rs.iter_mut().zip(&a.rs) {
            *t += v;
        }
        for (t, v) in ss.iter_mut().zip(&a.ss) {
            *t += v;
        }
        for (t, v) in rr.iter_mut().zip(&a.rr) {
            *t += v;
        }
    }

    let n = n_mc as f64;
    let mut desired = vec![0.0; k];
    let mut interference = vec![0.0; k];
    let mut distortion = vec![0.0; k];
    for u in 0..k {
        let b = rs[u * k + u] / ss[u];
        desired[u] = b.norm_sqr();
        let residual = ((rr[u] - rs[u * k + u].norm_sqr() / ss[u]) / n).max(0.0);
        let leak: f64 = (0..k)
            .filter(|&v| v != u)
            .map(|v| (rs[u * k + v] / ss[v]).norm_sqr())
            .sum();
        interference[u] = leak.min(residual);
        distortion[u] = residual - interference[u];
    }
    LinkMetrics::from_parts(desired, interference, distortion, noise.sigma2)
}

/// Monte-Carlo estimate of the Bussgang decomposition of `φ(W s)`.
#[derive(Debug, Clone)]
pub struct BussgangEstimate {
    /// `E[φ(x_m) x_m*] / E|x_m|²`.
    pub gain: Vec<C64>,
    /// `E[e eᴴ]` with `e = φ(x) − G x`.
    pub distortion_cov: CMat,
    /// `E|φ(x_m)|²`.
    pub output_power: Vec<f64>,
}

/// Estimates `G`, `C_e` and per-antenna output power by sampling
/// `s ~ CN(0, I_K)`. The gains are computed in a first pass, the distortion
/// covariance in a second pass over the same symbol stream.
pub fn estimate_bussgang(w: &CMat, pa: &dyn PaModel, n: usize, seed: u64) -> BussgangEstimate {
    let (m, k) = w.shape();
    let draw = |rng: &mut rand_chacha::ChaCha20Rng, x: &mut [C64]| {
        let s: Vec<C64> = (0..k).map(|_| complex_normal(rng, 1.0)).collect();
        for (row, xv) in x.iter_mut().enumerate() {
            *xv = (0..k).map(|col| w[(row, col)] * s[col]).sum();
        }
    };

    let first: Vec<(Vec<C64>, Vec<f64>, Vec<f64>)> = batches(n)
        .into_par_iter()
        .map(|(b, len)| {
            let mut rng = stream(seed, b);
            let mut x = vec![C64::new(0.0, 0.0); m];
            let mut yx = vec![C64::new(0.0, 0.0); m];
            let mut xx = vec![0.0; m];
            let mut yy = vec![0.0; m];
            for _ in 0..len {
                draw(&mut rng, &mut x);
                for i in 0..m {
                    let y = pa.apply(x[i]);
                    yx[i] += y * x[i].conj();
                    xx[i] += x[i].norm_sqr();
                    yy[i] += y.norm_sqr();
                }
            }
            (yx, xx, yy)
        })
        .collect();
    let mut yx = vec![C64::new(0.0, 0.0); m];
    let mut xx = vec![0.0; m];
    let mut yy = vec![0.0; m];
    for (a, b, c) in &first {
        for i in 0..m {
            yx[i] += a[i];
            xx[i] += b[i];
            yy[i] += c[i];
        }
    }
    let gain: Vec<C64> = (0..m)
        .map(|i| {
            if xx[i] > 0.0 {
                yx[i] / xx[i]
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    let output_power: Vec<f64> = yy.iter().map(|v| v / n as f64).collect();

    let second: Vec<CMat> = batches(n)
        .into_par_iter()
        .map(|(b, len)| {
            let mut rng = stream(seed, b);
            let mut x = vec![C64::new(0.0, 0.0); m];
            let mut e = vec![C64::new(0.0, 0.0); m];
            let mut acc = CMat::zeros(m, m);
            for _ in 0..len {
                draw(&mut rng, &mut x);
                for i in 0..m {
                    e[i] = pa.apply(x[i]) - gain[i] * x[i];
                }
                for i in 0..m {
                    for j in 0..m {
                        acc[(i, j)] += e[i] * e[j].conj();
                    }
                }
            }
            acc
        })
        .collect();
    let mut ce = CMat::zeros(m, m);
    for a in &second {
        ce += a;
    }
    ce /= C64::new(n as f64, 0.0);
    BussgangEstimate {
        gain,
        distortion_cov: ce,
        output_power,
    }
}

/// Monte-Carlo per-antenna output power `E|φ(x_m)|²`.
pub fn output_power_mc(w: &CMat, pa: &dyn PaModel, n: usize, seed: u64) -> Vec<f64> {
    let (m, k) = w.shape();
    let partial: Vec<Vec<f64>> = batches(n)
        .into_par_iter()
        .map(|(b, len)| {
            let mut rng = stream(seed, b);
            let mut acc = vec![0.0; m];
            let mut s = vec![C64::new(0.0, 0.0); k];
            for _ in 0..len {
                for sv in s.iter_mut() {
                    *sv = complex_normal(&mut rng, 1.0);
                }
                for (row, a) in acc.iter_mut().enumerate() {
                    let x: C64 = (0..k).map(|col| w[(row, col)] * s[col]).sum();
                    *a += pa.apply(x).norm_sqr();
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; m];
    for p in &partial {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out.iter().map(|v| v / n as f64).collect()
}
