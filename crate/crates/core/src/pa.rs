//! Memoryless power-amplifier models.
//!
//! All models act on complex baseband samples and assume a unit small-signal
//! gain. The operating point is set through the input back-off
//! `IBO = p_in / p_sat`, with `p_in` the average per-antenna input power.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::rng::complex_normal;
use crate::{Error, Result, C64};

/// A memoryless amplifier transfer function.
pub trait PaModel: Send + Sync {
    fn apply(&self, x: C64) -> C64;

    /// Saturation power when the model has one.
    fn saturation_power(&self) -> Option<f64> {
        None
    }
}

/// Odd-order complex polynomial `φ(x) = Σ_n β_{2n+1} x |x|^{2n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialPa {
    /// `[β_1, β_3, …, β_{2N+1}]`.
    pub coeffs: Vec<C64>,
}

impl PolynomialPa {
    pub fn new(coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs[0] == C64::new(0.0, 0.0) {
            return Err(Error::Config(
                "polynomial PA needs a non-zero linear coefficient".into(),
            ));
        }
        Ok(PolynomialPa { coeffs })
    }

    /// The ideal amplifier `φ(x) = x`.
    pub fn linear() -> Self {
        PolynomialPa {
            coeffs: vec![C64::new(1.0, 0.0)],
        }
    }

    /// The third-order model fitted at −3 dB IBO (`β_3 = −0.07781605 − 0.0401193j`).
    pub fn third_order_m3db() -> Self {
        PolynomialPa {
            coeffs: vec![C64::new(1.0, 0.0), C64::new(-0.07781605, -0.0401193)],
        }
    }

    /// `N`, for a model of order `2N + 1`.
    pub fn order_index(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_linear(&self) -> bool {
        self.coeffs[1..].iter().all(|b| b.norm() == 0.0)
    }

    /// Only the non-linear part `Σ_{n≥1} β_{2n+1} x |x|^{2n}`.
    pub fn apply_nonlinear(&self, x: C64) -> C64 {
        let r2 = x.norm_sqr();
        let mut acc = C64::new(0.0, 0.0);
        let mut pow = r2;
        for b in &self.coeffs[1..] {
            acc += b * pow;
            pow *= r2;
        }
        acc * x
    }

    /// Rescales the model to a different average input power, keeping the
    /// shape of the normalized transfer curve `φ(x/√p_in)·√p_in`.
    pub fn rescaled(&self, p_in: f64) -> Self {
        PolynomialPa {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(n, b)| b / p_in.powi(n as i32))
                .collect(),
        }
    }
}

impl PaModel for PolynomialPa {
    fn apply(&self, x: C64) -> C64 {
        let r2 = x.norm_sqr();
        let mut acc = C64::new(0.0, 0.0);
        let mut pow = 1.0;
        for b in &self.coeffs {
            acc += b * pow;
            pow *= r2;
        }
        acc * x
    }
}

/// Modified Rapp model (AM/AM and AM/PM, phase in radians).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RappPa {
    pub p_sat: f64,
    pub smoothness: f64,
    pub q: f64,
    pub a: f64,
    pub b: f64,
}

impl RappPa {
    /// Unit-gain parameters `S = 2, q = 4, A = −0.315, B = 1.137`.
    pub fn with_psat(p_sat: f64) -> Self {
        RappPa {
            p_sat,
            smoothness: 2.0,
            q: 4.0,
            a: -0.315,
            b: 1.137,
        }
    }

    pub fn am_am(&self, r: f64) -> f64 {
        let s2 = 2.0 * self.smoothness;
        r / (1.0 + (r / self.p_sat.sqrt()).powf(s2)).powf(1.0 / s2)
    }

    pub fn am_pm(&self, r: f64) -> f64 {
        self.a * r.powf(self.q) / (1.0 + (r / self.b).powf(self.q))
    }
}

impl PaModel for RappPa {
    fn apply(&self, x: C64) -> C64 {
        let r = x.norm();
        if r == 0.0 {
            return C64::new(0.0, 0.0);
        }
        C64::from_polar(self.am_am(r), x.arg() + self.am_pm(r))
    }

    fn saturation_power(&self) -> Option<f64> {
        Some(self.p_sat)
    }
}

/// Ideal clipper (a perfectly predistorted amplifier).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLimiterPa {
    pub p_sat: f64,
}

impl PaModel for SoftLimiterPa {
    fn apply(&self, x: C64) -> C64 {
        let r = x.norm();
        let limit = self.p_sat.sqrt();
        if r <= limit {
            x
        } else {
            x * (limit / r)
        }
    }

    fn saturation_power(&self) -> Option<f64> {
        Some(self.p_sat)
    }
}

/// Any of the supported models.
#[derive(Debug, Clone, PartialEq)]
pub enum Pa {
    Poly(PolynomialPa),
    Rapp(RappPa),
    SoftLimiter(SoftLimiterPa),
}

impl Pa {
    pub fn as_polynomial(&self) -> Option<&PolynomialPa> {
        match self {
            Pa::Poly(p) => Some(p),
            _ => None,
        }
    }
}

impl PaModel for Pa {
    fn apply(&self, x: C64) -> C64 {
        match self {
            Pa::Poly(p) => p.apply(x),
            Pa::Rapp(p) => p.apply(x),
            Pa::SoftLimiter(p) => p.apply(x),
        }
    }

    fn saturation_power(&self) -> Option<f64> {
        match self {
            Pa::Poly(p) => p.saturation_power(),
            Pa::Rapp(p) => p.saturation_power(),
            Pa::SoftLimiter(p) => p.saturation_power(),
        }
    }
}

/// Operating point of the amplifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IboSpec {
    pub ibo_db: f64,
    pub p_in: f64,
}

impl IboSpec {
    pub fn new(ibo_db: f64, p_in: f64) -> Self {
        IboSpec { ibo_db, p_in }
    }
}

/// `p_sat = p_in / 10^(IBO/10)`.
pub fn psat_from_ibo(spec: IboSpec) -> f64 {
    assert!(spec.p_in > 0.0, "average input power must be positive");
    spec.p_in / 10f64.powf(spec.ibo_db / 10.0)
}

/// Input distribution used by [`fit_polynomial`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FitMethod {
    /// Uniform amplitude grid on `[0, r_max·√p_in]` (real, non-negative inputs).
    AmplitudeGrid { r_max: f64, points: usize },
    /// `n` i.i.d. samples from `CN(0, p_in)`.
    Gaussian { n: usize, seed: u64 },
}

impl FitMethod {
    /// Amplitude grids that reproduce the published coefficient sets: `[0, 3]`
    /// for the third-order model and `[0, 8]` for higher orders.
    pub fn calibrated(order_index: usize) -> Self {
        let r_max = if order_index <= 1 { 3.0 } else { 8.0 };
        FitMethod::AmplitudeGrid {
            r_max,
            points: 2001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: FitMethod,
    /// Hold `β_1 = 1` (unit linear gain) and fit only the distortion terms.
    pub unit_linear_gain: bool,
}

impl FitConfig {
    pub fn calibrated(order_index: usize) -> Self {
        FitConfig {
            method: FitMethod::calibrated(order_index),
            unit_linear_gain: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub pa: PolynomialPa,
    /// 2-norm condition number of the column-scaled basis.
    pub condition_number: f64,
    /// Root-mean-square complex residual over the fit samples.
    pub rmse: f64,
}

const MAX_CONDITION: f64 = 1e13;

/// Least-squares fit of a `(2N+1)`-order polynomial to `target`.
///
/// The basis `u |u|^{2n}` is built on inputs normalized by `√p_in` and its
/// columns are scaled to unit norm before the SVD solve.
pub fn fit_polynomial(
    target: &dyn PaModel,
    spec: IboSpec,
    order_index: usize,
    cfg: &FitConfig,
) -> Result<FitReport> {
    if order_index < 1 {
        return Err(Error::Config("polynomial fit needs N >= 1".into()));
    }
    let inputs = fit_inputs(spec.p_in, &cfg.method);
    let scale = spec.p_in.sqrt();
    let first = usize::from(cfg.unit_linear_gain);
    let cols = order_index + 1 - first;
    let rows = inputs.len();

    let mut basis = DMatrix::<C64>::zeros(rows, cols);
    let mut rhs = DVector::<C64>::zeros(rows);
    for (i, &x) in inputs.iter().enumerate() {
        let u = x / scale;
        let r2 = u.norm_sqr();
        for c in 0..cols {
            basis[(i, c)] = u * r2.powi((c + first) as i32);
        }
        let y = target.apply(x) / scale;
        rhs[i] = if cfg.unit_linear_gain { y - u } else { y };
    }
    let col_norms: Vec<f64> = (0..cols)
        .map(|c| {
            basis
                .column(c)
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if col_norms.contains(&0.0) {
        return Err(Error::IllConditionedBasis(f64::INFINITY));
    }
    for (c, &n) in col_norms.iter().enumerate() {
        basis.column_mut(c).scale_mut(1.0 / n);
    }
    let svd = basis.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition_number = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(condition_number < MAX_CONDITION) {
        return Err(Error::IllConditionedBasis(condition_number));
    }
    let gamma = svd
        .solve(&rhs, 0.0)
        .map_err(|_| Error::IllConditionedBasis(condition_number))?;
    let residual = &basis * &gamma - &rhs;
    let rmse = scale * (residual.iter().map(|z| z.norm_sqr()).sum::<f64>() / rows as f64).sqrt();

    let mut coeffs = Vec::with_capacity(order_index + 1);
    if cfg.unit_linear_gain {
        coeffs.push(C64::new(1.0, 0.0));
    }
    for c in 0..cols {
        let n = (c + first) as i32;
        // u|u|^{2n} = x|x|^{2n} / p_in^{n + 1/2}, and outputs were divided by √p_in
        coeffs.push(gamma[c] / col_norms[c] / spec.p_in.powi(n));
    }
    Ok(FitReport {
        pa: PolynomialPa { coeffs },
        condition_number,
        rmse,
    })
}

fn fit_inputs(p_in: f64, method: &FitMethod) -> Vec<C64> {
    match *method {
        FitMethod::AmplitudeGrid { r_max, points } => {
            let top = r_max * p_in.sqrt();
            let steps = points.max(2) - 1;
            (0..=steps)
                .map(|i| C64::new(top * i as f64 / steps as f64, 0.0))
                .collect()
        }
        FitMethod::Gaussian { n, seed } => {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            (0..n).map(|_| complex_normal(&mut rng, p_in)).collect()
        }
    }
}

/// RMSE between the AM/AM curves of two models on a uniform grid of
/// `points` amplitudes in `[0, r_max]`.
pub fn am_am_rmse(a: &dyn PaModel, b: &dyn PaModel, r_max: f64, points: usize) -> f64 {
    let steps = points.max(2) - 1;
    let sum: f64 = (0..=steps)
        .map(|i| {
            let x = C64::new(r_max * i as f64 / steps as f64, 0.0);
            (a.apply(x).norm() - b.apply(x).norm()).powi(2)
        })
        .sum();
    (sum / (steps + 1) as f64).sqrt()
}

/// Tabulated IBO points of the 11th-order coefficient table.
pub const TABLE_IBOS_DB: [f64; 7] = [-9.0, -7.5, -6.0, -4.5, -3.0, -1.5, 0.0];

// β_3 ·1e-2, β_5 ·1e-3, β_7 ·1e-5, β_9 ·1e-7, β_11 ·1e-9 (re, im)
const TABLE: [[(f64, f64); 5]; 7] = [
    [
        (-4.38184836, -10.1466832),
        (1.50490437, 8.422084885),
        (-3.13452827, -28.1868627),
        (3.49967293, 42.06333106),
        (-1.59432984, -23.1868139),
    ],
    [
        (-5.79334438, -9.36769411),
        (2.39315994, 7.94859107),
        (-5.57663136, -26.92641291),
        (6.65066314, 40.4837957),
        (-3.14808144, -22.4280442),
    ],
    [
        (-7.50994886, -8.42352484),
        (3.66782506, 7.26453523),
        (-9.54049052, -24.8371067),
        (12.2703316, 37.5613932),
        (-6.13183499, -20.8924283),
    ],
    [
        (-9.35828409, -7.41305601),
        (5.16172165, 6.46522185),
        (-14.4481282, -22.2483069),
        (19.4963213, 33.7874265),
        (-10.0752209, -18.8479147),
    ],
    [
        (-11.1143930, -6.30816977),
        (6.60156653, 5.47141526),
        (-19.1451680, -18.6610370),
        (26.2822435, 28.0380833),
        (-13.6811147, -15.4579691),
    ],
    [
        (-12.903319, -5.49758824),
        (8.21176444, 4.85204392),
        (-24.8588087, -16.8144990),
        (35.2215545, 25.6527492),
        (-18.8139985, -14.3562319),
    ],
    [
        (-14.4473655, -4.67375592),
        (9.58442261, 4.13617338),
        (-29.6362436, -14.3570171),
        (42.5309097, 21.9271142),
        (-22.9128062, -12.2805850),
    ],
];

const TABLE_SCALES: [f64; 5] = [1e-2, 1e-3, 1e-5, 1e-7, 1e-9];

/// The tabulated 11th-order coefficients at `ibo_db` (unit average input power).
pub fn appendix_coeffs(ibo_db: f64) -> Result<PolynomialPa> {
    let row = TABLE_IBOS_DB
        .iter()
        .position(|&t| (t - ibo_db).abs() < 1e-9)
        .ok_or(Error::UnknownIbo(ibo_db))?;
    let mut coeffs = vec![C64::new(1.0, 0.0)];
    coeffs.extend(
        TABLE[row]
            .iter()
            .zip(TABLE_SCALES)
            .map(|(&(re, im), s)| C64::new(re * s, im * s)),
    );
    Ok(PolynomialPa { coeffs })
}

/// JSON descriptor of an amplifier: `{"kind": "poly"|"rapp"|"softlimiter", …}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PaDescriptor {
    /// Explicit `coeffs` as `[re, im]` pairs; otherwise the tabulated row at
    /// `ibo_db` (or the fitted third-order model when `order` is 3).
    Poly {
        #[serde(default)]
        coeffs: Option<Vec<[f64; 2]>>,
        #[serde(default)]
        ibo_db: Option<f64>,
        #[serde(default)]
        order: Option<usize>,
        #[serde(default = "unit")]
        p_in: f64,
    },
    Rapp {
        ibo_db: f64,
        #[serde(default = "unit")]
        p_in: f64,
        #[serde(default)]
        smoothness: Option<f64>,
        #[serde(default)]
        q: Option<f64>,
        #[serde(default)]
        a: Option<f64>,
        #[serde(default)]
        b: Option<f64>,
    },
    Softlimiter {
        ibo_db: f64,
        #[serde(default = "unit")]
        p_in: f64,
    },
    Linear,
}

fn unit() -> f64 {
    1.0
}

impl PaDescriptor {
    pub fn build(&self) -> Result<Pa> {
        match self {
            PaDescriptor::Linear => Ok(Pa::Poly(PolynomialPa::linear())),
            PaDescriptor::Poly {
                coeffs: Some(c), ..
            } => Ok(Pa::Poly(PolynomialPa::new(
                c.iter().map(|&[re, im]| C64::new(re, im)).collect(),
            )?)),
            PaDescriptor::Poly {
                coeffs: None,
                ibo_db,
                order,
                p_in,
            } => {
                let ibo = ibo_db
                    .ok_or_else(|| Error::Config("poly PA needs either coeffs or ibo_db".into()))?;
                let base = match order.unwrap_or(11) {
                    3 if (ibo + 3.0).abs() < 1e-9 => PolynomialPa::third_order_m3db(),
                    11 => appendix_coeffs(ibo)?,
                    other => {
                        return Err(Error::Config(format!(
                            "no built-in order-{other} polynomial at {ibo} dB; use `pa fit`"
                        )))
                    }
                };
                Ok(Pa::Poly(base.rescaled(*p_in)))
            }
            PaDescriptor::Rapp {
                ibo_db,
                p_in,
                smoothness,
                q,
                a,
                b,
            } => {
                let d = RappPa::with_psat(psat_from_ibo(IboSpec::new(*ibo_db, *p_in)));
                Ok(Pa::Rapp(RappPa {
                    smoothness: smoothness.unwrap_or(d.smoothness),
                    q: q.unwrap_or(d.q),
                    a: a.unwrap_or(d.a),
                    b: b.unwrap_or(d.b),
                    ..d
                }))
            }
            PaDescriptor::Softlimiter { ibo_db, p_in } => Ok(Pa::SoftLimiter(SoftLimiterPa {
                p_sat: psat_from_ibo(IboSpec::new(*ibo_db, *p_in)),
            })),
        }
    }
}
