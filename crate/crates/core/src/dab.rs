//! Distortion-aware beamforming: projected gradient ascent on the analytic
//! sum rate with several restarts.
//!
//! Each iterate is projected onto the set `E‖φ(W s)‖² = P_T`, i.e. the
//! power constraint is applied after the amplifier. Restart 0 starts from
//! ZF; the others from ZF plus a complex Gaussian perturbation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bussgang::{
    output_power_analytic, output_power_mc, snidr_analytic, NoiseSpec, PrecodingMatrix,
};
use crate::linalg::power;
use crate::objective::rate_and_gradient;
use crate::pa::{Pa, PolynomialPa};
use crate::precoders::{mrt, zf};
use crate::rng::{complex_normal, stream};
use crate::{CMat, Error, Result, C64};

/// Step-size rule of the ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum StepRule {
    /// `W ← W + μ ∇R`.
    Fixed { mu: f64 },
    /// `μ_i = μ₀ / (1 + i/100)`.
    Decaying { mu0: f64 },
    /// Step of relative length `μ ‖W‖/‖∇R‖`, halved until the objective
    /// improves and doubled after each success.
    Backtracking { initial: f64, max_halvings: u32 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking {
            initial: 0.1,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// Reverse mode on the tape.
    #[default]
    Tape,
    /// Forward differences with step `fd_delta`.
    Fd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DabConfig {
    pub restarts: usize,
    pub iterations: usize,
    pub step: StepRule,
    pub gradient: GradientMode,
    pub fd_delta: f64,
    /// Relative scale of the restart perturbations.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for DabConfig {
    fn default() -> Self {
        DabConfig {
            restarts: 50,
            iterations: 1000,
            step: StepRule::default(),
            gradient: GradientMode::Tape,
            fd_delta: 1e-5,
            perturbation: 0.5,
            seed: 0,
        }
    }
}

impl DabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.iterations == 0 || !(self.fd_delta > 0.0) {
            return Err(Error::Config(
                "dab needs restarts >= 1, iterations >= 1 and fd_delta > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Objective values of one restart.
#[derive(Debug, Clone, Default)]
pub struct RestartTrace {
    /// Objective of the current iterate; entry 0 is the initialization.
    pub objective: Vec<f64>,
    /// Best objective seen so far.
    pub best: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DabResult {
    pub precoder: PrecodingMatrix,
    pub rate: f64,
    pub best_restart: usize,
    pub traces: Vec<RestartTrace>,
}

impl DabResult {
    /// Writes `restart,iteration,objective,best` rows.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["restart", "iteration", "objective", "best"])?;
        for (r, t) in self.traces.iter().enumerate() {
            for (i, (o, b)) in t.objective.iter().zip(&t.best).enumerate() {
                w.write_record([r.to_string(), i.to_string(), o.to_string(), b.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Forward-difference gradient `((R(W+δE) − R(W)) + j(R(W+jδE) − R(W)))/δ`
/// for every entry `E`.
pub fn fd_gradient(objective: impl Fn(&CMat) -> f64, w: &CMat, delta: f64) -> CMat {
    let base = objective(w);
    let mut probe = w.clone();
    let mut g = CMat::zeros(w.nrows(), w.ncols());
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let x = w[(i, j)];
            probe[(i, j)] = x + C64::new(delta, 0.0);
            let re = objective(&probe) - base;
            probe[(i, j)] = x + C64::new(0.0, delta);
            let im = objective(&probe) - base;
            probe[(i, j)] = x;
            g[(i, j)] = C64::new(re, im) / delta;
        }
    }
    g
}

/// Expected total output power `E‖φ(W s)‖²`: analytic for polynomial
/// amplifiers, Monte-Carlo with a fixed seed otherwise.
pub fn output_power(w: &CMat, pa: &Pa, n_mc: usize, seed: u64) -> f64 {
    match pa.as_polynomial() {
        Some(p) => output_power_analytic(w, p).iter().sum(),
        None => output_power_mc(w, pa, n_mc, seed).iter().sum(),
    }
}

/// Returns `c·W` with `E‖φ(c W s)‖² = P_T` (0.01 % relative), found by
/// bisection on `c`.
pub fn project_output_power(
    w: &CMat,
    pa: &Pa,
    total_power: f64,
    n_mc: usize,
    seed: u64,
) -> Result<PrecodingMatrix> {
    let p_in = power(w);
    if !(p_in > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let f = |c: f64| output_power(&(w * C64::new(c, 0.0)), pa, n_mc, seed);
    let c0 = (total_power / p_in).sqrt();
    let (mut lo, mut hi) = (c0, c0);
    let mut reached = f(hi);
    let mut tries = 0;
    while reached < total_power {
        lo = hi;
        hi *= 2.0;
        reached = f(hi);
        tries += 1;
        if tries > 60 || !reached.is_finite() {
            return Err(Error::NoBracket {
                reachable: reached,
                target: total_power,
            });
        }
    }
    while f(lo) > total_power {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::NoBracket {
                reachable: 0.0,
                target: total_power,
            });
        }
    }
    let mut c = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        c = mid;
        if ((v - total_power) / total_power).abs() < 1e-4 {
            break;
        }
        if v < total_power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(PrecodingMatrix {
        w: w * C64::new(c, 0.0),
        budget: total_power,
    })
}

fn initial(h: &CMat, total_power: f64, restart: usize, cfg: &DabConfig) -> Result<CMat> {
    let base = zf(h, total_power).or_else(|_| mrt(h, total_power))?.w;
    if restart == 0 {
        return Ok(base);
    }
    let mut rng = stream(cfg.seed, restart as u64);
    let (m, k) = base.shape();
    let variance = cfg.perturbation.powi(2) * power(&base) / (m * k) as f64;
    Ok(base.map(|z| z + complex_normal(&mut rng, variance)))
}

struct Ascent<'a> {
    h: &'a CMat,
    pa: &'a PolynomialPa,
    wrapped: Pa,
    noise: NoiseSpec,
    total_power: f64,
    cfg: &'a DabConfig,
}

impl Ascent<'_> {
    fn objective(&self, w: &CMat) -> f64 {
        snidr_analytic(self.h, w, self.pa, self.noise).sum_rate
    }

    fn gradient(&self, w: &CMat) -> Result<CMat> {
        Ok(match self.cfg.gradient {
            GradientMode::Tape => rate_and_gradient(self.h, w, self.pa, self.noise)?.1,
            GradientMode::Fd => fd_gradient(|x| self.objective(x), w, self.cfg.fd_delta),
        })
    }

    fn project(&self, w: &CMat) -> Result<CMat> {
        Ok(project_output_power(w, &self.wrapped, self.total_power, 0, 0)?.w)
    }

    fn run(&self, restart: usize) -> Result<(CMat, f64, RestartTrace)> {
        let mut w = self.project(&initial(self.h, self.total_power, restart, self.cfg)?)?;
        let mut obj = self.objective(&w);
        let mut best = (w.clone(), obj);
        let mut trace = RestartTrace {
            objective: vec![obj],
            best: vec![obj],
        };
        let mut mu = match self.cfg.step {
            StepRule::Backtracking { initial, .. } => initial,
            _ => 0.0,
        };
        for i in 0..self.cfg.iterations {
            let g = self.gradient(&w)?;
            let gnorm = power(&g).sqrt();
            if !(gnorm > 0.0) {
                break;
            }
            match self.cfg.step {
                StepRule::Fixed { mu } => {
                    w = self.project(&(&w + &g * C64::new(mu, 0.0)))?;
                    obj = self.objective(&w);
                }
                StepRule::Decaying { mu0 } => {
                    let mu = mu0 / (1.0 + i as f64 / 100.0);
                    w = self.project(&(&w + &g * C64::new(mu, 0.0)))?;
                    obj = self.objective(&w);
                }
                StepRule::Backtracking { max_halvings, .. } => {
                    let wnorm = power(&w).sqrt();
                    let mut accepted = false;
                    for _ in 0..=max_halvings {
                        let step = mu * wnorm / gnorm;
                        let cand = self.project(&(&w + &g * C64::new(step, 0.0)))?;
                        let c_obj = self.objective(&cand);
                        if c_obj > obj {
                            w = cand;
                            obj = c_obj;
                            accepted = true;
                            mu = (mu * 2.0).min(1.0);
                            break;
                        }
                        mu *= 0.5;
                    }
                    if !accepted {
                        break;
                    }
                }
            }
            if obj > best.1 {
                best = (w.clone(), obj);
            }
            trace.objective.push(obj);
            trace.best.push(best.1);
        }
        Ok((best.0, best.1, trace))
    }
}

/// Runs `cfg.restarts` independent ascents and returns the best precoder.
/// Ties go to the lowest restart index.
pub fn dab_precode(
    h: &CMat,
    pa: &PolynomialPa,
    noise: NoiseSpec,
    total_power: f64,
    cfg: &DabConfig,
) -> Result<DabResult> {
    cfg.validate()?;
    let ascent = Ascent {
        h,
        pa,
        wrapped: Pa::Poly(pa.clone()),
        noise,
        total_power,
        cfg,
    };
    let runs: Vec<Result<(CMat, f64, RestartTrace)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| ascent.run(r))
        .collect();
    let mut best: Option<(usize, CMat, f64)> = None;
    let mut traces = Vec::with_capacity(runs.len());
    for (r, run) in runs.into_iter().enumerate() {
        let (w, obj, trace) = run?;
        traces.push(trace);
        if best.as_ref().is_none_or(|b| obj > b.2) {
            best = Some((r, w, obj));
        }
    }
    let (best_restart, w, rate) = best.expect("at least one restart");
    Ok(DabResult {
        precoder: PrecodingMatrix {
            w,
            budget: total_power,
        },
        rate,
        best_restart,
        traces,
    })
}
