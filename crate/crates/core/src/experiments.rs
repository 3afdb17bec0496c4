//! Experiment sweeps shared by the CLI and the acceptance harness.
//!
//! Every sweep returns plain rows sorted in a fixed order (sweep point
//! order, then precoder order as given), so written CSVs are byte-stable.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    dsp_sizing, flops, gnn_flops_published, pa_consumed_power, ComplexitySpec, DspSizing,
    Expectation, FlopCount, PrecoderKind,
};
use crate::bussgang::{snidr_analytic, snidr_mc, NoiseSpec};
use crate::dab::{dab_precode, DabConfig};
use crate::gnn::{forward_batch, train, GnnArch, GnnParams, SnrFeatureSpec, TrainConfig};
use crate::pa::{psat_from_ibo, IboSpec, Pa, PaDescriptor, PolynomialPa, RappPa, SoftLimiterPa};
use crate::precoders::{mrt, z3ro, zf};
use crate::{CMat, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderChoice {
    Zf,
    Mrt,
    Z3ro,
    /// ZF through an ideally predistorted amplifier (a soft limiter at the
    /// same saturation power).
    ZfDpd,
    Gnn,
    Dab,
}

impl PrecoderChoice {
    pub fn name(self) -> &'static str {
        match self {
            PrecoderChoice::Zf => "zf",
            PrecoderChoice::Mrt => "mrt",
            PrecoderChoice::Z3ro => "z3ro",
            PrecoderChoice::ZfDpd => "zf_dpd",
            PrecoderChoice::Gnn => "gnn",
            PrecoderChoice::Dab => "dab",
        }
    }
}

impl FromStr for PrecoderChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "zf" => PrecoderChoice::Zf,
            "mrt" => PrecoderChoice::Mrt,
            "z3ro" => PrecoderChoice::Z3ro,
            "zf_dpd" => PrecoderChoice::ZfDpd,
            "gnn" => PrecoderChoice::Gnn,
            "dab" => PrecoderChoice::Dab,
            other => return Err(Error::Config(format!("unknown precoder `{other}`"))),
        })
    }
}

pub fn parse_precoders(names: &[String]) -> Result<Vec<PrecoderChoice>> {
    names.iter().map(|n| n.parse()).collect()
}

/// A trained network and how its SNR input is normalized.
#[derive(Debug, Clone, Copy)]
pub struct GnnModel<'a> {
    pub params: &'a GnnParams,
    pub feature: Option<SnrFeatureSpec>,
}

impl GnnModel<'_> {
    fn snr_input(&self, snr_db: f64) -> Option<f64> {
        (self.params.arch.input_dim == 3)
            .then(|| self.feature.unwrap_or_default().normalize(snr_db))
    }
}

/// Everything needed to turn a channel into a precoder and a sum rate.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    /// The amplifier on every antenna.
    pub pa: &'a Pa,
    /// Saturation power used for `zf_dpd` and consumed power.
    pub p_sat: Option<f64>,
    pub total_power: f64,
    pub gnn: Option<GnnModel<'a>>,
    pub dab: &'a DabConfig,
    /// Samples per channel when the amplifier is not polynomial.
    pub mc_samples: usize,
    pub seed: u64,
    pub z3ro_saturated: usize,
}

/// Sum rate of `w` on `h`; analytic for polynomial amplifiers, Monte-Carlo
/// otherwise.
pub fn link_rate(
    h: &CMat,
    w: &CMat,
    pa: &Pa,
    noise: NoiseSpec,
    mc_samples: usize,
    seed: u64,
) -> f64 {
    match pa {
        Pa::Poly(p) => snidr_analytic(h, w, p, noise).sum_rate,
        other => snidr_mc(h, w, other, noise, mc_samples, seed).sum_rate,
    }
}

fn require_poly(pa: &Pa, what: &str) -> Result<PolynomialPa> {
    pa.as_polynomial()
        .cloned()
        .ok_or_else(|| Error::Config(format!("{what} needs a polynomial amplifier")))
}

impl EvalContext<'_> {
    fn dpd_pa(&self) -> Result<Pa> {
        let p_sat = self
            .p_sat
            .ok_or_else(|| Error::Config("zf_dpd needs an amplifier with an IBO".into()))?;
        Ok(Pa::SoftLimiter(SoftLimiterPa { p_sat }))
    }

    /// Precoders for all channels, plus the amplifier each is evaluated with.
    pub fn precode_all(
        &self,
        choice: PrecoderChoice,
        hs: &[CMat],
        snr_db: f64,
    ) -> Result<(Vec<CMat>, Pa)> {
        let p = self.total_power;
        let noise = NoiseSpec::from_snr_db(p, snr_db);
        let pa = self.pa.clone();
        let per = |f: &(dyn Fn(&CMat) -> Result<CMat> + Sync)| -> Result<Vec<CMat>> {
            hs.par_iter().map(f).collect()
        };
        Ok(match choice {
            PrecoderChoice::Zf => (per(&|h| Ok(zf(h, p)?.w))?, pa),
            PrecoderChoice::Mrt => (per(&|h| Ok(mrt(h, p)?.w))?, pa),
            PrecoderChoice::Z3ro => (per(&|h| Ok(z3ro(h, p, self.z3ro_saturated)?.w))?, pa),
            PrecoderChoice::ZfDpd => (per(&|h| Ok(zf(h, p)?.w))?, self.dpd_pa()?),
            PrecoderChoice::Gnn => {
                let model = self
                    .gnn
                    .ok_or_else(|| Error::Config("gnn evaluation needs a checkpoint".into()))?;
                let snr = model.snr_input(snr_db);
                let mut out = Vec::with_capacity(hs.len());
                for chunk in hs.chunks(256) {
                    let refs: Vec<&CMat> = chunk.iter().collect();
                    out.extend(
                        forward_batch(model.params, &refs, snr, p)?
                            .into_iter()
                            .map(|w| w.w),
                    );
                }
                (out, pa)
            }
            PrecoderChoice::Dab => {
                let poly = require_poly(self.pa, "dab")?;
                // restarts already run in parallel; keep channels sequential
                let ws = hs
                    .iter()
                    .map(|h| Ok(dab_precode(h, &poly, noise, p, self.dab)?.precoder.w))
                    .collect::<Result<Vec<_>>>()?;
                (ws, pa)
            }
        })
    }

    /// Mean sum rate over `hs`.
    pub fn mean_rate(&self, choice: PrecoderChoice, hs: &[CMat], snr_db: f64) -> Result<f64> {
        let noise = NoiseSpec::from_snr_db(self.total_power, snr_db);
        let (ws, pa) = self.precode_all(choice, hs, snr_db)?;
        let rates: Vec<f64> = hs
            .par_iter()
            .zip(&ws)
            .enumerate()
            .map(|(i, (h, w))| {
                link_rate(
                    h,
                    w,
                    &pa,
                    noise,
                    self.mc_samples,
                    self.seed.wrapping_add(i as u64),
                )
            })
            .collect();
        Ok(rates.iter().sum::<f64>() / hs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub precoder: String,
    pub snr_db: f64,
    pub sum_rate: f64,
    pub channels: usize,
}

/// Mean sum rate of every precoder at every `P_T/σ²`.
pub fn eval_sweep(
    ctx: &EvalContext<'_>,
    hs: &[CMat],
    choices: &[PrecoderChoice],
    snr_db: &[f64],
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for &choice in choices {
        for &snr in snr_db {
            rows.push(EvalRow {
                precoder: choice.name().into(),
                snr_db: snr,
                sum_rate: ctx.mean_rate(choice, hs, snr)?,
                channels: hs.len(),
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write, R: Serialize>(out: W, rows: &[R]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Operating point of the amplifier described by `desc`, if it has one.
pub fn descriptor_ibo(desc: &PaDescriptor) -> Option<IboSpec> {
    match desc {
        PaDescriptor::Poly {
            coeffs: None,
            ibo_db: Some(ibo),
            p_in,
            ..
        } => Some(IboSpec::new(*ibo, *p_in)),
        PaDescriptor::Rapp { ibo_db, p_in, .. } | PaDescriptor::Softlimiter { ibo_db, p_in } => {
            Some(IboSpec::new(*ibo_db, *p_in))
        }
        _ => None,
    }
}

/// `desc` moved to another IBO.
pub fn descriptor_at_ibo(desc: &PaDescriptor, ibo: f64) -> Result<PaDescriptor> {
    let mut d = desc.clone();
    match &mut d {
        PaDescriptor::Poly {
            coeffs: None,
            ibo_db,
            ..
        } => *ibo_db = Some(ibo),
        PaDescriptor::Rapp { ibo_db, .. } | PaDescriptor::Softlimiter { ibo_db, .. } => {
            *ibo_db = ibo
        }
        _ => {
            return Err(Error::Config(
                "IBO sweeps need an amplifier defined by `ibo_db`, not explicit coefficients"
                    .into(),
            ))
        }
    }
    Ok(d)
}

/// Where the network of an IBO sweep comes from.
pub enum GnnSource<'a> {
    None,
    Fixed(GnnModel<'a>),
    /// Train a fresh network at every IBO on the polynomial model there.
    Retrain {
        arch: &'a GnnArch,
        cfg: &'a TrainConfig,
        train: &'a [CMat],
        val: &'a [CMat],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IboRow {
    pub ibo_db: f64,
    pub precoder: String,
    pub sum_rate: f64,
    /// Class-B consumed power of the amplifiers, `(√p_sat/η_max) Σ √p_m`.
    pub p_cons: f64,
}

/// Shared settings of the IBO sweeps.
pub struct IboSweep<'a> {
    pub base: &'a PaDescriptor,
    pub ibo_db: &'a [f64],
    pub snr_db: f64,
    pub total_power: f64,
    pub dab: &'a DabConfig,
    pub mc_samples: usize,
    pub seed: u64,
    pub expectation: Expectation,
}

/// Sum rate and consumed PA power of every precoder at every IBO.
pub fn ibo_sweep(
    sweep: &IboSweep<'_>,
    hs: &[CMat],
    choices: &[PrecoderChoice],
    gnn: &GnnSource<'_>,
) -> Result<Vec<IboRow>> {
    let mut rows = Vec::new();
    for &ibo in sweep.ibo_db {
        let desc = descriptor_at_ibo(sweep.base, ibo)?;
        let pa = desc.build()?;
        let spec = descriptor_ibo(&desc).expect("swept descriptors carry an IBO");
        let p_sat = psat_from_ibo(spec);
        let trained;
        let model = match gnn {
            GnnSource::None => None,
            GnnSource::Fixed(m) => Some(*m),
            GnnSource::Retrain {
                arch,
                cfg,
                train: t,
                val,
            } => {
                let poly = require_poly(&pa, "retraining")?;
                log::info!("training at IBO {ibo} dB");
                trained = train(arch, cfg, t, val, &poly)?.params;
                Some(GnnModel {
                    params: &trained,
                    feature: cfg.snr.feature(),
                })
            }
        };
        let ctx = EvalContext {
            pa: &pa,
            p_sat: Some(p_sat),
            total_power: sweep.total_power,
            gnn: model,
            dab: sweep.dab,
            mc_samples: sweep.mc_samples,
            seed: sweep.seed,
            z3ro_saturated: 1,
        };
        for &choice in choices {
            let noise = NoiseSpec::from_snr_db(sweep.total_power, sweep.snr_db);
            let (ws, eval_pa) = ctx.precode_all(choice, hs, sweep.snr_db)?;
            let per: Vec<(f64, f64)> = hs
                .par_iter()
                .zip(&ws)
                .enumerate()
                .map(|(i, (h, w))| {
                    let seed = sweep.seed.wrapping_add(i as u64);
                    let rate = link_rate(h, w, &eval_pa, noise, sweep.mc_samples, seed);
                    let expectation = match sweep.expectation {
                        Expectation::MonteCarlo { samples, seed: s } => Expectation::MonteCarlo {
                            samples,
                            seed: s.wrapping_add(i as u64),
                        },
                        e => e,
                    };
                    (
                        rate,
                        pa_consumed_power(w, &eval_pa, p_sat, expectation).total,
                    )
                })
                .collect();
            let n = hs.len() as f64;
            rows.push(IboRow {
                ibo_db: ibo,
                precoder: choice.name().into(),
                sum_rate: per.iter().map(|p| p.0).sum::<f64>() / n,
                p_cons: per.iter().map(|p| p.1).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

/// Consumed power needed by `precoder` to reach `rate`, by linear
/// interpolation between sweep points ordered by consumed power. When the
/// curve crosses `rate` more than once the cheapest crossing is returned.
pub fn power_at_rate(rows: &[IboRow], precoder: &str, rate: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.precoder == precoder)
        .map(|r| (r.p_cons, r.sum_rate))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<f64> = None;
    for seg in pts.windows(2) {
        let ((p0, r0), (p1, r1)) = (seg[0], seg[1]);
        if (r0 - rate) * (r1 - rate) <= 0.0 && r0 != r1 {
            let p = p0 + (rate - r0) / (r1 - r0) * (p1 - p0);
            best = Some(best.map_or(p, |b: f64| b.min(p)));
        } else if r0 == rate {
            best = Some(best.map_or(p0, |b: f64| b.min(p0)));
        }
    }
    best
}

/// Sum-rate range reached by `precoder` in a sweep.
pub fn rate_range(rows: &[IboRow], precoder: &str) -> Option<(f64, f64)> {
    rows.iter()
        .filter(|r| r.precoder == precoder)
        .map(|r| r.sum_rate)
        .fold(None, |acc, r| match acc {
            None => Some((r, r)),
            Some((lo, hi)) => Some((lo.min(r), hi.max(r))),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RappValidation {
    pub ibo_db: f64,
    pub snr_db: f64,
    /// Network rate with the polynomial it was trained on.
    pub rate_poly: f64,
    /// Network rate through the Rapp amplifier at the same IBO.
    pub rate_rapp: f64,
    /// `|rate_rapp − rate_poly| / rate_poly`.
    pub relative_gap: f64,
    pub zf_rate_rapp: f64,
}

/// Evaluates a polynomial-trained network under the Rapp amplifier.
pub fn validate_rapp(
    model: GnnModel<'_>,
    poly: &PolynomialPa,
    spec: IboSpec,
    hs: &[CMat],
    snr_db: f64,
    total_power: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<RappValidation> {
    let dab = DabConfig::default();
    let poly_pa = Pa::Poly(poly.clone());
    let rapp = Pa::Rapp(RappPa::with_psat(psat_from_ibo(spec)));
    let ctx = |pa| EvalContext {
        pa,
        p_sat: Some(psat_from_ibo(spec)),
        total_power,
        gnn: Some(model),
        dab: &dab,
        mc_samples,
        seed,
        z3ro_saturated: 1,
    };
    let rate_poly = ctx(&poly_pa).mean_rate(PrecoderChoice::Gnn, hs, snr_db)?;
    let rate_rapp = ctx(&rapp).mean_rate(PrecoderChoice::Gnn, hs, snr_db)?;
    let zf_rate_rapp = ctx(&rapp).mean_rate(PrecoderChoice::Zf, hs, snr_db)?;
    Ok(RappValidation {
        ibo_db: spec.ibo_db,
        snr_db,
        rate_poly,
        rate_rapp,
        relative_gap: (rate_rapp - rate_poly).abs() / rate_poly,
        zf_rate_rapp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub spec: ComplexitySpec,
    pub gnn: FlopCount,
    pub zf: FlopCount,
    pub mrt: FlopCount,
    pub dab: FlopCount,
    pub dab_over_gnn: f64,
    pub gnn_serial_over_zf: f64,
    /// GNN FLOPs with the published add count (no output-layer message sums).
    pub gnn_published_flops: u64,
    /// Accelerator sizing for one GNN pass per coherence interval.
    pub dsp: DspSizing,
}

pub fn complexity_report(
    spec: ComplexitySpec,
    carrier_hz: f64,
    velocity_mps: f64,
    duty: f64,
) -> Result<ComplexityReport> {
    let gnn = flops(PrecoderKind::Gnn, &spec)?;
    let zf = flops(PrecoderKind::Zf, &spec)?;
    let dab = flops(PrecoderKind::Dab, &spec)?;
    Ok(ComplexityReport {
        spec,
        gnn,
        zf,
        mrt: flops(PrecoderKind::Mrt, &spec)?,
        dab,
        dab_over_gnn: dab.flops as f64 / gnn.flops as f64,
        gnn_serial_over_zf: gnn.serial_flops as f64 / zf.flops as f64,
        gnn_published_flops: gnn_flops_published(
            spec.antennas,
            spec.users,
            spec.hidden,
            spec.layers,
        ),
        dsp: dsp_sizing(carrier_hz, velocity_mps, gnn.flops as f64, duty)?,
    })
}
