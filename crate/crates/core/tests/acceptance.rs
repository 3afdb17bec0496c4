//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Run alone with `cargo test --release -p nlprecode --test acceptance`.
//! `ACCEPTANCE_ONLY=1,4,9` restricts the run to the listed criteria.

use std::time::Instant;

use nlprecode::analysis::{
    dsp_sizing, flops, gnn_flops_published, pa_consumed_power, ComplexitySpec, Expectation,
    PrecoderKind, DEFAULT_DUTY,
};
use nlprecode::bussgang::{
    distortion_cov, estimate_bussgang, gain_diag, input_cov, output_power_analytic, snidr_analytic,
    snidr_mc, NoiseSpec,
};
use nlprecode::channel::gen_rayleigh;
use nlprecode::dab::{dab_precode, DabConfig, StepRule};
use nlprecode::experiments::{
    ibo_sweep, power_at_rate, rate_range, validate_rapp, write_csv, EvalContext, GnnModel,
    GnnSource, IboSweep, PrecoderChoice,
};
use nlprecode::gnn::{
    gnn_forward, loss, reference_forward, train, GnnArch, GnnParams, SnrFeatureSpec, SnrTraining,
    TrainConfig,
};
use nlprecode::grad::{gradcheck, Tensor, Var};
use nlprecode::linalg::{permutation, power};
use nlprecode::pa::{
    am_am_rmse, appendix_coeffs, fit_polynomial, psat_from_ibo, FitConfig, IboSpec, Pa,
    PaDescriptor, PolynomialPa, RappPa,
};
use nlprecode::precoders::{mrt, z3ro, zf};
use nlprecode::{CMat, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const C1_REL_TOL: f64 = 0.02;
const C1_SAMPLES: usize = 1_000_000;
const C1_MAX_SECS: f64 = 120.0;
const C2_GAIN_TOL: f64 = 0.01;
const C2_COV_TOL: f64 = 0.02;
const C3_TOL: f64 = 1e-4;
const C4_EQUIVARIANCE_TOL: f64 = 1e-12;
const C4_POWER_TOL: f64 = 1e-9;
const C4_NULL_TOL: f64 = 1e-9;
const C4_DAB_OUTPUT_TOL: f64 = 1e-3;
const C5_RATIO: f64 = 0.95;
const C6_GAIN_BITS: f64 = 2.0;
const C7_RATIO: f64 = 0.99;
const C8_RMSE: f64 = 0.01;
const C8_RAPP_GAP: f64 = 0.10;
const C10_POWER_TOL: f64 = 0.01;
const C11_PARITY: f64 = 0.95;

// Scaled-down training setup shared by the trained criteria.
const M: usize = 16;
const HIDDEN: usize = 32;
const LAYERS: usize = 5;
const TRAIN_SIZE: usize = 10_000;
const VAL_SIZE: usize = 500;
const TEST_SIZE: usize = 500;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn channels(m: usize, k: usize, n: usize, seed: u64) -> Vec<CMat> {
    gen_rayleigh(m, k, n, seed)
        .unwrap()
        .samples
        .into_iter()
        .map(|c| c.into_inner())
        .collect()
}

fn random_precoder(rng: &mut ChaCha8Rng, m: usize, k: usize) -> CMat {
    let w = CMat::from_fn(m, k, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let p = power(&w);
    w * C64::new((m as f64 / p).sqrt(), 0.0)
}

fn train_cfg(snr: SnrTraining, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        snr,
        train_size: TRAIN_SIZE,
        val_size: VAL_SIZE,
        test_size: TEST_SIZE,
        seed,
        ..TrainConfig::default()
    }
}

struct Trained {
    params: GnnParams,
    feature: Option<SnrFeatureSpec>,
    test: Vec<CMat>,
    secs: f64,
}

fn train_scaled(
    k: usize,
    pa: &PolynomialPa,
    snr: SnrTraining,
    epochs: usize,
    seed: u64,
) -> Trained {
    let start = Instant::now();
    let arch = GnnArch::new(LAYERS, HIDDEN, snr.input_dim()).unwrap();
    let cfg = train_cfg(snr.clone(), epochs, seed);
    let tr = channels(M, k, TRAIN_SIZE, seed + 1);
    let va = channels(M, k, VAL_SIZE, seed + 2);
    let out = train(&arch, &cfg, &tr, &va, pa).unwrap();
    Trained {
        params: out.params,
        feature: snr.feature(),
        test: channels(M, k, TEST_SIZE, seed + 3),
        secs: start.elapsed().as_secs_f64(),
    }
}

fn ctx<'a>(pa: &'a Pa, model: &'a Trained, dab: &'a DabConfig) -> EvalContext<'a> {
    EvalContext {
        pa,
        p_sat: Some(psat_from_ibo(IboSpec::new(-3.0, 1.0))),
        total_power: M as f64,
        gnn: Some(GnnModel {
            params: &model.params,
            feature: model.feature,
        }),
        dab,
        mc_samples: 10_000,
        seed: 0,
        z3ro_saturated: 1,
    }
}

fn c1_oracle_agreement() -> Outcome {
    let start = Instant::now();
    let pa = appendix_coeffs(-3.0).unwrap();
    let wrapped = Pa::Poly(pa.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let m = rng.random_range(2..=8);
        let k = rng.random_range(1..=m.min(4));
        let h = channels(m, k, 1, 1000 + i).remove(0);
        // Benchmark precoders rather than arbitrary W: a user with SNIDR near
        // zero has a desired power the estimator cannot resolve to 2%.
        let w = if i % 2 == 0 {
            zf(&h, m as f64).unwrap().w
        } else {
            mrt(&h, m as f64).unwrap().w
        };
        let noise = NoiseSpec::from_snr_db(m as f64, 20.0);
        let a = snidr_analytic(&h, &w, &pa, noise);
        let b = snidr_mc(&h, &w, &wrapped, noise, C1_SAMPLES, 2000 + i);
        for (x, y) in a.snidr.iter().zip(&b.snidr) {
            worst = worst.max((x - y).abs() / x);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < C1_REL_TOL && secs < C1_MAX_SECS,
        format!("max per-user relative SNIDR error {worst:.2e} (< {C1_REL_TOL}), {secs:.1} s (< {C1_MAX_SECS} s)"),
    )
}

fn c2_bussgang_components() -> Outcome {
    let pa = appendix_coeffs(-3.0).unwrap();
    let wrapped = Pa::Poly(pa.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut gain_err, mut cov_err) = (0.0f64, 0.0f64);
    for i in 0..6 {
        let m = 2 + i % 3;
        let k = rng.random_range(1..=m);
        let w = random_precoder(&mut rng, m, k);
        let est = estimate_bussgang(&w, &wrapped, 1_000_000, 300 + i as u64);
        let p: Vec<f64> = (0..m).map(|j| input_cov(&w)[(j, j)].re).collect();
        for (g_mc, g) in est.gain.iter().zip(gain_diag(&p, &pa)) {
            gain_err = gain_err.max((g_mc - g).norm() / g.norm());
        }
        let ce = distortion_cov(&w, &pa);
        cov_err = cov_err.max((&est.distortion_cov - &ce).norm() / ce.norm());
    }
    outcome(
        gain_err < C2_GAIN_TOL && cov_err < C2_COV_TOL,
        format!("gain rel. error {gain_err:.2e} (< {C2_GAIN_TOL}), C_e rel. Frobenius error {cov_err:.2e} (< {C2_COV_TOL})"),
    )
}

fn c3_gradient() -> Outcome {
    let arch = GnnArch::new(3, 8, 2).unwrap();
    let params = GnnParams::init(&arch, 31).unwrap();
    let pa = appendix_coeffs(-3.0).unwrap();
    let hs = channels(4, 2, 3, 32);
    let refs: Vec<&CMat> = hs.iter().collect();
    let point: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let err = gradcheck(
        |tape, v| {
            let weights: Vec<[Var<'_>; 3]> = v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            loss(tape, &weights, &arch, &refs, &pa, &[0.04; 3], None, 4.0)
        },
        &point,
        1e-5,
    );
    outcome(
        err < C3_TOL,
        format!("max relative gradient error {err:.2e} (< {C3_TOL:.0e})"),
    )
}

fn c4_exact_properties() -> Outcome {
    let mut worst_equiv = 0.0f64;
    let mut worst_power = 0.0f64;
    let mut worst_null = 0.0f64;
    let mut worst_z3ro = 0.0f64;
    let mut worst_dab = 0.0f64;
    let params = GnnParams::init(&GnnArch::new(4, 16, 2).unwrap(), 41).unwrap();
    let pa3 = PolynomialPa::third_order_m3db();
    let quick = DabConfig {
        restarts: 2,
        iterations: 20,
        ..DabConfig::default()
    };
    for seed in 0..10u64 {
        let (m, k) = (6, 3);
        let p_t = m as f64;
        let h = channels(m, k, 1, 400 + seed).remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pm: Vec<usize> = (0..m).collect();
        let mut pk: Vec<usize> = (0..k).collect();
        rand::seq::SliceRandom::shuffle(pm.as_mut_slice(), &mut rng);
        rand::seq::SliceRandom::shuffle(pk.as_mut_slice(), &mut rng);
        let (p1, p2) = (permutation(&pm), permutation(&pk));
        let base = gnn_forward(&params, &h, None, p_t).unwrap().w;
        let moved = gnn_forward(&params, &(&p1 * &h * p2.transpose()), None, p_t)
            .unwrap()
            .w;
        let want = &p1 * &base * p2.transpose();
        worst_equiv = worst_equiv.max(
            (&want - &moved)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max),
        );

        let noise = NoiseSpec::from_snr_db(p_t, 20.0);
        let h1 = channels(m, 1, 1, 500 + seed).remove(0);
        let ws = [
            zf(&h, p_t).unwrap().w,
            mrt(&h, p_t).unwrap().w,
            gnn_forward(&params, &h, None, p_t).unwrap().w,
            z3ro(&h1, p_t, 1).unwrap().w,
        ];
        for w in &ws {
            worst_power = worst_power.max((power(w) - p_t).abs() / p_t);
        }
        // DAB constrains the power after the amplifiers instead.
        let d = dab_precode(&h1, &pa3, noise, p_t, &quick)
            .unwrap()
            .precoder
            .w;
        let out: f64 = output_power_analytic(&d, &pa3).iter().sum();
        worst_dab = worst_dab.max((out - p_t).abs() / p_t);

        let g = h.transpose() * &ws[0];
        let diag = (0..k).map(|i| g[(i, i)].norm()).fold(0.0, f64::max);
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    worst_null = worst_null.max(g[(i, j)].norm() / diag);
                }
            }
        }

        let w = &ws[3];
        let (mut num, mut den) = (C64::new(0.0, 0.0), 0.0);
        for i in 0..m {
            let t = h1[(i, 0)] * w[(i, 0)] * w[(i, 0)].norm_sqr();
            num += t;
            den += t.norm();
        }
        worst_z3ro = worst_z3ro.max(num.norm() / den);
    }
    outcome(
        worst_equiv < C4_EQUIVARIANCE_TOL
            && worst_power < C4_POWER_TOL
            && worst_null < C4_NULL_TOL
            && worst_z3ro < C4_NULL_TOL
            && worst_dab < C4_DAB_OUTPUT_TOL,
        format!(
            "equivariance {worst_equiv:.1e}, trace power {worst_power:.1e}, DAB output power {worst_dab:.1e}, \
             ZF leakage {worst_null:.1e}, Z3RO third-order residual {worst_z3ro:.1e}"
        ),
    )
}

fn c5_single_user() -> Outcome {
    let pa = PolynomialPa::third_order_m3db();
    let model = train_scaled(1, &pa, SnrTraining::Fixed { snr_db: 20.0 }, 25, 500);
    let wrapped = Pa::Poly(pa.clone());
    let dab = DabConfig::default();
    let c = ctx(&wrapped, &model, &dab);
    let gnn = c.mean_rate(PrecoderChoice::Gnn, &model.test, 20.0).unwrap();
    let z3 = c
        .mean_rate(PrecoderChoice::Z3ro, &model.test, 20.0)
        .unwrap();
    outcome(
        gnn >= C5_RATIO * z3,
        format!(
            "GNN {gnn:.3} vs Z3RO {z3:.3} bits ({:.1}% >= {:.0}%), trained in {:.0} s",
            100.0 * gnn / z3,
            100.0 * C5_RATIO,
            model.secs
        ),
    )
}

fn c6_distortion_limited() -> Outcome {
    let pa = appendix_coeffs(-3.0).unwrap();
    let model = train_scaled(2, &pa, SnrTraining::Fixed { snr_db: 30.0 }, 25, 600);
    let wrapped = Pa::Poly(pa);
    let dab = DabConfig::default();
    let c = ctx(&wrapped, &model, &dab);
    let gnn = c.mean_rate(PrecoderChoice::Gnn, &model.test, 30.0).unwrap();
    let z = c.mean_rate(PrecoderChoice::Zf, &model.test, 30.0).unwrap();
    outcome(
        gnn - z >= C6_GAIN_BITS,
        format!(
            "GNN {gnn:.3} vs ZF {z:.3} bits, gain {:.2} (>= {C6_GAIN_BITS}), trained in {:.0} s",
            gnn - z,
            model.secs
        ),
    )
}

fn c7_dab() -> Outcome {
    let pa = PolynomialPa::third_order_m3db();
    let cfg = DabConfig {
        restarts: 8,
        iterations: 300,
        step: StepRule::default(),
        seed: 7,
        ..DabConfig::default()
    };
    let mut worst = f64::INFINITY;
    let mut monotone = true;
    for seed in 0..5u64 {
        let h = channels(4, 1, 1, 700 + seed).remove(0);
        let noise = NoiseSpec::from_snr_db(4.0, 20.0);
        let res = dab_precode(&h, &pa, noise, 4.0, &cfg).unwrap();
        let z = snidr_analytic(&h, &z3ro(&h, 4.0, 1).unwrap().w, &pa, noise).sum_rate;
        worst = worst.min(res.rate / z);
        monotone &= res
            .traces
            .iter()
            .all(|t| t.best.windows(2).all(|p| p[1] >= p[0]));
    }
    outcome(
        worst >= C7_RATIO && monotone,
        format!("worst DAB/Z3RO ratio {worst:.4} (>= {C7_RATIO}), best-objective traces monotone: {monotone}"),
    )
}

fn c8_pa_fit(model_20db: &Trained) -> Outcome {
    let spec = IboSpec::new(-3.0, 1.0);
    let rapp = RappPa::with_psat(psat_from_ibo(spec));
    let fit = fit_polynomial(&rapp, spec, 5, &FitConfig::calibrated(5)).unwrap();
    let table = appendix_coeffs(-3.0).unwrap();
    let rmse = am_am_rmse(&fit.pa, &table, 2.0, 2001);
    let v = validate_rapp(
        GnnModel {
            params: &model_20db.params,
            feature: None,
        },
        &fit.pa,
        spec,
        &model_20db.test,
        20.0,
        M as f64,
        10_000,
        8,
    )
    .unwrap();
    outcome(
        rmse < C8_RMSE && v.relative_gap < C8_RAPP_GAP,
        format!(
            "AM/AM RMSE {rmse:.2e} (< {C8_RMSE}); GNN at 20 dB: {:.3} bits polynomial, {:.3} bits Rapp, gap {:.1}% (< {:.0}%)",
            v.rate_poly,
            v.rate_rapp,
            100.0 * v.relative_gap,
            100.0 * C8_RAPP_GAP
        ),
    )
}

fn c9_complexity() -> Outcome {
    let mut exact = true;
    for (m, k, d, l) in [(4usize, 2usize, 8usize, 3usize), (3, 3, 5, 4), (8, 2, 6, 2)] {
        let params = GnnParams::init(&GnnArch::new(l, d, 2).unwrap(), 9).unwrap();
        let h = channels(m, k, 1, 90).remove(0);
        let (_, ops) = reference_forward(&params, &h, None).unwrap();
        let f = flops(
            PrecoderKind::Gnn,
            &ComplexitySpec::new(m as u64, k as u64, d as u64, l as u64),
        )
        .unwrap();
        exact &= (f.mults, f.adds) == (ops.mults, ops.adds);
    }
    let spec = ComplexitySpec::new(64, 4, 128, 8);
    let g = flops(PrecoderKind::Gnn, &spec).unwrap().flops as f64;
    let d = flops(PrecoderKind::Dab, &spec).unwrap().flops as f64;
    outcome(
        exact && d / g >= 1e6,
        format!(
            "formula equals counter on 3 configs: {exact}; DAB/GNN = {:.2e} (>= 1e6)",
            d / g
        ),
    )
}

fn c10_power(model_20db: &Trained) -> Outcome {
    let published = gnn_flops_published(64, 4, 128, 8) as f64;
    let s = dsp_sizing(5e9, 10.0, published, DEFAULT_DUTY).unwrap();
    let tc_ms = (s.coherence_s * 1e4).round() / 10.0;
    let gops = (s.required_ops_per_s / 1e9).round();
    let sizing_ok = tc_ms == 3.0 && gops == 549.0;

    let pa = Pa::Poly(appendix_coeffs(-3.0).unwrap());
    let p_sat = psat_from_ibo(IboSpec::new(-3.0, 1.0));
    let mut worst = 0.0f64;
    for (i, h) in channels(8, 2, 4, 1010).iter().enumerate() {
        let w = zf(h, 8.0).unwrap().w;
        let a = pa_consumed_power(&w, &pa, p_sat, Expectation::Analytic).total;
        let b = pa_consumed_power(
            &w,
            &pa,
            p_sat,
            Expectation::MonteCarlo {
                samples: 200_000,
                seed: i as u64,
            },
        )
        .total;
        worst = worst.max((a - b).abs() / a);
    }

    let base = PaDescriptor::Poly {
        coeffs: None,
        ibo_db: Some(-3.0),
        order: None,
        p_in: 1.0,
    };
    let dab = DabConfig::default();
    let sweep = IboSweep {
        base: &base,
        ibo_db: &[-9.0, -7.5, -6.0, -4.5, -3.0, -1.5, 0.0],
        snr_db: 20.0,
        total_power: M as f64,
        dab: &dab,
        mc_samples: 10_000,
        seed: 0,
        expectation: Expectation::Analytic,
    };
    let model = GnnModel {
        params: &model_20db.params,
        feature: None,
    };
    let rows = ibo_sweep(
        &sweep,
        &model_20db.test,
        &[PrecoderChoice::Zf, PrecoderChoice::Gnn],
        &GnnSource::Fixed(model),
    )
    .unwrap();
    let csv_path = std::env::temp_dir().join("nlprecode_acceptance_rate_vs_power.csv");
    write_csv(std::fs::File::create(&csv_path).unwrap(), &rows).unwrap();

    let (glo, ghi) = rate_range(&rows, "gnn").unwrap();
    let (zlo, zhi) = rate_range(&rows, "zf").unwrap();
    let (lo, hi) = (glo.max(zlo), ghi.min(zhi));
    let mut below = hi > lo;
    let mut margin = f64::INFINITY;
    for i in 0..=10 {
        let r = lo + (hi - lo) * i as f64 / 10.0;
        match (
            power_at_rate(&rows, "gnn", r),
            power_at_rate(&rows, "zf", r),
        ) {
            (Some(g), Some(z)) => {
                below &= g < z;
                margin = margin.min(z / g);
            }
            _ => below = false,
        }
    }
    outcome(
        sizing_ok && worst < C10_POWER_TOL && below,
        format!(
            "T_c {tc_ms} ms, {gops} GOPS; consumed-power analytic vs MC {worst:.2e} (< {C10_POWER_TOL}); \
             GNN below ZF at equal rate on [{lo:.2}, {hi:.2}] bits: {below} (min ZF/GNN power ratio {margin:.2}); rows in {}",
            csv_path.display()
        ),
    )
}

fn c11_snr_variant() -> Outcome {
    let pa = appendix_coeffs(-3.0).unwrap();
    let snr = SnrTraining::Range {
        min_db: -30.0,
        max_db: 30.0,
        step_db: 5.0,
        feature: SnrFeatureSpec::default(),
    };
    let model = train_scaled(2, &pa, snr, 30, 1100);
    let wrapped = Pa::Poly(pa);
    let dab = DabConfig::default();
    let c = ctx(&wrapped, &model, &dab);
    let mut parity = true;
    let mut low = Vec::new();
    for s in [-12.5, -7.5] {
        let g = c.mean_rate(PrecoderChoice::Gnn, &model.test, s).unwrap();
        let z = c.mean_rate(PrecoderChoice::Zf, &model.test, s).unwrap();
        parity &= g >= C11_PARITY * z;
        low.push(format!("{s} dB: {g:.3} vs {z:.3}"));
    }
    let g = c.mean_rate(PrecoderChoice::Gnn, &model.test, 27.5).unwrap();
    let z = c.mean_rate(PrecoderChoice::Zf, &model.test, 27.5).unwrap();
    outcome(
        parity && g - z >= C6_GAIN_BITS,
        format!(
            "GNN vs ZF {} (>= {:.0}% of ZF); 27.5 dB: {g:.3} vs {z:.3}, gain {:.2} (>= {C6_GAIN_BITS}); trained in {:.0} s",
            low.join(", "),
            100.0 * C11_PARITY,
            g - z,
            model.secs
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|v| v.contains(&i));

    let names = [
        "oracle agreement (analytic vs Monte-Carlo SNIDR)",
        "Bussgang gain and distortion covariance",
        "gradient correctness",
        "exact properties",
        "single-user optimality (GNN vs Z3RO)",
        "distortion-limited gain over ZF",
        "DAB sanity",
        "PA fit and Rapp cross-validation",
        "complexity",
        "power model",
        "SNR-feature variant",
    ];
    let needs_20db = wanted(8) || wanted(10);
    let model_20db = needs_20db.then(|| {
        train_scaled(
            2,
            &appendix_coeffs(-3.0).unwrap(),
            SnrTraining::Fixed { snr_db: 20.0 },
            20,
            800,
        )
    });

    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let id = i + 1;
        if !wanted(id) {
            continue;
        }
        let start = Instant::now();
        let o = match id {
            1 => c1_oracle_agreement(),
            2 => c2_bussgang_components(),
            3 => c3_gradient(),
            4 => c4_exact_properties(),
            5 => c5_single_user(),
            6 => c6_distortion_limited(),
            7 => c7_dab(),
            8 => c8_pa_fit(model_20db.as_ref().unwrap()),
            9 => c9_complexity(),
            10 => c10_power(model_20db.as_ref().unwrap()),
            11 => c11_snr_variant(),
            _ => unreachable!(),
        };
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {id:>2}: {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
