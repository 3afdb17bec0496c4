//! Subcommand implementations.

use std::io::Write;

use anyhow::Result;
use nlprecode::analysis::{radiation_pattern, ComplexitySpec, Expectation};
use nlprecode::bussgang::NoiseSpec;
use nlprecode::channel::{
    gen_los, gen_los_set, gen_rayleigh, save_channels, Distribution, LosGeometry,
};
use nlprecode::config::{parse_range, SnrGrid};
use nlprecode::dab::{dab_precode, GradientMode, StepRule};
use nlprecode::experiments::{
    complexity_report, descriptor_ibo, eval_sweep, ibo_sweep, parse_precoders, validate_rapp,
    EvalContext, GnnModel, GnnSource, IboRow, IboSweep, PrecoderChoice,
};
use nlprecode::gnn::{save_params, train, Checkpoint, GnnParams, SnrFeatureSpec, SnrTraining};
use nlprecode::pa::{
    am_am_rmse, appendix_coeffs, fit_polynomial, psat_from_ibo, FitConfig, IboSpec, Pa,
    PaDescriptor, PaModel, RappPa, SoftLimiterPa, TABLE_IBOS_DB,
};
use nlprecode::precoders::zf;
use nlprecode::{CMat, Error};
use serde::Serialize;
use serde_json::json;

use crate::run::Run;
use crate::*;

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenChannels(a) => gen_channels(cli, a),
        Command::Pa(PaCommand::Fit(a)) => pa_fit(cli, a),
        Command::Pa(PaCommand::DumpTable) => pa_dump_table(cli),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::SweepIbo(a) => sweep_ibo(cli, a),
        Command::Radiation(a) => radiation(cli, a),
        Command::Power(a) => power(cli, a),
        Command::Complexity(a) => complexity(cli, a),
        Command::ValidateRapp(a) => rapp(cli, a),
        Command::Dab(a) => dab(cli, a),
    }
}

fn gen_channels(cli: &Cli, a: &GenChannelsArgs) -> Result<()> {
    let mut run = Run::new(cli, "gen-channels")?;
    let (m, k, seed) = (
        run.config().system.antennas,
        run.config().system.users,
        run.config().seed,
    );
    let dist: Distribution = serde_json::from_value(json!(a.distribution))
        .map_err(|_| Error::Config(format!("unknown distribution `{}`", a.distribution)))?;
    let set = match dist {
        Distribution::Rayleigh => gen_rayleigh(m, k, a.samples, seed)?,
        Distribution::Los => gen_los_set(m, k, a.samples, seed)?,
    };
    run.record_seed("channels", seed);
    let path = run.artifact(&a.file);
    save_channels(&set, &path)?;
    log::info!(
        "{} {m}x{k} channels -> {} ({})",
        set.len(),
        path.display(),
        set.fingerprint()
    );
    run.finish()
}

/// Operating point of the configured amplifier, falling back to `P_T/M`
/// with the table's −3 dB.
fn operating_point(run: &Run) -> IboSpec {
    descriptor_ibo(&run.config().pa).unwrap_or(IboSpec::new(-3.0, run.config().system.p_in()))
}

fn pa_fit(cli: &Cli, a: &PaFitArgs) -> Result<()> {
    let mut run = Run::new(cli, "pa fit")?;
    if a.order < 3 || a.order.is_multiple_of(2) {
        return Err(Error::Config(format!("--order must be odd and >= 3, got {}", a.order)).into());
    }
    let op = operating_point(&run);
    let spec = IboSpec::new(op.ibo_db, a.p_in.unwrap_or(op.p_in));
    let p_sat = psat_from_ibo(spec);
    let target: Box<dyn PaModel> = match a.target.as_str() {
        "rapp" => Box::new(RappPa::with_psat(p_sat)),
        "softlimiter" => Box::new(SoftLimiterPa { p_sat }),
        other => return Err(Error::Config(format!("unknown fit target `{other}`")).into()),
    };
    let n = (a.order - 1) / 2;
    let cfg = FitConfig::calibrated(n);
    let fit = fit_polynomial(target.as_ref(), spec, n, &cfg)?;
    let table_rmse = match appendix_coeffs(spec.ibo_db) {
        Ok(t) if n == 5 => Some(am_am_rmse(&fit.pa, &t.rescaled(spec.p_in), 2.0, 2001)),
        _ => None,
    };
    let descriptor = PaDescriptor::Poly {
        coeffs: Some(fit.pa.coeffs.iter().map(|c| [c.re, c.im]).collect()),
        ibo_db: None,
        order: None,
        p_in: spec.p_in,
    };
    run.write_json(
        "pa_fit.json",
        &json!({
            "target": a.target,
            "ibo_db": spec.ibo_db,
            "p_in": spec.p_in,
            "order": a.order,
            "fit": cfg,
            "condition_number": fit.condition_number,
            "rmse": fit.rmse,
            "am_am_rmse_vs_table": table_rmse,
            "pa": descriptor,
        }),
    )?;
    run.finish()
}

#[derive(Serialize)]
struct TableRow {
    ibo_db: f64,
    order: usize,
    re: f64,
    im: f64,
}

fn pa_dump_table(cli: &Cli) -> Result<()> {
    let mut run = Run::new(cli, "pa dump-table")?;
    let mut rows = Vec::new();
    for ibo in TABLE_IBOS_DB {
        for (n, c) in appendix_coeffs(ibo)?.coeffs.iter().enumerate() {
            rows.push(TableRow {
                ibo_db: ibo,
                order: 2 * n + 1,
                re: c.re,
                im: c.im,
            });
        }
    }
    run.write_csv("pa_table.csv", &rows)?;
    run.finish()
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut run = Run::new(cli, "train")?;
    {
        let c = run.config_mut();
        if let Some(e) = a.epochs {
            c.train.epochs = e;
        }
        if let Some(s) = a.snr_db {
            c.train.snr = SnrTraining::Fixed { snr_db: s };
        }
        if let Some(r) = &a.snr_range {
            let grid = parse_range(r)?;
            let feature = c.train.snr.feature().unwrap_or_default();
            c.train.snr = SnrTraining::Range {
                min_db: grid[0],
                max_db: *grid.last().unwrap(),
                step_db: if grid.len() > 1 {
                    grid[1] - grid[0]
                } else {
                    1.0
                },
                feature,
            };
        }
        if let Some(h) = a.hidden {
            c.gnn.hidden = h;
        }
        if let Some(l) = a.layers {
            c.gnn.layers = l;
        }
        if let Some(n) = a.train_size {
            c.train.train_size = n;
        }
        if let Some(n) = a.val_size {
            c.train.val_size = n;
        }
        c.gnn.input_dim = c.train.snr.input_dim();
        if c.train.total_power.is_none() {
            c.train.total_power = c.system.total_power;
        }
        if c.train.seed == 0 {
            c.train.seed = c.seed;
        }
    }
    let pa = run.config().pa.build()?;
    let poly = pa
        .as_polynomial()
        .cloned()
        .ok_or_else(|| Error::Config("training needs a polynomial amplifier".into()))?;
    let train_set = run.dataset("train")?;
    let val = run.channels("val", None)?;
    let fingerprint = train_set.fingerprint();
    let tr: Vec<CMat> = train_set
        .samples
        .into_iter()
        .map(|c| c.into_inner())
        .collect();
    let cfg = run.config().train.clone();
    run.record_seed("train", cfg.seed);
    let outcome = train(&run.config().gnn, &cfg, &tr, &val, &poly)?;
    if let Some((epoch, loss)) = outcome.diverged {
        log::warn!("training diverged at epoch {epoch} (loss {loss}); keeping the best parameters");
    }
    run.write_csv("history.csv", &outcome.history)?;
    let ckpt = Checkpoint::new(&outcome.params, Some(&cfg), Some(fingerprint));
    let path = run.artifact("checkpoint.json");
    save_params(&path, &ckpt)?;
    log::info!(
        "best epoch {:?}, checkpoint {}",
        outcome.best_epoch,
        path.display()
    );
    run.finish()
}

fn snr_points(flag: Option<&str>, cfg: &SnrGrid) -> Result<Vec<f64>> {
    match flag {
        Some(s) if s.contains("..") => Ok(parse_range(s)?),
        Some(s) => s
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad SNR value `{x}`")).into())
            })
            .collect(),
        None => Ok(cfg.points()?),
    }
}

fn needs_gnn(choices: &[PrecoderChoice]) -> bool {
    choices.contains(&PrecoderChoice::Gnn)
}

fn context<'a>(
    run: &'a Run,
    pa: &'a Pa,
    model: Option<&'a (GnnParams, Option<SnrFeatureSpec>)>,
) -> EvalContext<'a> {
    let c = run.config();
    EvalContext {
        pa,
        p_sat: descriptor_ibo(&c.pa).map(psat_from_ibo),
        total_power: c.system.total_power(),
        gnn: model.map(|(params, feature)| GnnModel {
            params,
            feature: *feature,
        }),
        dab: &c.dab,
        mc_samples: c.eval.mc_samples,
        seed: c.seed,
        z3ro_saturated: c.eval.z3ro_saturated,
    }
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let mut run = Run::new(cli, "eval")?;
    let names = a
        .precoders
        .clone()
        .unwrap_or_else(|| run.config().eval.precoders.clone());
    let choices = parse_precoders(&names)?;
    let snr = snr_points(a.snr_db.as_deref(), &run.config().eval.snr_db)?;
    let limit = a.max_channels.or(run.config().eval.max_channels);
    let hs = run.channels("test", limit)?;
    let model = if needs_gnn(&choices) {
        run.checkpoint(a.checkpoint.as_ref())?
    } else {
        None
    };
    let pa = run.config().pa.build()?;
    run.record_seed("mc", run.config().seed);
    let rows = eval_sweep(&context(&run, &pa, model.as_ref()), &hs, &choices, &snr)?;
    run.write_csv("eval.csv", &rows)?;
    run.finish()
}

struct SweepInputs {
    choices: Vec<PrecoderChoice>,
    hs: Vec<CMat>,
    model: Option<(GnnParams, Option<SnrFeatureSpec>)>,
    train: Vec<CMat>,
    val: Vec<CMat>,
}

fn sweep_inputs(
    run: &mut Run,
    names: Vec<String>,
    retrain: bool,
    checkpoint: Option<&std::path::PathBuf>,
    limit: Option<usize>,
) -> Result<SweepInputs> {
    let choices = parse_precoders(&names)?;
    let hs = run.channels("test", limit.or(run.config().eval.max_channels))?;
    let (mut model, mut train, mut val) = (None, Vec::new(), Vec::new());
    if needs_gnn(&choices) {
        if retrain {
            train = run.channels("train", None)?;
            val = run.channels("val", None)?;
            let c = run.config_mut();
            c.gnn.input_dim = c.train.snr.input_dim();
        } else {
            model = run.checkpoint(checkpoint)?;
            if model.is_none() {
                return Err(Error::Config("gnn needs --checkpoint or --retrain".into()).into());
            }
        }
    }
    Ok(SweepInputs {
        choices,
        hs,
        model,
        train,
        val,
    })
}

fn run_sweep(
    run: &Run,
    inputs: &SweepInputs,
    ibos: &[f64],
    snr_db: f64,
    expectation: Expectation,
    retrain: bool,
) -> Result<Vec<IboRow>> {
    let c = run.config();
    let sweep = IboSweep {
        base: &c.pa,
        ibo_db: ibos,
        snr_db,
        total_power: c.system.total_power(),
        dab: &c.dab,
        mc_samples: c.eval.mc_samples,
        seed: c.seed,
        expectation,
    };
    let source = match (&inputs.model, retrain && needs_gnn(&inputs.choices)) {
        (_, true) => GnnSource::Retrain {
            arch: &c.gnn,
            cfg: &c.train,
            train: &inputs.train,
            val: &inputs.val,
        },
        (Some((params, feature)), false) => GnnSource::Fixed(GnnModel {
            params,
            feature: *feature,
        }),
        (None, false) => GnnSource::None,
    };
    Ok(ibo_sweep(&sweep, &inputs.hs, &inputs.choices, &source)?)
}

fn sweep_ibo(cli: &Cli, a: &SweepIboArgs) -> Result<()> {
    let mut run = Run::new(cli, "sweep-ibo")?;
    let s = run.config().sweep_ibo.clone();
    let retrain = a.retrain || s.retrain;
    let inputs = sweep_inputs(
        &mut run,
        a.precoders.clone().unwrap_or(s.precoders),
        retrain,
        a.checkpoint.as_ref(),
        a.max_channels,
    )?;
    let ibos = a.ibos.clone().unwrap_or(s.ibo_db);
    let rows = run_sweep(
        &run,
        &inputs,
        &ibos,
        a.snr_db.unwrap_or(s.snr_db),
        Expectation::Analytic,
        retrain,
    )?;
    run.write_csv("sweep_ibo.csv", &rows)?;
    run.finish()
}

#[derive(Serialize)]
struct PowerRow<'a> {
    ibo_db: f64,
    precoder: &'a str,
    p_cons: f64,
}

#[derive(Serialize)]
struct RatePowerRow<'a> {
    precoder: &'a str,
    sum_rate: f64,
    p_cons: f64,
    ibo_db: f64,
}

fn power(cli: &Cli, a: &PowerArgs) -> Result<()> {
    let mut run = Run::new(cli, "power")?;
    let p = run.config().power.clone();
    let retrain = a.retrain || p.retrain;
    let inputs = sweep_inputs(
        &mut run,
        a.precoders.clone().unwrap_or(p.precoders),
        retrain,
        a.checkpoint.as_ref(),
        a.max_channels,
    )?;
    let ibos = a.ibos.clone().unwrap_or(p.ibo_db);
    let rows = run_sweep(
        &run,
        &inputs,
        &ibos,
        a.snr_db.unwrap_or(p.snr_db),
        p.expectation,
        retrain,
    )?;
    let by_ibo: Vec<PowerRow> = rows
        .iter()
        .map(|r| PowerRow {
            ibo_db: r.ibo_db,
            precoder: &r.precoder,
            p_cons: r.p_cons,
        })
        .collect();
    let mut by_rate: Vec<RatePowerRow> = rows
        .iter()
        .map(|r| RatePowerRow {
            precoder: &r.precoder,
            sum_rate: r.sum_rate,
            p_cons: r.p_cons,
            ibo_db: r.ibo_db,
        })
        .collect();
    by_rate.sort_by(|x, y| {
        x.precoder
            .cmp(y.precoder)
            .then(x.sum_rate.total_cmp(&y.sum_rate))
    });
    run.write_csv("power_vs_ibo.csv", &by_ibo)?;
    run.write_csv("rate_vs_power.csv", &by_rate)?;
    run.finish()
}

fn radiation(cli: &Cli, a: &RadiationArgs) -> Result<()> {
    let mut run = Run::new(cli, "radiation")?;
    let r = run.config().radiation.clone();
    let angles = a.angles.clone().unwrap_or(r.user_angles_deg);
    let names = a.precoders.clone().unwrap_or(r.precoders);
    let choices = parse_precoders(&names)?;
    let expectation = match a.mc {
        Some(samples) => Expectation::MonteCarlo {
            samples,
            seed: run.config().seed,
        },
        None => r.expectation,
    };
    let step = a.step_deg.unwrap_or(r.step_deg);
    if !(step > 0.0) {
        return Err(Error::Config("step_deg must be positive".into()).into());
    }
    let m = run.config().system.antennas;
    if angles.is_empty() || angles.len() > m {
        return Err(
            Error::Config(format!("need 1..={m} user angles, got {}", angles.len())).into(),
        );
    }
    let spacing = run.config().system.spacing;
    let geom = LosGeometry {
        spacing_over_wavelength: spacing,
        ..LosGeometry::with_angles(&angles)
    };
    let h = gen_los(m, &geom)?.into_inner();
    let thetas: Vec<f64> = (0..)
        .map(|i| i as f64 * step)
        .take_while(|t| *t <= 180.0 + 1e-9)
        .collect();
    {
        let c = run.config_mut();
        c.system.users = angles.len();
        c.radiation.user_angles_deg = angles.clone();
    }
    let model = if needs_gnn(&choices) {
        run.checkpoint(a.checkpoint.as_ref())?
    } else {
        None
    };
    let pa = run.config().pa.build()?;
    let mut peaks = Vec::new();
    for &choice in &choices {
        let (ws, eval_pa) = context(&run, &pa, model.as_ref()).precode_all(
            choice,
            std::slice::from_ref(&h),
            r.snr_db,
        )?;
        let pattern = radiation_pattern(&ws[0], &eval_pa, &thetas, spacing, expectation, r.term);
        let path = run.artifact(&format!("radiation_{}.csv", choice.name()));
        pattern.write_csv(std::fs::File::create(&path)?)?;
        peaks.push(json!({
            "precoder": choice.name(),
            "peak_linear_deg": pattern.argmax_lin(),
            "peak_distortion_deg": pattern.argmax_dist(),
        }));
    }
    run.write_json(
        "radiation_peaks.json",
        &json!({ "user_angles_deg": angles, "precoders": peaks }),
    )?;
    run.finish()
}

fn complexity(cli: &Cli, a: &ComplexityArgs) -> Result<()> {
    let mut run = Run::new(cli, "complexity")?;
    let c = run.config();
    let mut spec = ComplexitySpec::new(
        c.system.antennas as u64,
        c.system.users as u64,
        a.hidden.unwrap_or(c.gnn.hidden as u64),
        a.layers.unwrap_or(c.gnn.layers as u64),
    );
    spec.input_dim = c.gnn.input_dim as u64;
    spec.restarts = a.restarts.unwrap_or(c.complexity.restarts);
    spec.iterations = a.iters.unwrap_or(c.complexity.iterations);
    let k = &c.complexity;
    let report = complexity_report(spec, k.carrier_hz, k.velocity_mps, k.duty)?;
    // A closed pipe (e.g. `| head`) is not an error.
    let _ = writeln!(
        std::io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(&report)?
    );
    run.write_json("complexity.json", &report)?;
    run.finish()
}

fn rapp(cli: &Cli, a: &ValidateRappArgs) -> Result<()> {
    let mut run = Run::new(cli, "validate-rapp")?;
    let spec = descriptor_ibo(&run.config().pa)
        .ok_or_else(|| Error::Config("validate-rapp needs an amplifier with `ibo_db`".into()))?;
    let pa = run.config().pa.build()?;
    let poly = pa.as_polynomial().cloned().ok_or_else(|| {
        Error::Config("validate-rapp needs the polynomial the network was trained on".into())
    })?;
    let (params, feature) = run
        .checkpoint(a.checkpoint.as_ref())?
        .ok_or_else(|| Error::Config("validate-rapp needs --checkpoint".into()))?;
    let hs = run.channels("test", a.max_channels.or(run.config().eval.max_channels))?;
    let c = run.config();
    let report = validate_rapp(
        GnnModel {
            params: &params,
            feature,
        },
        &poly,
        spec,
        &hs,
        a.snr_db,
        c.system.total_power(),
        c.eval.mc_samples,
        c.seed,
    )?;
    run.write_json("rapp_validation.json", &report)?;
    run.finish()
}

fn parse_step(s: &str) -> Result<StepRule> {
    let (rule, value) = match s.split_once(':') {
        Some((r, v)) => (
            r,
            Some(
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad step `{s}`")))?,
            ),
        ),
        None => (s, None),
    };
    Ok(match (rule, value) {
        ("backtracking", v) => StepRule::Backtracking {
            initial: v.unwrap_or(0.1),
            max_halvings: 30,
        },
        ("decay", v) => StepRule::Decaying {
            mu0: v.unwrap_or(1e-2),
        },
        ("fixed", Some(mu)) => StepRule::Fixed { mu },
        _ => {
            return Err(Error::Config(format!(
                "bad step `{s}`; use backtracking[:x], decay[:mu0] or fixed:mu"
            ))
            .into())
        }
    })
}

fn dab(cli: &Cli, a: &DabArgs) -> Result<()> {
    let mut run = Run::new(cli, "dab")?;
    {
        let d = &mut run.config_mut().dab;
        if let Some(r) = a.restarts {
            d.restarts = r;
        }
        if let Some(i) = a.iters {
            d.iterations = i;
        }
        if let Some(s) = &a.step {
            d.step = parse_step(s)?;
        }
        if a.fd {
            d.gradient = GradientMode::Fd;
        }
    }
    let hs = run.channels("test", Some(a.channel + 1))?;
    let h = hs
        .get(a.channel)
        .ok_or_else(|| Error::Config(format!("test set has no channel {}", a.channel)))?;
    let pa = run.config().pa.build()?;
    let poly = pa
        .as_polynomial()
        .ok_or_else(|| Error::Config("dab needs a polynomial amplifier".into()))?;
    let c = run.config();
    let p_t = c.system.total_power();
    let noise = NoiseSpec::from_snr_db(p_t, a.snr_db);
    let result = dab_precode(h, poly, noise, p_t, &c.dab)?;
    let zf_rate = nlprecode::bussgang::snidr_analytic(h, &zf(h, p_t)?.w, poly, noise).sum_rate;
    let dab_seed = c.dab.seed;
    run.record_seed("dab", dab_seed);
    let path = run.artifact("dab_trace.csv");
    result.write_trace_csv(std::fs::File::create(&path)?)?;
    run.write_json(
        "dab.json",
        &json!({
            "channel": a.channel,
            "snr_db": a.snr_db,
            "sum_rate": result.rate,
            "zf_sum_rate": zf_rate,
            "best_restart": result.best_restart,
        }),
    )?;
    run.finish()
}
