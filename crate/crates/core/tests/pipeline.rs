//! Dataset file, training, checkpoint and evaluation chained together.

use nlprecode::channel::{gen_rayleigh, load_channels, save_channels};
use nlprecode::dab::DabConfig;
use nlprecode::experiments::{eval_sweep, EvalContext, GnnModel, PrecoderChoice};
use nlprecode::gnn::{
    gnn_forward, load_params, save_params, train, Checkpoint, GnnArch, SnrTraining, TrainConfig,
};
use nlprecode::pa::{appendix_coeffs, Pa};
use nlprecode::CMat;

fn matrices(set: nlprecode::channel::ChannelSet) -> Vec<CMat> {
    set.samples.into_iter().map(|c| c.into_inner()).collect()
}

#[test]
fn train_save_reload_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.mmc");
    let set = gen_rayleigh(4, 2, 256, 21).unwrap();
    save_channels(&set, &path).unwrap();
    let reloaded = load_channels(&path).unwrap();
    assert_eq!(reloaded, set);
    assert_eq!(reloaded.fingerprint(), set.fingerprint());

    let pa = appendix_coeffs(-3.0).unwrap();
    let arch = GnnArch::new(3, 8, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        snr: SnrTraining::Fixed { snr_db: 20.0 },
        seed: 4,
        ..TrainConfig::default()
    };
    let tr = matrices(reloaded);
    let val = matrices(gen_rayleigh(4, 2, 64, 22).unwrap());
    let out = train(&arch, &cfg, &tr, &val, &pa).unwrap();
    assert_eq!(out.history.len(), 3);
    assert!(out.diverged.is_none());
    // Training minimizes the negative sum rate, so the best validation loss
    // is no worse than the first epoch's.
    let best = out
        .history
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert!(best <= out.history[0].val_loss);

    let ckpt_path = dir.path().join("ckpt.json");
    save_params(
        &ckpt_path,
        &Checkpoint::new(&out.params, Some(&cfg), Some(set.fingerprint())),
    )
    .unwrap();
    let ckpt = load_params(&ckpt_path).unwrap();
    assert_eq!(
        ckpt.dataset_fingerprint.as_deref(),
        Some(set.fingerprint().as_str())
    );
    let params = ckpt.params().unwrap();
    let test = matrices(gen_rayleigh(4, 2, 16, 23).unwrap());
    for h in &test {
        let a = gnn_forward(&out.params, h, None, 4.0).unwrap().w;
        let b = gnn_forward(&params, h, None, 4.0).unwrap().w;
        assert_eq!(a, b, "checkpoint round trip must be bit exact");
    }

    let wrapped = Pa::Poly(pa);
    let dab = DabConfig::default();
    let ctx = EvalContext {
        pa: &wrapped,
        p_sat: None,
        total_power: 4.0,
        gnn: Some(GnnModel {
            params: &params,
            feature: None,
        }),
        dab: &dab,
        mc_samples: 1000,
        seed: 0,
        z3ro_saturated: 1,
    };
    let rows = eval_sweep(
        &ctx,
        &test,
        &[PrecoderChoice::Gnn, PrecoderChoice::Zf],
        &[0.0, 20.0],
    )
    .unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .all(|r| r.sum_rate.is_finite() && r.sum_rate > 0.0 && r.channels == 16));
    assert!(rows[1].sum_rate > rows[0].sum_rate, "rate grows with SNR");
}
