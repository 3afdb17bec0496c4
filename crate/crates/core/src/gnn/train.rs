//! Self-supervised training on the negative analytic sum rate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{channel_vars, forward_tape, GnnArch, GnnParams, SnrFeatureSpec};
use crate::grad::{Tape, Tensor, Var};
use crate::objective::sum_rate;
use crate::pa::PolynomialPa;
use crate::rng::stream;
use crate::{CMat, Error, Result};

/// Noise level seen during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum SnrTraining {
    /// One `P_T/σ²` for every sample; the network has no SNR input.
    Fixed { snr_db: f64 },
    /// Per-sample `P_T/σ²` drawn from the grid `min..=max` in `step`
    /// increments and fed to the network as a third input feature.
    Range {
        min_db: f64,
        max_db: f64,
        step_db: f64,
        #[serde(default)]
        feature: SnrFeatureSpec,
    },
}

impl Default for SnrTraining {
    fn default() -> Self {
        SnrTraining::Fixed { snr_db: 20.0 }
    }
}

impl SnrTraining {
    pub fn grid(&self) -> Vec<f64> {
        match *self {
            SnrTraining::Fixed { snr_db } => vec![snr_db],
            SnrTraining::Range {
                min_db,
                max_db,
                step_db,
                ..
            } => {
                let n = ((max_db - min_db) / step_db + 1e-9).floor() as usize;
                (0..=n).map(|i| min_db + i as f64 * step_db).collect()
            }
        }
    }

    pub fn feature(&self) -> Option<SnrFeatureSpec> {
        match self {
            SnrTraining::Fixed { .. } => None,
            SnrTraining::Range { feature, .. } => Some(*feature),
        }
    }

    pub fn input_dim(&self) -> usize {
        if self.feature().is_some() {
            3
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub snr: SnrTraining,
    /// Defaults to `M`, i.e. unit average power per antenna.
    pub total_power: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 5e-3,
            plateau_factor: 0.5,
            plateau_patience: 3,
            epochs: 50,
            early_stop_patience: 8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            train_size: 20_000,
            val_size: 2_000,
            test_size: 10_000,
            snr: SnrTraining::default(),
            total_power: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && self.plateau_factor > 0.0
            && self.plateau_factor <= 1.0
            && self.adam_eps > 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.total_power.is_none_or(|p| p > 0.0);
        let range_ok = match self.snr {
            SnrTraining::Fixed { .. } => true,
            SnrTraining::Range {
                min_db,
                max_db,
                step_db,
                feature,
            } => step_db > 0.0 && max_db >= min_db && feature.snr_max_db > 0.0,
        };
        if !(ok && range_ok) {
            return Err(Error::Config(format!("invalid training config: {self:?}")));
        }
        Ok(())
    }

    fn power_for(&self, antennas: usize) -> f64 {
        self.total_power.unwrap_or(antennas as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub params: GnnParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Set when a batch loss turned non-finite; training stopped there.
    pub diverged: Option<(usize, f64)>,
}

/// `−mean_b R_sum(H_b, GNN(H_b))` on the tape.
#[allow(clippy::too_many_arguments)]
pub fn loss<'t>(
    tape: &'t Tape,
    weights: &[[Var<'t>; 3]],
    arch: &GnnArch,
    hs: &[&CMat],
    pa: &PolynomialPa,
    sigma2: &[f64],
    snr_feature: Option<&[f64]>,
    total_power: f64,
) -> Var<'t> {
    let w = forward_tape(tape, weights, arch, hs, snr_feature, total_power);
    let h = channel_vars(tape, hs);
    let s2 = tape.constant(Tensor::new(vec![hs.len(), 1], sigma2.to_vec()).unwrap());
    -sum_rate(h, w, pa, s2).mean()
}

/// Mean analytic sum rate of the network over `hs` at one `P_T/σ²`.
pub fn evaluate_rate(
    params: &GnnParams,
    hs: &[&CMat],
    pa: &PolynomialPa,
    snr_db: f64,
    feature: Option<SnrFeatureSpec>,
    total_power: f64,
) -> f64 {
    let sigma2 = total_power / 10f64.powf(snr_db / 10.0);
    let mut total = 0.0;
    for chunk in hs.chunks(256) {
        let tape = Tape::new();
        let weights: Vec<[Var<'_>; 3]> = params
            .layers
            .iter()
            .map(|l| {
                [
                    tape.constant(l.edge.clone()),
                    tape.constant(l.antenna.clone()),
                    tape.constant(l.user.clone()),
                ]
            })
            .collect();
        let snr: Option<Vec<f64>> = feature.map(|f| vec![f.normalize(snr_db); chunk.len()]);
        let l = loss(
            &tape,
            &weights,
            &params.arch,
            chunk,
            pa,
            &vec![sigma2; chunk.len()],
            snr.as_deref(),
            total_power,
        );
        total -= l.item() * chunk.len() as f64;
    }
    total / hs.len() as f64
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    fn new(params: &GnnParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(&t.shape))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut GnnParams, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

fn validation_loss(
    params: &GnnParams,
    val: &[&CMat],
    pa: &PolynomialPa,
    cfg: &TrainConfig,
    total_power: f64,
) -> f64 {
    let grid = cfg.snr.grid();
    let feature = cfg.snr.feature();
    -grid
        .iter()
        .map(|&s| evaluate_rate(params, val, pa, s, feature, total_power))
        .sum::<f64>()
        / grid.len() as f64
}

/// Trains a network from a seeded initialization and returns the parameters
/// with the best validation loss.
pub fn train(
    arch: &GnnArch,
    cfg: &TrainConfig,
    train_set: &[CMat],
    val_set: &[CMat],
    pa: &PolynomialPa,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    arch.validate()?;
    if arch.input_dim != cfg.snr.input_dim() {
        return Err(Error::Config(format!(
            "architecture input_dim {} does not match the snr mode (needs {})",
            arch.input_dim,
            cfg.snr.input_dim()
        )));
    }
    let mut params = GnnParams::init(arch, cfg.seed)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            history: Vec::new(),
            best_epoch: None,
            diverged: None,
        });
    }
    if train_set.len() < cfg.batch_size || val_set.is_empty() {
        return Err(Error::Config(format!(
            "need at least {} training and 1 validation sample, got {} and {}",
            cfg.batch_size,
            train_set.len(),
            val_set.len()
        )));
    }
    let antennas = train_set[0].nrows();
    let total_power = cfg.power_for(antennas);
    let val: Vec<&CMat> = val_set.iter().collect();
    let grid = cfg.snr.grid();
    let feature = cfg.snr.feature();

    let mut adam = Adam::new(&params);
    let mut lr = cfg.learning_rate;
    let mut best = (
        validation_loss(&params, &val, pa, cfg, total_power),
        params.clone(),
        None,
    );
    let mut since_best = 0;
    let mut since_reduce = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, 1 + epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks_exact(cfg.batch_size) {
            let hs: Vec<&CMat> = idx.iter().map(|&i| &train_set[i]).collect();
            let snr_db: Vec<f64> = (0..hs.len())
                .map(|_| grid[rng.random_range(0..grid.len())])
                .collect();
            let sigma2: Vec<f64> = snr_db
                .iter()
                .map(|s| total_power / 10f64.powf(s / 10.0))
                .collect();
            let snr_in: Option<Vec<f64>> =
                feature.map(|f| snr_db.iter().map(|&s| f.normalize(s)).collect());

            let tape = Tape::new();
            let weights = params.on_tape(&tape);
            let l = loss(
                &tape,
                &weights,
                arch,
                &hs,
                pa,
                &sigma2,
                snr_in.as_deref(),
                total_power,
            );
            let value = l.item();
            if !value.is_finite() {
                log::warn!("non-finite loss {value} in epoch {epoch}; stopping");
                return Ok(TrainOutcome {
                    params: best.1,
                    history,
                    best_epoch: best.2,
                    diverged: Some((epoch, value)),
                });
            }
            let grads = tape.backward(l)?;
            let flat: Vec<Tensor> = weights
                .iter()
                .flat_map(|ws| {
                    ws.iter().map(|w| {
                        grads
                            .wrt(*w)
                            .cloned()
                            .unwrap_or_else(|| Tensor::zeros(&w.shape()))
                    })
                })
                .collect();
            adam.step(&mut params, &flat, lr, cfg);
            epoch_loss += value;
            batches += 1;
        }

        let val_loss = validation_loss(&params, &val, pa, cfg, total_power);
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_loss,
            learning_rate: lr,
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} lr {:.2e}",
            record.train_loss,
            val_loss,
            lr
        );
        history.push(record);

        if !val_loss.is_finite() {
            return Ok(TrainOutcome {
                params: best.1,
                history,
                best_epoch: best.2,
                diverged: Some((epoch, val_loss)),
            });
        }
        if val_loss < best.0 {
            best = (val_loss, params.clone(), Some(epoch));
            since_best = 0;
            since_reduce = 0;
        } else {
            since_best += 1;
            since_reduce += 1;
            if since_reduce >= cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                since_reduce = 0;
            }
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.1,
        history,
        best_epoch: best.2,
        diverged: None,
    })
}
