//! Edge message-passing GNN precoder.
//!
//! Every antenna–user pair `(m, k)` carries a feature vector. A layer
//! updates it from the edge itself and from the mean over the edges incident
//! to antenna `m` and to user `k`:
//!
//! ```text
//! z'(m,k) = σ(z(m,k) W_edge + mean_k' z(m,k') W_m + mean_m' z(m',k) W_k)
//! ```
//!
//! Weights are shared across edges, so the parameter count does not depend
//! on `M` or `K` and the map is permutation equivariant in both. The last
//! layer is linear and produces `(Re w, Im w)`; a scalar normalization then
//! sets `Tr(W Wᴴ) = P_T`.
//!
//! Weight matrices are stored as `[d_in, d_out]` so that a layer is the
//! row-vector product `z · W`.

mod checkpoint;
mod reference;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_params, save_params, Checkpoint, CHECKPOINT_VERSION};
pub use reference::{reference_forward, OpCounts};
pub use train::{evaluate_rate, loss, train, EpochRecord, SnrTraining, TrainConfig, TrainOutcome};

use crate::bussgang::PrecodingMatrix;
use crate::grad::{CVar, Tape, Tensor, Var};
use crate::objective::{normalize_power, pack, unpack};
use crate::precoders::normalize_power as normalize_matrix;
use crate::rng::stream;
use crate::{CMat, Error, Result};

/// Network shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnArch {
    /// Number of weight layers, `L ≥ 2`.
    pub layers: usize,
    /// Width of every hidden representation.
    pub hidden: usize,
    /// 2 for `(Re h, Im h)`, 3 with the SNR feature.
    pub input_dim: usize,
    pub leaky_slope: f64,
    /// Whether the neighbourhood means include the edge being updated.
    pub include_self: bool,
}

impl Default for GnnArch {
    fn default() -> Self {
        GnnArch {
            layers: 8,
            hidden: 128,
            input_dim: 2,
            leaky_slope: 0.01,
            include_self: true,
        }
    }
}

impl GnnArch {
    pub fn new(layers: usize, hidden: usize, input_dim: usize) -> Result<Self> {
        let arch = GnnArch {
            layers,
            hidden,
            input_dim,
            ..GnnArch::default()
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.hidden == 0 || !(self.input_dim == 2 || self.input_dim == 3) {
            return Err(Error::InvalidDimensions(format!(
                "gnn needs layers >= 2, hidden >= 1 and input_dim in {{2, 3}}, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Feature widths `d_0, …, d_L`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(std::iter::repeat_n(self.hidden, self.layers - 1));
        w.push(2);
        w
    }

    /// `Σ_l 3 d_l d_{l+1}`.
    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| 3 * p[0] * p[1]).sum()
    }
}

/// Weights of one layer, each `[d_in, d_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub edge: Tensor,
    pub antenna: Tensor,
    pub user: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub arch: GnnArch,
    pub layers: Vec<LayerParams>,
}

impl GnnParams {
    /// Uniform initialization in `±sqrt(6 / (d_in + d_out))`.
    pub fn init(arch: &GnnArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream(seed, 0);
        let mut mat = |din: usize, dout: usize| {
            let a = (6.0 / (din + dout) as f64).sqrt();
            let data = (0..din * dout).map(|_| rng.random_range(-a..a)).collect();
            Tensor::new(vec![din, dout], data).unwrap()
        };
        let layers = arch
            .widths()
            .windows(2)
            .map(|p| LayerParams {
                edge: mat(p[0], p[1]),
                antenna: mat(p[0], p[1]),
                user: mat(p[0], p[1]),
            })
            .collect();
        Ok(GnnParams {
            arch: arch.clone(),
            layers,
        })
    }

    /// All-zero weights of the given shape.
    pub fn zeros(arch: &GnnArch) -> Result<Self> {
        let mut p = GnnParams::init(arch, 0)?;
        for l in &mut p.layers {
            for t in [&mut l.edge, &mut l.antenna, &mut l.user] {
                t.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.edge.numel() + l.antenna.numel() + l.user.numel())
            .sum()
    }

    /// Flat views in a fixed order (layer, then edge/antenna/user).
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.edge, &l.antenna, &l.user])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.edge, &mut l.antenna, &mut l.user])
            .collect()
    }

    /// Puts every weight on `tape` as a trainable leaf.
    pub fn on_tape<'t>(&self, tape: &'t Tape) -> Vec<[Var<'t>; 3]> {
        self.layers
            .iter()
            .map(|l| {
                [
                    tape.var(l.edge.clone()),
                    tape.var(l.antenna.clone()),
                    tape.var(l.user.clone()),
                ]
            })
            .collect()
    }
}

/// How `P_T/σ²` is mapped to the third input feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrScale {
    /// `clamp(snr_db / snr_max_db, −1, 1)`.
    #[default]
    Db,
    /// `10^(snr_db/10) / 10^(snr_max_db/10)`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrFeatureSpec {
    pub snr_max_db: f64,
    pub scale: SnrScale,
}

impl Default for SnrFeatureSpec {
    fn default() -> Self {
        SnrFeatureSpec {
            snr_max_db: 30.0,
            scale: SnrScale::Db,
        }
    }
}

impl SnrFeatureSpec {
    pub fn normalize(&self, snr_db: f64) -> f64 {
        match self.scale {
            SnrScale::Db => (snr_db / self.snr_max_db).clamp(-1.0, 1.0),
            SnrScale::Linear => 10f64.powf((snr_db - self.snr_max_db) / 10.0),
        }
    }
}

/// Builds the `[B, M, K, d_0]` input features.
pub fn input_features(hs: &[&CMat], snr_feature: Option<&[f64]>) -> Tensor {
    let (m, k) = hs[0].shape();
    let d0 = if snr_feature.is_some() { 3 } else { 2 };
    let mut data = Vec::with_capacity(hs.len() * m * k * d0);
    for (b, h) in hs.iter().enumerate() {
        for i in 0..m {
            for j in 0..k {
                data.push(h[(i, j)].re);
                data.push(h[(i, j)].im);
                if let Some(s) = snr_feature {
                    data.push(s[b]);
                }
            }
        }
    }
    Tensor::new(vec![hs.len(), m, k, d0], data).unwrap()
}

/// Records the un-normalized network output `[B, M, K]` on the tape.
pub fn forward_raw<'t>(arch: &GnnArch, weights: &[[Var<'t>; 3]], x: Var<'t>) -> CVar<'t> {
    let shape = x.shape();
    let (m, k) = (shape[1], shape[2]);
    let mut z = x;
    for (l, [we, wm, wk]) in weights.iter().enumerate() {
        let (node_m, node_k) = if arch.include_self {
            (z.mean_axis(2), z.mean_axis(1))
        } else {
            (
                (z.sum_axis(2) - z).scale(1.0 / (k.max(2) - 1) as f64),
                (z.sum_axis(1) - z).scale(1.0 / (m.max(2) - 1) as f64),
            )
        };
        let pre = z.linear(*we) + node_m.linear(*wm) + node_k.linear(*wk);
        z = if l + 1 < weights.len() {
            pre.leaky_relu(arch.leaky_slope)
        } else {
            pre
        };
    }
    CVar::new(z.select_last(0), z.select_last(1))
}

/// Normalized precoders for a batch of channels, recorded on `tape` with the
/// weights as trainable leaves.
pub fn forward_tape<'t>(
    tape: &'t Tape,
    weights: &[[Var<'t>; 3]],
    arch: &GnnArch,
    hs: &[&CMat],
    snr_feature: Option<&[f64]>,
    total_power: f64,
) -> CVar<'t> {
    let x = tape.constant(input_features(hs, snr_feature));
    normalize_power(forward_raw(arch, weights, x), total_power)
}

fn check_inputs(params: &GnnParams, snr_feature: Option<f64>) -> Result<()> {
    match (params.arch.input_dim, snr_feature) {
        (2, None) | (3, Some(_)) => Ok(()),
        (d, s) => Err(Error::ShapeMismatch(format!(
            "network with input_dim {d} called with snr feature {s:?}"
        ))),
    }
}

/// Precoders for a batch of channels (inference only). `snr_feature` is the
/// already normalized SNR input and must be given iff `input_dim == 3`.
pub fn forward_batch(
    params: &GnnParams,
    hs: &[&CMat],
    snr_feature: Option<f64>,
    total_power: f64,
) -> Result<Vec<PrecodingMatrix>> {
    check_inputs(params, snr_feature)?;
    if hs.is_empty() {
        return Ok(Vec::new());
    }
    let shape = hs[0].shape();
    if hs.iter().any(|h| h.shape() != shape) {
        return Err(Error::ShapeMismatch(
            "all channels in a batch must share M and K".into(),
        ));
    }
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
    let feats: Option<Vec<f64>> = snr_feature.map(|s| vec![s; hs.len()]);
    let x = tape.constant(input_features(hs, feats.as_deref()));
    let raw = forward_raw(&params.arch, &weights, x);
    unpack(
        &raw.re.value().reshaped(&[hs.len(), shape.0, shape.1]),
        &raw.im.value(),
    )
    .into_iter()
    .map(|w| normalize_matrix(w, total_power))
    .collect()
}

/// Precoder for one channel.
pub fn gnn_forward(
    params: &GnnParams,
    h: &CMat,
    snr_feature: Option<f64>,
    total_power: f64,
) -> Result<PrecodingMatrix> {
    Ok(forward_batch(params, &[h], snr_feature, total_power)?.remove(0))
}

/// `[B, M, K]` channel tensors as constants.
pub(crate) fn channel_vars<'t>(tape: &'t Tape, hs: &[&CMat]) -> CVar<'t> {
    let (re, im) = pack(hs);
    CVar::new(tape.constant(re), tape.constant(im))
}
