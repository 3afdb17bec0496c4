//! Literal per-edge evaluation of the network with operation counting.
//!
//! Each edge computes its own neighbourhood sums and three matrix–vector
//! products, exactly as a fully parallel implementation would. The `1/K`
//! and `1/M` of the means are folded into `W_m` and `W_k` ahead of time and
//! activations are not counted, so the tallies are the multiplies and adds
//! of the per-edge linear algebra.

use super::GnnParams;
use crate::{CMat, Result, C64};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mults: u64,
    pub adds: u64,
}

fn matvec_into(x: &[f64], w: &[f64], dout: usize, out: &mut [f64], ops: &mut OpCounts) {
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = x[0] * w[j];
        for (i, xi) in x.iter().enumerate().skip(1) {
            acc += xi * w[i * dout + j];
        }
        *o = acc;
    }
    ops.mults += (x.len() * dout) as u64;
    ops.adds += ((x.len() - 1) * dout) as u64;
}

/// Un-normalized output `W` and the operation tally for one channel.
pub fn reference_forward(
    params: &GnnParams,
    h: &CMat,
    snr_feature: Option<f64>,
) -> Result<(CMat, OpCounts)> {
    super::check_inputs(params, snr_feature)?;
    let arch = &params.arch;
    let (m, k) = h.shape();
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(m * k);
    for i in 0..m {
        for j in 0..k {
            let mut f = vec![h[(i, j)].re, h[(i, j)].im];
            if let Some(s) = snr_feature {
                f.push(s);
            }
            z.push(f);
        }
    }

    let mut ops = OpCounts::default();
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let (din, dout) = (layer.edge.shape[0], layer.edge.shape[1]);
        let (cm, ck) = if arch.include_self {
            (1.0 / k as f64, 1.0 / m as f64)
        } else {
            (1.0 / (k.max(2) - 1) as f64, 1.0 / (m.max(2) - 1) as f64)
        };
        let wm: Vec<f64> = layer.antenna.data.iter().map(|w| w * cm).collect();
        let wk: Vec<f64> = layer.user.data.iter().map(|w| w * ck).collect();

        let mut next = vec![vec![0.0; dout]; m * k];
        let mut sum_m = vec![0.0; din];
        let mut sum_k = vec![0.0; din];
        let (mut a, mut b, mut c) = (vec![0.0; dout], vec![0.0; dout], vec![0.0; dout]);
        for i in 0..m {
            for j in 0..k {
                let others_k: Vec<usize> =
                    (0..k).filter(|&q| arch.include_self || q != j).collect();
                let others_m: Vec<usize> =
                    (0..m).filter(|&q| arch.include_self || q != i).collect();
                sum_m.iter_mut().for_each(|s| *s = 0.0);
                sum_k.iter_mut().for_each(|s| *s = 0.0);
                for &q in &others_k {
                    for f in 0..din {
                        sum_m[f] += z[i * k + q][f];
                    }
                }
                for &q in &others_m {
                    for f in 0..din {
                        sum_k[f] += z[q * k + j][f];
                    }
                }
                ops.adds += (din
                    * (others_k.len().saturating_sub(1) + others_m.len().saturating_sub(1)))
                    as u64;

                matvec_into(&z[i * k + j], &layer.edge.data, dout, &mut a, &mut ops);
                matvec_into(&sum_m, &wm, dout, &mut b, &mut ops);
                matvec_into(&sum_k, &wk, dout, &mut c, &mut ops);
                let out = &mut next[i * k + j];
                for f in 0..dout {
                    let v = a[f] + b[f] + c[f];
                    out[f] = if l < last && v <= 0.0 {
                        v * arch.leaky_slope
                    } else {
                        v
                    };
                }
                ops.adds += 2 * dout as u64;
            }
        }
        z = next;
    }
    let w = CMat::from_fn(m, k, |i, j| C64::new(z[i * k + j][0], z[i * k + j][1]));
    Ok((w, ops))
}
