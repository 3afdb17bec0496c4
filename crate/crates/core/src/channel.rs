//! Channel realizations: i.i.d. Rayleigh fading and deterministic
//! line-of-sight ULA channels, plus the `MMC1` dataset file format.
//!
//! A dataset file is a fixed 32-byte little-endian header followed by the raw
//! samples:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `"MMC1"`                 |
//! | 4      | 1    | version (= 1)                  |
//! | 5      | 1    | distribution tag (0 rayleigh, 1 los) |
//! | 6      | 2    | reserved (= 0)                 |
//! | 8      | 4    | `M` (u32)                      |
//! | 12     | 4    | `K` (u32)                      |
//! | 16     | 8    | `n` (u64)                      |
//! | 24     | 8    | seed (u64)                     |
//!
//! then `n·M·K` complex entries as `(f32 re, f32 im)`, sample-major, then
//! antenna-major, then user. Generated Rayleigh entries are rounded to `f32`
//! at creation time so save/load round trips are bit-exact.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{complex_normal, stream};
use crate::{CMat, Error, Result, C64};

const MAGIC: &[u8; 4] = b"MMC1";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 32;

/// Complex `M × K` channel matrix `H`; column `k` holds the gains from every
/// antenna to user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(CMat);

impl ChannelMatrix {
    pub fn new(h: CMat) -> Result<Self> {
        let (m, k) = h.shape();
        if k == 0 || k > m {
            return Err(Error::InvalidDimensions(format!(
                "channel must satisfy M >= K >= 1, got {m}x{k}"
            )));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidDimensions("non-finite channel entry".into()));
        }
        Ok(ChannelMatrix(h))
    }

    pub fn antennas(&self) -> usize {
        self.0.nrows()
    }

    pub fn users(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }
}

impl AsRef<CMat> for ChannelMatrix {
    fn as_ref(&self) -> &CMat {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Rayleigh,
    Los,
}

impl Distribution {
    fn tag(self) -> u8 {
        match self {
            Distribution::Rayleigh => 0,
            Distribution::Los => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Distribution::Rayleigh),
            1 => Ok(Distribution::Los),
            _ => Err(Error::BadMagic),
        }
    }
}

/// A reproducible collection of channel realizations sharing `(M, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub antennas: usize,
    pub users: usize,
    pub seed: u64,
    pub distribution: Distribution,
    pub samples: Vec<ChannelMatrix>,
}

impl ChannelSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// A stable fingerprint of the set contents (hex SHA-256 over the file bytes).
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut bytes = Vec::new();
        write_set(&mut bytes, self).expect("writing to a Vec cannot fail");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Line-of-sight geometry for a half-wavelength-style ULA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosGeometry {
    pub user_angles_deg: Vec<f64>,
    pub pathloss: Vec<f64>,
    #[serde(default = "default_spacing")]
    pub spacing_over_wavelength: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl LosGeometry {
    /// Unit path loss, half-wavelength spacing.
    pub fn with_angles(user_angles_deg: &[f64]) -> Self {
        LosGeometry {
            user_angles_deg: user_angles_deg.to_vec(),
            pathloss: vec![1.0; user_angles_deg.len()],
            spacing_over_wavelength: 0.5,
        }
    }
}

fn check_dims(m: usize, k: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::InvalidDimensions(format!(
            "need M >= K >= 1, got M={m}, K={k}"
        )));
    }
    Ok(())
}

fn rayleigh_sample(m: usize, k: usize, seed: u64, index: u64) -> ChannelMatrix {
    let mut rng = stream(seed, index);
    // Column-major fill would tie the values to nalgebra's layout; keep the
    // file order (antenna-major, then user) instead.
    let mut h = CMat::zeros(m, k);
    for row in 0..m {
        for col in 0..k {
            let z = complex_normal(&mut rng, 1.0);
            h[(row, col)] = C64::new(z.re as f32 as f64, z.im as f32 as f64);
        }
    }
    ChannelMatrix(h)
}

/// `n` i.i.d. Rayleigh channels with `CN(0, 1)` entries. Sample `i` is drawn
/// from stream `i` of `seed`, so generation is independent per sample.
pub fn gen_rayleigh(m: usize, k: usize, n: usize, seed: u64) -> Result<ChannelSet> {
    check_dims(m, k)?;
    if n == 0 {
        return Err(Error::InvalidDimensions("sample count must be >= 1".into()));
    }
    let samples = (0..n as u64)
        .into_par_iter()
        .map(|i| rayleigh_sample(m, k, seed, i))
        .collect();
    Ok(ChannelSet {
        antennas: m,
        users: k,
        seed,
        distribution: Distribution::Rayleigh,
        samples,
    })
}

/// Deterministic LOS channel `h[m,k] = sqrt(β_k)·exp(−j·m·2π·(d/λ)·cos θ_k)`.
pub fn gen_los(m: usize, geom: &LosGeometry) -> Result<ChannelMatrix> {
    let k = geom.user_angles_deg.len();
    check_dims(m, k)?;
    if geom.pathloss.len() != k {
        return Err(Error::InvalidDimensions(format!(
            "{} path-loss values for {k} users",
            geom.pathloss.len()
        )));
    }
    if !(geom.spacing_over_wavelength > 0.0) {
        return Err(Error::InvalidDimensions(
            "antenna spacing must be positive".into(),
        ));
    }
    if let Some(&bad) = geom
        .user_angles_deg
        .iter()
        .find(|a| !(0.0..=180.0).contains(*a))
    {
        return Err(Error::AngleOutOfRange(bad));
    }
    if geom.pathloss.iter().any(|&b| !(b >= 0.0)) {
        return Err(Error::InvalidDimensions("path loss must be >= 0".into()));
    }
    let mut h = CMat::zeros(m, k);
    for (col, (&theta, &beta)) in geom.user_angles_deg.iter().zip(&geom.pathloss).enumerate() {
        let step = 2.0 * PI * geom.spacing_over_wavelength * theta.to_radians().cos();
        for row in 0..m {
            h[(row, col)] = C64::from_polar(beta.sqrt(), -(row as f64) * step);
        }
    }
    Ok(ChannelMatrix(h))
}

/// `n` LOS channels with angles drawn from the discrete uniform set
/// `{0, 1, …, 180}` degrees and unit path loss.
pub fn gen_los_set(m: usize, k: usize, n: usize, seed: u64) -> Result<ChannelSet> {
    check_dims(m, k)?;
    if n == 0 {
        return Err(Error::InvalidDimensions("sample count must be >= 1".into()));
    }
    let samples = (0..n as u64)
        .map(|i| {
            let mut rng = stream(seed, i);
            let angles: Vec<f64> = (0..k)
                .map(|_| rng.random_range(0..=180u32) as f64)
                .collect();
            gen_los(m, &LosGeometry::with_angles(&angles))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelSet {
        antennas: m,
        users: k,
        seed,
        distribution: Distribution::Los,
        samples,
    })
}

fn write_set<W: Write>(w: &mut W, set: &ChannelSet) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, set.distribution.tag(), 0, 0])?;
    w.write_all(&(set.antennas as u32).to_le_bytes())?;
    w.write_all(&(set.users as u32).to_le_bytes())?;
    w.write_all(&(set.samples.len() as u64).to_le_bytes())?;
    w.write_all(&set.seed.to_le_bytes())?;
    for h in &set.samples {
        for row in 0..set.antennas {
            for col in 0..set.users {
                let z = h.0[(row, col)];
                w.write_all(&(z.re as f32).to_le_bytes())?;
                w.write_all(&(z.im as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn save_channels(set: &ChannelSet, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_set(&mut w, set)?;
    w.flush()?;
    Ok(())
}

pub fn load_channels(path: impl AsRef<Path>) -> Result<ChannelSet> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_channels(&bytes)
}

/// Parses an in-memory `MMC1` image.
pub fn parse_channels(bytes: &[u8]) -> Result<ChannelSet> {
    if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC || bytes[4] != VERSION {
        return Err(Error::BadMagic);
    }
    let distribution = Distribution::from_tag(bytes[5])?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let m = u32_at(8);
    let k = u32_at(12);
    let n = u64_at(16);
    let seed = u64_at(24);
    check_dims(m, k).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let expected = (n as u128) * (m as u128) * (k as u128) * 8;
    let payload = (bytes.len() - HEADER_LEN) as u128;
    if payload != expected {
        return Err(Error::DimensionMismatch(format!(
            "header announces {n} samples of {m}x{k} ({expected} bytes), payload has {payload}"
        )));
    }
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    let mut offset = HEADER_LEN;
    let mut samples = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let mut h = CMat::zeros(m, k);
        for row in 0..m {
            for col in 0..k {
                h[(row, col)] = C64::new(f32_at(offset), f32_at(offset + 4));
                offset += 8;
            }
        }
        samples.push(ChannelMatrix::new(h)?);
    }
    Ok(ChannelSet {
        antennas: m,
        users: k,
        seed,
        distribution,
        samples,
    })
}
