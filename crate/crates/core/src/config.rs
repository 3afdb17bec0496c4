//! Experiment configuration: one JSON document with a section per
//! subcommand.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "system": {"antennas": 16, "users": 2},
//!   "pa": {"kind": "poly", "ibo_db": -3.0},
//!   "datasets": {
//!     "train": {"source": "generate", "samples": 20000, "seed": 1},
//!     "test": {"source": "file", "path": "test.mmc"}
//!   },
//!   "gnn": {"layers": 5, "hidden": 32},
//!   "train": {"epochs": 30, "snr": {"mode": "fixed", "snr_db": 30}},
//!   "eval": {"precoders": ["zf", "mrt", "gnn"], "snr_db": "-10..30:5"}
//! }
//! ```
//!
//! Unknown fields are rejected. Every error names the file and line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{DistortionTerm, Expectation};
use crate::channel::{gen_los_set, gen_rayleigh, load_channels, ChannelSet, Distribution};
use crate::dab::DabConfig;
use crate::gnn::{GnnArch, TrainConfig};
use crate::pa::{PaDescriptor, TABLE_IBOS_DB};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub antennas: usize,
    pub users: usize,
    /// `P_T`; defaults to `M`.
    #[serde(default)]
    pub total_power: Option<f64>,
    /// ULA spacing `d/λ`.
    #[serde(default = "half")]
    pub spacing: f64,
}

fn half() -> f64 {
    0.5
}

impl SystemConfig {
    pub fn total_power(&self) -> f64 {
        self.total_power.unwrap_or(self.antennas as f64)
    }

    /// Average per-antenna input power `P_T / M`.
    pub fn p_in(&self) -> f64 {
        self.total_power() / self.antennas as f64
    }
}

/// Where a channel set comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    File {
        path: PathBuf,
    },
    Generate {
        #[serde(default = "rayleigh")]
        distribution: Distribution,
        samples: usize,
        seed: u64,
    },
}

fn rayleigh() -> Distribution {
    Distribution::Rayleigh
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetsConfig {
    pub train: Option<DatasetSource>,
    pub val: Option<DatasetSource>,
    pub test: Option<DatasetSource>,
}

/// A list of SNR points in dB or a range string `"min..max:step"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SnrGrid {
    List(Vec<f64>),
    Range(String),
}

impl Default for SnrGrid {
    fn default() -> Self {
        SnrGrid::Range("-10..30:5".into())
    }
}

impl SnrGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        match self {
            SnrGrid::List(v) if !v.is_empty() => Ok(v.clone()),
            SnrGrid::List(_) => Err(Error::Config("empty SNR list".into())),
            SnrGrid::Range(s) => parse_range(s),
        }
    }
}

/// Parses `"min..max:step"` (inclusive of `max` when it lies on the grid).
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad range `{s}`, expected `min..max:step`"));
    let (span, step) = s.split_once(':').ok_or_else(bad)?;
    let (lo, hi) = span.split_once("..").ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let step: f64 = step.trim().parse().map_err(|_| bad())?;
    if !(step > 0.0) || hi < lo {
        return Err(bad());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Any of `zf`, `mrt`, `z3ro`, `zf_dpd`, `gnn`, `dab`.
    pub precoders: Vec<String>,
    pub snr_db: SnrGrid,
    /// Required when `gnn` is evaluated without retraining.
    pub checkpoint: Option<PathBuf>,
    /// Monte-Carlo samples per channel for non-polynomial amplifiers.
    pub mc_samples: usize,
    /// Evaluate at most this many test channels (DAB is expensive).
    pub max_channels: Option<usize>,
    /// Saturated antennas of Z3RO.
    pub z3ro_saturated: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            precoders: vec!["zf".into(), "mrt".into()],
            snr_db: SnrGrid::default(),
            checkpoint: None,
            mc_samples: 20_000,
            max_channels: None,
            z3ro_saturated: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepIboConfig {
    pub ibo_db: Vec<f64>,
    pub snr_db: f64,
    pub precoders: Vec<String>,
    /// Train a fresh network at every IBO instead of reusing the checkpoint.
    pub retrain: bool,
}

impl Default for SweepIboConfig {
    fn default() -> Self {
        SweepIboConfig {
            ibo_db: TABLE_IBOS_DB.to_vec(),
            snr_db: 20.0,
            precoders: vec!["zf".into(), "zf_dpd".into()],
            retrain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiationConfig {
    /// LOS user directions; defines the channel the precoder is computed for.
    pub user_angles_deg: Vec<f64>,
    pub precoders: Vec<String>,
    pub snr_db: f64,
    pub step_deg: f64,
    pub expectation: Expectation,
    pub term: DistortionTerm,
}

impl Default for RadiationConfig {
    fn default() -> Self {
        RadiationConfig {
            user_angles_deg: vec![60.0, 120.0],
            precoders: vec!["zf".into(), "mrt".into()],
            snr_db: 20.0,
            step_deg: 1.0,
            expectation: Expectation::Analytic,
            term: DistortionTerm::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub ibo_db: Vec<f64>,
    pub snr_db: f64,
    pub precoders: Vec<String>,
    pub expectation: Expectation,
    pub retrain: bool,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            ibo_db: TABLE_IBOS_DB.to_vec(),
            snr_db: 20.0,
            precoders: vec!["zf".into(), "zf_dpd".into()],
            expectation: Expectation::Analytic,
            retrain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexityConfig {
    pub restarts: u64,
    pub iterations: u64,
    pub carrier_hz: f64,
    pub velocity_mps: f64,
    pub duty: f64,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        ComplexityConfig {
            restarts: 50,
            iterations: 1000,
            carrier_hz: 5e9,
            velocity_mps: 10.0,
            duty: crate::analysis::DEFAULT_DUTY,
        }
    }
}

fn default_pa() -> PaDescriptor {
    PaDescriptor::Poly {
        coeffs: None,
        ibo_db: Some(-3.0),
        order: None,
        p_in: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemConfig,
    #[serde(default = "default_pa")]
    pub pa: PaDescriptor,
    #[serde(default)]
    pub datasets: DatasetsConfig,
    #[serde(default)]
    pub gnn: GnnArch,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub dab: DabConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep_ibo: SweepIboConfig,
    #[serde(default)]
    pub radiation: RadiationConfig,
    #[serde(default)]
    pub power: PowerConfig,
    #[serde(default)]
    pub complexity: ComplexityConfig,
}

/// A parsed config together with its source text, kept for error locations
/// and hashing.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub origin: String,
    pub text: String,
}

impl LoadedConfig {
    /// `origin:line: message`, pointing at the first occurrence of `"key"`.
    pub fn error_at(&self, key: &str, message: impl std::fmt::Display) -> Error {
        let needle = format!("\"{key}\"");
        match self.text.lines().position(|l| l.contains(&needle)) {
            Some(i) => Error::Config(format!("{}:{}: {message}", self.origin, i + 1)),
            None => Error::Config(format!("{}: {message}", self.origin)),
        }
    }

    /// Hex SHA-256 of the config text.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Loads a dataset section, resolving relative paths against `base`.
    pub fn dataset(&self, name: &str, base: &Path) -> Result<ChannelSet> {
        let ds = &self.config.datasets;
        let source = match name {
            "train" => &ds.train,
            "val" => &ds.val,
            "test" => &ds.test,
            _ => unreachable!("unknown dataset section {name}"),
        };
        let sys = &self.config.system;
        let set = match source {
            None => {
                return Err(self.error_at(
                    "datasets",
                    format!(
                    "missing dataset `datasets.{name}` (give a `file` path or a `generate` spec)"
                ),
                ))
            }
            Some(DatasetSource::File { path }) => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                if !full.exists() {
                    return Err(self.error_at(
                        "path",
                        format!("dataset file {} does not exist", full.display()),
                    ));
                }
                load_channels(&full)?
            }
            Some(DatasetSource::Generate {
                distribution,
                samples,
                seed,
            }) => match distribution {
                Distribution::Rayleigh => gen_rayleigh(sys.antennas, sys.users, *samples, *seed)?,
                Distribution::Los => gen_los_set(sys.antennas, sys.users, *samples, *seed)?,
            },
        };
        if (set.antennas, set.users) != (sys.antennas, sys.users) {
            return Err(self.error_at(
                name,
                format!(
                    "dataset `{name}` is {}x{}, system is {}x{}",
                    set.antennas, set.users, sys.antennas, sys.users
                ),
            ));
        }
        Ok(set)
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str, origin: &str) -> Result<LoadedConfig> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        Error::Config(format!("{origin}:{}:{}: {msg}", e.line(), e.column()))
    })?;
    let loaded = LoadedConfig {
        config,
        origin: origin.to_string(),
        text: text.to_string(),
    };
    validate(&loaded)?;
    Ok(loaded)
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

const PRECODERS: [&str; 6] = ["zf", "mrt", "z3ro", "zf_dpd", "gnn", "dab"];

fn validate(c: &LoadedConfig) -> Result<()> {
    let cfg = &c.config;
    let sys = &cfg.system;
    if sys.users == 0 || sys.users > sys.antennas {
        return Err(c.error_at(
            "users",
            format!("need 1 <= users <= antennas, got {}", sys.users),
        ));
    }
    if sys.total_power.is_some_and(|p| !(p > 0.0)) {
        return Err(c.error_at("total_power", "total_power must be positive"));
    }
    if !(sys.spacing > 0.0) {
        return Err(c.error_at("spacing", "spacing must be positive"));
    }
    cfg.gnn.validate().map_err(|e| c.error_at("gnn", e))?;
    cfg.train.validate().map_err(|e| c.error_at("train", e))?;
    cfg.dab.validate().map_err(|e| c.error_at("dab", e))?;
    for list in [
        &cfg.eval.precoders,
        &cfg.sweep_ibo.precoders,
        &cfg.radiation.precoders,
        &cfg.power.precoders,
    ] {
        if let Some(bad) = list.iter().find(|p| !PRECODERS.contains(&p.as_str())) {
            return Err(c.error_at(
                "precoders",
                format!("unknown precoder `{bad}`, expected one of {PRECODERS:?}"),
            ));
        }
    }
    cfg.eval
        .snr_db
        .points()
        .map_err(|e| c.error_at("snr_db", e))?;
    if cfg
        .radiation
        .user_angles_deg
        .iter()
        .any(|a| !(0.0..=180.0).contains(a))
    {
        return Err(c.error_at("user_angles_deg", "angles must lie in [0, 180]"));
    }
    if !(cfg.radiation.step_deg > 0.0) {
        return Err(c.error_at("step_deg", "step_deg must be positive"));
    }
    if cfg.eval.z3ro_saturated == 0 {
        return Err(c.error_at("z3ro_saturated", "z3ro_saturated must be >= 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "system": {"antennas": 4, "users": 2}
}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL, "min.json").unwrap();
        assert_eq!(c.config.system.total_power(), 4.0);
        assert_eq!(c.config.gnn, GnnArch::default());
        assert_eq!(c.config.train.batch_size, 64);
        assert_eq!(c.config.eval.snr_db.points().unwrap().len(), 9);
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_field_reports_line() {
        let text = "{\n  \"system\": {\"antennas\": 4, \"users\": 2},\n  \"bogus\": 1\n}";
        let err = parse_config(text, "x.json").unwrap_err().to_string();
        assert!(err.contains("x.json:3:"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn nested_unknown_field_reports_line() {
        let text = "{\n  \"system\": {\"antennas\": 4, \"users\": 2},\n  \"train\": {\n    \"epochz\": 3\n  }\n}";
        let err = parse_config(text, "x.json").unwrap_err().to_string();
        assert!(err.contains("x.json:4:"), "{err}");
    }

    #[test]
    fn semantic_error_points_at_key() {
        let text = "{\n  \"system\": {\"antennas\": 4, \"users\": 2},\n  \"eval\": {\n    \"precoders\": [\"zf\", \"nope\"]\n  }\n}";
        let err = parse_config(text, "x.json").unwrap_err().to_string();
        assert!(err.starts_with("config error: x.json:4:"), "{err}");
    }

    #[test]
    fn missing_dataset_is_config_error() {
        let c = parse_config(MINIMAL, "min.json").unwrap();
        let err = c.dataset("test", Path::new(".")).unwrap_err();
        assert!(
            matches!(err, Error::Config(ref m) if m.contains("datasets.test")),
            "{err}"
        );
        let text = r#"{"system": {"antennas": 4, "users": 2},
 "datasets": {"test": {"source": "file", "path": "/definitely/not/here.mmc"}}}"#;
        let c = parse_config(text, "y.json").unwrap();
        assert!(
            matches!(c.dataset("test", Path::new(".")), Err(Error::Config(m)) if m.contains("y.json:2"))
        );
    }

    #[test]
    fn generated_dataset_matches_system() {
        let text = r#"{"system": {"antennas": 4, "users": 2},
 "datasets": {"train": {"source": "generate", "samples": 3, "seed": 9}}}"#;
        let c = parse_config(text, "g.json").unwrap();
        let set = c.dataset("train", Path::new(".")).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set, gen_rayleigh(4, 2, 3, 9).unwrap());
    }

    #[test]
    fn ranges() {
        assert_eq!(
            parse_range("-10..30:5").unwrap(),
            vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
        );
        assert_eq!(parse_range("0..1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_range("0..1").is_err());
        assert!(parse_range("3..1:1").is_err());
        assert!(parse_range("0..1:0").is_err());
    }

    #[test]
    fn bad_users() {
        let err = parse_config(r#"{"system": {"antennas": 2, "users": 3}}"#, "u.json").unwrap_err();
        assert!(err.to_string().contains("u.json:1"));
    }
}
