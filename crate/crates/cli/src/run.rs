//! Config loading, flag overrides, datasets and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nlprecode::channel::{gen_rayleigh, ChannelSet};
use nlprecode::config::{parse_config, ExperimentConfig, LoadedConfig};
use nlprecode::experiments::descriptor_at_ibo;
use nlprecode::gnn::{load_params, GnnParams, SnrFeatureSpec};
use nlprecode::pa::PaDescriptor;
use nlprecode::{CMat, Error};
use serde::Serialize;
use serde_json::{json, Value};

use crate::Cli;

pub const VERSION: &str = match option_env!("NLPRECODE_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

pub struct Run {
    pub cfg: LoadedConfig,
    /// Directory relative dataset and checkpoint paths resolve against.
    pub base: PathBuf,
    pub out: PathBuf,
    command: String,
    seeds: serde_json::Map<String, Value>,
    outputs: Vec<String>,
}

fn default_config(cli: &Cli) -> String {
    let m = cli.antennas.unwrap_or(16);
    let k = cli.users.unwrap_or(2);
    format!("{{\"system\": {{\"antennas\": {m}, \"users\": {k}}}}}")
}

impl Run {
    pub fn new(cli: &Cli, command: &str) -> Result<Self> {
        let (mut cfg, base) = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (parse_config(&text, &path.display().to_string())?, base)
            }
            None => (
                parse_config(&default_config(cli), "<flags>")?,
                PathBuf::from("."),
            ),
        };
        apply_overrides(&mut cfg.config, cli)?;
        fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
        let mut seeds = serde_json::Map::new();
        seeds.insert("seed".into(), json!(cfg.config.seed));
        Ok(Run {
            cfg,
            base,
            out: cli.out.clone(),
            command: command.to_string(),
            seeds,
            outputs: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg.config
    }

    pub fn config_mut(&mut self) -> &mut ExperimentConfig {
        &mut self.cfg.config
    }

    pub fn record_seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.into(), json!(seed));
    }

    /// Path of an artifact, recorded in the manifest.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.artifact(name);
        fs::write(&path, serde_json::to_vec_pretty(value)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.artifact(name);
        let file =
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        nlprecode::experiments::write_csv(file, rows)?;
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    /// Loads a dataset section. Absent sections are generated as Rayleigh
    /// channels of the configured training sizes with seeds `seed+1..=seed+3`.
    pub fn dataset(&mut self, name: &str) -> Result<ChannelSet> {
        let ds = &self.config().datasets;
        let present = match name {
            "train" => ds.train.is_some(),
            "val" => ds.val.is_some(),
            _ => ds.test.is_some(),
        };
        let set = if present {
            self.cfg.dataset(name, &self.base)?
        } else {
            let c = self.config();
            let (n, offset) = match name {
                "train" => (c.train.train_size, 1),
                "val" => (c.train.val_size, 2),
                _ => (c.train.test_size, 3),
            };
            gen_rayleigh(c.system.antennas, c.system.users, n, c.seed + offset)?
        };
        self.record_seed(&format!("dataset_{name}"), set.seed);
        Ok(set)
    }

    pub fn channels(&mut self, name: &str, limit: Option<usize>) -> Result<Vec<CMat>> {
        let set = self.dataset(name)?;
        let n = limit.unwrap_or(usize::MAX).min(set.len());
        Ok(set
            .samples
            .into_iter()
            .take(n)
            .map(|c| c.into_inner())
            .collect())
    }

    /// Loads a checkpoint and the SNR feature it was trained with.
    pub fn checkpoint(
        &self,
        flag: Option<&PathBuf>,
    ) -> Result<Option<(GnnParams, Option<SnrFeatureSpec>)>> {
        let Some(path) = flag.or(self.config().eval.checkpoint.as_ref()) else {
            return Ok(None);
        };
        let full = self.resolve(path);
        if !full.exists() {
            return Err(
                Error::Config(format!("checkpoint {} does not exist", full.display())).into(),
            );
        }
        let ckpt = load_params(&full)?;
        let feature = ckpt.train_config.as_ref().and_then(|c| c.snr.feature());
        Ok(Some((ckpt.params()?, feature)))
    }

    /// Writes `manifest.json`: command line, version, seeds, outputs and the
    /// effective config with its hash.
    pub fn finish(mut self) -> Result<()> {
        let effective = serde_json::to_string_pretty(&self.cfg.config)?;
        let hash = LoadedConfig {
            config: self.cfg.config.clone(),
            origin: self.cfg.origin.clone(),
            text: effective,
        }
        .hash();
        self.outputs.sort();
        let manifest = json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "version": VERSION,
            "config_origin": self.cfg.origin,
            "config_hash": hash,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "config": self.cfg.config,
        });
        let path = self.out.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

fn apply_overrides(c: &mut ExperimentConfig, cli: &Cli) -> Result<()> {
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(m) = cli.antennas {
        c.system.antennas = m;
    }
    if let Some(k) = cli.users {
        c.system.users = k;
    }
    if let Some(text) = &cli.pa {
        c.pa = serde_json::from_str::<PaDescriptor>(text)
            .map_err(|e| Error::Config(format!("--pa: {e}")))?;
    }
    if let Some(ibo) = cli.ibo_db {
        c.pa = descriptor_at_ibo(&c.pa, ibo)?;
    }
    if c.system.users == 0 || c.system.users > c.system.antennas {
        return Err(Error::Config(format!(
            "need antennas >= users >= 1, got {} and {}",
            c.system.antennas, c.system.users
        ))
        .into());
    }
    Ok(())
}
