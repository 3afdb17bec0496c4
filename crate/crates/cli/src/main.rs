//! `nlprecode` command-line harness.
//!
//! Every subcommand reads an optional JSON experiment config, applies flag
//! overrides, writes its CSV/JSON artifacts into `--out` and records a
//! `manifest.json` next to them.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlprecode::Error;

#[derive(Debug, Parser)]
#[command(
    name = "nlprecode",
    version,
    about = "Precoding under non-linear power amplifiers"
)]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `system.antennas`.
    #[arg(long = "M", global = true)]
    pub antennas: Option<usize>,
    /// Overrides `system.users`.
    #[arg(long = "K", global = true)]
    pub users: Option<usize>,
    /// Overrides the amplifier with a JSON descriptor, e.g. `{"kind":"linear"}`.
    #[arg(long, global = true)]
    pub pa: Option<String>,
    /// Overrides the amplifier IBO in dB.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub ibo_db: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a channel dataset file.
    GenChannels(GenChannelsArgs),
    /// Amplifier model utilities.
    #[command(subcommand)]
    Pa(PaCommand),
    /// Train the GNN precoder.
    Train(TrainArgs),
    /// Sum rate of each precoder over a P_T/σ² grid.
    Eval(EvalArgs),
    /// Sum rate and consumed power against the amplifier IBO.
    SweepIbo(SweepIboArgs),
    /// Linear, distortion and SDR radiation patterns on a LOS channel.
    Radiation(RadiationArgs),
    /// Consumed PA power against IBO and against the sum rate.
    Power(PowerArgs),
    /// FLOP counts and DSP sizing.
    Complexity(ComplexityArgs),
    /// Evaluate a polynomial-trained network under the Rapp amplifier.
    ValidateRapp(ValidateRappArgs),
    /// Run distortion-aware beamforming on one test channel.
    Dab(DabArgs),
}

#[derive(Debug, Args)]
pub struct GenChannelsArgs {
    /// `rayleigh` or `los`.
    #[arg(long, default_value = "rayleigh")]
    pub distribution: String,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// File name inside the output directory.
    #[arg(long, default_value = "channels.mmc")]
    pub file: String,
}

#[derive(Debug, Subcommand)]
pub enum PaCommand {
    /// Least-squares polynomial fit to the Rapp or soft-limiter curve.
    Fit(PaFitArgs),
    /// Export the tabulated 11th-order coefficients.
    DumpTable,
}

#[derive(Debug, Args)]
pub struct PaFitArgs {
    /// `rapp` or `softlimiter`.
    #[arg(long, default_value = "rapp")]
    pub target: String,
    /// Polynomial order `2N+1`.
    #[arg(long, default_value_t = 11)]
    pub order: usize,
    /// Average input power per antenna; defaults to `P_T / M`.
    #[arg(long)]
    pub p_in: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train at one fixed P_T/σ² in dB.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "snr_range")]
    pub snr_db: Option<f64>,
    /// Train over `min..max:step` dB with the SNR input feature.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_range: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub val_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Comma-separated list of zf, mrt, z3ro, zf_dpd, gnn, dab.
    #[arg(long, value_delimiter = ',')]
    pub precoders: Option<Vec<String>>,
    /// `min..max:step` or a comma-separated list, in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub max_channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepIboArgs {
    /// Comma-separated IBOs in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub ibos: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub precoders: Option<Vec<String>>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    /// Retrain the network at every IBO.
    #[arg(long)]
    pub retrain: bool,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub max_channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RadiationArgs {
    /// Comma-separated user directions in degrees.
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub precoders: Option<Vec<String>>,
    #[arg(long)]
    pub step_deg: Option<f64>,
    /// Monte-Carlo expectations with this many samples.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub ibos: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub precoders: Option<Vec<String>>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub retrain: bool,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub max_channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    #[arg(long)]
    pub hidden: Option<u64>,
    #[arg(long)]
    pub layers: Option<u64>,
    #[arg(long)]
    pub restarts: Option<u64>,
    #[arg(long)]
    pub iters: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ValidateRappArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true, default_value_t = 20.0)]
    pub snr_db: f64,
    #[arg(long)]
    pub max_channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DabArgs {
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// `backtracking[:initial]`, `decay[:mu0]` or `fixed:mu`.
    #[arg(long)]
    pub step: Option<String>,
    /// Use finite-difference gradients.
    #[arg(long)]
    pub fd: bool,
    /// Index into the test set.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    #[arg(long, allow_negative_numbers = true, default_value_t = 20.0)]
    pub snr_db: f64,
}

/// 2 for config and input errors, 3 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::NegativeSnidr(_)
            | Error::ZeroMatrix
            | Error::ZeroChannel
            | Error::SingularChannel
            | Error::ZeroGainSaturatedAntenna
            | Error::NoBracket { .. }
            | Error::Divergence { .. }
            | Error::IllConditionedBasis(_),
        ) => 3,
        _ => 2,
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("NLPRECODE_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            Error::Config(format!(
                "NLPRECODE_THREADS must be a positive integer, got `{v}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|()| commands::dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
