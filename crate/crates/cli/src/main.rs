//! `qkdlab`: simulate, sweep, optimize and analyse a one-decoy time-bin BB84
//! link, and run Alice and Bob as separate processes.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input.

mod commands;
mod config;
mod output;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{FlagOverrides, Invalid, Mode};
use qkdlab_core::link::{Role, TransportKind};

#[derive(Parser)]
#[command(name = "qkdlab", version, about = "One-decoy time-bin BB84 link simulator and finite-key analyser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration inputs shared by the commands that run the model.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration (searched under $QKDLAB_CONFIG_DIR if relative)
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Partial TOML files merged over the configuration, in order
    #[arg(long = "overrides", value_name = "FILE")]
    overrides: Vec<PathBuf>,
    /// Built-in detector preset
    #[arg(short, long)]
    preset: Option<String>,
    /// Channel loss in dB
    #[arg(short, long)]
    loss: Option<f64>,
    #[arg(short, long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Monte Carlo stop: sifted Z detections
    #[arg(long = "n-z")]
    n_z: Option<u64>,
    /// Monte Carlo stop: transmitted frames
    #[arg(long)]
    frames: Option<u64>,
    /// Block of 1e9 sifted Z detections (analytic mode only)
    #[arg(long)]
    paper_scale: bool,
}

impl ConfigArgs {
    fn flags(&self) -> FlagOverrides {
        FlagOverrides {
            preset: self.preset.clone(),
            loss_db: self.loss,
            seed: self.seed,
            mode: self.mode,
            n_z: self.n_z,
            frames: self.frames,
            paper_scale: self.paper_scale,
        }
    }

    fn load(&self) -> anyhow::Result<config::RunConfig> {
        let cfg = config::load(self.config.as_deref(), &self.overrides, &self.flags())?;
        if self.paper_scale && cfg.mode == Mode::MonteCarlo {
            return Err(config::invalid(
                "--paper-scale needs --mode analytic: 1e9 detections are out of reach event by event",
            ));
        }
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Directory for the manifest and tables (stdout only when omitted)
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Leave wall-clock timestamps out so reruns are byte-identical
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One operating point end to end; prints the JSON manifest
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Re-optimize p_mu1 before evaluating (analytic mode)
        #[arg(long)]
        tune_p_mu: bool,
        /// Write every (frame, detection) pair as CSV (Monte Carlo mode)
        #[arg(long)]
        events_out: Option<PathBuf>,
    },
    /// Loss sweep for one or more presets; prints a CSV table
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Presets to compare (defaults to the configured detector)
        #[arg(long = "detector", value_name = "PRESET")]
        detectors: Vec<String>,
        /// Comma-separated channel losses in dB
        #[arg(long, value_delimiter = ',', required = true)]
        losses: Vec<f64>,
        #[arg(long)]
        tune_p_mu: bool,
    },
    /// Maximise the analytic key rate over intensities and probabilities
    Optimize {
        #[command(flatten)]
        config: ConfigArgs,
        /// TOML search box (defaults to intensities and p_mu1 only)
        #[arg(long)]
        search: Option<PathBuf>,
        /// Overrides file to write, usable with `simulate --overrides`
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Finite-key analysis of an external counts file (JSON or CSV)
    Analyze {
        counts: PathBuf,
        /// Configuration supplying the protocol parameters
        #[command(flatten)]
        config: ConfigArgs,
        /// QBER charged for error correction (defaults to the counted QBER_Z)
        #[arg(long)]
        qber_ec: Option<f64>,
    },
    /// Fit the detector efficiency so the key rate at one loss hits a target
    Calibrate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Target key rate in bits per second
        #[arg(long)]
        target_skr: f64,
        /// Write the recalibrated preset as TOML
        #[arg(long)]
        write_preset: Option<PathBuf>,
    },
    /// Print the annotated configuration schema
    Schema,
    /// List built-in presets, or print one
    Presets { name: Option<String> },
    /// Alice and Bob in one process over an in-memory pipe or loopback TCP
    Session {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, default_value = "memory")]
        transport: TransportKind,
        /// Intercept-resend on this fraction of frames
        #[arg(long)]
        intercept_resend: Option<f64>,
        /// Seconds to wait for the peer's next message
        #[arg(long, default_value_t = 120)]
        deadline: u64,
    },
    /// Accept one connection and run an endpoint (Bob by default)
    Listen {
        #[arg(long, default_value = "127.0.0.1:0")]
        addr: SocketAddr,
        #[arg(long, value_enum, default_value = "bob")]
        role: RoleArg,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        intercept_resend: Option<f64>,
        #[arg(long, default_value_t = 120)]
        deadline: u64,
    },
    /// Connect to a listening peer and run an endpoint (Alice by default)
    Connect {
        #[arg(long)]
        addr: SocketAddr,
        #[arg(long, value_enum, default_value = "alice")]
        role: RoleArg,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        intercept_resend: Option<f64>,
        #[arg(long, default_value_t = 120)]
        deadline: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum RoleArg {
    Alice,
    Bob,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Alice => Role::Alice,
            RoleArg::Bob => Role::Bob,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            output,
            tune_p_mu,
            events_out,
        } => commands::simulate(&config.load()?, &output, tune_p_mu, events_out.as_deref()),
        Command::Sweep {
            config,
            output,
            detectors,
            losses,
            tune_p_mu,
        } => commands::sweep(&config, &output, &detectors, &losses, tune_p_mu),
        Command::Optimize { config, search, out } => commands::optimize(&config.load()?, search.as_deref(), out.as_deref()),
        Command::Analyze { counts, config, qber_ec } => commands::analyze(&counts, &config.load()?, qber_ec),
        Command::Calibrate {
            config,
            target_skr,
            write_preset,
        } => commands::calibrate(&config.load()?, target_skr, write_preset.as_deref()),
        Command::Schema => {
            print!("{}", config::SCHEMA);
            Ok(())
        }
        Command::Presets { name } => commands::presets(name.as_deref()),
        Command::Session {
            config,
            output,
            transport,
            intercept_resend,
            deadline,
        } => commands::session(&config.load()?, &output, transport, intercept_resend, deadline),
        Command::Listen {
            addr,
            role,
            config,
            output,
            intercept_resend,
            deadline,
        } => commands::endpoint(commands::Dial::Listen(addr), role.into(), &config.load()?, &output, intercept_resend, deadline),
        Command::Connect {
            addr,
            role,
            config,
            output,
            intercept_resend,
            deadline,
        } => commands::endpoint(commands::Dial::Connect(addr), role.into(), &config.load()?, &output, intercept_resend, deadline),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
