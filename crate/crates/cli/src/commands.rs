//! Subcommand bodies. Each prints a JSON manifest (or a table) to stdout and,
//! with `--out`, writes the same artefacts to a directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use qkdlab_core::calibrate::calibrate_efficiency;
use qkdlab_core::counts::CountsFile;
use qkdlab_core::finite_key;
use qkdlab_core::link::{
    drive, prepare_tcp, run_session, write_key_file, Endpoint, EndpointSummary, Role, SessionManifest,
    SessionOptions, TransportKind,
};
use qkdlab_core::link::wire;
use qkdlab_core::optimize::{optimize_intensities, SearchSpec};
use qkdlab_core::photonics::{write_event_stream, Adversary};
use qkdlab_core::presets::Preset;
use qkdlab_core::sweep::{analytic_point, monte_carlo_point, OperatingPoint};
use qkdlab_core::ModelError;

use crate::config::{invalid, Mode, RunConfig};
use crate::output::{self, Manifest};
use crate::{ConfigArgs, OutputArgs};

/// Model errors come from parameters the user supplied.
fn model(e: ModelError) -> anyhow::Error {
    invalid(e.to_string())
}

fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Analytic => "analytic",
        Mode::MonteCarlo => "monte_carlo",
    }
}

fn evaluate(cfg: &RunConfig, tune_p_mu: bool) -> anyhow::Result<(OperatingPoint, Option<qkdlab_core::photonics::LinkRun>)> {
    match cfg.mode {
        Mode::Analytic => {
            let p = analytic_point(&cfg.protocol, &cfg.channel, &cfg.detector, cfg.detector_x(), cfg.f_ec, tune_p_mu)
                .map_err(model)?;
            Ok((p, None))
        }
        Mode::MonteCarlo => {
            let (p, run) = monte_carlo_point(&cfg.link_config(), cfg.f_ec, cfg.sample_fraction)?;
            Ok((p, Some(run)))
        }
    }
}

#[derive(Serialize)]
struct SimulateResult {
    point: OperatingPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth: Option<qkdlab_core::photonics::GroundTruth>,
}

pub fn simulate(cfg: &RunConfig, out: &OutputArgs, tune_p_mu: bool, events_out: Option<&Path>) -> anyhow::Result<()> {
    if events_out.is_some() && cfg.mode != Mode::MonteCarlo {
        return Err(invalid("--events-out needs --mode monte-carlo"));
    }
    let (point, run) = evaluate(cfg, tune_p_mu)?;
    if let (Some(path), Some(run)) = (events_out, &run) {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        write_event_stream(&mut w, &run.events)?;
        w.flush()?;
    }
    let summary = format!(
        "{}\n{}\n",
        output::SUMMARY_HEADER,
        output::summary_row(&point, mode_label(cfg.mode))
    );
    let result = SimulateResult {
        frames: run.as_ref().map(|r| r.frames),
        ground_truth: run.map(|r| r.ground_truth),
        point,
    };
    let json = output::to_json(&Manifest::new("simulate", out, cfg, result));
    output::write_file(out, "manifest.json", &json)?;
    output::write_file(out, "summary.csv", &summary)?;
    print!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct SweepEntry<'a> {
    detector: &'a str,
    loss_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    point: Option<&'a OperatingPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub fn sweep(args: &ConfigArgs, out: &OutputArgs, detectors: &[String], losses: &[f64], tune_p_mu: bool) -> anyhow::Result<()> {
    let cfg = args.load()?;
    if losses.is_empty() {
        return Err(invalid("--losses needs at least one value"));
    }
    let mut variants = Vec::new();
    if detectors.is_empty() {
        let name = cfg.preset.clone().unwrap_or_else(|| "configured".into());
        variants.push((name, cfg.clone()));
    }
    for name in detectors {
        let preset = Preset::builtin(name).ok_or_else(|| {
            let known: Vec<_> = Preset::builtin_names().collect();
            invalid(format!("unknown preset {name:?} (known: {})", known.join(", ")))
        })?;
        variants.push((name.clone(), cfg.with_preset(&preset)));
    }
    // Every point keeps the configured seed, so Monte Carlo comparisons across
    // losses and detectors share their random numbers.
    let jobs: Vec<(String, f64, RunConfig)> = variants
        .iter()
        .flat_map(|(name, c)| losses.iter().map(move |&l| (name.clone(), l, c.at_loss(l))))
        .collect();
    let rows: Vec<(String, f64, Result<OperatingPoint, String>)> = jobs
        .into_par_iter()
        .map(|(name, loss, c)| {
            let point = c.validate().and_then(|()| evaluate(&c, tune_p_mu)).map(|(p, _)| p);
            (name, loss, point.map_err(|e| format!("{e:#}")))
        })
        .collect();

    let mode = mode_label(cfg.mode);
    let table = output::sweep_table(&rows, mode);
    let names: Vec<String> = variants.iter().map(|(n, _)| n.clone()).collect();
    output::write_file(out, "sweep.csv", &table)?;
    output::write_file(out, "plot.dat", output::plot_data(&rows))?;
    if names.len() > 1 {
        output::write_file(out, "ratios.csv", output::ratio_table(&names, losses, &rows))?;
    }
    let entries: Vec<SweepEntry> = rows
        .iter()
        .map(|(name, loss, p)| SweepEntry {
            detector: name,
            loss_db: *loss,
            point: p.as_ref().ok(),
            error: p.as_ref().err().map(String::as_str),
        })
        .collect();
    output::write_file(out, "manifest.json", output::to_json(&Manifest::new("sweep", out, &cfg, entries)))?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct OverridesFile {
    format_version: u32,
    protocol: ProtocolOverrides,
}

#[derive(Serialize)]
struct ProtocolOverrides {
    mu1: f64,
    mu2: f64,
    p_mu: [f64; 3],
    p_z_alice: f64,
    p_z_bob: f64,
}

pub fn optimize(cfg: &RunConfig, search: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    let spec = match search {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SearchSpec>(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => {
            let mut s = SearchSpec::intensities_only(&cfg.protocol);
            s.f_ec = cfg.f_ec;
            s
        }
    };
    let best = optimize_intensities(&cfg.protocol, &cfg.channel, &cfg.detector, cfg.detector_x(), &spec)
        .map_err(model)?;
    if let Some(path) = out {
        let p = &best.params;
        let file = OverridesFile {
            format_version: crate::config::CONFIG_FORMAT_VERSION,
            protocol: ProtocolOverrides {
                mu1: p.mu1,
                mu2: p.mu2,
                p_mu: p.p_mu,
                p_z_alice: p.p_z_alice,
                p_z_bob: p.p_z_bob,
            },
        };
        let text = format!(
            "# qkdlab optimize: predicted {:.6e} b/s at {} dB\n{}",
            best.skr,
            cfg.channel.channel_loss_db,
            toml::to_string(&file)?
        );
        output::write_path(path, text)?;
    }
    print!("{}", output::to_json(&best));
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeResult {
    counts: CountsFile,
    qber_ec: f64,
    analysis: finite_key::Analysis,
}

pub fn analyze(counts: &Path, cfg: &RunConfig, qber_ec: Option<f64>) -> anyhow::Result<()> {
    let text = fs::read_to_string(counts).with_context(|| format!("reading {}", counts.display()))?;
    let ext = counts.extension().and_then(|e| e.to_str());
    let file = CountsFile::parse(&text, ext).map_err(|e| invalid(format!("{}: {e}", counts.display())))?;
    let q = qber_ec.or_else(|| file.tallies.qber_z()).unwrap_or(0.0);
    if !(0.0..=0.5).contains(&q) {
        return Err(invalid(format!("QBER {q} for error correction is outside [0, 0.5]")));
    }
    let analysis = finite_key::analyze(&file.tallies, &cfg.protocol, q, cfg.f_ec, file.elapsed_s).map_err(model)?;
    let result = AnalyzeResult {
        counts: file,
        qber_ec: q,
        analysis,
    };
    print!("{}", output::to_json(&result));
    Ok(())
}

pub fn calibrate(cfg: &RunConfig, target_skr: f64, write_preset: Option<&Path>) -> anyhow::Result<()> {
    if !(target_skr.is_finite() && target_skr > 0.0) {
        return Err(invalid("--target-skr must be positive"));
    }
    let fit = calibrate_efficiency(&cfg.protocol, &cfg.channel, &cfg.detector, target_skr, cfg.f_ec).map_err(model)?;
    if let Some(path) = write_preset {
        let base = cfg
            .preset
            .as_deref()
            .and_then(Preset::builtin)
            .ok_or_else(|| invalid("--write-preset needs a built-in --preset to start from"))?;
        let mut preset = base.clone();
        preset.name = format!("{}-calibrated", base.name);
        preset.detector.efficiency = fit.efficiency;
        preset.provenance = format!(
            "{}; efficiency refit to {target_skr} b/s at {} dB",
            base.provenance, cfg.channel.channel_loss_db
        );
        output::write_path(path, toml::to_string(&preset)?)?;
    }
    print!("{}", output::to_json(&fit));
    Ok(())
}

pub fn presets(name: Option<&str>) -> anyhow::Result<()> {
    match name {
        None => {
            for n in Preset::builtin_names() {
                let p = Preset::builtin(n).expect("listed presets exist");
                println!("{n:<22} {}", p.description);
            }
        }
        Some(n) => {
            let p = Preset::builtin(n).ok_or_else(|| invalid(format!("unknown preset {n:?}")))?;
            print!("{}", toml::to_string(&p)?);
        }
    }
    Ok(())
}

fn with_adversary(cfg: &RunConfig, intercept_resend: Option<f64>) -> anyhow::Result<RunConfig> {
    let mut cfg = cfg.clone();
    if let Some(fraction) = intercept_resend {
        cfg.adversary = Some(Adversary::InterceptResend { fraction });
        cfg.validate()?;
    }
    Ok(cfg)
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::Alice => "alice",
        Role::Bob => "bob",
    }
}

pub fn session(
    cfg: &RunConfig,
    out: &OutputArgs,
    transport: TransportKind,
    intercept_resend: Option<f64>,
    deadline: u64,
) -> anyhow::Result<()> {
    let cfg = with_adversary(cfg, intercept_resend)?;
    let sc = cfg.session_config();
    let options = SessionOptions {
        deadline: Duration::from_secs(deadline),
        ..SessionOptions::default()
    };
    let outcome = run_session(&sc, &sc, transport, options)?;
    let manifest: SessionManifest = outcome.manifest();
    let json = output::to_json(&Manifest::new("session", out, &cfg, &manifest));
    output::write_file(out, "manifest.json", &json)?;
    if let (Some(dir), Some(key)) = (&out.out, outcome.key()) {
        write_key_file(&dir.join("alice.key"), key)?;
        write_key_file(&dir.join("bob.key"), outcome.bob.final_key().unwrap_or(key))?;
    }
    print!("{json}");
    if !outcome.completed() {
        let reason = outcome
            .alice
            .abort_reason()
            .or(outcome.bob.abort_reason())
            .unwrap_or("unknown");
        anyhow::bail!("session aborted: {reason}");
    }
    eprintln!("session complete: {} key bits", manifest.alice.key_length);
    Ok(())
}

pub enum Dial {
    Listen(SocketAddr),
    Connect(SocketAddr),
}

pub fn endpoint(
    dial: Dial,
    role: Role,
    cfg: &RunConfig,
    out: &OutputArgs,
    intercept_resend: Option<f64>,
    deadline: u64,
) -> anyhow::Result<()> {
    let cfg = with_adversary(cfg, intercept_resend)?;
    let deadline = Duration::from_secs(deadline);
    let mut stream = match dial {
        Dial::Listen(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "listening on {}", listener.local_addr()?)?;
            stdout.flush()?;
            listener.accept().context("accepting the peer")?.0
        }
        Dial::Connect(addr) => TcpStream::connect_timeout(&addr, deadline).with_context(|| format!("connecting to {addr}"))?,
    };
    prepare_tcp(&stream, deadline)?;
    let mut ep = Endpoint::new(role, cfg.session_config());
    drive(&mut ep, &mut stream, wire::DEFAULT_MAX_FRAME);
    let summary = EndpointSummary::of(&ep);
    let name = role_name(role);
    let json = output::to_json(&Manifest::new("endpoint", out, &cfg, &summary));
    output::write_file(out, &format!("{name}.json"), &json)?;
    if let (Some(dir), Some(key)) = (&out.out, ep.final_key()) {
        write_key_file(&dir.join(format!("{name}.key")), key)?;
    }
    print!("{json}");
    match ep.final_key() {
        Some(_) => Ok(()),
        None => anyhow::bail!("{name} aborted: {}", ep.abort_reason().unwrap_or("unknown")),
    }
}
