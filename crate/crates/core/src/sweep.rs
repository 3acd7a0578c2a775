//! Operating points along a loss sweep, analytic or Monte Carlo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::predict_skr;
use crate::calibrate::best_p_mu;
use crate::finite_key::DecoyBounds;
use crate::link::session_key_accounting;
use crate::model::{ChannelModel, DetectorModel, ModelError, ProtocolParams, SecretKeyReport, TallyCounts};
use crate::photonics::{run_link, LinkConfig, LinkRun, SimError};
use crate::postproc::{choose_sample, sift, PostprocError};
use crate::presets::Preset;
use crate::rng::{stream_rng, Stream};

/// `base` with the intensities the preset schedules nearest to `loss_db`.
pub fn scheduled_params(preset: &Preset, base: &ProtocolParams, loss_db: f64) -> ProtocolParams {
    match preset.schedule_for(loss_db) {
        Some(s) => ProtocolParams {
            mu1: s.mu1,
            mu2: s.mu2,
            mu3: s.mu3,
            ..base.clone()
        },
        None => base.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub loss_db: f64,
    pub params: ProtocolParams,
    pub tallies: TallyCounts,
    pub qber_z: Option<f64>,
    pub qber_x: Option<f64>,
    pub bounds: Option<DecoyBounds>,
    pub report: SecretKeyReport,
}

impl OperatingPoint {
    pub fn skr(&self) -> f64 {
        self.report.skr
    }
}

/// Expected performance at `params`; with `tune_p_mu` the signal probability
/// is re-optimized first.
pub fn analytic_point(
    params: &ProtocolParams,
    channel: &ChannelModel,
    detector_z: &DetectorModel,
    detector_x: &DetectorModel,
    f_ec: f64,
    tune_p_mu: bool,
) -> Result<OperatingPoint, ModelError> {
    let params = if tune_p_mu {
        best_p_mu(params, channel, detector_z, detector_x, f_ec)?.0
    } else {
        params.clone()
    };
    let p = predict_skr(&params, channel, detector_z, detector_x, f_ec)?;
    Ok(OperatingPoint {
        loss_db: channel.channel_loss_db,
        qber_z: p.rates.qber_z,
        qber_x: p.rates.qber_x,
        bounds: p.analysis.as_ref().map(|a| a.bounds),
        report: p.report(),
        tallies: p.tallies,
        params,
    })
}

/// Analytic sweep at the preset's scheduled intensities. Points are computed
/// in parallel and returned in input order; failures stay per point.
pub fn analytic_sweep(
    preset: &Preset,
    base: &ProtocolParams,
    channel: &ChannelModel,
    losses: &[f64],
    f_ec: f64,
    tune_p_mu: bool,
) -> Vec<Result<OperatingPoint, ModelError>> {
    losses
        .par_iter()
        .map(|&loss| {
            let params = scheduled_params(preset, base, loss);
            analytic_point(&params, &channel.with_loss(loss), &preset.detector, &preset.detector, f_ec, tune_p_mu)
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum PointError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Postproc(#[from] PostprocError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Monte Carlo operating point: simulate, sift, disclose a sample to estimate
/// QBER_Z, then run the same finite-key accounting as a live session.
pub fn monte_carlo_point(
    cfg: &LinkConfig,
    f_ec: f64,
    sample_fraction: f64,
) -> Result<(OperatingPoint, LinkRun), PointError> {
    let mut cfg = cfg.clone();
    cfg.keep_events = true;
    let run = run_link(&cfg)?;
    let frames: Vec<_> = run.events.iter().map(|(f, _)| *f).collect();
    let detections: Vec<_> = run.events.iter().map(|(_, d)| *d).collect();
    let (key_a, key_b, tallies) = sift(&frames, &detections)?;
    let mut rng = stream_rng(cfg.seed, Stream::Sampling);
    let sample = choose_sample(key_a.len(), sample_fraction, &mut rng);
    let errors = sample.iter().filter(|&&p| key_a.bits[p] != key_b.bits[p]).count();
    let q = if sample.is_empty() {
        0.5
    } else {
        errors as f64 / sample.len() as f64
    };
    let n_key = (key_a.len() - sample.len()) as u64;
    let (bounds, report) = session_key_accounting(
        &tallies,
        &cfg.params,
        q,
        n_key,
        sample.len() as u64,
        f_ec,
        run.elapsed_protocol_time,
    )?;
    let point = OperatingPoint {
        loss_db: cfg.channel.channel_loss_db,
        params: cfg.params.clone(),
        qber_z: tallies.qber_z(),
        qber_x: tallies.qber_x(),
        bounds: Some(bounds),
        report,
        tallies,
    };
    Ok((point, run))
}
