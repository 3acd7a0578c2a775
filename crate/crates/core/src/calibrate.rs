//! Fitting detector constants that published measurements leave open.
//!
//! Every fit is a bisection on one parameter against one measured anchor,
//! evaluated with the analytic model, so it is deterministic and cheap.

use serde::{Deserialize, Serialize};

use crate::analytic::{detector_click_rate, predict_skr};
use crate::model::{ChannelModel, DetectorModel, ModelError, ProtocolParams};
use crate::optimize::{optimize_intensities, Range, SearchSpec};

/// Operating point used by sweeps: the intensities are given, the
/// probability of the signal intensity is tuned for the highest key rate.
pub fn best_p_mu(
    params: &ProtocolParams,
    channel: &ChannelModel,
    detector_z: &DetectorModel,
    detector_x: &DetectorModel,
    f_ec: f64,
) -> Result<(ProtocolParams, f64), ModelError> {
    let spec = SearchSpec {
        mu1: Range::fixed(params.mu1),
        mu2: Range::fixed(params.mu2),
        p_mu1: Range { min: 0.05, max: 0.95 },
        p_z_alice: Range::fixed(params.p_z_alice),
        p_z_bob: Range::fixed(params.p_z_bob),
        points: 19,
        refinements: 6,
        f_ec,
    };
    let best = optimize_intensities(params, channel, detector_z, detector_x, &spec)?;
    Ok((best.params, best.skr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyFit {
    pub efficiency: f64,
    pub skr: f64,
    pub params: ProtocolParams,
}

fn bisect(mut lo: f64, mut hi: f64, iterations: usize, mut above: impl FnMut(f64) -> Result<bool, ModelError>) -> Result<f64, ModelError> {
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if above(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Detection efficiency at which the best achievable SKR (over `p_mu`) at the
/// anchor loss equals `target_skr`. The key rate grows with efficiency over
/// the bracket, so bisection applies.
pub fn calibrate_efficiency(
    params: &ProtocolParams,
    channel: &ChannelModel,
    detector: &DetectorModel,
    target_skr: f64,
    f_ec: f64,
) -> Result<EfficiencyFit, ModelError> {
    let eval = |eff: f64| {
        let det = DetectorModel {
            efficiency: eff,
            ..detector.clone()
        };
        best_p_mu(params, channel, &det, &det, f_ec)
    };
    let (_, at_max) = eval(1.0)?;
    if at_max < target_skr {
        return Err(ModelError::InvalidParameters(format!(
            "target {target_skr} b/s is above the model's reach ({at_max} b/s at unit efficiency)"
        )));
    }
    let efficiency = bisect(1e-4, 1.0, 40, |eff| Ok(eval(eff)?.1 >= target_skr))?;
    let (params, skr) = eval(efficiency)?;
    Ok(EfficiencyFit {
        efficiency,
        skr,
        params,
    })
}

/// Dark count rate at which the best SKR at the anchor equals `target_skr`.
/// The key rate falls with the dark rate.
pub fn calibrate_dark_rate(
    params: &ProtocolParams,
    channel: &ChannelModel,
    detector: &DetectorModel,
    target_skr: f64,
    f_ec: f64,
) -> Result<f64, ModelError> {
    let skr = |dark: f64| -> Result<f64, ModelError> {
        let det = DetectorModel {
            dark_rate: dark,
            ..detector.clone()
        };
        Ok(best_p_mu(params, channel, &det, &det, f_ec)?.1)
    };
    // bisect in log space between 1 Hz and 16 MHz
    let ln = bisect(0.0, 16e6_f64.ln(), 50, |x| Ok(skr(x.exp())? <= target_skr))?;
    Ok(ln.exp())
}

/// Afterpulse amplitude at which the detector, in darkness and with the given
/// hold-off, clicks at `target_rate` Hz.
pub fn calibrate_afterpulse_amplitude(
    detector: &DetectorModel,
    holdoff_time: f64,
    target_rate: f64,
    rep_rate: f64,
) -> Result<f64, ModelError> {
    let det = DetectorModel {
        holdoff_time,
        ..detector.clone()
    };
    det.validate()?;
    let rate = |a: f64| {
        detector_click_rate(
            &DetectorModel {
                afterpulse_amplitude: a,
                ..det.clone()
            },
            rep_rate,
            0.0,
        )
    };
    let ceiling = 1.0 / (det.holdoff_slots(rep_rate) as f64 + 1.0) * rep_rate;
    if !(rate(0.0) <= target_rate && target_rate < ceiling) {
        return Err(ModelError::InvalidParameters(format!(
            "noise rate {target_rate} Hz is outside [{}, {ceiling}) for this detector",
            rate(0.0)
        )));
    }
    bisect(0.0, 0.999, 60, |a| Ok(rate(a) >= target_rate))
}

/// Fixed SKR at the given parameters, without any re-optimization.
pub fn skr_at(
    params: &ProtocolParams,
    channel: &ChannelModel,
    detector: &DetectorModel,
    f_ec: f64,
) -> Result<f64, ModelError> {
    Ok(predict_skr(params, channel, detector, detector, f_ec)?.skr())
}
