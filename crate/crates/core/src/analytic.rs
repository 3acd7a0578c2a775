//! Closed-form expectation model of the link.
//!
//! Each detector is a renewal process: after a click it skips `h` slots, then
//! is armed with a per-slot click probability made of the photon term, the
//! dark term and a geometrically decaying afterpulse hazard. With no
//! afterpulsing this reproduces the Monte Carlo exactly in expectation and
//! reduces to the non-paralyzable dead-time law `p / (1 + h p)` per slot. The
//! afterpulse hazard carried into each cycle is replaced by its stationary
//! mean, which is the only approximation.

use serde::{Deserialize, Serialize};

use crate::finite_key::{analyze, Analysis};
use crate::model::{
    Basis, BasisCounts, ChannelModel, DetectorModel, Intensity, ModelError, ProtocolParams, SecretKeyReport,
    TallyCounts,
};

/// Expected detections and errors for one basis at one intensity, per frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub detections: f64,
    pub errors: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    /// Basis-matched records per frame, indexed by intensity.
    pub z: [ExpectedCounts; 3],
    pub x: [ExpectedCounts; 3],
    /// Raw click probability per frame of each detector.
    pub clicks_z: f64,
    pub clicks_x: f64,
    /// Basis-matched Z records per frame split by cause (signal, dark, afterpulse).
    pub z_by_origin: [f64; 3],
    pub qber_z: Option<f64>,
    pub qber_x: Option<f64>,
    pub rep_rate: f64,
}

impl ExpectedRates {
    pub fn n_z_per_frame(&self) -> f64 {
        self.z.iter().map(|c| c.detections).sum()
    }

    pub fn n_x_per_frame(&self) -> f64 {
        self.x.iter().map(|c| c.detections).sum()
    }

    /// Expected tallies after `frames` frames, rounded to whole counts.
    pub fn tallies_after(&self, frames: f64) -> TallyCounts {
        let round = |c: &ExpectedCounts| {
            let detections = (c.detections * frames).round().max(0.0) as u64;
            BasisCounts {
                detections,
                errors: ((c.errors * frames).round().max(0.0) as u64).min(detections),
            }
        };
        TallyCounts {
            z: [round(&self.z[0]), round(&self.z[1]), round(&self.z[2])],
            x: [round(&self.x[0]), round(&self.x[1]), round(&self.x[2])],
        }
    }

    /// Expected counts per second of protocol time.
    pub fn per_second(&self) -> ([ExpectedCounts; 3], [ExpectedCounts; 3]) {
        let s = |c: &ExpectedCounts| ExpectedCounts {
            detections: c.detections * self.rep_rate,
            errors: c.errors * self.rep_rate,
        };
        (self.z.each_ref().map(s), self.x.each_ref().map(s))
    }
}

/// Per-frame click probabilities of one detector, by input class and cause.
struct ArmResponse {
    /// `[class][origin]`
    clicks: Vec<[f64; 3]>,
}

/// Stationary renewal solution for one detector.
///
/// `signal[c]` is the per-frame probability that class `c` (drawn with
/// probability `weight[c]`) produces a photon click when the detector is armed.
fn renewal(weight: &[f64], signal: &[f64], det: &DetectorModel, rep_rate: f64) -> ArmResponse {
    let p_dark = det.dark_probability(rep_rate);
    let h = det.holdoff_slots(rep_rate) as f64;
    let amplitude = det.afterpulse_amplitude;
    let ln_r = -det.slot_period(rep_rate) / det.afterpulse_tau;
    // probability an armed slot sees no photon click
    let no_signal: f64 = weight.iter().zip(signal).map(|(w, q)| w * (1.0 - q)).sum();
    let p_inf = 1.0 - (1.0 - p_dark) * no_signal;

    // (sum of S_{j-1}, sum of S_{j-1} a_j, E[r^(h+J)]) for a given initial hazard
    let sums = |hazard: f64| -> (f64, f64, f64) {
        if hazard <= 0.0 {
            return if p_inf > 0.0 { (1.0 / p_inf, 0.0, 0.0) } else { (f64::INFINITY, 0.0, 0.0) };
        }
        let r = ln_r.exp();
        let mut s_prev = 1.0;
        let (mut sum_s, mut sum_sa, mut sum_r) = (0.0, 0.0, 0.0);
        let mut decay = (ln_r * (h + 1.0)).exp();
        let mut j = 1u64;
        loop {
            let a = (hazard * decay).min(1.0);
            let p = 1.0 - (1.0 - p_dark) * (1.0 - a) * no_signal;
            sum_s += s_prev;
            sum_sa += s_prev * a;
            sum_r += s_prev * p * decay;
            s_prev *= 1.0 - p;
            decay *= r;
            j += 1;
            if s_prev < 1e-300 {
                break;
            }
            if hazard * decay < 1e-18 || j > 50_000_000 {
                if p_inf <= 0.0 {
                    return (f64::INFINITY, 0.0, 0.0);
                }
                sum_s += s_prev / p_inf;
                sum_r += s_prev * p_inf * decay / (1.0 - (1.0 - p_inf) * r);
                break;
            }
        }
        (sum_s, sum_sa, sum_r)
    };

    let mut hazard = amplitude;
    let mut result = sums(hazard);
    if amplitude > 0.0 {
        for _ in 0..500 {
            let next = amplitude + hazard * result.2;
            let done = (next - hazard).abs() <= 1e-13 * next;
            hazard = next;
            result = sums(hazard);
            if done {
                break;
            }
        }
    }
    let (sum_s, sum_sa, _) = result;
    let clicks = if sum_s.is_finite() {
        let cycle = h + sum_s;
        weight
            .iter()
            .zip(signal)
            .map(|(&w, &q)| {
                [
                    w * q * sum_s / cycle,
                    w * (1.0 - q) * p_dark * sum_s / cycle,
                    w * (1.0 - q) * (1.0 - p_dark) * sum_sa / cycle,
                ]
            })
            .collect()
    } else {
        vec![[0.0; 3]; weight.len()]
    };
    ArmResponse { clicks }
}

/// Mean click rate (Hz) of a lone detector whose armed slots see a photon
/// click with probability `signal_prob`. With `signal_prob = 0` this is the
/// dark-plus-afterpulse noise rate.
pub fn detector_click_rate(det: &DetectorModel, rep_rate: f64, signal_prob: f64) -> f64 {
    let r = renewal(&[1.0], &[signal_prob], det, rep_rate);
    r.clicks[0].iter().sum::<f64>() * rep_rate
}

/// Transmitter class: (basis, bit, intensity). X frames use bit 0.
fn classes(params: &ProtocolParams) -> Vec<(Basis, u8, Intensity, f64)> {
    let mut out = Vec::with_capacity(9);
    for k in Intensity::ALL {
        let pk = params.p_mu[k.index()];
        out.push((Basis::Z, 0, k, params.p_z_alice / 2.0 * pk));
        out.push((Basis::Z, 1, k, params.p_z_alice / 2.0 * pk));
        out.push((Basis::X, 0, k, (1.0 - params.p_z_alice) * pk));
    }
    out
}

/// Expected per-frame tallies, click rates and error rates.
pub fn expected_rates(
    params: &ProtocolParams,
    channel: &ChannelModel,
    detector_z: &DetectorModel,
    detector_x: &DetectorModel,
) -> Result<ExpectedRates, ModelError> {
    params.validate()?;
    channel.validate()?;
    detector_z.validate()?;
    detector_x.validate()?;
    let rep = params.rep_rate;
    let cls = classes(params);
    let weight: Vec<f64> = cls.iter().map(|c| c.3).collect();
    let mean_z = params.p_z_bob * channel.transmittance(Basis::Z) * detector_z.efficiency;
    let mean_x = (1.0 - params.p_z_bob) * channel.transmittance(Basis::X) * detector_x.efficiency;
    let sig_z: Vec<f64> = cls.iter().map(|c| -(-params.intensity(c.2) * mean_z).exp_m1()).collect();
    let sig_x: Vec<f64> = cls.iter().map(|c| -(-params.intensity(c.2) * mean_x).exp_m1()).collect();
    let resp_z = renewal(&weight, &sig_z, detector_z, rep);
    let resp_x = renewal(&weight, &sig_x, detector_x, rep);

    let p_wrong_x = (1.0 - channel.visibility) / 2.0;
    let mut out = ExpectedRates {
        z: [ExpectedCounts::default(); 3],
        x: [ExpectedCounts::default(); 3],
        clicks_z: resp_z.clicks.iter().flatten().sum(),
        clicks_x: resp_x.clicks.iter().flatten().sum(),
        z_by_origin: [0.0; 3],
        qber_z: None,
        qber_x: None,
        rep_rate: rep,
    };
    for (i, &(basis, _, k, w)) in cls.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let cz = resp_z.clicks[i];
        let cx = resp_x.clicks[i];
        // a double click keeps either record with probability one half
        let (mine, other, wrong_signal) = match basis {
            Basis::Z => (cz, cx, detector_z.timing_error),
            Basis::X => (cx, cz, p_wrong_x),
        };
        let p_other = other.iter().sum::<f64>() / w;
        let keep = 1.0 - 0.5 * p_other;
        let detections: f64 = mine.iter().sum::<f64>() * keep;
        let errors = (mine[0] * wrong_signal + 0.5 * (mine[1] + mine[2])) * keep;
        let slot = match basis {
            Basis::Z => &mut out.z[k.index()],
            Basis::X => &mut out.x[k.index()],
        };
        slot.detections += detections;
        slot.errors += errors;
        if basis == Basis::Z {
            for (acc, m) in out.z_by_origin.iter_mut().zip(mine) {
                *acc += m * keep;
            }
        }
    }
    let ratio = |c: &[ExpectedCounts; 3]| {
        let n: f64 = c.iter().map(|x| x.detections).sum();
        let m: f64 = c.iter().map(|x| x.errors).sum();
        (n > 0.0).then(|| m / n)
    };
    out.qber_z = ratio(&out.z);
    out.qber_x = ratio(&out.x);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub rates: ExpectedRates,
    pub tallies: TallyCounts,
    pub frames: f64,
    pub analysis: Option<Analysis>,
}

impl Prediction {
    pub fn report(&self) -> SecretKeyReport {
        self.analysis
            .as_ref()
            .map_or_else(SecretKeyReport::empty, |a| a.report.clone())
    }

    pub fn skr(&self) -> f64 {
        self.analysis.as_ref().map_or(0.0, |a| a.report.skr)
    }
}

/// Expected finite-key performance for a block of `params.block_size_nz`
/// sifted Z detections.
pub fn predict_skr(
    params: &ProtocolParams,
    channel: &ChannelModel,
    detector_z: &DetectorModel,
    detector_x: &DetectorModel,
    f_ec: f64,
) -> Result<Prediction, ModelError> {
    let rates = expected_rates(params, channel, detector_z, detector_x)?;
    let per_frame = rates.n_z_per_frame();
    if per_frame.is_nan() || per_frame <= 0.0 {
        return Ok(Prediction {
            rates,
            tallies: TallyCounts::default(),
            frames: f64::INFINITY,
            analysis: None,
        });
    }
    let frames = params.block_size_nz as f64 / per_frame;
    let tallies = rates.tallies_after(frames);
    let q = tallies.qber_z().unwrap_or(0.0).min(0.5);
    let analysis = analyze(&tallies, params, q, f_ec, frames / params.rep_rate)?;
    Ok(Prediction {
        rates,
        tallies,
        frames,
        analysis: Some(analysis),
    })
}
