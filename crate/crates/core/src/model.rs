//! Domain types shared by every stage of the link, and the handful of
//! closed-form helpers the security analysis is built from.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of statistical deviation tests the secrecy parameter is split over.
pub const EPSILON_SPLIT: f64 = 19.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

fn domain(name: &'static str, value: f64, domain: &'static str) -> ModelError {
    ModelError::Domain {
        name,
        value,
        domain,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Z,
    X,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Basis::Z => f.write_str("Z"),
            Basis::X => f.write_str("X"),
        }
    }
}

/// Which of the three transmitter intensity settings a frame used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Mu1,
    Mu2,
    Mu3,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Mu1, Intensity::Mu2, Intensity::Mu3];

    pub fn index(self) -> usize {
        match self {
            Intensity::Mu1 => 0,
            Intensity::Mu2 => 1,
            Intensity::Mu3 => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Intensity::Mu1 => "mu1",
            Intensity::Mu2 => "mu2",
            Intensity::Mu3 => "mu3",
        }
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Transmitter-side protocol constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    /// Signal intensity, mean photons per pulse.
    pub mu1: f64,
    /// Decoy intensity, mean photons per pulse.
    pub mu2: f64,
    /// Optional third (vacuum) intensity; its counts are diagnostic only.
    pub mu3: f64,
    /// Probability of choosing each of `mu1`, `mu2`, `mu3`.
    pub p_mu: [f64; 3],
    pub p_z_alice: f64,
    pub p_z_bob: f64,
    /// Pulse frames per second (Hz).
    pub rep_rate: f64,
    /// Target number of sifted Z-basis detections per block.
    pub block_size_nz: u64,
    pub eps_sec: f64,
    pub eps_corr: f64,
    /// Time-bin separation in seconds. Interference is resolved per frame, so
    /// this is carried for bookkeeping only.
    pub bin_separation: f64,
}

impl Default for ProtocolParams {
    /// The field-trial operating point at 20 dB.
    fn default() -> Self {
        Self {
            mu1: 0.41,
            mu2: 0.16,
            mu3: 0.0,
            p_mu: [0.7, 0.3, 0.0],
            p_z_alice: 0.5,
            p_z_bob: 0.5,
            rep_rate: 119e6,
            block_size_nz: 100_000,
            eps_sec: 1e-12,
            eps_corr: 1e-12,
            bin_separation: 800e-12,
        }
    }
}

impl ProtocolParams {
    pub fn intensity(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Mu1 => self.mu1,
            Intensity::Mu2 => self.mu2,
            Intensity::Mu3 => self.mu3,
        }
    }

    pub fn intensities(&self) -> [f64; 3] {
        [self.mu1, self.mu2, self.mu3]
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.rep_rate
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [
            self.mu1,
            self.mu2,
            self.mu3,
            self.p_z_alice,
            self.p_z_bob,
            self.rep_rate,
            self.eps_sec,
            self.eps_corr,
            self.bin_separation,
        ];
        if finite.iter().chain(self.p_mu.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameters(
                "protocol parameters must be finite".into(),
            ));
        }
        if !(self.mu1 > 0.0 && self.mu1 > self.mu2 && self.mu2 >= self.mu3 && self.mu3 >= 0.0) {
            return Err(ModelError::InvalidParameters(format!(
                "intensities must satisfy mu1 > mu2 >= mu3 >= 0 and mu1 > 0 (got {}, {}, {})",
                self.mu1, self.mu2, self.mu3
            )));
        }
        if self.p_mu.iter().any(|&p| p < 0.0) {
            return Err(ModelError::InvalidParameters(
                "p_mu entries must be nonnegative".into(),
            ));
        }
        let total: f64 = self.p_mu.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ModelError::InvalidParameters(format!(
                "p_mu must sum to 1 (sums to {total})"
            )));
        }
        for (name, p) in [("p_z_alice", self.p_z_alice), ("p_z_bob", self.p_z_bob)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(domain(name, p, "(0, 1)"));
            }
        }
        for (name, e) in [("eps_sec", self.eps_sec), ("eps_corr", self.eps_corr)] {
            if !(e > 0.0 && e < 1.0) {
                return Err(domain(name, e, "(0, 1)"));
            }
        }
        if self.rep_rate <= 0.0 {
            return Err(domain("rep_rate", self.rep_rate, "(0, inf)"));
        }
        if self.bin_separation < 0.0 {
            return Err(domain("bin_separation", self.bin_separation, "[0, inf)"));
        }
        Ok(())
    }
}

/// Losses and interferometer quality between the transmitter and the detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub channel_loss_db: f64,
    /// Receiver loss in front of the Z detector (dB).
    pub receiver_loss_z_db: f64,
    /// Receiver loss in front of the X detector (dB), interferometer included.
    pub receiver_loss_x_db: f64,
    pub visibility: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            channel_loss_db: 20.0,
            receiver_loss_z_db: 1.0,
            receiver_loss_x_db: 3.0,
            visibility: 0.944,
        }
    }
}

impl ChannelModel {
    pub fn with_loss(&self, channel_loss_db: f64) -> Self {
        Self {
            channel_loss_db,
            ..self.clone()
        }
    }

    pub fn transmittance(&self, basis: Basis) -> f64 {
        let receiver = match basis {
            Basis::Z => self.receiver_loss_z_db,
            Basis::X => self.receiver_loss_x_db,
        };
        db_to_transmittance(self.channel_loss_db + receiver)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("channel_loss_db", self.channel_loss_db),
            ("receiver_loss_z_db", self.receiver_loss_z_db),
            ("receiver_loss_x_db", self.receiver_loss_x_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(domain(name, v, "[0, inf)"));
            }
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(domain("visibility", self.visibility, "[0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    Gated,
    FreeRunning,
}

/// Highest gate frequency the fast-gating circuit accepts (Hz).
pub const MAX_GATE_RATE: f64 = 150e6;

/// One single-photon detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub name: String,
    pub efficiency: f64,
    /// Dark counts per second (Hz).
    pub dark_rate: f64,
    pub mode: DetectorMode,
    /// Gates per second (Hz); gated mode only.
    #[serde(default)]
    pub gate_rate: f64,
    /// Gate ON time in seconds; gated mode only.
    #[serde(default)]
    pub gate_on_window: f64,
    /// Dead time enforced after every click (s).
    pub holdoff_time: f64,
    /// Trapped-charge weight deposited per click.
    pub afterpulse_amplitude: f64,
    /// Trap release time constant (s).
    pub afterpulse_tau: f64,
    /// Probability that a photon click is registered in the wrong Z time bin.
    #[serde(default)]
    pub timing_error: f64,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(domain("efficiency", self.efficiency, "[0, 1]"));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(domain("dark_rate", self.dark_rate, "[0, inf)"));
        }
        if !(self.holdoff_time.is_finite() && self.holdoff_time >= 0.0) {
            return Err(domain("holdoff_time", self.holdoff_time, "[0, inf)"));
        }
        if !(0.0..1.0).contains(&self.afterpulse_amplitude) {
            return Err(domain(
                "afterpulse_amplitude",
                self.afterpulse_amplitude,
                "[0, 1)",
            ));
        }
        if !(self.afterpulse_tau.is_finite() && self.afterpulse_tau > 0.0) {
            return Err(domain("afterpulse_tau", self.afterpulse_tau, "(0, inf)"));
        }
        if !(0.0..=0.5).contains(&self.timing_error) {
            return Err(domain("timing_error", self.timing_error, "[0, 0.5]"));
        }
        if self.mode == DetectorMode::Gated {
            if !(self.gate_rate > 0.0 && self.gate_rate <= MAX_GATE_RATE) {
                return Err(domain("gate_rate", self.gate_rate, "(0, 150e6]"));
            }
            if self.gate_on_window < 0.0 || self.gate_on_window * self.gate_rate > 1.0 {
                return Err(domain(
                    "gate_on_window",
                    self.gate_on_window,
                    "[0, 1/gate_rate]",
                ));
            }
        }
        Ok(())
    }

    /// Slot period the detector state advances by: one gate, or one frame
    /// when free-running.
    pub fn slot_period(&self, rep_rate: f64) -> f64 {
        match self.mode {
            DetectorMode::Gated => 1.0 / self.gate_rate,
            DetectorMode::FreeRunning => 1.0 / rep_rate,
        }
    }

    /// Hold-off as a whole number of skipped slots, rounded up so the detector
    /// is never re-armed early.
    pub fn holdoff_slots(&self, rep_rate: f64) -> u64 {
        let slots = self.holdoff_time / self.slot_period(rep_rate);
        // Absorb float noise such as 1e-6 * 119e6 = 119.00000000000001.
        (slots - 1e-9).ceil().max(0.0) as u64
    }

    pub fn dark_probability(&self, rep_rate: f64) -> f64 {
        (self.dark_rate * self.slot_period(rep_rate)).min(1.0)
    }

    /// Afterpulse hazard decay per slot, `exp(-slot / tau)`.
    pub fn afterpulse_decay(&self, rep_rate: f64) -> f64 {
        (-self.slot_period(rep_rate) / self.afterpulse_tau).exp()
    }
}

/// Detections and errors for one basis at one intensity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisCounts {
    pub detections: u64,
    pub errors: u64,
}

/// Sifted detection and error counts per basis and intensity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TallyCounts {
    /// Indexed by intensity (`mu1`, `mu2`, `mu3`).
    pub z: [BasisCounts; 3],
    pub x: [BasisCounts; 3],
}

impl TallyCounts {
    pub fn basis(&self, basis: Basis) -> &[BasisCounts; 3] {
        match basis {
            Basis::Z => &self.z,
            Basis::X => &self.x,
        }
    }

    pub fn basis_mut(&mut self, basis: Basis) -> &mut [BasisCounts; 3] {
        match basis {
            Basis::Z => &mut self.z,
            Basis::X => &mut self.x,
        }
    }

    pub fn record(&mut self, basis: Basis, k: Intensity, error: bool) {
        let c = &mut self.basis_mut(basis)[k.index()];
        c.detections += 1;
        c.errors += u64::from(error);
    }

    pub fn n(&self, basis: Basis, k: Intensity) -> u64 {
        self.basis(basis)[k.index()].detections
    }

    pub fn m(&self, basis: Basis, k: Intensity) -> u64 {
        self.basis(basis)[k.index()].errors
    }

    pub fn n_z(&self) -> u64 {
        self.z.iter().map(|c| c.detections).sum()
    }

    pub fn m_z(&self) -> u64 {
        self.z.iter().map(|c| c.errors).sum()
    }

    pub fn n_x(&self) -> u64 {
        self.x.iter().map(|c| c.detections).sum()
    }

    pub fn m_x(&self) -> u64 {
        self.x.iter().map(|c| c.errors).sum()
    }

    pub fn qber_z(&self) -> Option<f64> {
        let n = self.n_z();
        (n > 0).then(|| self.m_z() as f64 / n as f64)
    }

    pub fn qber_x(&self) -> Option<f64> {
        let n = self.n_x();
        (n > 0).then(|| self.m_x() as f64 / n as f64)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for basis in [Basis::Z, Basis::X] {
            for k in Intensity::ALL {
                let c = self.basis(basis)[k.index()];
                if c.errors > c.detections {
                    return Err(ModelError::InvalidParameters(format!(
                        "{basis} errors at {k} ({}) exceed detections ({})",
                        c.errors, c.detections
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn add(&mut self, other: &TallyCounts) {
        for basis in [Basis::Z, Basis::X] {
            let theirs = *other.basis(basis);
            for (mine, t) in self.basis_mut(basis).iter_mut().zip(theirs) {
                mine.detections += t.detections;
                mine.errors += t.errors;
            }
        }
    }
}

/// Outcome of the finite-key analysis of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretKeyReport {
    pub s_z0_lower: f64,
    pub s_z1_lower: f64,
    pub phi_z_upper: f64,
    pub lambda_ec: f64,
    pub key_length_l: u64,
    /// Secret key rate in bits per second of protocol time.
    pub skr: f64,
    pub elapsed_protocol_time: f64,
}

impl SecretKeyReport {
    pub fn empty() -> Self {
        Self {
            s_z0_lower: 0.0,
            s_z1_lower: 0.0,
            phi_z_upper: 0.5,
            lambda_ec: 0.0,
            key_length_l: 0,
            skr: 0.0,
            elapsed_protocol_time: 0.0,
        }
    }
}

/// `10^(-dB/10)`.
pub fn db_to_transmittance(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Binary Shannon entropy in bits, continuous at the endpoints.
pub fn binary_entropy(x: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain("x", x, "[0, 1]"));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// X-basis error rate of an interferometer with the given visibility.
pub fn qber_from_visibility(vis: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&vis) {
        return Err(domain("visibility", vis, "[0, 1]"));
    }
    Ok((1.0 - vis) / 2.0)
}

/// Probability that a frame carries exactly `n` photons, marginalised over the
/// intensity choice.
pub fn photon_number_prob(params: &ProtocolParams, n: u32) -> f64 {
    params
        .intensities()
        .iter()
        .zip(params.p_mu)
        .map(|(&mu, p)| p * poisson_pmf(mu, n))
        .sum()
}

pub(crate) fn poisson_pmf(mu: f64, n: u32) -> f64 {
    if mu == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    // log-space keeps large n finite
    let ln_fact: f64 = (2..=n).map(|i| (i as f64).ln()).sum();
    (n as f64 * mu.ln() - mu - ln_fact).exp()
}

/// Per-test failure probability when the secrecy budget is split across the
/// deviation tests of the key-length bound.
pub fn epsilon_budget(eps_sec: f64) -> f64 {
    eps_sec / EPSILON_SPLIT
}
