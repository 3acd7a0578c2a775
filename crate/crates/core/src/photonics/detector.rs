use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{Basis, DetectorModel};
use crate::rng::SimRng;

/// Ground-truth cause of a click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Signal,
    Dark,
    Afterpulse,
}

impl Origin {
    pub const ALL: [Origin; 3] = [Origin::Signal, Origin::Dark, Origin::Afterpulse];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Origin::Signal => "signal",
            Origin::Dark => "dark",
            Origin::Afterpulse => "afterpulse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Click {
    /// Z arm: time bin. X arm: 0 constructive, 1 destructive.
    pub bit: u8,
    pub origin: Origin,
}

/// Trapped charge left behind by earlier avalanches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapDeposit {
    /// Release probability per slot at `deposited_at`.
    pub weight: f64,
    pub deposited_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub gates_remaining_off: u64,
    /// All traps share one release constant, so deposits are merged into a
    /// single entry on insertion; the hazard is unchanged by the merge.
    pub trapped_charge: Vec<TrapDeposit>,
}

/// One detector with its model constants resolved against the slot clock.
#[derive(Debug, Clone)]
pub struct Detector {
    arm: Basis,
    efficiency: f64,
    p_dark: f64,
    holdoff_slots: u64,
    amplitude: f64,
    ln_decay: f64,
    timing_error: f64,
    pub state: DetectorState,
}

impl Detector {
    pub fn new(model: &DetectorModel, rep_rate: f64, arm: Basis) -> Self {
        Self {
            arm,
            efficiency: model.efficiency,
            p_dark: model.dark_probability(rep_rate),
            holdoff_slots: model.holdoff_slots(rep_rate),
            amplitude: model.afterpulse_amplitude,
            ln_decay: -model.slot_period(rep_rate) / model.afterpulse_tau,
            timing_error: model.timing_error,
            state: DetectorState::default(),
        }
    }

    pub fn holdoff_slots(&self) -> u64 {
        self.holdoff_slots
    }

    /// Afterpulse probability for the gate at `slot`.
    pub fn afterpulse_hazard(&self, slot: u64) -> f64 {
        self.state
            .trapped_charge
            .iter()
            .map(|d| d.weight * (self.ln_decay * slot.saturating_sub(d.deposited_at) as f64).exp())
            .sum::<f64>()
            .min(1.0)
    }

    /// Upper bound on the hazard that skips the exponentials.
    fn trapped_weight(&self) -> f64 {
        self.state.trapped_charge.iter().map(|d| d.weight).sum()
    }

    /// Advances the detector by one gate. Always consumes six draws.
    ///
    /// Causes are tested in the order signal, dark, afterpulse, which realizes
    /// the inclusive-or of the three and credits a click to the first cause
    /// that fired.
    pub fn step(&mut self, slot: u64, arrivals: [u32; 2], rng: &mut SimRng) -> Result<Option<Click>, SimError> {
        let u_signal: f64 = rng.random();
        let u_pick: f64 = rng.random();
        let u_timing: f64 = rng.random();
        let u_dark: f64 = rng.random();
        let u_after: f64 = rng.random();
        let u_bit: f64 = rng.random();

        if let Some(d) = self.state.trapped_charge.first() {
            if d.deposited_at > slot {
                return Err(SimError::InconsistentState(format!(
                    "trap deposited at slot {} is ahead of slot {slot}",
                    d.deposited_at
                )));
            }
        }
        if self.state.gates_remaining_off > 0 {
            self.state.gates_remaining_off -= 1;
            return Ok(None);
        }

        let photons = arrivals[0] + arrivals[1];
        let p_signal = if photons == 0 {
            0.0
        } else {
            1.0 - (1.0 - self.efficiency).powi(photons as i32)
        };
        let click = if u_signal < p_signal {
            let mut bit = u8::from(u_pick * photons as f64 >= arrivals[0] as f64);
            if self.arm == Basis::Z && u_timing < self.timing_error {
                bit ^= 1;
            }
            Some(Click {
                bit,
                origin: Origin::Signal,
            })
        } else if u_dark < self.p_dark {
            Some(Click {
                bit: u8::from(u_bit < 0.5),
                origin: Origin::Dark,
            })
        } else if self.amplitude > 0.0 && u_after < self.trapped_weight() && u_after < self.afterpulse_hazard(slot) {
            Some(Click {
                bit: u8::from(u_bit < 0.5),
                origin: Origin::Afterpulse,
            })
        } else {
            None
        };

        if click.is_some() {
            self.state.gates_remaining_off = self.holdoff_slots;
            if self.amplitude > 0.0 {
                let weight = self.afterpulse_hazard(slot) + self.amplitude;
                self.state.trapped_charge.clear();
                // Below this the trap can never fire again in practice.
                if weight > 1e-300 {
                    self.state.trapped_charge.push(TrapDeposit {
                        weight,
                        deposited_at: slot,
                    });
                }
            }
        }
        Ok(click)
    }
}

/// Single-gate form of [`Detector::step`] that threads the state explicitly.
pub fn detect(
    arrivals: [u32; 2],
    model: &DetectorModel,
    arm: Basis,
    rep_rate: f64,
    slot: u64,
    state: DetectorState,
    rng: &mut SimRng,
) -> Result<(Option<Click>, DetectorState), SimError> {
    let mut det = Detector::new(model, rep_rate, arm);
    det.state = state;
    let click = det.step(slot, arrivals, rng)?;
    Ok((click, det.state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DetectorMode;
    use crate::rng::{stream_rng, Stream};

    fn model(mode: DetectorMode, holdoff: f64, dark: f64) -> DetectorModel {
        DetectorModel {
            name: "test".into(),
            efficiency: 0.25,
            dark_rate: dark,
            mode,
            gate_rate: 119e6,
            gate_on_window: 1e-9,
            holdoff_time: holdoff,
            afterpulse_amplitude: 0.0,
            afterpulse_tau: 1e-6,
            timing_error: 0.0,
        }
    }

    #[test]
    fn silent_detector_never_clicks() {
        let mut det = Detector::new(&model(DetectorMode::Gated, 1e-6, 0.0), 119e6, Basis::Z);
        let mut rng = stream_rng(1, Stream::DetectorZ);
        for slot in 0..100_000 {
            assert!(det.step(slot, [0, 0], &mut rng).unwrap().is_none());
        }
    }

    fn saturated_rate(m: &DetectorModel, slots: u64) -> f64 {
        let mut det = Detector::new(m, 119e6, Basis::Z);
        let mut rng = stream_rng(2, Stream::DetectorZ);
        let mut clicks = 0u64;
        for slot in 0..slots {
            if det.step(slot, [20, 20], &mut rng).unwrap().is_some() {
                clicks += 1;
            }
        }
        clicks as f64 / (slots as f64 / 119e6)
    }

    #[test]
    fn sip_saturates_near_one_megahertz() {
        let m = model(DetectorMode::Gated, 1e-6, 10.8e3);
        let rate = saturated_rate(&m, 11_900_000);
        assert!((rate - 1e6).abs() / 1e6 < 0.05, "rate {rate}");
    }

    #[test]
    fn id221_saturates_near_fifty_kilohertz() {
        let m = model(DetectorMode::FreeRunning, 20e-6, 2.5e3);
        let rate = saturated_rate(&m, 11_900_000);
        assert!((rate - 50e3).abs() / 50e3 < 0.05, "rate {rate}");
    }

    #[test]
    fn clicks_respect_holdoff() {
        let mut m = model(DetectorMode::Gated, 1e-6, 5e6);
        m.afterpulse_amplitude = 0.05;
        let mut det = Detector::new(&m, 119e6, Basis::X);
        let mut rng = stream_rng(5, Stream::DetectorX);
        let mut last: Option<u64> = None;
        for slot in 0..2_000_000 {
            if det.step(slot, [0, (slot % 3) as u32], &mut rng).unwrap().is_some() {
                if let Some(prev) = last {
                    let gap = (slot - prev) as f64 / 119e6;
                    assert!(gap >= 1e-6);
                }
                last = Some(slot);
            }
        }
        assert!(last.is_some());
    }

    #[test]
    fn explicit_state_form_matches_stepper() {
        let m = model(DetectorMode::Gated, 1e-6, 1e6);
        let mut a = Detector::new(&m, 119e6, Basis::Z);
        let mut rng_a = stream_rng(9, Stream::DetectorZ);
        let mut rng_b = stream_rng(9, Stream::DetectorZ);
        let mut state = DetectorState::default();
        for slot in 0..50_000 {
            let arrivals = [(slot % 7 == 0) as u32, 0];
            let ca = a.step(slot, arrivals, &mut rng_a).unwrap();
            let (cb, s) = detect(arrivals, &m, Basis::Z, 119e6, slot, state, &mut rng_b).unwrap();
            state = s;
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn trap_from_the_future_is_an_internal_error() {
        let m = model(DetectorMode::Gated, 1e-6, 0.0);
        let state = DetectorState {
            gates_remaining_off: 0,
            trapped_charge: vec![TrapDeposit {
                weight: 0.1,
                deposited_at: 10,
            }],
        };
        let mut rng = stream_rng(1, Stream::DetectorZ);
        assert!(detect([0, 0], &m, Basis::Z, 119e6, 5, state, &mut rng).is_err());
    }
}
