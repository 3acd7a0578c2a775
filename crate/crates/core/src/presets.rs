//! Named detector parameter sets shipped with the crate.
//!
//! Each preset carries a provenance note saying which numbers were measured
//! settings and which are outputs of a calibration against published key
//! rates.

use serde::{Deserialize, Serialize};

use crate::model::{DetectorModel, ModelError};

pub const PRESET_FORMAT_VERSION: u32 = 1;

/// Intensities used at one channel loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePoint {
    pub loss_db: f64,
    pub mu1: f64,
    pub mu2: f64,
    #[serde(default)]
    pub mu3: f64,
}

/// Published figures the preset was compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub loss_db: Vec<f64>,
    pub skr_bps: Vec<f64>,
    #[serde(default)]
    pub qber_z: Vec<f64>,
    #[serde(default)]
    pub qber_x: Vec<f64>,
}

impl Reference {
    pub fn skr_at(&self, loss_db: f64) -> Option<f64> {
        self.loss_db
            .iter()
            .position(|&l| (l - loss_db).abs() < 1e-9)
            .and_then(|i| self.skr_bps.get(i).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub format_version: u32,
    pub name: String,
    pub description: String,
    pub provenance: String,
    pub detector: DetectorModel,
    #[serde(default)]
    pub schedule: Vec<SchedulePoint>,
    pub reference: Option<Reference>,
}

const BUILTIN: [(&str, &str); 5] = [
    ("sip-polimi-10um", include_str!("../presets/sip-polimi-10um.toml")),
    ("sip-polimi-10um-2v", include_str!("../presets/sip-polimi-10um-2v.toml")),
    ("sip-polimi-10um-3v", include_str!("../presets/sip-polimi-10um-3v.toml")),
    ("sip-polimi-25um", include_str!("../presets/sip-polimi-25um.toml")),
    ("id221", include_str!("../presets/id221.toml")),
];

impl Preset {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let preset: Preset =
            toml::from_str(text).map_err(|e| ModelError::InvalidParameters(format!("preset: {e}")))?;
        if preset.format_version != PRESET_FORMAT_VERSION {
            return Err(ModelError::InvalidParameters(format!(
                "preset format_version {} is not supported (expected {PRESET_FORMAT_VERSION})",
                preset.format_version
            )));
        }
        preset.detector.validate()?;
        Ok(preset)
    }

    /// Built-in preset by name.
    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::parse(text).expect("built-in presets are valid"))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    /// Schedule entry closest to `loss_db`, ties going to the lower loss.
    pub fn schedule_for(&self, loss_db: f64) -> Option<SchedulePoint> {
        self.schedule.iter().copied().min_by(|a, b| {
            let da = (a.loss_db - loss_db).abs();
            let db = (b.loss_db - loss_db).abs();
            da.total_cmp(&db).then(a.loss_db.total_cmp(&b.loss_db))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DetectorMode;

    #[test]
    fn every_builtin_parses() {
        for name in Preset::builtin_names() {
            let p = Preset::builtin(name).unwrap();
            assert_eq!(p.name, name);
            assert_eq!(p.detector.name, name);
            assert_eq!(p.schedule.len(), 5);
        }
    }

    #[test]
    fn published_settings_are_kept() {
        let sip = Preset::builtin("sip-polimi-10um").unwrap().detector;
        assert_eq!((sip.holdoff_time, sip.dark_rate, sip.gate_rate), (1e-6, 10.8e3, 119e6));
        assert_eq!(sip.holdoff_slots(119e6), 119);
        let id = Preset::builtin("id221").unwrap().detector;
        assert_eq!(id.mode, DetectorMode::FreeRunning);
        assert_eq!((id.holdoff_time, id.dark_rate, id.efficiency), (20e-6, 2.5e3, 0.2));
        assert_eq!(Preset::builtin("sip-polimi-25um").unwrap().detector.holdoff_time, 10e-6);
    }

    #[test]
    fn schedule_lookup_takes_the_nearest_point() {
        let p = Preset::builtin("id221").unwrap();
        assert_eq!(p.schedule_for(3.0).unwrap().mu1, 0.21);
        assert_eq!(p.schedule_for(12.4).unwrap().loss_db, 10.0);
        assert_eq!(p.schedule_for(40.0).unwrap().loss_db, 20.0);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let text = include_str!("../presets/id221.toml");
        assert!(Preset::parse(&text.replace("format_version = 1", "format_version = 2")).is_err());
        assert!(Preset::parse(&text.replace("timing_error", "timing_eror")).is_err());
    }
}
