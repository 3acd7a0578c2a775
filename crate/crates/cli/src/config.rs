//! Run configuration: built-in defaults, then a preset, then the config file,
//! then override files, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qkdlab_core::link::SessionConfig;
use qkdlab_core::photonics::{Adversary, LinkConfig, StopRule};
use qkdlab_core::presets::Preset;
use qkdlab_core::{ChannelModel, DetectorModel, ProtocolParams};

pub const CONFIG_FORMAT_VERSION: u32 = 1;
pub const CONFIG_DIR_ENV: &str = "QKDLAB_CONFIG_DIR";
pub const DEFAULT_PRESET: &str = "sip-polimi-10um";
pub const PAPER_SCALE_NZ: u64 = 1_000_000_000;

/// Input the user got wrong; reported with exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Closed-form expected counts.
    Analytic,
    /// Event-by-event simulation followed by sifting and estimation.
    #[default]
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    /// Built-in detector preset; supplies the detector and, unless the
    /// protocol section sets them, the intensities for the channel loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub mode: Mode,
    pub seed: u64,
    /// Reconciliation inefficiency.
    pub f_ec: f64,
    /// Share of the sifted Z key disclosed for QBER estimation.
    pub sample_fraction: f64,
    /// Key-confirmation tag length in bits.
    pub tag_bits: u32,
    /// Monte Carlo stop rule: sifted Z detections (defaults to
    /// `protocol.block_size_nz`) or a fixed number of frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_z: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<u64>,
    pub max_frames: u64,
    pub protocol: ProtocolParams,
    pub channel: ChannelModel,
    pub detector: DetectorModel,
    /// X-arm detector when it differs from the Z arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_x: Option<DetectorModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<Adversary>,
    /// The user fixed mu1 or mu2, so preset schedules leave them alone.
    #[serde(skip)]
    pub pinned_intensities: bool,
}

impl RunConfig {
    fn defaults(detector: DetectorModel) -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            preset: None,
            mode: Mode::default(),
            seed: 1,
            f_ec: qkdlab_core::finite_key::DEFAULT_F_EC,
            sample_fraction: qkdlab_core::postproc::DEFAULT_SAMPLE_FRACTION,
            tag_bits: qkdlab_core::postproc::DEFAULT_TAG_BITS,
            n_z: None,
            frames: None,
            max_frames: 100_000_000_000,
            protocol: ProtocolParams::default(),
            channel: ChannelModel::default(),
            detector,
            detector_x: None,
            adversary: None,
            pinned_intensities: false,
        }
    }

    pub fn stop_rule(&self) -> StopRule {
        match (self.frames, self.n_z) {
            (Some(f), _) => StopRule::Frames(f),
            (None, Some(n)) => StopRule::SiftedZ(n),
            (None, None) => StopRule::SiftedZ(self.protocol.block_size_nz),
        }
    }

    pub fn detector_x(&self) -> &DetectorModel {
        self.detector_x.as_ref().unwrap_or(&self.detector)
    }

    pub fn link_config(&self) -> LinkConfig {
        let mut cfg = LinkConfig::new(
            self.protocol.clone(),
            self.channel.clone(),
            self.detector.clone(),
            self.detector_x().clone(),
            self.stop_rule(),
            self.seed,
        );
        cfg.max_frames = self.max_frames;
        cfg.adversary = self.adversary;
        cfg
    }

    pub fn session_config(&self) -> SessionConfig {
        let mut s = SessionConfig::new(self.link_config());
        s.f_ec = self.f_ec;
        s.sample_fraction = self.sample_fraction;
        s.tag_bits = self.tag_bits;
        s
    }

    /// Same configuration at another channel loss, re-reading the preset
    /// schedule unless the intensities were pinned.
    pub fn at_loss(&self, loss_db: f64) -> Self {
        let mut c = self.clone();
        c.channel.channel_loss_db = loss_db;
        if !c.pinned_intensities {
            c.apply_schedule();
        }
        c
    }

    /// Same configuration with a built-in preset's detector on both arms.
    pub fn with_preset(&self, preset: &Preset) -> Self {
        let mut c = self.clone();
        c.preset = Some(preset.name.clone());
        c.detector = preset.detector.clone();
        c.detector_x = None;
        if !c.pinned_intensities {
            c.apply_schedule();
        }
        c
    }

    fn apply_schedule(&mut self) {
        if let Some(preset) = self.preset.as_deref().and_then(Preset::builtin) {
            if let Some(s) = preset.schedule_for(self.channel.channel_loss_db) {
                self.protocol.mu1 = s.mu1;
                self.protocol.mu2 = s.mu2;
                self.protocol.mu3 = s.mu3;
            }
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(invalid(format!(
                "format_version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let check = |section: &str, r: Result<(), qkdlab_core::ModelError>| {
            r.map_err(|e| invalid(format!("[{section}] {e}")))
        };
        check("protocol", self.protocol.validate())?;
        check("channel", self.channel.validate())?;
        check("detector", self.detector.validate())?;
        if let Some(d) = &self.detector_x {
            check("detector_x", d.validate())?;
        }
        if self.frames == Some(0) {
            return Err(invalid("frames = 0: the run must transmit at least one frame"));
        }
        if self.n_z == Some(0) {
            return Err(invalid("n_z = 0: the sifted Z target must be positive"));
        }
        if let Some(Adversary::InterceptResend { fraction }) = self.adversary {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(invalid(format!("adversary fraction {fraction} is outside [0, 1]")));
            }
        }
        check("session", self.session_config().validate())?;
        Ok(())
    }
}

/// Command-line settings that take precedence over every file.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub preset: Option<String>,
    pub loss_db: Option<f64>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub n_z: Option<u64>,
    pub frames: Option<u64>,
    pub paper_scale: bool,
}

/// Finds a config file: as given, else under `$QKDLAB_CONFIG_DIR`.
pub fn locate(path: &Path) -> anyhow::Result<PathBuf> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return Ok(candidate);
            }
        }
    }
    Err(invalid(format!("config file {} not found", path.display())))
}

fn read_table(path: &Path) -> anyhow::Result<toml::Table> {
    let path = locate(path)?;
    let text = std::fs::read_to_string(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Recursive table merge; values in `top` win.
pub fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn sets(table: &toml::Table, section: &str, key: &str) -> bool {
    table
        .get(section)
        .and_then(toml::Value::as_table)
        .is_some_and(|t| t.contains_key(key))
}

/// Loads and validates the effective configuration.
pub fn load(config: Option<&Path>, overrides: &[PathBuf], flags: &FlagOverrides) -> anyhow::Result<RunConfig> {
    let mut user = match config {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    for p in overrides {
        merge(&mut user, read_table(p)?);
    }
    if let Some(name) = &flags.preset {
        user.insert("preset".into(), toml::Value::String(name.clone()));
    }
    let preset_name = match user.get("preset") {
        Some(toml::Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(invalid(format!("preset must be a string, found {other}"))),
        None => None,
    };
    let preset = match &preset_name {
        Some(name) => Some(Preset::builtin(name).ok_or_else(|| {
            let known: Vec<_> = Preset::builtin_names().collect();
            invalid(format!("unknown preset '{name}' (known: {})", known.join(", ")))
        })?),
        None => None,
    };
    let base_detector = match &preset {
        Some(p) => p.detector.clone(),
        None => Preset::builtin(DEFAULT_PRESET).expect("built-in").detector,
    };
    let pinned = sets(&user, "protocol", "mu1") || sets(&user, "protocol", "mu2");

    let mut table = toml::Table::try_from(RunConfig::defaults(base_detector)).expect("defaults serialize");
    merge(&mut table, user);
    let mut cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| invalid(format!("configuration: {}", e.message())))?;

    if let Some(loss) = flags.loss_db {
        cfg.channel.channel_loss_db = loss;
    }
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = flags.mode {
        cfg.mode = mode;
    }
    if flags.n_z.is_some() {
        cfg.n_z = flags.n_z;
    }
    if flags.frames.is_some() {
        cfg.frames = flags.frames;
    }
    if flags.paper_scale {
        cfg.protocol.block_size_nz = PAPER_SCALE_NZ;
        cfg.n_z = None;
        cfg.frames = None;
    }
    cfg.pinned_intensities = pinned;
    if !pinned {
        cfg.apply_schedule();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Annotated reference of every configuration key.
pub const SCHEMA: &str = r#"# qkdlab run configuration, format_version 1.
# Every key is optional except format_version; unknown keys are rejected.
format_version = 1
preset = "sip-polimi-10um"   # built-in detector; `qkdlab presets` lists them
mode = "monte_carlo"         # "monte_carlo" or "analytic"
seed = 1                     # root seed of every random stream
f_ec = 1.16                  # reconciliation inefficiency (>= 1)
sample_fraction = 0.05       # share of sifted Z bits disclosed for QBER_Z
tag_bits = 64                # key-confirmation tag length (bits)
# n_z = 100000               # Monte Carlo stop: sifted Z detections
# frames = 10000000          # Monte Carlo stop: transmitted frames (wins over n_z)
max_frames = 100000000000    # give up on n_z after this many frames

[protocol]
mu1 = 0.41                   # signal intensity (mean photons per pulse)
mu2 = 0.16                   # decoy intensity (mean photons per pulse)
mu3 = 0.0                    # optional vacuum intensity (diagnostic only)
p_mu = [0.7, 0.3, 0.0]       # probabilities of mu1, mu2, mu3 (sum to 1)
p_z_alice = 0.5              # transmitter Z-basis probability
p_z_bob = 0.5                # receiver Z-basis probability
rep_rate = 119e6             # frames per second (Hz)
block_size_nz = 100000       # sifted Z detections per finite-key block
eps_sec = 1e-12              # secrecy parameter
eps_corr = 1e-12             # correctness parameter
bin_separation = 800e-12     # time-bin separation (s), bookkeeping only

[channel]
channel_loss_db = 20.0       # fibre loss (dB)
receiver_loss_z_db = 1.0     # receiver loss before the Z detector (dB)
receiver_loss_x_db = 3.0     # receiver loss before the X detector (dB)
visibility = 0.944           # interferometer visibility, QBER_X = (1 - V) / 2

[detector]                   # also [detector_x] for a different X-arm detector
name = "sip-polimi-10um"
efficiency = 0.8143          # detection efficiency
dark_rate = 10800.0          # dark counts per second (Hz)
mode = "gated"               # "gated" or "free_running"
gate_rate = 119e6            # gates per second (Hz), gated only
gate_on_window = 0.5e-9      # gate ON time (s), gated only
holdoff_time = 1e-6          # dead time after each click (s)
afterpulse_amplitude = 0.008 # trapped-charge weight per click, in [0, 1)
afterpulse_tau = 0.3e-6      # trap release time constant (s)
timing_error = 0.002955      # probability a click lands in the wrong Z bin

# [adversary]
# kind = "intercept_resend"
# fraction = 1.0             # share of non-empty frames attacked
"#;

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn schema_is_a_valid_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "schema.toml", SCHEMA);
        let cfg = load(Some(&p), &[], &FlagOverrides::default()).unwrap();
        assert_eq!(cfg.protocol, ProtocolParams::default());
        assert_eq!(cfg.detector, Preset::builtin(DEFAULT_PRESET).unwrap().detector);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.toml", "format_version = 1\n[protocol]\nmu_1 = 0.4\n");
        let err = load(Some(&p), &[], &FlagOverrides::default()).unwrap_err();
        assert!(err.downcast_ref::<Invalid>().is_some());
        assert!(err.to_string().contains("mu_1"), "{err}");
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let base = write(dir.path(), "c.toml", "format_version = 1\npreset = \"id221\"\nseed = 4\n");
        let over = write(dir.path(), "o.toml", "seed = 5\n[channel]\nvisibility = 0.9\n");
        let flags = FlagOverrides {
            loss_db: Some(3.0),
            ..FlagOverrides::default()
        };
        let cfg = load(Some(&base), &[over], &flags).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.channel.visibility, 0.9);
        assert_eq!(cfg.detector.name, "id221");
        // the id221 schedule at 3 dB
        assert_eq!((cfg.protocol.mu1, cfg.protocol.mu2), (0.21, 0.06));
    }

    #[test]
    fn pinned_intensities_beat_the_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.toml", "format_version = 1\n[protocol]\nmu1 = 0.5\n");
        let flags = FlagOverrides {
            preset: Some("sip-polimi-10um".into()),
            loss_db: Some(3.0),
            ..FlagOverrides::default()
        };
        let cfg = load(Some(&p), &[], &flags).unwrap();
        assert_eq!(cfg.protocol.mu1, 0.5);
    }

    #[test]
    fn zero_frames_is_a_validation_error() {
        let flags = FlagOverrides {
            frames: Some(0),
            ..FlagOverrides::default()
        };
        let err = load(None, &[], &flags).unwrap_err();
        assert!(err.downcast_ref::<Invalid>().is_some());
    }

    #[test]
    fn config_dir_env_is_searched() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "env.toml", "format_version = 1\nseed = 77\n");
        std::env::set_var(CONFIG_DIR_ENV, dir.path());
        let cfg = load(Some(Path::new("env.toml")), &[], &FlagOverrides::default()).unwrap();
        std::env::remove_var(CONFIG_DIR_ENV);
        assert_eq!(cfg.seed, 77);
    }
}
