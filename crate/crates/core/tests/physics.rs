//! Cross-module physics checks: simulator against closed forms, sifting
//! against the simulator's own tallies, and the shipped presets against the
//! published operating points they were fitted to.

use rayon::prelude::*;

use qkdlab_core::analytic::predict_skr;
use qkdlab_core::calibrate::best_p_mu;
use qkdlab_core::finite_key::{decoy_bounds, DEFAULT_F_EC};
use qkdlab_core::photonics::{run_link, Adversary, Detector, LinkConfig, StopRule};
use qkdlab_core::postproc::sift;
use qkdlab_core::presets::Preset;
use qkdlab_core::rng::{stream_rng, Stream};
use qkdlab_core::sweep::scheduled_params;
use qkdlab_core::{epsilon_budget, Basis, ChannelModel, DetectorMode, DetectorModel, Intensity, ProtocolParams};

fn ideal_detector() -> DetectorModel {
    DetectorModel {
        name: "ideal".into(),
        efficiency: 0.5,
        dark_rate: 0.0,
        mode: DetectorMode::Gated,
        gate_rate: 119e6,
        gate_on_window: 0.5e-9,
        holdoff_time: 0.0,
        afterpulse_amplitude: 0.0,
        afterpulse_tau: 1e-6,
        timing_error: 0.0,
    }
}

fn sip_link(loss_db: f64, stop: StopRule, seed: u64) -> LinkConfig {
    let preset = Preset::builtin("sip-polimi-10um").unwrap();
    let params = scheduled_params(&preset, &ProtocolParams::default(), loss_db);
    LinkConfig::new(
        params,
        ChannelModel::default().with_loss(loss_db),
        preset.detector.clone(),
        preset.detector,
        stop,
        seed,
    )
}

#[test]
fn sifting_the_event_stream_reproduces_the_simulator_tallies() {
    let mut cfg = sip_link(10.0, StopRule::SiftedZ(20_000), 5);
    cfg.keep_events = true;
    let run = run_link(&cfg).unwrap();
    let frames: Vec<_> = run.events.iter().map(|(f, _)| *f).collect();
    let detections: Vec<_> = run.events.iter().map(|(_, d)| *d).collect();
    let (key_a, key_b, tallies) = sift(&frames, &detections).unwrap();
    assert_eq!(tallies, run.tallies);
    assert_eq!(key_a.len() as u64, run.tallies.n_z());
    assert_eq!(key_b.len(), key_a.len());
    let errors = key_a.bits.iter().zip(&key_b.bits).filter(|(a, b)| a != b).count() as u64;
    assert_eq!(errors, run.tallies.m_z());
}

#[test]
fn visibility_0872_gives_qber_x_near_0064() {
    let channel = ChannelModel {
        channel_loss_db: 3.0,
        visibility: 0.872,
        ..ChannelModel::default()
    };
    let cfg = LinkConfig::new(
        ProtocolParams::default(),
        channel,
        ideal_detector(),
        ideal_detector(),
        StopRule::Frames(2_000_000),
        11,
    );
    let run = run_link(&cfg).unwrap();
    let n = run.tallies.n_x() as f64;
    let q = run.tallies.qber_x().unwrap();
    let sigma = (0.064 * 0.936 / n).sqrt();
    assert!((q - 0.064).abs() <= 4.0 * sigma, "QBER_X {q} over {n} detections");
}

#[test]
fn dead_time_law_holds_for_ten_free_running_configurations() {
    let rep = 100e6;
    let slots = 20_000_000u64;
    let configs: Vec<(f64, f64)> = [1e4, 5e4, 1e5, 5e5, 1e6]
        .iter()
        .flat_map(|&r| [(r, 2e-6), (r, 20e-6)])
        .collect();
    let failures: Vec<String> = configs
        .par_iter()
        .enumerate()
        .filter_map(|(i, &(r, tau))| {
            let model = DetectorModel {
                name: "free-running".into(),
                mode: DetectorMode::FreeRunning,
                dark_rate: r,
                holdoff_time: tau,
                gate_rate: 0.0,
                gate_on_window: 0.0,
                ..ideal_detector()
            };
            let mut det = Detector::new(&model, rep, Basis::Z);
            let mut rng = stream_rng(300 + i as u64, Stream::DetectorZ);
            let clicks = (0..slots)
                .filter(|&s| det.step(s, [0, 0], &mut rng).unwrap().is_some())
                .count() as f64;
            let seconds = slots as f64 / rep;
            let expected = r / (1.0 + r * tau) * seconds;
            let z = (clicks - expected).abs() / expected.sqrt();
            (z > 3.0).then(|| format!("R={r} tau={tau}: {clicks} vs {expected:.0} ({z:.2} sigma)"))
        })
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn source_intensity_fractions_match_p_mu() {
    let params = ProtocolParams::default();
    let cfg = LinkConfig::new(
        params.clone(),
        ChannelModel::default(),
        ideal_detector(),
        ideal_detector(),
        StopRule::Frames(1_000_000),
        3,
    );
    let mut counts = [0u64; 3];
    for f in qkdlab_core::photonics::generate_frames(&params, 1_000_000, cfg.seed) {
        counts[f.intensity.index()] += 1;
    }
    for k in Intensity::ALL {
        let p = params.p_mu[k.index()];
        let expected = p * 1e6;
        let sigma = (1e6 * p * (1.0 - p)).sqrt().max(1.0);
        assert!((counts[k.index()] as f64 - expected).abs() <= 4.0 * sigma, "{k:?}: {counts:?}");
    }
}

#[test]
fn decoy_bounds_hold_at_small_scale() {
    let held: Vec<[bool; 3]> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let cfg = sip_link(3.0, StopRule::SiftedZ(10_000), 500 + i);
            let run = run_link(&cfg).unwrap();
            let b = decoy_bounds(&run.tallies, &cfg.params, epsilon_budget(cfg.params.eps_sec)).unwrap();
            let gt = &run.ground_truth;
            [
                gt.z_vacuum() as f64 >= b.s_z0_lower,
                gt.z_single() as f64 >= b.s_z1_lower,
                gt.x_single_error_ratio().unwrap_or(0.0) <= b.phi_z_upper,
            ]
        })
        .collect();
    for j in 0..3 {
        assert!(held.iter().all(|h| h[j]), "bound {j} failed in {held:?}");
    }
}

#[test]
fn full_intercept_resend_drives_both_qbers_to_a_quarter() {
    let mut cfg = LinkConfig::new(
        ProtocolParams::default(),
        ChannelModel {
            visibility: 1.0,
            ..ChannelModel::default().with_loss(0.0)
        },
        ideal_detector(),
        ideal_detector(),
        StopRule::Frames(2_000_000),
        21,
    );
    cfg.adversary = Some(Adversary::InterceptResend { fraction: 1.0 });
    let run = run_link(&cfg).unwrap();
    for (label, q, n) in [
        ("Z", run.tallies.qber_z().unwrap(), run.tallies.n_z()),
        ("X", run.tallies.qber_x().unwrap(), run.tallies.n_x()),
    ] {
        let sigma = (0.25 * 0.75 / n as f64).sqrt();
        assert!((q - 0.25).abs() <= 4.0 * sigma, "QBER_{label} {q} over {n}");
    }
}

/// Best analytic operating point of a preset at the published 1e9 block.
fn published_point(name: &str, loss_db: f64) -> qkdlab_core::analytic::Prediction {
    let preset = Preset::builtin(name).unwrap();
    let base = ProtocolParams {
        block_size_nz: 1_000_000_000,
        ..ProtocolParams::default()
    };
    let params = scheduled_params(&preset, &base, loss_db);
    let channel = ChannelModel::default().with_loss(loss_db);
    let (params, _) = best_p_mu(&params, &channel, &preset.detector, &preset.detector, DEFAULT_F_EC).unwrap();
    predict_skr(&params, &channel, &preset.detector, &preset.detector, DEFAULT_F_EC).unwrap()
}

#[test]
fn sip_preset_at_20_db_reproduces_the_field_trial() {
    let p = published_point("sip-polimi-10um", 20.0);
    let qber_z = p.rates.qber_z.unwrap();
    assert!((0.03..=0.07).contains(&qber_z), "QBER_Z {qber_z}");
    let skr = p.skr();
    assert!((500.0..=4500.0).contains(&skr), "SKR {skr}");
}

#[test]
fn id221_loses_to_sip_at_20_db_by_at_least_seven() {
    let sip = published_point("sip-polimi-10um", 20.0).skr();
    let id221 = published_point("id221", 20.0).skr();
    assert!(sip >= 7.0 * id221, "SiP {sip} vs ID221 {id221}");
}

