//! Criterion benchmarks for the hot paths: the frame loop, privacy
//! amplification, the wire codec and the analytic key-rate prediction.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};

use qkdlab_core::analytic::predict_skr;
use qkdlab_core::finite_key::DEFAULT_F_EC;
use qkdlab_core::link::wire::{decode_message, encode_message, MsgType, WireMessage, DEFAULT_MAX_FRAME, WIRE_VERSION};
use qkdlab_core::photonics::{run_link, LinkConfig, StopRule};
use qkdlab_core::postproc::{privacy_amplify, PaSeed};
use qkdlab_core::presets::Preset;
use qkdlab_core::rng::{stream_rng, Stream};
use qkdlab_core::{ChannelModel, ProtocolParams};

fn sip_link(loss_db: f64, frames: u64) -> LinkConfig {
    let preset = Preset::builtin("sip-polimi-10um").expect("built-in preset");
    LinkConfig::new(
        ProtocolParams::default(),
        ChannelModel::default().with_loss(loss_db),
        preset.detector.clone(),
        preset.detector,
        StopRule::Frames(frames),
        1,
    )
}

fn frame_loop(c: &mut Criterion) {
    const FRAMES: u64 = 1_000_000;
    let mut group = c.benchmark_group("run_link");
    group.throughput(Throughput::Elements(FRAMES));
    group.sample_size(10);
    for loss in [3.0, 20.0] {
        let cfg = sip_link(loss, FRAMES);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{loss}dB")), &cfg, |b, cfg| {
            b.iter(|| run_link(black_box(cfg)).expect("simulation"))
        });
    }
    group.finish();
}

fn toeplitz(c: &mut Criterion) {
    let mut group = c.benchmark_group("privacy_amplify");
    group.sample_size(10);
    for n in [10_000usize, 100_000] {
        let l = n / 2;
        let mut rng = stream_rng(7, Stream::PrivacyAmplification);
        let key: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let seed = PaSeed::random(l, n, &mut rng);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &(key, seed), |b, (key, seed)| {
            b.iter(|| privacy_amplify(black_box(key), l, seed).expect("amplify"))
        });
    }
    group.finish();
}

fn codec(c: &mut Criterion) {
    let msg = WireMessage {
        version: WIRE_VERSION,
        session_id: [9; 16],
        seq: 42,
        msg_type: MsgType::DetectionReport,
        payload: vec![0x5a; 64 * 1024],
    };
    let bytes = encode_message(&msg);
    let mut group = c.benchmark_group("wire");
    group.throughput(Throughput::Bytes(bytes.len() as u64));
    group.bench_function("encode_64k", |b| b.iter(|| encode_message(black_box(&msg))));
    group.bench_function("decode_64k", |b| {
        b.iter(|| decode_message(black_box(&bytes), DEFAULT_MAX_FRAME).expect("decode"))
    });
    group.finish();
}

fn prediction(c: &mut Criterion) {
    let preset = Preset::builtin("sip-polimi-10um").expect("built-in preset");
    let params = ProtocolParams::default();
    let channel = ChannelModel::default();
    c.bench_function("predict_skr_20dB", |b| {
        b.iter(|| predict_skr(black_box(&params), &channel, &preset.detector, &preset.detector, DEFAULT_F_EC))
    });
}

pub fn benchmarks(c: &mut Criterion) {
    frame_loop(c);
    toeplitz(c);
    codec(c);
    prediction(c);
}
