//! Criterion benchmarks for the stages that dominate deployment cost:
//! the spectral frontend per frame, the causal encoder and GRU per
//! step, one 200 ms streaming chunk, and a whole 3 s clip offline.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use wren_bench::{full_model, noise};
use wren_core::encoder::{encoder_step, EncoderScratch, EncoderState};
use wren_core::frontend::Frontend;
use wren_core::head::gru_step;
use wren_core::streaming::{offline_logits, StreamRuntime};

fn bench_frontend_frame(c: &mut Criterion) {
    let model = full_model();
    let mut frontend = Frontend::from_params(&model.filterbank_params()).unwrap();
    let frame = noise(model.config.n_fft, 1);
    let mut out = vec![0.0f32; model.config.n_bins];
    c.bench_function("frontend_frame", |b| {
        b.iter(|| {
            frontend.forward_frame(black_box(&frame), &mut out).unwrap();
            black_box(out[0])
        })
    });
}

fn bench_encoder_step(c: &mut Criterion) {
    let model = full_model();
    let mut state = EncoderState::fresh(&model);
    let mut scratch = EncoderScratch::new(&model);
    let features = noise(model.config.n_bins, 2);
    let mut out = vec![0.0f32; *model.config.channels.last().unwrap()];
    c.bench_function("encoder_step", |b| {
        b.iter(|| {
            encoder_step(&model, &mut state, black_box(&features), &mut out, &mut scratch);
            black_box(out[0])
        })
    });
}

fn bench_gru_step(c: &mut Criterion) {
    let model = full_model();
    let x = noise(model.gru.in_dim, 3);
    let h_prev = vec![0.1f32; model.config.hidden];
    let mut h_out = vec![0.0f32; model.config.hidden];
    c.bench_function("gru_step", |b| {
        b.iter(|| {
            gru_step(&model.gru, black_box(&x), &h_prev, &mut h_out).unwrap();
            black_box(h_out[0])
        })
    });
}

fn bench_stream_chunk(c: &mut Criterion) {
    let model = full_model();
    let mut runtime = StreamRuntime::new(model).unwrap();
    let chunk = noise(6400, 4); // 200 ms at 32 kHz
    let mut state = runtime.open_stream(32_000).unwrap();
    c.bench_function("stream_chunk_200ms", |b| {
        b.iter(|| {
            let pred = runtime.process_chunk(&mut state, black_box(&chunk)).unwrap();
            black_box(pred.class_index)
        })
    });
}

fn bench_offline_clip(c: &mut Criterion) {
    let model = full_model();
    let clip = noise(96_000, 5); // 3 s at 32 kHz
    c.bench_function("offline_clip_3s", |b| {
        b.iter(|| black_box(offline_logits(&model, black_box(&clip)).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_frontend_frame,
    bench_encoder_step,
    bench_gru_step,
    bench_stream_chunk,
    bench_offline_clip
);
criterion_main!(benches);
