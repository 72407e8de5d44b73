use std::hint::black_box;

use aqc_bench::{corpus, small_model};
use aqc_core::bitstream::{pack, unpack};
use aqc_core::codec::token_features;
use aqc_core::decoder::ChunkedVocoder;
use aqc_core::dsp::FbankExtractor;
use aqc_core::metrics::{mr_mel, stoi};
use criterion::{criterion_group, criterion_main, Criterion};

fn analysis(c: &mut Criterion) {
    let x = corpus(1, 1, 4.0, 7).remove(0);
    let fb = FbankExtractor::new();
    c.bench_function("fbank_4s", |b| b.iter(|| fb.compute(black_box(&x)).unwrap()));
    c.bench_function("token_features_4s", |b| b.iter(|| token_features(black_box(&x)).unwrap()));
}

fn codec(c: &mut Criterion) {
    let model = small_model();
    let x = corpus(1, 1, 4.0, 9).remove(0);
    let frames = model.tokenize(&x, 3).unwrap();
    c.bench_function("tokenize_4s_s3", |b| b.iter(|| model.tokenize(black_box(&x), 3).unwrap()));
    c.bench_function("decode_mel_4s_s3", |b| b.iter(|| model.decode_mel(black_box(&frames)).unwrap()));

    let header = model.header(3, frames.len());
    let bytes = pack(&header, &frames).unwrap();
    c.bench_function("pack_4s", |b| b.iter(|| pack(black_box(&header), black_box(&frames)).unwrap()));
    c.bench_function("unpack_4s", |b| b.iter(|| unpack(black_box(&bytes)).unwrap()));

    let mel = model.decode_mel(&frames).unwrap();
    let mut group = c.benchmark_group("vocoder");
    group.sample_size(10);
    group.bench_function("stream_frame_16k", |b| {
        b.iter(|| {
            let mut v = ChunkedVocoder::new(model.config().gl_iters, 0, 16_000).unwrap();
            for row in mel.outer_iter().take(8) {
                black_box(v.push(row).unwrap());
            }
        })
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut clips = corpus(2, 1, 3.0, 11);
    let (a, b) = (clips.remove(0), clips.remove(0));
    let mut group = c.benchmark_group("metrics");
    group.sample_size(20);
    group.bench_function("stoi_3s", |bench| bench.iter(|| stoi(black_box(&a), black_box(&b)).unwrap()));
    group.bench_function("mr_mel_3s", |bench| bench.iter(|| mr_mel(black_box(&a), black_box(&b)).unwrap()));
    group.finish();
}

criterion_group!(benches, analysis, codec, metrics);
criterion_main!(benches);
