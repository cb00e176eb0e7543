//! Single-thread pool against the default pool for the hot paths. Build with
//! `--no-default-features` to measure the sequential fallback.

use std::hint::black_box;

use beamsense::codec::{compress_frame, random_channel, CfrMatrix};
use beamsense::learner::{backward, forward, InputShape, Mode, ModelParams, ModelSpec, Tensor};
use beamsense::rng::substream;
use beamsense::sim::{gen_session_frames, synthetic_scenario, SyntheticSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rayon::ThreadPool;

fn pools() -> Vec<(String, ThreadPool)> {
    let default = rayon::current_num_threads();
    let mut out = vec![("threads=1".to_string(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap())];
    if default > 1 {
        out.push((format!("threads={default}"), rayon::ThreadPoolBuilder::new().num_threads(default).build().unwrap()));
    }
    out
}

fn codec(c: &mut Criterion) {
    let mut rng = substream(1, "bench", 0);
    let channels: Vec<CfrMatrix> = (0..234).map(|k| random_channel(&mut rng, k, 3, 2).unwrap()).collect();
    let mut g = c.benchmark_group("codec_frame_k234");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| compress_frame(black_box(&channels), 1, 9, 0, 0.0).unwrap()))
        });
    }
    g.finish();
}

fn sim(c: &mut Criterion) {
    let scenario = synthetic_scenario(&SyntheticSpec {
        k: 64,
        duration_s: 0.5,
        rate_hz: 20.0,
        ..SyntheticSpec::default()
    });
    let mut g = c.benchmark_group("sim_session");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| gen_session_frames(black_box(&scenario)).unwrap()))
        });
    }
    g.finish();
}

fn learner(c: &mut Criterion) {
    let input = InputShape { channels: 12, height: 10, width: 64 };
    let spec = ModelSpec::new(input, 5, 0.25).unwrap();
    let params = ModelParams::init(&spec, 0);
    let batch = 16;
    let mut rng = substream(2, "bench", 0);
    let data: Vec<f64> = (0..batch * 12 * 10 * 64).map(|_| rng.random_range(0.0..3.0)).collect();
    let x = Tensor::new(vec![batch, 12, 10, 64], data).unwrap();
    let labels: Vec<usize> = (0..batch).map(|i| i % 5).collect();
    let mut g = c.benchmark_group("learner_step_b16");
    g.sample_size(20);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| {
                b.iter(|| {
                    let out = forward(&spec, &params, black_box(&x), Mode::Train).unwrap();
                    backward(&spec, &params, &out.cache, &labels).unwrap()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, codec, sim, learner);
criterion_main!(benches);
