//! Wall-clock cost of the hot paths: analysis/synthesis transforms, one
//! dynamic layer forward at the narrowest and widest width, and full-model
//! separation at the cheapest and most expensive operating points.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dwdn_core::tensor::LeafBinder;
use dwdn_core::{
    dynamic_layer_forward, istft, stft, DynamicLayerParams, FullModelParams, Graph, ModelConfig,
    SubnetConfig, Tensor, Waveform,
};

fn second_of_noise(rng: &mut ChaCha8Rng) -> Waveform {
    let samples: Vec<f64> = (0..8000).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Waveform::mono(samples, 8000)
}

fn bench_transforms(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let wav = second_of_noise(&mut rng);
    let spec = stft(&wav, 256, 64).unwrap();

    let mut g = c.benchmark_group("transforms");
    g.bench_function("stft_1s_8khz", |b| b.iter(|| stft(&wav, 256, 64).unwrap()));
    g.bench_function("istft_1s_8khz", |b| {
        b.iter(|| istft(&spec, 256, 64, wav.len()).unwrap())
    });
    g.finish();
}

fn bench_dynamic_layer(c: &mut Criterion) {
    let dims = ModelConfig::desk().layer_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = DynamicLayerParams::init(dims.clone(), &mut rng);
    let frames = 32;
    let data: Vec<f64> = (0..dims.input * frames)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let x = Tensor::from_vec(vec![dims.input, frames], data).unwrap();

    let mut g = c.benchmark_group("dynamic_layer_32_frames");
    for w in [1, dims.max_width] {
        g.bench_function(format!("width_{w}"), |b| {
            b.iter(|| {
                let mut graph = Graph::new();
                let mut binder = LeafBinder::new(false);
                let bound = params.bind(&mut graph, &mut binder).unwrap();
                let xv = graph.leaf(x.clone());
                dynamic_layer_forward(&mut graph, xv, &bound, w).unwrap()
            })
        });
    }
    g.finish();
}

fn bench_separation(c: &mut Criterion) {
    let config = ModelConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = FullModelParams::init(config.clone(), &mut rng).unwrap();
    let wav = second_of_noise(&mut rng);
    let spec = stft(&wav, config.stft_window, config.stft_hop).unwrap();

    let mut g = c.benchmark_group("separate_1s_8khz");
    g.sample_size(10).measurement_time(Duration::from_secs(8));
    for (w, d) in [(1, 1), (config.max_width, config.max_depth)] {
        g.bench_function(format!("w{w}_d{d}"), |b| {
            b.iter(|| params.separate(&spec, SubnetConfig::new(w, d)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    bench_transforms,
    bench_dynamic_layer,
    bench_separation
);
criterion_main!(benches);
