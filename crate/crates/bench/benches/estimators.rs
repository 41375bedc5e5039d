use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use structnet_core::channel::{generate_taps, realize, ChannelConfig, ChannelRealization, TapProcess};
use structnet_core::estimators::{genie_corr, lmmse_filter, ls_estimate, stacked_ls};
use structnet_core::numerics::RngStream;
use structnet_core::phy::{build_subframe, transmit, PilotScheme, ReceivedGrid, Subframe, SubframeConfig};
use structnet_core::structnet::{train_subframe, TrainConfig};

struct Fixture {
    taps: TapProcess,
    real: ChannelRealization,
    cfg: ChannelConfig,
}

fn fixture(k: usize) -> Fixture {
    let cfg = ChannelConfig { num_subcarriers: k, ..ChannelConfig::default() };
    let taps = generate_taps(&cfg, &mut RngStream::new(7, 1)).unwrap();
    let real = realize(&taps, &cfg).unwrap();
    Fixture { taps, real, cfg }
}

fn received(f: &Fixture, scheme: PilotScheme) -> (Subframe, ReceivedGrid) {
    let scfg = SubframeConfig { num_subcarriers: f.cfg.num_subcarriers, ..SubframeConfig::default() }.with_scheme(scheme);
    let sf = build_subframe(&scfg, &mut RngStream::new(7, 2), &mut RngStream::new(7, 3)).unwrap();
    let y = transmit(&sf, &f.real, 15.0, &mut RngStream::new(7, 4)).unwrap();
    (sf, y)
}

fn bench_train(c: &mut Criterion) {
    let f = fixture(256);
    let (sf, y) = received(&f, PilotScheme::NonOrthogonal);
    let cfg = TrainConfig::default();
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("structnet_k256_50ep", |b| {
        b.iter(|| train_subframe(&y, &sf, &cfg, &mut RngStream::new(7, 5)).unwrap())
    });
    g.finish();
}

fn bench_classical(c: &mut Criterion) {
    let f = fixture(1024);
    let (sf, y) = received(&f, PilotScheme::Orthogonal);
    let est = ls_estimate(&y, &sf).unwrap();
    let corr = genie_corr(&f.taps, &est.subcarriers[0], f.cfg.subcarrier_spacing_hz);
    c.bench_function("ls_k1024", |b| b.iter(|| ls_estimate(black_box(&y), &sf).unwrap()));
    c.bench_function("lmmse_filter_k1024", |b| {
        b.iter(|| lmmse_filter(black_box(&est), &corr, y.noise_var, 1.0).unwrap())
    });
    let (nsf, ny) = received(&f, PilotScheme::NonOrthogonal);
    c.bench_function("stacked_ls_k1024", |b| b.iter(|| stacked_ls(black_box(&ny), &nsf).unwrap()));
}

fn bench_channel(c: &mut Criterion) {
    let cfg = ChannelConfig::default();
    c.bench_function("realize_k1024", |b| {
        b.iter_batched(
            || generate_taps(&cfg, &mut RngStream::new(7, 6)).unwrap(),
            |taps| realize(&taps, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_train, bench_classical, bench_channel);
criterion_main!(benches);
