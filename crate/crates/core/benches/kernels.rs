use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use horizon_core::config::Config;
use horizon_core::currents::{pullback_normalized, GridSpec, Orientation, Potential, PotentialGrid};
use horizon_core::green::{GreenParams, GreenSolver};
use horizon_core::structure::certify_horizontal_like;
use horizon_core::{par, C64};
use std::hint::black_box;

fn henon() -> (horizon_core::MapSpec, horizon_core::geometry::Domain) {
    let cfg = Config::parse("[run]\nseed = 1\n[map]\nkind = henon\n").unwrap();
    let m = cfg.map().unwrap();
    let dom = cfg.domain_for(&m).unwrap();
    (m, dom)
}

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn certificate(c: &mut Criterion) {
    let (m, dom) = henon();
    let mut g = c.benchmark_group("certificate_100k");
    g.sample_size(10);
    for (name, seq) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| black_box(certify_horizontal_like(&m, &dom, 100_000, 7).unwrap()))
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn green_batch(c: &mut Criterion) {
    let (m, _) = henon();
    let solver = GreenSolver::plus(&m).unwrap();
    let prm = GreenParams { n_max: 200, r_esc: None };
    let pts: Vec<[C64; 2]> = (0..20_000)
        .map(|i| {
            let t = i as f64 * 0.618_033_988_75;
            [C64::new(1.5 * t.sin(), 1.5 * (2.0 * t).cos()), C64::new(0.7 * (3.0 * t).sin(), 0.3 * t.cos())]
        })
        .collect();
    let mut g = c.benchmark_group("green_plus_20k");
    g.sample_size(10);
    for (name, seq) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| black_box(par::map_indexed(pts.len(), |i| solver.eval(&pts[i], &prm).map(|e| e.value).unwrap_or(0.0))))
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn pullback(c: &mut Criterion) {
    let (m, dom) = henon();
    let spec = GridSpec::for_domain_with(&dom, 32, 16).unwrap();
    let u0 = PotentialGrid::from_potential(Orientation::Vertical, spec, &Potential::fubini_study()).unwrap();
    let mut g = c.benchmark_group("pullback_32x16");
    g.sample_size(10);
    for (name, seq) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| black_box(pullback_normalized(&m, &u0).unwrap()))
        });
    }
    par::set_sequential(false);
    g.finish();
}

criterion_group!(benches, certificate, green_batch, pullback);
criterion_main!(benches);
