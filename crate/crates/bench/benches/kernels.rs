use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use msvine::ms_em::em_step;
use msvine::regime_chain::{hamilton_filter, kim_smoother};
use msvine::rvine::fit_sequential;
use msvine::structure_select::kendall_tau;
use msvine::{CopulaFamily, PairCopula};
use msvine_bench::{scenario_data, unit_points};

fn pair_copulas(c: &mut Criterion) {
    let pts = unit_points(1000);
    let copulas = [
        ("N", PairCopula::gaussian(0.6).unwrap()),
        ("t", PairCopula::student_t(0.6, 5.0).unwrap()),
        ("G", PairCopula::gumbel(CopulaFamily::Gumbel, 2.0).unwrap()),
    ];
    let mut g = c.benchmark_group("pair_copula_1000");
    for (tag, pc) in &copulas {
        g.bench_function(format!("ln_density/{tag}"), |b| {
            b.iter(|| pts.iter().map(|&(u, v)| pc.ln_density(u, v).unwrap()).sum::<f64>())
        });
        g.bench_function(format!("hfunc/{tag}"), |b| {
            b.iter(|| pts.iter().map(|&(u, v)| pc.hfunc(u, v).unwrap()).sum::<f64>())
        });
        g.bench_function(format!("hinv/{tag}"), |b| {
            b.iter(|| pts.iter().map(|&(u, v)| pc.hinv(u, v).unwrap()).sum::<f64>())
        });
    }
    g.finish();
}

fn vines(c: &mut Criterion) {
    let (model, data) = scenario_data(800, 1);
    let spec = model.regime(1);
    c.bench_function("vine_loglik_800x4", |b| b.iter(|| spec.loglik(black_box(&data)).unwrap()));
    c.bench_function("vine_fit_800x4", |b| b.iter(|| fit_sequential(spec, black_box(&data), None).unwrap()));
    let (x, y) = (data.column(0), data.column(1));
    c.bench_function("kendall_tau_800", |b| b.iter(|| kendall_tau(black_box(&x), black_box(&y)).unwrap()));
}

fn chain(c: &mut Criterion) {
    let (model, data) = scenario_data(800, 2);
    let ld = model.regime_log_densities(&data).unwrap();
    c.bench_function("filter_smoother_800x2", |b| {
        b.iter(|| {
            let fr = hamilton_filter(black_box(&ld), model.trans(), None).unwrap();
            kim_smoother(&fr, model.trans()).unwrap()
        })
    });
    let mut g = c.benchmark_group("em");
    g.sample_size(10);
    g.bench_function("em_step_800x4", |b| b.iter(|| em_step(black_box(&model), &data).unwrap()));
    g.finish();
}

criterion_group!(benches, pair_copulas, vines, chain);
criterion_main!(benches);
