use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nakasim_bench::{preset_trace, preset_variant};
use nakasim_core::engine::{calibrate_t_conf, run_trial};
use nakasim_core::verify::{bound_report, check_consistency, check_consistency_bruteforce, check_recovery_lemma};

fn trials(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_trial");
    g.sample_size(20);
    for (preset, index, id) in [
        ("prop1_rental_doublespend", 0, "prop1_nakamoto"),
        ("thm1_stubborn_unbounded", 7, "thm1_stubborn_10x"),
        ("thm3_recovery", 0, "thm3_recovery"),
        ("thm4_split_brain", 1, "thm4_stubborn_oracle"),
    ] {
        let v = preset_variant(preset, index);
        g.bench_function(id, |b| b.iter(|| run_trial(black_box(&v.scenario), &v.label, 3).unwrap()));
    }
    g.finish();
}

fn verifiers(c: &mut Criterion) {
    let trace = preset_trace("prop1_rental_doublespend", 0, 0);
    let stubborn = preset_trace("thm3_recovery", 0, 0);
    let mut g = c.benchmark_group("verify");
    g.bench_function("consistency", |b| b.iter(|| check_consistency(black_box(&trace))));
    g.bench_function("consistency_bruteforce", |b| b.iter(|| check_consistency_bruteforce(black_box(&trace))));
    g.bench_function("recovery_lemma", |b| b.iter(|| check_recovery_lemma(black_box(&stubborn))));
    let long = vec![preset_trace("bounds_montecarlo", 0, 0)];
    g.bench_function("bounds_20_windows", |b| b.iter(|| bound_report(black_box(&long), 0.2, 10_000, 20, 0)));
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let v = preset_variant("thm3_recovery", 0);
    let mut g = c.benchmark_group("calibrate");
    g.sample_size(10);
    g.bench_function("t_conf_50_trials", |b| {
        b.iter(|| calibrate_t_conf(black_box(&v.scenario), 0.99, 50, 410).unwrap())
    });
    g.finish();
}

criterion_group!(benches, trials, verifiers, calibration);
criterion_main!(benches);
