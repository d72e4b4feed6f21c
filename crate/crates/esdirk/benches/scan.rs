//! Compares the parallel and sequential A-stability boundary scans.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use esdirk::stability::{a_stability_scan, a_stability_scan_seq, stability_function};
use esdirk::tableau::{ButcherTableau, Method};

fn bench_scans(c: &mut Criterion) {
    let tab = ButcherTableau::builtin(Method::Esdirk34);
    let sf = stability_function(&tab, &tab.b);
    let mut group = c.benchmark_group("a_stability_scan");
    for &n in &[1_000usize, 100_000] {
        group.bench_with_input(BenchmarkId::new("default", n), &n, |b, &n| {
            b.iter(|| a_stability_scan(&sf, n))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| a_stability_scan_seq(&sf, n))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_scans);
criterion_main!(benches);
