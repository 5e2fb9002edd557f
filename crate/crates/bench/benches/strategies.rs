use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use incompat_core::{build_mub, DeterministicStrategySet};
use incompat_core::mub::compute_t;

fn enumerate(c: &mut Criterion) {
    let mut g = c.benchmark_group("strategies");
    for counts in [vec![2, 2, 2], vec![3, 3, 3], vec![5, 5, 5, 5]] {
        let label = counts.iter().map(ToString::to_string).collect::<Vec<_>>().join("x");
        g.bench_with_input(BenchmarkId::new("enumerate", label), &counts, |b, counts| {
            b.iter(|| {
                let s = DeterministicStrategySet::new(counts).unwrap();
                (0..s.len()).map(|l| s.strategy(l).len()).sum::<usize>()
            })
        });
    }
    g.finish();
}

fn strategy_norm(c: &mut Criterion) {
    let mut g = c.benchmark_group("max_strategy_norm");
    for (d, m) in [(2, 3), (3, 4), (5, 3)] {
        let fam = build_mub(d, m).unwrap();
        g.bench_with_input(BenchmarkId::new("mub", format!("d{d}_m{m}")), &fam, |b, fam| {
            b.iter(|| compute_t(fam).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, enumerate, strategy_norm);
criterion_main!(benches);
