use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nhcz::dyadic::bad_probability_mc;
use nhcz::geometry::{generate, Generator};
use nhcz::kernels::ScalarModel;
use nhcz::operators::{atoms_of, maximal_truncation_at};
use nhcz::Execution;

fn maximal_truncations(c: &mut Criterion) {
    let mut group = c.benchmark_group("maximal_truncation");
    group.sample_size(10);
    for level in [2u32, 3] {
        let mu = generate(&Generator::Cantor4 { level }).unwrap();
        let k = ScalarModel::new(2, 1.0);
        let xs = atoms_of(&mu);
        for (name, exec) in [("seq", Execution::Sequential), ("par", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, mu.len()), &mu, |b, mu| {
                b.iter(|| maximal_truncation_at(&k, mu, mu, &xs, 0.0, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bad_probability(c: &mut Criterion) {
    let mut group = c.benchmark_group("bad_probability");
    group.sample_size(10);
    for (name, exec) in [("seq", Execution::Sequential), ("par", Execution::Parallel)] {
        group.bench_function(name, |b| b.iter(|| bad_probability_mc(2, 0.25, 4, 2000, 7, 6, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, maximal_truncations, bad_probability);
criterion_main!(benches);
