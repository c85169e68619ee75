use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use mrcr_bench::{bench_options, cluttered_world};
use mrcr_core::access::reachable_set;
use mrcr_core::planners::{plan_astar, plan_dp, plan_greedy, plan_mcts, plan_single_optimal};
use mrcr_core::world::{ObjSet, World};

fn accessibility(c: &mut Criterion) {
    let mut group = c.benchmark_group("reachable_set");
    for n in [5, 10, 15] {
        let w = cluttered_world(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &w, |b, w| {
            b.iter(|| reachable_set(black_box(w), ObjSet::EMPTY))
        });
    }
    group.finish();
}

fn planners(c: &mut Criterion) {
    let opts = bench_options();
    let mut group = c.benchmark_group("planners");
    group
        .sample_size(10)
        .measurement_time(Duration::from_secs(10));
    let bench =
        |group: &mut criterion::BenchmarkGroup<'_, _>, name: &str, n: usize, f: &dyn Fn(&World)| {
            let w = cluttered_world(n, 1);
            // A fresh world per iteration, so the trip cache starts cold.
            group.bench_with_input(BenchmarkId::new(name, n), &w, |b, w| {
                b.iter_batched(
                    || World::new(w.instance()),
                    |w| f(black_box(&w)),
                    BatchSize::LargeInput,
                )
            });
        };
    for n in [5, 9, 15] {
        bench(&mut group, "greedy", n, &|w| drop(plan_greedy(w, &opts)));
    }
    bench(&mut group, "mcts", 9, &|w| drop(plan_mcts(w, &opts)));
    bench(&mut group, "dp", 8, &|w| drop(plan_dp(w, &opts)));
    bench(&mut group, "astar", 6, &|w| drop(plan_astar(w, &opts)));
    bench(&mut group, "single", 8, &|w| {
        drop(plan_single_optimal(w, &opts))
    });
    group.finish();
}

criterion_group!(benches, accessibility, planners);
criterion_main!(benches);
