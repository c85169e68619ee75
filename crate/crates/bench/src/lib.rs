//! Fixed workloads shared by the criterion benchmarks.

use mrcr_core::planners::PlannerOptions;
use mrcr_core::scene::{generate, Fleet, GenMode, GenParams, Instance};
use mrcr_core::world::World;

/// A reproducible generated instance on the narrow two-lane exit.
pub fn fixture(mode: GenMode, n: usize, k: usize, seed: u64) -> Instance {
    generate(&GenParams::new(mode, n), &Fleet::narrow(k), seed).expect("fixture generates")
}

/// World of a cluttered fixture with two robots.
pub fn cluttered_world(n: usize, seed: u64) -> World {
    World::new(&fixture(GenMode::Cluttered, n, 2, seed))
}

/// Planner options kept small enough for repeated timing.
pub fn bench_options() -> PlannerOptions {
    PlannerOptions {
        mcts_iterations: 200,
        ..PlannerOptions::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_reproducible() {
        assert_eq!(
            fixture(GenMode::Scattered, 5, 2, 1),
            fixture(GenMode::Scattered, 5, 2, 1)
        );
        assert_eq!(cluttered_world(4, 0).n(), 4);
    }
}
