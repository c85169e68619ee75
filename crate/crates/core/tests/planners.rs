use mrcr_core::access::reachable_set;
use mrcr_core::geometry::{OrientedRect, Point2};
use mrcr_core::planners::{
    plan_astar, plan_dp, plan_greedy, plan_mcts, plan_single_optimal, single_order_cost,
    PlannerOptions,
};
use mrcr_core::scene::{generate, Fleet, GenMode, GenParams, Instance};
use mrcr_core::world::{ObjSet, World};

fn instance(mode: GenMode, n: usize, seed: u64) -> Instance {
    generate(&GenParams::new(mode, n), &Fleet::narrow(2), seed).expect("generates")
}

/// Two near pairs and one far object: nearest-first leaves the long trip for
/// last, while the optimum starts it at once.
fn near_objects_first() -> Instance {
    let small = |x: f64, y: f64| OrientedRect::new(Point2::new(x, y), 0.2, 0.15, 0.0);
    let fleet = Fleet::with_exit(2, 3.0);
    Instance::with_objects(
        &fleet,
        &[
            small(3.5, 1.4),
            small(6.5, 1.4),
            small(2.5, 2.6),
            small(7.5, 2.6),
            small(5.0, 8.8),
        ],
    )
}

#[test]
fn greedy_is_beaten_on_a_hand_built_scene() {
    let w = World::new(&near_objects_first());
    let opts = PlannerOptions::default();
    let greedy = plan_greedy(&w, &opts).unwrap();
    let astar = plan_astar(&w, &opts).unwrap();
    astar.validate(&w).unwrap();
    assert!(
        astar.makespan < greedy.makespan - 1.0,
        "A* {} vs greedy {}",
        astar.makespan,
        greedy.makespan
    );
    // The far object is started first by A*.
    let far = w.id(4);
    assert!(
        astar.sequences.iter().any(|s| s.first() == Some(&far)),
        "{:?}",
        astar.sequences
    );
}

#[test]
fn one_robot_greedy_follows_its_own_order_without_delays() {
    let inst = instance(GenMode::Cluttered, 6, 4).with_robot_count(1);
    let w = World::new(&inst);
    let plan = plan_greedy(&w, &PlannerOptions::default()).unwrap();
    let order: Vec<usize> = plan.sequences[0]
        .iter()
        .map(|&id| w.index_of(id).unwrap())
        .collect();
    let cost = single_order_cost(&w, &order).unwrap();
    assert!(
        (plan.makespan - cost).abs() < 1e-6,
        "{} vs {cost}",
        plan.makespan
    );
}

#[test]
fn every_planner_respects_the_fleet_lower_bound() {
    let opts = PlannerOptions {
        mcts_iterations: 300,
        ..PlannerOptions::default()
    };
    for seed in 0..4 {
        let mode = if seed % 2 == 0 {
            GenMode::Cluttered
        } else {
            GenMode::Scattered
        };
        let w = World::new(&instance(mode, 6, 300 + seed));
        let (t, _) = plan_single_optimal(&w, &opts).unwrap();
        let plans = [
            plan_greedy(&w, &opts).unwrap(),
            plan_mcts(&w, &opts).unwrap(),
            plan_dp(&w, &opts).unwrap().0,
            plan_astar(&w, &opts).unwrap(),
        ];
        for p in &plans {
            p.validate(&w).unwrap();
            assert!(
                p.makespan >= t / 2.0 - 1e-6,
                "{} {} < {t}/2",
                p.algorithm,
                p.makespan
            );
        }
        // A* is never beaten by the planners sharing its decision model.
        assert!(plans[3].makespan <= plans[0].makespan + 1e-6);
        assert!(plans[3].makespan <= plans[1].makespan + 1e-6);
    }
}

#[test]
fn dp_lies_between_astar_and_greedy() {
    let opts = PlannerOptions::default();
    let mut between = 0;
    let mut misses = Vec::new();
    let total = 20;
    for i in 0..total {
        let mode = if i % 2 == 0 {
            GenMode::Cluttered
        } else {
            GenMode::Scattered
        };
        let n = 4 + (i as usize % 3);
        let w = World::new(&instance(mode, n, 500 + i));
        let dp = plan_dp(&w, &opts).unwrap().0.makespan;
        let astar = plan_astar(&w, &opts).unwrap().makespan;
        let greedy = plan_greedy(&w, &opts).unwrap().makespan;
        if dp >= astar - 1e-6 && dp <= greedy + 1e-6 {
            between += 1;
        } else {
            misses.push(format!(
                "{mode:?} n={n} seed={}: dp {dp:.3}, astar {astar:.3}, greedy {greedy:.3}",
                500 + i
            ));
        }
    }
    assert!(
        between * 10 >= total * 9,
        "{between}/{total} in range; outside: {misses:#?}"
    );
}

#[test]
fn mcts_stays_within_two_percent_of_greedy() {
    let opts = PlannerOptions::default();
    let (mut mcts, mut greedy) = (0.0, 0.0);
    for seed in 0..20 {
        let w = World::new(&instance(GenMode::Cluttered, 9, seed));
        mcts += plan_mcts(&w, &opts).unwrap().makespan;
        greedy += plan_greedy(&w, &opts).unwrap().makespan;
    }
    assert!(
        mcts <= greedy * 1.02,
        "mean mcts {} vs greedy {}",
        mcts / 20.0,
        greedy / 20.0
    );
}

#[test]
fn lookahead_plans_execute_on_dependent_scenes() {
    // Seed 20 is a cluttered scene with an object hidden behind another.
    let w = World::new(&instance(GenMode::Cluttered, 9, 20));
    assert_ne!(reachable_set(&w, ObjSet::EMPTY), w.all());
    for lookahead in [true, false] {
        let opts = PlannerOptions {
            lookahead,
            mcts_iterations: 200,
            ..PlannerOptions::default()
        };
        for plan in [
            plan_greedy(&w, &opts).unwrap(),
            plan_mcts(&w, &opts).unwrap(),
            plan_dp(&w, &opts).unwrap().0,
        ] {
            plan.validate(&w).unwrap();
            assert!(plan.trace.min_separation >= 2.0 * w.radius() - 1e-6);
        }
    }
}

#[test]
fn planners_are_deterministic() {
    let w = World::new(&instance(GenMode::Cluttered, 6, 77));
    let opts = PlannerOptions {
        mcts_iterations: 300,
        ..PlannerOptions::default()
    };
    for _ in 0..2 {
        let a = [
            plan_greedy(&w, &opts).unwrap(),
            plan_mcts(&w, &opts).unwrap(),
            plan_dp(&w, &opts).unwrap().0,
        ];
        let fresh = World::new(w.instance());
        let b = [
            plan_greedy(&fresh, &opts).unwrap(),
            plan_mcts(&fresh, &opts).unwrap(),
            plan_dp(&fresh, &opts).unwrap().0,
        ];
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sequences, y.sequences);
            assert_eq!(x.trace, y.trace);
        }
    }
}

#[test]
fn robots_returning_to_adjacent_slots_do_not_deadlock() {
    // On these layouts two returning robots used to hold each other still
    // next to their slots until the stall timeout.
    for (k, seed) in [(3, 3), (3, 8), (5, 3), (5, 4), (5, 6)] {
        let inst = generate(
            &GenParams::new(GenMode::Scattered, 20),
            &Fleet::scaled(5),
            seed,
        )
        .expect("generates");
        let w = World::new(&Instance {
            robot_count: k,
            exit_width: Fleet::scaled(k).exit_width,
            ..inst
        });
        let plan = plan_greedy(&w, &PlannerOptions::default()).unwrap();
        plan.validate(&w).unwrap();
        assert!(plan.trace.min_separation >= 2.0 * w.radius() - 1e-6);
    }
}

#[test]
fn waiting_robots_step_aside_for_robots_leaving_the_exit() {
    // On these layouts a robot waiting for the shared slot used to stand in
    // the path of the robot leaving it.
    for (n, seed) in [(5, 3), (7, 4), (9, 3)] {
        let w = World::new(&instance(GenMode::Scattered, n, seed));
        let plan = plan_mcts(&w, &PlannerOptions::default()).unwrap();
        plan.validate(&w).unwrap();
        assert!(plan.trace.min_separation >= 2.0 * w.radius() - 1e-6);
    }
}
