//! Least-restrictive controller on the quadrotor kernel.

use std::sync::Arc;

use rand::SeedableRng;

use simspec::control::{sample_feasible, ControllerScheme, LeastRestrictiveScheme, Policy, Replay, SampleRng};
use simspec::dynamics::{simulate, DynamicalModel, QuadrotorVertical};
use simspec::geometry::{Norm, SetExpr};
use simspec::metrics::NormConfig;
use simspec::presets::KernelSetup;
use simspec::reach::SafetyKernel;
use simspec::spec::{satisfies, Environment, SpecMargin, TimeVaryingSet};

fn setup() -> (Arc<SafetyKernel>, Arc<dyn DynamicalModel>) {
    let model: Arc<dyn DynamicalModel> = Arc::new(QuadrotorVertical::new(12.0));
    let norm = NormConfig {
        coords: Some(vec![0]),
        ..NormConfig::default()
    };
    let kernel = KernelSetup::quadrotor().compute(model.as_ref(), 0.0, &norm).unwrap();
    (Arc::new(kernel), model)
}

fn env(x0: [f64; 2]) -> Environment {
    let s = KernelSetup::quadrotor();
    Environment::new(
        "q",
        x0.to_vec(),
        TimeVaryingSet::stationary(s.horizon, SetExpr::complement(s.corridor)),
        TimeVaryingSet::stationary(s.horizon, SetExpr::All),
    )
    .unwrap()
}

#[test]
fn least_restrictive_behaviour() {
    let (kernel, model) = setup();
    let scheme = LeastRestrictiveScheme::new(kernel.clone(), model.clone());

    // Deep inside the free draw is used, and it varies with the seed.
    let deep = [1.5, 0.0];
    let mut seen = Vec::new();
    for seed in 0..40 {
        let p = scheme.policy(100, seed);
        assert!(!p.uses_safe_action(0, &deep));
        let u = p.act(0, &deep);
        assert!(kernel.controls().contains(&u));
        if !seen.contains(&u) {
            seen.push(u);
        }
    }
    assert!(seen.len() > 3, "free draws {seen:?}");

    // Near the boundary the kernel's argmax takes over.
    let edge = [2.45, 0.5];
    let p = scheme.policy(100, 1);
    assert!(p.uses_safe_action(0, &edge));
    assert_eq!(p.act(0, &edge), kernel.safe_control(0, &edge, model.as_ref()));

    // Infeasible start gives the null controller.
    let c = scheme.build(&env([2.4, 4.0]), 3).unwrap();
    assert!(c.is_null());
    assert_eq!(c.descriptor()["outside_kernel"], true);
}

#[test]
fn sampled_controllers_are_feasible_first_time() {
    let (kernel, model) = setup();
    let scheme = LeastRestrictiveScheme::new(kernel.clone(), model.clone());
    let mut rng = SampleRng::seed_from_u64(5);
    let mut accepted = 0;
    for i in 0..60 {
        let z = 0.6 + 1.8 * (i as f64 / 59.0);
        let v = -2.0 + 4.0 * ((i * 7 % 60) as f64 / 59.0);
        let e = env([z, v]);
        if !kernel.membership(&e.x0) {
            continue;
        }
        let draw = sample_feasible(&scheme, &e, model.as_ref(), SpecMargin::ZERO, Norm::Euclidean, &mut rng, 100).unwrap();
        assert!(!draw.controller.is_null());
        assert_eq!(draw.attempts, 1, "x0 {:?}", e.x0);
        accepted += 1;
    }
    assert!(accepted > 30);
}

#[test]
fn open_loop_replay_matches_feedback_on_abstraction() {
    let (kernel, model) = setup();
    let feedback = LeastRestrictiveScheme::new(kernel.clone(), model.clone());
    let replay = feedback.clone().with_replay(Replay::OpenLoop);
    let e = env([1.0, 1.0]);
    for seed in [1u64, 9, 42] {
        let a = simulate(model.as_ref(), &e.x0, &feedback.build(&e, seed).unwrap(), 100).unwrap();
        let b = simulate(model.as_ref(), &e.x0, &replay.build(&e, seed).unwrap(), 100).unwrap();
        assert_eq!(a, b);
        assert!(satisfies(&a, &e, SpecMargin::ZERO, Norm::Euclidean).unwrap());
    }
    assert_eq!(feedback.name(), "least_restrictive");
    let rebuilt = feedback.rebuild(&e, &serde_json::json!({ "seed": 9 })).unwrap();
    let c = feedback.build(&e, 9).unwrap();
    assert_eq!(
        simulate(model.as_ref(), &e.x0, &rebuilt, 100).unwrap(),
        simulate(model.as_ref(), &e.x0, &c, 100).unwrap()
    );
}
