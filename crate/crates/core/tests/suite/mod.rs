//! Randomized property checks shared by the `properties` tests and the
//! acceptance run. Each check returns a short report or the first failure.

use std::cell::Cell;

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use simspec::control::{riccati_map, solve_dare, DARE_TOL};
use simspec::dynamics::QuadrotorVertical;
use simspec::geometry::{Norm, SetExpr};
use simspec::metrics::{pair_distances, NormConfig};
use simspec::presets::KernelSetup;
use simspec::reach::{containment, GridSpec};
use simspec::spec::{satisfies, sup_trajectory_distance, Environment, SpecMargin, TimeVaryingSet, Trajectory};

const CASES: u32 = 1500;

pub type Check = Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

#[derive(Clone, Debug)]
struct Scene {
    env: Environment,
    traj_m: Trajectory,
    traj_s: Trajectory,
    norm: Norm,
}

fn point(dim: usize, span: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-span..span, dim)
}

/// Primitive sets, occasionally wrapped in a complement or union.
fn set_expr(dim: usize) -> BoxedStrategy<SetExpr> {
    let ball = (point(dim, 3.0), 0.05f64..1.5).prop_map(|(c, r)| SetExpr::ball(c, r).unwrap());
    let cuboid = (point(dim, 3.0), prop::collection::vec(0.0f64..2.0, dim))
        .prop_map(|(lo, w)| {
            let hi = lo.iter().zip(&w).map(|(a, b)| a + b).collect();
            SetExpr::cuboid(lo, hi).unwrap()
        });
    let half = (point(dim, 1.0), -2.0f64..2.0).prop_filter_map("zero normal", |(n, o)| {
        if n.iter().all(|v| v.abs() < 1e-3) {
            None
        } else {
            Some(SetExpr::half_space(n, o).unwrap())
        }
    });
    let prim = prop_oneof![ball, cuboid, half].boxed();
    prop_oneof![
        4 => prim.clone(),
        1 => prim.clone().prop_map(SetExpr::complement),
        1 => prop::collection::vec(prim, 1..3).prop_map(SetExpr::union),
    ]
    .boxed()
}

fn reach_expr(dim: usize) -> BoxedStrategy<SetExpr> {
    prop_oneof![
        2 => Just(SetExpr::All),
        1 => (point(dim, 1.0), 3.0f64..6.0).prop_map(|(c, r)| SetExpr::ball(c, r).unwrap()),
        1 => set_expr(dim).prop_map(SetExpr::complement),
    ]
    .boxed()
}

/// A random abstraction trajectory, a system trajectory within a random
/// perturbation of it, and sets placed near the system trajectory so that
/// violations are common.
fn scene() -> impl Strategy<Value = Scene> {
    scene_with(1.5, true)
}

/// With `hit` unset the avoid set is unrelated to the system trajectory.
fn scene_with(max_scale: f64, hit: bool) -> impl Strategy<Value = Scene> {
    (1usize..4, 1usize..6, prop::bool::ANY)
        .prop_flat_map(move |(dim, horizon, inf)| {
            let n = horizon + 1;
            (
                prop::collection::vec(point(dim, 2.5), n),
                prop::collection::vec(point(dim, 1.0), n),
                0.0f64..max_scale,
                set_expr(dim),
                (0..n, 0.05f64..0.8, point(dim, 0.3)),
                reach_expr(dim),
                Just(horizon),
                Just(if inf { Norm::Infinity } else { Norm::Euclidean }),
            )
        })
        .prop_map(move |(m, noise, scale, random_avoid, (t_hit, r_hit, jitter), reach, horizon, norm)| {
            let s: Vec<Vec<f64>> = m
                .iter()
                .zip(&noise)
                .map(|(x, e)| x.iter().zip(e).map(|(a, b)| a + scale * b).collect())
                .collect();
            let near: Vec<f64> = s[t_hit].iter().zip(&jitter).map(|(a, b)| a + b).collect();
            let avoid = if hit {
                SetExpr::union(vec![random_avoid, SetExpr::ball(near, r_hit).unwrap()])
            } else {
                random_avoid
            };
            let env = Environment::new(
                "scene",
                m[0].clone(),
                TimeVaryingSet::stationary(horizon, avoid),
                TimeVaryingSet::stationary(horizon, reach),
            )
            .unwrap();
            let traj = |states: Vec<Vec<f64>>| Trajectory {
                controls: vec![vec![0.0]; horizon],
                states,
            };
            Scene {
                env,
                traj_m: traj(m),
                traj_s: traj(s),
                norm,
            }
        })
}

pub fn metric_ordering() -> Check {
    let falsifying = Cell::new(0usize);
    runner(12_000)
        .run(&scene(), |sc| {
            let sat_m = satisfies(&sc.traj_m, &sc.env, SpecMargin::ZERO, sc.norm).unwrap();
            let sat_s = satisfies(&sc.traj_s, &sc.env, SpecMargin::ZERO, sc.norm).unwrap();
            if sat_m && !sat_s {
                falsifying.set(falsifying.get() + 1);
                let nc = NormConfig {
                    norm: sc.norm,
                    coords: None,
                };
                let d = pair_distances(&sc.env, &sc.traj_s, &sc.traj_m, sat_s, &nc).unwrap();
                prop_assert!(d.spec <= d.falsifying, "spec {} > falsifying {}", d.spec, d.falsifying);
                prop_assert!(d.falsifying <= d.sup);
                prop_assert!(d.spec >= 0.0);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    at_least(falsifying.get(), 1000, "falsifying scenes")
}

pub fn margin_monotonicity() -> Check {
    let satisfied = Cell::new(0usize);
    let strategy = (scene_with(0.3, false), 0.0f64..1.0, 0.0f64..1.0);
    runner(CASES * 4)
        .run(&strategy, |(sc, a, b)| {
            let (d1, d2) = if a >= b { (a, b) } else { (b, a) };
            let ok1 = satisfies(&sc.traj_m, &sc.env, SpecMargin::new(d1).unwrap(), sc.norm).unwrap();
            let ok2 = satisfies(&sc.traj_m, &sc.env, SpecMargin::new(d2).unwrap(), sc.norm).unwrap();
            if ok1 {
                satisfied.set(satisfied.get() + 1);
                prop_assert!(ok2, "satisfied at {d1} but not at {d2}");
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    at_least(satisfied.get(), 1000, "scenes satisfied at the larger margin")
}

pub fn safety_implication() -> Check {
    let antecedent = Cell::new(0usize);
    runner(CASES * 4)
        .run(&(scene_with(0.3, false), 0.0f64..0.2), |(sc, slack)| {
            let dist = sup_trajectory_distance(&sc.traj_s, &sc.traj_m, sc.norm, None).unwrap();
            let d = dist + slack;
            if satisfies(&sc.traj_m, &sc.env, SpecMargin::new(d).unwrap(), sc.norm).unwrap() {
                antecedent.set(antecedent.get() + 1);
                prop_assert!(satisfies(&sc.traj_s, &sc.env, SpecMargin::ZERO, sc.norm).unwrap());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    at_least(antecedent.get(), 1000, "scenes meeting the antecedent")
}

/// Positive root of `b² p² + (r − a² r − q b²) p − q r = 0`.
fn scalar_dare_oracle(a: f64, b: f64, q: f64, r: f64) -> f64 {
    let qa = b * b;
    let qb = r - a * a * r - q * b * b;
    let qc = -q * r;
    (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
}

pub fn scalar_dare() -> Check {
    let strategy = (-2.0f64..2.0, 0.5f64..2.0, 0.1f64..100.0, 0.1f64..10.0);
    runner(CASES)
        .run(&strategy, |(a, b, q, r)| {
            let m = |v: f64| DMatrix::from_element(1, 1, v);
            let d = solve_dare(&m(a), &m(b), &m(q), &m(r)).unwrap();
            let p = d.p[(0, 0)];
            let oracle = scalar_dare_oracle(a, b, q, r);
            prop_assert!((p - oracle).abs() <= 1e-6 * oracle.max(1.0), "p {p} oracle {oracle}");
            let residual = (&d.p - riccati_map(&m(a), &m(b), &m(q), &m(r), &d.p).unwrap()).amax();
            prop_assert!(residual <= DARE_TOL, "residual {residual}");
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{CASES} scalar cases"))
}

pub fn two_state_dare() -> Check {
    let strategy = (
        prop::collection::vec(-2.0f64..2.0, 4),
        prop::collection::vec(-1.0f64..1.0, 2),
        0.1f64..100.0,
    );
    let solved = Cell::new(0usize);
    runner(CASES * 2)
        .run(&strategy, |(a, b, q)| {
            let a = DMatrix::from_row_slice(2, 2, &a);
            let b = DMatrix::from_row_slice(2, 1, &b);
            let q = DMatrix::identity(2, 2) * q;
            let r = DMatrix::identity(1, 1);
            // Unstabilizable draws are allowed to fail. Nearly uncontrollable
            // ones give P so large that its ulp exceeds the absolute bound;
            // those are held to a relative bound instead.
            if let Ok(d) = solve_dare(&a, &b, &q, &r) {
                let residual = (&d.p - riccati_map(&a, &b, &q, &r, &d.p).unwrap()).amax();
                let scale = d.p.amax();
                if scale <= 1e3 {
                    solved.set(solved.get() + 1);
                    prop_assert!(residual <= DARE_TOL, "residual {residual}");
                } else {
                    prop_assert!(residual <= DARE_TOL * scale, "residual {residual} at |P| {scale}");
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    at_least(solved.get(), 1000, "well-scaled solvable 2x2 draws")
}

/// Full 201 x 201 grid, both quadrotor gains, margins 0, 0.1 and 0.3.
pub fn kernel_margin_containment() -> Check {
    let setup = KernelSetup::quadrotor();
    let norm = NormConfig {
        coords: Some(vec![0]),
        ..NormConfig::default()
    };
    let mut sizes = Vec::new();
    for k in [11.0, 12.0] {
        let model = QuadrotorVertical::new(k);
        let kernels: Vec<_> = [0.0, 0.1, 0.3]
            .iter()
            .map(|&d| setup.compute(&model, d, &norm).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        for (hi, lo) in [(1, 0), (2, 1), (2, 0)] {
            let c = containment(&kernels[hi], &kernels[lo]).map_err(|e| e.to_string())?;
            if !c.holds() || c.inner_nodes >= c.outer_nodes {
                return Err(format!("k={k}: margin kernel leaks {} nodes", c.violating_nodes));
            }
        }
        sizes.push(kernels.iter().map(|k| k.inside_nodes()).collect::<Vec<_>>());
    }
    Ok(format!("inside nodes at d = 0, 0.1, 0.3: {sizes:?}"))
}

pub fn kernel_margin_random_models() -> Check {
    let strategy = (9.0f64..20.0, 0.0f64..0.4, 0.0f64..0.4);
    runner(16)
        .run(&strategy, |(k, a, b)| {
            let (d1, d2) = if a >= b { (a, b) } else { (b, a) };
            let setup = KernelSetup {
                grid: GridSpec::new([0.0, -4.0], [3.0, 4.0], [41, 41]).unwrap(),
                horizon: 30,
                ..KernelSetup::quadrotor()
            };
            let norm = NormConfig {
                coords: Some(vec![0]),
                ..NormConfig::default()
            };
            let model = QuadrotorVertical::new(k);
            let strict = setup.compute(&model, d1, &norm).unwrap();
            let loose = setup.compute(&model, d2, &norm).unwrap();
            prop_assert!(containment(&strict, &loose).unwrap().holds());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("16 random gains".into())
}

fn at_least(count: usize, floor: usize, what: &str) -> Check {
    if count >= floor {
        Ok(format!("{count} {what}"))
    } else {
        Err(format!("only {count} {what} (need {floor})"))
    }
}
