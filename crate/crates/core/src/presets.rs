//! Ready-made problems: the two-state linear example, the vertical quadrotor
//! with a conservative or an optimistic abstraction, and a bicycle demo.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::control::{ControllerScheme, LeastRestrictiveScheme, LqrScheme, Replay, UniformOpenLoopScheme};
use crate::dynamics::{DynamicalModel, KinematicBicycle, LinearModel, QuadrotorVertical};
use crate::error::{Error, Result};
use crate::geometry::SetExpr;
use crate::metrics::{MetricKind, NormConfig};
use crate::reach::{compute_kernel, control_levels, GridSpec, SafetyKernel};
use crate::scenario::{EnvironmentSpace, Problem};

pub const PRESET_NAMES: [&str; 4] = [
    "running-example",
    "quadrotor-conservative",
    "quadrotor-optimistic",
    "bicycle-demo",
];

/// Quadrotor thrust gains `(system, abstraction)`.
pub const QUAD_CONSERVATIVE_K: (f64, f64) = (12.0, 11.0);
pub const QUAD_OPTIMISTIC_K: (f64, f64) = (11.0, 12.0);
pub const QUAD_HORIZON: usize = 100;
pub const QUAD_LEVELS: usize = 11;

/// Grid value iteration settings for 2-D problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSetup {
    pub grid: GridSpec,
    /// Safe region; the avoid set is its complement.
    pub corridor: SetExpr,
    pub levels: usize,
    pub horizon: usize,
}

impl KernelSetup {
    pub fn quadrotor() -> Self {
        KernelSetup {
            grid: GridSpec::quadrotor_default(),
            corridor: quad_corridor(),
            levels: QUAD_LEVELS,
            horizon: QUAD_HORIZON,
        }
    }

    pub fn compute(&self, model: &dyn DynamicalModel, margin: f64, config: &NormConfig) -> Result<SafetyKernel> {
        let (lo, hi) = model
            .control_bounds()
            .and_then(|b| b.first().copied())
            .ok_or_else(|| Error::InvalidParameter("kernel needs a bounded scalar control".into()))?;
        compute_kernel(
            model,
            &self.corridor,
            margin,
            &self.grid,
            control_levels(lo, hi, self.levels),
            self.horizon,
            config.norm,
        )
    }
}

fn quad_corridor() -> SetExpr {
    SetExpr::cuboid(vec![0.5], vec![2.5])
        .and_then(|b| b.on_coords(vec![0]))
        .expect("static corridor is valid")
}

/// A system/abstraction pair with environment distribution and controller
/// schemes. `raw` feeds the SSM metric; `feasible` feeds the other three.
#[derive(Clone, Debug)]
pub struct Preset {
    pub name: String,
    pub system: Arc<dyn DynamicalModel>,
    pub abstraction: Arc<dyn DynamicalModel>,
    pub space: EnvironmentSpace,
    pub raw: Arc<dyn ControllerScheme>,
    pub feasible: Arc<dyn ControllerScheme>,
    pub norm: NormConfig,
    pub kernel: Option<KernelSetup>,
    pub notes: Value,
}

impl Preset {
    pub fn by_name(name: &str) -> Result<Preset> {
        match name {
            "running-example" => Self::running_example(),
            "quadrotor-conservative" => Self::quadrotor(name, QUAD_CONSERVATIVE_K.0, QUAD_CONSERVATIVE_K.1),
            "quadrotor-optimistic" => Self::quadrotor(name, QUAD_OPTIMISTIC_K.0, QUAD_OPTIMISTIC_K.1),
            "bicycle-demo" => Self::bicycle_demo(),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    /// `x⁺ = diag(2, 0.1) x + [1, 0]ᵀ u` against an abstraction whose input
    /// also leaks into the second state (`B = [1, 0.1]ᵀ`). LQR with
    /// `Q = qI`, `R = 1`, `q` log-uniform on `[0.1, 100]`.
    pub fn running_example() -> Result<Preset> {
        let system = LinearModel::two_state_example(0.0);
        let abstraction = LinearModel::two_state_example(0.1);
        let scheme: Arc<dyn ControllerScheme> = Arc::new(LqrScheme::new(abstraction.clone(), 0.1, 100.0)?);
        Ok(Preset {
            name: "running-example".into(),
            system: Arc::new(system),
            abstraction: Arc::new(abstraction),
            space: EnvironmentSpace::TerminalBall {
                x0: vec![0.0, 0.0],
                horizon: 20,
                target_lo: vec![-4.0, 0.0],
                target_hi: vec![4.0, 0.0],
                radius: 0.5,
            },
            raw: scheme.clone(),
            feasible: scheme,
            norm: NormConfig::default(),
            kernel: None,
            notes: json!({ "q_range": [0.1, 100.0], "target_radius": 0.5 }),
        })
    }

    /// Vertical quadrotor kept inside `0.5 <= z <= 2.5` for 100 steps.
    /// Feasible controls come from the least-restrictive controller of the
    /// abstraction's viability kernel; raw controls are uniform sequences.
    pub fn quadrotor(name: &str, k_system: f64, k_abstraction: f64) -> Result<Preset> {
        Self::quadrotor_with(name, k_system, k_abstraction, Replay::Feedback)
    }

    pub fn quadrotor_with(name: &str, k_system: f64, k_abstraction: f64, replay: Replay) -> Result<Preset> {
        let system = QuadrotorVertical::new(k_system);
        let abstraction: Arc<dyn DynamicalModel> = Arc::new(QuadrotorVertical::new(k_abstraction));
        let setup = KernelSetup::quadrotor();
        let norm = NormConfig {
            coords: Some(vec![0]),
            ..NormConfig::default()
        };
        let kernel = Arc::new(setup.compute(abstraction.as_ref(), 0.0, &norm)?);
        let feasible = LeastRestrictiveScheme::new(kernel, abstraction.clone()).with_replay(replay);
        Ok(Preset {
            name: name.into(),
            system: Arc::new(system),
            abstraction,
            space: EnvironmentSpace::Stationary {
                x0_lo: vec![0.5, -3.0],
                x0_hi: vec![2.5, 4.0],
                horizon: QUAD_HORIZON,
                avoid: SetExpr::complement(setup.corridor.clone()),
                reach: SetExpr::All,
            },
            raw: Arc::new(UniformOpenLoopScheme::new(vec![(0.0, 1.0)], QUAD_HORIZON)?),
            feasible: Arc::new(feasible),
            norm,
            kernel: Some(setup),
            notes: json!({ "k_system": k_system, "k_abstraction": k_abstraction, "replay": replay }),
        })
    }

    /// Lane keeping on a straight road: lateral position `x` must stay in
    /// `[-1.75, 1.75]`. The system has a longer wheelbase than the model.
    pub fn bicycle_demo() -> Result<Preset> {
        let system = KinematicBicycle::default().with_wheelbase(2.8);
        let abstraction = KinematicBicycle::default();
        let lane = SetExpr::cuboid(vec![-1.75], vec![1.75])?.on_coords(vec![0])?;
        let bounds = abstraction
            .control_bounds()
            .map(<[_]>::to_vec)
            .ok_or_else(|| Error::InvalidParameter("bicycle controls must be bounded".into()))?;
        let horizon = 200;
        let scheme: Arc<dyn ControllerScheme> = Arc::new(UniformOpenLoopScheme::new(
            vec![bounds[0], (-0.1, 0.1)],
            horizon,
        )?);
        Ok(Preset {
            name: "bicycle-demo".into(),
            system: Arc::new(system),
            abstraction: Arc::new(abstraction),
            space: EnvironmentSpace::Stationary {
                x0_lo: vec![-0.5, 0.0, 1.0, -0.05],
                x0_hi: vec![0.5, 0.0, 2.5, 0.05],
                horizon,
                avoid: SetExpr::complement(lane),
                reach: SetExpr::All,
            },
            raw: scheme.clone(),
            feasible: scheme,
            norm: NormConfig {
                coords: Some(vec![0, 1]),
                ..NormConfig::default()
            },
            kernel: None,
            notes: json!({ "wheelbase_system": 2.8, "wheelbase_abstraction": 2.5 }),
        })
    }

    pub fn scheme_for(&self, metric: MetricKind) -> &dyn ControllerScheme {
        if metric.samples_feasible() {
            self.feasible.as_ref()
        } else {
            self.raw.as_ref()
        }
    }

    pub fn problem(&self, metric: MetricKind) -> Problem<'_> {
        Problem {
            space: &self.space,
            scheme: self.scheme_for(metric),
            system: self.system.as_ref(),
            abstraction: self.abstraction.as_ref(),
        }
    }

    pub fn describe(&self) -> Value {
        json!({
            "name": self.name,
            "system": self.system.descriptor(),
            "abstraction": self.abstraction.descriptor(),
            "environment": self.space.distribution(),
            "raw_scheme": self.raw.distribution(),
            "feasible_scheme": self.feasible.distribution(),
            "notes": self.notes,
        })
    }
}
