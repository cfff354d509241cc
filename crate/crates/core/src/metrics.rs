//! Per-sample distances for the four metric variants.

use serde::{Deserialize, Serialize};

use crate::control::Controller;
use crate::dynamics::{simulate, DynamicalModel};
use crate::error::Result;
use crate::geometry::Norm;
use crate::spec::{margin_of_violation, satisfies, sup_trajectory_distance, Environment, SpecMargin, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Sup-norm trajectory distance over unfiltered scheme draws.
    Ssm,
    /// Sup-norm distance over abstraction-feasible controllers.
    SsmFeasible,
    /// As `SsmFeasible`, counted only when the system run violates.
    SsmFalsifying,
    /// Abstraction margin to the spec boundaries on system-violating runs.
    Spec,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Ssm,
        MetricKind::SsmFeasible,
        MetricKind::SsmFalsifying,
        MetricKind::Spec,
    ];

    /// Whether controllers are drawn from `U_φ(e)` rather than the raw scheme.
    pub fn samples_feasible(self) -> bool {
        !matches!(self, MetricKind::Ssm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Ssm => "ssm",
            MetricKind::SsmFeasible => "ssm_feasible",
            MetricKind::SsmFalsifying => "ssm_falsifying",
            MetricKind::Spec => "spec",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown metric {s:?} (expected ssm, ssm_feasible, ssm_falsifying, spec)"))
    }
}

/// Norm for set distances and trajectory distances; `coords` restricts the
/// trajectory distance to a subset of state coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormConfig {
    #[serde(default)]
    pub norm: Norm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<usize>>,
}

/// Outcome of running one `(e, u)` pair on both models.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEvaluation {
    pub env_id: String,
    pub controller: serde_json::Value,
    /// `None` for null-controller samples.
    pub sat_m: Option<bool>,
    pub sat_s: Option<bool>,
    pub d: f64,
    pub trajectories: Option<(Trajectory, Trajectory)>,
}

impl SampleEvaluation {
    pub fn is_null(&self) -> bool {
        self.sat_m.is_none()
    }

    /// `sat_M ∧ ¬sat_S`.
    pub fn falsifying(&self) -> bool {
        self.sat_m == Some(true) && self.sat_s == Some(false)
    }
}

/// The four per-sample distances of one evaluated pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairDistances {
    pub sup: f64,
    pub falsifying: f64,
    pub spec: f64,
}

pub fn pair_distances(
    e: &Environment,
    traj_s: &Trajectory,
    traj_m: &Trajectory,
    sat_s: bool,
    norm: &NormConfig,
) -> Result<PairDistances> {
    let sup = sup_trajectory_distance(traj_s, traj_m, norm.norm, norm.coords.as_deref())?;
    Ok(PairDistances {
        sup,
        falsifying: if sat_s { 0.0 } else { sup },
        spec: margin_of_violation(traj_m, !sat_s, e, norm.norm)?,
    })
}

/// Runs `u` on system and abstraction and evaluates the distance for `kind`.
/// The null controller yields `d = 0` without rollouts.
pub fn evaluate_sample(
    kind: MetricKind,
    e: &Environment,
    u: &Controller,
    system: &dyn DynamicalModel,
    abstraction: &dyn DynamicalModel,
    norm: &NormConfig,
) -> Result<SampleEvaluation> {
    if u.is_null() {
        return Ok(SampleEvaluation {
            env_id: e.id.clone(),
            controller: u.descriptor().clone(),
            sat_m: None,
            sat_s: None,
            d: 0.0,
            trajectories: None,
        });
    }
    let h = e.horizon();
    let traj_s = simulate(system, &e.x0, u, h)?;
    let traj_m = simulate(abstraction, &e.x0, u, h)?;
    let sat_s = satisfies(&traj_s, e, SpecMargin::ZERO, norm.norm)?;
    let sat_m = satisfies(&traj_m, e, SpecMargin::ZERO, norm.norm)?;
    let pd = pair_distances(e, &traj_s, &traj_m, sat_s, norm)?;
    let d = match kind {
        MetricKind::Ssm | MetricKind::SsmFeasible => pd.sup,
        MetricKind::SsmFalsifying => pd.falsifying,
        MetricKind::Spec => pd.spec,
    };
    Ok(SampleEvaluation {
        env_id: e.id.clone(),
        controller: u.descriptor().clone(),
        sat_m: Some(sat_m),
        sat_s: Some(sat_s),
        d,
        trajectories: Some((traj_s, traj_m)),
    })
}
