//! Dynamical models and the rollout engine.
//!
//! The system is only ever stepped, never inspected, so any implementation of
//! [`DynamicalModel`] can stand in for a black-box simulator.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::Controller;
use crate::error::{Error, Result};
use crate::spec::Trajectory;

pub trait DynamicalModel: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Per-coordinate control bounds; `None` means unbounded.
    fn control_bounds(&self) -> Option<&[(f64, f64)]> {
        None
    }

    fn step(&self, x: &[f64], u: &[f64], t: usize) -> Vec<f64>;

    fn descriptor(&self) -> String;

    fn as_linear(&self) -> Option<&LinearModel> {
        None
    }

    fn clamp_control(&self, u: &mut [f64]) {
        if let Some(bounds) = self.control_bounds() {
            for (v, (lo, hi)) in u.iter_mut().zip(bounds) {
                *v = v.clamp(*lo, *hi);
            }
        }
    }
}

/// `x(t+1) = A x(t) + B u(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidParameter(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        Ok(LinearModel { a, b })
    }

    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        LinearModel::new(matrix_from_rows(a)?, matrix_from_rows(b)?)
    }

    /// The running-example plant: `x1` unstable with gain 2, `x2` decoupled and
    /// decaying, `u` entering `x2` with weight `b2`.
    pub fn two_state_example(b2: f64) -> Self {
        LinearModel {
            a: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.1]),
            b: DMatrix::from_row_slice(2, 1, &[1.0, b2]),
        }
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidParameter("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}

impl DynamicalModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &[f64], u: &[f64], _t: usize) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        (&self.a * x + &self.b * u).as_slice().to_vec()
    }

    fn descriptor(&self) -> String {
        format!("linear(A={:?}, B={:?})", self.a.as_slice(), self.b.as_slice())
    }

    fn as_linear(&self) -> Option<&LinearModel> {
        Some(self)
    }
}

/// Vertical quadrotor flight, state `(z, v_z)`, thrust `u ∈ [0, 1]`:
///
/// ```text
/// z(t+1)   = z(t) + T v(t)
/// v(t+1)   = v(t) + T (k u(t) + g)
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorVertical {
    pub k: f64,
    #[serde(default = "QuadrotorVertical::default_dt")]
    pub dt: f64,
    #[serde(default = "QuadrotorVertical::default_g")]
    pub g: f64,
}

const UNIT_INTERVAL: [(f64, f64); 1] = [(0.0, 1.0)];

impl QuadrotorVertical {
    pub const DT: f64 = 0.01;
    pub const G: f64 = -9.8;

    pub fn new(k: f64) -> Self {
        QuadrotorVertical {
            k,
            dt: Self::DT,
            g: Self::G,
        }
    }

    fn default_dt() -> f64 {
        Self::DT
    }

    fn default_g() -> f64 {
        Self::G
    }
}

impl DynamicalModel for QuadrotorVertical {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn control_bounds(&self) -> Option<&[(f64, f64)]> {
        Some(&UNIT_INTERVAL)
    }

    fn step(&self, x: &[f64], u: &[f64], _t: usize) -> Vec<f64> {
        vec![x[0] + self.dt * x[1], x[1] + self.dt * (self.k * u[0] + self.g)]
    }

    fn descriptor(&self) -> String {
        format!("quadrotor(k={}, dt={}, g={})", self.k, self.dt, self.g)
    }
}

/// Kinematic bicycle, state `(x, y, v, θ)` with `x` the lateral offset and
/// `y` the distance along the road; controls `(a, ω)`. Explicit Euler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicBicycle {
    #[serde(default = "KinematicBicycle::default_wheelbase")]
    pub wheelbase: f64,
    #[serde(default = "KinematicBicycle::default_v_max")]
    pub v_max: f64,
    #[serde(default = "KinematicBicycle::default_accel")]
    pub max_accel: f64,
    #[serde(default = "KinematicBicycle::default_dt")]
    pub dt: f64,
    #[serde(skip)]
    bounds: Option<[(f64, f64); 2]>,
}

impl Default for KinematicBicycle {
    fn default() -> Self {
        KinematicBicycle {
            wheelbase: Self::default_wheelbase(),
            v_max: Self::default_v_max(),
            max_accel: Self::default_accel(),
            dt: Self::default_dt(),
            bounds: None,
        }
        .with_bounds()
    }
}

impl KinematicBicycle {
    pub const STEER_MAX: f64 = std::f64::consts::FRAC_PI_4;

    pub fn with_wheelbase(mut self, wheelbase: f64) -> Self {
        self.wheelbase = wheelbase;
        self
    }

    fn default_wheelbase() -> f64 {
        2.5
    }

    /// 10 km/h.
    fn default_v_max() -> f64 {
        10.0 / 3.6
    }

    fn default_accel() -> f64 {
        1.0
    }

    fn default_dt() -> f64 {
        0.03
    }

    fn with_bounds(mut self) -> Self {
        self.bounds = Some([
            (-self.max_accel, self.max_accel),
            (-Self::STEER_MAX, Self::STEER_MAX),
        ]);
        self
    }
}

impl DynamicalModel for KinematicBicycle {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn control_bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_ref().map(|b| &b[..])
    }

    fn step(&self, x: &[f64], u: &[f64], _t: usize) -> Vec<f64> {
        let (px, py, v, th) = (x[0], x[1], x[2], x[3]);
        let (a, w) = (u[0], u[1]);
        vec![
            px + self.dt * v * th.sin(),
            py + self.dt * v * th.cos(),
            (v + self.dt * a).clamp(0.0, self.v_max),
            th + self.dt * v / self.wheelbase * w.tan(),
        ]
    }

    fn descriptor(&self) -> String {
        format!(
            "bicycle(l={}, v_max={}, a_max={}, dt={})",
            self.wheelbase, self.v_max, self.max_accel, self.dt
        )
    }
}

/// Roll `controller` out on `model` for `horizon` steps from `x0`.
pub fn simulate(
    model: &dyn DynamicalModel,
    x0: &[f64],
    controller: &Controller,
    horizon: usize,
) -> Result<Trajectory> {
    if x0.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.state_dim(),
            got: x0.len(),
        });
    }
    let policy = controller
        .policy()
        .ok_or_else(|| Error::InvalidParameter("null controller cannot be simulated".into()))?;
    if policy.control_dim() != model.control_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.control_dim(),
            got: policy.control_dim(),
        });
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(x0.to_vec());
    for t in 0..horizon {
        let x = &states[t];
        let mut u = policy.act(t, x);
        model.clamp_control(&mut u);
        let next = model.step(x, &u, t);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: t + 1 });
        }
        controls.push(u);
        states.push(next);
    }
    Ok(Trajectory { states, controls })
}

/// Serialized model selection: `kind` picks the constructor, remaining keys
/// are that constructor's parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: String,
    #[serde(flatten)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

pub type ModelConstructor =
    fn(&serde_json::Map<String, serde_json::Value>) -> Result<Arc<dyn DynamicalModel>>;

/// Descriptor-keyed constructor table for models.
#[derive(Clone)]
pub struct ModelRegistry {
    table: BTreeMap<String, ModelConstructor>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

fn params<T: serde::de::DeserializeOwned>(p: &serde_json::Map<String, serde_json::Value>) -> Result<T> {
    serde_json::from_value(serde_json::Value::Object(p.clone())).map_err(|e| Error::Config(e.to_string()))
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut r = ModelRegistry {
            table: BTreeMap::new(),
        };
        r.register("linear", |p| {
            let lp: LinearParams = params(p)?;
            Ok(Arc::new(LinearModel::from_rows(&lp.a, &lp.b)?))
        });
        r.register("quadrotor", |p| Ok(Arc::new(params::<QuadrotorVertical>(p)?)));
        r.register("bicycle", |p| {
            Ok(Arc::new(params::<KinematicBicycle>(p)?.with_bounds()))
        });
        r
    }
}

impl ModelRegistry {
    pub fn register(&mut self, kind: &str, ctor: ModelConstructor) {
        self.table.insert(kind.to_string(), ctor);
    }

    pub fn build(&self, spec: &ModelSpec) -> Result<Arc<dyn DynamicalModel>> {
        let ctor = self
            .table
            .get(&spec.kind)
            .ok_or_else(|| Error::Config(format!("unknown model kind {:?}", spec.kind)))?;
        ctor(&spec.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Controller;

    #[test]
    fn identity_dynamics_hold_state() {
        let m = LinearModel::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let c = Controller::constant(vec![3.0]);
        let tr = simulate(&m, &[1.5, -2.0], &c, 5).unwrap();
        assert!(tr.states.iter().all(|x| x == &vec![1.5, -2.0]));
        assert_eq!(tr.states.len(), 6);
        assert_eq!(tr.controls.len(), 5);
    }

    #[test]
    fn running_example_origin_is_equilibrium() {
        let m = LinearModel::two_state_example(0.0);
        let tr = simulate(&m, &[0.0, 0.0], &Controller::constant(vec![0.0]), 20).unwrap();
        assert!(tr.states.iter().all(|x| x.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn quadrotor_single_step() {
        let k = 11.0;
        let m = QuadrotorVertical::new(k);
        let tr = simulate(&m, &[1.0, 0.0], &Controller::constant(vec![1.0]), 1).unwrap();
        assert_eq!(tr.states[1][0], 1.0);
        assert_eq!(tr.states[1][1], 0.0 + 0.01 * (k * 1.0 - 9.8));
    }

    #[test]
    fn quadrotor_controls_clamped() {
        let m = QuadrotorVertical::new(11.0);
        let c = Controller::from_fn(serde_json::json!("wild"), 1, |t, _| vec![if t % 2 == 0 { 5.0 } else { -3.0 }]);
        let tr = simulate(&m, &[1.0, 0.0], &c, 10).unwrap();
        assert!(tr.controls.iter().all(|u| (0.0..=1.0).contains(&u[0])));
    }

    #[test]
    fn divergence_reports_step() {
        let m = LinearModel::new(DMatrix::from_element(1, 1, 1e300), DMatrix::zeros(1, 1)).unwrap();
        let err = simulate(&m, &[1e300], &Controller::constant(vec![0.0]), 4).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1 }));
    }

    #[test]
    fn null_controller_rejected() {
        let m = LinearModel::two_state_example(0.0);
        assert!(simulate(&m, &[0.0, 0.0], &Controller::null(), 3).is_err());
    }

    #[test]
    fn bicycle_saturates_and_steers() {
        let m = KinematicBicycle::default();
        let c = Controller::constant(vec![100.0, 10.0]);
        let tr = simulate(&m, &[0.0, 0.0, 0.0, 0.0], &c, 200).unwrap();
        for (x, u) in tr.states.iter().zip(&tr.controls) {
            assert!(x[2] <= m.v_max + 1e-12);
            assert!(u[0] <= 1.0 && u[1] <= KinematicBicycle::STEER_MAX);
        }
        let last = tr.states.last().unwrap();
        assert!((last[2] - m.v_max).abs() < 1e-12);
        assert!(last[3] > 0.0 && tr.states[20][1] > 0.0 && tr.states[20][0] > 0.0);
    }

    #[test]
    fn bicycle_straight_line() {
        let m = KinematicBicycle::default();
        let c = Controller::constant(vec![0.0, 0.0]);
        let tr = simulate(&m, &[0.0, 0.0, 2.0, 0.0], &c, 10).unwrap();
        let last = tr.states.last().unwrap();
        assert!((last[1] - 10.0 * 0.03 * 2.0).abs() < 1e-12);
        assert_eq!(last[0], 0.0);
    }

    #[test]
    fn registry_builds_and_rejects() {
        let reg = ModelRegistry::default();
        let spec: ModelSpec = toml::from_str("kind = \"quadrotor\"\nk = 10.5\n").unwrap();
        let m = reg.build(&spec).unwrap();
        assert_eq!(m.state_dim(), 2);
        let bad: ModelSpec = toml::from_str("kind = \"quadrotor\"\nk = 1.0\nkay = 2\n").unwrap();
        assert!(reg.build(&bad).is_err());
        let unknown: ModelSpec = toml::from_str("kind = \"warp\"\n").unwrap();
        assert!(reg.build(&unknown).is_err());
        let lin: ModelSpec =
            toml::from_str("kind = \"linear\"\na = [[2.0, 0.0], [0.0, 0.1]]\nb = [[1.0], [0.0]]\n").unwrap();
        assert!(reg.build(&lin).unwrap().as_linear().is_some());
        let bike: ModelSpec = toml::from_str("kind = \"bicycle\"\n").unwrap();
        assert!(reg.build(&bike).unwrap().control_bounds().is_some());
    }
}
