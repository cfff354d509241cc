//! Controllers, controller schemes, and feasible-controller rejection sampling.

use std::fmt;
use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::dynamics::{simulate, DynamicalModel, LinearModel};
use crate::error::{Error, Result};
use crate::geometry::Norm;
use crate::reach::SafetyKernel;
use crate::spec::{satisfies, Environment, SpecMargin, Trajectory};

/// Random source handed to schemes. Counter-seeded per sample by the engine.
pub type SampleRng = ChaCha8Rng;

/// A feedback law `(t, x) -> u`.
pub trait Policy: Send + Sync + fmt::Debug {
    fn act(&self, t: usize, x: &[f64]) -> Vec<f64>;
    fn control_dim(&self) -> usize;
}

/// A concrete controller, or the null controller recorded when no feasible
/// controller exists for an environment.
#[derive(Clone)]
pub struct Controller {
    policy: Option<Arc<dyn Policy>>,
    descriptor: Value,
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Controller")
            .field("descriptor", &self.descriptor)
            .field("null", &self.is_null())
            .finish()
    }
}

impl Controller {
    pub fn new(policy: Arc<dyn Policy>, descriptor: Value) -> Self {
        Controller {
            policy: Some(policy),
            descriptor,
        }
    }

    pub fn null() -> Self {
        Controller::null_with(json!({ "scheme": "null" }))
    }

    pub fn null_with(descriptor: Value) -> Self {
        Controller {
            policy: None,
            descriptor,
        }
    }

    pub fn constant(u: Vec<f64>) -> Self {
        let d = json!({ "scheme": "constant", "u": u });
        Controller::new(Arc::new(OpenLoop { controls: vec![u] }), d)
    }

    /// Open-loop sequence; steps past its end repeat the last control.
    pub fn open_loop(controls: Vec<Vec<f64>>, descriptor: Value) -> Self {
        Controller::new(Arc::new(OpenLoop { controls }), descriptor)
    }

    pub fn from_fn<F>(descriptor: Value, control_dim: usize, f: F) -> Self
    where
        F: Fn(usize, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Controller::new(
            Arc::new(FnPolicy {
                f: Box::new(f),
                dim: control_dim,
            }),
            descriptor,
        )
    }

    pub fn is_null(&self) -> bool {
        self.policy.is_none()
    }

    pub fn policy(&self) -> Option<&dyn Policy> {
        self.policy.as_deref()
    }

    pub fn descriptor(&self) -> &Value {
        &self.descriptor
    }
}

#[derive(Debug)]
struct OpenLoop {
    controls: Vec<Vec<f64>>,
}

impl Policy for OpenLoop {
    fn act(&self, t: usize, _x: &[f64]) -> Vec<f64> {
        self.controls[t.min(self.controls.len() - 1)].clone()
    }

    fn control_dim(&self) -> usize {
        self.controls.first().map_or(0, Vec::len)
    }
}

struct FnPolicy {
    f: Box<dyn Fn(usize, &[f64]) -> Vec<f64> + Send + Sync>,
    dim: usize,
}

impl fmt::Debug for FnPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnPolicy")
    }
}

impl Policy for FnPolicy {
    fn act(&self, t: usize, x: &[f64]) -> Vec<f64> {
        (self.f)(t, x)
    }

    fn control_dim(&self) -> usize {
        self.dim
    }
}

/// Tracking LQR: `u = u_ff − K (x − x*)`.
#[derive(Debug, Clone)]
pub struct LqrPolicy {
    pub gain: DMatrix<f64>,
    pub feedforward: DVector<f64>,
    pub target: DVector<f64>,
}

impl Policy for LqrPolicy {
    fn act(&self, _t: usize, x: &[f64]) -> Vec<f64> {
        let err = DVector::from_column_slice(x) - &self.target;
        (&self.feedforward - &self.gain * err).as_slice().to_vec()
    }

    fn control_dim(&self) -> usize {
        self.gain.nrows()
    }
}

/// A samplable controller family `U_Π(e)`.
pub trait ControllerScheme: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn sample(&self, env: &Environment, rng: &mut SampleRng) -> Result<Controller>;

    /// Reconstructs a controller from its descriptor.
    fn rebuild(&self, env: &Environment, descriptor: &Value) -> Result<Controller>;

    /// Declares `U_φ(e; d1) ⊆ U_φ(e; d2)` whenever `d1 > d2`.
    fn feasibility_monotone(&self) -> bool {
        true
    }

    /// Short description of the sampling distribution, for run records.
    fn distribution(&self) -> Value {
        json!({ "scheme": self.name() })
    }
}

fn descriptor_f64(d: &Value, key: &str) -> Result<f64> {
    d.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::InvalidParameter(format!("descriptor lacks numeric {key:?}: {d}")))
}

fn descriptor_seed(d: &Value) -> Result<u64> {
    d.get("seed")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::InvalidParameter(format!("descriptor lacks seed: {d}")))
}

#[derive(Debug, Clone)]
pub struct Dare {
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub iterations: usize,
}

pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 100_000;

/// One application of the Riccati map.
pub fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let at = a.transpose();
    let bt = b.transpose();
    let s = r + &bt * p * b;
    let k = s.lu().solve(&(&bt * p * a))?;
    let next = &at * p * a - &at * p * b * k + q;
    Some((&next + next.transpose()) * 0.5)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration
/// from `P = Q`, returning `P` and `K = (R + BᵀPB)⁻¹BᵀPA`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<Dare> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(Error::InvalidParameter(format!(
            "inconsistent DARE dimensions A{:?} B{:?} Q{:?} R{:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let pair = || format!("A={:?}, B={:?}", a.as_slice(), b.as_slice());
    let mut p = q.clone();
    let mut iterations = 0;
    loop {
        let next = riccati_map(a, b, q, r, &p).ok_or_else(|| Error::RiccatiNoConvergence {
            iterations,
            pair: pair(),
        })?;
        iterations += 1;
        let diff = if next.iter().all(|v| v.is_finite()) {
            (&next - &p).amax()
        } else {
            f64::INFINITY
        };
        p = next;
        if !diff.is_finite() {
            return Err(Error::RiccatiNoConvergence {
                iterations,
                pair: pair(),
            });
        }
        // Large P cannot resolve increments below a few ulps.
        let floor = 8.0 * f64::EPSILON * p.amax();
        if diff <= (DARE_TOL * 1e-2).max(floor) {
            break;
        }
        if iterations >= DARE_MAX_ITER {
            return Err(Error::RiccatiNoConvergence {
                iterations,
                pair: pair(),
            });
        }
    }
    let bt = b.transpose();
    let gain = (r + &bt * &p * b)
        .lu()
        .solve(&(&bt * &p * a))
        .ok_or_else(|| Error::RiccatiNoConvergence {
            iterations,
            pair: pair(),
        })?;
    let radius = spectral_radius(&(a - b * &gain));
    if radius >= 1.0 {
        return Err(Error::UnstableClosedLoop { radius });
    }
    Ok(Dare { p, gain, iterations })
}

/// `LQR(q, x*)` on a linear abstraction with `Q = qI`, `R = I`, `q`
/// log-uniform on `[q_lo, q_hi]`.
#[derive(Debug, Clone)]
pub struct LqrScheme {
    abstraction: LinearModel,
    q_lo: f64,
    q_hi: f64,
}

impl LqrScheme {
    pub fn new(abstraction: LinearModel, q_lo: f64, q_hi: f64) -> Result<Self> {
        if !(q_lo > 0.0 && q_lo <= q_hi && q_hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "q range [{q_lo}, {q_hi}] must be positive and ordered"
            )));
        }
        Ok(LqrScheme {
            abstraction,
            q_lo,
            q_hi,
        })
    }

    /// Least-squares `u_ff` with `B u_ff ≈ (I − A) x*`, plus the residual norm.
    pub fn feedforward(&self, target: &DVector<f64>) -> (DVector<f64>, f64) {
        let a = &self.abstraction.a;
        let b = &self.abstraction.b;
        let n = a.nrows();
        let rhs = (DMatrix::identity(n, n) - a) * target;
        let u = b
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(b.ncols()));
        let residual = (b * &u - rhs).norm();
        (u, residual)
    }

    pub fn build(&self, env: &Environment, q: f64) -> Result<Controller> {
        let target = env.terminal_target().ok_or(Error::NoTerminalBall)?;
        let n = self.abstraction.a.nrows();
        let m = self.abstraction.b.ncols();
        if target.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: target.len(),
            });
        }
        let dare = solve_dare(
            &self.abstraction.a,
            &self.abstraction.b,
            &(DMatrix::identity(n, n) * q),
            &DMatrix::identity(m, m),
        )?;
        let target = DVector::from_column_slice(target);
        let (feedforward, residual) = self.feedforward(&target);
        if residual > 1e-9 {
            debug!("lqr q={q}: target not an equilibrium, feedforward residual {residual:.3e}");
        }
        let policy = LqrPolicy {
            gain: dare.gain,
            feedforward,
            target,
        };
        Ok(Controller::new(Arc::new(policy), json!({ "scheme": "lqr", "q": q })))
    }
}

impl ControllerScheme for LqrScheme {
    fn name(&self) -> &str {
        "lqr"
    }

    fn sample(&self, env: &Environment, rng: &mut SampleRng) -> Result<Controller> {
        let q = if self.q_lo == self.q_hi {
            self.q_lo
        } else {
            rng.random_range(self.q_lo.ln()..self.q_hi.ln()).exp()
        };
        self.build(env, q)
    }

    fn rebuild(&self, env: &Environment, descriptor: &Value) -> Result<Controller> {
        self.build(env, descriptor_f64(descriptor, "q")?)
    }

    fn distribution(&self) -> Value {
        json!({ "scheme": "lqr", "q": "log-uniform", "q_range": [self.q_lo, self.q_hi] })
    }
}

/// i.i.d. uniform control sequences over the box of control bounds.
#[derive(Debug, Clone)]
pub struct UniformOpenLoopScheme {
    bounds: Vec<(f64, f64)>,
    horizon: usize,
}

impl UniformOpenLoopScheme {
    pub fn new(bounds: Vec<(f64, f64)>, horizon: usize) -> Result<Self> {
        if bounds.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad control bounds {bounds:?}")));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        Ok(UniformOpenLoopScheme { bounds, horizon })
    }

    pub fn build(&self, seed: u64) -> Controller {
        let mut rng = SampleRng::seed_from_u64(seed);
        let controls = (0..self.horizon)
            .map(|_| {
                self.bounds
                    .iter()
                    .map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
                    .collect()
            })
            .collect();
        Controller::open_loop(controls, json!({ "scheme": "uniform_open_loop", "seed": seed }))
    }
}

impl ControllerScheme for UniformOpenLoopScheme {
    fn name(&self) -> &str {
        "uniform_open_loop"
    }

    fn sample(&self, _env: &Environment, rng: &mut SampleRng) -> Result<Controller> {
        Ok(self.build(rng.random()))
    }

    fn rebuild(&self, _env: &Environment, descriptor: &Value) -> Result<Controller> {
        Ok(self.build(descriptor_seed(descriptor)?))
    }

    fn distribution(&self) -> Value {
        json!({ "scheme": "uniform_open_loop", "per_step": "iid uniform", "bounds": self.bounds })
    }
}

/// How a least-restrictive controller is handed to the models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replay {
    /// State feedback: each model's own state selects free or safe action.
    #[default]
    Feedback,
    /// The action sequence chosen along the abstraction rollout, replayed
    /// verbatim on both models.
    OpenLoop,
}

/// Least-restrictive policy: the pre-drawn free control for step `t` while
/// `V_t(x)` clears `band`, the kernel's one-step optimal control otherwise.
#[derive(Debug)]
pub struct LeastRestrictivePolicy {
    kernel: Arc<SafetyKernel>,
    abstraction: Arc<dyn DynamicalModel>,
    band: f64,
    free: Vec<usize>,
}

impl LeastRestrictivePolicy {
    pub fn uses_safe_action(&self, t: usize, x: &[f64]) -> bool {
        !matches!(self.kernel.value_at(t, x), Some(v) if v > self.band)
    }

    /// One-step lookahead on the abstraction: the free action must leave
    /// `V_{t+1}` above the band too. Without it a single free step at high
    /// speed can cross from just above the band to below zero.
    fn free_step_clears_band(&self, t: usize, x: &[f64], u: &[f64]) -> bool {
        let next = self.abstraction.step(x, u, t);
        matches!(self.kernel.value_at(t + 1, &next), Some(v) if v > self.band)
    }
}

impl Policy for LeastRestrictivePolicy {
    fn act(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let free = &self.kernel.controls()[self.free[t.min(self.free.len() - 1)]];
        if self.uses_safe_action(t, x) || !self.free_step_clears_band(t, x, free) {
            self.kernel.safe_control(t, x, self.abstraction.as_ref())
        } else {
            free.clone()
        }
    }

    fn control_dim(&self) -> usize {
        self.abstraction.control_dim()
    }
}

/// Least-restrictive safe control backed by a viability kernel of the
/// abstraction. Free actions are uniform over the kernel's discretized
/// controls; inside a band of one grid-cell diagonal the safe action is used.
#[derive(Debug, Clone)]
pub struct LeastRestrictiveScheme {
    kernel: Arc<SafetyKernel>,
    abstraction: Arc<dyn DynamicalModel>,
    band: f64,
    replay: Replay,
}

impl LeastRestrictiveScheme {
    pub fn new(kernel: Arc<SafetyKernel>, abstraction: Arc<dyn DynamicalModel>) -> Self {
        let band = kernel.grid().cell_diagonal();
        LeastRestrictiveScheme {
            kernel,
            abstraction,
            band,
            replay: Replay::Feedback,
        }
    }

    pub fn with_band(mut self, band: f64) -> Self {
        self.band = band;
        self
    }

    pub fn with_replay(mut self, replay: Replay) -> Self {
        self.replay = replay;
        self
    }

    pub fn kernel(&self) -> &SafetyKernel {
        &self.kernel
    }

    pub fn policy(&self, horizon: usize, seed: u64) -> LeastRestrictivePolicy {
        let mut rng = SampleRng::seed_from_u64(seed);
        let n = self.kernel.controls().len();
        LeastRestrictivePolicy {
            kernel: self.kernel.clone(),
            abstraction: self.abstraction.clone(),
            band: self.band,
            free: (0..horizon.max(1)).map(|_| rng.random_range(0..n)).collect(),
        }
    }

    pub fn build(&self, env: &Environment, seed: u64) -> Result<Controller> {
        let descriptor = json!({ "scheme": "least_restrictive", "seed": seed });
        if !self.kernel.membership(&env.x0) {
            return Ok(Controller::null_with(json!({
                "scheme": "least_restrictive",
                "seed": seed,
                "outside_kernel": true
            })));
        }
        let policy = self.policy(env.horizon(), seed);
        match self.replay {
            Replay::Feedback => Ok(Controller::new(Arc::new(policy), descriptor)),
            Replay::OpenLoop => {
                let traj = simulate(
                    self.abstraction.as_ref(),
                    &env.x0,
                    &Controller::new(Arc::new(policy), Value::Null),
                    env.horizon(),
                )?;
                Ok(Controller::open_loop(traj.controls, descriptor))
            }
        }
    }
}

impl ControllerScheme for LeastRestrictiveScheme {
    fn name(&self) -> &str {
        "least_restrictive"
    }

    fn sample(&self, env: &Environment, rng: &mut SampleRng) -> Result<Controller> {
        self.build(env, rng.random())
    }

    fn rebuild(&self, env: &Environment, descriptor: &Value) -> Result<Controller> {
        self.build(env, descriptor_seed(descriptor)?)
    }

    fn distribution(&self) -> Value {
        json!({
            "scheme": "least_restrictive",
            "free_control": "uniform over discretized levels",
            "band": self.band,
            "replay": self.replay,
            "kernel": self.kernel.summary(),
        })
    }
}

/// A finite list of open-loop sequences. An environment carrying a
/// `candidate` parameter pins the sequence; otherwise one is drawn uniformly.
#[derive(Debug, Clone)]
pub struct FiniteOpenLoopScheme {
    candidates: Vec<Vec<Vec<f64>>>,
}

impl FiniteOpenLoopScheme {
    pub fn new(candidates: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if candidates.is_empty() || candidates.iter().any(Vec::is_empty) {
            return Err(Error::InvalidParameter("candidate sequences must be non-empty".into()));
        }
        Ok(FiniteOpenLoopScheme { candidates })
    }

    /// Every sequence of length `horizon` over `levels` (scalar control).
    pub fn enumerate(levels: &[f64], horizon: usize) -> Result<Self> {
        let mut seqs: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
        for _ in 0..horizon {
            seqs = seqs
                .into_iter()
                .flat_map(|s| {
                    levels.iter().map(move |&l| {
                        let mut t = s.clone();
                        t.push(vec![l]);
                        t
                    })
                })
                .collect();
        }
        Self::new(seqs)
    }

    pub fn candidates(&self) -> &[Vec<Vec<f64>>] {
        &self.candidates
    }

    pub fn build(&self, index: usize) -> Result<Controller> {
        let seq = self
            .candidates
            .get(index)
            .ok_or_else(|| Error::InvalidParameter(format!("candidate {index} out of range")))?;
        Ok(Controller::open_loop(seq.clone(), json!({ "scheme": "finite_open_loop", "candidate": index })))
    }
}

impl ControllerScheme for FiniteOpenLoopScheme {
    fn name(&self) -> &str {
        "finite_open_loop"
    }

    fn sample(&self, env: &Environment, rng: &mut SampleRng) -> Result<Controller> {
        match env.params.get("candidate").and_then(Value::as_u64) {
            Some(k) => self.build(k as usize),
            None => self.build(rng.random_range(0..self.candidates.len())),
        }
    }

    fn rebuild(&self, _env: &Environment, descriptor: &Value) -> Result<Controller> {
        let k = descriptor
            .get("candidate")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::InvalidParameter(format!("descriptor lacks candidate: {descriptor}")))?;
        self.build(k as usize)
    }

    fn distribution(&self) -> Value {
        json!({ "scheme": "finite_open_loop", "count": self.candidates.len() })
    }
}

/// A singleton scheme: every sample is the same controller.
#[derive(Debug, Clone)]
pub struct FixedScheme<S> {
    inner: S,
    descriptor: Value,
}

impl<S: ControllerScheme> FixedScheme<S> {
    pub fn new(inner: S, descriptor: Value) -> Self {
        FixedScheme { inner, descriptor }
    }
}

impl<S: ControllerScheme> ControllerScheme for FixedScheme<S> {
    fn name(&self) -> &str {
        "fixed"
    }

    fn sample(&self, env: &Environment, _rng: &mut SampleRng) -> Result<Controller> {
        self.inner.rebuild(env, &self.descriptor)
    }

    fn rebuild(&self, env: &Environment, descriptor: &Value) -> Result<Controller> {
        self.inner.rebuild(env, descriptor)
    }

    fn feasibility_monotone(&self) -> bool {
        self.inner.feasibility_monotone()
    }

    fn distribution(&self) -> Value {
        json!({ "scheme": "fixed", "inner": self.inner.name(), "descriptor": self.descriptor })
    }
}

/// Outcome of rejection sampling.
#[derive(Debug, Clone)]
pub struct FeasibleDraw {
    pub controller: Controller,
    pub attempts: usize,
    /// Abstraction rollout of the accepted controller.
    pub abstraction_traj: Option<Trajectory>,
}

/// Draws from `scheme` until the abstraction rollout satisfies `φ(e; margin)`,
/// giving up with the null controller after `cap` rejections.
pub fn sample_feasible(
    scheme: &dyn ControllerScheme,
    env: &Environment,
    abstraction: &dyn DynamicalModel,
    margin: SpecMargin,
    norm: Norm,
    rng: &mut SampleRng,
    cap: usize,
) -> Result<FeasibleDraw> {
    if cap == 0 {
        return Err(Error::InvalidParameter("rejection cap must be >= 1".into()));
    }
    for attempt in 1..=cap {
        let c = scheme.sample(env, rng)?;
        if c.is_null() {
            return Ok(FeasibleDraw {
                controller: c,
                attempts: attempt,
                abstraction_traj: None,
            });
        }
        let traj = simulate(abstraction, &env.x0, &c, env.horizon())?;
        if satisfies(&traj, env, margin, norm)? {
            return Ok(FeasibleDraw {
                controller: c,
                attempts: attempt,
                abstraction_traj: Some(traj),
            });
        }
    }
    Ok(FeasibleDraw {
        controller: Controller::null_with(json!({ "scheme": scheme.name(), "exhausted": cap })),
        attempts: cap,
        abstraction_traj: None,
    })
}
