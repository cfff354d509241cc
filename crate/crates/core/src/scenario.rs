//! Scenario-optimization estimation of simulation metrics.
//!
//! Sample `i` draws all of its randomness from `split_seed(master, i)`, so the
//! estimate depends only on the master seed, never on evaluation order or
//! worker count.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::control::{sample_feasible, ControllerScheme, SampleRng};
use crate::dynamics::{simulate, DynamicalModel};
use crate::error::{Error, Result};
use crate::geometry::SetExpr;
use crate::metrics::{evaluate_sample, MetricKind, NormConfig, SampleEvaluation};
use crate::par;
use crate::spec::{satisfies, Environment, SpecMargin, TimeVaryingSet, Trajectory};

/// Smallest `N >= (2/ε)(ln(1/β) + 1)`.
pub fn sample_size(epsilon: f64, beta: f64) -> Result<usize> {
    check_unit("epsilon", epsilon)?;
    check_unit("beta", beta)?;
    let bound = 2.0 / epsilon * ((1.0 / beta).ln() + 1.0);
    Ok(bound.ceil() as usize)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must lie in (0, 1)")))
    }
}

/// SplitMix64 finalizer applied to `master + (index + 1) * φ64`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Distribution over environments. Ranges are sampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpace {
    /// Fixed `x0`, no avoid set, reach set `All` until a terminal ball at `H`
    /// whose center is drawn from `[target_lo, target_hi]`.
    TerminalBall {
        x0: Vec<f64>,
        horizon: usize,
        target_lo: Vec<f64>,
        target_hi: Vec<f64>,
        radius: f64,
    },
    /// `x0` drawn from a box; stationary avoid and reach sets.
    Stationary {
        x0_lo: Vec<f64>,
        x0_hi: Vec<f64>,
        horizon: usize,
        avoid: SetExpr,
        reach: SetExpr,
    },
    /// An explicit list. `cycle` visits entries in index order instead of
    /// drawing uniformly.
    Finite {
        environments: Vec<Environment>,
        #[serde(default)]
        cycle: bool,
    },
}

fn uniform_in(rng: &mut SampleRng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| if l == h { l } else { rng.random_range(l..h) })
        .collect()
}

fn check_range(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            got: hi.len(),
        });
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
        return Err(Error::InvalidParameter(format!("empty sampling range [{lo:?}, {hi:?}]")));
    }
    Ok(())
}

impl EnvironmentSpace {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvironmentSpace::TerminalBall {
                x0,
                target_lo,
                target_hi,
                radius,
                ..
            } => {
                check_range(target_lo, target_hi)?;
                if target_lo.len() != x0.len() {
                    return Err(Error::DimensionMismatch {
                        expected: x0.len(),
                        got: target_lo.len(),
                    });
                }
                SetExpr::ball(target_lo.clone(), *radius).map(|_| ())
            }
            EnvironmentSpace::Stationary {
                x0_lo,
                x0_hi,
                avoid,
                reach,
                ..
            } => {
                check_range(x0_lo, x0_hi)?;
                avoid.validate()?;
                reach.validate()
            }
            EnvironmentSpace::Finite { environments, .. } => {
                if environments.is_empty() {
                    return Err(Error::InvalidParameter("finite environment space is empty".into()));
                }
                environments.iter().try_for_each(Environment::validate)
            }
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvironmentSpace::TerminalBall { horizon, .. } | EnvironmentSpace::Stationary { horizon, .. } => {
                *horizon
            }
            EnvironmentSpace::Finite { environments, .. } => environments[0].horizon(),
        }
    }

    pub fn distribution(&self) -> serde_json::Value {
        match self {
            EnvironmentSpace::TerminalBall { .. } => json!({ "kind": "terminal_ball", "target": "uniform box" }),
            EnvironmentSpace::Stationary { .. } => json!({ "kind": "stationary", "x0": "uniform box" }),
            EnvironmentSpace::Finite { environments, cycle } => {
                json!({ "kind": "finite", "count": environments.len(), "cycle": cycle })
            }
        }
    }
}

/// Draws one environment. `index` only matters for cyclic finite spaces.
pub fn sample_environment(space: &EnvironmentSpace, index: usize, rng: &mut SampleRng) -> Result<Environment> {
    space.validate()?;
    match space {
        EnvironmentSpace::TerminalBall {
            x0,
            horizon,
            target_lo,
            target_hi,
            radius,
        } => {
            let target = uniform_in(rng, target_lo, target_hi);
            Environment::new(
                format!("e{index}"),
                x0.clone(),
                TimeVaryingSet::stationary(*horizon, SetExpr::Empty),
                TimeVaryingSet::terminal(*horizon, SetExpr::All, SetExpr::ball(target, *radius)?),
            )
        }
        EnvironmentSpace::Stationary {
            x0_lo,
            x0_hi,
            horizon,
            avoid,
            reach,
        } => Environment::new(
            format!("e{index}"),
            uniform_in(rng, x0_lo, x0_hi),
            TimeVaryingSet::stationary(*horizon, avoid.clone()),
            TimeVaryingSet::stationary(*horizon, reach.clone()),
        ),
        EnvironmentSpace::Finite { environments, cycle } => {
            let k = if *cycle {
                index % environments.len()
            } else {
                rng.random_range(0..environments.len())
            };
            Ok(environments[k].clone())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub epsilon: f64,
    pub beta: f64,
    #[serde(default, rename = "n", skip_serializing_if = "Option::is_none")]
    pub n_override: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub adaptive: bool,
    pub metric: MetricKind,
    #[serde(default)]
    pub norm: NormConfig,
    #[serde(default = "ScenarioConfig::default_cap")]
    pub rejection_cap: usize,
    /// Keep trajectories of every sample, not only falsifying ones.
    #[serde(default)]
    pub persist_trajectories: bool,
}

impl ScenarioConfig {
    pub const DEFAULT_CAP: usize = 100;

    fn default_cap() -> usize {
        Self::DEFAULT_CAP
    }

    pub fn new(metric: MetricKind, seed: u64) -> Self {
        ScenarioConfig {
            epsilon: 0.01,
            beta: 1e-6,
            n_override: None,
            seed,
            adaptive: false,
            metric,
            norm: NormConfig::default(),
            rejection_cap: Self::DEFAULT_CAP,
            persist_trajectories: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("epsilon", self.epsilon)?;
        check_unit("beta", self.beta)?;
        if self.n_override == Some(0) {
            return Err(Error::InvalidParameter("sample count must be >= 1".into()));
        }
        if self.rejection_cap == 0 {
            return Err(Error::InvalidParameter("rejection cap must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> Result<usize> {
        self.validate()?;
        match self.n_override {
            Some(n) => Ok(n),
            None => sample_size(self.epsilon, self.beta),
        }
    }
}

/// Everything `estimate` needs besides the config.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub space: &'a EnvironmentSpace,
    pub scheme: &'a dyn ControllerScheme,
    pub system: &'a dyn DynamicalModel,
    pub abstraction: &'a dyn DynamicalModel,
}

/// One row of the per-sample run record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: u64,
    pub env_id: String,
    pub x0: Vec<f64>,
    pub controller: serde_json::Value,
    pub attempts: usize,
    pub null: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sat_m: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sat_s: Option<bool>,
    /// Margin used for feasible sampling (nonzero only in adaptive runs).
    pub margin: f64,
    pub d: f64,
    #[serde(skip)]
    pub trajectories: Option<(Trajectory, Trajectory)>,
    #[serde(skip)]
    pub environment: Option<Environment>,
}

impl SampleRecord {
    pub fn falsifying(&self) -> bool {
        self.sat_m == Some(true) && self.sat_s == Some(false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Plain,
    Adaptive,
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub d_hat: f64,
    pub n: usize,
    pub mode: Mode,
    pub positive: usize,
    pub null_count: usize,
    pub falsifying: usize,
    pub max_attempts: usize,
    pub config: ScenarioConfig,
    pub samples: Vec<SampleRecord>,
}

fn draw_sample(
    config: &ScenarioConfig,
    problem: &Problem<'_>,
    index: usize,
    master: u64,
    margin: SpecMargin,
) -> Result<SampleRecord> {
    let seed = split_seed(master, index as u64);
    let wrap = |source: Error| Error::Sample {
        index,
        seed,
        source: Box::new(source),
    };
    let mut rng = SampleRng::seed_from_u64(seed);
    let env = sample_environment(problem.space, index, &mut rng).map_err(wrap)?;
    let (controller, attempts) = if config.metric.samples_feasible() {
        let draw = sample_feasible(
            problem.scheme,
            &env,
            problem.abstraction,
            margin,
            config.norm.norm,
            &mut rng,
            config.rejection_cap,
        )
        .map_err(wrap)?;
        (draw.controller, draw.attempts)
    } else {
        (problem.scheme.sample(&env, &mut rng).map_err(wrap)?, 1)
    };
    let ev: SampleEvaluation = evaluate_sample(
        config.metric,
        &env,
        &controller,
        problem.system,
        problem.abstraction,
        &config.norm,
    )
    .map_err(wrap)?;
    let keep = config.persist_trajectories || ev.falsifying();
    Ok(SampleRecord {
        index,
        seed,
        env_id: ev.env_id.clone(),
        x0: env.x0.clone(),
        controller: ev.controller.clone(),
        attempts,
        null: ev.is_null(),
        sat_m: ev.sat_m,
        sat_s: ev.sat_s,
        margin: margin.get(),
        d: ev.d,
        trajectories: if keep { ev.trajectories } else { None },
        environment: if keep { Some(env) } else { None },
    })
}

/// Estimates the metric selected by `config.metric` from `N` i.i.d. samples.
///
/// In adaptive mode each feasible draw targets `φ(e; d̂(i))`, the running max
/// so far; that dependency makes adaptive runs sequential.
pub fn estimate(config: &ScenarioConfig, problem: &Problem<'_>) -> Result<Estimate> {
    let n = config.sample_count()?;
    problem.space.validate()?;
    let samples: Vec<SampleRecord> = if config.adaptive && config.metric.samples_feasible() {
        let mut running = 0.0f64;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let rec = draw_sample(config, problem, i, config.seed, SpecMargin::new(running)?)?;
            running = running.max(rec.d);
            out.push(rec);
        }
        out
    } else {
        par::map_indexed(n, |i| draw_sample(config, problem, i, config.seed, SpecMargin::ZERO))
            .into_iter()
            .collect::<Result<_>>()?
    };
    Ok(summarize(config, samples))
}

fn summarize(config: &ScenarioConfig, samples: Vec<SampleRecord>) -> Estimate {
    let d_hat = samples.iter().fold(0.0f64, |m, s| m.max(s.d));
    Estimate {
        d_hat,
        n: samples.len(),
        mode: if config.adaptive && config.metric.samples_feasible() {
            Mode::Adaptive
        } else {
            Mode::Plain
        },
        positive: samples.iter().filter(|s| s.d > 0.0).count(),
        null_count: samples.iter().filter(|s| s.null).count(),
        falsifying: samples.iter().filter(|s| s.falsifying()).count(),
        max_attempts: samples.iter().map(|s| s.attempts).max().unwrap_or(0),
        config: config.clone(),
        samples,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Validation {
    pub d_hat: f64,
    pub batch: usize,
    pub violations: usize,
    pub fraction: f64,
    pub seed: u64,
}

/// Fraction of fresh `(e, u)` draws where `ξ_M ⊨ φ(e; d̂)` but `ξ_S ⊭ φ(e)`.
/// Draws follow the same rule as `estimate` under `config`.
pub fn validate_guarantee(
    d_hat: f64,
    batch: usize,
    fresh_seed: u64,
    config: &ScenarioConfig,
    problem: &Problem<'_>,
) -> Result<Validation> {
    if batch == 0 {
        return Err(Error::InvalidParameter("validation batch must be >= 1".into()));
    }
    if fresh_seed == config.seed {
        return Err(Error::InvalidParameter("validation seed must differ from the estimation seed".into()));
    }
    let tightened = SpecMargin::new(d_hat)?;
    let plain = ScenarioConfig {
        adaptive: false,
        ..config.clone()
    };
    let flags = par::map_indexed(batch, |i| -> Result<bool> {
        let seed = split_seed(fresh_seed, i as u64);
        let mut rng = SampleRng::seed_from_u64(seed);
        let env = sample_environment(problem.space, i, &mut rng)?;
        let controller = if plain.metric.samples_feasible() {
            sample_feasible(
                problem.scheme,
                &env,
                problem.abstraction,
                SpecMargin::ZERO,
                plain.norm.norm,
                &mut rng,
                plain.rejection_cap,
            )?
            .controller
        } else {
            problem.scheme.sample(&env, &mut rng)?
        };
        if controller.is_null() {
            return Ok(false);
        }
        let h = env.horizon();
        let tm = simulate(problem.abstraction, &env.x0, &controller, h)?;
        if !satisfies(&tm, &env, tightened, plain.norm.norm)? {
            return Ok(false);
        }
        let ts = simulate(problem.system, &env.x0, &controller, h)?;
        Ok(!satisfies(&ts, &env, SpecMargin::ZERO, plain.norm.norm)?)
    });
    let violations = flags.into_iter().collect::<Result<Vec<_>>>()?.into_iter().filter(|v| *v).count();
    Ok(Validation {
        d_hat,
        batch,
        violations,
        fraction: violations as f64 / batch as f64,
        seed: fresh_seed,
    })
}

/// Monte Carlo estimate of `|E_φ(d)|`: the fraction of sampled environments
/// where rejection sampling at margin `d` finds a feasible controller.
pub fn estimate_safe_env_fraction(
    d: f64,
    samples: usize,
    seed: u64,
    config: &ScenarioConfig,
    problem: &Problem<'_>,
) -> Result<f64> {
    let margin = SpecMargin::new(d)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    let hits = par::map_indexed(samples, |i| -> Result<bool> {
        let mut rng = SampleRng::seed_from_u64(split_seed(seed, i as u64));
        let env = sample_environment(problem.space, i, &mut rng)?;
        let draw = sample_feasible(
            problem.scheme,
            &env,
            problem.abstraction,
            margin,
            config.norm.norm,
            &mut rng,
            config.rejection_cap,
        )?;
        Ok(!draw.controller.is_null())
    });
    let count = hits.into_iter().collect::<Result<Vec<_>>>()?.into_iter().filter(|v| *v).count();
    Ok(count as f64 / samples as f64)
}
