//! TOML run configuration.
//!
//! A run names either a `preset` or an explicit `[problem]` block, never both.
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::control::{
    ControllerScheme, FiniteOpenLoopScheme, LeastRestrictiveScheme, LqrScheme, Replay, UniformOpenLoopScheme,
};
use crate::dynamics::{DynamicalModel, ModelRegistry, ModelSpec};
use crate::error::{Error, Result};
use crate::metrics::{MetricKind, NormConfig};
use crate::presets::{KernelSetup, Preset};
use crate::scenario::{EnvironmentSpace, ScenarioConfig};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "SIMSPEC_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "simspec-out";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub kernel: MarginSection,
    #[serde(default)]
    pub envset: EnvsetSection,
}

/// Scenario settings; unset fields fall back to `epsilon = 0.01`,
/// `beta = 1e-6`, `seed = 0`. `metric` has no default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub adaptive: Option<bool>,
    pub metric: Option<MetricKind>,
    pub norm: Option<NormConfig>,
    pub rejection_cap: Option<usize>,
    pub persist_trajectories: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    pub batch: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginSection {
    pub margins: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvsetSection {
    pub margins: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

/// Explicit problem definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub system: ModelSpec,
    pub abstraction: ModelSpec,
    pub space: EnvironmentSpace,
    /// Scheme for the feasible-controller metrics (and SSM unless `raw_scheme`).
    pub scheme: SchemeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_scheme: Option<SchemeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeSpec {
    /// Requires a linear abstraction.
    Lqr { q_lo: f64, q_hi: f64 },
    /// Bounds default to the abstraction's control bounds.
    UniformOpenLoop {
        #[serde(default)]
        bounds: Option<Vec<(f64, f64)>>,
    },
    LeastRestrictive {
        kernel: KernelSetup,
        #[serde(default)]
        band: Option<f64>,
        #[serde(default)]
        replay: Replay,
    },
    FiniteOpenLoop { candidates: Vec<Vec<Vec<f64>>> },
    /// All scalar sequences of length `horizon` over `levels`.
    Enumerate { levels: Vec<f64>, horizon: usize },
}

impl SchemeSpec {
    pub fn build(&self, abstraction: &Arc<dyn DynamicalModel>, horizon: usize, norm: &NormConfig) -> Result<Arc<dyn ControllerScheme>> {
        Ok(match self {
            SchemeSpec::Lqr { q_lo, q_hi } => {
                let lin = abstraction
                    .as_linear()
                    .ok_or_else(|| Error::Config("lqr scheme needs a linear abstraction".into()))?;
                Arc::new(LqrScheme::new(lin.clone(), *q_lo, *q_hi)?)
            }
            SchemeSpec::UniformOpenLoop { bounds } => {
                let b = match bounds {
                    Some(b) => b.clone(),
                    None => abstraction
                        .control_bounds()
                        .map(<[_]>::to_vec)
                        .ok_or_else(|| Error::Config("uniform_open_loop needs bounds for an unbounded model".into()))?,
                };
                Arc::new(UniformOpenLoopScheme::new(b, horizon)?)
            }
            SchemeSpec::LeastRestrictive { kernel, band, replay } => {
                let k = Arc::new(kernel.compute(abstraction.as_ref(), 0.0, norm)?);
                let mut s = LeastRestrictiveScheme::new(k, abstraction.clone()).with_replay(*replay);
                if let Some(b) = band {
                    s = s.with_band(*b);
                }
                Arc::new(s)
            }
            SchemeSpec::FiniteOpenLoop { candidates } => Arc::new(FiniteOpenLoopScheme::new(candidates.clone())?),
            SchemeSpec::Enumerate { levels, horizon } => Arc::new(FiniteOpenLoopScheme::enumerate(levels, *horizon)?),
        })
    }

    fn kernel(&self) -> Option<&KernelSetup> {
        match self {
            SchemeSpec::LeastRestrictive { kernel, .. } => Some(kernel),
            _ => None,
        }
    }
}

impl ProblemConfig {
    pub fn build(&self, registry: &ModelRegistry) -> Result<Preset> {
        let system = registry.build(&self.system)?;
        let abstraction = registry.build(&self.abstraction)?;
        if system.state_dim() != abstraction.state_dim() || system.control_dim() != abstraction.control_dim() {
            return Err(Error::Config(
                "system and abstraction must share state and control spaces".into(),
            ));
        }
        self.space.validate()?;
        let norm = self.norm.clone().unwrap_or_default();
        let horizon = self.space.horizon();
        let feasible = self.scheme.build(&abstraction, horizon, &norm)?;
        let raw = match &self.raw_scheme {
            Some(s) => s.build(&abstraction, horizon, &norm)?,
            None => feasible.clone(),
        };
        Ok(Preset {
            name: "custom".into(),
            system,
            abstraction,
            space: self.space.clone(),
            raw,
            feasible,
            norm,
            kernel: self.scheme.kernel().or(self.raw_scheme.as_ref().and_then(SchemeSpec::kernel)).cloned(),
            notes: json!(null),
        })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn resolve_problem(&self) -> Result<Preset> {
        self.resolve_problem_with(&ModelRegistry::default())
    }

    pub fn resolve_problem_with(&self, registry: &ModelRegistry) -> Result<Preset> {
        match (&self.preset, &self.problem) {
            (Some(name), None) => Preset::by_name(name),
            (None, Some(p)) => p.build(registry),
            (Some(_), Some(_)) => Err(Error::Config("give either preset or [problem], not both".into())),
            (None, None) => Err(Error::Config("no preset or [problem] given".into())),
        }
    }

    /// Scenario config with defaults filled in; `norm` falls back to the
    /// problem's own.
    pub fn scenario_config(&self, problem_norm: &NormConfig) -> Result<ScenarioConfig> {
        let s = &self.scenario;
        let metric = s
            .metric
            .ok_or_else(|| Error::Config("metric not set (ssm, ssm_feasible, ssm_falsifying, spec)".into()))?;
        let config = ScenarioConfig {
            epsilon: s.epsilon.unwrap_or(0.01),
            beta: s.beta.unwrap_or(1e-6),
            n_override: s.n,
            seed: s.seed.unwrap_or(0),
            adaptive: s.adaptive.unwrap_or(false),
            metric,
            norm: s.norm.clone().unwrap_or_else(|| problem_norm.clone()),
            rejection_cap: s.rejection_cap.unwrap_or(ScenarioConfig::DEFAULT_CAP),
            persist_trajectories: s.persist_trajectories.unwrap_or(false),
        };
        config.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    /// Output directory: config value, else `$SIMSPEC_OUTPUT_DIR`, else
    /// `simspec-out`.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// JSON used for the config hash: the problem block (or preset name) plus
    /// the resolved scenario settings. Output paths are excluded.
    pub fn identity(&self, scenario: &ScenarioConfig) -> serde_json::Value {
        json!({
            "preset": self.preset,
            "problem": self.problem,
            "scenario": scenario,
        })
    }
}
