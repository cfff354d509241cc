//! Reach-avoid environments and the trajectory-level quantities every metric
//! is built from.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Norm, SetExpr};

/// A set indexed by time step, with a default for unlisted steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeVaryingSet {
    pub horizon: usize,
    pub default: SetExpr,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<TimedSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedSet {
    pub step: usize,
    pub set: SetExpr,
}

impl TimeVaryingSet {
    pub fn stationary(horizon: usize, set: SetExpr) -> Self {
        TimeVaryingSet {
            horizon,
            default: set,
            entries: Vec::new(),
        }
    }

    /// `default` everywhere except `terminal` at step `horizon`.
    pub fn terminal(horizon: usize, default: SetExpr, terminal: SetExpr) -> Self {
        TimeVaryingSet {
            horizon,
            default,
            entries: vec![TimedSet {
                step: horizon,
                set: terminal,
            }],
        }
    }

    pub fn at(&self, t: usize) -> &SetExpr {
        self.entries
            .iter()
            .find(|e| e.step == t)
            .map(|e| &e.set)
            .unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<()> {
        self.default.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if e.step > self.horizon {
                return Err(Error::InvalidParameter(format!(
                    "set entry at step {} beyond horizon {}",
                    e.step, self.horizon
                )));
            }
            if !seen.insert(e.step) {
                return Err(Error::InvalidParameter(format!("duplicate entry for step {}", e.step)));
            }
            e.set.validate()?;
        }
        Ok(())
    }
}

/// One reach-avoid scenario: initial state, avoid schedule, reach schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub id: String,
    pub x0: Vec<f64>,
    pub avoid: TimeVaryingSet,
    pub reach: TimeVaryingSet,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl Environment {
    pub fn new(id: impl Into<String>, x0: Vec<f64>, avoid: TimeVaryingSet, reach: TimeVaryingSet) -> Result<Self> {
        let e = Environment {
            id: id.into(),
            x0,
            avoid,
            reach,
            params: BTreeMap::new(),
        };
        e.validate()?;
        Ok(e)
    }

    pub fn horizon(&self) -> usize {
        self.avoid.horizon
    }

    pub fn validate(&self) -> Result<()> {
        if self.avoid.horizon != self.reach.horizon {
            return Err(Error::HorizonMismatch {
                left: self.avoid.horizon,
                right: self.reach.horizon,
            });
        }
        self.avoid.validate()?;
        self.reach.validate()
    }

    /// Center of the terminal reach ball, if the reach set at `H` is one.
    pub fn terminal_target(&self) -> Option<&[f64]> {
        match self.reach.at(self.horizon()) {
            SetExpr::Ball {
                center,
                coords: None,
                ..
            } => Some(center),
            _ => None,
        }
    }
}

/// Nonnegative specification margin `d`.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SpecMargin(f64);

impl SpecMargin {
    pub const ZERO: SpecMargin = SpecMargin(0.0);

    pub fn new(d: f64) -> Result<Self> {
        if d >= 0.0 && !d.is_nan() {
            Ok(SpecMargin(d))
        } else {
            Err(Error::InvalidParameter(format!("margin {d} must be >= 0")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// States over `{0..H}` and the (post-clamp) controls applied between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// One row per step: `t, x..., u...`; the final row has empty controls.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        out.write_record(&header)?;
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match self.controls.get(t) {
                Some(u) => row.extend(u.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_horizon(traj: &Trajectory, e: &Environment) -> Result<()> {
    if traj.horizon() != e.horizon() {
        return Err(Error::HorizonMismatch {
            left: traj.horizon(),
            right: e.horizon(),
        });
    }
    Ok(())
}

/// `traj ⊨ φ(e; d)`: outside `A(t) ⊕ d` and inside `R(t) ⊖ d` at every step.
///
/// Boundary ties are resolved toward violation: `h(x, A) = d` is a hit and
/// `h(x, R) = -d` is a miss.
pub fn satisfies(traj: &Trajectory, e: &Environment, margin: SpecMargin, norm: Norm) -> Result<bool> {
    check_horizon(traj, e)?;
    let d = margin.get();
    for (t, x) in traj.states.iter().enumerate() {
        if e.avoid.at(t).contains_with_margin(x, d, norm)? {
            return Ok(false);
        }
        if !(e.reach.at(t).signed_distance(x, norm)? < -d) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest slack of the abstraction trajectory to the avoid and reach
/// boundaries, counted only when the system run violated the specification.
pub fn margin_of_violation(
    traj_m: &Trajectory,
    system_violates: bool,
    e: &Environment,
    norm: Norm,
) -> Result<f64> {
    if !system_violates {
        return Ok(0.0);
    }
    check_horizon(traj_m, e)?;
    let mut worst = f64::INFINITY;
    for (t, x) in traj_m.states.iter().enumerate() {
        let ha = e.avoid.at(t).signed_distance(x, norm)?;
        let hr = -e.reach.at(t).signed_distance(x, norm)?;
        worst = worst.min(ha.min(hr));
    }
    Ok(worst)
}

/// `max_t ‖ξ_S(t) − ξ_M(t)‖`, optionally restricted to a coordinate subset.
pub fn sup_trajectory_distance(
    traj_s: &Trajectory,
    traj_m: &Trajectory,
    norm: Norm,
    coords: Option<&[usize]>,
) -> Result<f64> {
    if traj_s.states.len() != traj_m.states.len() {
        return Err(Error::HorizonMismatch {
            left: traj_s.horizon(),
            right: traj_m.horizon(),
        });
    }
    let mut best: f64 = 0.0;
    for (a, b) in traj_s.states.iter().zip(&traj_m.states) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        let dist = match coords {
            Some(c) => {
                let mut pa = Vec::with_capacity(c.len());
                let mut pb = Vec::with_capacity(c.len());
                for &i in c {
                    if i >= a.len() {
                        return Err(Error::DimensionMismatch {
                            expected: i + 1,
                            got: a.len(),
                        });
                    }
                    pa.push(a[i]);
                    pb.push(b[i]);
                }
                norm.distance(&pa, &pb)
            }
            None => norm.distance(a, b),
        };
        best = best.max(dist);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: Norm = Norm::Euclidean;

    fn traj_1d(xs: &[f64]) -> Trajectory {
        Trajectory {
            states: xs.iter().map(|x| vec![*x]).collect(),
            controls: vec![vec![0.0]; xs.len() - 1],
        }
    }

    fn reach_ball_env(target: [f64; 2], gamma: f64, h: usize) -> Environment {
        Environment::new(
            "t",
            vec![0.0, 0.0],
            TimeVaryingSet::stationary(h, SetExpr::Empty),
            TimeVaryingSet::terminal(h, SetExpr::All, SetExpr::ball(target.to_vec(), gamma).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn vacuous_spec_holds() {
        let e = Environment::new(
            "v",
            vec![0.0],
            TimeVaryingSet::stationary(3, SetExpr::Empty),
            TimeVaryingSet::stationary(3, SetExpr::All),
        )
        .unwrap();
        assert!(satisfies(&traj_1d(&[0.0; 4]), &e, SpecMargin::ZERO, E).unwrap());
    }

    #[test]
    fn terminal_ball_with_and_without_margin() {
        let e = reach_ball_env([2.0, 0.0], 0.5, 2);
        let tr = Trajectory {
            states: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.3, 0.0]],
            controls: vec![vec![0.0]; 2],
        };
        assert!(satisfies(&tr, &e, SpecMargin::ZERO, E).unwrap());
        assert!(!satisfies(&tr, &e, SpecMargin::new(0.25).unwrap(), E).unwrap());
    }

    #[test]
    fn horizon_mismatch_is_error() {
        let e = reach_ball_env([0.0, 0.0], 0.5, 5);
        let tr = Trajectory {
            states: vec![vec![0.0, 0.0]; 3],
            controls: vec![vec![0.0]; 2],
        };
        assert!(matches!(
            satisfies(&tr, &e, SpecMargin::ZERO, E),
            Err(Error::HorizonMismatch { .. })
        ));
    }

    #[test]
    fn margin_of_violation_cases() {
        let a = SetExpr::half_space(vec![1.0], 1.0).unwrap();
        let e = Environment::new(
            "m",
            vec![0.0],
            TimeVaryingSet::terminal(1, SetExpr::Empty, a),
            TimeVaryingSet::stationary(1, SetExpr::All),
        )
        .unwrap();
        let tm = traj_1d(&[0.0, 0.4]);
        assert_eq!(margin_of_violation(&tm, false, &e, E).unwrap(), 0.0);
        let d = margin_of_violation(&tm, true, &e, E).unwrap();
        assert!((d - 0.6).abs() < 1e-15);
    }

    #[test]
    fn sup_distance_cases() {
        let a = traj_1d(&[0.0, 1.0, 2.0]);
        let b = traj_1d(&[0.0, 0.0, 0.0]);
        assert_eq!(sup_trajectory_distance(&a, &a, E, None).unwrap(), 0.0);
        assert_eq!(sup_trajectory_distance(&a, &b, E, None).unwrap(), 2.0);

        let s = Trajectory {
            states: vec![vec![1.0, 5.0], vec![1.5, -5.0]],
            controls: vec![vec![0.0]],
        };
        let m = Trajectory {
            states: vec![vec![1.0, 0.0], vec![1.2, 0.0]],
            controls: vec![vec![0.0]],
        };
        let dz = sup_trajectory_distance(&s, &m, E, Some(&[0])).unwrap();
        assert!((dz - 0.3).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_layout() {
        let tr = Trajectory {
            states: vec![vec![0.0, 1.0], vec![0.5, 1.5]],
            controls: vec![vec![2.0]],
        };
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,x0,x1,u0\n0,0,1,2\n1,0.5,1.5,\n");
    }

    #[test]
    fn negative_margin_rejected() {
        assert!(SpecMargin::new(-0.1).is_err());
        assert!(SpecMargin::new(f64::NAN).is_err());
    }
}
