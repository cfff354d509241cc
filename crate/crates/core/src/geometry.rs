//! Composable sets with signed-distance evaluation.
//!
//! Every membership question in the crate reduces to a threshold on
//! [`SetExpr::signed_distance`]: `h(x, K) <= 0` is plain membership, `h <= d`
//! is membership in `K` grown by `d`, and `h <= -d` is membership in `K`
//! shrunk by `d`. Grown and shrunk sets are never built explicitly.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State-space norm used for distances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    Euclidean,
    Infinity,
}

impl Norm {
    pub fn length(self, v: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => v.iter().map(|c| c * c).sum::<f64>().sqrt(),
            Norm::Infinity => v.iter().fold(0.0, |m, c| m.max(c.abs())),
        }
    }

    /// Dual norm; the distance to a half-space `n.y >= b` is `(b - n.y) / dual(n)`.
    pub fn dual_length(self, v: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => Norm::Euclidean.length(v),
            Norm::Infinity => v.iter().map(|c| c.abs()).sum(),
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Norm::Infinity => a
                .iter()
                .zip(b)
                .fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        }
    }
}

/// A set over (a projection of) the state space.
///
/// `coords`, when present, selects the state coordinates the set constrains;
/// the remaining coordinates are ignored. A `Ball` is the closed ball of the
/// evaluation norm. A `HalfSpace` is `{y : normal . y >= offset}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetExpr {
    Empty,
    All,
    Ball {
        center: Vec<f64>,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<usize>>,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<usize>>,
    },
    HalfSpace {
        normal: Vec<f64>,
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<usize>>,
    },
    Complement {
        inner: std::boxed::Box<SetExpr>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<usize>>,
    },
    Union {
        members: Vec<SetExpr>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<usize>>,
    },
}

impl SetExpr {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let s = SetExpr::Ball {
            center,
            radius,
            coords: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn cuboid(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = SetExpr::Box {
            lo,
            hi,
            coords: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn half_space(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let s = SetExpr::HalfSpace {
            normal,
            offset,
            coords: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn complement(inner: SetExpr) -> Self {
        SetExpr::Complement {
            inner: std::boxed::Box::new(inner),
            coords: None,
        }
    }

    pub fn union(members: Vec<SetExpr>) -> Self {
        SetExpr::Union {
            members,
            coords: None,
        }
    }

    /// Restricts the set to the given state coordinates.
    pub fn on_coords(mut self, idx: Vec<usize>) -> Result<Self> {
        match &mut self {
            SetExpr::Empty | SetExpr::All => return Ok(self),
            SetExpr::Ball { coords, .. }
            | SetExpr::Box { coords, .. }
            | SetExpr::HalfSpace { coords, .. }
            | SetExpr::Complement { coords, .. }
            | SetExpr::Union { coords, .. } => *coords = Some(idx),
        }
        self.validate()?;
        Ok(self)
    }

    fn coords(&self) -> Option<&[usize]> {
        match self {
            SetExpr::Empty | SetExpr::All => None,
            SetExpr::Ball { coords, .. }
            | SetExpr::Box { coords, .. }
            | SetExpr::HalfSpace { coords, .. }
            | SetExpr::Complement { coords, .. }
            | SetExpr::Union { coords, .. } => coords.as_deref(),
        }
    }

    /// Native dimension of a primitive, `None` for composite or unbounded-dim sets.
    fn native_dim(&self) -> Option<usize> {
        match self {
            SetExpr::Ball { center, .. } => Some(center.len()),
            SetExpr::Box { lo, .. } => Some(lo.len()),
            SetExpr::HalfSpace { normal, .. } => Some(normal.len()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.coords() {
            let mut sorted = c.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != c.len() {
                return Err(Error::InvalidSet(format!("repeated projection index in {c:?}")));
            }
            if let Some(n) = self.native_dim() {
                if n != c.len() {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: c.len(),
                    });
                }
            }
        }
        match self {
            SetExpr::Empty | SetExpr::All => Ok(()),
            SetExpr::Ball { center, radius, .. } => {
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidSet(format!("ball radius {radius} < 0")));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidSet("non-finite ball center".into()));
                }
                Ok(())
            }
            SetExpr::Box { lo, hi, .. } => {
                if lo.len() != hi.len() {
                    return Err(Error::DimensionMismatch {
                        expected: lo.len(),
                        got: hi.len(),
                    });
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err(Error::InvalidSet(format!("box lo {lo:?} exceeds hi {hi:?}")));
                }
                Ok(())
            }
            SetExpr::HalfSpace { normal, offset, .. } => {
                if !offset.is_finite() || normal.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidSet("non-finite half-space".into()));
                }
                if normal.iter().all(|c| *c == 0.0) {
                    return Err(Error::InvalidSet("zero half-space normal".into()));
                }
                Ok(())
            }
            SetExpr::Complement { inner, .. } => inner.validate(),
            SetExpr::Union { members, .. } => members.iter().try_for_each(SetExpr::validate),
        }
    }

    /// Signed distance `h(x, K)`: distance to the set when outside, minus the
    /// distance to the complement when inside. `Empty` is `+inf`, `All` is `-inf`.
    pub fn signed_distance(&self, x: &[f64], norm: Norm) -> Result<f64> {
        let y = match self.coords() {
            Some(c) => Cow::Owned(project(x, c)?),
            None => Cow::Borrowed(x),
        };
        if let Some(n) = self.native_dim() {
            if n != y.len() {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: y.len(),
                });
            }
        }
        let y = y.as_ref();
        Ok(match self {
            SetExpr::Empty => f64::INFINITY,
            SetExpr::All => f64::NEG_INFINITY,
            SetExpr::Ball { center, radius, .. } => norm.distance(y, center) - radius,
            SetExpr::Box { lo, hi, .. } => box_distance(y, lo, hi, norm),
            SetExpr::HalfSpace { normal, offset, .. } => {
                let dot: f64 = normal.iter().zip(y).map(|(n, v)| n * v).sum();
                (offset - dot) / norm.dual_length(normal)
            }
            SetExpr::Complement { inner, .. } => -inner.signed_distance(y, norm)?,
            SetExpr::Union { members, .. } => {
                let mut best = f64::INFINITY;
                for m in members {
                    best = best.min(m.signed_distance(y, norm)?);
                }
                best
            }
        })
    }

    /// `x ∈ K ⊕ d`, realized as `h(x, K) <= d`. Negative `d` tests the shrunk set.
    pub fn contains_with_margin(&self, x: &[f64], d: f64, norm: Norm) -> Result<bool> {
        Ok(self.signed_distance(x, norm)? <= d)
    }

    pub fn contains(&self, x: &[f64], norm: Norm) -> Result<bool> {
        self.contains_with_margin(x, 0.0, norm)
    }
}

fn project(x: &[f64], coords: &[usize]) -> Result<Vec<f64>> {
    coords
        .iter()
        .map(|&i| {
            x.get(i).copied().ok_or(Error::DimensionMismatch {
                expected: i + 1,
                got: x.len(),
            })
        })
        .collect()
}

fn box_distance(y: &[f64], lo: &[f64], hi: &[f64], norm: Norm) -> f64 {
    let excess: Vec<f64> = y
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| (l - v).max(v - h).max(0.0))
        .collect();
    if excess.iter().any(|e| *e > 0.0) {
        return norm.length(&excess);
    }
    // Inside: the nearest face is the same under both norms.
    let depth = y
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| (v - l).min(h - v))
        .fold(f64::INFINITY, f64::min);
    -depth
}
