//! Grid-based safety value iteration over a 2-D state space.
//!
//! `V_H(x) = m(x)`, `V_t(x) = min(m(x), max_u V_{t+1}(f(x, u)))` where `m` is
//! the signed margin to the corridor minus the specification margin `d`.
//! `V_0 >= 0` is the viability kernel. Successors are evaluated by bilinear
//! interpolation; successors off the grid count as unsafe.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicBool, Ordering};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicalModel;
use crate::error::{Error, Result};
use crate::geometry::{Norm, SetExpr};
use crate::par;

/// Axis-aligned node grid: `n[i]` nodes spanning `[lo[i], hi[i]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub n: [usize; 2],
    #[serde(default = "GridSpec::default_labels")]
    pub labels: [String; 2],
}

impl GridSpec {
    fn default_labels() -> [String; 2] {
        ["x0".into(), "x1".into()]
    }

    pub fn new(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        let g = GridSpec {
            lo,
            hi,
            n,
            labels: Self::default_labels(),
        };
        g.validate()?;
        Ok(g)
    }

    /// 201 x 201 nodes over `z ∈ [0, 3]`, `v ∈ [-4, 4]`.
    pub fn quadrotor_default() -> Self {
        GridSpec {
            lo: [0.0, -4.0],
            hi: [3.0, 4.0],
            n: [201, 201],
            labels: ["z".into(), "v".into()],
        }
    }

    pub fn with_labels(mut self, a: &str, b: &str) -> Self {
        self.labels = [a.into(), b.into()];
        self
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            if self.n[i] < 2 {
                return Err(Error::InvalidParameter(format!("grid axis {i} needs >= 2 nodes")));
            }
            if !(self.lo[i] < self.hi[i]) || !self.lo[i].is_finite() || !self.hi[i].is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "grid axis {i} bounds [{}, {}] invalid",
                    self.lo[i], self.hi[i]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 2] {
        [
            (self.hi[0] - self.lo[0]) / (self.n[0] - 1) as f64,
            (self.hi[1] - self.lo[1]) / (self.n[1] - 1) as f64,
        ]
    }

    pub fn cell_diagonal(&self) -> f64 {
        let [a, b] = self.spacing();
        a.hypot(b)
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let [da, db] = self.spacing();
        [self.lo[0] + i as f64 * da, self.lo[1] + j as f64 * db]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n[1] + j
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..2).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }

    /// Bilinear interpolation of node values; `None` off the grid.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let [da, db] = self.spacing();
        let fa = (x[0] - self.lo[0]) / da;
        let fb = (x[1] - self.lo[1]) / db;
        let i = (fa.floor() as usize).min(self.n[0] - 2);
        let j = (fb.floor() as usize).min(self.n[1] - 2);
        let a = fa - i as f64;
        let b = fb - j as f64;
        let v00 = values[self.index(i, j)];
        let v10 = values[self.index(i + 1, j)];
        let v01 = values[self.index(i, j + 1)];
        let v11 = values[self.index(i + 1, j + 1)];
        Some((1.0 - a) * ((1.0 - b) * v00 + b * v01) + a * ((1.0 - b) * v10 + b * v11))
    }
}

/// Values on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl Grid2D {
    pub fn value(&self, x: &[f64]) -> Option<f64> {
        self.spec.interpolate(&self.values, x)
    }

    /// CSV rows `(label0, label1, value)` at every node, axis 0 outermost.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([&self.spec.labels[0], &self.spec.labels[1], "value"])?;
        for i in 0..self.spec.n[0] {
            for j in 0..self.spec.n[1] {
                let [a, b] = self.spec.node(i, j);
                let v = self.values[self.spec.index(i, j)];
                out.write_record([a.to_string(), b.to_string(), v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Parses rows written by [`Grid2D::write_csv`].
    pub fn read_csv_rows<R: Read>(r: R) -> Result<Vec<[f64; 3]>> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let mut row = [0.0; 3];
            for (k, slot) in row.iter_mut().enumerate() {
                let field = rec.get(k).ok_or_else(|| Error::Config("short kernel CSV row".into()))?;
                *slot = field
                    .parse()
                    .map_err(|e| Error::Config(format!("bad kernel CSV value {field:?}: {e}")))?;
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Finite-horizon viability kernel with every value layer retained.
#[derive(Clone, Debug)]
pub struct SafetyKernel {
    grid: GridSpec,
    /// `layers[t]` holds `V_t`; `layers[horizon]` is the terminal margin.
    layers: Vec<Vec<f64>>,
    /// Index into `controls` of the maximizing control at each node, per layer `t < horizon`.
    argmax: Vec<Vec<u16>>,
    controls: Vec<Vec<f64>>,
    margin: f64,
    floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelSummary {
    pub grid: GridSpec,
    pub horizon: usize,
    pub controls: usize,
    pub margin: f64,
    pub inside_nodes: usize,
}

impl SafetyKernel {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn layer(&self, t: usize) -> &[f64] {
        &self.layers[t.min(self.horizon())]
    }

    /// `V_0` as a grid.
    pub fn initial_values(&self) -> Grid2D {
        Grid2D {
            spec: self.grid.clone(),
            values: self.layers[0].clone(),
        }
    }

    /// `V_t(x)` by interpolation, `None` off the grid.
    pub fn value_at(&self, t: usize, x: &[f64]) -> Option<f64> {
        self.grid.interpolate(self.layer(t), x)
    }

    fn successor_value(&self, t: usize, x: &[f64]) -> f64 {
        self.value_at(t, x).unwrap_or(self.floor)
    }

    /// Control maximizing the interpolated `V_{t+1}` of the successor state.
    pub fn safe_control(&self, t: usize, x: &[f64], model: &dyn DynamicalModel) -> Vec<f64> {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (k, u) in self.controls.iter().enumerate() {
            let v = self.successor_value(t + 1, &model.step(x, u, t));
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
        self.controls[best].clone()
    }

    /// Stored maximizing control at grid node `(i, j)` for step `t`.
    pub fn node_control(&self, t: usize, i: usize, j: usize) -> &[f64] {
        let k = self.argmax[t.min(self.horizon() - 1)][self.grid.index(i, j)];
        &self.controls[k as usize]
    }

    /// `V_0(x0) >= 0`; off-grid states are outside.
    pub fn membership(&self, x0: &[f64]) -> bool {
        match self.value_at(0, x0) {
            Some(v) => v >= 0.0,
            None => {
                warn!("state {x0:?} outside kernel grid; treated as unsafe");
                false
            }
        }
    }

    pub fn inside_nodes(&self) -> usize {
        self.layers[0].iter().filter(|v| **v >= 0.0).count()
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::to_value(KernelSummary {
            grid: self.grid.clone(),
            horizon: self.horizon(),
            controls: self.controls.len(),
            margin: self.margin,
            inside_nodes: self.inside_nodes(),
        })
        .unwrap_or(serde_json::Value::Null)
    }
}

/// Nodes inside `inner` (`V_0 >= 0`) that are outside `outer`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Containment {
    pub inner_nodes: usize,
    pub outer_nodes: usize,
    pub violating_nodes: usize,
}

impl Containment {
    pub fn holds(&self) -> bool {
        self.violating_nodes == 0
    }
}

pub fn containment(inner: &SafetyKernel, outer: &SafetyKernel) -> Result<Containment> {
    if inner.grid != outer.grid {
        return Err(Error::InvalidParameter("kernels live on different grids".into()));
    }
    let a = &inner.layers[0];
    let b = &outer.layers[0];
    Ok(Containment {
        inner_nodes: inner.inside_nodes(),
        outer_nodes: outer.inside_nodes(),
        violating_nodes: a.iter().zip(b).filter(|(x, y)| **x >= 0.0 && **y < 0.0).count(),
    })
}

/// `count` evenly spaced levels across `[lo, hi]`.
pub fn control_levels(lo: f64, hi: f64, count: usize) -> Vec<Vec<f64>> {
    match count {
        0 => Vec::new(),
        1 => vec![vec![0.5 * (lo + hi)]],
        _ => (0..count)
            .map(|k| vec![lo + (hi - lo) * k as f64 / (count - 1) as f64])
            .collect(),
    }
}

/// Runs safety value iteration for `horizon` steps.
pub fn compute_kernel(
    model: &dyn DynamicalModel,
    corridor: &SetExpr,
    margin: f64,
    grid: &GridSpec,
    controls: Vec<Vec<f64>>,
    horizon: usize,
    norm: Norm,
) -> Result<SafetyKernel> {
    grid.validate()?;
    if model.state_dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: model.state_dim(),
        });
    }
    if controls.is_empty() || controls.len() > u16::MAX as usize {
        return Err(Error::InvalidParameter("control discretization must be non-empty".into()));
    }
    if let Some(bounds) = model.control_bounds() {
        for u in &controls {
            if u.len() != model.control_dim()
                || u.iter().zip(bounds).any(|(v, (lo, hi))| v < lo || v > hi)
            {
                return Err(Error::InvalidParameter(format!("control {u:?} outside model bounds")));
            }
        }
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("kernel horizon must be >= 1".into()));
    }

    // Values are capped at the grid extent so the array stays finite.
    let extent = (grid.hi[0] - grid.lo[0]).hypot(grid.hi[1] - grid.lo[1]) + margin.abs() + 1.0;
    let floor = -extent;
    let mut terminal = vec![0.0; grid.len()];
    for i in 0..grid.n[0] {
        for j in 0..grid.n[1] {
            let x = grid.node(i, j);
            let m = -corridor.signed_distance(&x, norm)? - margin;
            terminal[grid.index(i, j)] = m.clamp(-extent, extent);
        }
    }

    let ncols = grid.n[1];
    let off_grid_logged = AtomicBool::new(false);
    let mut layers = vec![terminal.clone()];
    let mut argmax_rev = Vec::with_capacity(horizon);
    for step in (0..horizon).rev() {
        let next = layers.last().expect("terminal layer present");
        let mut values = vec![0.0; grid.len()];
        let mut best_idx = vec![0u16; grid.len()];
        par::for_each_row(&mut values, &mut best_idx, ncols, |i, vrow, arow| {
            for j in 0..ncols {
                let x = grid.node(i, j);
                let mut best = f64::NEG_INFINITY;
                let mut best_k = 0u16;
                for (k, u) in controls.iter().enumerate() {
                    let succ = model.step(&x, u, step);
                    let v = match grid.interpolate(next, &succ) {
                        Some(v) => v,
                        None => {
                            if !off_grid_logged.swap(true, Ordering::Relaxed) {
                                info!("successor {succ:?} leaves the grid; counted unsafe");
                            }
                            floor
                        }
                    };
                    if v > best {
                        best = v;
                        best_k = k as u16;
                    }
                }
                vrow[j] = terminal[i * ncols + j].min(best);
                arow[j] = best_k;
            }
        });
        layers.push(values);
        argmax_rev.push(best_idx);
    }
    layers.reverse();
    argmax_rev.reverse();
    Ok(SafetyKernel {
        grid: grid.clone(),
        layers,
        argmax: argmax_rev,
        controls,
        margin,
        floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::QuadrotorVertical;

    #[derive(Debug)]
    struct Still;

    impl DynamicalModel for Still {
        fn state_dim(&self) -> usize {
            2
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn step(&self, x: &[f64], _u: &[f64], _t: usize) -> Vec<f64> {
            x.to_vec()
        }
        fn descriptor(&self) -> String {
            "still".into()
        }
    }

    fn corridor() -> SetExpr {
        SetExpr::cuboid(vec![0.5], vec![2.5]).unwrap().on_coords(vec![0]).unwrap()
    }

    fn coarse() -> GridSpec {
        GridSpec::new([0.0, -4.0], [3.0, 4.0], [61, 41]).unwrap()
    }

    #[test]
    fn static_model_kernel_is_corridor() {
        let g = coarse();
        let k = compute_kernel(&Still, &corridor(), 0.0, &g, control_levels(0.0, 1.0, 3), 10, Norm::Euclidean)
            .unwrap();
        for i in 0..g.n[0] {
            for j in 0..g.n[1] {
                let x = g.node(i, j);
                let in_corridor = x[0] >= 0.5 - 1e-12 && x[0] <= 2.5 + 1e-12;
                let v = k.layer(0)[g.index(i, j)];
                assert_eq!(v >= -1e-12, in_corridor, "node {x:?} value {v}");
            }
        }
    }

    #[test]
    fn kernel_shrinks_with_margin() {
        let g = coarse();
        let m = QuadrotorVertical::new(11.0);
        let levels = control_levels(0.0, 1.0, 5);
        let k0 = compute_kernel(&m, &corridor(), 0.0, &g, levels.clone(), 40, Norm::Euclidean).unwrap();
        let k1 = compute_kernel(&m, &corridor(), 0.2, &g, levels, 40, Norm::Euclidean).unwrap();
        let c = containment(&k1, &k0).unwrap();
        assert!(c.holds());
        assert!(c.inner_nodes < c.outer_nodes);
    }

    #[test]
    fn values_shrink_backward_in_time() {
        let g = coarse();
        let m = QuadrotorVertical::new(11.0);
        let k = compute_kernel(&m, &corridor(), 0.0, &g, control_levels(0.0, 1.0, 5), 30, Norm::Euclidean)
            .unwrap();
        for t in 0..k.horizon() {
            for (a, b) in k.layer(t).iter().zip(k.layer(t + 1)) {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn membership_cases() {
        let g = coarse();
        let m = QuadrotorVertical::new(11.0);
        let k = compute_kernel(&m, &corridor(), 0.0, &g, control_levels(0.0, 1.0, 11), 100, Norm::Euclidean)
            .unwrap();
        assert!(k.membership(&[1.5, 0.0]));
        // At the ceiling climbing fast: free fall cannot stop it in time.
        assert!(!k.membership(&[2.5, 3.9]));
        assert!(!k.membership(&[5.0, 0.0]));
        let n = g.index(30, 20);
        let node = g.node(30, 20);
        assert_eq!(k.membership(&node), k.layer(0)[n] >= 0.0);
    }

    #[test]
    fn ceiling_exit_is_unavoidable_by_simulation() {
        // Oracle for the membership case above: the best action near the
        // ceiling is zero thrust, and even that overshoots.
        let m = QuadrotorVertical::new(11.0);
        let (mut z, mut v) = (2.5, 3.9);
        let mut peak = z;
        for _ in 0..100 {
            let next = m.step(&[z, v], &[0.0], 0);
            z = next[0];
            v = next[1];
            peak = peak.max(z);
        }
        assert!(peak > 2.5);
    }

    #[test]
    fn safe_control_is_one_step_argmax_at_nodes() {
        let g = coarse();
        let m = QuadrotorVertical::new(11.0);
        let k = compute_kernel(&m, &corridor(), 0.0, &g, control_levels(0.0, 1.0, 11), 20, Norm::Euclidean)
            .unwrap();
        for (i, j) in [(12, 3), (30, 20), (50, 35), (11, 10)] {
            let x = g.node(i, j);
            let oracle = k
                .controls()
                .iter()
                .map(|u| (u.clone(), k.value_at(1, &m.step(&x, u, 0)).unwrap_or(f64::NEG_INFINITY)))
                .fold((vec![], f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
            assert_eq!(k.safe_control(0, &x, &m), oracle.0);
            assert_eq!(k.node_control(0, i, j), &oracle.0[..]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = coarse();
        let m = QuadrotorVertical::new(11.0);
        assert!(compute_kernel(&m, &corridor(), 0.0, &g, vec![vec![2.0]], 5, Norm::Euclidean).is_err());
        assert!(compute_kernel(&m, &corridor(), 0.0, &g, vec![], 5, Norm::Euclidean).is_err());
        assert!(GridSpec::new([0.0, 0.0], [1.0, 1.0], [1, 5]).is_err());
        let bike = crate::dynamics::KinematicBicycle::default();
        assert!(compute_kernel(&bike, &corridor(), 0.0, &g, vec![vec![0.0, 0.0]], 5, Norm::Euclidean).is_err());
    }

    #[test]
    fn csv_export_round_trips() {
        let g = GridSpec::new([0.0, -1.0], [1.0, 1.0], [3, 3]).unwrap().with_labels("z", "v");
        let grid = Grid2D {
            spec: g.clone(),
            values: (0..9).map(|k| (k as f64).sqrt() - 1.1).collect(),
        };
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("z,v,value\n"));
        let rows = Grid2D::read_csv_rows(&buf[..]).unwrap();
        assert_eq!(rows.len(), 9);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row[2].to_bits(), grid.values[k].to_bits());
            let node = g.node(k / 3, k % 3);
            assert_eq!([row[0], row[1]], node);
        }
    }
}
