//! Grid-aligned time windows and paths sampled on them.

use crate::error::{Error, Result};
use crate::propagator::{GAUSS_NODES, PHASE_SLOTS};
use crate::CVector;

/// The grid points `t_i = (start + i) / nt` for `i = 0..=intervals`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: i64,
    pub intervals: usize,
    pub nt: usize,
}

fn grid_index(t: f64, nt: usize) -> Option<i64> {
    let x = t * nt as f64;
    let r = x.round();
    ((x - r).abs() <= 1e-9 * x.abs().max(1.0)).then_some(r as i64)
}

impl Window {
    /// Window from grid points `t0 < t1`; both must lie on the grid.
    pub fn new(t0: f64, t1: f64, nt: usize) -> Result<Self> {
        let a = grid_index(t0, nt).ok_or(Error::OffGrid { tau: t0 })?;
        let b = grid_index(t1, nt).ok_or(Error::OffGrid { tau: t1 })?;
        if b <= a {
            return Err(Error::Config(format!("empty window [{t0}, {t1}]")));
        }
        Ok(Self {
            start: a,
            intervals: (b - a) as usize,
            nt,
        })
    }

    /// Smallest window on the grid containing `[t0, t1]`.
    pub fn covering(t0: f64, t1: f64, nt: usize) -> Self {
        let a = (t0 * nt as f64 + 1e-9).floor() as i64;
        let b = ((t1 * nt as f64 - 1e-9).ceil() as i64).max(a + 1);
        Self {
            start: a,
            intervals: (b - a) as usize,
            nt,
        }
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.nt as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        (self.start + i as i64) as f64 / self.nt as f64
    }

    pub fn t0(&self) -> f64 {
        self.time(0)
    }

    pub fn t1(&self) -> f64 {
        self.time(self.intervals)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Index of the grid interval of one period containing sample `i`.
    pub fn interval_phase(&self, i: usize) -> usize {
        (self.start + i as i64).rem_euclid(self.nt as i64) as usize
    }

    /// Phase slot of grid sample `i`.
    pub fn phase(&self, i: usize) -> usize {
        PHASE_SLOTS * self.interval_phase(i)
    }

    /// Phase slot of Gauss node `q` of interval `i`.
    pub fn node_phase(&self, i: usize, q: usize) -> usize {
        self.phase(i) + q + 1
    }

    pub fn node_time(&self, i: usize, q: usize) -> f64 {
        (self.start + i as i64) as f64 / self.nt as f64 + GAUSS_NODES[q] / self.nt as f64
    }

    /// Sample index of the grid point `t`, if it lies in the window.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let g = grid_index(t, self.nt)?;
        let i = g - self.start;
        (0..=self.intervals as i64).contains(&i).then_some(i as usize)
    }

    /// The window extended by `before` and `after` grid intervals.
    pub fn extended(&self, before: usize, after: usize) -> Self {
        Self {
            start: self.start - before as i64,
            intervals: self.intervals + before + after,
            nt: self.nt,
        }
    }
}

/// Values at the grid points of a window.
#[derive(Clone, Debug)]
pub struct SampledPath {
    pub window: Window,
    pub values: Vec<CVector>,
}

impl SampledPath {
    pub fn new(window: Window, values: Vec<CVector>) -> Result<Self> {
        if values.len() != window.len() {
            return Err(Error::DimensionMismatch(format!(
                "path has {} samples, window has {}",
                values.len(),
                window.len()
            )));
        }
        Ok(Self { window, values })
    }

    pub fn zeros(window: Window, dim: usize) -> Self {
        Self {
            window,
            values: vec![CVector::zeros(dim); window.len()],
        }
    }

    pub fn from_fn(window: Window, f: impl Fn(f64) -> CVector) -> Self {
        Self {
            values: window.times().into_iter().map(f).collect(),
            window,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn at(&self, t: f64) -> Option<&CVector> {
        self.window.index_of(t).map(|i| &self.values[i])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Values at the Gauss nodes of interval `i` by four-point Lagrange
    /// interpolation of neighbouring grid values.
    pub fn at_nodes(&self, i: usize) -> [CVector; 3] {
        let last = self.window.intervals;
        let base = if last < 3 {
            0
        } else {
            (i as i64 - 1).clamp(0, last as i64 - 3) as usize
        };
        let pts = last.min(3) + 1;
        let xs: Vec<f64> = (0..pts).map(|k| (base + k) as f64).collect();
        let mut out: [CVector; 3] = Default::default();
        for (q, c) in GAUSS_NODES.iter().enumerate() {
            let x = i as f64 + c;
            let mut v = CVector::zeros(self.dim());
            for a in 0..pts {
                let mut w = 1.0;
                for b in 0..pts {
                    if a != b {
                        w *= (x - xs[b]) / (xs[a] - xs[b]);
                    }
                }
                v += &self.values[base + a] * num_complex::Complex64::new(w, 0.0);
            }
            out[q] = v;
        }
        out
    }
}

/// Values at the three Gauss nodes of every interval of a window.
pub type NodeSamples = Vec<[CVector; 3]>;

/// Samples `f` at the Gauss nodes of every interval.
pub fn sample_nodes(window: &Window, f: impl Fn(usize, usize, f64) -> CVector) -> NodeSamples {
    (0..window.intervals)
        .map(|i| {
            [
                f(i, 0, window.node_time(i, 0)),
                f(i, 1, window.node_time(i, 1)),
                f(i, 2, window.node_time(i, 2)),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn window_indices() {
        let w = Window::new(-1.0, 2.0, 8).unwrap();
        assert_eq!(w.len(), 25);
        assert_eq!(w.index_of(0.0), Some(8));
        assert_eq!(w.interval_phase(0), 0);
        assert_eq!(w.interval_phase(9), 1);
        assert!(Window::new(0.01, 1.0, 8).is_err());
    }

    #[test]
    fn cubic_interpolation_is_exact() {
        let w = Window::new(0.0, 1.0, 8).unwrap();
        let p = SampledPath::from_fn(w, |t| CVector::from_element(1, Complex64::new(t * t * t - t, 0.0)));
        for i in 0..8 {
            let nodes = p.at_nodes(i);
            for q in 0..3 {
                let t = w.node_time(i, q);
                assert!((nodes[q][0].re - (t * t * t - t)).abs() < 1e-14);
            }
        }
    }
}
