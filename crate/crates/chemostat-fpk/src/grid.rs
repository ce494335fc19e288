//! Rectangular truncation grids. The 2-D chemostat grid covers
//! `[0, s_max] x [0, b_max]` with `n1`/`n2` intervals per axis, so
//! `(n1+1)(n2+1)` nodes; row `k2 = 0` is the washout row carrying the
//! singular component of the law. `AxisGrid` is the per-axis building block
//! used by the general n-dimensional generator assembly.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One axis of a regular grid: `intervals + 1` nodes spaced `h = max/intervals`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisGrid {
    pub max: f64,
    pub intervals: usize,
}

impl AxisGrid {
    pub fn new(max: f64, intervals: usize) -> Result<Self> {
        if !(max > 0.0) || intervals < 2 {
            return Err(Error::domain(format!(
                "axis needs max > 0 and at least 2 intervals, got max = {max}, intervals = {intervals}"
            )));
        }
        Ok(AxisGrid { max, intervals })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.max / self.intervals as f64
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.intervals + 1
    }

    #[inline]
    pub fn coord(&self, k: usize) -> f64 {
        k as f64 * self.spacing()
    }
}

/// The 2-D chemostat grid. Flat node index is `k1 + k2 * (n1 + 1)`:
/// substrate axis fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub s_max: f64,
    pub b_max: f64,
    /// Interval count along s (n1 + 1 nodes).
    pub n1: usize,
    /// Interval count along b (n2 + 1 nodes).
    pub n2: usize,
}

impl Grid {
    pub fn new(s_max: f64, b_max: f64, n1: usize, n2: usize) -> Result<Self> {
        AxisGrid::new(s_max, n1)?;
        AxisGrid::new(b_max, n2)?;
        Ok(Grid { s_max, b_max, n1, n2 })
    }

    #[inline]
    pub fn h1(&self) -> f64 {
        self.s_max / self.n1 as f64
    }

    #[inline]
    pub fn h2(&self) -> f64 {
        self.b_max / self.n2 as f64
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        (self.n1 + 1) * (self.n2 + 1)
    }

    #[inline]
    pub fn index(&self, k1: usize, k2: usize) -> usize {
        debug_assert!(k1 <= self.n1 && k2 <= self.n2);
        k1 + k2 * (self.n1 + 1)
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, usize) {
        (idx % (self.n1 + 1), idx / (self.n1 + 1))
    }

    #[inline]
    pub fn coords(&self, k1: usize, k2: usize) -> (f64, f64) {
        (k1 as f64 * self.h1(), k2 as f64 * self.h2())
    }

    pub fn axes(&self) -> [AxisGrid; 2] {
        [
            AxisGrid { max: self.s_max, intervals: self.n1 },
            AxisGrid { max: self.b_max, intervals: self.n2 },
        ]
    }

    /// Measure of the cell represented by a node, for the mass <-> density
    /// conversion. Interior nodes represent an `h1 x h2` area; nodes on the
    /// truncation edges `s = 0`, `s = s_max`, `b = b_max` half (quarter at
    /// their corners); washout-row nodes (`b = 0`) carry a 1-D density in s,
    /// so their measure is a length: `h1`, halved at the row ends.
    pub fn cell_measure(&self, k1: usize, k2: usize) -> f64 {
        let ws = if k1 == 0 || k1 == self.n1 { self.h1() / 2.0 } else { self.h1() };
        if k2 == 0 {
            ws
        } else if k2 == self.n2 {
            ws * self.h2() / 2.0
        } else {
            ws * self.h2()
        }
    }

    /// Nearest-node cell index of a sample, clamped to the grid. The second
    /// return reports whether the sample lay outside `[0, s_max] x [0, b_max]`.
    pub fn bin(&self, s: f64, b: f64) -> ((usize, usize), bool) {
        let out = s < 0.0 || s > self.s_max || b < 0.0 || b > self.b_max;
        let k1 = ((s / self.h1()).round().max(0.0) as usize).min(self.n1);
        let k2 = ((b / self.h2()).round().max(0.0) as usize).min(self.n2);
        ((k1, k2), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_counts_and_indexing() {
        let g = Grid::new(2.0, 0.06, 70, 70).unwrap();
        assert_eq!(g.n_nodes(), 71 * 71);
        assert_eq!(g.h1(), 2.0 / 70.0);
        assert_eq!(g.h2(), 0.06 / 70.0);
        for idx in [0, 70, 71, 5040, 71 * 71 - 1] {
            let (k1, k2) = g.unindex(idx);
            assert_eq!(g.index(k1, k2), idx);
        }
        let (s, b) = g.coords(35, 70);
        assert_eq!(s, 1.0);
        assert_eq!(b, 0.06);
    }

    #[test]
    fn cell_measures_partition_structure() {
        let g = Grid::new(1.0, 1.0, 4, 5).unwrap();
        // interior area
        assert_eq!(g.cell_measure(2, 2), 0.25 * 0.2);
        // truncation edges halve
        assert_eq!(g.cell_measure(0, 2), 0.125 * 0.2);
        assert_eq!(g.cell_measure(4, 5), 0.125 * 0.1);
        // washout row is a length measure
        assert_eq!(g.cell_measure(2, 0), 0.25);
        assert_eq!(g.cell_measure(0, 0), 0.125);
        // the 2-D cells of rows k2 >= 1 tile [0, s_max] x [h2/2, b_max]
        let mut area = 0.0;
        for k2 in 1..=5 {
            for k1 in 0..=4 {
                area += g.cell_measure(k1, k2);
            }
        }
        assert!((area - 1.0 * (1.0 - 0.1)).abs() < 1e-14);
    }

    #[test]
    fn binning_rounds_to_nearest_node() {
        let g = Grid::new(2.0, 1.0, 10, 10).unwrap();
        assert_eq!(g.bin(0.09, 0.0), ((0, 0), false));
        assert_eq!(g.bin(0.11, 0.0), ((1, 0), false));
        assert_eq!(g.bin(2.5, 0.5), ((10, 5), true));
        assert_eq!(g.bin(1.0, 1.2), ((5, 10), true));
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(Grid::new(0.0, 1.0, 10, 10).is_err());
        assert!(Grid::new(1.0, 1.0, 1, 10).is_err());
    }
}
