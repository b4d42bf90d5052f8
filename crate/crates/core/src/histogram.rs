//! Two-dimensional state-visit histograms at selected time slices.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::sampler::{TimeGrid, TrajectoryBatch};

/// Counts of states projected onto axes `(i, j)`. States outside the range
/// land in the nearest edge bin, so every slice counts every trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitHistogram {
    pub axes: (usize, usize),
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub bins: usize,
    /// Grid step index of each slice.
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// Per slice, `bins x bins` counts in row-major order (rows follow axis `i`).
    pub counts: Vec<Vec<u64>>,
}

impl VisitHistogram {
    /// Slices are placed at the grid times nearest to `slice_times`.
    pub fn new(axes: (usize, usize), lo: [f64; 2], hi: [f64; 2], bins: usize, grid: &TimeGrid, slice_times: &[f64]) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::Config("histogram range must be non-empty".into()));
        }
        let steps: Vec<usize> = slice_times.iter().map(|s| grid.nearest_index(*s)).collect();
        let times = steps.iter().map(|i| grid.s(*i)).collect();
        Ok(Self { axes, lo, hi, bins, counts: vec![vec![0; bins * bins]; steps.len()], steps, times })
    }

    pub fn bin_of(&self, axis: usize, v: f64) -> usize {
        let w = (self.hi[axis] - self.lo[axis]) / self.bins as f64;
        let k = math::floor((v - self.lo[axis]) / w);
        if k.is_nan() || k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins - 1)
        }
    }

    pub fn bin_center(&self, axis: usize, b: usize) -> f64 {
        let w = (self.hi[axis] - self.lo[axis]) / self.bins as f64;
        self.lo[axis] + (b as f64 + 0.5) * w
    }

    pub fn accumulate(&mut self, batch: &TrajectoryBatch) -> Result<()> {
        let d = batch.state_dim();
        for axis in [self.axes.0, self.axes.1] {
            if axis >= d {
                return Err(Error::Dimension { expected: d, got: axis + 1 });
            }
        }
        for (k, &step) in self.steps.iter().enumerate() {
            if step > batch.grid.steps {
                return Err(Error::Config("histogram slice beyond the batch horizon".into()));
            }
            for r in 0..batch.len() {
                let z = batch.state(r, step);
                let bi = self.bin_of(0, z[self.axes.0]);
                let bj = self.bin_of(1, z[self.axes.1]);
                self.counts[k][bi * self.bins + bj] += 1;
            }
        }
        Ok(())
    }

    pub fn total(&self, slice: usize) -> u64 {
        self.counts[slice].iter().sum()
    }

    pub fn grid(&self, slice: usize) -> Vec<&[u64]> {
        self.counts[slice].chunks(self.bins).collect()
    }

    /// Fraction of slice mass in bins whose centers lie within `radius` of `center`.
    pub fn mass_within(&self, slice: usize, center: [f64; 2], radius: f64) -> f64 {
        let total = self.total(slice);
        if total == 0 {
            return 0.0;
        }
        let mut inside = 0;
        for bi in 0..self.bins {
            for bj in 0..self.bins {
                let dx = self.bin_center(0, bi) - center[0];
                let dy = self.bin_center(1, bj) - center[1];
                if dx * dx + dy * dy <= radius * radius {
                    inside += self.counts[slice][bi * self.bins + bj];
                }
            }
        }
        inside as f64 / total as f64
    }
}
