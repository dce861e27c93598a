//! Uniform radial grid and the functions sampled on it.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

/// Uniform grid `r_i = i * h`, `i = 0..=n_cells`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    h: f64,
    n_cells: usize,
}

impl RadialGrid {
    pub const MIN_CELLS: usize = 8;

    pub fn new(h: f64, n_cells: usize) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        if n_cells < Self::MIN_CELLS {
            return Err(Error::InvalidGrid(format!("need at least {} cells, got {n_cells}", Self::MIN_CELLS)));
        }
        Ok(RadialGrid { h, n_cells })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of cells `N`; the grid has `N + 1` nodes.
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn len(&self) -> usize {
        self.n_cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Outer radius `N * h`.
    pub fn extent(&self) -> f64 {
        self.r(self.n_cells)
    }

    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.r(i))
    }

    /// Index of the node at radius `radius`, which must sit on the grid
    /// (within a relative 1e-9 of a node).
    pub fn index_of(&self, radius: f64) -> Result<usize> {
        let extent = self.extent();
        if !(radius > 0.0 && radius <= extent * (1.0 + 1e-12)) {
            return Err(Error::RadiusOutOfRange { radius, extent });
        }
        let x = radius / self.h;
        let i = x.round();
        if (x - i).abs() > 1e-9 * x.max(1.0) {
            return Err(Error::InvalidGrid(format!("radius {radius} is not a grid node")));
        }
        Ok(i as usize)
    }

    /// Index of the last node with `r_i <= radius`.
    pub fn floor_index(&self, radius: f64) -> usize {
        (((radius / self.h) * (1.0 + 1e-14)).floor() as usize).min(self.n_cells)
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction(self.nodes().map(f).collect())
    }

    pub fn refined(&self, factor: usize) -> Result<Self> {
        RadialGrid::new(self.h / factor as f64, self.n_cells * factor)
    }
}

/// Real values aligned with a [`RadialGrid`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridFunction(pub Vec<f64>);

impl GridFunction {
    pub fn zeros(len: usize) -> Self {
        GridFunction(vec![0.0; len])
    }

    pub fn constant(len: usize, value: f64) -> Self {
        GridFunction(vec![value; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_len(&self, grid: &RadialGrid) -> Result<()> {
        if self.0.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: self.0.len() });
        }
        Ok(())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.0.iter().position(|x| !x.is_finite()) {
            Some(node) => Err(Error::NonFinite { node, context: context.to_string() }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.0.len(), other.0.len());
        GridFunction(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Sup norm restricted to an index range.
    pub fn sup_norm_on(&self, range: std::ops::Range<usize>) -> f64 {
        self.0[range].iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sup_diff(&self, other: &GridFunction) -> f64 {
        self.0.iter().zip(&other.0).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Deref for GridFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GridFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for GridFunction {
    fn from(v: Vec<f64>) -> Self {
        GridFunction(v)
    }
}
