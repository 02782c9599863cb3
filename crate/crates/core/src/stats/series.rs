use ndarray::{Array1, ArrayD, ArrayViewD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::Grid;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridLevel {
    Coarse,
    Fine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SeriesKind {
    Z,
    M,
    N,
    NY,
    QV,
    U,
}

/// Time-indexed tensor samples; axis 0 runs over grid points `0, stride, 2·stride, …`.
#[derive(Clone, Debug)]
pub struct StatSeries<T: Scalar> {
    pub kind: SeriesKind,
    pub level: GridLevel,
    pub grid: Grid,
    pub stride: usize,
    pub values: ArrayD<T>,
}

impl<T: Scalar> StatSeries<T> {
    pub fn new(kind: SeriesKind, level: GridLevel, grid: Grid, stride: usize, values: ArrayD<T>) -> Result<Self> {
        if stride == 0 || grid.fine_count() % stride != 0 {
            return Err(Error::NotDivisible {
                coarse_n: stride,
                fine_count: grid.fine_count(),
            });
        }
        let expected = grid.fine_count() / stride + 1;
        if values.ndim() == 0 || values.len_of(Axis(0)) != expected {
            return Err(Error::DimensionMismatch {
                context: "series length",
                expected,
                actual: if values.ndim() == 0 { 0 } else { values.len_of(Axis(0)) },
            });
        }
        Ok(Self {
            kind,
            level,
            grid,
            stride,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.grid.time(i * self.stride)).collect()
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.values.shape()[1..]
    }

    pub fn at(&self, i: usize) -> ArrayViewD<'_, T> {
        self.values.index_axis(Axis(0), i)
    }

    pub fn last(&self) -> ArrayViewD<'_, T> {
        self.at(self.len() - 1)
    }

    /// Scalar path of one tensor entry.
    pub fn component(&self, index: &[usize]) -> Result<Array1<T>> {
        if index.len() != self.values.ndim() - 1 {
            return Err(Error::DimensionMismatch {
                context: "component index rank",
                expected: self.values.ndim() - 1,
                actual: index.len(),
            });
        }
        for (&i, &n) in index.iter().zip(self.sample_shape()) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, max: n.saturating_sub(1) });
            }
        }
        let mut full = Vec::with_capacity(index.len() + 1);
        full.push(0);
        full.extend_from_slice(index);
        Ok(Array1::from_shape_fn(self.len(), |t| {
            full[0] = t;
            self.values[IxDyn(&full)]
        }))
    }

    pub fn scaled(mut self, factor: T) -> Self {
        self.values.mapv_inplace(|v| v * factor);
        self
    }
}
