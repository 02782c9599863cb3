use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Largest fine grid accepted; keeps index arithmetic and buffers sane.
pub const MAX_FINE_COUNT: usize = 1 << 28;

/// Uniform fine grid on `[0, 1]` refining a coarse grid of `coarse_n` steps.
///
/// Times are always computed as `k / fine_count` from the integer index, so
/// coarse points land exactly on fine points and nothing accumulates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    coarse_n: usize,
    fine_factor: usize,
    fine_count: usize,
}

pub fn make_grid(coarse_n: usize, fine_factor: usize) -> Result<Grid> {
    Grid::new(coarse_n, fine_factor)
}

impl Grid {
    pub fn new(coarse_n: usize, fine_factor: usize) -> Result<Self> {
        if coarse_n == 0 || fine_factor == 0 {
            return Err(Error::InvalidGrid(format!(
                "coarse_n={coarse_n} and fine_factor={fine_factor} must be positive"
            )));
        }
        let fine_count = coarse_n
            .checked_mul(fine_factor)
            .filter(|&f| f <= MAX_FINE_COUNT)
            .ok_or_else(|| {
                Error::InvalidGrid(format!(
                    "{coarse_n} x {fine_factor} exceeds {MAX_FINE_COUNT} fine cells"
                ))
            })?;
        Ok(Self {
            coarse_n,
            fine_factor,
            fine_count,
        })
    }

    pub fn coarse_n(&self) -> usize {
        self.coarse_n
    }

    pub fn fine_factor(&self) -> usize {
        self.fine_factor
    }

    pub fn fine_count(&self) -> usize {
        self.fine_count
    }

    pub fn t_end(&self) -> f64 {
        1.0
    }

    #[inline]
    pub fn time<T: Scalar>(&self, k: usize) -> T {
        T::ratio(k, self.fine_count)
    }

    #[inline]
    pub fn dt<T: Scalar>(&self) -> T {
        T::ratio(1, self.fine_count)
    }

    pub fn times<T: Scalar>(&self) -> Vec<T> {
        (0..=self.fine_count).map(|k| self.time(k)).collect()
    }

    pub fn is_coarse_point(&self, k: usize) -> bool {
        k % self.fine_factor == 0
    }

    /// Fine-index stride of a coarse grid with `coarse_n` steps on this fine grid.
    pub fn stride_for(&self, coarse_n: usize) -> Result<usize> {
        if coarse_n == 0 || self.fine_count % coarse_n != 0 {
            return Err(Error::NotDivisible {
                coarse_n,
                fine_count: self.fine_count,
            });
        }
        Ok(self.fine_count / coarse_n)
    }

    /// Fine index of `n(t_k)`, the last coarse point strictly before `t_k`.
    pub fn coarse_anchor(&self, fine_index: usize) -> Result<usize> {
        if fine_index > self.fine_count {
            return Err(Error::IndexOutOfRange {
                index: fine_index,
                max: self.fine_count,
            });
        }
        Ok(anchor(self.fine_factor, fine_index))
    }
}

/// Left-open anchor for stride `stride`: the coarse cell `(a, a + stride]`
/// containing `k`, with `anchor(0) = 0`.
#[inline]
pub fn anchor(stride: usize, k: usize) -> usize {
    if k == 0 {
        0
    } else {
        ((k - 1) / stride) * stride
    }
}

pub fn coarse_anchor(grid: &Grid, fine_index: usize) -> Result<usize> {
    grid.coarse_anchor(fine_index)
}
