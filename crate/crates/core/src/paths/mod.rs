//! Brownian paths, driver paths `Y = H + A` and the coarse/fine grid map.

mod driver;
mod grid;
mod rng;

use std::io::{self, Write};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

pub use driver::{DriverSpec, DriverTable, MatrixFn, VectorFn};
pub use grid::{anchor, coarse_anchor, make_grid, Grid, MAX_FINE_COUNT};
pub use rng::{fill_normal, Domain, Family, SeedKey};

use crate::error::{Error, Result};
use crate::Scalar;

/// Fine-grid samples of an `m`-dimensional standard Brownian motion.
#[derive(Clone, Debug)]
pub struct BrownianPath<T: Scalar> {
    /// Values, shape `(F + 1, m)`, first row zero.
    pub w: Array2<T>,
    /// Increments, shape `(F, m)`.
    pub dw: Array2<T>,
}

impl<T: Scalar> BrownianPath<T> {
    /// Builds values as running sums of the given increments.
    pub fn from_increments(dw: Array2<T>) -> Self {
        let (f, m) = dw.dim();
        let mut w = Array2::zeros((f + 1, m));
        for j in 0..m {
            let mut acc = T::zero();
            for k in 0..f {
                acc = acc + dw[[k, j]];
                w[[k + 1, j]] = acc;
            }
        }
        Self { w, dw }
    }

    pub fn dim_m(&self) -> usize {
        self.dw.ncols()
    }
}

/// Samples `dim_m` independent motions of the given noise family.
///
/// Component `j` uses stream `(key, family, offset + j)`.
pub fn sample_brownian_family<T: Scalar>(
    grid: &Grid,
    dim_m: usize,
    key: SeedKey,
    family: Family,
    offset: u32,
) -> BrownianPath<T> {
    let f = grid.fine_count();
    let scale = (1.0 / f as f64).sqrt();
    let mut dw = Array2::zeros((f, dim_m));
    let mut buf = vec![T::zero(); f];
    for j in 0..dim_m {
        fill_normal(&mut key.stream(family, offset + j as u32), scale, &mut buf);
        for (k, v) in buf.iter().enumerate() {
            dw[[k, j]] = *v;
        }
    }
    BrownianPath::from_increments(dw)
}

/// Driving Brownian motion of one path.
pub fn sample_brownian<T: Scalar>(grid: &Grid, dim_m: usize, key: SeedKey) -> BrownianPath<T> {
    sample_brownian_family(grid, dim_m, key, Family::Driver, 0)
}

/// One coupled realization: `W`, `Y = H + A` and the shared driver table.
///
/// Every scheme and functional reads the same bundle, so the coarse
/// increments of any level are exact sums of the fine increments.
#[derive(Clone, Debug)]
pub struct PathBundle<T: Scalar> {
    key: SeedKey,
    table: Arc<DriverTable<T>>,
    brownian: BrownianPath<T>,
    y: Array2<T>,
    dh: Array2<T>,
    da: Array2<T>,
    a_int: Array2<T>,
}

impl<T: Scalar> PathBundle<T> {
    /// Samples `W` for `key` and builds the driver.
    pub fn generate(table: &Arc<DriverTable<T>>, key: SeedKey) -> Result<Self> {
        let w = sample_brownian(&table.grid, table.dim_m, key);
        Self::from_brownian(table, key, w)
    }

    /// Left-point construction `dH = σ(t_k) ΔW`, `dA = a(t_k) Δt`, `Y = H + A`.
    pub fn from_brownian(
        table: &Arc<DriverTable<T>>,
        key: SeedKey,
        brownian: BrownianPath<T>,
    ) -> Result<Self> {
        let grid = table.grid;
        let f = grid.fine_count();
        let (d, m) = (table.dim_d, table.dim_m);
        if brownian.dw.dim() != (f, m) {
            return Err(Error::DimensionMismatch {
                context: "brownian increments vs driver",
                expected: f * m,
                actual: brownian.dw.len(),
            });
        }
        let dt = grid.dt::<T>();
        let mut dh = Array2::zeros((f, d));
        let mut da = Array2::zeros((f, d));
        let mut h: Array2<T> = Array2::zeros((f + 1, d));
        let mut a_int = Array2::zeros((f + 1, d));
        let mut y = Array2::zeros((f + 1, d));
        for k in 0..f {
            for i in 0..d {
                let mut inc = T::zero();
                for p in 0..m {
                    inc = inc + table.sigma[[k, i, p]] * brownian.dw[[k, p]];
                }
                let drift = table.drift[[k, i]] * dt;
                if !inc.is_finite() || !drift.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("driver increment component {i}"),
                        index: k,
                    });
                }
                dh[[k, i]] = inc;
                da[[k, i]] = drift;
                h[[k + 1, i]] = h[[k, i]] + inc;
                a_int[[k + 1, i]] = a_int[[k, i]] + drift;
                y[[k + 1, i]] = h[[k + 1, i]] + a_int[[k + 1, i]];
            }
        }
        Ok(Self {
            key,
            table: Arc::clone(table),
            brownian,
            y,
            dh,
            da,
            a_int,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.table.grid
    }
    pub fn key(&self) -> SeedKey {
        self.key
    }
    pub fn table(&self) -> &Arc<DriverTable<T>> {
        &self.table
    }
    pub fn dim_d(&self) -> usize {
        self.table.dim_d
    }
    pub fn dim_m(&self) -> usize {
        self.table.dim_m
    }
    pub fn brownian(&self) -> &BrownianPath<T> {
        &self.brownian
    }
    pub fn w(&self) -> ArrayView2<'_, T> {
        self.brownian.w.view()
    }
    pub fn dw(&self) -> ArrayView2<'_, T> {
        self.brownian.dw.view()
    }
    pub fn y(&self) -> ArrayView2<'_, T> {
        self.y.view()
    }
    pub fn y_at(&self, k: usize) -> ArrayView1<'_, T> {
        self.y.index_axis(Axis(0), k)
    }
    /// Martingale increments `σ(t_k) ΔW_k`.
    pub fn dh(&self) -> ArrayView2<'_, T> {
        self.dh.view()
    }
    /// Finite-variation increments `a(t_k) Δt`.
    pub fn da(&self) -> ArrayView2<'_, T> {
        self.da.view()
    }
    pub fn a_int(&self) -> ArrayView2<'_, T> {
        self.a_int.view()
    }
    /// Increment `Y_{t_{k+1}} − Y_{t_k}` as `dH + dA`.
    pub fn dy(&self, k: usize, i: usize) -> T {
        self.dh[[k, i]] + self.da[[k, i]]
    }
}

/// Builds `(y, a_int)` for an explicit driver and Brownian sample.
pub fn build_driver<T: Scalar>(
    spec: &DriverSpec<T>,
    w: BrownianPath<T>,
    grid: &Grid,
    key: SeedKey,
) -> Result<PathBundle<T>> {
    if w.dim_m() != spec.dim_m() {
        return Err(Error::DimensionMismatch {
            context: "brownian dimension vs driver dim_m",
            expected: spec.dim_m(),
            actual: w.dim_m(),
        });
    }
    let table = Arc::new(spec.table(grid)?);
    PathBundle::from_brownian(&table, key, w)
}

/// Dumps a path as CSV with columns `fine_index, time, w_1..w_m, y_1..y_d`.
pub fn write_path_csv<T: Scalar, W: Write>(bundle: &PathBundle<T>, mut out: W) -> io::Result<()> {
    let (m, d) = (bundle.dim_m(), bundle.dim_d());
    let mut header = vec!["fine_index".to_string(), "time".to_string()];
    header.extend((1..=m).map(|j| format!("w_{j}")));
    header.extend((1..=d).map(|j| format!("y_{j}")));
    writeln!(out, "{}", header.join(","))?;
    for k in 0..=bundle.grid().fine_count() {
        write!(out, "{k},{}", bundle.grid().time::<T>(k))?;
        for j in 0..m {
            write!(out, ",{}", bundle.w()[[k, j]])?;
        }
        for j in 0..d {
            write!(out, ",{}", bundle.y()[[k, j]])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_driver_reproduces_w_bitwise() {
        let g = Grid::new(8, 16).unwrap();
        let table = Arc::new(DriverSpec::<f64>::brownian(2).table(&g).unwrap());
        let b = PathBundle::generate(&table, SeedKey::path(3, 9)).unwrap();
        assert_eq!(b.y(), b.w());
        assert!(b.a_int().iter().all(|v| *v == 0.0));
        assert!(b.w().row(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_drift_gives_time() {
        let g = Grid::new(4, 8).unwrap();
        let table = Arc::new(DriverSpec::<f64>::time().table(&g).unwrap());
        let b = PathBundle::generate(&table, SeedKey::path(1, 0)).unwrap();
        for k in 0..=g.fine_count() {
            assert_eq!(b.y()[[k, 0]], g.time::<f64>(k));
        }
    }

    #[test]
    fn same_key_same_path() {
        let g = Grid::new(4, 4).unwrap();
        let a: BrownianPath<f64> = sample_brownian(&g, 3, SeedKey::path(5, 2));
        let b: BrownianPath<f64> = sample_brownian(&g, 3, SeedKey::path(5, 2));
        assert_eq!(a.w, b.w);
        let c: BrownianPath<f64> = sample_brownian(&g, 3, SeedKey::path(5, 3));
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn coarse_increments_are_sums_of_fine_ones() {
        let g = Grid::new(4, 8).unwrap();
        let p: BrownianPath<f64> = sample_brownian(&g, 1, SeedKey::path(2, 2));
        for c in 0..4 {
            let s: f64 = (c * 8..(c + 1) * 8).map(|k| p.dw[[k, 0]]).sum();
            let diff = p.w[[(c + 1) * 8, 0]] - p.w[[c * 8, 0]];
            assert!((s - diff).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = Grid::new(2, 2).unwrap();
        let w: BrownianPath<f64> = sample_brownian(&g, 2, SeedKey::path(0, 0));
        let r = build_driver(&DriverSpec::brownian(1), w, &g, SeedKey::path(0, 0));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let g = Grid::new(2, 2).unwrap();
        let table = Arc::new(DriverSpec::<f64>::brownian(1).table(&g).unwrap());
        let b = PathBundle::generate(&table, SeedKey::path(0, 0)).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&b, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "fine_index,time,w_1,y_1");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("0,0,0,0"));
    }
}
