//! Discretization functionals `Zⁿ`, `Mⁿ`, `Nⁿ` on the fine grid.
//!
//! Each fine cell of a bundle is read as a linear drift segment `dA`
//! followed by an instantaneous martingale move `dH`. Integrals along the
//! drift segment are exact polynomial integrals; integrals against `dH`
//! take the pre-move integrand (Itô). Products therefore obey the
//! integration-by-parts rule exactly, and `Y_t = t` yields closed-form
//! cell integrals.

use ndarray::{Array1, Array3, Array4, ArrayView1};
use serde::{Deserialize, Serialize};

use super::series::{GridLevel, SeriesKind, StatSeries};
use crate::error::{Error, Result};
use crate::paths::{anchor, PathBundle};
use crate::Scalar;

/// How the symmetric part of an iterated integral is closed within a fine cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BracketRule {
    /// `½(ΔHΔHᵀ − c Δt)` per fine cell; per coarse cell this gives the
    /// exact identity `∫W⁽ⁿ⁾dW = ((ΔW)² − h)/2` for a scalar Brownian driver.
    #[default]
    Model,
    /// Plain left-point sums; the bracket is `Σ ΔHΔHᵀ`.
    Empirical,
}

impl std::str::FromStr for BracketRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Self::Model),
            "empirical" => Ok(Self::Empirical),
            _ => Err(Error::Unknown {
                kind: "bracket rule",
                name: s.into(),
            }),
        }
    }
}

/// All functionals of one bundle at one coarse level, on the fine grid.
#[derive(Clone, Debug)]
pub struct Functionals<T: Scalar> {
    pub coarse_n: usize,
    pub stride: usize,
    pub rule: BracketRule,
    grid: crate::paths::Grid,
    /// `Zⁿ`, shape `(F + 1, d, d)`, `z[[k, a, b]] = ∫ Y⁽ⁿ⁾_a dY_b`.
    pub z: Array3<T>,
    /// `M^{nj}`, shape `(F + 1, j, d, d)`.
    pub m: Array4<T>,
    /// `N^{nj}`, shape `(F + 1, j, d, d)`.
    pub n: Array4<T>,
    /// `∫ C⁽ⁿ⁾ dY^j`, shape `(F + 1, j, d, d)`, with `C` the bracket of the rule.
    pub c_int: Array4<T>,
    /// Cell iterated integrals `∫_{cell} Y⁽ⁿ⁾ dYᵀ`, shape `(coarse_n, d, d)`.
    pub cells: Array3<T>,
}

fn check_level<T: Scalar>(bundle: &PathBundle<T>, coarse_n: usize) -> Result<usize> {
    bundle.grid().stride_for(coarse_n)
}

/// Bracket increment of fine cell `k` under `rule`, written into `dc`.
#[inline]
fn bracket_increment<T: Scalar>(bundle: &PathBundle<T>, rule: BracketRule, k: usize, dh: &[T], dc: &mut [T]) {
    let d = dh.len();
    match rule {
        BracketRule::Model => {
            let tab = bundle.table().dc();
            for a in 0..d {
                for b in 0..d {
                    dc[a * d + b] = tab[[k, a, b]];
                }
            }
        }
        BracketRule::Empirical => {
            for a in 0..d {
                for b in 0..d {
                    dc[a * d + b] = dh[a] * dh[b];
                }
            }
        }
    }
}

/// Advances the within-cell state over fine cell `k`.
///
/// `y` is `Y⁽ⁿ⁾`, `zr` the running cell integral `∫ Y⁽ⁿ⁾ dYᵀ`.
#[inline]
fn advance_z<T: Scalar>(y: &mut [T], zr: &mut [T], alpha: &[T], dh: &[T], dc: &[T]) {
    let d = y.len();
    let half = T::lit(0.5);
    for a in 0..d {
        let mid = y[a] + half * alpha[a];
        for b in 0..d {
            zr[a * d + b] = zr[a * d + b] + mid * alpha[b];
        }
    }
    for a in 0..d {
        y[a] = y[a] + alpha[a];
    }
    for a in 0..d {
        for b in 0..d {
            zr[a * d + b] = zr[a * d + b] + y[a] * dh[b] + half * (dh[a] * dh[b] - dc[a * d + b]);
        }
    }
    for a in 0..d {
        y[a] = y[a] + dh[a];
    }
}

/// Iterated integrals `∫_{cell} (Y_s − Y_{n(s)}) dY_sᵀ` for every coarse cell.
pub fn cell_integrals<T: Scalar>(bundle: &PathBundle<T>, coarse_n: usize, rule: BracketRule) -> Result<Array3<T>> {
    let stride = check_level(bundle, coarse_n)?;
    let d = bundle.dim_d();
    let (dha, daa) = (bundle.dh(), bundle.da());
    let mut out = Array3::zeros((coarse_n, d, d));
    let mut y = vec![T::zero(); d];
    let mut zr = vec![T::zero(); d * d];
    let mut dh = vec![T::zero(); d];
    let mut alpha = vec![T::zero(); d];
    let mut dc = vec![T::zero(); d * d];
    for k in 0..bundle.grid().fine_count() {
        if k % stride == 0 {
            y.fill(T::zero());
            zr.fill(T::zero());
        }
        for a in 0..d {
            dh[a] = dha[[k, a]];
            alpha[a] = daa[[k, a]];
        }
        bracket_increment(bundle, rule, k, &dh, &mut dc);
        advance_z(&mut y, &mut zr, &alpha, &dh, &dc);
        if (k + 1) % stride == 0 {
            let c = k / stride;
            for a in 0..d {
                for b in 0..d {
                    out[[c, a, b]] = zr[a * d + b];
                }
            }
        }
    }
    Ok(out)
}

/// Computes `Zⁿ`, `M^{nj}`, `N^{nj}` and `∫C⁽ⁿ⁾dY^j` in one pass.
pub fn compute_functionals<T: Scalar>(
    bundle: &PathBundle<T>,
    coarse_n: usize,
    rule: BracketRule,
) -> Result<Functionals<T>> {
    let stride = check_level(bundle, coarse_n)?;
    let d = bundle.dim_d();
    let f = bundle.grid().fine_count();
    let (dha, daa) = (bundle.dh(), bundle.da());
    let half = T::lit(0.5);
    let third = T::lit(1.0 / 3.0);
    let sixth = T::lit(1.0 / 6.0);

    let mut z = Array3::zeros((f + 1, d, d));
    let mut m = Array4::zeros((f + 1, d, d, d));
    let mut n = Array4::zeros((f + 1, d, d, d));
    let mut c_int = Array4::zeros((f + 1, d, d, d));
    let mut cells = Array3::zeros((coarse_n, d, d));

    let mut y = vec![T::zero(); d];
    let mut zr = vec![T::zero(); d * d];
    let mut cn = vec![T::zero(); d * d];
    let mut dh = vec![T::zero(); d];
    let mut alpha = vec![T::zero(); d];
    let mut dc = vec![T::zero(); d * d];
    let mut zc = vec![T::zero(); d * d];
    let mut mc = vec![T::zero(); d * d * d];
    let mut nc = vec![T::zero(); d * d * d];
    let mut cc = vec![T::zero(); d * d * d];

    for k in 0..f {
        if k % stride == 0 {
            y.fill(T::zero());
            zr.fill(T::zero());
            cn.fill(T::zero());
        }
        for a in 0..d {
            dh[a] = dha[[k, a]];
            alpha[a] = daa[[k, a]];
        }
        bracket_increment(bundle, rule, k, &dh, &mut dc);

        // Drift segment and martingale move of the outer integrals, using
        // the pre-cell state.
        for j in 0..d {
            let (aj, hj) = (alpha[j], dh[j]);
            if aj == T::zero() && hj == T::zero() {
                continue;
            }
            for a in 0..d {
                for b in 0..d {
                    let yy = y[a] * y[b];
                    let lin = half * (y[a] * alpha[b] + alpha[a] * y[b]);
                    let quad = third * (alpha[a] * alpha[b]);
                    let ya = y[a] + alpha[a];
                    let yb = y[b] + alpha[b];
                    let idx = (j * d + a) * d + b;
                    nc[idx] = nc[idx] + aj * (yy + lin + quad) + hj * (ya * yb);
                    let zab = zr[a * d + b];
                    let mz = zab + (half * y[a] + sixth * alpha[a]) * alpha[b];
                    let z_after_drift = zab + (y[a] + half * alpha[a]) * alpha[b];
                    mc[idx] = mc[idx] + aj * mz + hj * z_after_drift;
                    cc[idx] = cc[idx] + (aj + hj) * cn[a * d + b];
                }
            }
        }
        advance_z(&mut y, &mut zr, &alpha, &dh, &dc);
        for a in 0..d * d {
            cn[a] = cn[a] + dc[a];
        }
        if (k + 1) % stride == 0 {
            let c = k / stride;
            for a in 0..d {
                for b in 0..d {
                    cells[[c, a, b]] = zr[a * d + b];
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                z[[k + 1, a, b]] = zc[a * d + b] + zr[a * d + b];
                for j in 0..d {
                    let idx = (j * d + a) * d + b;
                    m[[k + 1, j, a, b]] = mc[idx];
                    n[[k + 1, j, a, b]] = nc[idx];
                    c_int[[k + 1, j, a, b]] = cc[idx];
                }
            }
        }
        if (k + 1) % stride == 0 {
            for a in 0..d * d {
                zc[a] = zc[a] + zr[a];
            }
        }
    }
    Ok(Functionals {
        coarse_n,
        stride,
        rule,
        grid: *bundle.grid(),
        z,
        m,
        n,
        c_int,
        cells,
    })
}

impl<T: Scalar> Functionals<T> {
    fn series(&self, kind: SeriesKind, values: ndarray::ArrayD<T>) -> StatSeries<T> {
        StatSeries::new(kind, GridLevel::Fine, self.grid, 1, values).expect("fine-grid shapes are consistent")
    }

    pub fn z_series(&self) -> StatSeries<T> {
        self.series(SeriesKind::Z, self.z.clone().into_dyn())
    }

    pub fn m_series(&self) -> StatSeries<T> {
        self.series(SeriesKind::M, self.m.clone().into_dyn())
    }

    pub fn n_series(&self) -> StatSeries<T> {
        self.series(SeriesKind::N, self.n.clone().into_dyn())
    }

    pub fn z_end(&self) -> ndarray::ArrayView2<'_, T> {
        self.z.index_axis(ndarray::Axis(0), self.z.dim().0 - 1)
    }

    pub fn m_end(&self) -> ndarray::ArrayView3<'_, T> {
        self.m.index_axis(ndarray::Axis(0), self.m.dim().0 - 1)
    }

    pub fn n_end(&self) -> ndarray::ArrayView3<'_, T> {
        self.n.index_axis(ndarray::Axis(0), self.n.dim().0 - 1)
    }
}

/// `Zⁿ` on the fine grid.
pub fn z_functional<T: Scalar>(bundle: &PathBundle<T>, coarse_n: usize, rule: BracketRule) -> Result<StatSeries<T>> {
    Ok(compute_functionals(bundle, coarse_n, rule)?.z_series())
}

/// `M^{nj}` on the fine grid, sample shape `(j, d, d)`.
pub fn m_functional<T: Scalar>(bundle: &PathBundle<T>, coarse_n: usize, rule: BracketRule) -> Result<StatSeries<T>> {
    Ok(compute_functionals(bundle, coarse_n, rule)?.m_series())
}

/// `N^{nj}` on the fine grid, sample shape `(j, d, d)`.
pub fn n_functional<T: Scalar>(bundle: &PathBundle<T>, coarse_n: usize, rule: BracketRule) -> Result<StatSeries<T>> {
    Ok(compute_functionals(bundle, coarse_n, rule)?.n_series())
}

/// `Nⁿ(Y)_t` of a scalar path from the cube sum
/// `3Nⁿ(Y)_t = Σ_{complete cells} (ΔY)³ + (Y_t − Y_{n(t)})³`, at fine index `k`.
pub fn ny_cubesum<T: Scalar>(y: ArrayView1<'_, T>, stride: usize, k: usize) -> Result<T> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if k >= y.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            max: y.len().saturating_sub(1),
        });
    }
    let a = anchor(stride, k);
    let mut s = T::zero();
    let mut c = 0;
    while c + stride <= a {
        let inc = y[c + stride] - y[c];
        s = s + inc * inc * inc;
        c += stride;
    }
    let tail = y[k] - y[a];
    Ok((s + tail * tail * tail) / T::lit(3.0))
}

/// Terms of the per-path cube identity for a scalar driver at `t = 1`:
/// `3Nⁿ(Y) = 3Nⁿ + 3∫Y⁽ⁿ⁾ d[H,H] + Σ (ΔH)³`, with `[H,H]` the empirical bracket.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubeDecomposition<T> {
    pub cube_sum: T,
    pub three_n: T,
    pub three_bracket_integral: T,
    pub cubic_variation: T,
}

impl<T: Scalar> CubeDecomposition<T> {
    pub fn residual(&self) -> T {
        self.cube_sum - self.three_n - self.three_bracket_integral - self.cubic_variation
    }
}

pub fn cube_decomposition<T: Scalar>(bundle: &PathBundle<T>, coarse_n: usize) -> Result<CubeDecomposition<T>> {
    if bundle.dim_d() != 1 {
        return Err(Error::DimensionMismatch {
            context: "cube identity needs a scalar driver",
            expected: 1,
            actual: bundle.dim_d(),
        });
    }
    let fun = compute_functionals(bundle, coarse_n, BracketRule::Empirical)?;
    let f = bundle.grid().fine_count();
    let y = bundle.y().column(0).to_owned();
    let cube_sum = ny_cubesum(y.view(), fun.stride, f)? * T::lit(3.0);
    let (mut ydc, mut h3) = (T::zero(), T::zero());
    for k in 0..f {
        let yn = bundle.y()[[k, 0]] + bundle.da()[[k, 0]] - bundle.y()[[anchor(fun.stride, k + 1), 0]];
        let dh = bundle.dh()[[k, 0]];
        ydc = ydc + yn * dh * dh;
        h3 = h3 + dh * dh * dh;
    }
    Ok(CubeDecomposition {
        cube_sum,
        three_n: fun.n[[f, 0, 0, 0]] * T::lit(3.0),
        three_bracket_integral: ydc * T::lit(3.0),
        cubic_variation: h3,
    })
}

/// Cumulative `Σ ΔA ΔB` over fine cells.
pub fn empirical_qv<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Result<Array1<T>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "quadratic covariation inputs",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut out = Array1::zeros(a.len());
    for k in 1..a.len() {
        out[k] = out[k - 1] + (a[k] - a[k - 1]) * (b[k] - b[k - 1]);
    }
    Ok(out)
}

/// `[A, B]` of two series entries as a fine-grid QV series.
pub fn empirical_qv_series<T: Scalar>(
    a: &StatSeries<T>,
    ia: &[usize],
    b: &StatSeries<T>,
    ib: &[usize],
) -> Result<StatSeries<T>> {
    if a.grid != b.grid || a.stride != b.stride {
        return Err(Error::DimensionMismatch {
            context: "quadratic covariation grids",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let qv = empirical_qv(a.component(ia)?.view(), b.component(ib)?.view())?;
    StatSeries::new(SeriesKind::QV, a.level, a.grid, a.stride, qv.into_dyn())
}

/// Finite-variation limits `(N^{ijk}_1, M^{ijk}_1) = (⅓∫y_iy_jy_k, ⅙∫y_iy_jy_k)`.
pub fn fv_limit_oracle(y: &dyn Fn(f64) -> Array1<f64>, i: usize, j: usize, k: usize) -> Result<(f64, f64)> {
    let probe = y(0.5);
    for idx in [i, j, k] {
        if idx >= probe.len() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                max: probe.len().saturating_sub(1),
            });
        }
    }
    let cube = crate::quad::adaptive_simpson(
        |s| {
            let v = y(s);
            v[i] * v[j] * v[k]
        },
        0.0,
        1.0,
        1e-13,
    )?;
    Ok((cube / 3.0, cube / 6.0))
}
