//! Euler, Milstein and reference solvers on a shared path bundle.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FieldEval, SdeProblem};
use crate::paths::{anchor, Grid, PathBundle};
use crate::stats::{cell_integrals, compute_functionals, BracketRule, GridLevel, SeriesKind, StatSeries};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "euler")]
    Euler,
    #[serde(rename = "milstein")]
    Milstein,
    #[serde(rename = "milstein54")]
    MilsteinIto54,
    #[serde(rename = "milstein-reduced")]
    MilsteinReduced,
    #[serde(rename = "reference")]
    Reference,
}

impl SchemeId {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::Euler => "euler",
            SchemeId::Milstein => "milstein",
            SchemeId::MilsteinIto54 => "milstein54",
            SchemeId::MilsteinReduced => "milstein-reduced",
            SchemeId::Reference => "reference",
        }
    }
}

impl std::fmt::Display for SchemeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchemeId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SchemeId::Euler),
            "milstein" => Ok(SchemeId::Milstein),
            "milstein54" | "milstein-ito54" => Ok(SchemeId::MilsteinIto54),
            "milstein-reduced" => Ok(SchemeId::MilsteinReduced),
            "reference" => Ok(SchemeId::Reference),
            _ => Err(Error::Unknown {
                kind: "scheme",
                name: s.into(),
            }),
        }
    }
}

/// Solver output on the coarse grid (`stride = F / n`) or the fine grid (`stride = 1`).
#[derive(Clone, Debug)]
pub struct SchemeOutput<T: Scalar> {
    pub scheme: SchemeId,
    pub level: GridLevel,
    pub grid: Grid,
    pub stride: usize,
    /// Shape `(F / stride + 1, q)`, first row `x₀`.
    pub values: Array2<T>,
    /// Row of the first non-finite or overflowing value.
    pub diverged_at: Option<usize>,
}

impl<T: Scalar> SchemeOutput<T> {
    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn end(&self) -> ndarray::ArrayView1<'_, T> {
        self.values.row(self.values.nrows() - 1)
    }

    pub fn time(&self, row: usize) -> T {
        self.grid.time(row * self.stride)
    }
}

/// Values beyond this magnitude are treated as divergence.
fn blowup<T: Scalar>() -> T {
    T::lit(1e150).min(T::max_value().sqrt())
}

fn check_problem<T: Scalar>(problem: &SdeProblem<T>, bundle: &PathBundle<T>) -> Result<()> {
    if problem.dim_d() != bundle.dim_d() {
        return Err(Error::DimensionMismatch {
            context: "problem dim_d vs bundle dim_d",
            expected: problem.dim_d(),
            actual: bundle.dim_d(),
        });
    }
    Ok(())
}

/// Marks row `row` and everything after as diverged if the state is bad.
fn diverged<T: Scalar>(x: &Array1<T>) -> bool {
    let cap = blowup::<T>();
    x.iter().any(|v| !v.is_finite() || v.abs() > cap)
}

fn finish<T: Scalar>(values: &mut Array2<T>, row: usize) -> Option<usize> {
    for r in row..values.nrows() {
        values.row_mut(r).fill(T::nan());
    }
    Some(row)
}

/// Coarse-step recursion shared by Euler and Milstein.
///
/// `cells` holds the per-cell iterated integrals; `None` gives Euler.
fn step_scheme<T: Scalar>(
    problem: &SdeProblem<T>,
    bundle: &PathBundle<T>,
    coarse_n: usize,
    cells: Option<&Array3<T>>,
    scheme: SchemeId,
) -> Result<SchemeOutput<T>> {
    check_problem(problem, bundle)?;
    let stride = bundle.grid().stride_for(coarse_n)?;
    let (q, d) = (problem.dim_q(), problem.dim_d());
    let field = problem.field.as_ref();
    let mut ev = FieldEval::for_field(field);
    let mut h = Array3::zeros((q, d, d));
    let mut values = Array2::zeros((coarse_n + 1, q));
    let mut x = problem.x0.clone();
    values.row_mut(0).assign(&x);
    let y = bundle.y();
    let mut diverged_at = None;
    let mut next = Array1::zeros(q);
    for c in 0..coarse_n {
        let (k0, k1) = (c * stride, (c + 1) * stride);
        ev.first_order(field, x.view());
        if cells.is_some() {
            ev.h_into(&mut h);
        }
        for i in 0..q {
            let mut xi = x[i];
            for j in 0..d {
                xi = xi + ev.f[[i, j]] * (y[[k1, j]] - y[[k0, j]]);
            }
            if let Some(cells) = cells {
                for a in 0..d {
                    for b in 0..d {
                        xi = xi + h[[i, a, b]] * cells[[c, b, a]];
                    }
                }
            }
            next[i] = xi;
        }
        if diverged(&next) {
            diverged_at = finish(&mut values, c + 1);
            break;
        }
        x.assign(&next);
        values.row_mut(c + 1).assign(&x);
    }
    Ok(SchemeOutput {
        scheme,
        level: GridLevel::Coarse,
        grid: *bundle.grid(),
        stride,
        values,
        diverged_at,
    })
}

/// `X̃_{(k+1)/n} = X̃_{k/n} + f(X̃_{k/n}) ΔY`.
pub fn euler<T: Scalar>(problem: &SdeProblem<T>, bundle: &PathBundle<T>, coarse_n: usize) -> Result<SchemeOutput<T>> {
    step_scheme(problem, bundle, coarse_n, None, SchemeId::Euler)
}

/// Milstein step: Euler plus `tr(h^i(X) ∫_{cell}(Y − Y_{k/n}) dYᵀ)`.
pub fn milstein<T: Scalar>(
    problem: &SdeProblem<T>,
    bundle: &PathBundle<T>,
    coarse_n: usize,
    rule: BracketRule,
) -> Result<SchemeOutput<T>> {
    let cells = cell_integrals(bundle, coarse_n, rule)?;
    step_scheme(problem, bundle, coarse_n, Some(&cells), SchemeId::Milstein)
}

/// Continuous-type interpolant on the fine grid from the coarse values.
fn interpolate<T: Scalar>(
    problem: &SdeProblem<T>,
    bundle: &PathBundle<T>,
    coarse: &SchemeOutput<T>,
    rule: Option<BracketRule>,
) -> Result<SchemeOutput<T>> {
    let stride = coarse.stride;
    let f = bundle.grid().fine_count();
    let (q, d) = (problem.dim_q(), problem.dim_d());
    let z = match rule {
        Some(rule) => Some(compute_functionals(bundle, f / stride, rule)?.z),
        None => None,
    };
    let field = problem.field.as_ref();
    let mut ev = FieldEval::for_field(field);
    let mut h = Array3::zeros((q, d, d));
    let mut values = Array2::zeros((f + 1, q));
    values.row_mut(0).assign(&problem.x0);
    let y = bundle.y();
    let mut diverged_at = None;
    let mut cached = usize::MAX;
    for k in 1..=f {
        let a = anchor(stride, k);
        let xa = coarse.values.row(a / stride);
        if xa.iter().any(|v| !v.is_finite()) {
            diverged_at = finish(&mut values, k);
            break;
        }
        if cached != a {
            ev.first_order(field, xa);
            if z.is_some() {
                ev.h_into(&mut h);
            }
            cached = a;
        }
        for i in 0..q {
            let mut xi = xa[i];
            for j in 0..d {
                xi = xi + ev.f[[i, j]] * (y[[k, j]] - y[[a, j]]);
            }
            if let Some(z) = &z {
                for p in 0..d {
                    for r in 0..d {
                        xi = xi + h[[i, p, r]] * (z[[k, r, p]] - z[[a, r, p]]);
                    }
                }
            }
            values[[k, i]] = xi;
        }
    }
    Ok(SchemeOutput {
        scheme: coarse.scheme,
        level: GridLevel::Fine,
        grid: *bundle.grid(),
        stride: 1,
        values,
        diverged_at: diverged_at.or(coarse.diverged_at.map(|r| r * stride)),
    })
}

pub fn euler_interpolated<T: Scalar>(
    problem: &SdeProblem<T>,
    bundle: &PathBundle<T>,
    coarse_n: usize,
) -> Result<SchemeOutput<T>> {
    let coarse = euler(problem, bundle, coarse_n)?;
    interpolate(problem, bundle, &coarse, None)
}

pub fn milstein_interpolated<T: Scalar>(
    problem: &SdeProblem<T>,
    bundle: &PathBundle<T>,
    coarse_n: usize,
    rule: BracketRule,
) -> Result<SchemeOutput<T>> {
    let coarse = milstein(problem, bundle, coarse_n, rule)?;
    interpolate(problem, bundle, &coarse, Some(rule))
}

/// The scalar Itô Milstein step written term by term:
///
/// `X += aΔW + bh + ½aa′((ΔW)² − h) + ½bb′h² + ba′∫s⁽ⁿ⁾dW + ab′∫W⁽ⁿ⁾ds`.
pub fn milstein_ito54<T: Scalar>(
    problem: &SdeProblem<T>,
    bundle: &PathBundle<T>,
    coarse_n: usize,
) -> Result<SchemeOutput<T>> {
    ito_step(problem, bundle, coarse_n, SchemeId::MilsteinIto54)
}

/// The simpler Itô Milstein step that keeps only the `aa′` correction:
///
/// `X += aΔW + bh + ½aa′((ΔW)² − h)`.
///
/// Same first-order rate as [`milstein_ito54`], with a different limit law.
pub fn milstein_ito_reduced<T: Scalar>(
    problem: &SdeProblem<T>,
    bundle: &PathBundle<T>,
    coarse_n: usize,
) -> Result<SchemeOutput<T>> {
    ito_step(problem, bundle, coarse_n, SchemeId::MilsteinReduced)
}

fn ito_step<T: Scalar>(
    problem: &SdeProblem<T>,
    bundle: &PathBundle<T>,
    coarse_n: usize,
    scheme: SchemeId,
) -> Result<SchemeOutput<T>> {
    let full = scheme == SchemeId::MilsteinIto54;
    let ito = problem
        .ito
        .as_ref()
        .ok_or_else(|| Error::NotItoModel(problem.name.clone()))?;
    check_problem(problem, bundle)?;
    if bundle.dim_d() != 2 {
        return Err(Error::NotItoModel(problem.name.clone()));
    }
    let stride = bundle.grid().stride_for(coarse_n)?;
    // Cross cells do not depend on the bracket rule.
    let cells = cell_integrals(bundle, coarse_n, BracketRule::Model)?;
    let y = bundle.y();
    let half = T::lit(0.5);
    let mut values = Array2::zeros((coarse_n + 1, 1));
    let mut x = problem.x0[0];
    values[[0, 0]] = x;
    let mut diverged_at = None;
    for c in 0..coarse_n {
        let (k0, k1) = (c * stride, (c + 1) * stride);
        let dw = y[[k1, 0]] - y[[k0, 0]];
        let h = y[[k1, 1]] - y[[k0, 1]];
        let [a, da, _] = (ito.a)(x);
        let [b, db, _] = (ito.b)(x);
        let s_dw = cells[[c, 1, 0]];
        let w_ds = cells[[c, 0, 1]];
        let mut next = x + a * dw + b * h + half * a * da * (dw * dw - h);
        if full {
            next = next + half * b * db * h * h + b * da * s_dw + a * db * w_ds;
        }
        if !next.is_finite() || next.abs() > blowup::<T>() {
            diverged_at = finish(&mut values, c + 1);
            break;
        }
        x = next;
        values[[c + 1, 0]] = x;
    }
    Ok(SchemeOutput {
        scheme,
        level: GridLevel::Coarse,
        grid: *bundle.grid(),
        stride,
        values,
        diverged_at,
    })
}

/// Exact solution if known, else Milstein on the full fine grid.
pub fn reference<T: Scalar>(problem: &SdeProblem<T>, bundle: &PathBundle<T>) -> Result<SchemeOutput<T>> {
    check_problem(problem, bundle)?;
    let grid = *bundle.grid();
    if let Some(cf) = &problem.closed_form {
        let mut values = cf(bundle);
        if values.dim() != (grid.fine_count() + 1, problem.dim_q()) {
            return Err(Error::DimensionMismatch {
                context: "closed form output",
                expected: (grid.fine_count() + 1) * problem.dim_q(),
                actual: values.len(),
            });
        }
        let bad = (0..values.nrows()).find(|&r| diverged(&values.row(r).to_owned()));
        let diverged_at = match bad {
            Some(r) => finish(&mut values, r),
            None => None,
        };
        return Ok(SchemeOutput {
            scheme: SchemeId::Reference,
            level: GridLevel::Fine,
            grid,
            stride: 1,
            values,
            diverged_at,
        });
    }
    let mut out = milstein(problem, bundle, grid.fine_count(), BracketRule::Model)?;
    out.scheme = SchemeId::Reference;
    out.level = GridLevel::Fine;
    Ok(out)
}

/// Dispatch by id; Milstein uses the default bracket rule.
pub fn run_scheme<T: Scalar>(
    id: SchemeId,
    problem: &SdeProblem<T>,
    bundle: &PathBundle<T>,
    coarse_n: usize,
) -> Result<SchemeOutput<T>> {
    match id {
        SchemeId::Euler => euler(problem, bundle, coarse_n),
        SchemeId::Milstein => milstein(problem, bundle, coarse_n, BracketRule::default()),
        SchemeId::MilsteinIto54 => milstein_ito54(problem, bundle, coarse_n),
        SchemeId::MilsteinReduced => milstein_ito_reduced(problem, bundle, coarse_n),
        SchemeId::Reference => reference(problem, bundle),
    }
}

/// Error normalization `α_n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `√n`
    Sqrt,
    /// `n`
    Linear,
    /// `n²`
    Square,
    /// `1`
    None,
}

impl Normalization {
    pub fn factor<T: Scalar>(self, n: usize) -> T {
        let n = n as f64;
        T::lit(match self {
            Normalization::Sqrt => n.sqrt(),
            Normalization::Linear => n,
            Normalization::Square => n * n,
            Normalization::None => 1.0,
        })
    }
}

/// `α_n (Xⁿ − X)` on the points of the scheme output.
pub fn error_process<T: Scalar>(
    scheme_out: &SchemeOutput<T>,
    reference_out: &SchemeOutput<T>,
    normalization: Normalization,
    coarse_n: usize,
) -> Result<StatSeries<T>> {
    if scheme_out.grid != reference_out.grid || scheme_out.values.ncols() != reference_out.values.ncols() {
        return Err(Error::DimensionMismatch {
            context: "error process grids",
            expected: reference_out.grid.fine_count(),
            actual: scheme_out.grid.fine_count(),
        });
    }
    if scheme_out.stride % reference_out.stride != 0 {
        return Err(Error::NotDivisible {
            coarse_n: scheme_out.grid.fine_count() / scheme_out.stride,
            fine_count: scheme_out.grid.fine_count() / reference_out.stride,
        });
    }
    let ratio = scheme_out.stride / reference_out.stride;
    let alpha: T = normalization.factor(coarse_n);
    let rows = scheme_out.values.nrows();
    let q = scheme_out.values.ncols();
    let u = Array2::from_shape_fn((rows, q), |(r, i)| {
        alpha * (scheme_out.values[[r, i]] - reference_out.values[[r * ratio, i]])
    });
    StatSeries::new(SeriesKind::U, scheme_out.level, scheme_out.grid, scheme_out.stride, u.into_dyn())
}
