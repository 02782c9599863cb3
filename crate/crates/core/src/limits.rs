//! Simulation of the limiting error laws.
//!
//! For a driver with a martingale part the normalized error `nUⁿ` converges
//! to the solution of a linear SDE driven by `Y` and by the limits `M`, `N`
//! of `nMⁿ`, `nNⁿ`. Those limits are Brownian integrals against auxiliary
//! motions independent of `W`. For a finite-variation driver the relevant
//! scaling is `n²` and the limits are deterministic.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{FieldEval, ItoCoefficients, SdeProblem};
use crate::paths::{sample_brownian_family, DriverTable, Family, Grid, PathBundle, SeedKey};
use crate::schemes::{reference, Normalization};
use crate::Scalar;

/// Auxiliary motions `B^{pij}` (`m³` of them) and `W̄^p` (`m`), independent of `W`.
#[derive(Clone, Debug)]
pub struct AuxiliaryNoise<T: Scalar> {
    pub m: usize,
    /// Increments of `B^{pij}` at column `(p·m + i)·m + j`, shape `(F, m³)`.
    pub db: Array2<T>,
    /// Increments of `W̄^p`, shape `(F, m)`.
    pub dwbar: Array2<T>,
}

impl<T: Scalar> AuxiliaryNoise<T> {
    pub fn sample(grid: &Grid, m: usize, key: SeedKey) -> Self {
        let b = sample_brownian_family::<T>(grid, m * m * m, key, Family::AuxB, 0);
        let wbar = sample_brownian_family::<T>(grid, m, key, Family::AuxWbar, 0);
        Self {
            m,
            db: b.dw,
            dwbar: wbar.dw,
        }
    }

    #[inline]
    pub fn db_at(&self, k: usize, p: usize, i: usize, j: usize) -> T {
        self.db[[k, (p * self.m + i) * self.m + j]]
    }

    /// `dV^{pij} = (√2/2)(dB^{pij} + dB^{pji}) + ((√3/2)dW^p + ½dW̄^p)·1(i=j)`.
    #[inline]
    pub fn dv_at(&self, k: usize, p: usize, i: usize, j: usize, dw: ArrayView2<'_, T>) -> T {
        let r2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        let mut v = r2 * (self.db_at(k, p, i, j) + self.db_at(k, p, j, i));
        if i == j {
            v = v + T::lit(3f64.sqrt() / 2.0) * dw[[k, p]] + T::lit(0.5) * self.dwbar[[k, p]];
        }
        v
    }
}

/// Limits `M^j = (1/√6) Σ_p ∫ σ σ^{jp} dB^p σᵀ` and `N^j = (1/√3) Σ_p ∫ σ σ^{jp} dV^p σᵀ`,
/// shapes `(F + 1, j, d, d)`.
pub fn simulate_mn<T: Scalar>(
    table: &DriverTable<T>,
    dw: ArrayView2<'_, T>,
    aux: &AuxiliaryNoise<T>,
) -> Result<(Array4<T>, Array4<T>)> {
    let f = table.grid().fine_count();
    let (d, m) = (table.dim_d(), table.dim_m());
    if dw.dim() != (f, m) || aux.m != m || aux.db.nrows() != f {
        return Err(Error::DimensionMismatch {
            context: "limit noise vs driver",
            expected: f * m,
            actual: dw.len(),
        });
    }
    let cm = T::lit(1.0 / 6f64.sqrt());
    let cn = T::lit(1.0 / 3f64.sqrt());
    let sigma = table.sigma();
    let mut mm = Array4::zeros((f + 1, d, d, d));
    let mut nn = Array4::zeros((f + 1, d, d, d));
    // Inner sandwich per p: S^p_{ab} = Σ_{i,l} σ_{ai} dX^{pil} σ_{bl}.
    let mut sb = vec![T::zero(); m * d * d];
    let mut sv = vec![T::zero(); m * d * d];
    for k in 0..f {
        sb.fill(T::zero());
        sv.fill(T::zero());
        for p in 0..m {
            for i in 0..m {
                for l in 0..m {
                    let b = aux.db_at(k, p, i, l);
                    let v = aux.dv_at(k, p, i, l, dw);
                    for a in 0..d {
                        let sai = sigma[[k, a, i]];
                        if sai == T::zero() {
                            continue;
                        }
                        for bb in 0..d {
                            let w = sai * sigma[[k, bb, l]];
                            sb[(p * d + a) * d + bb] = sb[(p * d + a) * d + bb] + w * b;
                            sv[(p * d + a) * d + bb] = sv[(p * d + a) * d + bb] + w * v;
                        }
                    }
                }
            }
        }
        for j in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let (mut im, mut inn) = (T::zero(), T::zero());
                    for p in 0..m {
                        let s = sigma[[k, j, p]];
                        im = im + s * sb[(p * d + a) * d + b];
                        inn = inn + s * sv[(p * d + a) * d + b];
                    }
                    mm[[k + 1, j, a, b]] = mm[[k, j, a, b]] + cm * im;
                    nn[[k + 1, j, a, b]] = nn[[k, j, a, b]] + cn * inn;
                }
            }
        }
    }
    Ok((mm, nn))
}

/// `N̄^p = N^p + ½∫ c a^p ds`, left-point in time.
pub fn drift_correct<T: Scalar>(n_series: &Array4<T>, table: &DriverTable<T>) -> Result<Array4<T>> {
    let f = table.grid().fine_count();
    let d = table.dim_d();
    if n_series.dim() != (f + 1, d, d, d) {
        return Err(Error::DimensionMismatch {
            context: "N series vs driver",
            expected: (f + 1) * d * d * d,
            actual: n_series.len(),
        });
    }
    let half = T::lit(0.5);
    let mut out = n_series.clone();
    let mut acc = vec![T::zero(); d * d * d];
    for k in 0..f {
        for p in 0..d {
            let ap = table.drift()[[k, p]];
            for a in 0..d {
                for b in 0..d {
                    let idx = (p * d + a) * d + b;
                    acc[idx] = acc[idx] + half * table.dc()[[k, a, b]] * ap;
                    out[[k + 1, p, a, b]] = out[[k + 1, p, a, b]] + acc[idx];
                }
            }
        }
    }
    Ok(out)
}

/// Finite-variation limits `M^j = ⅙∫y_j yyᵀ ds`, `N^j = ⅓∫y_j yyᵀ ds`
/// from the driver's left-point density.
pub fn fv_limit_mn<T: Scalar>(table: &DriverTable<T>) -> (Array4<T>, Array4<T>) {
    let f = table.grid().fine_count();
    let d = table.dim_d();
    let dt = table.grid().dt::<T>();
    let y = table.drift();
    let mut mm = Array4::zeros((f + 1, d, d, d));
    let mut nn = Array4::zeros((f + 1, d, d, d));
    let (sixth, third) = (T::lit(1.0 / 6.0), T::lit(1.0 / 3.0));
    for k in 0..f {
        for j in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let cube = y[[k, j]] * (y[[k, a]] * y[[k, b]]) * dt;
                    mm[[k + 1, j, a, b]] = mm[[k, j, a, b]] + sixth * cube;
                    nn[[k + 1, j, a, b]] = nn[[k, j, a, b]] + third * cube;
                }
            }
        }
    }
    (mm, nn)
}

/// Solution path of the linear error equation.
#[derive(Clone, Debug)]
pub struct UPath<T: Scalar> {
    /// Shape `(F + 1, q)`.
    pub u: Array2<T>,
    pub diverged_at: Option<usize>,
}

/// Left-point Euler integration of
/// `dU^i = Uᵀ Df^i dY − Σ_{j,k} f_k^{ij} tr(h^k dM^j) − ½ Σ_j tr(fᵀ Hf^{ij} f dN^j)`
/// with coefficients along `x_ref`.
pub fn simulate_u<T: Scalar>(
    problem: &SdeProblem<T>,
    x_ref: ArrayView2<'_, T>,
    dy: ArrayView2<'_, T>,
    m: &Array4<T>,
    n: &Array4<T>,
) -> Result<UPath<T>> {
    let (q, d) = (problem.dim_q(), problem.dim_d());
    let f = dy.nrows();
    if x_ref.dim() != (f + 1, q) || dy.ncols() != d || m.dim() != (f + 1, d, d, d) || n.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            context: "limit equation inputs",
            expected: (f + 1) * q,
            actual: x_ref.len(),
        });
    }
    let field = problem.field.as_ref();
    let mut ev = FieldEval::for_field(field);
    let mut h = ndarray::Array3::zeros((q, d, d));
    let mut fhf = vec![T::zero(); q * d * d * d];
    let mut u: Array2<T> = Array2::zeros((f + 1, q));
    let half = T::lit(0.5);
    let cap = T::lit(1e150).min(T::max_value().sqrt());
    let mut diverged_at = None;
    for k in 0..f {
        let x = x_ref.row(k);
        if x.iter().any(|v| !v.is_finite()) {
            diverged_at = Some(k);
            break;
        }
        ev.second_order(field, x);
        ev.h_into(&mut h);
        // fᵀ Hf^{ij} f, indexed [i, j, a, b].
        for i in 0..q {
            for j in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        let mut s = T::zero();
                        for c in 0..q {
                            for e in 0..q {
                                s = s + ev.f[[c, a]] * ev.hf[[i, j, c, e]] * ev.f[[e, b]];
                            }
                        }
                        fhf[((i * d + j) * d + a) * d + b] = s;
                    }
                }
            }
        }
        for i in 0..q {
            let mut du = T::zero();
            for a in 0..d {
                let mut coef = T::zero();
                for kk in 0..q {
                    coef = coef + u[[k, kk]] * ev.df[[i, kk, a]];
                }
                du = du + coef * dy[[k, a]];
            }
            for j in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        let dmj = m[[k + 1, j, b, a]] - m[[k, j, b, a]];
                        let dnj = n[[k + 1, j, b, a]] - n[[k, j, b, a]];
                        let mut hm = T::zero();
                        for kk in 0..q {
                            hm = hm + ev.df[[i, kk, j]] * h[[kk, a, b]];
                        }
                        du = du - hm * dmj - half * fhf[((i * d + j) * d + a) * d + b] * dnj;
                    }
                }
            }
            u[[k + 1, i]] = u[[k, i]] + du;
        }
        if u.row(k + 1).iter().any(|v| !v.is_finite() || v.abs() > cap) {
            diverged_at = Some(k + 1);
            break;
        }
    }
    if let Some(r) = diverged_at {
        for row in r..=f {
            u.row_mut(row).fill(T::nan());
        }
    }
    Ok(UPath { u, diverged_at })
}

/// The scalar Itô limit equation written out:
///
/// `dU = U(a′dW + b′ds) − ¼a²b″ds − aa′² dB¹/√6 − a²a″(dB¹/√6 + dB²/(4√3) + dW/4)`.
pub fn ito_limit_sde<T: Scalar>(
    ito: &ItoCoefficients<T>,
    x_ref: ArrayView1<'_, T>,
    dw: ArrayView1<'_, T>,
    db1: ArrayView1<'_, T>,
    db2: ArrayView1<'_, T>,
) -> Result<Array1<T>> {
    let f = dw.len();
    if x_ref.len() != f + 1 || db1.len() != f || db2.len() != f {
        return Err(Error::DimensionMismatch {
            context: "Ito limit inputs",
            expected: f + 1,
            actual: x_ref.len(),
        });
    }
    let dt = T::ratio(1, f);
    let r6 = T::lit(1.0 / 6f64.sqrt());
    let r48 = T::lit(1.0 / 48f64.sqrt());
    let quarter = T::lit(0.25);
    let mut u = Array1::zeros(f + 1);
    for k in 0..f {
        let x = x_ref[k];
        let [a, da, dda] = (ito.a)(x);
        let [_, db, ddb] = (ito.b)(x);
        let uk = u[k];
        let inc = uk * (da * dw[k] + db * dt) - quarter * a * a * ddb * dt - a * da * da * r6 * db1[k]
            - a * a * dda * (r6 * db1[k] + r48 * db2[k] + quarter * dw[k]);
        u[k + 1] = uk + inc;
    }
    Ok(u)
}

/// One draw of the limit objects along a reference solution.
#[derive(Clone, Debug)]
pub struct LimitRealization<T: Scalar> {
    /// `n` for drivers with a martingale part, `n²` for finite-variation drivers.
    pub scaling: Normalization,
    /// Shape `(F + 1, j, d, d)`.
    pub m_series: Array4<T>,
    /// `N`, drift-corrected when the driver has a drift.
    pub n_series: Array4<T>,
    pub u: UPath<T>,
    /// Reference solution on the fine grid, shape `(F + 1, q)`.
    pub x_ref: Array2<T>,
    pub bundle: PathBundle<T>,
}

impl<T: Scalar> LimitRealization<T> {
    pub fn u_end(&self) -> ArrayView1<'_, T> {
        self.u.u.row(self.u.u.nrows() - 1)
    }
}

/// Draws `W` and the auxiliary noise for `key` and solves the limit equation.
pub fn simulate_limit<T: Scalar>(
    problem: &SdeProblem<T>,
    table: &Arc<DriverTable<T>>,
    key: SeedKey,
) -> Result<LimitRealization<T>> {
    let bundle = PathBundle::generate(table, key)?;
    let x_ref = reference(problem, &bundle)?;
    if let Some(r) = x_ref.diverged_at {
        return Err(Error::NonFinite {
            what: "reference solution".into(),
            index: r,
        });
    }
    let dy = bundle.dh().to_owned() + &bundle.da();
    let (scaling, m, n) = if table.is_finite_variation() {
        let (m, n) = fv_limit_mn(table);
        (Normalization::Square, m, n)
    } else {
        let aux = AuxiliaryNoise::sample(table.grid(), table.dim_m(), key);
        let (m, n) = simulate_mn(table, bundle.dw(), &aux)?;
        let n = if table.drift().iter().any(|v| *v != T::zero()) {
            drift_correct(&n, table)?
        } else {
            n
        };
        (Normalization::Linear, m, n)
    };
    let u = simulate_u(problem, x_ref.values.view(), dy.view(), &m, &n)?;
    Ok(LimitRealization {
        scaling,
        m_series: m,
        n_series: n,
        u,
        x_ref: x_ref.values,
        bundle,
    })
}

/// Finite-variation limit `(X, U)` on a uniform grid.
#[derive(Clone, Debug)]
pub struct FvLimit {
    pub steps: usize,
    /// Shape `(steps + 1, q)`.
    pub x: Array2<f64>,
    /// Shape `(steps + 1, q)`.
    pub u: Array2<f64>,
}

impl FvLimit {
    pub fn u_end(&self) -> ArrayView1<'_, f64> {
        self.u.row(self.steps)
    }
    pub fn x_end(&self) -> ArrayView1<'_, f64> {
        self.x.row(self.steps)
    }
}

/// Tolerance of the step-halving loop in [`fv_limit_ode`].
pub const FV_ODE_TOL: f64 = 1e-10;

/// Integrates `X′ = f(X) y`, `U′^i = Uᵀ Df^i y − ⅙ Σ_j y_j yᵀ G^{ij} f y` with RK4,
/// halving the step until the end values move by less than [`FV_ODE_TOL`].
pub fn fv_limit_ode(problem: &SdeProblem<f64>, density: &dyn Fn(f64) -> Array1<f64>) -> Result<FvLimit> {
    let (q, d) = (problem.dim_q(), problem.dim_d());
    let probe = density(0.0);
    if probe.len() != d {
        return Err(Error::DimensionMismatch {
            context: "density length vs dim_d",
            expected: d,
            actual: probe.len(),
        });
    }
    let field = problem.field.as_ref();
    let rhs = |s: f64, state: &Array1<f64>, ev: &mut FieldEval<f64>, g: &mut Array4<f64>| -> Array1<f64> {
        let y = density(s);
        let x = state.slice(ndarray::s![..q]);
        let u = state.slice(ndarray::s![q..]);
        ev.second_order(field, x);
        ev.g_into(g);
        let mut out = Array1::zeros(2 * q);
        for i in 0..q {
            let mut dx = 0.0;
            for a in 0..d {
                dx += ev.f[[i, a]] * y[a];
            }
            out[i] = dx;
            let mut du = 0.0;
            for kk in 0..q {
                for a in 0..d {
                    du += u[kk] * ev.df[[i, kk, a]] * y[a];
                }
            }
            let mut corr = 0.0;
            for j in 0..d {
                let mut quad = 0.0;
                for a in 0..d {
                    for c in 0..q {
                        let mut fy = 0.0;
                        for b in 0..d {
                            fy += ev.f[[c, b]] * y[b];
                        }
                        quad += y[a] * g[[i, j, a, c]] * fy;
                    }
                }
                corr += y[j] * quad;
            }
            out[q + i] = du - corr / 6.0;
        }
        out
    };
    let solve = |steps: usize| -> (Array2<f64>, Array2<f64>) {
        let mut ev = FieldEval::for_field(field);
        let mut g = Array4::zeros((q, d, d, q));
        let h = 1.0 / steps as f64;
        let mut state = Array1::zeros(2 * q);
        state.slice_mut(ndarray::s![..q]).assign(&problem.x0);
        let mut xs = Array2::zeros((steps + 1, q));
        let mut us = Array2::zeros((steps + 1, q));
        xs.row_mut(0).assign(&problem.x0);
        for k in 0..steps {
            let s = k as f64 * h;
            let k1 = rhs(s, &state, &mut ev, &mut g);
            let k2 = rhs(s + 0.5 * h, &(&state + &(&k1 * (0.5 * h))), &mut ev, &mut g);
            let k3 = rhs(s + 0.5 * h, &(&state + &(&k2 * (0.5 * h))), &mut ev, &mut g);
            let k4 = rhs(s + h, &(&state + &(&k3 * h)), &mut ev, &mut g);
            state = &state + &((&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (h / 6.0));
            xs.row_mut(k + 1).assign(&state.slice(ndarray::s![..q]));
            us.row_mut(k + 1).assign(&state.slice(ndarray::s![q..]));
        }
        (xs, us)
    };
    let mut steps = 64;
    let mut prev = solve(steps);
    while steps < (1 << 20) {
        steps *= 2;
        let next = solve(steps);
        let dx = (&next.0.row(steps) - &prev.0.row(steps / 2)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let du = (&next.1.row(steps) - &prev.1.row(steps / 2)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(dx.is_finite() && du.is_finite()) {
            return Err(Error::NoConvergence("limit ODE produced non-finite values".into()));
        }
        if dx < FV_ODE_TOL && du < FV_ODE_TOL {
            return Ok(FvLimit {
                steps,
                x: next.0,
                u: next.1,
            });
        }
        prev = next;
    }
    Err(Error::NoConvergence(format!("limit ODE not settled at {steps} steps")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, ClosureField, ScalarField, Smooth};
    use crate::paths::DriverSpec;
    use std::f64::consts::E;

    fn table(spec: &DriverSpec<f64>, f: usize) -> Arc<DriverTable<f64>> {
        Arc::new(spec.table(&Grid::new(f, 1).unwrap()).unwrap())
    }

    fn scaled_driver(eps: f64) -> DriverSpec<f64> {
        DriverSpec::new("eps", 1, 1, Arc::new(move |_| Array2::from_elem((1, 1), eps)), None).unwrap()
    }

    #[test]
    fn vanishing_sigma_gives_zero_limits() {
        let t = table(&DriverSpec::time(), 64);
        let aux = AuxiliaryNoise::<f64>::sample(t.grid(), 1, SeedKey::limit(1, 0));
        let dw = Array2::from_elem((64, 1), 0.1);
        let (m, n) = simulate_mn(&t, dw.view(), &aux).unwrap();
        assert!(m.iter().chain(n.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn unit_sigma_limits_are_scaled_auxiliary_motions() {
        let t = table(&DriverSpec::brownian(1), 32);
        let key = SeedKey::limit(3, 1);
        let aux = AuxiliaryNoise::<f64>::sample(t.grid(), 1, key);
        let b = PathBundle::generate(&t, key).unwrap();
        let (m, n) = simulate_mn(&t, b.dw(), &aux).unwrap();
        let bsum: f64 = aux.db.column(0).sum();
        let wbar: f64 = aux.dwbar.column(0).sum();
        let w = b.w()[[32, 0]];
        assert!((m[[32, 0, 0, 0]] - bsum / 6f64.sqrt()).abs() < 1e-12);
        let expect = 2.0 / 6f64.sqrt() * bsum + wbar / (2.0 * 3f64.sqrt()) + 0.5 * w;
        assert!((n[[32, 0, 0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn drift_correction_examples() {
        let t = table(&DriverSpec::brownian(1), 16);
        let n = Array4::from_elem((17, 1, 1, 1), 0.3);
        assert_eq!(drift_correct(&n, &t).unwrap(), n);

        let t = table(&DriverSpec::ito_embedding(), 16);
        let zero = Array4::zeros((17, 2, 2, 2));
        let nb = drift_correct(&zero, &t).unwrap();
        for k in 0..=16 {
            assert_eq!(nb[[k, 1, 0, 0]], k as f64 / 32.0);
            assert_eq!(nb[[k, 0, 0, 0]], 0.0);
        }

        let ramp = DriverSpec::new(
            "ramp",
            1,
            1,
            Arc::new(|s: f64| Array2::from_elem((1, 1), s.sqrt())),
            Some(Arc::new(|_| Array1::ones(1))),
        )
        .unwrap();
        let f = 4096;
        let t = table(&ramp, f);
        let nb = drift_correct(&Array4::zeros((f + 1, 1, 1, 1)), &t).unwrap();
        // Left-point sum of s/2 is (1 − 1/F)/4.
        assert!((nb[[f, 0, 0, 0]] - 0.25).abs() < 1.0 / f as f64);
    }

    #[test]
    fn constant_field_has_no_error() {
        let p = SdeProblem::new(
            "const",
            Arc::new(ClosureField::constant(Array2::from_elem((1, 1), 2.0))),
            DriverSpec::brownian(1),
            Array1::ones(1),
        )
        .unwrap();
        let t = table(&p.driver, 64);
        let lim = simulate_limit(&p, &t, SeedKey::limit(1, 2)).unwrap();
        assert!(lim.u.u.iter().all(|v| *v == 0.0));
        let ode = fv_limit_ode(&p, &|_| Array1::ones(1)).unwrap();
        assert!(ode.u_end()[0].abs() < 1e-15);
    }

    #[test]
    fn ode_limit_of_exponential() {
        let p = builtin_model::<f64>("det-exp").unwrap();
        let ode = fv_limit_ode(&p, &|_| Array1::ones(1)).unwrap();
        assert!((ode.u_end()[0] + E / 6.0).abs() < 1e-9);
        assert!((ode.x_end()[0] - E).abs() < 1e-9);
        for (k, u) in ode.u.column(0).iter().enumerate() {
            let t = k as f64 / ode.steps as f64;
            assert!((u + t / 6.0 * t.exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn discretized_limit_equation_matches_the_ode() {
        let p = builtin_model::<f64>("det-exp").unwrap();
        let f = 1 << 14;
        let t = table(&p.driver, f);
        let lim = simulate_limit(&p, &t, SeedKey::limit(0, 0)).unwrap();
        assert_eq!(lim.scaling, Normalization::Square);
        assert!((lim.u_end()[0] + E / 6.0).abs() < 2.0 / f as f64 * E);
    }

    #[test]
    fn fv_limits_through_the_general_equation_reproduce_the_ode() {
        // y(s) = 1 + s, f(x) = x² / (1 + x²) exercises every G term.
        let g: Smooth<f64> = Arc::new(|x: f64| {
            let d = 1.0 + x * x;
            [x * x / d, 2.0 * x / (d * d), (2.0 - 6.0 * x * x) / (d * d * d)]
        });
        let driver = DriverSpec::new(
            "ramp",
            1,
            1,
            Arc::new(|_| Array2::zeros((1, 1))),
            Some(Arc::new(|s: f64| Array1::from_elem(1, 1.0 + s))),
        )
        .unwrap();
        let p = SdeProblem::new("rational", Arc::new(ScalarField::new(g, 1.0)), driver, Array1::from_elem(1, 0.5)).unwrap();
        let ode = fv_limit_ode(&p, &|s| Array1::from_elem(1, 1.0 + s)).unwrap();
        let f = 1 << 14;
        let t = table(&p.driver, f);
        let lim = simulate_limit(&p, &t, SeedKey::limit(0, 0)).unwrap();
        assert!((lim.u_end()[0] - ode.u_end()[0]).abs() < 1e-3, "{} vs {}", lim.u_end()[0], ode.u_end()[0]);
    }

    #[test]
    fn limit_equation_is_linear_in_m_and_n() {
        let p = builtin_model::<f64>("ito-sin").unwrap();
        let t = table(&p.driver, 256);
        let lim = simulate_limit(&p, &t, SeedKey::limit(5, 5)).unwrap();
        let dy = lim.bundle.dh().to_owned() + &lim.bundle.da();
        let m2 = &lim.m_series * 2.0;
        let n2 = &lim.n_series * 2.0;
        let doubled = simulate_u(&p, lim.x_ref.view(), dy.view(), &m2, &n2).unwrap();
        assert_eq!(doubled.u, &lim.u.u * 2.0);
    }

    #[test]
    fn explicit_ito_limit_matches_general_construction_pathwise() {
        for name in ["gbm-ito", "ito-sin", "gbm-drift", "ou"] {
            let p = builtin_model::<f64>(name).unwrap();
            let t = table(&p.driver, 512);
            let key = SeedKey::limit(9, 4);
            let lim = simulate_limit(&p, &t, key).unwrap();
            let aux = AuxiliaryNoise::<f64>::sample(t.grid(), 1, key);
            let u = ito_limit_sde(
                p.ito.as_ref().unwrap(),
                lim.x_ref.column(0),
                lim.bundle.dw().column(0),
                aux.db.column(0),
                aux.dwbar.column(0),
            )
            .unwrap();
            let diff = (&u - &lim.u.u.column(0)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-10, "{name}: {diff}");
        }
    }

    #[test]
    fn ito_limit_reduces_for_gbm() {
        // a = x, b = 0: dU = U dW − X dB¹/√6.
        let p = builtin_model::<f64>("gbm-ito").unwrap();
        let f = 64;
        let x = Array1::from_shape_fn(f + 1, |k| 1.0 + 0.01 * k as f64);
        let dw = Array1::from_elem(f, 0.02);
        let db1 = Array1::from_elem(f, -0.03);
        let db2 = Array1::from_elem(f, 0.5);
        let u = ito_limit_sde(p.ito.as_ref().unwrap(), x.view(), dw.view(), db1.view(), db2.view()).unwrap();
        let mut v = 0.0;
        for k in 0..f {
            v = v + v * 0.02 - x[k] * (-0.03) / 6f64.sqrt();
        }
        assert!((u[f] - v).abs() < 1e-14);
        let constant: Smooth<f64> = Arc::new(|_| [1.0, 0.0, 0.0]);
        let coeffs = ItoCoefficients { a: constant.clone(), b: constant };
        let u = ito_limit_sde(&coeffs, x.view(), dw.view(), db1.view(), db2.view()).unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn small_sigma_sends_the_limit_to_zero() {
        let field = ScalarField::<f64>::new(Arc::new(|x: f64| [x, 1.0, 0.0]), 1.0);
        let mut prev = f64::INFINITY;
        for eps in [1.0, 1e-1, 1e-3] {
            let p = SdeProblem::new("eps", Arc::new(field.clone()), scaled_driver(eps), Array1::ones(1)).unwrap();
            let t = table(&p.driver, 256);
            let lim = simulate_limit(&p, &t, SeedKey::limit(2, 2)).unwrap();
            let u = lim.u_end()[0].abs();
            assert!(u < prev || u < 1e-12);
            prev = u;
            if eps == 1e-3 {
                assert!(u < 1e-2);
            }
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let p = builtin_model::<f64>("gbm").unwrap();
        let x = Array2::zeros((10, 1));
        let dy = Array2::zeros((8, 1));
        let m = Array4::zeros((9, 1, 1, 1));
        assert!(simulate_u(&p, x.view(), dy.view(), &m, &m).is_err());
        let bad = |_: f64| Array1::ones(2);
        assert!(fv_limit_ode(&p, &bad).is_err());
    }
}
