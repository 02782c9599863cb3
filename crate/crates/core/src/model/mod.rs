//! SDE problems `X = x₀ + ∫f(X) dY` and the registry of worked examples.

mod field;

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};

pub use field::{
    g_tensor, h_tensor, ClosureField, CoefficientField, FieldEval, ItoField, ScalarField, Smooth,
};

use crate::error::{Error, Result};
use crate::paths::{DriverSpec, PathBundle};
use crate::Scalar;

/// Exact solution on the fine grid, shape `(F + 1, q)`.
pub type ClosedForm<T> = Arc<dyn Fn(&PathBundle<T>) -> Array2<T> + Send + Sync>;

/// Coefficients of a scalar Itô equation `dX = a(X) dW + b(X) dt`.
#[derive(Clone)]
pub struct ItoCoefficients<T: Scalar> {
    pub a: Smooth<T>,
    pub b: Smooth<T>,
}

#[derive(Clone)]
pub struct SdeProblem<T: Scalar> {
    pub name: String,
    pub field: Arc<dyn CoefficientField<T>>,
    pub driver: DriverSpec<T>,
    pub x0: Array1<T>,
    pub closed_form: Option<ClosedForm<T>>,
    pub ito: Option<ItoCoefficients<T>>,
}

impl<T: Scalar> fmt::Debug for SdeProblem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("name", &self.name)
            .field("q", &self.field.dim_q())
            .field("d", &self.field.dim_d())
            .field("driver", &self.driver)
            .field("x0", &self.x0)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

impl<T: Scalar> SdeProblem<T> {
    pub fn new(
        name: impl Into<String>,
        field: Arc<dyn CoefficientField<T>>,
        driver: DriverSpec<T>,
        x0: Array1<T>,
    ) -> Result<Self> {
        if field.dim_d() != driver.dim_d() {
            return Err(Error::DimensionMismatch {
                context: "field dim_d vs driver dim_d",
                expected: driver.dim_d(),
                actual: field.dim_d(),
            });
        }
        if x0.len() != field.dim_q() {
            return Err(Error::DimensionMismatch {
                context: "x0 length vs dim_q",
                expected: field.dim_q(),
                actual: x0.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            field,
            driver,
            x0,
            closed_form: None,
            ito: None,
        })
    }

    /// Scalar Itô equation on the canonical embedding `Y = (W, t)`, `f = (a, b)`.
    pub fn ito(name: impl Into<String>, a: Smooth<T>, b: Smooth<T>, x0: T, growth: T) -> Self {
        let field = ItoField::new(a.clone(), b.clone(), growth);
        Self {
            name: name.into(),
            field: Arc::new(field),
            driver: DriverSpec::ito_embedding(),
            x0: Array1::from_elem(1, x0),
            closed_form: None,
            ito: Some(ItoCoefficients { a, b }),
        }
    }

    pub fn with_closed_form(mut self, cf: ClosedForm<T>) -> Self {
        self.closed_form = Some(cf);
        self
    }

    pub fn with_x0(mut self, x0: Array1<T>) -> Result<Self> {
        if x0.len() != self.field.dim_q() {
            return Err(Error::DimensionMismatch {
                context: "x0 length vs dim_q",
                expected: self.field.dim_q(),
                actual: x0.len(),
            });
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn dim_q(&self) -> usize {
        self.field.dim_q()
    }

    pub fn dim_d(&self) -> usize {
        self.field.dim_d()
    }

    pub fn is_ito(&self) -> bool {
        self.ito.is_some()
    }
}

fn lin<T: Scalar>(c: f64) -> Smooth<T> {
    let c = T::lit(c);
    Arc::new(move |x| [c * x, c, T::zero()])
}

fn constant<T: Scalar>(c: f64) -> Smooth<T> {
    let c = T::lit(c);
    Arc::new(move |_| [c, T::zero(), T::zero()])
}

/// Drift coefficients of the `gbm-drift` model.
pub const GBM_DRIFT_ALPHA: f64 = 0.5;
pub const GBM_DRIFT_BETA: f64 = 0.2;
/// Parameters of the `ou` model `dX = σ dW − κX dt`.
pub const OU_SIGMA: f64 = 0.3;
pub const OU_KAPPA: f64 = 1.0;

fn gbm<T: Scalar>() -> SdeProblem<T> {
    let field = ScalarField::new(lin(1.0), T::one());
    let mut p = SdeProblem::new("gbm", Arc::new(field), DriverSpec::brownian(1), Array1::ones(1))
        .expect("builtin shapes agree");
    let x0 = T::one();
    p.closed_form = Some(Arc::new(move |b: &PathBundle<T>| {
        let g = b.grid();
        let half = T::lit(0.5);
        Array2::from_shape_fn((g.fine_count() + 1, 1), |(k, _)| {
            x0 * (b.w()[[k, 0]] - half * g.time::<T>(k)).exp()
        })
    }));
    p
}

fn gbm_ito<T: Scalar>() -> SdeProblem<T> {
    let x0 = T::one();
    SdeProblem::ito("gbm-ito", lin(1.0), constant(0.0), x0, T::one()).with_closed_form(Arc::new(
        move |b: &PathBundle<T>| {
            let g = b.grid();
            let half = T::lit(0.5);
            Array2::from_shape_fn((g.fine_count() + 1, 1), |(k, _)| {
                x0 * (b.w()[[k, 0]] - half * g.time::<T>(k)).exp()
            })
        },
    ))
}

fn gbm_drift<T: Scalar>() -> SdeProblem<T> {
    let x0 = T::one();
    let (alpha, beta) = (T::lit(GBM_DRIFT_ALPHA), T::lit(GBM_DRIFT_BETA));
    SdeProblem::ito(
        "gbm-drift",
        lin(GBM_DRIFT_ALPHA),
        lin(GBM_DRIFT_BETA),
        x0,
        T::lit(GBM_DRIFT_ALPHA + GBM_DRIFT_BETA),
    )
    .with_closed_form(Arc::new(move |b: &PathBundle<T>| {
        let g = b.grid();
        let mu = beta - alpha * alpha * T::lit(0.5);
        Array2::from_shape_fn((g.fine_count() + 1, 1), |(k, _)| {
            x0 * (alpha * b.w()[[k, 0]] + mu * g.time::<T>(k)).exp()
        })
    }))
}

fn det_exp<T: Scalar>() -> SdeProblem<T> {
    let field = ScalarField::new(lin(1.0), T::one());
    let mut p = SdeProblem::new("det-exp", Arc::new(field), DriverSpec::time(), Array1::ones(1))
        .expect("builtin shapes agree");
    let x0 = T::one();
    p.closed_form = Some(Arc::new(move |b: &PathBundle<T>| {
        Array2::from_shape_fn((b.grid().fine_count() + 1, 1), |(k, _)| x0 * b.y()[[k, 0]].exp())
    }));
    p
}

fn ou<T: Scalar>() -> SdeProblem<T> {
    SdeProblem::ito(
        "ou",
        constant(OU_SIGMA),
        lin(-OU_KAPPA),
        T::one(),
        T::lit(OU_SIGMA + OU_KAPPA),
    )
}

/// `a(x) = 1 + ½ sin x`, `b(x) = ½ cos x`: every derivative term is active.
fn ito_sin<T: Scalar>() -> SdeProblem<T> {
    let half = T::lit(0.5);
    let a: Smooth<T> = Arc::new(move |x: T| [T::one() + half * x.sin(), half * x.cos(), -half * x.sin()]);
    let b: Smooth<T> = Arc::new(move |x: T| [half * x.cos(), -half * x.sin(), -half * x.cos()]);
    SdeProblem::ito("ito-sin", a, b, T::one(), T::lit(2.0))
}

type Ctor<T> = fn() -> SdeProblem<T>;

/// Named constructors for the builtin problems.
pub struct ModelRegistry<T: Scalar> {
    entries: Vec<(&'static str, &'static str, Ctor<T>)>,
}

impl<T: Scalar> ModelRegistry<T> {
    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn describe(&self) -> Vec<(&'static str, &'static str)> {
        self.entries.iter().map(|e| (e.0, e.1)).collect()
    }

    pub fn get(&self, name: &str) -> Result<SdeProblem<T>> {
        self.entries
            .iter()
            .find(|e| e.0 == name)
            .map(|e| (e.2)())
            .ok_or_else(|| Error::Unknown {
                kind: "model",
                name: name.into(),
            })
    }
}

pub fn builtin_models<T: Scalar>() -> ModelRegistry<T> {
    ModelRegistry {
        entries: vec![
            ("gbm", "dX = X dW, x0 = 1", gbm::<T> as Ctor<T>),
            ("gbm-ito", "dX = X dW on the (W, t) embedding", gbm_ito::<T>),
            ("gbm-drift", "dX = 0.5 X dW + 0.2 X dt on the (W, t) embedding", gbm_drift::<T>),
            ("det-exp", "dX = X dt, X_1 = e", det_exp::<T>),
            ("ou", "dX = 0.3 dW - X dt on the (W, t) embedding", ou::<T>),
            ("ito-sin", "dX = (1 + sin X / 2) dW + (cos X / 2) dt", ito_sin::<T>),
        ],
    }
}

/// `Var(U₁)` of the first-order error limit when known in closed form.
///
/// For `dX = X dW` the second moment solves `m′ = m + eᵗ/6`, so `m(1) = e/6`.
pub fn known_error_variance(name: &str) -> Option<f64> {
    match name {
        "gbm" | "gbm-ito" => Some(std::f64::consts::E / 6.0),
        _ => None,
    }
}

pub fn builtin_model<T: Scalar>(name: &str) -> Result<SdeProblem<T>> {
    builtin_models().get(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3, Array4};

    fn eval<T: Scalar>(field: &dyn CoefficientField<T>, x: &Array1<T>) -> FieldEval<T> {
        let mut ev = FieldEval::for_field(field);
        ev.second_order(field, x.view());
        ev
    }

    fn sample_points(q: usize) -> Vec<Array1<f64>> {
        [-1.3, -0.4, 0.2, 0.9, 1.7]
            .iter()
            .map(|&s| Array1::from_shape_fn(q, |i| s + 0.3 * i as f64))
            .collect()
    }

    /// Max error of `Df` against a centered difference with step `h`.
    fn jacobian_fd_error(field: &dyn CoefficientField<f64>, x: &Array1<f64>, h: f64) -> f64 {
        let (q, d) = (field.dim_q(), field.dim_d());
        let ev = eval(field, x);
        let mut worst: f64 = 0.0;
        for k in 0..q {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let (mut fp, mut fm) = (Array2::zeros((q, d)), Array2::zeros((q, d)));
            field.value(xp.view(), &mut fp);
            field.value(xm.view(), &mut fm);
            for i in 0..q {
                for j in 0..d {
                    let fd = (fp[[i, j]] - fm[[i, j]]) / (2.0 * h);
                    worst = worst.max((fd - ev.df[[i, k, j]]).abs());
                }
            }
        }
        worst
    }

    fn hessian_fd_error(field: &dyn CoefficientField<f64>, x: &Array1<f64>, h: f64) -> f64 {
        let (q, d) = (field.dim_q(), field.dim_d());
        let ev = eval(field, x);
        let mut worst: f64 = 0.0;
        for l in 0..q {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[l] += h;
            xm[l] -= h;
            let (mut dp, mut dm) = (Array3::zeros((q, q, d)), Array3::zeros((q, q, d)));
            field.jacobian(xp.view(), &mut dp);
            field.jacobian(xm.view(), &mut dm);
            for i in 0..q {
                for j in 0..d {
                    for k in 0..q {
                        let fd = (dp[[i, k, j]] - dm[[i, k, j]]) / (2.0 * h);
                        worst = worst.max((fd - ev.hf[[i, j, k, l]]).abs());
                    }
                }
            }
        }
        worst
    }

    #[test]
    fn builtin_derivatives_match_finite_differences() {
        let reg = builtin_models::<f64>();
        for name in reg.names() {
            let p = reg.get(name).unwrap();
            for x in sample_points(p.dim_q()) {
                let e3 = jacobian_fd_error(p.field.as_ref(), &x, 1e-3);
                let e4 = jacobian_fd_error(p.field.as_ref(), &x, 1e-4);
                assert!(e3 < 1e-6, "{name}: jacobian fd error {e3}");
                // Second-order convergence where the error is above round-off.
                if e3 > 1e-10 {
                    let ratio = e3 / e4;
                    assert!((50.0..200.0).contains(&ratio), "{name}: ratio {ratio}");
                }
                let h3 = hessian_fd_error(p.field.as_ref(), &x, 1e-3);
                assert!(h3 < 1e-6, "{name}: hessian fd error {h3}");
            }
        }
    }

    #[test]
    fn builtin_hessians_are_symmetric_and_growth_holds() {
        let reg = builtin_models::<f64>();
        for name in reg.names() {
            let p = reg.get(name).unwrap();
            let q = p.dim_q();
            for x in sample_points(q) {
                let ev = eval(p.field.as_ref(), &x);
                for i in 0..q {
                    for j in 0..p.dim_d() {
                        for k in 0..q {
                            for l in 0..q {
                                assert_eq!(ev.hf[[i, j, k, l]], ev.hf[[i, j, l, k]]);
                            }
                        }
                    }
                }
                let fnorm = ev.f.iter().map(|v| v * v).sum::<f64>().sqrt();
                let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(fnorm <= p.field.growth_bound() * (1.0 + xnorm) + 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn h_tensor_examples() {
        let gbm = builtin_model::<f64>("gbm").unwrap();
        assert_eq!(h_tensor(gbm.field.as_ref(), array![1.7].view()).unwrap()[[0, 0, 0]], 1.7);

        let sin = ScalarField::<f64>::new(Arc::new(|x: f64| [x.sin(), x.cos(), -x.sin()]), 1.0);
        assert_eq!(h_tensor(&sin, array![0.0].view()).unwrap()[[0, 0, 0]], 0.0);

        let ab = ItoField::<f64>::new(lin(1.0), constant(1.0), 1.0);
        let h = h_tensor(&ab, array![2.0].view()).unwrap();
        assert_eq!(h.index_axis(ndarray::Axis(0), 0), array![[2.0, 1.0], [0.0, 0.0]]);
    }

    #[test]
    fn g_tensor_examples() {
        let x = ScalarField::<f64>::new(lin(1.0), 1.0);
        assert_eq!(g_tensor(&x, array![0.7].view()).unwrap()[[0, 0, 0, 0]], 1.0);
        let c = ScalarField::<f64>::new(constant(2.0), 2.0);
        assert_eq!(g_tensor(&c, array![0.7].view()).unwrap()[[0, 0, 0, 0]], 0.0);
        let sq = ScalarField::<f64>::new(Arc::new(|x: f64| [x * x, 2.0 * x, 2.0]), 10.0);
        assert_eq!(g_tensor(&sq, array![1.0].view()).unwrap()[[0, 0, 0, 0]], 6.0);
    }

    #[test]
    fn g_tensor_matches_index_formula_for_two_dimensional_field() {
        // q = d = 2 polynomial field with nontrivial coupling.
        let field = ClosureField::<f64>::new(
            2,
            2,
            Arc::new(|x, out: &mut Array2<f64>| {
                out.assign(&array![[x[0] * x[1], 1.0 + x[0]], [x[1] * x[1], x[0]]]);
            }),
            Arc::new(|x, out: &mut Array3<f64>| {
                out.assign(&array![
                    [[x[1], 1.0], [x[0], 0.0]],
                    [[0.0, 1.0], [2.0 * x[1], 0.0]]
                ]);
            }),
            Arc::new(|_, out: &mut Array4<f64>| {
                out.fill(0.0);
                out[[0, 0, 0, 1]] = 1.0;
                out[[0, 0, 1, 0]] = 1.0;
                out[[1, 0, 1, 1]] = 2.0;
            }),
            10.0,
        );
        let x = array![0.5, -1.5];
        assert!(jacobian_fd_error(&field, &x, 1e-4) < 1e-8);
        assert!(hessian_fd_error(&field, &x, 1e-4) < 1e-8);
        let ev = eval(&field, &x);
        let g = g_tensor(&field, x.view()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let hf = ev.hf.slice(ndarray::s![i, j, .., ..]);
                let mut expect = ev.f.t().dot(&hf);
                for k in 0..2 {
                    let dfk = ev.df.index_axis(ndarray::Axis(0), k);
                    expect = expect + &(dfk.t().to_owned() * ev.df[[i, k, j]]);
                }
                let got = g.slice(ndarray::s![i, j, .., ..]);
                assert!((&got - &expect).iter().all(|v| v.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn closed_forms_at_simple_points() {
        use crate::paths::{BrownianPath, Grid, SeedKey};
        let g = Grid::new(1, 1).unwrap();
        let gbm = builtin_model::<f64>("gbm").unwrap();
        let table = Arc::new(gbm.driver.table(&g).unwrap());
        let zero = BrownianPath::from_increments(Array2::zeros((1, 1)));
        let b = PathBundle::from_brownian(&table, SeedKey::path(0, 0), zero).unwrap();
        let x = (gbm.closed_form.as_ref().unwrap())(&b);
        assert_eq!(x[[1, 0]], (-0.5f64).exp());

        let de = builtin_model::<f64>("det-exp").unwrap();
        let table = Arc::new(de.driver.table(&g).unwrap());
        let b = PathBundle::generate(&table, SeedKey::path(0, 0)).unwrap();
        assert_eq!((de.closed_form.as_ref().unwrap())(&b)[[1, 0]], std::f64::consts::E);
    }

    #[test]
    fn unknown_model_is_an_error() {
        assert!(matches!(builtin_model::<f64>("nope"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn problem_rejects_mismatched_dimensions() {
        let field = ScalarField::<f64>::new(lin(1.0), 1.0);
        let r = SdeProblem::new("x", Arc::new(field), DriverSpec::brownian(2), Array1::ones(1));
        assert!(r.is_err());
    }
}
