use std::sync::Arc;

use ndarray::{Array2, Array3, Array4, ArrayView1};

use crate::error::{Error, Result};
use crate::Scalar;

/// SDE coefficient `f: ℝ^q → ℝ^{q×d}` with analytic first and second derivatives.
///
/// Implementations overwrite every entry of the output buffers, which callers
/// allocate once with the shapes documented below and reuse across steps.
pub trait CoefficientField<T: Scalar>: Send + Sync {
    fn dim_q(&self) -> usize;
    fn dim_d(&self) -> usize;

    /// `out[[i, j]] = f^{ij}(x)`, shape `(q, d)`.
    fn value(&self, x: ArrayView1<'_, T>, out: &mut Array2<T>);

    /// `out[[i, k, j]] = ∂f^{ij}/∂x_k`, so `out[i]` is the `q×d` matrix `Df^i`.
    fn jacobian(&self, x: ArrayView1<'_, T>, out: &mut Array3<T>);

    /// `out[[i, j, k, l]] = ∂²f^{ij}/∂x_k∂x_l`, so `out[[i, j]]` is `Hf^{ij}`.
    fn hessian(&self, x: ArrayView1<'_, T>, out: &mut Array4<T>);

    /// Constant `c` with `‖f(x)‖ ≤ c (1 + ‖x‖)`.
    fn growth_bound(&self) -> T;
}

/// Reusable buffers holding `f`, `Df` and `Hf` at one point.
#[derive(Clone, Debug)]
pub struct FieldEval<T: Scalar> {
    pub f: Array2<T>,
    pub df: Array3<T>,
    pub hf: Array4<T>,
}

impl<T: Scalar> FieldEval<T> {
    pub fn new(q: usize, d: usize) -> Self {
        Self {
            f: Array2::zeros((q, d)),
            df: Array3::zeros((q, q, d)),
            hf: Array4::zeros((q, d, q, q)),
        }
    }

    pub fn for_field(field: &dyn CoefficientField<T>) -> Self {
        Self::new(field.dim_q(), field.dim_d())
    }

    pub fn first_order(&mut self, field: &dyn CoefficientField<T>, x: ArrayView1<'_, T>) {
        field.value(x, &mut self.f);
        field.jacobian(x, &mut self.df);
    }

    pub fn second_order(&mut self, field: &dyn CoefficientField<T>, x: ArrayView1<'_, T>) {
        self.first_order(field, x);
        field.hessian(x, &mut self.hf);
    }

    /// Writes `h^i = (Df^i)ᵀ f` into `out`, shape `(q, d, d)`.
    pub fn h_into(&self, out: &mut Array3<T>) {
        let (q, d) = self.f.dim();
        for i in 0..q {
            for a in 0..d {
                for b in 0..d {
                    let mut s = T::zero();
                    for k in 0..q {
                        s = s + self.df[[i, k, a]] * self.f[[k, b]];
                    }
                    out[[i, a, b]] = s;
                }
            }
        }
    }

    /// Writes `G^{ij} = fᵀ Hf^{ij} + Σ_k f_k^{ij} (Df^k)ᵀ` into `out`, shape `(q, d, d, q)`.
    pub fn g_into(&self, out: &mut Array4<T>) {
        let (q, d) = self.f.dim();
        for i in 0..q {
            for j in 0..d {
                for a in 0..d {
                    for b in 0..q {
                        let mut s = T::zero();
                        for c in 0..q {
                            s = s + self.f[[c, a]] * self.hf[[i, j, c, b]];
                        }
                        for k in 0..q {
                            s = s + self.df[[i, k, j]] * self.df[[k, b, a]];
                        }
                        out[[i, j, a, b]] = s;
                    }
                }
            }
        }
    }
}

fn check_point<T: Scalar>(field: &dyn CoefficientField<T>, x: ArrayView1<'_, T>) -> Result<()> {
    if x.len() != field.dim_q() {
        return Err(Error::DimensionMismatch {
            context: "state vector",
            expected: field.dim_q(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "state vector".into(),
            index: 0,
        });
    }
    Ok(())
}

fn check_finite<T: Scalar, D: ndarray::Dimension>(
    a: &ndarray::Array<T, D>,
    what: &str,
) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.into(),
            index: 0,
        })
    }
}

/// The `q` matrices `h^i = (Df^i)ᵀ f(x)`, shape `(q, d, d)`.
pub fn h_tensor<T: Scalar>(field: &dyn CoefficientField<T>, x: ArrayView1<'_, T>) -> Result<Array3<T>> {
    check_point(field, x)?;
    let mut ev = FieldEval::for_field(field);
    ev.first_order(field, x);
    let d = field.dim_d();
    let mut out = Array3::zeros((field.dim_q(), d, d));
    ev.h_into(&mut out);
    check_finite(&out, "h tensor")?;
    Ok(out)
}

/// The `d×q` matrices `G^{ij}`, shape `(q, d, d, q)`.
pub fn g_tensor<T: Scalar>(field: &dyn CoefficientField<T>, x: ArrayView1<'_, T>) -> Result<Array4<T>> {
    check_point(field, x)?;
    let mut ev = FieldEval::for_field(field);
    ev.second_order(field, x);
    let (q, d) = (field.dim_q(), field.dim_d());
    let mut out = Array4::zeros((q, d, d, q));
    ev.g_into(&mut out);
    check_finite(&out, "G tensor")?;
    Ok(out)
}

/// A scalar function with its first two derivatives: `x ↦ [g, g′, g″]`.
pub type Smooth<T> = Arc<dyn Fn(T) -> [T; 3] + Send + Sync>;

/// `q = d = 1` field `f(x) = g(x)`.
#[derive(Clone)]
pub struct ScalarField<T: Scalar> {
    g: Smooth<T>,
    growth: T,
}

impl<T: Scalar> ScalarField<T> {
    pub fn new(g: Smooth<T>, growth: T) -> Self {
        Self { g, growth }
    }
}

impl<T: Scalar> CoefficientField<T> for ScalarField<T> {
    fn dim_q(&self) -> usize {
        1
    }
    fn dim_d(&self) -> usize {
        1
    }
    fn value(&self, x: ArrayView1<'_, T>, out: &mut Array2<T>) {
        out[[0, 0]] = (self.g)(x[0])[0];
    }
    fn jacobian(&self, x: ArrayView1<'_, T>, out: &mut Array3<T>) {
        out[[0, 0, 0]] = (self.g)(x[0])[1];
    }
    fn hessian(&self, x: ArrayView1<'_, T>, out: &mut Array4<T>) {
        out[[0, 0, 0, 0]] = (self.g)(x[0])[2];
    }
    fn growth_bound(&self) -> T {
        self.growth
    }
}

/// `f = (a(x), b(x))` for `dX = a(X) dW + b(X) dt` driven by `Y = (W, t)`.
#[derive(Clone)]
pub struct ItoField<T: Scalar> {
    pub a: Smooth<T>,
    pub b: Smooth<T>,
    growth: T,
}

impl<T: Scalar> ItoField<T> {
    pub fn new(a: Smooth<T>, b: Smooth<T>, growth: T) -> Self {
        Self { a, b, growth }
    }
}

impl<T: Scalar> CoefficientField<T> for ItoField<T> {
    fn dim_q(&self) -> usize {
        1
    }
    fn dim_d(&self) -> usize {
        2
    }
    fn value(&self, x: ArrayView1<'_, T>, out: &mut Array2<T>) {
        out[[0, 0]] = (self.a)(x[0])[0];
        out[[0, 1]] = (self.b)(x[0])[0];
    }
    fn jacobian(&self, x: ArrayView1<'_, T>, out: &mut Array3<T>) {
        out[[0, 0, 0]] = (self.a)(x[0])[1];
        out[[0, 0, 1]] = (self.b)(x[0])[1];
    }
    fn hessian(&self, x: ArrayView1<'_, T>, out: &mut Array4<T>) {
        out[[0, 0, 0, 0]] = (self.a)(x[0])[2];
        out[[0, 1, 0, 0]] = (self.b)(x[0])[2];
    }
    fn growth_bound(&self) -> T {
        self.growth
    }
}

type ValueFn<T> = Arc<dyn Fn(ArrayView1<'_, T>, &mut Array2<T>) + Send + Sync>;
type JacobianFn<T> = Arc<dyn Fn(ArrayView1<'_, T>, &mut Array3<T>) + Send + Sync>;
type HessianFn<T> = Arc<dyn Fn(ArrayView1<'_, T>, &mut Array4<T>) + Send + Sync>;

/// General field assembled from three closures with the trait's buffer layouts.
#[derive(Clone)]
pub struct ClosureField<T: Scalar> {
    q: usize,
    d: usize,
    value: ValueFn<T>,
    jacobian: JacobianFn<T>,
    hessian: HessianFn<T>,
    growth: T,
}

impl<T: Scalar> ClosureField<T> {
    pub fn new(
        q: usize,
        d: usize,
        value: ValueFn<T>,
        jacobian: JacobianFn<T>,
        hessian: HessianFn<T>,
        growth: T,
    ) -> Self {
        Self {
            q,
            d,
            value,
            jacobian,
            hessian,
            growth,
        }
    }

    /// Constant coefficient `f ≡ c`.
    pub fn constant(c: Array2<T>) -> Self {
        let (q, d) = c.dim();
        let growth = c.iter().fold(T::zero(), |m, v| m.max(v.abs())) * T::lit((q * d) as f64);
        Self::new(
            q,
            d,
            Arc::new(move |_, out| out.assign(&c)),
            Arc::new(|_, out| out.fill(T::zero())),
            Arc::new(|_, out| out.fill(T::zero())),
            growth,
        )
    }
}

impl<T: Scalar> CoefficientField<T> for ClosureField<T> {
    fn dim_q(&self) -> usize {
        self.q
    }
    fn dim_d(&self) -> usize {
        self.d
    }
    fn value(&self, x: ArrayView1<'_, T>, out: &mut Array2<T>) {
        (self.value)(x, out)
    }
    fn jacobian(&self, x: ArrayView1<'_, T>, out: &mut Array3<T>) {
        (self.jacobian)(x, out)
    }
    fn hessian(&self, x: ArrayView1<'_, T>, out: &mut Array4<T>) {
        (self.hessian)(x, out)
    }
    fn growth_bound(&self) -> T {
        self.growth
    }
}
