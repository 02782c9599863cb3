use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};

use super::Grid;
use crate::error::{Error, Result};
use crate::Scalar;

pub type MatrixFn<T> = Arc<dyn Fn(T) -> Array2<T> + Send + Sync>;
pub type VectorFn<T> = Arc<dyn Fn(T) -> Array1<T> + Send + Sync>;

/// Driving semimartingale `Y = ∫σ dW + ∫a ds` given by deterministic coefficients.
#[derive(Clone)]
pub struct DriverSpec<T: Scalar> {
    label: String,
    dim_d: usize,
    dim_m: usize,
    sigma: MatrixFn<T>,
    drift: Option<VectorFn<T>>,
}

impl<T: Scalar> fmt::Debug for DriverSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("label", &self.label)
            .field("dim_d", &self.dim_d)
            .field("dim_m", &self.dim_m)
            .field("has_drift", &self.drift.is_some())
            .finish()
    }
}

const GATE_POINTS: [usize; 2] = [1024, 4096];

impl<T: Scalar> DriverSpec<T> {
    /// Validates shapes, finiteness and the integrability gates
    /// `∫‖c‖³ < ∞`, `∫|a|² < ∞` on a midpoint sample of `(0, 1)`.
    pub fn new(
        label: impl Into<String>,
        dim_d: usize,
        dim_m: usize,
        sigma: MatrixFn<T>,
        drift: Option<VectorFn<T>>,
    ) -> Result<Self> {
        let spec = Self {
            label: label.into(),
            dim_d,
            dim_m,
            sigma,
            drift,
        };
        if dim_d == 0 || dim_m == 0 {
            return Err(spec.gate("dimensions must be positive"));
        }
        for s in [T::zero(), T::one()] {
            spec.checked_eval(s)?;
        }
        let mut prev: Option<(f64, f64)> = None;
        for points in GATE_POINTS {
            let (mut c3, mut a2) = (0.0, 0.0);
            for k in 0..points {
                let s = T::lit((k as f64 + 0.5) / points as f64);
                let (sig, a) = spec.checked_eval(s)?;
                let c = sig.dot(&sig.t());
                let cn = c.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
                c3 += cn.powi(3) / points as f64;
                a2 += a.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / points as f64;
            }
            if !c3.is_finite() || !a2.is_finite() {
                return Err(spec.gate("gate integral overflowed"));
            }
            if let Some((pc, pa)) = prev {
                // Divergent integrands keep growing with the resolution.
                if c3 > 2.0 * pc + 1e-9 || a2 > 2.0 * pa + 1e-9 {
                    return Err(spec.gate("integral does not settle under refinement"));
                }
            }
            prev = Some((c3, a2));
        }
        Ok(spec)
    }

    /// `Y = W` in dimension `d`.
    pub fn brownian(dim: usize) -> Self {
        let eye = Array2::<T>::eye(dim);
        Self {
            label: format!("brownian-{dim}"),
            dim_d: dim,
            dim_m: dim,
            sigma: Arc::new(move |_| eye.clone()),
            drift: None,
        }
    }

    /// `Y_t = t`.
    pub fn time() -> Self {
        Self {
            label: "time".into(),
            dim_d: 1,
            dim_m: 1,
            sigma: Arc::new(|_| Array2::zeros((1, 1))),
            drift: Some(Arc::new(|_| Array1::ones(1))),
        }
    }

    /// `Y_t = (W_t, t)`, the embedding of a scalar Itô equation.
    pub fn ito_embedding() -> Self {
        Self {
            label: "ito-embedding".into(),
            dim_d: 2,
            dim_m: 1,
            sigma: Arc::new(|_| {
                let mut s = Array2::zeros((2, 1));
                s[[0, 0]] = T::one();
                s
            }),
            drift: Some(Arc::new(|_| {
                let mut a = Array1::zeros(2);
                a[1] = T::one();
                a
            })),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn has_drift(&self) -> bool {
        self.drift.is_some()
    }

    pub fn sigma_at(&self, s: T) -> Array2<T> {
        (self.sigma)(s)
    }

    pub fn drift_at(&self, s: T) -> Array1<T> {
        match &self.drift {
            Some(a) => a(s),
            None => Array1::zeros(self.dim_d),
        }
    }

    /// `c_s = σ_s σ_sᵀ`.
    pub fn c_at(&self, s: T) -> Array2<T> {
        let sig = self.sigma_at(s);
        sig.dot(&sig.t())
    }

    fn gate(&self, detail: &str) -> Error {
        Error::Integrability {
            label: self.label.clone(),
            detail: detail.into(),
        }
    }

    fn checked_eval(&self, s: T) -> Result<(Array2<T>, Array1<T>)> {
        let sig = self.sigma_at(s);
        if sig.dim() != (self.dim_d, self.dim_m) {
            return Err(Error::DimensionMismatch {
                context: "sigma rows x cols",
                expected: self.dim_d * self.dim_m,
                actual: sig.len(),
            });
        }
        let a = self.drift_at(s);
        if a.len() != self.dim_d {
            return Err(Error::DimensionMismatch {
                context: "drift length",
                expected: self.dim_d,
                actual: a.len(),
            });
        }
        if sig.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("driver {} coefficient at s={s}", self.label),
                index: 0,
            });
        }
        Ok((sig, a))
    }

    /// Left-point coefficient table on `grid`, shared by all paths.
    pub fn table(&self, grid: &Grid) -> Result<DriverTable<T>> {
        let f = grid.fine_count();
        let (d, m) = (self.dim_d, self.dim_m);
        let dt = grid.dt::<T>();
        let mut sigma = Array3::zeros((f, d, m));
        let mut drift = Array2::zeros((f, d));
        let mut dc = Array3::zeros((f, d, d));
        let mut finite_variation = true;
        for k in 0..f {
            let s = grid.time::<T>(k);
            let sig = self.sigma_at(s);
            let a = self.drift_at(s);
            if sig.dim() != (d, m) || a.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "driver coefficient shape",
                    expected: d * m + d,
                    actual: sig.len() + a.len(),
                });
            }
            if sig.iter().chain(a.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("driver {} coefficient", self.label),
                    index: k,
                });
            }
            if sig.iter().any(|v| *v != T::zero()) {
                finite_variation = false;
            }
            let c = sig.dot(&sig.t());
            sigma.slice_mut(ndarray::s![k, .., ..]).assign(&sig);
            drift.slice_mut(ndarray::s![k, ..]).assign(&a);
            dc.slice_mut(ndarray::s![k, .., ..]).assign(&(c * dt));
        }
        Ok(DriverTable {
            grid: *grid,
            dim_d: d,
            dim_m: m,
            sigma,
            drift,
            dc,
            finite_variation,
        })
    }
}

/// Driver coefficients sampled at the left end of every fine cell.
#[derive(Clone, Debug)]
pub struct DriverTable<T: Scalar> {
    pub(crate) grid: Grid,
    pub(crate) dim_d: usize,
    pub(crate) dim_m: usize,
    /// `σ(t_k)`, shape `(F, d, m)`.
    pub(crate) sigma: Array3<T>,
    /// `a(t_k)`, shape `(F, d)`.
    pub(crate) drift: Array2<T>,
    /// Model bracket increments `c(t_k) Δ`, shape `(F, d, d)`.
    pub(crate) dc: Array3<T>,
    pub(crate) finite_variation: bool,
}

impl<T: Scalar> DriverTable<T> {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn dim_d(&self) -> usize {
        self.dim_d
    }
    pub fn dim_m(&self) -> usize {
        self.dim_m
    }
    pub fn sigma(&self) -> &Array3<T> {
        &self.sigma
    }
    pub fn drift(&self) -> &Array2<T> {
        &self.drift
    }
    pub fn dc(&self) -> &Array3<T> {
        &self.dc
    }
    /// True when `σ` vanishes on every grid point.
    pub fn is_finite_variation(&self) -> bool {
        self.finite_variation
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_has_expected_bracket() {
        let spec = DriverSpec::<f64>::ito_embedding();
        let c = spec.c_at(0.3);
        assert_eq!(c, ndarray::array![[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(spec.drift_at(0.3), ndarray::array![0.0, 1.0]);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let r = DriverSpec::<f64>::new(
            "bad",
            2,
            1,
            Arc::new(|_| Array2::zeros((1, 1))),
            None,
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_non_integrable_bracket() {
        // c = 1/s, so ∫c³ diverges.
        let r = DriverSpec::<f64>::new(
            "singular",
            1,
            1,
            Arc::new(|s: f64| Array2::from_elem((1, 1), s.max(0.0).sqrt().recip().min(1e300))),
            None,
        );
        assert!(r.is_err());
    }

    #[test]
    fn accepts_mild_singularity() {
        // c = s^{-1/4}: ∫c³ = ∫s^{-3/4} = 4.
        let r = DriverSpec::<f64>::new(
            "mild",
            1,
            1,
            Arc::new(|s: f64| Array2::from_elem((1, 1), s.powf(-0.125).min(1e6))),
            None,
        );
        assert!(r.is_ok());
    }

    #[test]
    fn rejects_non_finite_coefficients() {
        let r = DriverSpec::<f64>::new(
            "nan",
            1,
            1,
            Arc::new(|_| Array2::from_elem((1, 1), f64::NAN)),
            None,
        );
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn time_driver_is_finite_variation() {
        let g = Grid::new(4, 4).unwrap();
        let t = DriverSpec::<f64>::time().table(&g).unwrap();
        assert!(t.is_finite_variation());
        assert!(!DriverSpec::<f64>::brownian(1).table(&g).unwrap().is_finite_variation());
    }
}
