//! Discretization functionals, empirical brackets and closed-form oracles.

mod functionals;
pub mod lemmas;
mod series;

pub use functionals::{
    cell_integrals, compute_functionals, cube_decomposition, empirical_qv, empirical_qv_series,
    fv_limit_oracle, m_functional, n_functional, ny_cubesum, z_functional, BracketRule,
    CubeDecomposition, Functionals,
};
pub use series::{GridLevel, SeriesKind, StatSeries};
