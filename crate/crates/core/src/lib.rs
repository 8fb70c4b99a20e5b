//! Planar quadratic-cost optimal transport by reduction to a coupling of
//! `(X1, Y2)`.
//!
//! Given densities `f` of `X = (X1, X2)` and `f_tilde` of `Y = (Y1, Y2)`,
//! the optimal coupling of `X` and `Y` is found by minimising a functional
//! `L(p)` over joint densities `p` of `(X1, Y2)` whose marginals are the
//! `X1`-marginal of `f` and the `Y2`-marginal of `f_tilde`; the remaining
//! coordinates are recovered through conditional quantile maps.
//!
//! * [`measures`]: grid densities, CDFs, quantiles, 1D transport cost.
//! * [`reduction`]: conditional laws and the maps `g`, `h`.
//! * [`variational`]: `L`, its first variation and the stationarity residual.
//! * [`optimizer`]: descent over the transportation polytope.
//! * [`oracle`]: exact transportation simplex.
//! * [`io`], [`cli`]: files and the command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod field;
pub mod io;
pub mod measures;
pub mod optimizer;
pub mod oracle;
pub mod reduction;
mod slice;
pub mod variational;

pub use error::{Error, Result};
pub use field::GridField;
pub use measures::{
    build_cdf, marginals_2d, w2_squared_1d, Cdf1D, DiscreteDensity1D, DiscreteDensity2D, Grid1D,
    QuantileTable,
};
pub use optimizer::{
    feasible_direction, ipfp_project, solve, CouplingDensity, SolveConfig, SolveReport,
};
pub use oracle::{comonotone_plan_1d, solve_full_2d, solve_lp, TransportInstance, TransportPlan};
pub use reduction::{build_g_map, build_h_map, coupling_cost, pushforward_check, TransportMapPair};
pub use variational::{
    euler_lagrange_residual, evaluate_l, first_variation, simplified_cross_derivatives,
    ReducedProblem,
};
