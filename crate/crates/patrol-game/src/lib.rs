//! Solver library for a two-player patrol-allocation game over contested fisheries.
//!
//! Two sides, Blue and Red, split fixed patrol budgets across `k` fisheries.
//! Patrols raise the rival's fishing costs, fishing levels settle into an
//! equilibrium driven by a bionomic stock model, and Blue picks the patrol
//! allocation that maximizes her utility under a worst-case (but
//! near-rational) Red response. Because every utility evaluation hides a
//! nested pair of constrained optimizations, the outer search runs on a
//! boosted-tree response surface that is refit as samples accumulate.
//!
//! The crate is organized around that pipeline:
//!
//! * [`bioeconomics`] — stock dynamics, steady-state biomass, patrol-driven
//!   costs, and per-fishery profits.
//! * [`equilibrium`] — best-response fishing levels and the polynomial
//!   surrogates that map patrol pairs to equilibrium fishing levels.
//! * [`optim`] — derivative-free constrained minimization (COBYLA), bounded
//!   scalar search, and Latin-hypercube designs on budget simplexes.
//! * [`surrogate`] — least-squares gradient-boosted regression trees with
//!   cross-validated hyperparameter selection.
//! * [`robust_game`] — Red's optimal and adversarial responses, the robust
//!   utility, the sequential response-surface solver, and benchmark metrics.
//! * [`experiments`] — scenario sampling, batch runs, percentile reports,
//!   and file formats used by the `patrol-game` binary.
//!
//! See the crate `examples/` directory for one runnable walkthrough per
//! capability; `examples/robust_solve.rs` is the end-to-end tour.

pub mod bioeconomics;
pub mod equilibrium;
pub mod experiments;
pub mod optim;
pub mod poly;
pub mod robust_game;
pub mod surrogate;

pub use bioeconomics::{Allocation, CostParams, FisheryParams, FishingLevels, Scenario, Side};
pub use robust_game::{RedResponses, SolveTrace, SolverConfig};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("fit rejected: held-out R^2 {r2:.4} below threshold {threshold}")]
    FitRejected { r2: f64, threshold: f64 },
    #[error("equilibrium search did not converge (residual {residual:.3e})")]
    NoConvergence { residual: f64 },
    #[error("no feasible point found")]
    Infeasible,
    #[error("response surface inadequate: CV R^2 {r2:.4} <= {threshold} at the {samples}-sample cap")]
    SurfaceInadequate { r2: f64, threshold: f64, samples: usize },
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
