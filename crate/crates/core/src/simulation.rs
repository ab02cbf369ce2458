//! Data-generating processes, the robust RMSE metric and the Monte Carlo
//! runner.

pub mod dgp;
pub mod metrics;
pub mod monte_carlo;
pub mod rng;

pub use dgp::{gen_dgp1, gen_dgp2, gen_dgp3, gen_dgp4, generate, true_slope, DgpKnobs, DgpSpec};
pub use metrics::{robust_rmse, RobustSummary};
pub use monte_carlo::{run_monte_carlo, McCell, McRow, MonteCarloConfig, MonteCarloReport};
