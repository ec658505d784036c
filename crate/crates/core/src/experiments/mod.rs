//! Experiment harness: estimation-error sweeps, quantile and tail-mean
//! sweeps, SG runs and rate studies, and portfolio selection on return
//! tables.

pub mod distributions;
pub mod optimize;
pub mod portfolio;
pub mod returns;
pub mod stats;
pub mod sweeps;

pub use distributions::DistSpec;
pub use optimize::{run_optimize, sg_rate_study, OptimizeConfig, OptimizeOutcome, RateStudy, ScenarioSpec};
pub use portfolio::{run_portfolio, NamedRisk, PortfolioConfig, PortfolioReport};
pub use returns::{read_returns, read_samples, ReturnKind, ReturnsData};
pub use stats::SlopeFit;
pub use sweeps::{sweep_estimation, var_cvar_sweep, SweepConfig, SweepReport, VarCvarReport};
