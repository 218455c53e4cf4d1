//! Knock-on benefit (KB) centrality for financial networks estimated by a
//! VAR(1) model, with asymptotic inference and Monte Carlo validation.
//!
//! Convention: returns are row vectors and `x_t = x_{t-1} A + e_t`, so row `i`
//! of `A` holds node `i`'s outgoing influence.

pub mod centrality;
pub mod error;
pub mod inference;
pub mod normal;
pub mod panel;
pub mod rolling;
pub mod simulation;
pub mod spectral;
pub mod var;

pub use centrality::{
    debt_rank, degree_centrality, node_level_kb, propagate_shock, system_debt_rank, system_level_kb,
    CentralityReport, DegreeThreshold, ImpactMode, LeontiefKernel,
};
pub use error::{Error, ErrorClass, Result};
pub use inference::{CovMode, KbVarianceEngine, TestResult, ValidatedKb};
pub use panel::{
    load_panel, load_weights, log_returns, make_windows, moving_average, MissingPolicy, ReturnPanel,
    TimeSeriesPanel, WeightVector, WindowSpec,
};
pub use rolling::{rolling_analysis, RollingOptions, RollingResult, WindowRecord};
pub use simulation::{run_monte_carlo, SimulationConfig, SimulationSummary};
pub use spectral::{spectral_radius, StationarityCertificate};
pub use var::{estimate_var1, EstimatedNetwork, VarOptions};
