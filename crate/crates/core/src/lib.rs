//! Bayesian multi-exposure Mendelian randomization for overlapping samples.
//!
//! Individuals may have instruments with exposures and outcome (complete),
//! exposures only, or outcome only. The sampler treats the missing cells as
//! unknowns and fits every row jointly; two-stage least squares and
//! inverse-variance weighting serve as comparators.

pub mod classic;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod simulate;

pub use classic::{classic_analyze, multivariable_ivw, two_stage_least_squares, ClassicEstimate, ClassicMethod, SummaryStats};
pub use data::{MissingLayout, MrDataset, RowPattern};
pub use error::{Error, Result};
pub use experiment::{run_grid, run_grid_with_jobs, run_replicate, ConfigPoint, GridConfig, Method, MetricsRow};
pub use model::{log_joint, validate_spec, ModelSpec, ParamState, PriorSpec};
pub use rng::RngStream;
pub use sampler::{
    impute_missing, init_state, run_chain, summarize, update_parameters, ChainSettings, ImputationRule,
    PosteriorDraws, PosteriorSummary, SigmaUpdate,
};
pub use simulate::{partition, simulate_population, OverlapDesign, Partition, SimConfig};
