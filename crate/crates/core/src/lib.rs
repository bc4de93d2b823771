//! Adaptive tracking laboratory for multidimensional ARX(p, q) models.
//!
//! The crate certifies strong controllability via the Schur complement of
//! the limiting excitation matrix, simulates closed-loop adaptive tracking
//! under least-squares or weighted least-squares estimation, and verifies
//! the associated limit theorems (law of large numbers for the design
//! matrix, tracking optimality, central limit theorem, law of the iterated
//! logarithm) by Monte Carlo.

pub mod estim;
pub mod limit;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod sim;

pub use estim::{EstimError, EstimatorState, WeightPolicy};
pub use limit::{
    build_h, build_k, build_l, build_lambda, build_schur, schur_oracle, LimitError, LimitMatrices,
};
pub use linalg::{LinalgError, Matrix};
pub use mc::{
    clt_normalize, cost_matrices, default_checkpoints, empirical_design, histogram_counts,
    ks_statistic, lil_envelope, run_montecarlo, run_realizations, std_normal_cdf, summarize,
    th13_statistic, LilEnvelope, McError, McSummary,
};
pub use model::{
    benchmark_model, build_pi, check_causality, check_strong_controllability, pack_theta,
    pk_coefficient, unpack_theta, ArxModel, CausalityReport, ControllabilityReport, ModelError,
    ParamMatrix, PkStream, Regressor,
};
pub use sim::{
    control_step, run_closed_loop, system_step, NoiseGen, NoiseKind, RefTrajectory, RunConfig,
    RunRecord, SimError,
};
