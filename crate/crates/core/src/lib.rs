//! Cyclic regularized stochastic quasi-Newton (CR-SQN) optimization with the
//! RES and SA baselines.
//!
//! The crate is organised bottom-up: [`numkernel`] provides dense symmetric
//! linear algebra, [`schedules`] the power-law parameter sequences and their
//! validators, [`oracles`] the stochastic objectives, [`hessian`] the cyclic
//! BFGS matrix, [`solvers`] the iteration drivers and [`datastore`] CSV input
//! and trace persistence.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod datastore;
pub mod hessian;
pub mod numkernel;
pub mod oracles;
pub mod schedules;
pub mod solvers;

pub use datastore::{
    load_csv, read_trace, standardize, write_comparison_csv, write_trace, CsvOptions, DataError, Dataset, LabelColumn,
};
pub use hessian::{CyclicBfgsState, HessianError, UpdateReport};
pub use numkernel::{DenseVector, LinalgError, SymMatrix};
pub use oracles::{LogisticOracle, OracleError, QuadraticOracle, StochasticOracle};
pub use schedules::{PowerLawSchedule, ScheduleError, ValidationReport, Verdict};
pub use solvers::{
    compare, estimate_theta, run, Algorithm, ComparisonEntry, ComparisonRow, ComparisonTable, Method, RunStatus,
    RunTrace, SolverConfig, SolverError, SolverState, TraceHeader, TraceRecord,
};
