//! Iteration drivers: CR-SQN, the RES baseline and plain stochastic
//! approximation (SA), with tracing and multi-seed comparison.
//!
//! CR-SQN iterates
//!
//! ```text
//! x_{k+1} = x_k - gamma_k (B_k^{-1} + delta_k I) (grad F(x_k, xi_k) + mu_k x_k)
//! ```
//!
//! and updates `B` only on even `k`, re-evaluating the sample `xi_k` at
//! `x_{k+1}` for the gradient difference. RES reuses the same machinery with
//! constant `mu`, `delta`, `gamma_k = gamma0 / (k+1)` and an update at every
//! iteration.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hessian::{CyclicBfgsState, HessianError, UpdateReport};
use crate::numkernel::{DenseVector, LinalgError};
use crate::oracles::{sample_gradient, OracleError, StochasticOracle};
use crate::schedules::{
    bound_condition_onset, delta_at, gamma_at, mu_at, rate_envelope, validate_as, validate_mean, PowerLawSchedule,
    ScheduleError,
};

/// Regularized gradients at or below this norm trigger a resample.
pub const ZERO_DIRECTION_TOL: f64 = 1e-14;

pub const DEFAULT_SAFEGUARD_RETRIES: u32 = 8;

pub const DEFAULT_RHO: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    ConfigInvalid(String),
    #[error("iterate became non-finite at iteration {k}")]
    NonFiniteIterate { k: u64 },
    #[error("trace has no optimality-gap column")]
    MissingErrorColumn,
    #[error("no trace record at or past the bound-condition onset {onset}")]
    NoRecordsPastOnset { onset: u64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Hessian(#[from] HessianError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "crsqn")]
    CrSqn,
    #[serde(rename = "res")]
    Res,
    #[serde(rename = "sa")]
    Sa,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::CrSqn => "CR-SQN",
            Algorithm::Res => "RES",
            Algorithm::Sa => "SA",
        })
    }
}

/// Algorithm together with its tuning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase", deny_unknown_fields)]
pub enum Method {
    #[serde(rename = "crsqn")]
    CrSqn {
        schedule: PowerLawSchedule,
    },
    Res {
        gamma0: f64,
        mu: f64,
        delta: f64,
    },
    Sa {
        gamma0: f64,
    },
}

impl Method {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Method::CrSqn { .. } => Algorithm::CrSqn,
            Method::Res { .. } => Algorithm::Res,
            Method::Sa { .. } => Algorithm::Sa,
        }
    }

    /// `(gamma_k, delta_k, mu_k)`; `delta` and `mu` are absent for SA.
    pub fn parameters_at(&self, k: u64) -> (f64, Option<f64>, Option<f64>) {
        match self {
            Method::CrSqn { schedule } => (
                gamma_at(schedule, k),
                Some(delta_at(schedule, k)),
                Some(mu_at(schedule, k)),
            ),
            Method::Res { gamma0, mu, delta } => (harmonic_step(*gamma0, k), Some(*delta), Some(*mu)),
            Method::Sa { gamma0 } => (harmonic_step(*gamma0, k), None, None),
        }
    }
}

/// `gamma0 / (k + 1)`, the baseline step size.
pub fn harmonic_step(gamma0: f64, k: u64) -> f64 {
    gamma0 / (k as f64 + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub rho: f64,
    pub iterations: u64,
    pub seed: u64,
    pub eval_every: u64,
    pub safeguard_retries: u32,
    /// Starting point; zero when absent.
    pub x0: Option<DenseVector>,
}

impl SolverConfig {
    pub fn new(method: Method, iterations: u64, seed: u64) -> Self {
        Self {
            method,
            rho: DEFAULT_RHO,
            iterations,
            seed,
            eval_every: 1,
            safeguard_retries: DEFAULT_SAFEGUARD_RETRIES,
            x0: None,
        }
    }

    pub fn with_eval_every(mut self, eval_every: u64) -> Self {
        self.eval_every = eval_every;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_x0(mut self, x0: DenseVector) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::ConfigInvalid(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        let positive = |name: &str, v: f64| -> Result<(), SolverError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SolverError::ConfigInvalid(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        match &self.method {
            Method::CrSqn { .. } => {}
            Method::Res { gamma0, mu, delta } => {
                positive("gamma0", *gamma0)?;
                positive("mu", *mu)?;
                positive("delta", *delta)?;
            }
            Method::Sa { gamma0 } => {
                if !(gamma0.is_finite() && *gamma0 >= 0.0) {
                    return bad(format!("gamma0 must be finite and >= 0, got {gamma0}"));
                }
            }
        }
        if self.method.algorithm() != Algorithm::Sa && !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        Ok(())
    }

    /// Validator findings for a CR-SQN schedule. Failing the almost-sure
    /// conditions is reported, not fatal.
    pub fn schedule_warnings(&self) -> Vec<String> {
        let Method::CrSqn { schedule } = &self.method else {
            return Vec::new();
        };
        let as_report = validate_as(schedule);
        if as_report.is_valid() {
            return Vec::new();
        }
        let names: Vec<&str> = as_report.violations.iter().map(|v| v.condition).collect();
        let mut out = vec![format!(
            "schedule fails the almost-sure convergence conditions: {}",
            names.join(", ")
        )];
        let mean = validate_mean(schedule);
        if mean.is_valid() {
            out.push("schedule satisfies the convergence-in-mean conditions".into());
        } else {
            let names: Vec<&str> = mean.violations.iter().map(|v| v.condition).collect();
            out.push(format!(
                "schedule also fails the convergence-in-mean conditions: {}",
                names.join(", ")
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Finished,
    /// The regularized gradient stayed zero after every resample.
    Stationary,
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: DenseVector,
    pub k: u64,
    pub bfgs: Option<CyclicBfgsState>,
    pub rng: ChaCha8Rng,
    pub status: RunStatus,
    /// Stochastic gradient evaluations so far.
    pub grad_evals: u64,
}

impl SolverState {
    pub fn new(config: &SolverConfig, dim: usize) -> Result<Self, SolverError> {
        let x = match &config.x0 {
            Some(x0) => {
                x0.check_dim(dim)?;
                x0.clone()
            }
            None => DenseVector::zeros(dim),
        };
        let bfgs = match &config.method {
            Method::CrSqn { schedule } => Some(CyclicBfgsState::init(dim, mu_at(schedule, 0), config.rho, None)?),
            Method::Res { mu, .. } => Some(CyclicBfgsState::init(dim, *mu, config.rho, None)?),
            Method::Sa { .. } => None,
        };
        Ok(Self {
            x,
            k: 0,
            bfgs,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            status: RunStatus::Running,
            grad_evals: 0,
        })
    }
}

/// Matrix update performed during a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Sample re-evaluated at the new iterate; equals the step's sample.
    pub sample_id: usize,
    /// Regularization passed to the update; equals the step's `mu`.
    pub mu: f64,
    pub report: UpdateReport,
}

/// What happened during the step from `x_k` to `x_{k+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: u64,
    pub sample_id: usize,
    pub resamples: u32,
    pub gamma: f64,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    pub update: Option<UpdateRecord>,
    pub grad_evals: u32,
}

fn quasi_newton_step<O: StochasticOracle + ?Sized>(
    state: &mut SolverState,
    oracle: &O,
    gamma: f64,
    delta: f64,
    mu: f64,
    update: bool,
    retries: u32,
) -> Result<Option<StepRecord>, SolverError> {
    let k = state.k;
    let mut eval = sample_gradient(oracle, &state.x, &mut state.rng)?;
    let mut grad_evals = 1u32;
    let mut g = eval.gradient.clone();
    g.axpy(mu, &state.x);
    let mut resamples = 0;
    if update {
        while g.norm() <= ZERO_DIRECTION_TOL && resamples < retries {
            eval = sample_gradient(oracle, &state.x, &mut state.rng)?;
            grad_evals += 1;
            resamples += 1;
            g = eval.gradient.clone();
            g.axpy(mu, &state.x);
        }
        if g.norm() <= ZERO_DIRECTION_TOL {
            state.grad_evals += u64::from(grad_evals);
            state.status = RunStatus::Stationary;
            log::info!("zero regularized gradient after {resamples} resamples at k = {k}");
            return Ok(None);
        }
    }
    let bfgs = state.bfgs.as_mut().expect("quasi-Newton state present");
    let direction = bfgs.apply_direction(delta, &g)?;
    let mut x_next = state.x.clone();
    x_next.axpy(-gamma, &direction);
    if !x_next.is_finite() {
        return Err(SolverError::NonFiniteIterate { k });
    }
    let update_record = if update {
        let grad_next = oracle.per_sample_gradient(&x_next, eval.sample_id);
        grad_evals += 1;
        let s = x_next.sub(&state.x);
        let grad_diff = grad_next.sub(&eval.gradient);
        let report = bfgs.update_even(&s, &grad_diff, mu)?;
        Some(UpdateRecord {
            sample_id: eval.sample_id,
            mu,
            report,
        })
    } else {
        bfgs.copy_odd();
        None
    };
    state.x = x_next;
    state.k += 1;
    state.grad_evals += u64::from(grad_evals);
    Ok(Some(StepRecord {
        k,
        sample_id: eval.sample_id,
        resamples,
        gamma,
        delta: Some(delta),
        mu: Some(mu),
        update: update_record,
        grad_evals,
    }))
}

/// One CR-SQN iteration. Returns `None` when the run became stationary.
pub fn step_crsqn<O: StochasticOracle + ?Sized>(
    state: &mut SolverState,
    oracle: &O,
    schedule: &PowerLawSchedule,
    retries: u32,
) -> Result<Option<StepRecord>, SolverError> {
    let k = state.k;
    let even = k.is_multiple_of(2);
    quasi_newton_step(
        state,
        oracle,
        gamma_at(schedule, k),
        delta_at(schedule, k),
        mu_at(schedule, k),
        even,
        retries,
    )
}

/// One RES iteration: constant `mu`, `delta`, step `gamma0/(k+1)`, matrix
/// update every iteration.
pub fn step_res<O: StochasticOracle + ?Sized>(
    state: &mut SolverState,
    oracle: &O,
    gamma0: f64,
    mu: f64,
    delta: f64,
    retries: u32,
) -> Result<Option<StepRecord>, SolverError> {
    let gamma = harmonic_step(gamma0, state.k);
    quasi_newton_step(state, oracle, gamma, delta, mu, true, retries)
}

/// `x_{k+1} = x_k - gamma_k grad F(x_k, xi_k)`
pub fn step_sa<O: StochasticOracle + ?Sized>(
    state: &mut SolverState,
    oracle: &O,
    gamma: f64,
) -> Result<StepRecord, SolverError> {
    let k = state.k;
    let eval = sample_gradient(oracle, &state.x, &mut state.rng)?;
    let mut x_next = state.x.clone();
    x_next.axpy(-gamma, &eval.gradient);
    if !x_next.is_finite() {
        return Err(SolverError::NonFiniteIterate { k });
    }
    state.x = x_next;
    state.k += 1;
    state.grad_evals += 1;
    Ok(StepRecord {
        k,
        sample_id: eval.sample_id,
        resamples: 0,
        gamma,
        delta: None,
        mu: None,
        update: None,
        grad_evals: 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSummary {
    pub kind: String,
    pub dim: usize,
    pub samples: usize,
    pub lipschitz: f64,
    pub optimal_value: Option<f64>,
}

impl OracleSummary {
    pub fn of<O: StochasticOracle + ?Sized>(oracle: &O) -> Self {
        Self {
            kind: oracle.kind().to_owned(),
            dim: oracle.dim(),
            samples: oracle.num_samples(),
            lipschitz: oracle.lipschitz_bound(),
            optimal_value: oracle.optimal_value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub config: SolverConfig,
    pub oracle: OracleSummary,
    pub status: RunStatus,
    pub warnings: Vec<String>,
}

/// Snapshot at an evaluation point `k`.
///
/// `gamma`, `delta`, `mu` are the parameters the step from `x_k` uses; the
/// counters are cumulative since the start of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub k: u64,
    pub loss: f64,
    /// `f(x_k) - f*` when `f*` is known.
    pub gap: Option<f64>,
    pub gamma: f64,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    /// The step that produced `x_k`.
    pub last_step: Option<StepRecord>,
    pub updates: u64,
    pub skips: u64,
    /// Largest `secant_residual / (1 + target_norm)` over applied updates.
    pub max_secant_residual: f64,
    pub grad_evals: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn status(&self) -> RunStatus {
        self.header.status
    }

    /// `(k, gap)` pairs; `None` if any record lacks a gap.
    pub fn gaps(&self) -> Option<Vec<(u64, f64)>> {
        self.records.iter().map(|r| r.gap.map(|g| (r.k, g))).collect()
    }
}

struct Recorder {
    records: Vec<TraceRecord>,
    updates: u64,
    skips: u64,
    max_secant_residual: f64,
}

impl Recorder {
    fn observe(&mut self, step: &StepRecord) {
        if let Some(u) = &step.update {
            if u.report.skipped {
                self.skips += 1;
            } else {
                self.updates += 1;
                self.max_secant_residual = self.max_secant_residual.max(u.report.relative_residual());
            }
        }
    }

    fn record<O: StochasticOracle + ?Sized>(
        &mut self,
        oracle: &O,
        method: &Method,
        state: &SolverState,
        last_step: Option<StepRecord>,
    ) {
        if self.records.last().is_some_and(|r| r.k == state.k) {
            return;
        }
        let loss = oracle.full_loss(&state.x);
        let (gamma, delta, mu) = method.parameters_at(state.k);
        self.records.push(TraceRecord {
            k: state.k,
            loss,
            gap: oracle.optimal_value().map(|f| loss - f),
            gamma,
            delta,
            mu,
            last_step,
            updates: self.updates,
            skips: self.skips,
            max_secant_residual: self.max_secant_residual,
            grad_evals: state.grad_evals,
        });
    }
}

/// Runs `config.iterations` steps (fewer if the run becomes stationary),
/// recording the full loss at `k = 0`, every `eval_every` steps and at the
/// final iterate. Deterministic in `(config, oracle)`.
pub fn run<O: StochasticOracle + ?Sized>(oracle: &O, config: &SolverConfig) -> Result<RunTrace, SolverError> {
    config.validate()?;
    let warnings = config.schedule_warnings();
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut state = SolverState::new(config, oracle.dim())?;
    let mut rec = Recorder {
        records: Vec::new(),
        updates: 0,
        skips: 0,
        max_secant_residual: 0.0,
    };
    rec.record(oracle, &config.method, &state, None);
    let retries = config.safeguard_retries;
    let mut last_step = None;
    while state.k < config.iterations {
        let step = match &config.method {
            Method::CrSqn { schedule } => step_crsqn(&mut state, oracle, schedule, retries)?,
            Method::Res { gamma0, mu, delta } => step_res(&mut state, oracle, *gamma0, *mu, *delta, retries)?,
            Method::Sa { gamma0 } => {
                let gamma = harmonic_step(*gamma0, state.k);
                Some(step_sa(&mut state, oracle, gamma)?)
            }
        };
        let Some(step) = step else {
            break;
        };
        rec.observe(&step);
        last_step = Some(step);
        if state.k % config.eval_every == 0 || state.k == config.iterations {
            rec.record(oracle, &config.method, &state, last_step);
        }
    }
    if state.status == RunStatus::Running {
        state.status = RunStatus::Finished;
    } else {
        rec.record(oracle, &config.method, &state, last_step);
    }
    Ok(RunTrace {
        header: TraceHeader {
            config: config.clone(),
            oracle: OracleSummary::of(oracle),
            status: state.status,
            warnings,
        },
        records: rec.records,
    })
}

/// Empirical constant of the gap bound: the largest `e_k / envelope(k)` over
/// records at or past the bound-condition onset.
pub fn estimate_theta(trace: &RunTrace, schedule: &PowerLawSchedule) -> Result<f64, SolverError> {
    let gaps = trace.gaps().ok_or(SolverError::MissingErrorColumn)?;
    let onset = bound_condition_onset(schedule, trace.header.oracle.lipschitz, trace.header.config.rho)?;
    gaps.iter()
        .filter(|(k, _)| *k >= onset)
        .map(|&(k, gap)| gap / rate_envelope(schedule, k))
        .reduce(f64::max)
        .ok_or(SolverError::NoRecordsPastOnset { onset })
}

/// One row group of a comparison: a configuration repeated over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub config: SolverConfig,
    pub seeds: Vec<u64>,
    /// Name and value of the parameter this row varies.
    pub parameter: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub algorithm: Algorithm,
    pub parameter: String,
    pub value: f64,
    pub mean_loss: f64,
    /// Sample standard deviation across seeds (zero for one seed).
    pub std: f64,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Runs every entry over its seeds and averages the final loss. Runs are
/// executed concurrently; rows keep declaration order.
pub fn compare<O: StochasticOracle + ?Sized>(
    oracle: &O,
    entries: &[ComparisonEntry],
) -> Result<ComparisonTable, SolverError> {
    let jobs: Vec<(usize, SolverConfig)> = entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| {
            e.seeds.iter().map(move |&seed| {
                let mut c = e.config.clone();
                c.seed = seed;
                (i, c)
            })
        })
        .collect();
    let losses: Vec<(usize, f64)> = jobs
        .par_iter()
        .map(|(i, c)| run(oracle, c).map(|t| (*i, t.final_loss())))
        .collect::<Result<_, _>>()?;
    let rows = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let values: Vec<f64> = losses.iter().filter(|(j, _)| *j == i).map(|(_, l)| *l).collect();
            let (mean_loss, std) = mean_and_std(&values);
            ComparisonRow {
                algorithm: e.config.method.algorithm(),
                parameter: e.parameter.clone(),
                value: e.value,
                mean_loss,
                std,
                seeds: e.seeds.clone(),
            }
        })
        .collect();
    Ok(ComparisonTable { rows })
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
