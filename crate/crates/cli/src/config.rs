//! Run and comparison configuration documents (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crsqn_core::datastore::{synthetic_logistic, CsvOptions, LabelColumn};
use crsqn_core::oracles::make_rank_deficient_quadratic;
use crsqn_core::solvers::{DEFAULT_RHO, DEFAULT_SAFEGUARD_RETRIES};
use crsqn_core::{
    load_csv, standardize, DenseVector, LogisticOracle, Method, PowerLawSchedule, QuadraticOracle, SolverConfig,
    StochasticOracle,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Crsqn,
    Res,
    Sa,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDoc {
    pub gamma0: f64,
    pub delta0: f64,
    pub mu0: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ScheduleDoc {
    pub fn build(&self) -> Result<PowerLawSchedule, CliError> {
        PowerLawSchedule::new(self.gamma0, self.delta0, self.mu0, self.a, self.b, self.c)
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsDoc {
    pub gamma0: f64,
    pub mu: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDoc {
    pub path: PathBuf,
    pub label_column: LabelColumn,
    pub max_rows: Option<usize>,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default = "yes")]
    pub has_header: bool,
    #[serde(default)]
    pub intercept: bool,
    pub shuffle_seed: Option<u64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDoc {
    pub kind: SyntheticKind,
    pub n: usize,
    pub rank: Option<usize>,
    #[serde(rename = "N")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Problem source shared by `run` and `compare` documents.
#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProblemDoc {
    pub dataset: Option<DatasetDoc>,
    pub synthetic: Option<SyntheticDoc>,
}

impl ProblemDoc {
    pub fn check(&self) -> Result<(), CliError> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "give either [dataset] or [synthetic], not both".into(),
            )),
            (None, None) => Err(CliError::Config("missing [dataset] or [synthetic] section".into())),
            (None, Some(s)) => {
                if s.n == 0 || s.samples == 0 {
                    return Err(CliError::Config("synthetic n and N must be positive".into()));
                }
                match (s.kind, s.rank) {
                    (SyntheticKind::Quadratic, None) => {
                        Err(CliError::Config("synthetic quadratic needs `rank`".into()))
                    }
                    (SyntheticKind::Quadratic, Some(r)) if r == 0 || r >= s.n => Err(CliError::Config(format!(
                        "synthetic rank must lie in [1, n), got {r} with n = {}",
                        s.n
                    ))),
                    (SyntheticKind::Logistic, Some(_)) => {
                        Err(CliError::Config("`rank` applies to quadratic instances only".into()))
                    }
                    _ => Ok(()),
                }
            }
            (Some(_), None) => Ok(()),
        }
    }

    /// Builds the oracle. Relative dataset paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Box<dyn StochasticOracle>, CliError> {
        if let Some(s) = &self.synthetic {
            return Ok(match s.kind {
                SyntheticKind::Quadratic => {
                    let q: QuadraticOracle = make_rank_deficient_quadratic(s.n, s.rank.unwrap_or(0), s.samples, s.seed)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    Box::new(q)
                }
                SyntheticKind::Logistic => {
                    let ds = synthetic_logistic(s.samples, s.n, s.seed).map_err(|e| CliError::Config(e.to_string()))?;
                    Box::new(LogisticOracle::new(ds))
                }
            });
        }
        let d = self.dataset.as_ref().expect("checked");
        let path = if d.path.is_absolute() {
            d.path.clone()
        } else {
            base.join(&d.path)
        };
        let options = CsvOptions {
            label_column: d.label_column.clone(),
            max_rows: d.max_rows,
            has_header: d.has_header,
            shuffle_seed: d.shuffle_seed,
        };
        let mut ds = load_csv(&path, &options).map_err(CliError::data)?;
        if d.standardize {
            ds = standardize(&ds).map_err(CliError::data)?.0;
        }
        if d.intercept {
            ds = ds.with_intercept();
        }
        Ok(Box::new(LogisticOracle::new(ds)))
    }
}

fn method_of(
    algorithm: AlgorithmName,
    schedule: Option<&ScheduleDoc>,
    constants: Option<&ConstantsDoc>,
) -> Result<Method, CliError> {
    let cfg = |m: &str| Err(CliError::Config(m.into()));
    match (algorithm, schedule, constants) {
        (AlgorithmName::Crsqn, Some(s), None) => Ok(Method::CrSqn { schedule: s.build()? }),
        (AlgorithmName::Crsqn, _, _) => cfg("algorithm \"crsqn\" needs a [schedule] section and no [constants]"),
        (AlgorithmName::Res, None, Some(c)) => match (c.mu, c.delta) {
            (Some(mu), Some(delta)) => Ok(Method::Res {
                gamma0: c.gamma0,
                mu,
                delta,
            }),
            _ => cfg("algorithm \"res\" needs constants gamma0, mu and delta"),
        },
        (AlgorithmName::Res, _, _) => cfg("algorithm \"res\" needs a [constants] section and no [schedule]"),
        (AlgorithmName::Sa, None, Some(c)) => {
            if c.mu.is_some() || c.delta.is_some() {
                return cfg("algorithm \"sa\" takes only constants.gamma0");
            }
            Ok(Method::Sa { gamma0: c.gamma0 })
        }
        (AlgorithmName::Sa, _, _) => cfg("algorithm \"sa\" needs a [constants] section and no [schedule]"),
    }
}

/// Document consumed by `run`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDoc {
    pub algorithm: AlgorithmName,
    pub schedule: Option<ScheduleDoc>,
    pub constants: Option<ConstantsDoc>,
    pub rho: Option<f64>,
    pub iterations: u64,
    pub seed: Option<u64>,
    pub eval_every: Option<u64>,
    pub safeguard_retries: Option<u32>,
    pub x0: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    pub dataset: Option<DatasetDoc>,
    pub synthetic: Option<SyntheticDoc>,
}

impl RunDoc {
    pub fn problem(&self) -> ProblemDoc {
        ProblemDoc {
            dataset: self.dataset.clone(),
            synthetic: self.synthetic,
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        let method = method_of(self.algorithm, self.schedule.as_ref(), self.constants.as_ref())?;
        let x0 = match &self.x0 {
            Some(v) => Some(DenseVector::new(v.clone()).map_err(|e| CliError::Config(format!("x0: {e}")))?),
            None => None,
        };
        let config = SolverConfig {
            method,
            rho: self.rho.unwrap_or(DEFAULT_RHO),
            iterations: self.iterations,
            seed: self.seed.unwrap_or(0),
            eval_every: self.eval_every.unwrap_or(1),
            safeguard_retries: self.safeguard_retries.unwrap_or(DEFAULT_SAFEGUARD_RETRIES),
            x0,
        };
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepDoc {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// One `[[runs]]` block of a comparison document.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub algorithm: AlgorithmName,
    pub schedule: Option<ScheduleDoc>,
    pub constants: Option<ConstantsDoc>,
    pub rho: Option<f64>,
    pub sweep: Option<SweepDoc>,
}

impl RunBlock {
    /// `(parameter, value, method, rho)` for each expanded run, in sweep order.
    pub fn expand(&self) -> Result<Vec<(String, f64, Method, f64)>, CliError> {
        let rho = self.rho.unwrap_or(DEFAULT_RHO);
        let Some(sweep) = &self.sweep else {
            let method = method_of(self.algorithm, self.schedule.as_ref(), self.constants.as_ref())?;
            let gamma0 = self
                .schedule
                .map(|s| s.gamma0)
                .or(self.constants.map(|c| c.gamma0))
                .unwrap_or(f64::NAN);
            return Ok(vec![("gamma0".into(), gamma0, method, rho)]);
        };
        if sweep.values.is_empty() {
            return Err(CliError::Config("sweep.values must not be empty".into()));
        }
        sweep
            .values
            .iter()
            .map(|&value| {
                let mut schedule = self.schedule;
                let mut constants = self.constants;
                let mut rho = rho;
                let slot: Option<&mut f64> = match sweep.parameter.as_str() {
                    "rho" => Some(&mut rho),
                    name => match (&mut schedule, &mut constants) {
                        (Some(s), _) => match name {
                            "gamma0" => Some(&mut s.gamma0),
                            "delta0" => Some(&mut s.delta0),
                            "mu0" => Some(&mut s.mu0),
                            "a" => Some(&mut s.a),
                            "b" => Some(&mut s.b),
                            "c" => Some(&mut s.c),
                            _ => None,
                        },
                        (None, Some(c)) => match name {
                            "gamma0" => Some(&mut c.gamma0),
                            "mu" => c.mu.as_mut(),
                            "delta" => c.delta.as_mut(),
                            _ => None,
                        },
                        (None, None) => None,
                    },
                };
                let Some(slot) = slot else {
                    return Err(CliError::Config(format!(
                        "cannot sweep `{}` for algorithm {:?}",
                        sweep.parameter, self.algorithm
                    )));
                };
                *slot = value;
                let method = method_of(self.algorithm, schedule.as_ref(), constants.as_ref())?;
                Ok((sweep.parameter.clone(), value, method, rho))
            })
            .collect()
    }
}

/// Document consumed by `compare`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareDoc {
    pub iterations: u64,
    pub seeds: Vec<u64>,
    pub eval_every: Option<u64>,
    pub safeguard_retries: Option<u32>,
    pub output: Option<PathBuf>,
    pub dataset: Option<DatasetDoc>,
    pub synthetic: Option<SyntheticDoc>,
    pub runs: Vec<RunBlock>,
}

impl CompareDoc {
    pub fn problem(&self) -> ProblemDoc {
        ProblemDoc {
            dataset: self.dataset.clone(),
            synthetic: self.synthetic,
        }
    }
}

pub fn read_document(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn parse<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Directory that relative paths inside the document at `path` resolve against.
pub fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
