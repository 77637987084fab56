//! Power-law tuning sequences for step size, matrix regularizer and gradient
//! regularizer, plus validators and diagnostics built on them.
//!
//! ```text
//! gamma_k = gamma0 / (k+1)^a
//! delta_k = delta0 / (k+1)^b
//! mu_k    = mu0 * 2^c / (k+kappa)^c,  kappa = 2 (k even), 1 (k odd)
//! ```
//!
//! The `kappa` switch makes `mu` constant across each (even, odd) pair and
//! strictly smaller at the next even index.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the search performed by [`bound_condition_onset`].
pub const ONSET_SEARCH_CAP: u64 = 1_000_000_000;

// Below this index the onset search evaluates every k.
const ONSET_LINEAR_SCAN: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("schedule parameter `{name}` must be {requirement}, got {value}")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("bound condition does not hold for any k <= {cap}")]
    CapExceeded { cap: u64 },
}

/// Parameters of the three power-law sequences.
///
/// `gamma0`, `delta0`, `mu0`, `a` and `c` must be strictly positive; `b` may
/// be zero, which yields a constant `delta_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct PowerLawSchedule {
    gamma0: f64,
    delta0: f64,
    mu0: f64,
    a: f64,
    b: f64,
    c: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    gamma0: f64,
    delta0: f64,
    mu0: f64,
    a: f64,
    b: f64,
    c: f64,
}

impl TryFrom<RawSchedule> for PowerLawSchedule {
    type Error = ScheduleError;

    fn try_from(r: RawSchedule) -> Result<Self, Self::Error> {
        Self::new(r.gamma0, r.delta0, r.mu0, r.a, r.b, r.c)
    }
}

impl From<PowerLawSchedule> for RawSchedule {
    fn from(s: PowerLawSchedule) -> Self {
        RawSchedule {
            gamma0: s.gamma0,
            delta0: s.delta0,
            mu0: s.mu0,
            a: s.a,
            b: s.b,
            c: s.c,
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64, ScheduleError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ScheduleError::InvalidParameter {
            name,
            requirement: "finite and > 0",
            value,
        })
    }
}

impl PowerLawSchedule {
    pub fn new(gamma0: f64, delta0: f64, mu0: f64, a: f64, b: f64, c: f64) -> Result<Self, ScheduleError> {
        if !(b.is_finite() && b >= 0.0) {
            return Err(ScheduleError::InvalidParameter {
                name: "b",
                requirement: "finite and >= 0",
                value: b,
            });
        }
        Ok(Self {
            gamma0: positive("gamma0", gamma0)?,
            delta0: positive("delta0", delta0)?,
            mu0: positive("mu0", mu0)?,
            a: positive("a", a)?,
            b,
            c: positive("c", c)?,
        })
    }

    /// The exponents used for the rate result: `a = 0.8, b = 0, c = 0.2`,
    /// `delta0 = mu0 = 0.9`.
    pub fn rate_optimal(gamma0: f64) -> Result<Self, ScheduleError> {
        Self::new(gamma0, 0.9, 0.9, 0.8, 0.0, 0.2)
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }
    pub fn delta0(&self) -> f64 {
        self.delta0
    }
    pub fn mu0(&self) -> f64 {
        self.mu0
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn with_gamma0(self, gamma0: f64) -> Result<Self, ScheduleError> {
        Self::new(gamma0, self.delta0, self.mu0, self.a, self.b, self.c)
    }

    pub fn with_mu0(self, mu0: f64) -> Result<Self, ScheduleError> {
        Self::new(self.gamma0, self.delta0, mu0, self.a, self.b, self.c)
    }
}

pub fn gamma_at(s: &PowerLawSchedule, k: u64) -> f64 {
    s.gamma0 / (k as f64 + 1.0).powf(s.a)
}

pub fn delta_at(s: &PowerLawSchedule, k: u64) -> f64 {
    s.delta0 / (k as f64 + 1.0).powf(s.b)
}

pub fn mu_at(s: &PowerLawSchedule, k: u64) -> f64 {
    let kappa = if k.is_multiple_of(2) { 2.0 } else { 1.0 };
    s.mu0 * 2f64.powf(s.c) / (k as f64 + kappa).powf(s.c)
}

/// `gamma_k / (mu_k^3 delta_k)`: the decay profile bounding the expected
/// optimality gap up to a constant.
pub fn rate_envelope(s: &PowerLawSchedule, k: u64) -> f64 {
    let mu = mu_at(s, k);
    gamma_at(s, k) / (mu * mu * mu * delta_at(s, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Valid,
    Invalid,
}

/// One failed inequality `lhs <op> rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub condition: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

/// A single checked inequality, kept whether it passed or not so reports can
/// print the full table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub condition: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
    pub checks: Vec<ConditionCheck>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    fn from_checks(checks: Vec<ConditionCheck>, notes: Vec<String>) -> Self {
        let violations: Vec<Violation> = checks
            .iter()
            .filter(|c| !c.holds)
            .map(|c| Violation {
                condition: c.condition,
                lhs: c.lhs,
                rhs: c.rhs,
            })
            .collect();
        let verdict = if violations.is_empty() {
            Verdict::Valid
        } else {
            Verdict::Invalid
        };
        Self {
            verdict,
            violations,
            checks,
            notes,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.verdict == Verdict::Valid
    }

    pub fn violates(&self, condition: &str) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>14} {:>14}  result", "condition", "lhs", "rhs")?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<24} {:>14.6} {:>14.6}  {}",
                c.condition,
                c.lhs,
                c.rhs,
                if c.holds { "ok" } else { "VIOLATED" }
            )?;
        }
        for note in &self.notes {
            writeln!(f, "note: {note}")?;
        }
        write!(
            f,
            "verdict: {}",
            match self.verdict {
                Verdict::Valid => "valid",
                Verdict::Invalid => "invalid",
            }
        )
    }
}

fn greater(condition: &'static str, lhs: f64, rhs: f64) -> ConditionCheck {
    ConditionCheck {
        condition,
        lhs,
        rhs,
        holds: lhs > rhs,
    }
}

fn at_most(condition: &'static str, lhs: f64, rhs: f64) -> ConditionCheck {
    ConditionCheck {
        condition,
        lhs,
        rhs,
        holds: lhs <= rhs,
    }
}

fn less(condition: &'static str, lhs: f64, rhs: f64) -> ConditionCheck {
    ConditionCheck {
        condition,
        lhs,
        rhs,
        holds: lhs < rhs,
    }
}

fn at_least(condition: &'static str, lhs: f64, rhs: f64) -> ConditionCheck {
    ConditionCheck {
        condition,
        lhs,
        rhs,
        holds: lhs >= rhs,
    }
}

/// Sufficient conditions for almost-sure convergence. Comparisons are exact;
/// boundary cases pass where the inequality is non-strict.
pub fn validate_as(s: &PowerLawSchedule) -> ValidationReport {
    let (a, b, c) = (s.a, s.b, s.c);
    let checks = vec![
        greater("a>3c+b", a, 3.0 * c + b),
        at_most("a+b+c<=1", a + b + c, 1.0),
        greater("a-c>0.5", a - c, 0.5),
        greater("a+2c+b>1", a + 2.0 * c + b, 1.0),
        at_most("delta0*mu0<=2^b", s.delta0 * s.mu0, 2f64.powf(b)),
        at_most("gamma0*delta0*mu0<=1", s.gamma0 * s.delta0 * s.mu0, 1.0),
    ];
    ValidationReport::from_checks(checks, Vec::new())
}

/// Sufficient conditions for convergence in mean (and the rate bound).
pub fn validate_mean(s: &PowerLawSchedule) -> ValidationReport {
    let (a, b, c) = (s.a, s.b, s.c);
    let checks = vec![
        greater("a>3c+b", a, 3.0 * c + b),
        less("a+b<1", a + b, 1.0),
        at_least("-a+4c+b>=0", -a + 4.0 * c + b, 0.0),
        at_most("delta0*mu0<=2^b", s.delta0 * s.mu0, 2f64.powf(b)),
    ];
    let mut notes = Vec::new();
    let product = s.gamma0 * s.delta0 * s.mu0;
    if product > 1.0 {
        notes.push(format!(
            "gamma0*delta0*mu0 = {product} exceeds 1: accepted for convergence in mean, \
             but the almost-sure conditions require it to be at most 1"
        ));
    }
    ValidationReport::from_checks(checks, notes)
}

/// Both sides of `(L+mu_k)^2 gamma_k ((rho mu_{k-1})^{-1} + delta_k)^2 <= delta_k mu_k`.
pub fn bound_condition_sides(s: &PowerLawSchedule, lipschitz: f64, rho: f64, k: u64) -> (f64, f64) {
    debug_assert!(k >= 1);
    let mu = mu_at(s, k);
    let mu_prev = mu_at(s, k - 1);
    let delta = delta_at(s, k);
    let band = 1.0 / (rho * mu_prev) + delta;
    let lhs = (lipschitz + mu) * (lipschitz + mu) * gamma_at(s, k) * band * band;
    (lhs, delta * mu)
}

fn bound_condition_holds(s: &PowerLawSchedule, lipschitz: f64, rho: f64, k: u64) -> bool {
    let (lhs, rhs) = bound_condition_sides(s, lipschitz, rho, k);
    lhs <= rhs
}

/// Smallest `k >= 1` at which the bound condition holds.
///
/// Indices below one million are scanned one by one. Past that, each parity
/// class is probed geometrically and the first crossing is located by
/// bisection, relying on every side being a product of power laws in `k`
/// and therefore monotone in the tail.
pub fn bound_condition_onset(s: &PowerLawSchedule, lipschitz: f64, rho: f64) -> Result<u64, ScheduleError> {
    if !(lipschitz.is_finite() && lipschitz > 0.0) {
        return Err(ScheduleError::InvalidParameter {
            name: "lipschitz",
            requirement: "finite and > 0",
            value: lipschitz,
        });
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(ScheduleError::InvalidParameter {
            name: "rho",
            requirement: "in (0, 1)",
            value: rho,
        });
    }
    if let Some(k) = (1..ONSET_LINEAR_SCAN).find(|&k| bound_condition_holds(s, lipschitz, rho, k)) {
        return Ok(k);
    }
    let holds = |k| bound_condition_holds(s, lipschitz, rho, k);
    let tail = |parity: u64| -> Option<u64> {
        let mut lo = ONSET_LINEAR_SCAN - 2 + parity;
        let mut step = 2;
        let hi = loop {
            let probe = lo + step;
            if probe > ONSET_SEARCH_CAP {
                let last = ONSET_SEARCH_CAP - (ONSET_SEARCH_CAP - parity) % 2;
                if last > lo && holds(last) {
                    break last;
                }
                return None;
            }
            if holds(probe) {
                break probe;
            }
            lo = probe;
            step *= 2;
        };
        // invariant: !holds(lo), holds(hi), both of the same parity
        let mut hi = hi;
        while hi - lo > 2 {
            let mid = lo + ((hi - lo) / 4) * 2;
            if holds(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    };
    match (tail(0), tail(1)) {
        (Some(x), Some(y)) => Ok(x.min(y)),
        (Some(x), None) | (None, Some(x)) => Ok(x),
        (None, None) => Err(ScheduleError::CapExceeded { cap: ONSET_SEARCH_CAP }),
    }
}
