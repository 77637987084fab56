use crsqn_core::datastore::synthetic_logistic;
use crsqn_core::numkernel::min_eigenvalue;
use crsqn_core::oracles::make_rank_deficient_quadratic;
use crsqn_core::schedules::mu_at;
use crsqn_core::solvers::{step_crsqn, step_res, SolverState};
use crsqn_core::{LogisticOracle, Method, PowerLawSchedule, SolverConfig, StochasticOracle};
use proptest::prelude::*;

fn schedule(gamma0: f64, mu0: f64) -> PowerLawSchedule {
    PowerLawSchedule::new(gamma0, 1.0, mu0, 0.8, 0.0, 0.2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn crsqn_keeps_secant_and_floor(data_seed in 0u64..1000, run_seed in 0u64..1000,
                                    gamma0 in 0.01f64..1.0, mu0 in 0.05f64..1.0, rho in 0.5f64..0.95) {
        let o = LogisticOracle::new(synthetic_logistic(40, 5, data_seed).unwrap());
        let s = schedule(gamma0, mu0);
        let cfg = SolverConfig::new(Method::CrSqn { schedule: s }, 60, run_seed).with_rho(rho);
        let mut st = SolverState::new(&cfg, o.dim()).unwrap();
        for _ in 0..60 {
            let k = st.k;
            let step = step_crsqn(&mut st, &o, &s, 8).unwrap().unwrap();
            let b = st.bfgs.as_ref().unwrap().matrix();
            if k.is_multiple_of(2) {
                let u = step.update.unwrap();
                prop_assert!(!u.report.skipped);
                prop_assert!(u.report.relative_residual() <= 1e-8);
                prop_assert!(min_eigenvalue(b).unwrap() >= rho * mu_at(&s, k) - 1e-10);
            } else {
                prop_assert!(step.update.is_none());
            }
        }
        prop_assert!(st.x.is_finite());
    }

    #[test]
    fn res_keeps_floor_every_step(seed in 0u64..1000, mu in 0.01f64..1.0) {
        let q = make_rank_deficient_quadratic(6, 3, 30, seed).unwrap();
        let cfg = SolverConfig::new(Method::Res { gamma0: 0.5, mu, delta: 1.0 }, 40, seed);
        let mut st = SolverState::new(&cfg, q.dim()).unwrap();
        for _ in 0..40 {
            let step = step_res(&mut st, &q, 0.5, mu, 1.0, 8).unwrap().unwrap();
            prop_assert!(step.update.is_some());
            prop_assert!(min_eigenvalue(st.bfgs.as_ref().unwrap().matrix()).unwrap() >= 0.9 * mu - 1e-10);
        }
    }
}

#[test]
fn odd_and_even_cost_accounting() {
    let o = LogisticOracle::new(synthetic_logistic(30, 3, 4).unwrap());
    let s = schedule(0.5, 1.0);
    let cfg = SolverConfig::new(Method::CrSqn { schedule: s }, 11, 0);
    let mut st = SolverState::new(&cfg, 3).unwrap();
    let mut per_step = Vec::new();
    for _ in 0..11 {
        per_step.push(step_crsqn(&mut st, &o, &s, 8).unwrap().unwrap().grad_evals);
    }
    assert_eq!(per_step, vec![2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2]);
    assert_eq!(st.grad_evals, 17);
}
