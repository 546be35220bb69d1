//! The game layer: Red's optimal and adversarial responses, the robust
//! utility of a Blue allocation, the sequential response-surface solver,
//! and the benchmark metrics comparing robust and non-robust play.
//!
//! For a fixed Blue allocation, Red's model-optimal response maximizes his
//! own utility over the Red budget simplex. The adversarial response then
//! minimizes Blue's utility over the same simplex, constrained to keep
//! Red's own utility within a relative tolerance `epsilon` of his optimum:
//! a worst case among responses a near-rational Red might actually play.
//! Blue's utility against that response is her robust utility.

mod solver;
pub mod trace;

pub use solver::{resume_solve_to_file, solve_nonrobust, solve_robust, solve_to_file, ObjectiveMode};
pub use trace::{FinalReport, ReportedSource, SampleRecord, SampleSource, SolveTrace};

use serde::{Deserialize, Serialize};

use crate::bioeconomics::{Allocation, Scenario, Side, UtilityEvaluator};
use crate::equilibrium::EquilibriumModel;
use crate::optim::{
    dirichlet_uniform, minimize_constrained, mix_seed, multistart_minimize, reduce_runs,
    Constraint, Goal, OptOptions, OptProblem, StartKind,
};
use crate::{Error, Result};

/// Knobs of the sequential response-surface solver. The defaults are the
/// production settings: 20 + 20 initial samples, a 300-sample cap, a 0.5
/// cross-validated R^2 adequacy gate, and 20 optimizer restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Latin-hypercube samples in the initial design.
    pub n_lhs: usize,
    /// Heuristic (alternating best-response) samples in the initial design.
    pub n_unilateral: usize,
    /// Total expensive-sample budget.
    pub max_samples: usize,
    /// Surface adequacy gate on cross-validated R^2.
    pub adequacy_r2: f64,
    /// Random restarts for every inner patrol optimization.
    pub n_restarts: usize,
    /// Red's allowed relative utility shortfall in the adversarial response.
    pub epsilon: f64,
    /// Objective blend: 1 is pure robust utility, 0 pure non-robust.
    pub lambda: f64,
    /// Master seed; every stochastic sub-step derives its own stream.
    pub rng_seed: u64,
    /// Alternating response rounds in the heuristic sampler.
    pub heuristic_rounds: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_lhs: 20,
            n_unilateral: 20,
            max_samples: 300,
            adequacy_r2: 0.5,
            n_restarts: 20,
            epsilon: 0.10,
            lambda: 1.0,
            rng_seed: 0,
            heuristic_rounds: 4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if self.n_restarts == 0 || self.heuristic_rounds == 0 {
            return Err(Error::InvalidParameter(
                "n_restarts and heuristic_rounds must be at least 1".into(),
            ));
        }
        let initial = self.n_lhs + self.n_unilateral;
        if initial < 10 {
            return Err(Error::InvalidParameter(
                "need at least 10 initial samples for 5-fold cross-validation".into(),
            ));
        }
        if self.max_samples < initial {
            return Err(Error::InvalidParameter(format!(
                "max_samples {} below the initial design size {initial}",
                self.max_samples
            )));
        }
        Ok(())
    }
}

/// Red's two responses to one Blue allocation, with the utilities of both
/// sides at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedResponses {
    /// Red's model-optimal allocation.
    pub optimal: Allocation,
    /// The Blue-worst allocation within Red's tolerance.
    pub adversarial: Allocation,
    pub red_utility_optimal: f64,
    pub red_utility_adversarial: f64,
    /// Blue's utility when Red plays his optimum (the non-robust utility).
    pub blue_utility_optimal: f64,
    /// Blue's utility against the adversarial response (the robust utility).
    pub blue_utility_adversarial: f64,
    /// Red's optimum was nonpositive, so the tolerance constraint fell back
    /// from the ratio form to the additive form.
    pub additive_fallback: bool,
}

impl RedResponses {
    /// The scalar the response surface is trained on: a convex blend of the
    /// robust and non-robust utilities.
    pub fn objective(&self, lambda: f64) -> f64 {
        lambda * self.blue_utility_adversarial + (1.0 - lambda) * self.blue_utility_optimal
    }
}

/// Trust-region settings for patrol-space utility optimizations.
fn patrol_opts(budget: f64, dim: usize) -> OptOptions {
    OptOptions {
        rhobeg: Some(0.15 * budget),
        rhoend: Some(2e-4 * budget),
        max_eval: Some(500 * dim),
        feas_tol: 1e-6,
    }
}

/// Scales a ray point onto the budget simplex. The optimizer works on the
/// box; only the direction of its iterate matters.
pub(crate) fn onto_simplex(x: &[f64], budget: f64) -> Vec<f64> {
    let sum: f64 = x.iter().map(|v| v.max(0.0)).sum();
    let s = if sum > 1e-12 * budget { sum } else { 1e-12 * budget };
    x.iter().map(|v| v.max(0.0) * budget / s).collect()
}

fn maximize_over_simplex(
    value: &(dyn Fn(&[f64]) -> f64 + Sync),
    budget: f64,
    k: usize,
    n_starts: usize,
    seed: u64,
) -> Result<(Allocation, f64)> {
    if k == 1 {
        let alloc = Allocation::new(vec![budget], budget)?;
        let v = value(alloc.values());
        return Ok((alloc, v));
    }
    let objective = move |x: &[f64]| value(&onto_simplex(x, budget));
    let mut prob = OptProblem::new(&objective, Goal::Maximize, vec![(0.0, budget); k]);
    prob.starts = StartKind::SimplexScaled { budget };
    let r = multistart_minimize(&prob, n_starts, seed, &patrol_opts(budget, k))?;
    let alloc = Allocation::normalized(&r.x, budget)?;
    let v = value(alloc.values());
    Ok((alloc, v))
}

/// Red's model-optimal response to `p_b`: maximize Red's utility over the
/// Red budget simplex by multistart COBYLA. Returns the allocation and
/// Red's utility at it.
pub fn red_optimal_response(
    p_b: &Allocation,
    sc: &Scenario,
    eq: &EquilibriumModel,
    n_restarts: usize,
    rng_seed: u64,
) -> Result<(Allocation, f64)> {
    let ev = UtilityEvaluator::new(sc, eq)?;
    red_optimal_with(&ev, p_b.values(), n_restarts, rng_seed)
}

pub(crate) fn red_optimal_with(
    ev: &UtilityEvaluator,
    p_b: &[f64],
    n_restarts: usize,
    seed: u64,
) -> Result<(Allocation, f64)> {
    let sc = ev.scenario();
    let value = |p_r: &[f64]| ev.utility(Side::Red, p_b, p_r);
    maximize_over_simplex(&value, sc.p_r_tot, sc.k, n_restarts, seed)
}

/// Blue's (plain, non-robust) best response to a fixed Red allocation.
/// Used by the alternating-response heuristic sampler.
pub(crate) fn blue_response_with(
    ev: &UtilityEvaluator,
    p_r: &[f64],
    n_starts: usize,
    seed: u64,
) -> Result<(Allocation, f64)> {
    let sc = ev.scenario();
    let value = |p_b: &[f64]| ev.utility(Side::Blue, p_b, p_r);
    maximize_over_simplex(&value, sc.p_b_tot, sc.k, n_starts, seed)
}

pub(crate) struct AdversarialOutcome {
    pub alloc: Allocation,
    pub blue_utility: f64,
    pub red_utility: f64,
    pub additive_fallback: bool,
}

/// Red's adversarial response: minimize Blue's utility over the Red
/// simplex subject to Red keeping within `epsilon` relative shortfall of
/// his optimal utility. With a nonpositive optimum the ratio constraint is
/// ill-posed and an additive tolerance is used instead (flagged).
///
/// Red's optimum itself is always kept as a candidate, so the result never
/// violates the tolerance and never leaves Blue better off than the
/// optimal response would.
pub fn red_adversarial_response(
    p_b: &Allocation,
    red_optimal: &Allocation,
    sc: &Scenario,
    eq: &EquilibriumModel,
    epsilon: f64,
    n_restarts: usize,
    rng_seed: u64,
) -> Result<(Allocation, f64)> {
    let ev = UtilityEvaluator::new(sc, eq)?;
    let pi_r_star = ev.utility(Side::Red, p_b.values(), red_optimal.values());
    let out = red_adversarial_with(
        &ev,
        p_b.values(),
        red_optimal,
        pi_r_star,
        epsilon,
        n_restarts,
        rng_seed,
    )?;
    Ok((out.alloc, out.blue_utility))
}

pub(crate) fn red_adversarial_with(
    ev: &UtilityEvaluator,
    p_b: &[f64],
    red_optimal: &Allocation,
    pi_r_star: f64,
    epsilon: f64,
    n_restarts: usize,
    seed: u64,
) -> Result<AdversarialOutcome> {
    let sc = ev.scenario();
    let budget = sc.p_r_tot;
    let k = sc.k;
    let additive_fallback = pi_r_star <= 0.0;
    // Red must retain at least this much utility.
    let floor = if additive_fallback {
        pi_r_star - epsilon * pi_r_star.abs()
    } else {
        pi_r_star / (1.0 + epsilon)
    };
    let scale = pi_r_star.abs().max(1.0);

    // Baseline candidate: the optimum itself, feasible by construction.
    let base_blue = ev.utility(Side::Blue, p_b, red_optimal.values());
    let mut best = AdversarialOutcome {
        alloc: red_optimal.clone(),
        blue_utility: base_blue,
        red_utility: pi_r_star,
        additive_fallback,
    };
    if k == 1 {
        return Ok(best);
    }

    let objective = move |x: &[f64]| ev.utility(Side::Blue, p_b, &onto_simplex(x, budget));
    let constraint_fn = move |x: &[f64]| {
        ev.utility(Side::Red, p_b, &onto_simplex(x, budget)) - floor
    };
    let mut prob = OptProblem::new(&objective, Goal::Minimize, vec![(0.0, budget); k]);
    prob.starts = StartKind::SimplexScaled { budget };
    prob.inequality.push(Constraint::with_scale(constraint_fn, scale));
    let opts = patrol_opts(budget, k);

    let multi = multistart_minimize(&prob, n_restarts, seed, &opts);
    let from_opt = minimize_constrained(&prob, red_optimal.values(), &opts);
    let combined = reduce_runs(Goal::Minimize, vec![multi, from_opt]);
    if let Ok(r) = combined {
        if let Ok(alloc) = Allocation::normalized(&r.x, budget) {
            let red_utility = ev.utility(Side::Red, p_b, alloc.values());
            let blue_utility = ev.utility(Side::Blue, p_b, alloc.values());
            // Re-check the tolerance at the projected point: candidates that
            // drift out of it after projection are discarded.
            if red_utility - floor >= -1e-6 * scale && blue_utility < best.blue_utility {
                best = AdversarialOutcome {
                    alloc,
                    blue_utility,
                    red_utility,
                    additive_fallback,
                };
            }
        }
    }
    Ok(best)
}

/// Both Red responses and all four utilities for one Blue allocation.
pub fn robust_utility(
    p_b: &Allocation,
    sc: &Scenario,
    eq: &EquilibriumModel,
    cfg: &SolverConfig,
) -> Result<RedResponses> {
    let ev = UtilityEvaluator::new(sc, eq)?;
    robust_utility_with(&ev, cfg, p_b, cfg.rng_seed)
}

pub(crate) fn robust_utility_with(
    ev: &UtilityEvaluator,
    cfg: &SolverConfig,
    p_b: &Allocation,
    seed: u64,
) -> Result<RedResponses> {
    let (optimal, red_utility_optimal) =
        red_optimal_with(ev, p_b.values(), cfg.n_restarts, mix_seed(seed, 1))?;
    let blue_utility_optimal = ev.utility(Side::Blue, p_b.values(), optimal.values());
    let adv = red_adversarial_with(
        ev,
        p_b.values(),
        &optimal,
        red_utility_optimal,
        cfg.epsilon,
        cfg.n_restarts,
        mix_seed(seed, 2),
    )?;
    Ok(RedResponses {
        optimal,
        adversarial: adv.alloc,
        red_utility_optimal,
        red_utility_adversarial: adv.red_utility,
        blue_utility_optimal,
        blue_utility_adversarial: adv.blue_utility,
        additive_fallback: adv.additive_fallback,
    })
}

/// Fast sampler of plausible Blue strategies: starting from `p_init`, Red
/// and Blue alternate single-start best responses for `rounds` rounds; the
/// final Blue allocation is returned.
pub fn heuristic_response(
    p_init: &Allocation,
    sc: &Scenario,
    eq: &EquilibriumModel,
    rounds: usize,
    rng_seed: u64,
) -> Result<Allocation> {
    let ev = UtilityEvaluator::new(sc, eq)?;
    heuristic_response_with(&ev, p_init, rounds, rng_seed)
}

pub(crate) fn heuristic_response_with(
    ev: &UtilityEvaluator,
    p_init: &Allocation,
    rounds: usize,
    seed: u64,
) -> Result<Allocation> {
    let mut p_b = p_init.clone();
    for round in 0..rounds {
        let (p_r, _) = red_optimal_with(ev, p_b.values(), 1, mix_seed(seed, 2 * round as u64))?;
        let (next_b, _) =
            blue_response_with(ev, p_r.values(), 1, mix_seed(seed, 2 * round as u64 + 1))?;
        p_b = next_b;
    }
    Ok(p_b)
}

/// A Blue allocation drawn uniformly from the budget simplex.
pub(crate) fn random_allocation(k: usize, budget: f64, seed: u64) -> Allocation {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw = dirichlet_uniform(k, budget, &mut rng);
    Allocation::normalized(&raw, budget).expect("dirichlet draw is positive")
}

/// Robust-versus-non-robust comparison for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    /// Relative robust-utility gain of the robust solution.
    pub v: f64,
    /// `v` penalized by the non-robust utility foregone.
    pub w: f64,
    pub robust_utility_robust_solution: f64,
    pub robust_utility_nonrobust_solution: f64,
    pub nonrobust_utility_robust_solution: f64,
    pub nonrobust_utility_nonrobust_solution: f64,
}

/// `v` and `w` from the four underlying utilities. `rr`/`rn` are the
/// robust utilities of the robust and non-robust solutions; `nr`/`nn` the
/// non-robust utilities of the same two solutions.
pub fn metrics_from_utilities(rr: f64, rn: f64, nr: f64, nn: f64) -> Result<(f64, f64)> {
    if rn <= 0.0 || nn <= 0.0 {
        return Err(Error::DegenerateMetric(format!(
            "denominator utilities must be positive (robust {rn}, non-robust {nn})"
        )));
    }
    let v = rr / rn - 1.0;
    let w = v + (nr / nn - 1.0);
    Ok((v, w))
}

/// Recomputes all four utilities fresh for the two solutions and returns
/// the benchmark metrics.
pub fn compute_metrics(
    robust_solution: &Allocation,
    nonrobust_solution: &Allocation,
    sc: &Scenario,
    eq: &EquilibriumModel,
    cfg: &SolverConfig,
) -> Result<BenchmarkMetrics> {
    let ev = UtilityEvaluator::new(sc, eq)?;
    let at_robust = robust_utility_with(&ev, cfg, robust_solution, mix_seed(cfg.rng_seed, 0xACC0))?;
    let at_nonrobust =
        robust_utility_with(&ev, cfg, nonrobust_solution, mix_seed(cfg.rng_seed, 0xACC1))?;
    let (v, w) = metrics_from_utilities(
        at_robust.blue_utility_adversarial,
        at_nonrobust.blue_utility_adversarial,
        at_robust.blue_utility_optimal,
        at_nonrobust.blue_utility_optimal,
    )?;
    Ok(BenchmarkMetrics {
        v,
        w,
        robust_utility_robust_solution: at_robust.blue_utility_adversarial,
        robust_utility_nonrobust_solution: at_nonrobust.blue_utility_adversarial,
        nonrobust_utility_robust_solution: at_robust.blue_utility_optimal,
        nonrobust_utility_nonrobust_solution: at_nonrobust.blue_utility_optimal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bioeconomics::{CostParams, FisheryParams};
    use crate::equilibrium::fit_scenario_models_sized;

    pub(crate) fn test_scenario(k: usize, betas_zero: bool) -> Scenario {
        let costs = if betas_zero {
            CostParams {
                c_b: 141995.48,
                c_r: 141995.48,
                beta_br: 0.0,
                beta_rb: 0.0,
                beta_bb: 0.0,
                beta_rr: 0.0,
            }
        } else {
            CostParams {
                c_b: 141995.48,
                c_r: 141995.48,
                beta_br: 579.56,
                beta_rb: 451.23,
                beta_bb: 257.6975,
                beta_rr: 257.6975,
            }
        };
        // Inert-patrol scenarios use the exactly-polynomial case so the
        // surrogates carry no patrol-term fitting noise.
        let (alpha, gamma) = if betas_zero { (1.0, 1.0) } else { (0.91, 1.06) };
        let fisheries = (0..k)
            .map(|i| FisheryParams {
                r: 0.36,
                z: 1.0,
                q: 0.00015,
                alpha,
                gamma,
                p: 1.5e9 + 1.5e9 * i as f64 / k.max(2) as f64,
            })
            .collect();
        Scenario {
            k,
            fisheries,
            costs,
            p_b_tot: 600.0,
            p_r_tot: 1000.0,
            epsilon: 0.10,
        }
    }

    fn quick_cfg() -> SolverConfig {
        SolverConfig {
            n_restarts: 6,
            ..Default::default()
        }
    }

    #[test]
    fn inert_patrols_make_responses_flat() {
        let sc = test_scenario(2, true);
        let models = fit_scenario_models_sized(&sc, 250, 200, 5).unwrap();
        let eq = &models.equilibrium;
        let p_b = Allocation::normalized(&[1.0, 1.0], sc.p_b_tot).unwrap();
        let (_, u_opt) = red_optimal_response(&p_b, &sc, eq, 4, 7).unwrap();
        // Any allocation earns the same Red utility when betas are zero.
        let even = Allocation::normalized(&[1.0, 1.0], sc.p_r_tot).unwrap();
        let u_even = crate::bioeconomics::total_utility(&p_b, &even, &sc, eq, Side::Red).unwrap();
        assert!(
            (u_opt - u_even).abs() <= 1e-6 * u_even.abs().max(1.0),
            "optimal {u_opt} vs flat {u_even}"
        );
        // And the robust utility equals the non-robust one.
        let rr = robust_utility(&p_b, &sc, eq, &quick_cfg()).unwrap();
        assert!(
            (rr.blue_utility_adversarial - rr.blue_utility_optimal).abs()
                <= 1e-6 * rr.blue_utility_optimal.abs().max(1.0)
        );
    }

    #[test]
    fn single_fishery_red_response_is_full_budget() {
        let sc = test_scenario(1, false);
        let models = fit_scenario_models_sized(&sc, 250, 200, 5).unwrap();
        let p_b = Allocation::new(vec![600.0], 600.0).unwrap();
        let (alloc, _) = red_optimal_response(&p_b, &sc, &models.equilibrium, 4, 3).unwrap();
        assert_eq!(alloc.values(), &[1000.0]);
    }

    #[test]
    fn epsilon_zero_collapses_to_optimum() {
        let sc = test_scenario(2, false);
        let models = fit_scenario_models_sized(&sc, 250, 200, 5).unwrap();
        let eq = &models.equilibrium;
        let p_b = Allocation::normalized(&[2.0, 1.0], sc.p_b_tot).unwrap();
        let cfg = SolverConfig {
            epsilon: 0.0,
            ..quick_cfg()
        };
        let rr = robust_utility(&p_b, &sc, eq, &cfg).unwrap();
        let rel = (rr.blue_utility_adversarial - rr.blue_utility_optimal).abs()
            / rr.blue_utility_optimal.abs().max(1.0);
        assert!(rel <= 1e-3, "collapse gap {rel}");
    }

    #[test]
    fn adversarial_respects_tolerance_and_dominance() {
        let sc = test_scenario(3, false);
        let models = fit_scenario_models_sized(&sc, 250, 200, 5).unwrap();
        let eq = &models.equilibrium;
        let cfg = quick_cfg();
        for seed in 0..4 {
            let p_b = random_allocation(3, sc.p_b_tot, 100 + seed);
            let rr = robust_utility(&p_b, &sc, eq, &cfg).unwrap();
            assert!(
                rr.blue_utility_adversarial
                    <= rr.blue_utility_optimal + 1e-6 * rr.blue_utility_optimal.abs().max(1.0),
                "worst case better than optimum"
            );
            if rr.red_utility_optimal > 0.0 {
                let ratio = rr.red_utility_optimal / rr.red_utility_adversarial - 1.0;
                assert!(ratio < cfg.epsilon + 1e-6, "tolerance violated: {ratio}");
            }
        }
    }

    #[test]
    fn large_epsilon_is_unconstrained_minimization() {
        let sc = test_scenario(2, false);
        let models = fit_scenario_models_sized(&sc, 250, 200, 5).unwrap();
        let eq = &models.equilibrium;
        let ev = UtilityEvaluator::new(&sc, eq).unwrap();
        let p_b = Allocation::normalized(&[1.0, 2.0], sc.p_b_tot).unwrap();
        let cfg_loose = SolverConfig {
            epsilon: 1e9,
            ..quick_cfg()
        };
        let rr = robust_utility(&p_b, &sc, eq, &cfg_loose).unwrap();
        // Against a vacuous constraint, the worst case is at least as bad
        // for Blue as any probe allocation.
        for seed in 0..8 {
            let probe = random_allocation(2, sc.p_r_tot, 500 + seed);
            let u = ev.utility(Side::Blue, p_b.values(), probe.values());
            assert!(
                rr.blue_utility_adversarial
                    <= u + 0.02 * u.abs().max(1.0),
                "probe {seed} beat the unconstrained worst case: {u} vs {}",
                rr.blue_utility_adversarial
            );
        }
    }

    #[test]
    fn heuristic_stays_feasible() {
        let sc = test_scenario(3, false);
        let models = fit_scenario_models_sized(&sc, 250, 200, 5).unwrap();
        let init = random_allocation(3, sc.p_b_tot, 9);
        let out = heuristic_response(&init, &sc, &models.equilibrium, 4, 11).unwrap();
        assert!(out.is_feasible());
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn metrics_arithmetic() {
        // Identical solutions give zero metrics.
        let (v, w) = metrics_from_utilities(5.0, 5.0, 7.0, 7.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(w, 0.0);
        // Reported values of the worked example.
        let (v, w) = metrics_from_utilities(
            166_663_708.36,
            130_857_172.92,
            196_247_780.94,
            197_344_455.69,
        )
        .unwrap();
        assert!((v - 0.2736).abs() < 5e-4, "v = {v}");
        assert!((w - 0.2681).abs() < 5e-4, "w = {w}");
        assert!(metrics_from_utilities(1.0, -1.0, 1.0, 1.0).is_err());
    }
}
