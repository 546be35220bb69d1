//! The sequential response-surface solver for Blue's patrol allocation.
//!
//! The expensive objective (robust or non-robust utility) is sampled on an
//! initial design of scaled Latin-hypercube draws plus heuristic
//! alternating-response points. A boosted-tree surface is fit and gated on
//! cross-validated R^2, growing the design until adequate. Each following
//! sample comes from maximizing the surface under a randomly drawn bound
//! on one fishery's share, which forces exploration the raw argmax would
//! skip. At the sample cap the surface argmax is evaluated for real and
//! reported, unless an already-sampled point beat it.
//!
//! Every random draw is keyed by `(rng_seed, purpose, sample index)`, so a
//! partial trace replays into exactly the run that would have happened
//! uninterrupted.

use std::path::Path;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bioeconomics::{Allocation, Scenario, Side, UtilityEvaluator};
use crate::equilibrium::EquilibriumModel;
use crate::optim::{
    latin_hypercube_simplex, minimize_constrained, mix_seed, multistart_minimize, reduce_runs,
    Constraint, Goal, OptOptions, OptProblem, StartKind,
};
use crate::robust_game::trace::{
    load_trace, FinalReport, ReportedSource, SampleRecord, SampleSource, SolveTrace, TraceSink,
};
use crate::robust_game::{
    heuristic_response_with, onto_simplex, random_allocation, red_optimal_with,
    robust_utility_with, RedResponses, SolverConfig,
};
use crate::surrogate::{
    cross_validate_select, default_grid, fit_boosted_trees, predict, Dataset, TreeEnsemble,
};
use crate::{Error, Result};

/// What the outer search optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Blue's utility against Red's adversarial response (blended by
    /// lambda when it is below 1).
    Robust,
    /// Blue's utility against Red's model-optimal response only.
    NonRobust,
}

const FOLDS: usize = 5;

// Seed salts for the independent random streams of a run.
const SALT_LHS_BLOCK: u64 = 0x11;
const SALT_LHS_SINGLE: u64 = 0x2000_0000;
const SALT_UNI_INIT: u64 = 0x4000_0000;
const SALT_UNI: u64 = 0x6000_0000;
const SALT_EVAL: u64 = 0x8000_0000;
const SALT_BOUND: u64 = 0xA000_0000;
const SALT_SURF: u64 = 0xC000_0000;
const SALT_FINAL: u64 = 0xE000_0000;

/// Estimates Blue's best robust allocation. Returns the reported solution
/// and the full solve trace.
pub fn solve_robust(
    sc: &Scenario,
    eq: &EquilibriumModel,
    cfg: &SolverConfig,
) -> Result<(Allocation, SolveTrace)> {
    solve(sc, eq, cfg, ObjectiveMode::Robust, None, None, None)
}

/// Same search with the non-robust benchmark objective (Red plays his
/// model optimum; the adversarial response is skipped).
pub fn solve_nonrobust(
    sc: &Scenario,
    eq: &EquilibriumModel,
    cfg: &SolverConfig,
) -> Result<(Allocation, SolveTrace)> {
    solve(sc, eq, cfg, ObjectiveMode::NonRobust, None, None, None)
}

/// Runs a solve while streaming the trace to `path`.
pub fn solve_to_file(
    sc: &Scenario,
    eq: &EquilibriumModel,
    cfg: &SolverConfig,
    mode: ObjectiveMode,
    path: &Path,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<(Allocation, SolveTrace)> {
    let sink = TraceSink::create(path, mode, cfg, sc)?;
    solve(sc, eq, cfg, mode, None, Some(sink), progress)
}

/// Resumes an interrupted run from its trace file, replaying recorded
/// samples and appending the rest.
pub fn resume_solve_to_file(
    sc: &Scenario,
    eq: &EquilibriumModel,
    path: &Path,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<(Allocation, SolveTrace)> {
    let prior = load_trace(path)?;
    if prior.scenario != *sc {
        return Err(Error::Trace(
            "trace file was recorded for a different scenario".into(),
        ));
    }
    if let Some(report) = &prior.final_report {
        let alloc = Allocation::normalized(&report.reported, sc.p_b_tot)?;
        return Ok((alloc, prior));
    }
    let cfg = prior.config;
    let mode = prior.mode;
    let sink = TraceSink::append(path)?;
    solve(sc, eq, &cfg, mode, Some(prior.samples), Some(sink), progress)
}

fn dataset_from(samples: &[SampleRecord]) -> Dataset {
    let mut data = Dataset::default();
    for s in samples {
        data.push(s.allocation.clone(), s.objective);
    }
    data
}

fn surface_opts(budget: f64, dim: usize) -> OptOptions {
    // The surface is piecewise constant; a wide initial radius walks across
    // plateaus and a tight final radius buys nothing.
    OptOptions {
        rhobeg: Some(0.3 * budget),
        rhoend: Some(1e-3 * budget),
        max_eval: Some(300 * dim),
        feas_tol: 1e-6,
    }
}

fn solve(
    sc: &Scenario,
    eq: &EquilibriumModel,
    cfg: &SolverConfig,
    mode: ObjectiveMode,
    prior: Option<Vec<SampleRecord>>,
    mut sink: Option<TraceSink>,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<(Allocation, SolveTrace)> {
    sc.validate()?;
    cfg.validate()?;
    let ev = UtilityEvaluator::new(sc, eq)?;
    let k = sc.k;
    let budget = sc.p_b_tot;
    let seed = cfg.rng_seed;
    let mut trace = SolveTrace::new(mode, *cfg, sc.clone());
    trace.samples = prior.unwrap_or_default();

    let eval_at = |index: usize, source: SampleSource, alloc: Allocation| -> Result<SampleRecord> {
        let eval_seed = mix_seed(seed, SALT_EVAL.wrapping_add(index as u64));
        let (responses, objective) = match mode {
            ObjectiveMode::Robust => {
                let rr = robust_utility_with(&ev, cfg, &alloc, eval_seed)?;
                let objective = rr.objective(cfg.lambda);
                (rr, objective)
            }
            ObjectiveMode::NonRobust => {
                let (optimal, red_utility) = red_optimal_with(
                    &ev,
                    alloc.values(),
                    cfg.n_restarts,
                    mix_seed(eval_seed, 1),
                )?;
                let blue_utility = ev.utility(Side::Blue, alloc.values(), optimal.values());
                let rr = RedResponses {
                    adversarial: optimal.clone(),
                    optimal,
                    red_utility_optimal: red_utility,
                    red_utility_adversarial: red_utility,
                    blue_utility_optimal: blue_utility,
                    blue_utility_adversarial: blue_utility,
                    additive_fallback: false,
                };
                (rr, blue_utility)
            }
        };
        Ok(SampleRecord {
            index,
            source,
            allocation: alloc.values().to_vec(),
            responses,
            objective,
            cv_r2: None,
        })
    };

    let push_record = |trace: &mut SolveTrace,
                           sink: &mut Option<TraceSink>,
                           record: SampleRecord|
     -> Result<()> {
        if let Some(s) = sink.as_mut() {
            s.push(record.clone())?;
        }
        trace.samples.push(record);
        if let Some(p) = progress {
            p(trace.samples.len(), cfg.max_samples);
        }
        Ok(())
    };

    // A single fishery has a single feasible allocation.
    if k == 1 {
        if trace.samples.is_empty() {
            let alloc = Allocation::new(vec![budget], budget)?;
            let record = eval_at(0, SampleSource::Lhs, alloc)?;
            push_record(&mut trace, &mut sink, record)?;
        }
        let s = trace.samples[0].clone();
        let report = FinalReport {
            surface_argmax: s.allocation.clone(),
            surface_argmax_objective: s.objective,
            surface_argmax_responses: s.responses.clone(),
            best_sample_index: 0,
            reported_source: ReportedSource::Sampled,
            reported: s.allocation.clone(),
            reported_objective: s.objective,
        };
        trace.final_report = Some(report.clone());
        if let Some(s) = sink.take() {
            s.finish(None, report)?;
        }
        let alloc = Allocation::normalized(&trace.samples[0].allocation, budget)?;
        return Ok((alloc, trace));
    }

    let stage1 = cfg.n_lhs + cfg.n_unilateral;
    let lhs_block = latin_hypercube_simplex(cfg.n_lhs, k, budget, mix_seed(seed, SALT_LHS_BLOCK));

    // Initial-design and adequacy-phase allocations are pure functions of
    // the record index, which is what makes interrupted runs resumable.
    let planned = |index: usize| -> Result<(SampleSource, Allocation)> {
        let is_unilateral = if index < cfg.n_lhs {
            false
        } else if index < stage1 {
            true
        } else {
            (index - stage1) % 2 == 1
        };
        if is_unilateral {
            let init = random_allocation(k, budget, mix_seed(seed, SALT_UNI_INIT.wrapping_add(index as u64)));
            let alloc = heuristic_response_with(
                &ev,
                &init,
                cfg.heuristic_rounds,
                mix_seed(seed, SALT_UNI.wrapping_add(index as u64)),
            )?;
            Ok((SampleSource::Unilateral, alloc))
        } else if index < cfg.n_lhs {
            Ok((SampleSource::Lhs, lhs_block[index].clone()))
        } else {
            let alloc =
                latin_hypercube_simplex(1, k, budget, mix_seed(seed, SALT_LHS_SINGLE.wrapping_add(index as u64)))
                    .remove(0);
            Ok((SampleSource::Lhs, alloc))
        }
    };

    // Stage 1: fill in whatever part of the initial design is missing. The
    // sample set is predetermined, so evaluations run in parallel.
    if trace.samples.len() < stage1 {
        let missing: Vec<usize> = (trace.samples.len()..stage1).collect();
        let records: Vec<SampleRecord> = missing
            .par_iter()
            .map(|&i| {
                let (source, alloc) = planned(i)?;
                eval_at(i, source, alloc)
            })
            .collect::<Result<Vec<_>>>()?;
        for record in records {
            push_record(&mut trace, &mut sink, record)?;
        }
    }

    // A resumed run may have stopped mid-way through an adequacy pair.
    let has_surface_samples = trace
        .samples
        .iter()
        .any(|s| s.source == SampleSource::Surface);
    if !has_surface_samples && (trace.samples.len() - stage1) % 2 == 1 {
        let index = trace.samples.len();
        let (source, alloc) = planned(index)?;
        let record = eval_at(index, source, alloc)?;
        push_record(&mut trace, &mut sink, record)?;
    }

    // Stage 2: fit the surface and gate on cross-validated R^2, growing
    // the design one LHS + one heuristic sample at a time until adequate.
    let grid = default_grid();
    let first_surface = trace
        .samples
        .iter()
        .position(|s| s.source == SampleSource::Surface);
    let (hyperparams, selection_cv) = match first_surface {
        Some(prefix_len) => {
            // Adequacy passed before the interruption; re-derive the same
            // selection from the same prefix.
            let data = dataset_from(&trace.samples[..prefix_len]);
            cross_validate_select(&data, &grid, FOLDS)?
        }
        None => loop {
            let data = dataset_from(&trace.samples);
            let (hp, cv) = cross_validate_select(&data, &grid, FOLDS)?;
            if let Some(last) = trace.samples.last_mut() {
                last.cv_r2 = Some(cv);
            }
            if let Some(s) = sink.as_mut() {
                s.attach_cv(cv);
            }
            if cv > cfg.adequacy_r2 {
                break (hp, cv);
            }
            if trace.samples.len() >= cfg.max_samples {
                return Err(Error::SurfaceInadequate {
                    r2: cv,
                    threshold: cfg.adequacy_r2,
                    samples: trace.samples.len(),
                });
            }
            for _ in 0..2 {
                if trace.samples.len() >= cfg.max_samples {
                    break;
                }
                let index = trace.samples.len();
                let (source, alloc) = planned(index)?;
                let record = eval_at(index, source, alloc)?;
                push_record(&mut trace, &mut sink, record)?;
            }
        },
    };

    let mut dataset = dataset_from(&trace.samples);
    let mut surface = fit_boosted_trees(&dataset, hyperparams)?;
    surface.cv_r2 = Some(selection_cv);

    // Stages 3-4: propose from the bounded surface argmax, evaluate for
    // real, refit (reusing the selected hyperparameters) until the cap.
    while trace.samples.len() < cfg.max_samples {
        let index = trace.samples.len();
        let alloc = select_surface_sample(&surface, k, budget, cfg, seed, index)?;
        let record = eval_at(index, SampleSource::Surface, alloc)?;
        dataset.push(record.allocation.clone(), record.objective);
        push_record(&mut trace, &mut sink, record)?;
        surface = fit_boosted_trees(&dataset, hyperparams)?;
        surface.cv_r2 = Some(selection_cv);
    }

    // Stage 5: the surface argmax, evaluated for real. Report it, unless a
    // sampled point's true objective beat it.
    let argmax_alloc = surface_argmax(&surface, &trace, k, budget, cfg, seed)?;
    let argmax_record = eval_at(usize::MAX, SampleSource::Surface, argmax_alloc.clone())?;
    let best_sample = trace.best_sample().expect("nonempty samples").clone();
    let (reported_source, reported, reported_objective) =
        if argmax_record.objective >= best_sample.objective {
            (
                ReportedSource::SurfaceArgmax,
                argmax_alloc.values().to_vec(),
                argmax_record.objective,
            )
        } else {
            (
                ReportedSource::Sampled,
                best_sample.allocation.clone(),
                best_sample.objective,
            )
        };
    let report = FinalReport {
        surface_argmax: argmax_alloc.values().to_vec(),
        surface_argmax_objective: argmax_record.objective,
        surface_argmax_responses: argmax_record.responses,
        best_sample_index: best_sample.index,
        reported_source,
        reported: reported.clone(),
        reported_objective,
    };
    trace.surface = Some(surface);
    trace.final_report = Some(report.clone());
    if let Some(s) = sink.take() {
        s.finish(trace.surface.clone(), report)?;
    }
    let alloc = Allocation::normalized(&reported, budget)?;
    Ok((alloc, trace))
}

/// Solves the bounded sample-selection problem: maximize the surface over
/// the simplex subject to a random upper or lower bound on one fishery's
/// budget share. Degenerate or unsolvable draws are redrawn; after 20
/// failures the bound is dropped.
fn select_surface_sample(
    surface: &TreeEnsemble,
    k: usize,
    budget: f64,
    cfg: &SolverConfig,
    seed: u64,
    index: usize,
) -> Result<Allocation> {
    let opts = surface_opts(budget, k);
    let objective = move |x: &[f64]| predict(surface, &onto_simplex(x, budget));
    for attempt in 0..20u64 {
        let draw_seed = mix_seed(seed, SALT_BOUND.wrapping_add((index as u64).wrapping_mul(32)).wrapping_add(attempt));
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        let fishery = rng.random_range(0..k);
        let share: f64 = rng.random_range(0.0..1.0);
        let upper: bool = rng.random();
        if upper && share == 0.0 {
            continue;
        }
        let bound = move |x: &[f64]| {
            let p = onto_simplex(x, budget);
            if upper {
                share * budget - p[fishery]
            } else {
                p[fishery] - share * budget
            }
        };
        let mut prob = OptProblem::new(&objective, Goal::Maximize, vec![(0.0, budget); k]);
        prob.starts = StartKind::SimplexScaled { budget };
        prob.inequality.push(Constraint::with_scale(bound, budget));
        let solved = multistart_minimize(
            &prob,
            cfg.n_restarts,
            mix_seed(seed, SALT_SURF.wrapping_add((index as u64).wrapping_mul(32)).wrapping_add(attempt)),
            &opts,
        );
        if let Ok(r) = solved {
            let alloc = Allocation::normalized(&r.x, budget)?;
            let residual = if upper {
                share * budget - alloc.values()[fishery]
            } else {
                alloc.values()[fishery] - share * budget
            };
            if residual >= -1e-6 * budget {
                return Ok(alloc);
            }
        }
    }
    let mut prob = OptProblem::new(&objective, Goal::Maximize, vec![(0.0, budget); k]);
    prob.starts = StartKind::SimplexScaled { budget };
    let r = multistart_minimize(
        &prob,
        cfg.n_restarts,
        mix_seed(seed, SALT_SURF.wrapping_add((index as u64).wrapping_mul(32)).wrapping_add(31)),
        &opts,
    )?;
    Allocation::normalized(&r.x, budget)
}

/// Unbounded surface argmax for the final estimate. The best sampled point
/// seeds one extra local run so a sharp sampled optimum is not lost to the
/// surface's plateaus.
fn surface_argmax(
    surface: &TreeEnsemble,
    trace: &SolveTrace,
    k: usize,
    budget: f64,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<Allocation> {
    let opts = surface_opts(budget, k);
    let objective = move |x: &[f64]| predict(surface, &onto_simplex(x, budget));
    let mut prob = OptProblem::new(&objective, Goal::Maximize, vec![(0.0, budget); k]);
    prob.starts = StartKind::SimplexScaled { budget };
    let multi = multistart_minimize(&prob, cfg.n_restarts, mix_seed(seed, SALT_FINAL), &opts);
    let from_best = match trace.best_sample() {
        Some(best) => minimize_constrained(&prob, &best.allocation, &opts),
        None => Err(Error::Infeasible),
    };
    let r = reduce_runs(Goal::Maximize, vec![multi, from_best])?;
    Allocation::normalized(&r.x, budget)
}
