//! Derivative-free constrained optimization and sampling designs.
//!
//! The workhorse is COBYLA (linear-approximation trust region, arbitrary
//! inequality constraints, no derivatives) behind [`minimize_constrained`],
//! plus a seeded multistart wrapper, a bounded scalar search, and
//! Latin-hypercube sampling scaled onto budget simplexes.

use std::cell::Cell;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bioeconomics::Allocation;
use crate::{Error, Result};

/// A scalar constraint function, required to be `>= 0` at feasible points.
pub struct Constraint<'a> {
    f: Box<dyn Fn(&[f64]) -> f64 + Sync + Send + 'a>,
    scale: f64,
}

impl<'a> Constraint<'a> {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Sync + Send + 'a) -> Self {
        Constraint {
            f: Box::new(f),
            scale: 1.0,
        }
    }

    /// `scale` sets the unit in which the 1e-6 feasibility tolerance is read.
    pub fn with_scale(f: impl Fn(&[f64]) -> f64 + Sync + Send + 'a, scale: f64) -> Self {
        Constraint {
            f: Box::new(f),
            scale: scale.abs().max(1.0),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

/// How multistart draws its initial points.
#[derive(Debug, Clone, Copy)]
pub enum StartKind {
    /// Uniform in the bounding box.
    BoundsUniform,
    /// Uniform on the scaled simplex (flat Dirichlet), for budget problems.
    SimplexScaled { budget: f64 },
}

/// A constrained optimization problem over a bounded box.
pub struct OptProblem<'a> {
    pub objective: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub goal: Goal,
    /// Required `>= 0` at feasible points.
    pub inequality: Vec<Constraint<'a>>,
    /// Required `= 0` within tolerance; encoded as paired inequalities.
    pub equality: Vec<Constraint<'a>>,
    pub bounds: Vec<(f64, f64)>,
    pub starts: StartKind,
}

impl<'a> OptProblem<'a> {
    pub fn new(
        objective: &'a (dyn Fn(&[f64]) -> f64 + Sync),
        goal: Goal,
        bounds: Vec<(f64, f64)>,
    ) -> Self {
        OptProblem {
            objective,
            goal,
            inequality: Vec::new(),
            equality: Vec::new(),
            bounds,
            starts: StartKind::BoundsUniform,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::InvalidParameter("zero-dimensional problem".into()));
        }
        for &(lo, hi) in &self.bounds {
            if !(lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "empty bound interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Trust-region sizing and budget knobs.
#[derive(Debug, Clone, Copy)]
pub struct OptOptions {
    /// Initial trust-region radius; default 0.1 x smallest bound width.
    pub rhobeg: Option<f64>,
    /// Final trust-region radius; default 1e-6 x smallest bound width.
    pub rhoend: Option<f64>,
    /// Objective evaluation budget per local run; default 500 x dimension.
    pub max_eval: Option<usize>,
    /// Scaled feasibility tolerance.
    pub feas_tol: f64,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            rhobeg: None,
            rhoend: None,
            max_eval: None,
            feas_tol: 1e-6,
        }
    }
}

impl OptOptions {
    fn resolve(&self, bounds: &[(f64, f64)]) -> (f64, f64, usize) {
        let min_width = bounds
            .iter()
            .map(|&(lo, hi)| hi - lo)
            .fold(f64::INFINITY, f64::min);
        let rhobeg = self.rhobeg.unwrap_or(0.1 * min_width);
        let rhoend = self.rhoend.unwrap_or(1e-6 * min_width).min(rhobeg);
        let max_eval = self.max_eval.unwrap_or(500 * bounds.len());
        (rhobeg, rhoend, max_eval)
    }
}

/// Result of a constrained minimization.
#[derive(Debug, Clone)]
pub struct OptResult {
    pub x: Vec<f64>,
    /// Objective value in the problem's own orientation.
    pub value: f64,
    /// All constraints within the scaled feasibility tolerance.
    pub feasible: bool,
    pub evaluations: usize,
}

fn constraint_violation(prob: &OptProblem, x: &[f64], feas_tol: f64) -> (bool, f64) {
    let mut worst = 0.0f64;
    for c in &prob.inequality {
        let v = c.eval(x);
        worst = worst.max((-v / c.scale).max(0.0));
    }
    for c in &prob.equality {
        let v = c.eval(x);
        worst = worst.max(v.abs() / c.scale);
    }
    (worst <= feas_tol, worst)
}

/// Local solution of `prob` from `x0` via COBYLA. Equality constraints are
/// handed to the solver as paired inequalities. Deterministic given
/// `(prob, x0, opts)`. Infeasible starts are repaired by the solver's own
/// violation-first phase; an error is returned only when the run produces
/// no usable point at all.
pub fn minimize_constrained(prob: &OptProblem, x0: &[f64], opts: &OptOptions) -> Result<OptResult> {
    prob.validate()?;
    if x0.len() != prob.dim() {
        return Err(Error::DimensionMismatch(format!(
            "start of dimension {} for a {}-dimensional problem",
            x0.len(),
            prob.dim()
        )));
    }
    let (rhobeg, rhoend, max_eval) = opts.resolve(&prob.bounds);
    let sign = match prob.goal {
        Goal::Minimize => 1.0,
        Goal::Maximize => -1.0,
    };
    let evals = Cell::new(0usize);
    let objective = |x: &[f64], _: &mut ()| {
        evals.set(evals.get() + 1);
        sign * (prob.objective)(x)
    };

    // One closure site so every wrapper shares a concrete type.
    let mut raw: Vec<(&Constraint, f64)> = Vec::new();
    for c in &prob.inequality {
        raw.push((c, 1.0));
    }
    for c in &prob.equality {
        raw.push((c, 1.0));
        raw.push((c, -1.0));
    }
    let wrappers: Vec<_> = raw
        .iter()
        .map(|(c, s)| move |x: &[f64], _: &mut ()| *s * c.eval(x))
        .collect();
    let cons: Vec<&dyn cobyla::Func<()>> = wrappers
        .iter()
        .map(|w| w as &dyn cobyla::Func<()>)
        .collect();

    let stop = cobyla::StopTols {
        xtol_abs: vec![rhoend; prob.dim()],
        ..Default::default()
    };
    let outcome = cobyla::minimize(
        objective,
        x0,
        &prob.bounds,
        &cons,
        (),
        max_eval,
        cobyla::RhoBeg::All(rhobeg),
        Some(stop),
    );
    let x = match outcome {
        Ok((_, x, _)) => x,
        // Round-off-limited and friends still return the best point visited.
        Err((_, x, _)) => x,
    };
    if x.len() != prob.dim() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Infeasible);
    }
    let clamped: Vec<f64> = x
        .iter()
        .zip(&prob.bounds)
        .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
        .collect();
    let value = (prob.objective)(&clamped);
    let (feasible, _) = constraint_violation(prob, &clamped, opts.feas_tol);
    Ok(OptResult {
        x: clamped,
        value,
        feasible,
        evaluations: evals.get() + 1,
    })
}

/// Draws one feasible start according to the problem's start kind.
fn draw_start(prob: &OptProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match prob.starts {
        StartKind::BoundsUniform => prob
            .bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..hi))
            .collect(),
        StartKind::SimplexScaled { budget } => dirichlet_uniform(prob.dim(), budget, rng),
    }
}

/// Best feasible result over `n_starts` seeded random starts. Starts are
/// drawn from a single RNG stream, so a longer run extends a shorter one
/// and the best value never worsens as `n_starts` grows. Ties in value are
/// broken by the lowest start index. Errors only when no start yields a
/// feasible point.
pub fn multistart_minimize(
    prob: &OptProblem,
    n_starts: usize,
    rng_seed: u64,
    opts: &OptOptions,
) -> Result<OptResult> {
    prob.validate()?;
    if n_starts == 0 {
        return Err(Error::InvalidParameter("n_starts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let starts: Vec<Vec<f64>> = (0..n_starts).map(|_| draw_start(prob, &mut rng)).collect();
    let runs: Vec<Result<OptResult>> = starts
        .par_iter()
        .map(|s| minimize_constrained(prob, s, opts))
        .collect();
    reduce_runs(prob.goal, runs)
}

/// Deterministic reduction: best feasible value, ties to the earliest run.
pub(crate) fn reduce_runs(goal: Goal, runs: Vec<Result<OptResult>>) -> Result<OptResult> {
    let mut best: Option<OptResult> = None;
    let mut evaluations = 0usize;
    for run in runs {
        let r = match run {
            Ok(r) => r,
            Err(_) => continue,
        };
        evaluations += r.evaluations;
        if !r.feasible {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => match goal {
                Goal::Minimize => r.value < b.value,
                Goal::Maximize => r.value > b.value,
            },
        };
        if better {
            best = Some(r);
        }
    }
    match best {
        Some(mut b) => {
            b.evaluations = evaluations;
            Ok(b)
        }
        None => Err(Error::Infeasible),
    }
}

/// Bounded scalar minimization by golden-section search with successive
/// parabolic interpolation (Brent), refined to `1e-8 * (hi - lo)`. The
/// endpoints are evaluated explicitly and win ties toward the smaller `x`.
pub fn scalar_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    assert!(lo < hi, "scalar_minimize needs lo < hi");
    let xatol = 1e-8 * (hi - lo);
    let golden_mean = 0.5 * (3.0 - 5.0f64.sqrt());
    let (mut a, mut b) = (lo, hi);
    let mut xf = a + golden_mean * (b - a);
    let (mut x1, mut x2) = (xf, xf);
    let mut fx = f(xf);
    let (mut fx1, mut fx2) = (fx, fx);
    let mut d = 0.0f64;
    let mut e = 0.0f64;
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = 1e-11 * xf.abs() + xatol / 3.0;
        let tol2 = 2.0 * tol1;
        if (xf - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // Try a parabolic step through (x1, fx1), (xf, fx), (x2, fx2).
            let r = (xf - x1) * (fx - fx2);
            let mut q = (xf - x2) * (fx - fx1);
            let mut p = (xf - x2) * q - (xf - x1) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - xf) && p < q * (b - xf) {
                d = p / q;
                let u = xf + d;
                if (u - a) < tol2 || (b - u) < tol2 {
                    d = if xm >= xf { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if xf >= xm { a - xf } else { b - xf };
            d = golden_mean * e;
        }
        let u = xf + if d.abs() >= tol1 {
            d
        } else if d > 0.0 {
            tol1
        } else {
            -tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u >= xf {
                a = xf;
            } else {
                b = xf;
            }
            x1 = x2;
            fx1 = fx2;
            x2 = xf;
            fx2 = fx;
            xf = u;
            fx = fu;
        } else {
            if u < xf {
                a = u;
            } else {
                b = u;
            }
            if fu <= fx2 || x2 == xf {
                x1 = x2;
                fx1 = fx2;
                x2 = u;
                fx2 = fu;
            } else if fu <= fx1 || x1 == xf || x1 == x2 {
                x1 = u;
                fx1 = fu;
            }
        }
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    let mut best = (lo, f_lo);
    if fx < best.1 {
        best = (xf, fx);
    }
    if f_hi < best.1 {
        best = (hi, f_hi);
    }
    best
}

/// Standard Latin hypercube on the unit cube: each coordinate's `n` values
/// land in distinct 1/n strata.
pub fn latin_hypercube(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; k]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for dim in 0..k {
        use rand::seq::SliceRandom;
        strata.shuffle(rng);
        for (i, point) in points.iter_mut().enumerate() {
            point[dim] = (strata[i] as f64 + rng.random_range(0.0..1.0)) / n as f64;
        }
    }
    points
}

/// Latin hypercube on the unit cube, scaled row-by-row onto the budget
/// simplex. Deterministic given `rng_seed`.
pub fn latin_hypercube_simplex(n: usize, k: usize, budget: f64, rng_seed: u64) -> Vec<Allocation> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let raw = latin_hypercube(n, k, &mut rng);
    raw.into_iter()
        .map(|mut row| loop {
            if row.iter().sum::<f64>() > 0.0 {
                // Scaling cannot fail on a positive-sum row.
                return Allocation::normalized(&row, budget).expect("positive-sum row");
            }
            // All-zero raw sample: probability zero, redrawn anyway.
            row = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        })
        .collect()
}

/// Derives an independent stream seed from a base seed and a salt
/// (splitmix64 finalizer). Used to key every stochastic sub-step of a run
/// so that interrupted and resumed runs draw identical values.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw from the scaled simplex (flat Dirichlet via exponentials).
pub fn dirichlet_uniform(k: usize, budget: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..k)
            .map(|_| -(1.0 - rng.random_range(0.0..1.0f64)).ln())
            .collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.iter().map(|&e| e * budget / sum).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equality_constraint_projection() {
        // minimize (x0 - 1)^2 + (x1 - 2)^2 s.t. x0 + x1 = 1  ->  (0, 1), value 2.
        let objective = |x: &[f64]| (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2);
        let mut prob = OptProblem::new(&objective, Goal::Minimize, vec![(-10.0, 10.0); 2]);
        prob.equality.push(Constraint::new(|x| x[0] + x[1] - 1.0));
        let opts = OptOptions {
            rhoend: Some(1e-9),
            max_eval: Some(5000),
            ..Default::default()
        };
        let r = minimize_constrained(&prob, &[0.5, 0.5], &opts).unwrap();
        assert!(r.feasible);
        assert!((r.x[0]).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "x = {:?}", r.x);
        assert!((r.value - 2.0).abs() < 1e-4);
    }

    #[test]
    fn unconstrained_convex_bowl() {
        let objective = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let prob = OptProblem::new(&objective, Goal::Minimize, vec![(-1.0, 1.0); 4]);
        let opts = OptOptions {
            rhoend: Some(1e-9),
            ..Default::default()
        };
        let r = minimize_constrained(&prob, &[0.9, -0.8, 0.7, -0.6], &opts).unwrap();
        assert!(r.value < 1e-8, "value = {}", r.value);
    }

    #[test]
    fn linear_program_on_simplex() {
        // maximize c.x on the simplex: all budget onto the best coordinate.
        let c = [1.0, 3.0, 2.0];
        let budget = 6.0;
        let objective = move |x: &[f64]| {
            let s: f64 = x.iter().sum();
            if s <= 0.0 {
                return 0.0;
            }
            let scale = budget / s;
            x.iter().zip(&c).map(|(v, ci)| v * scale * ci).sum::<f64>()
        };
        let mut prob = OptProblem::new(&objective, Goal::Maximize, vec![(0.0, budget); 3]);
        prob.starts = StartKind::SimplexScaled { budget };
        let r = multistart_minimize(&prob, 8, 99, &OptOptions::default()).unwrap();
        assert!((r.value - 18.0).abs() < 1e-3, "value = {}", r.value);
    }

    #[test]
    fn multistart_single_start_matches_local() {
        let objective = |x: &[f64]| (x[0] - 0.3).powi(2);
        let prob = OptProblem::new(&objective, Goal::Minimize, vec![(0.0, 1.0)]);
        let opts = OptOptions::default();
        let multi = multistart_minimize(&prob, 1, 7, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let start = draw_start(&prob, &mut rng);
        let single = minimize_constrained(&prob, &start, &opts).unwrap();
        assert_eq!(multi.x, single.x);
        assert_eq!(multi.value, single.value);
    }

    #[test]
    fn multistart_monotone_in_starts() {
        // Rastrigin-flavored multimodal curve in 2-d.
        let objective = |x: &[f64]| {
            x.iter()
                .map(|v| v * v - 2.0 * (6.0 * v).cos())
                .sum::<f64>()
        };
        let prob = OptProblem::new(&objective, Goal::Minimize, vec![(-3.0, 3.0); 2]);
        let opts = OptOptions::default();
        let mut prev = f64::INFINITY;
        for n in 1..=6 {
            let r = multistart_minimize(&prob, n, 1234, &opts).unwrap();
            assert!(
                r.value <= prev + 1e-12,
                "value worsened from {prev} to {} at n = {n}",
                r.value
            );
            prev = r.value;
        }
    }

    #[test]
    fn feasibility_flag_is_checked() {
        let objective = |x: &[f64]| x[0];
        let mut prob = OptProblem::new(&objective, Goal::Minimize, vec![(-5.0, 5.0)]);
        // Feasible set: x >= 1. Minimum at the constraint boundary.
        prob.inequality.push(Constraint::new(|x| x[0] - 1.0));
        let r = multistart_minimize(&prob, 4, 5, &OptOptions::default()).unwrap();
        assert!(r.feasible);
        assert!((r.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn scalar_quadratic() {
        let (x, v) = scalar_minimize(|x| (x - 3.0).powi(2), 0.0, 10.0);
        assert!((x - 3.0).abs() < 1e-6);
        assert!(v < 1e-10);
    }

    #[test]
    fn scalar_monotone_hits_endpoint() {
        let (x, _) = scalar_minimize(|x| x, 0.0, 1.0);
        assert_eq!(x, 0.0);
        let (x, _) = scalar_minimize(|x| -x, 0.0, 1.0);
        assert_eq!(x, 1.0);
    }

    #[test]
    fn lhs_stratification() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts = latin_hypercube(4, 2, &mut rng);
        for dim in 0..2 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[dim] * 4.0) as usize).collect();
            bins.sort_unstable();
            assert_eq!(bins, vec![0, 1, 2, 3], "dim {dim} not stratified");
        }
    }

    #[test]
    fn lhs_simplex_sums_and_determinism() {
        let a = latin_hypercube_simplex(20, 10, 600.0, 77);
        for alloc in &a {
            let sum: f64 = alloc.values().iter().sum();
            assert!((sum - 600.0).abs() < 1e-9);
        }
        let b = latin_hypercube_simplex(20, 10, 600.0, 77);
        assert_eq!(a, b);
        // Scaling example: (0.2, 0.3, 0.5) -> (120, 180, 300).
        let alloc = Allocation::normalized(&[0.2, 0.3, 0.5], 600.0).unwrap();
        assert_eq!(alloc.values(), &[120.0, 180.0, 300.0]);
    }
}
