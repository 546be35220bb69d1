//! Best-response fishing levels and polynomial equilibrium surrogates.
//!
//! For fixed patrols, each side's optimal fishing level given the other's
//! is a smooth function wherever fishing is profitable at all. That makes
//! a two-step surrogate pipeline work: fit a polynomial to each side's
//! best response over a Latin-hypercube design, solve the two-polynomial
//! fixed point for equilibrium fishing levels, then fit a second
//! polynomial mapping the patrol pair in each fishery directly to those
//! equilibrium levels. The second model is what the game layer evaluates,
//! thousands of times per patrol optimization.
//!
//! Patrols enter profits only through the scalar unit cost, which is a
//! known closed form with a clamp kink. The surrogates are therefore
//! parameterized by unit costs rather than raw patrol counts: the kink is
//! absorbed exactly by the cost formula, the fitted surface is smooth, and
//! one input dimension disappears. Callers still see patrol-count
//! interfaces; the translation happens inside the models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bioeconomics::{
    unit_cost, CostParams, FisheryParams, FishingLevels, Scenario, Side, SteadyStateSolver,
};
use crate::optim::{latin_hypercube, mix_seed, scalar_minimize};
use crate::poly::{r_squared, Polynomial};
use crate::{Error, Result};

/// Held-out R^2 a surrogate must reach to be accepted.
pub const SURROGATE_R2_ACCEPT: f64 = 0.98;
/// Degree-3 fits are tried first and escalated while the held-out score
/// stays under the acceptance bar.
const DEGREE_LADDER: [u32; 4] = [3, 4, 5, 6];
/// Grid size of the piecewise-linear zero-boundary curves.
const BOUNDARY_GRID: usize = 129;

/// In-sample / held-out fit quality pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitQuality {
    pub in_sample: f64,
    pub held_out: f64,
}

/// One scalar output model: a polynomial whose predictions are clamped to
/// `>= 0`, or the constant-zero model when the response never turns on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelModel {
    poly: Option<Polynomial>,
    pub fit: FitQuality,
}

impl LevelModel {
    fn zero() -> Self {
        LevelModel {
            poly: None,
            fit: FitQuality {
                in_sample: 1.0,
                held_out: 1.0,
            },
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_raw(x).max(0.0)
    }

    /// Unclamped polynomial value (negative in the switched-off region).
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        match &self.poly {
            Some(p) => p.eval(x),
            None => 0.0,
        }
    }

    /// Derivative of the clamped prediction with respect to input `dim`.
    pub fn partial(&self, x: &[f64], dim: usize) -> f64 {
        match &self.poly {
            Some(p) => {
                if p.eval(x) > 0.0 {
                    p.partial(x, dim)
                } else {
                    0.0
                }
            }
            None => 0.0,
        }
    }

    pub fn polynomial(&self) -> Option<&Polynomial> {
        self.poly.as_ref()
    }
}

/// Fits a clamped polynomial to `(xs, ys)`, escalating the degree until the
/// held-out R^2 clears the acceptance bar. The returned model is refit on
/// all samples at the chosen degree.
fn fit_level_model(
    xs: &[Vec<f64>],
    ys: &[f64],
    bounds: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> Result<LevelModel> {
    let m = xs.len();
    let mut order: Vec<usize> = (0..m).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);
    let n_test = (m / 5).max(1);
    let (test_idx, train_idx) = order.split_at(n_test);

    let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| xs[i].clone()).collect();
    let train_y: Vec<f64> = train_idx.iter().map(|&i| ys[i]).collect();
    let test_x: Vec<Vec<f64>> = test_idx.iter().map(|&i| xs[i].clone()).collect();
    let test_y: Vec<f64> = test_idx.iter().map(|&i| ys[i]).collect();

    let terms = |d: u32| crate::poly::multi_indices(bounds.len(), d).len();
    let mut degrees: Vec<u32> = DEGREE_LADDER
        .iter()
        .copied()
        .filter(|&d| train_x.len() >= 2 * terms(d))
        .collect();
    if degrees.is_empty() {
        // Sparse data: the largest low degree that is still over-determined,
        // down to a constant fit.
        for d in [2, 1, 0] {
            if train_x.len() >= terms(d) + 2 || d == 0 {
                degrees.push(d);
                break;
            }
        }
    }
    let mut best: Option<(Polynomial, f64)> = None;
    for degree in degrees {
        let poly = Polynomial::fit(&train_x, &train_y, degree, bounds)?;
        let preds: Vec<f64> = test_x.iter().map(|x| poly.eval(x).max(0.0)).collect();
        let r2 = r_squared(&preds, &test_y);
        let improved = match &best {
            None => true,
            Some((_, prev)) => r2 > *prev,
        };
        if improved {
            best = Some((poly, r2));
        }
        if r2 >= SURROGATE_R2_ACCEPT {
            break;
        }
    }
    let (probe, held_out) = best.ok_or_else(|| Error::InvalidParameter("empty fit".into()))?;
    if held_out < SURROGATE_R2_ACCEPT {
        return Err(Error::FitRejected {
            r2: held_out,
            threshold: SURROGATE_R2_ACCEPT,
        });
    }
    let poly = Polynomial::fit(xs, ys, probe.degree(), bounds)?;
    let in_preds: Vec<f64> = xs.iter().map(|x| poly.eval(x).max(0.0)).collect();
    let in_sample = r_squared(&in_preds, ys);
    Ok(LevelModel {
        poly: Some(poly),
        fit: FitQuality {
            in_sample,
            held_out,
        },
    })
}

/// A monotone curve on a grid, evaluated by clamped linear interpolation.
/// Used for the zero-fishing boundaries in cost space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl CostCurve {
    fn build(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        if !(hi > lo) {
            return CostCurve {
                xs: vec![lo],
                ys: vec![f(lo)],
            };
        }
        let xs: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let ys = xs.iter().map(|&x| f(x)).collect();
        CostCurve { xs, ys }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 || x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let step = (self.xs[n - 1] - self.xs[0]) / (n - 1) as f64;
        let i = (((x - self.xs[0]) / step) as usize).min(n - 2);
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }
}

/// The per-side cost coefficients a fitted model carries so it can map
/// patrol counts to the unit cost it was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMap {
    pub base: f64,
    pub pressure: f64,
    pub offset: f64,
}

impl CostMap {
    pub fn for_side(cp: &CostParams, side: Side) -> Self {
        match side {
            Side::Blue => CostMap {
                base: cp.c_b,
                pressure: cp.beta_br,
                offset: cp.beta_bb,
            },
            Side::Red => CostMap {
                base: cp.c_r,
                pressure: cp.beta_rb,
                offset: cp.beta_rr,
            },
        }
    }

    pub fn cost(&self, p_own: f64, p_rival: f64) -> f64 {
        self.base + (self.pressure * p_rival - self.offset * p_own).max(0.0)
    }

    /// Reachable unit-cost interval when rival patrols range over
    /// `[0, p_rival_max]`.
    fn range(&self, p_rival_max: f64) -> (f64, f64) {
        (self.base, self.base + self.pressure * p_rival_max)
    }
}

/// Polynomial model of one side's best-response fishing level. Internally
/// a function of `(F_other, unit cost)`; the public surface takes patrol
/// counts and maps them through the exact cost formula.
///
/// The best response is positive exactly where the first unit of fishing
/// is profitable, i.e. where the unit cost is below the first-unit revenue
/// rate at the rival's effort. That boundary is carried as a curve, the
/// polynomial models only the positive branch, and predictions outside the
/// boundary are exactly zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestResponseModel {
    pub side: Side,
    pub model: LevelModel,
    pub cost_map: CostMap,
    /// First-unit revenue rate as a function of the rival's effort; the
    /// best response is zero at costs at or above this curve.
    pub profitable_cost_limit: CostCurve,
    /// Patrol-count domain `(F_other, P_own, P_rival)` the model serves.
    pub input_bounds: Vec<(f64, f64)>,
}

impl BestResponseModel {
    pub fn predict(&self, f_other: f64, p_own: f64, p_rival: f64) -> f64 {
        self.predict_at_cost(f_other, self.cost_map.cost(p_own, p_rival))
    }

    pub fn predict_at_cost(&self, f_other: f64, cost: f64) -> f64 {
        if cost >= self.profitable_cost_limit.eval(f_other) {
            return 0.0;
        }
        self.model.predict(&[f_other, cost])
    }

    /// Derivative of the prediction in the rival's effort.
    fn partial_f_other(&self, f_other: f64, cost: f64) -> f64 {
        if cost >= self.profitable_cost_limit.eval(f_other) {
            return 0.0;
        }
        self.model.partial(&[f_other, cost], 0)
    }
}

/// Per-fishery equilibrium surrogate, queried by patrol counts. The
/// equilibrium map is piecewise by regime and the model mirrors that
/// structure exactly: boundary curves decide which sides fish at all,
/// one-sided regimes delegate to the (already fitted) lone side's best
/// response to an empty fishery, and a polynomial pair covers the smooth
/// both-active region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FisheryEquilibrium {
    /// Both-active (duopoly) branch over `(blue cost, red cost)`.
    pub blue: LevelModel,
    pub red: LevelModel,
    /// Lone-side responses for the regimes where the rival is priced out.
    pub blue_response: BestResponseModel,
    pub red_response: BestResponseModel,
    pub blue_costs: CostMap,
    pub red_costs: CostMap,
    /// Blue fishes iff her cost is below this curve of Red's cost.
    pub blue_cost_limit: CostCurve,
    /// Red fishes iff his cost is below this curve of Blue's cost.
    pub red_cost_limit: CostCurve,
    /// Patrol-count domain `(P_B_i, P_R_i)` the model serves.
    pub input_bounds: Vec<(f64, f64)>,
}

impl FisheryEquilibrium {
    pub fn predict_levels(&self, p_b_i: f64, p_r_i: f64) -> (f64, f64) {
        let blue_cost = self.blue_costs.cost(p_b_i, p_r_i);
        let red_cost = self.red_costs.cost(p_r_i, p_b_i);
        let zero_b = blue_cost >= self.blue_cost_limit.eval(red_cost);
        let zero_r = red_cost >= self.red_cost_limit.eval(blue_cost);
        match (zero_b, zero_r) {
            (true, true) => (0.0, 0.0),
            (true, false) => (0.0, self.red_response.predict_at_cost(0.0, red_cost)),
            (false, true) => (self.blue_response.predict_at_cost(0.0, blue_cost), 0.0),
            (false, false) => {
                let costs = [blue_cost, red_cost];
                (self.blue.predict(&costs), self.red.predict(&costs))
            }
        }
    }
}

/// Equilibrium fishing levels as a function of patrols, one model pair per
/// fishery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumModel {
    pub per_fishery: Vec<FisheryEquilibrium>,
}

impl EquilibriumModel {
    pub fn fishery_count(&self) -> usize {
        self.per_fishery.len()
    }

    /// Predicted `(F_B, F_R)` in fishery `i`, clamped to be nonnegative.
    pub fn predict_levels(&self, i: usize, p_b_i: f64, p_r_i: f64) -> (f64, f64) {
        self.per_fishery[i].predict_levels(p_b_i, p_r_i)
    }
}

/// Both stages of the surrogate pipeline for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioModels {
    /// `(Blue, Red)` best-response models per fishery.
    pub best_responses: Vec<(BestResponseModel, BestResponseModel)>,
    pub equilibrium: EquilibriumModel,
}

/// Best response as a function of the rival's effort and this side's unit
/// cost. Sides differ only through the cost, so the core is side-free.
pub(crate) fn best_response_core(
    solver: &SteadyStateSolver,
    f_other: f64,
    own_cost: f64,
) -> f64 {
    let fp = solver.params();
    let f_max = fp.max_effort();
    let profit = |f: f64| {
        if f == 0.0 {
            return 0.0;
        }
        let x = solver.biomass(f + f_other);
        (fp.p * fp.q * x.powf(fp.gamma) - own_cost) * f
    };
    // Coarse scan to bracket the maximizer, then a bounded refinement.
    const SCAN: usize = 64;
    let mut best_i = 0;
    let mut best_v = profit(0.0);
    for i in 1..=SCAN {
        let f = f_max * i as f64 / SCAN as f64;
        let v = profit(f);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let lo = f_max * best_i.saturating_sub(1) as f64 / SCAN as f64;
    let hi = f_max * (best_i + 1).min(SCAN) as f64 / SCAN as f64;
    let (mut best_f, mut best_profit) = (f_max * best_i as f64 / SCAN as f64, best_v);
    if lo < hi {
        let (x, neg) = scalar_minimize(|f| -profit(f), lo, hi);
        if -neg > best_profit {
            best_f = x;
            best_profit = -neg;
        }
    }
    // Ties and unprofitable fisheries resolve to no fishing.
    if best_profit <= 0.0 {
        0.0
    } else {
        best_f
    }
}

/// Profit-maximizing fishing level of `side` over `[0, 2r/q]`, given the
/// rival's fishing level and both patrol counts in the fishery. Exactly 0
/// when no positive level is profitable.
pub fn best_response_fishing(
    f_other: f64,
    p_own: f64,
    p_rival: f64,
    fp: &FisheryParams,
    cp: &CostParams,
    side: Side,
) -> f64 {
    let solver = SteadyStateSolver::new(fp);
    best_response_core(&solver, f_other, unit_cost(p_own, p_rival, cp, side))
}

pub(crate) fn is_zero_fishing_core(
    solver: &SteadyStateSolver,
    own_cost: f64,
    rival_cost: f64,
) -> bool {
    let fp = solver.params();
    // The rival's best response when this side does not fish.
    let rival_level = best_response_core(solver, 0.0, rival_cost);
    let x = solver.biomass(rival_level);
    fp.p * fp.q * x.powf(fp.gamma) - own_cost <= 0.0
}

/// True iff `side`'s first unit of fishing earns nonpositive profit when
/// the rival plays their best response to this side not fishing; in that
/// case the side's equilibrium fishing level is exactly zero.
pub fn is_zero_fishing_optimal(
    p_own: f64,
    p_rival: f64,
    fp: &FisheryParams,
    cp: &CostParams,
    side: Side,
) -> bool {
    let solver = SteadyStateSolver::new(fp);
    is_zero_fishing_core(
        &solver,
        unit_cost(p_own, p_rival, cp, side),
        unit_cost(p_rival, p_own, cp, side.rival()),
    )
}

/// First-unit revenue rate at rival effort `f_other`: the unit cost below
/// which fishing turns profitable.
fn first_unit_revenue(solver: &SteadyStateSolver, f_other: f64) -> f64 {
    let fp = solver.params();
    fp.p * fp.q * solver.biomass(f_other).powf(fp.gamma)
}

/// Fits a polynomial best-response model for `side` in one fishery from a
/// Latin-hypercube design over `(F_other, unit cost)`.
///
/// The first-unit revenue rate delimits the region where the response is
/// positive, so the design is warped to cover exactly that region: the
/// rival-effort coordinate runs up to the break-even effort at the base
/// cost, and the cost coordinate fills the profitable interval at each
/// rival effort. Only the smooth positive branch is regressed; the
/// boundary curve handles the rest exactly. The held-out R^2 (20% split)
/// must clear [`SURROGATE_R2_ACCEPT`] or the fit is rejected.
pub fn fit_best_response_model(
    fp: &FisheryParams,
    cp: &CostParams,
    side: Side,
    doe_size: usize,
    p_own_max: f64,
    p_rival_max: f64,
    rng_seed: u64,
) -> Result<BestResponseModel> {
    if doe_size < 200 {
        return Err(Error::InvalidParameter(format!(
            "best-response DOE needs at least 200 points, got {doe_size}"
        )));
    }
    fp.validate()?;
    cp.validate()?;
    let solver = SteadyStateSolver::new(fp);
    let f_max = fp.max_effort();
    let cost_map = CostMap::for_side(cp, side);
    let (cost_lo, cost_hi) = cost_map.range(p_rival_max);
    let input_bounds = vec![(0.0, f_max), (0.0, p_own_max), (0.0, p_rival_max)];
    let profitable_cost_limit =
        CostCurve::build(0.0, f_max, BOUNDARY_GRID, |f| first_unit_revenue(&solver, f));

    // Break-even rival effort at the base cost; beyond it the response is
    // zero for every reachable cost.
    if first_unit_revenue(&solver, 0.0) <= cost_lo {
        return Ok(BestResponseModel {
            side,
            model: LevelModel::zero(),
            cost_map,
            profitable_cost_limit,
            input_bounds,
        });
    }
    let f_limit = {
        let (mut lo, mut hi) = (0.0, f_max);
        if first_unit_revenue(&solver, f_max) > cost_lo {
            hi = f_max;
            lo = f_max;
        } else {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if first_unit_revenue(&solver, mid) > cost_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        0.5 * (lo + hi)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut unit = latin_hypercube(doe_size, 2, &mut rng);
    // The base cost is an atom of the query distribution (rival pressure
    // fully offset), so that edge gets dedicated coverage.
    for row in latin_hypercube(doe_size / 8, 1, &mut rng) {
        unit.push(vec![row[0], 0.0]);
    }
    let mut xs = Vec::with_capacity(unit.len());
    let mut ys = Vec::with_capacity(unit.len());
    for row in unit {
        let f_other = row[0] * f_limit;
        let cap = first_unit_revenue(&solver, f_other).min(cost_hi);
        let cost = cost_lo + row[1] * (cap - cost_lo).max(0.0);
        xs.push(vec![f_other, cost]);
        ys.push(best_response_core(&solver, f_other, cost));
    }
    let bounds = vec![(0.0, f_limit), (cost_lo, cost_hi)];
    let model = fit_level_model(&xs, &ys, &bounds, &mut rng)?;
    Ok(BestResponseModel {
        side,
        model,
        cost_map,
        profitable_cost_limit,
        input_bounds,
    })
}

fn equilibrium_residual(
    f: (f64, f64),
    br_b: &impl Fn(f64) -> f64,
    br_r: &impl Fn(f64) -> f64,
) -> f64 {
    let gb = f.0 - br_b(f.1);
    let gr = f.1 - br_r(f.0);
    gb * gb + gr * gr
}

pub(crate) fn solve_equilibrium_core(
    solver: &SteadyStateSolver,
    blue_cost: f64,
    red_cost: f64,
    brm_b: &BestResponseModel,
    brm_r: &BestResponseModel,
) -> Result<FishingLevels> {
    solve_equilibrium_flagged(solver, blue_cost, red_cost, brm_b, brm_r).map(|(fl, _, _)| fl)
}

/// Like [`solve_equilibrium_core`] but also reports which sides were
/// pinned to zero by the first-unit profitability check.
pub(crate) fn solve_equilibrium_flagged(
    solver: &SteadyStateSolver,
    blue_cost: f64,
    red_cost: f64,
    brm_b: &BestResponseModel,
    brm_r: &BestResponseModel,
) -> Result<(FishingLevels, bool, bool)> {
    let zero_b = is_zero_fishing_core(solver, blue_cost, red_cost);
    let zero_r = is_zero_fishing_core(solver, red_cost, blue_cost);
    if zero_b && zero_r {
        return Ok((FishingLevels { blue: 0.0, red: 0.0 }, true, true));
    }
    if zero_b {
        return Ok((
            FishingLevels {
                blue: 0.0,
                red: brm_r.predict_at_cost(0.0, red_cost),
            },
            true,
            false,
        ));
    }
    if zero_r {
        return Ok((
            FishingLevels {
                blue: brm_b.predict_at_cost(0.0, blue_cost),
                red: 0.0,
            },
            false,
            true,
        ));
    }

    let f_max = solver.params().max_effort();
    let br_b = |f_r: f64| brm_b.predict_at_cost(f_r, blue_cost);
    let br_r = |f_b: f64| brm_r.predict_at_cost(f_b, red_cost);
    let tol = 1e-6 * f_max * f_max;

    // Damped polynomial best-response iteration gives the attracting fixed
    // point as the first start; the rest probe the box.
    let mut damped = (0.25 * f_max, 0.25 * f_max);
    for _ in 0..16 {
        let nb = br_b(damped.1).clamp(0.0, f_max);
        let nr = br_r(damped.0).clamp(0.0, f_max);
        damped = (0.5 * damped.0 + 0.5 * nb, 0.5 * damped.1 + 0.5 * nr);
    }
    let starts = [
        damped,
        (0.15 * f_max, 0.15 * f_max),
        (0.6 * f_max, 0.15 * f_max),
        (0.15 * f_max, 0.6 * f_max),
        (0.45 * f_max, 0.45 * f_max),
    ];

    let mut best: Option<((f64, f64), f64)> = None;
    for &start in &starts {
        let mut f = start;
        let mut res = equilibrium_residual(f, &br_b, &br_r);
        for _ in 0..80 {
            if res <= 0.01 * tol {
                break;
            }
            let gb = f.0 - br_b(f.1);
            let gr = f.1 - br_r(f.0);
            // Jacobian of the residual map, clamp-aware.
            let dbr_b = brm_b.partial_f_other(f.1, blue_cost);
            let dbr_r = brm_r.partial_f_other(f.0, red_cost);
            let (j00, j01, j10, j11) = (1.0, -dbr_b, -dbr_r, 1.0);
            let det = j00 * j11 - j01 * j10;
            let (dx0, dx1) = if det.abs() > 1e-9 {
                // Gauss-Newton step.
                (-(j11 * gb - j01 * gr) / det, -(-j10 * gb + j00 * gr) / det)
            } else {
                // Steepest descent on the squared residual.
                let g0 = 2.0 * (j00 * gb + j10 * gr);
                let g1 = 2.0 * (j01 * gb + j11 * gr);
                (-0.1 * g0, -0.1 * g1)
            };
            let mut t = 1.0;
            let mut improved = false;
            while t > 1e-6 {
                let cand = (
                    (f.0 + t * dx0).clamp(0.0, f_max),
                    (f.1 + t * dx1).clamp(0.0, f_max),
                );
                let cand_res = equilibrium_residual(cand, &br_b, &br_r);
                if cand_res < res {
                    f = cand;
                    res = cand_res;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().map_or(true, |(_, r)| res < *r) {
            best = Some((f, res));
        }
    }
    let ((fb, fr), res) = best.expect("at least one start");
    if res > tol {
        return Err(Error::NoConvergence { residual: res });
    }
    Ok((FishingLevels { blue: fb, red: fr }, false, false))
}

/// Mutual-best-response fishing levels for one fishery at the given patrol
/// counts, solved on the fitted polynomial best responses. Sides that are
/// provably out (first unit unprofitable) are pinned to zero first; the
/// rest is a bounded residual minimization over `[0, 2r/q]^2`.
pub fn solve_fishing_equilibrium(
    p_b_i: f64,
    p_r_i: f64,
    fp: &FisheryParams,
    cp: &CostParams,
    brm_b: &BestResponseModel,
    brm_r: &BestResponseModel,
) -> Result<FishingLevels> {
    let solver = SteadyStateSolver::new(fp);
    solve_equilibrium_core(
        &solver,
        unit_cost(p_b_i, p_r_i, cp, Side::Blue),
        unit_cost(p_r_i, p_b_i, cp, Side::Red),
        brm_b,
        brm_r,
    )
}

/// Fits the per-fishery equilibrium surrogates: a Latin-hypercube design
/// over the two sides' reachable unit costs, an equilibrium solve at every
/// point, and one clamped polynomial per output with its held-out R^2
/// recorded.
pub fn fit_equilibrium_model(
    sc: &Scenario,
    best_responses: &[(BestResponseModel, BestResponseModel)],
    doe_size: usize,
    rng_seed: u64,
) -> Result<EquilibriumModel> {
    sc.validate()?;
    if best_responses.len() != sc.k {
        return Err(Error::DimensionMismatch(format!(
            "{} best-response pairs for {} fisheries",
            best_responses.len(),
            sc.k
        )));
    }
    if doe_size < 200 {
        return Err(Error::InvalidParameter(format!(
            "equilibrium DOE needs at least 200 points per fishery, got {doe_size}"
        )));
    }
    let per_fishery: Vec<Result<FisheryEquilibrium>> = (0..sc.k)
        .into_par_iter()
        .map(|i| {
            let fp = &sc.fisheries[i];
            let (brm_b, brm_r) = &best_responses[i];
            let solver = SteadyStateSolver::new(fp);
            let blue_costs = CostMap::for_side(&sc.costs, Side::Blue);
            let red_costs = CostMap::for_side(&sc.costs, Side::Red);
            let (blue_lo, blue_hi) = blue_costs.range(sc.p_r_tot);
            let (red_lo, red_hi) = red_costs.range(sc.p_b_tot);
            let bounds = vec![(blue_lo, blue_hi), (red_lo, red_hi)];

            // Exact zero-fishing boundaries: each side fishes iff its cost
            // is below the first-unit revenue against the rival's response
            // to an empty fishery.
            let blue_cost_limit = CostCurve::build(red_lo, red_hi, BOUNDARY_GRID, |red_cost| {
                first_unit_revenue(&solver, best_response_core(&solver, 0.0, red_cost))
            });
            let red_cost_limit = CostCurve::build(blue_lo, blue_hi, BOUNDARY_GRID, |blue_cost| {
                first_unit_revenue(&solver, best_response_core(&solver, 0.0, blue_cost))
            });

            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, i as u64));
            let mut unit = latin_hypercube(doe_size, 2, &mut rng);
            // Patrol-space queries put positive probability on the base-cost
            // edges (pressure fully offset) and on the base-base corner, so
            // those get dedicated design points.
            for row in latin_hypercube(doe_size / 8, 1, &mut rng) {
                unit.push(vec![0.0, row[0]]);
            }
            for row in latin_hypercube(doe_size / 8, 1, &mut rng) {
                unit.push(vec![row[0], 0.0]);
            }
            for _ in 0..8 {
                unit.push(vec![0.0, 0.0]);
            }
            let xs: Vec<Vec<f64>> = unit
                .into_iter()
                .map(|row| {
                    row.iter()
                        .zip(&bounds)
                        .map(|(&u, &(lo, hi))| lo + u * (hi - lo))
                        .collect()
                })
                .collect();
            let mut blue_y = Vec::with_capacity(xs.len());
            let mut red_y = Vec::with_capacity(xs.len());
            let mut blue_on = Vec::with_capacity(xs.len());
            let mut red_on = Vec::with_capacity(xs.len());
            for x in &xs {
                let (fl, zero_b, zero_r) =
                    solve_equilibrium_flagged(&solver, x[0], x[1], brm_b, brm_r)?;
                blue_y.push(fl.blue);
                red_y.push(fl.red);
                blue_on.push(!zero_b);
                red_on.push(!zero_r);
            }

            // The polynomials model only the smooth both-active branch; the
            // one-sided regimes delegate to the best-response models.
            let both: Vec<usize> = (0..xs.len()).filter(|&j| blue_on[j] && red_on[j]).collect();
            let (blue, red) = if both.len() < 12 {
                (LevelModel::zero(), LevelModel::zero())
            } else {
                let sub_x: Vec<Vec<f64>> = both.iter().map(|&j| xs[j].clone()).collect();
                let blue_sub: Vec<f64> = both.iter().map(|&j| blue_y[j]).collect();
                let red_sub: Vec<f64> = both.iter().map(|&j| red_y[j]).collect();
                (
                    fit_level_model(&sub_x, &blue_sub, &bounds, &mut rng)?,
                    fit_level_model(&sub_x, &red_sub, &bounds, &mut rng)?,
                )
            };
            Ok(FisheryEquilibrium {
                blue,
                red,
                blue_response: brm_b.clone(),
                red_response: brm_r.clone(),
                blue_costs,
                red_costs,
                blue_cost_limit,
                red_cost_limit,
                input_bounds: vec![(0.0, sc.p_b_tot), (0.0, sc.p_r_tot)],
            })
        })
        .collect();
    let per_fishery = per_fishery.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumModel { per_fishery })
}

/// Default DOE sizes: low-dimensional fits that are roughly 10x
/// over-determined at the top of the degree ladder.
pub const DEFAULT_BR_DOE: usize = 400;
pub const DEFAULT_EQ_DOE: usize = 250;

/// Runs the whole surrogate pipeline for a scenario: per-fishery
/// best-response models for both sides, then the equilibrium model.
pub fn fit_scenario_models(sc: &Scenario, rng_seed: u64) -> Result<ScenarioModels> {
    fit_scenario_models_sized(sc, DEFAULT_BR_DOE, DEFAULT_EQ_DOE, rng_seed)
}

pub fn fit_scenario_models_sized(
    sc: &Scenario,
    br_doe: usize,
    eq_doe: usize,
    rng_seed: u64,
) -> Result<ScenarioModels> {
    sc.validate()?;
    let best_responses: Vec<Result<(BestResponseModel, BestResponseModel)>> = (0..sc.k)
        .into_par_iter()
        .map(|i| {
            let fp = &sc.fisheries[i];
            let blue = fit_best_response_model(
                fp,
                &sc.costs,
                Side::Blue,
                br_doe,
                sc.p_b_tot,
                sc.p_r_tot,
                mix_seed(rng_seed, 2 * i as u64),
            )?;
            let red = fit_best_response_model(
                fp,
                &sc.costs,
                Side::Red,
                br_doe,
                sc.p_r_tot,
                sc.p_b_tot,
                mix_seed(rng_seed, 2 * i as u64 + 1),
            )?;
            Ok((blue, red))
        })
        .collect();
    let best_responses = best_responses.into_iter().collect::<Result<Vec<_>>>()?;
    let equilibrium =
        fit_equilibrium_model(sc, &best_responses, eq_doe, mix_seed(rng_seed, 1 << 32))?;
    Ok(ScenarioModels {
        best_responses,
        equilibrium,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bioeconomics::steady_state_biomass;

    /// Gordon-Schaefer fishery with an analytic linear best response.
    fn analytic_fishery() -> (FisheryParams, CostParams) {
        let fp = FisheryParams {
            r: 0.4,
            z: 1.0,
            q: 0.0002,
            alpha: 1.0,
            gamma: 1.0,
            p: 2e9,
        };
        let cp = CostParams {
            c_b: 200000.0,
            c_r: 200000.0,
            beta_br: 0.0,
            beta_rb: 0.0,
            beta_bb: 0.0,
            beta_rr: 0.0,
        };
        (fp, cp)
    }

    fn example_fishery(p: f64) -> (FisheryParams, CostParams) {
        let fp = FisheryParams {
            r: 0.36,
            z: 1.0,
            q: 0.00015,
            alpha: 0.91,
            gamma: 1.06,
            p,
        };
        let cp = CostParams {
            c_b: 141995.48,
            c_r: 141995.48,
            beta_br: 579.56,
            beta_rb: 451.23,
            beta_bb: 257.6975,
            beta_rr: 257.6975,
        };
        (fp, cp)
    }

    #[test]
    fn best_response_matches_analytic_quadratic() {
        // F* = (r/2q)(1 - psi/(pqZ)) - F_other/2 = 500 - 100 = 400.
        let (fp, cp) = analytic_fishery();
        let f = best_response_fishing(200.0, 0.0, 0.0, &fp, &cp, Side::Blue);
        assert!((f - 400.0).abs() / 400.0 < 1e-4, "got {f}");
    }

    #[test]
    fn best_response_zero_when_unprofitable() {
        let (fp, mut cp) = analytic_fishery();
        // psi >= p q Z^gamma: even the first unit at virgin stock loses money.
        cp.c_b = fp.p * fp.q * 1.01;
        let f = best_response_fishing(0.0, 0.0, 0.0, &fp, &cp, Side::Blue);
        assert_eq!(f, 0.0);
    }

    #[test]
    fn best_response_matches_grid_scan_oracle() {
        let (fp, cp) = example_fishery(1_517_519_809.38);
        let solver = SteadyStateSolver::new(&fp);
        let profit = |f: f64| {
            solver.profit(
                FishingLevels { blue: f, red: 300.0 },
                0.0,
                0.0,
                &cp,
                Side::Blue,
            )
        };
        // Brute-force oracle: dense scan over the effort range.
        let n = 100_000;
        let f_max = fp.max_effort();
        let mut best = (0.0, profit(0.0));
        for i in 1..=n {
            let f = f_max * i as f64 / n as f64;
            let v = profit(f);
            if v > best.1 {
                best = (f, v);
            }
        }
        let got = best_response_fishing(300.0, 0.0, 0.0, &fp, &cp, Side::Blue);
        assert!(
            (got - best.0).abs() / best.0.max(1.0) < 1e-3,
            "oracle {} vs {got}",
            best.0
        );
    }

    #[test]
    fn best_response_non_increasing_in_rival_effort() {
        let (fp, cp) = analytic_fishery();
        let solver = SteadyStateSolver::new(&fp);
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let f_other = 1000.0 * i as f64 / 39.0;
            let f = best_response_core(&solver, f_other, cp.c_b);
            let analytic = (500.0 - f_other / 2.0).max(0.0);
            assert!((f - analytic).abs() < 0.5, "f_other={f_other}: {f} vs {analytic}");
            assert!(f <= prev + 1e-6);
            prev = f;
        }
    }

    #[test]
    fn zero_fishing_check() {
        let (fp, mut cp) = analytic_fishery();
        cp.c_b = fp.p * fp.q * 1.01;
        assert!(is_zero_fishing_optimal(0.0, 0.0, &fp, &cp, Side::Blue));
        let (fp, cp) = analytic_fishery();
        assert!(!is_zero_fishing_optimal(0.0, 0.0, &fp, &cp, Side::Blue));
    }

    #[test]
    fn zero_fishing_under_patrol_pressure() {
        // Extreme Red patrol concentration; evaluate the first-unit test
        // directly against the grid-scan best-response oracle.
        let (fp, cp) = example_fishery(1_517_519_809.38);
        let got = is_zero_fishing_optimal(0.0, 1000.0, &fp, &cp, Side::Blue);
        let solver = SteadyStateSolver::new(&fp);
        let rival = best_response_core(&solver, 0.0, unit_cost(1000.0, 0.0, &cp, Side::Red));
        let x = solver.biomass(rival);
        let expected =
            fp.p * fp.q * x.powf(fp.gamma) - unit_cost(0.0, 1000.0, &cp, Side::Blue) <= 0.0;
        assert_eq!(got, expected);
    }

    #[test]
    fn br_model_analytic_case_is_near_perfect() {
        let (fp, cp) = analytic_fishery();
        let brm = fit_best_response_model(&fp, &cp, Side::Blue, 400, 600.0, 1000.0, 11).unwrap();
        assert!(
            brm.model.fit.held_out >= 0.999,
            "held-out R^2 = {}",
            brm.model.fit.held_out
        );
    }

    #[test]
    fn br_model_constant_zero_region() {
        let (fp, mut cp) = analytic_fishery();
        cp.c_b = fp.p * fp.q * 2.0;
        let brm = fit_best_response_model(&fp, &cp, Side::Blue, 400, 600.0, 1000.0, 13).unwrap();
        let f_max = fp.max_effort();
        for f_other in [0.0, 100.0, 1000.0] {
            assert!(brm.predict(f_other, 300.0, 500.0) <= 1e-6 * f_max);
        }
    }

    #[test]
    fn br_model_example_params() {
        let (fp, cp) = example_fishery(1_517_519_809.38);
        let brm = fit_best_response_model(&fp, &cp, Side::Blue, 400, 600.0, 1000.0, 17).unwrap();
        assert!(
            brm.model.fit.held_out >= 0.98,
            "held-out R^2 = {}",
            brm.model.fit.held_out
        );
        // Pointwise agreement with the exact best response on the
        // profitable branch.
        let solver = SteadyStateSolver::new(&fp);
        let f_max = fp.max_effort();
        for (f_other, pb, pr) in [(200.0, 60.0, 60.0), (300.0, 0.0, 0.0), (500.0, 300.0, 100.0)] {
            let cost = unit_cost(pb, pr, &cp, Side::Blue);
            let truth = best_response_core(&solver, f_other, cost);
            if truth > 0.0 {
                let pred = brm.predict(f_other, pb, pr);
                assert!(
                    (pred - truth).abs() <= 5e-3 * f_max,
                    "pred {pred} vs truth {truth} at ({f_other}, {pb}, {pr})"
                );
            }
        }
    }

    fn fit_pair(
        fp: &FisheryParams,
        cp: &CostParams,
        seed: u64,
    ) -> (BestResponseModel, BestResponseModel) {
        let b = fit_best_response_model(fp, cp, Side::Blue, 400, 600.0, 1000.0, seed).unwrap();
        let r = fit_best_response_model(fp, cp, Side::Red, 400, 1000.0, 600.0, seed + 1).unwrap();
        (b, r)
    }

    #[test]
    fn symmetric_equilibrium_matches_cournot() {
        // Symmetric players, A = 500: fixed point F = A - F/2 -> 2A/3.
        let (fp, cp) = analytic_fishery();
        let (brm_b, brm_r) = fit_pair(&fp, &cp, 23);
        let fl = solve_fishing_equilibrium(0.0, 0.0, &fp, &cp, &brm_b, &brm_r).unwrap();
        let expected = 2.0 * 500.0 / 3.0;
        assert!(
            (fl.blue - expected).abs() < 1e-3 * fp.max_effort(),
            "blue = {}",
            fl.blue
        );
        assert!(
            (fl.red - expected).abs() < 1e-3 * fp.max_effort(),
            "red = {}",
            fl.red
        );
    }

    #[test]
    fn one_sided_equilibrium_is_monopoly_response() {
        let (fp, mut cp) = analytic_fishery();
        // Blue priced out entirely.
        cp.c_b = fp.p * fp.q * 1.5;
        let (brm_b, brm_r) = fit_pair(&fp, &cp, 29);
        let fl = solve_fishing_equilibrium(0.0, 0.0, &fp, &cp, &brm_b, &brm_r).unwrap();
        assert_eq!(fl.blue, 0.0);
        let monopoly = best_response_fishing(0.0, 0.0, 0.0, &fp, &cp, Side::Red);
        assert!(
            (fl.red - monopoly).abs() < 1e-2 * fp.max_effort(),
            "red = {} vs monopoly {monopoly}",
            fl.red
        );
    }

    #[test]
    fn equilibrium_matches_damped_iteration_oracle() {
        let (fp, cp) = example_fishery(1_517_519_809.38);
        let (brm_b, brm_r) = fit_pair(&fp, &cp, 31);
        let fl = solve_fishing_equilibrium(60.0, 60.0, &fp, &cp, &brm_b, &brm_r).unwrap();

        // Oracle: damped fixed-point iteration on the exact best responses.
        let solver = SteadyStateSolver::new(&fp);
        let blue_cost = unit_cost(60.0, 60.0, &cp, Side::Blue);
        let red_cost = unit_cost(60.0, 60.0, &cp, Side::Red);
        let (mut fb, mut fr) = (100.0, 100.0);
        for _ in 0..500 {
            let nb = best_response_core(&solver, fr, blue_cost);
            let nr = best_response_core(&solver, fb, red_cost);
            fb = 0.5 * fb + 0.5 * nb;
            fr = 0.5 * fr + 0.5 * nr;
        }
        assert!(
            (fl.blue - fb).abs() / fb.max(1.0) < 1e-3,
            "blue {} vs oracle {fb}",
            fl.blue
        );
        assert!(
            (fl.red - fr).abs() / fr.max(1.0) < 1e-3,
            "red {} vs oracle {fr}",
            fl.red
        );
    }

    #[test]
    fn equilibrium_is_a_polynomial_fixed_point() {
        let (fp, cp) = example_fishery(2e9);
        let (brm_b, brm_r) = fit_pair(&fp, &cp, 37);
        let f_max = fp.max_effort();
        for (pb, pr) in [(0.0, 0.0), (60.0, 100.0), (300.0, 800.0)] {
            let fl = solve_fishing_equilibrium(pb, pr, &fp, &cp, &brm_b, &brm_r).unwrap();
            if fl.blue > 0.0 {
                let back = brm_b.predict(fl.red, pb, pr);
                assert!(
                    (fl.blue - back).abs() <= 1e-3 * f_max,
                    "blue {} vs BR {back}",
                    fl.blue
                );
            }
            if fl.red > 0.0 {
                let back = brm_r.predict(fl.blue, pr, pb);
                assert!(
                    (fl.red - back).abs() <= 1e-3 * f_max,
                    "red {} vs BR {back}",
                    fl.red
                );
            }
        }
    }

    fn small_scenario(betas_zero: bool) -> Scenario {
        let (mut fp, mut cp) = example_fishery(1.8e9);
        if betas_zero {
            cp.beta_br = 0.0;
            cp.beta_rb = 0.0;
            cp.beta_bb = 0.0;
            cp.beta_rr = 0.0;
            // With inert patrols and alpha = gamma = 1 the best responses
            // are exactly linear, so the fitted surrogates carry no
            // cost-term noise at all.
            fp.alpha = 1.0;
            fp.gamma = 1.0;
        }
        Scenario {
            k: 1,
            fisheries: vec![fp],
            costs: cp,
            p_b_tot: 600.0,
            p_r_tot: 1000.0,
            epsilon: 0.1,
        }
    }

    #[test]
    fn equilibrium_model_inert_patrols_is_constant() {
        let sc = small_scenario(true);
        let models = fit_scenario_models_sized(&sc, 300, 220, 41).unwrap();
        let eq = &models.equilibrium;
        let (b0, r0) = eq.predict_levels(0, 0.0, 0.0);
        for (pb, pr) in [(100.0, 0.0), (0.0, 900.0), (600.0, 1000.0), (300.0, 500.0)] {
            let (b, r) = eq.predict_levels(0, pb, pr);
            assert!((b - b0).abs() <= 1e-6 * b0.max(1.0), "blue varies: {b0} vs {b}");
            assert!((r - r0).abs() <= 1e-6 * r0.max(1.0), "red varies: {r0} vs {r}");
        }
    }

    #[test]
    fn equilibrium_model_roundtrip_holdout() {
        let sc = small_scenario(false);
        let models = fit_scenario_models_sized(&sc, 300, 220, 43).unwrap();
        let eq = &models.equilibrium;
        let (brm_b, brm_r) = &models.best_responses[0];
        let solver = SteadyStateSolver::new(&sc.fisheries[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let unit = latin_hypercube(100, 2, &mut rng);
        let mut truth_b = Vec::new();
        let mut truth_r = Vec::new();
        let mut pred_b = Vec::new();
        let mut pred_r = Vec::new();
        for row in unit {
            let (pb, pr) = (row[0] * sc.p_b_tot, row[1] * sc.p_r_tot);
            let blue_cost = unit_cost(pb, pr, &sc.costs, Side::Blue);
            let red_cost = unit_cost(pr, pb, &sc.costs, Side::Red);
            let fl = solve_equilibrium_core(&solver, blue_cost, red_cost, brm_b, brm_r).unwrap();
            let (eb, er) = eq.predict_levels(0, pb, pr);
            truth_b.push(fl.blue);
            truth_r.push(fl.red);
            pred_b.push(eb);
            pred_r.push(er);
        }
        let r2_b = r_squared(&pred_b, &truth_b);
        let r2_r = r_squared(&pred_r, &truth_r);
        assert!(r2_b >= 0.98, "fresh-holdout R^2 blue = {r2_b}");
        assert!(r2_r >= 0.98, "fresh-holdout R^2 red = {r2_r}");

        // 2% relative RMS round-trip.
        let rms = |e: &[f64], t: &[f64]| {
            let se: f64 = e.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum();
            let st: f64 = t.iter().map(|v| v * v).sum();
            (se / st.max(1e-12)).sqrt()
        };
        assert!(rms(&pred_b, &truth_b) < 0.02);
        assert!(rms(&pred_r, &truth_r) < 0.02);
    }

    #[test]
    fn equilibrium_blue_level_non_increasing_in_own_cost() {
        // Raising Blue's unit cost through Red patrols (with no Blue offset)
        // must not increase Blue's equilibrium fishing level.
        let sc = small_scenario(false);
        let models = fit_scenario_models_sized(&sc, 300, 220, 47).unwrap();
        let eq = &models.equilibrium;
        let f_max = sc.fisheries[0].max_effort();
        let mut prev = f64::INFINITY;
        for i in 0..25 {
            let pr = sc.p_r_tot * i as f64 / 24.0;
            let (b, _) = eq.predict_levels(0, 0.0, pr);
            assert!(
                b <= prev + 1e-3 * f_max,
                "blue level rose with rival patrols: {prev} -> {b}"
            );
            prev = b;
        }
    }

    #[test]
    fn steady_state_consistency_with_profit_pricing() {
        // Spot check that the profit revenue term uses the same steady
        // state the public function reports.
        let (fp, cp) = example_fishery(2e9);
        let solver = SteadyStateSolver::new(&fp);
        let fl = FishingLevels { blue: 250.0, red: 350.0 };
        let x = steady_state_biomass(600.0, &fp);
        let expected = (fp.p * fp.q * x.powf(fp.gamma) - cp.c_b) * 250.0;
        let got = solver.profit(fl, 10.0, 0.0, &cp, Side::Blue);
        assert!((got - expected).abs() <= 1e-6 * expected.abs().max(1.0));
    }
}
