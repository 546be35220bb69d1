//! Fishery stock dynamics, patrol-dependent costs, and player utilities.
//!
//! Each fishery's biomass `x` obeys a generalized Gordon-Schaefer model:
//! growth `r*x*(1 - x/Z)^alpha` minus harvest `q*x^gamma*F`, where `F` is
//! the combined fishing effort of both sides. Profits are revenue at the
//! long-run (steady-state) biomass minus a per-effort cost that rival
//! patrols can raise and own patrols can partially offset.

use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumModel;
use crate::{Error, Result};

/// Which player a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Blue,
    Red,
}

impl Side {
    pub fn rival(self) -> Side {
        match self {
            Side::Blue => Side::Red,
            Side::Red => Side::Blue,
        }
    }
}

/// Biological and economic parameters of a single fishery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisheryParams {
    /// Intrinsic growth rate (1/time).
    pub r: f64,
    /// Carrying capacity (biomass units).
    pub z: f64,
    /// Catchability coefficient (1/effort).
    pub q: f64,
    /// Growth-curvature exponent.
    pub alpha: f64,
    /// Patchiness exponent; `gamma < 1` keeps catch rates up as stock falls.
    pub gamma: f64,
    /// Price per metric ton.
    pub p: f64,
}

impl FisheryParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r", self.r),
            ("z", self.z),
            ("q", self.q),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("p", self.p),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "fishery parameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Effort ceiling used for best-response searches and DOE bounds:
    /// twice the effort that drives the `alpha = gamma = 1` stock to zero.
    pub fn max_effort(&self) -> f64 {
        2.0 * self.r / self.q
    }
}

/// Linear cost model coefficients shared by all fisheries.
///
/// Blue's unit cost in fishery `i` is
/// `c_b + max(0, beta_br * P_R_i - beta_bb * P_B_i)`; Red's is symmetric
/// with `(c_r, beta_rb, beta_rr)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Blue operating + opportunity cost per unit effort.
    pub c_b: f64,
    /// Red operating + opportunity cost per unit effort.
    pub c_r: f64,
    /// Effect of Red patrols on Blue fishermen.
    pub beta_br: f64,
    /// Effect of Blue patrols on Red fishermen.
    pub beta_rb: f64,
    /// Blue patrols' offset of the Red patrol effect.
    pub beta_bb: f64,
    /// Red patrols' offset of the Blue patrol effect.
    pub beta_rr: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_b", self.c_b),
            ("c_r", self.c_r),
            ("beta_br", self.beta_br),
            ("beta_rb", self.beta_rb),
            ("beta_bb", self.beta_bb),
            ("beta_rr", self.beta_rr),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "cost parameter {name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A complete game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Number of fisheries.
    pub k: usize,
    /// One parameter set per fishery.
    pub fisheries: Vec<FisheryParams>,
    pub costs: CostParams,
    /// Blue's total patrol budget.
    pub p_b_tot: f64,
    /// Red's total patrol budget.
    pub p_r_tot: f64,
    /// Red's allowed relative shortfall from his model-optimal utility.
    pub epsilon: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.fisheries.len() != self.k {
            return Err(Error::InvalidParameter(format!(
                "scenario lists {} fisheries but k = {}",
                self.fisheries.len(),
                self.k
            )));
        }
        for fp in &self.fisheries {
            fp.validate()?;
        }
        self.costs.validate()?;
        if !(self.p_b_tot > 0.0) || !(self.p_r_tot > 0.0) {
            return Err(Error::InvalidParameter(
                "patrol budgets must be strictly positive".into(),
            ));
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn budget(&self, side: Side) -> f64 {
        match side {
            Side::Blue => self.p_b_tot,
            Side::Red => self.p_r_tot,
        }
    }
}

/// Relative tolerance on an allocation's budget sum.
pub const BUDGET_REL_TOL: f64 = 1e-6;

/// A nonnegative patrol vector summing to a side's budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    values: Vec<f64>,
    budget: f64,
}

impl Allocation {
    /// Validates nonnegativity and that entries sum to `budget` within
    /// `BUDGET_REL_TOL` relative tolerance.
    pub fn new(values: Vec<f64>, budget: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty allocation".into()));
        }
        if !(budget > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "allocation budget must be positive, got {budget}"
            )));
        }
        let mut sum = 0.0;
        for &v in &values {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "allocation entries must be nonnegative, got {v}"
                )));
            }
            sum += v;
        }
        if (sum - budget).abs() > BUDGET_REL_TOL * budget {
            return Err(Error::InvalidParameter(format!(
                "allocation sums to {sum}, expected {budget}"
            )));
        }
        Ok(Allocation { values, budget })
    }

    /// Scales a raw nonnegative vector onto the budget simplex. Entries that
    /// are barely negative (optimizer round-off) are clamped to zero first.
    pub fn normalized(raw: &[f64], budget: f64) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidParameter("empty allocation".into()));
        }
        let clamped: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
        let sum: f64 = clamped.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cannot scale vector with sum {sum} onto the simplex"
            )));
        }
        let scale = budget / sum;
        Ok(Allocation {
            values: clamped.iter().map(|&v| v * scale).collect(),
            budget,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_feasible(&self) -> bool {
        let sum: f64 = self.values.iter().sum();
        self.values.iter().all(|&v| v >= 0.0)
            && (sum - self.budget).abs() <= BUDGET_REL_TOL * self.budget
    }
}

/// Fishing efforts of the two sides in one fishery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FishingLevels {
    pub blue: f64,
    pub red: f64,
}

impl FishingLevels {
    pub fn total(&self) -> f64 {
        self.blue + self.red
    }

    pub fn of(&self, side: Side) -> f64 {
        match side {
            Side::Blue => self.blue,
            Side::Red => self.red,
        }
    }
}

/// Instantaneous biomass change `r*x*(1 - x/Z)^alpha - q*x^gamma*F`.
///
/// Fails when `x > Z` with a non-integer `alpha` (fractional power of a
/// negative base) or when inputs leave the model's domain.
pub fn growth_rate(x: f64, effort: f64, fp: &FisheryParams) -> Result<f64> {
    if x < 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!("biomass must be nonnegative, got {x}")));
    }
    if effort < 0.0 || !effort.is_finite() {
        return Err(Error::Domain(format!("effort must be nonnegative, got {effort}")));
    }
    if x > fp.z && fp.alpha.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "biomass {x} above carrying capacity {} with fractional alpha {}",
            fp.z, fp.alpha
        )));
    }
    Ok(growth_rate_unchecked(x, effort, fp))
}

#[inline]
fn growth_rate_unchecked(x: f64, effort: f64, fp: &FisheryParams) -> f64 {
    fp.r * x * (1.0 - x / fp.z).powf(fp.alpha) - fp.q * x.powf(fp.gamma) * effort
}

const GRID_POINTS: usize = 4096;
/// Lower end of the log-spaced biomass grid, as a fraction of `Z`.
const GRID_FLOOR: f64 = 1e-12;

/// Steady-state biomass solver for one fishery.
///
/// Precomputes `ratio(x) = growth(x) / (q*x^gamma)` on a log-spaced grid
/// over `(0, Z]` so that the sign of the net growth at grid point `x_i`
/// under effort `F` is just the comparison `ratio[i] > F`. `ratio` is
/// strictly unimodal in `x` (increasing then decreasing; decreasing
/// everywhere when `gamma >= 1`), so the sign-change cell closest to `Z`
/// can be found by bisecting the decreasing branch. The cell is then
/// refined by bisection on the exact growth rate.
#[derive(Debug, Clone)]
pub struct SteadyStateSolver {
    fp: FisheryParams,
    xs: Vec<f64>,
    ratio: Vec<f64>,
    peak: usize,
}

impl SteadyStateSolver {
    pub fn new(fp: &FisheryParams) -> Self {
        let lo = (fp.z * GRID_FLOOR).ln();
        let hi = fp.z.ln();
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let mut xs = Vec::with_capacity(GRID_POINTS);
        let mut ratio = Vec::with_capacity(GRID_POINTS);
        let mut peak = 0;
        for i in 0..GRID_POINTS {
            let x = if i == GRID_POINTS - 1 {
                fp.z
            } else {
                (lo + step * i as f64).exp()
            };
            let rel = (1.0 - x / fp.z).max(0.0);
            let r = fp.r * x * rel.powf(fp.alpha) / (fp.q * x.powf(fp.gamma));
            if r > ratio.get(peak).copied().unwrap_or(f64::NEG_INFINITY) {
                peak = i;
            }
            xs.push(x);
            ratio.push(r);
        }
        SteadyStateSolver {
            fp: *fp,
            xs,
            ratio,
            peak,
        }
    }

    pub fn params(&self) -> &FisheryParams {
        &self.fp
    }

    /// Largest root of the growth rate in `(0, Z]` for total effort
    /// `effort`, or 0 when harvest exceeds growth everywhere (collapse).
    pub fn biomass(&self, effort: f64) -> f64 {
        if effort <= 0.0 {
            return self.fp.z;
        }
        if self.ratio[self.peak] <= effort {
            return 0.0;
        }
        // Largest grid index on the decreasing branch with ratio > effort.
        let mut lo = self.peak;
        let mut hi = GRID_POINTS - 1;
        if self.ratio[hi] > effort {
            // Positive net growth at Z itself cannot happen for effort > 0.
            return self.fp.z;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.ratio[mid] > effort {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Refine on the exact growth rate.
        let (mut a, mut b) = (self.xs[lo], self.xs[hi]);
        for _ in 0..90 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if growth_rate_unchecked(mid, effort, &self.fp) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }

    /// Profit of `side` given both sides' fishing levels and the patrol
    /// counts in this fishery. Revenue is priced at the steady-state
    /// biomass for the combined effort; zero effort earns exactly zero.
    pub fn profit(
        &self,
        fl: FishingLevels,
        p_b_i: f64,
        p_r_i: f64,
        cp: &CostParams,
        side: Side,
    ) -> f64 {
        let own_effort = fl.of(side);
        if own_effort == 0.0 {
            return 0.0;
        }
        let (p_own, p_rival) = match side {
            Side::Blue => (p_b_i, p_r_i),
            Side::Red => (p_r_i, p_b_i),
        };
        let x = self.biomass(fl.total());
        let revenue_rate = self.fp.p * self.fp.q * x.powf(self.fp.gamma);
        (revenue_rate - unit_cost(p_own, p_rival, cp, side)) * own_effort
    }
}

/// One-shot form of [`SteadyStateSolver::biomass`]. Builds the grid on
/// every call; reuse the solver in loops.
pub fn steady_state_biomass(effort: f64, fp: &FisheryParams) -> f64 {
    SteadyStateSolver::new(fp).biomass(effort.max(0.0))
}

/// Per-effort cost for `side`, `base + max(0, pressure - offset)`.
pub fn unit_cost(p_own: f64, p_rival: f64, cp: &CostParams, side: Side) -> f64 {
    let (base, pressure, offset) = match side {
        Side::Blue => (cp.c_b, cp.beta_br, cp.beta_bb),
        Side::Red => (cp.c_r, cp.beta_rb, cp.beta_rr),
    };
    base + (pressure * p_rival - offset * p_own).max(0.0)
}

/// Profit of `side` in one fishery. May be negative; exactly zero at zero
/// own effort.
pub fn fishery_profit(
    fl: FishingLevels,
    p_b_i: f64,
    p_r_i: f64,
    fp: &FisheryParams,
    cp: &CostParams,
    side: Side,
) -> f64 {
    SteadyStateSolver::new(fp).profit(fl, p_b_i, p_r_i, cp, side)
}

/// Shared hot-path evaluator: maps a pair of patrol allocations to a side's
/// total utility through the fitted equilibrium surrogates.
pub struct UtilityEvaluator<'a> {
    sc: &'a Scenario,
    eq: &'a EquilibriumModel,
    solvers: Vec<SteadyStateSolver>,
}

impl<'a> UtilityEvaluator<'a> {
    pub fn new(sc: &'a Scenario, eq: &'a EquilibriumModel) -> Result<Self> {
        if eq.fishery_count() != sc.k {
            return Err(Error::DimensionMismatch(format!(
                "equilibrium model covers {} fisheries, scenario has {}",
                eq.fishery_count(),
                sc.k
            )));
        }
        Ok(UtilityEvaluator {
            sc,
            eq,
            solvers: sc.fisheries.iter().map(SteadyStateSolver::new).collect(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        self.sc
    }

    pub fn model(&self) -> &EquilibriumModel {
        self.eq
    }

    /// Total utility of `side` for raw patrol vectors (assumed feasible).
    pub fn utility(&self, side: Side, p_b: &[f64], p_r: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.sc.k {
            let (fb, fr) = self.eq.predict_levels(i, p_b[i], p_r[i]);
            total += self.solvers[i].profit(
                FishingLevels { blue: fb, red: fr },
                p_b[i],
                p_r[i],
                &self.sc.costs,
                side,
            );
        }
        total
    }
}

/// Total utility of `side` at the surrogate-predicted equilibrium fishing
/// levels, summed over fisheries.
pub fn total_utility(
    p_b: &Allocation,
    p_r: &Allocation,
    sc: &Scenario,
    eq: &EquilibriumModel,
    side: Side,
) -> Result<f64> {
    if p_b.len() != sc.k || p_r.len() != sc.k {
        return Err(Error::DimensionMismatch(format!(
            "allocations of length {}/{} for a {}-fishery scenario",
            p_b.len(),
            p_r.len(),
            sc.k
        )));
    }
    let ev = UtilityEvaluator::new(sc, eq)?;
    Ok(ev.utility(side, p_b.values(), p_r.values()))
}
