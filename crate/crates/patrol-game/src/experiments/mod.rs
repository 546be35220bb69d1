//! Scenario sampling, the bundled worked example, batch experiment runs,
//! and the file formats behind the `patrol-game` binary.

pub mod report;

use std::path::Path;
use std::time::Instant;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bioeconomics::{Allocation, CostParams, FisheryParams, Scenario};
use crate::equilibrium::{fit_scenario_models_sized, ScenarioModels, DEFAULT_BR_DOE, DEFAULT_EQ_DOE};
use crate::optim::mix_seed;
use crate::robust_game::{
    compute_metrics, metrics_from_utilities, robust_utility, solve_nonrobust, solve_robust,
    BenchmarkMetrics, RedResponses, SolverConfig,
};
use crate::{Error, Result};

/// Independent uniform ranges for randomly generated scenarios, plus the
/// fixed structural values. Fisheries share `r, q, alpha, gamma`; prices
/// rise linearly from a drawn `p1` to `p_max`; the carrying capacity is
/// fixed as a scale normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioDistribution {
    pub k: usize,
    pub r: (f64, f64),
    pub q: (f64, f64),
    pub alpha: (f64, f64),
    pub gamma: (f64, f64),
    /// Price of fishery 1 (currency).
    pub p1: (f64, f64),
    /// Price of the last fishery.
    pub p_max: f64,
    /// Shared operating + opportunity cost, `c_b = c_r`.
    pub c: (f64, f64),
    pub beta_br: (f64, f64),
    pub p_b_tot: f64,
    pub p_r_tot: f64,
    pub epsilon: f64,
    pub z: f64,
}

impl Default for ScenarioDistribution {
    fn default() -> Self {
        ScenarioDistribution {
            k: 10,
            r: (0.3, 0.5),
            q: (0.0001, 0.0003),
            alpha: (0.5, 1.5),
            gamma: (0.5, 1.5),
            p1: (1e9, 2e9),
            p_max: 3e9,
            c: (1e5, 2e5),
            beta_br: (150.0, 600.0),
            p_b_tot: 600.0,
            p_r_tot: 1000.0,
            epsilon: 0.10,
            z: 1.0,
        }
    }
}

impl ScenarioDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        for (name, (lo, hi)) in [
            ("r", self.r),
            ("q", self.q),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("p1", self.p1),
            ("c", self.c),
            ("beta_br", self.beta_br),
        ] {
            if !(lo > 0.0) || !(hi >= lo) {
                return Err(Error::InvalidParameter(format!(
                    "range {name} = ({lo}, {hi}) must satisfy 0 < lo <= hi"
                )));
            }
        }
        Ok(())
    }
}

/// Draws one scenario. Draw order is fixed (r, q, alpha, gamma, p1, c,
/// beta_br, beta_rb), so a seed pins the scenario byte for byte. The
/// militia asymmetry is built in: `beta_rb` is drawn below `beta_br`, and
/// both offsets equal a quarter of their sum.
pub fn sample_scenario(dist: &ScenarioDistribution, rng_seed: u64) -> Result<Scenario> {
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut draw = |(lo, hi): (f64, f64)| -> f64 {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let r = draw(dist.r);
    let q = draw(dist.q);
    let alpha = draw(dist.alpha);
    let gamma = draw(dist.gamma);
    let p1 = draw(dist.p1);
    let c = draw(dist.c);
    let beta_br = draw(dist.beta_br);
    let beta_rb = draw((beta_br / 2.0, beta_br));
    let offset = (beta_br + beta_rb) / 4.0;
    let fisheries = (0..dist.k)
        .map(|i| FisheryParams {
            r,
            z: dist.z,
            q,
            alpha,
            gamma,
            p: if dist.k == 1 {
                p1
            } else {
                p1 + i as f64 / (dist.k - 1) as f64 * (dist.p_max - p1)
            },
        })
        .collect();
    let sc = Scenario {
        k: dist.k,
        fisheries,
        costs: CostParams {
            c_b: c,
            c_r: c,
            beta_br,
            beta_rb,
            beta_bb: offset,
            beta_rr: offset,
        },
        p_b_tot: dist.p_b_tot,
        p_r_tot: dist.p_r_tot,
        epsilon: dist.epsilon,
    };
    sc.validate()?;
    Ok(sc)
}

/// Loads a scenario from a TOML file (keys mirror the field names; one
/// `[[fisheries]]` table per fishery).
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let sc: Scenario = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    sc.validate()?;
    Ok(sc)
}

pub fn save_scenario(sc: &Scenario, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(sc).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads a scenario distribution from TOML; missing keys keep defaults.
pub fn load_distribution(path: &Path) -> Result<ScenarioDistribution> {
    let text = std::fs::read_to_string(path)?;
    let dist: ScenarioDistribution =
        toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    dist.validate()?;
    Ok(dist)
}

/// Default surrogate DOE sizes used by the runners.
pub const MODEL_SEED_SALT: u64 = 0x0F17;

/// Fits the surrogate pipeline for a scenario with the standard DOE sizes.
pub fn fit_models(sc: &Scenario, rng_seed: u64) -> Result<ScenarioModels> {
    fit_scenario_models_sized(sc, DEFAULT_BR_DOE, DEFAULT_EQ_DOE, rng_seed)
}

// ---------------------------------------------------------------------------
// The bundled worked example (CLI subcommand `example1`).
// ---------------------------------------------------------------------------

/// Published reference utilities for the bundled example, used as the
/// comparison column in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example1Reference {
    pub robust_utility_robust_solution: f64,
    pub robust_utility_nonrobust_solution: f64,
    pub nonrobust_utility_robust_solution: f64,
    pub nonrobust_utility_nonrobust_solution: f64,
    pub v: f64,
}

pub const EXAMPLE1_REFERENCE: Example1Reference = Example1Reference {
    robust_utility_robust_solution: 166_663_708.36,
    robust_utility_nonrobust_solution: 130_857_172.92,
    nonrobust_utility_robust_solution: 196_247_780.94,
    nonrobust_utility_nonrobust_solution: 197_344_455.69,
    v: 0.2736,
};

/// The fixed 10-fishery example scenario.
pub fn example1_scenario() -> Scenario {
    let k = 10;
    let p1 = 1_517_519_809.38;
    let p_max = 3e9;
    let beta_br = 579.56;
    let beta_rb = 451.23;
    let offset = (beta_br + beta_rb) / 4.0;
    Scenario {
        k,
        fisheries: (0..k)
            .map(|i| FisheryParams {
                r: 0.36,
                z: 1.0,
                q: 0.00015,
                alpha: 0.91,
                gamma: 1.06,
                p: p1 + i as f64 / (k - 1) as f64 * (p_max - p1),
            })
            .collect(),
        costs: CostParams {
            c_b: 141_995.48,
            c_r: 141_995.48,
            beta_br,
            beta_rb,
            beta_bb: offset,
            beta_rr: offset,
        },
        p_b_tot: 600.0,
        p_r_tot: 1000.0,
        epsilon: 0.10,
    }
}

/// The two published example solutions (robust, non-robust). Each row must
/// sum to the Blue budget within 0.01 before being projected exactly.
pub fn example1_table_allocations() -> Result<(Allocation, Allocation)> {
    let robust = [
        19.31, 22.61, 16.53, 8.82, 56.55, 48.60, 47.62, 15.26, 70.02, 294.68,
    ];
    let nonrobust = [
        16.74, 46.57, 6.45, 0.00, 43.49, 65.93, 49.93, 99.82, 127.71, 143.37,
    ];
    for row in [&robust, &nonrobust] {
        let sum: f64 = row.iter().sum();
        if (sum - 600.0).abs() > 0.01 {
            return Err(Error::InvalidParameter(format!(
                "reference allocation sums to {sum}, expected 600 within 0.01"
            )));
        }
    }
    Ok((
        Allocation::normalized(&robust, 600.0)?,
        Allocation::normalized(&nonrobust, 600.0)?,
    ))
}

/// Fresh solver results for the example, when `--resolve` is requested.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Example1Resolved {
    pub robust_allocation: Vec<f64>,
    pub nonrobust_allocation: Vec<f64>,
    pub metrics: BenchmarkMetrics,
}

/// Evaluation of the fixed example solutions, with reference comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Example1Report {
    /// Responses to the fixed robust-solution allocation.
    pub fixed_robust: RedResponses,
    /// Responses to the fixed non-robust-solution allocation.
    pub fixed_nonrobust: RedResponses,
    pub v: f64,
    pub w: f64,
    pub reference: Example1Reference,
    pub resolved: Option<Example1Resolved>,
}

/// Evaluates the fixed example allocations under both Red response modes
/// and, optionally, re-solves the whole game from scratch.
pub fn run_example1(cfg: &SolverConfig, resolve: bool) -> Result<Example1Report> {
    let sc = example1_scenario();
    let models = fit_models(&sc, mix_seed(cfg.rng_seed, MODEL_SEED_SALT))?;
    let eq = &models.equilibrium;
    let (table_robust, table_nonrobust) = example1_table_allocations()?;

    let fixed_robust = robust_utility(&table_robust, &sc, eq, cfg)?;
    let fixed_nonrobust = robust_utility(&table_nonrobust, &sc, eq, cfg)?;
    let (v, w) = metrics_from_utilities(
        fixed_robust.blue_utility_adversarial,
        fixed_nonrobust.blue_utility_adversarial,
        fixed_robust.blue_utility_optimal,
        fixed_nonrobust.blue_utility_optimal,
    )?;

    let resolved = if resolve {
        let (robust_alloc, _) = solve_robust(&sc, eq, cfg)?;
        let (nonrobust_alloc, _) = solve_nonrobust(&sc, eq, cfg)?;
        let metrics = compute_metrics(&robust_alloc, &nonrobust_alloc, &sc, eq, cfg)?;
        Some(Example1Resolved {
            robust_allocation: robust_alloc.values().to_vec(),
            nonrobust_allocation: nonrobust_alloc.values().to_vec(),
            metrics,
        })
    } else {
        None
    };

    Ok(Example1Report {
        fixed_robust,
        fixed_nonrobust,
        v,
        w,
        reference: EXAMPLE1_REFERENCE,
        resolved,
    })
}

// ---------------------------------------------------------------------------
// Batch runs.
// ---------------------------------------------------------------------------

/// One scenario's outcome in a batch. Metrics are empty when the row
/// failed; the error message is kept in `status`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub id: usize,
    pub seed: u64,
    pub status: String,
    pub v: Option<f64>,
    pub w: Option<f64>,
    pub robust_utility_robust_solution: Option<f64>,
    pub robust_utility_nonrobust_solution: Option<f64>,
    pub nonrobust_utility_robust_solution: Option<f64>,
    pub nonrobust_utility_nonrobust_solution: Option<f64>,
}

/// Wall-clock timings per row. Kept out of `rows.csv` so that repeated
/// seeded runs stay byte-identical; timings land in `timings.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowTiming {
    pub id: usize,
    pub fit_seconds: f64,
    pub robust_solve_seconds: f64,
    pub nonrobust_solve_seconds: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PercentileRow {
    pub percentile: f64,
    pub v: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchReport {
    pub rows: Vec<ScenarioRow>,
    pub timings: Vec<RowTiming>,
    /// 5th through 95th percentiles of v and w over successful rows.
    pub percentiles: Vec<PercentileRow>,
}

const SALT_SCENARIO: u64 = 0x5C00;
const SALT_MODELS: u64 = 0x5C01;
const SALT_SOLVE: u64 = 0x5C02;

fn run_row(
    dist: &ScenarioDistribution,
    cfg: &SolverConfig,
    batch_seed: u64,
    id: usize,
) -> (ScenarioRow, RowTiming) {
    let seed = mix_seed(batch_seed, SALT_SCENARIO + id as u64);
    let mut row = ScenarioRow {
        id,
        seed,
        status: "ok".into(),
        v: None,
        w: None,
        robust_utility_robust_solution: None,
        robust_utility_nonrobust_solution: None,
        nonrobust_utility_robust_solution: None,
        nonrobust_utility_nonrobust_solution: None,
    };
    let mut timing = RowTiming {
        id,
        fit_seconds: 0.0,
        robust_solve_seconds: 0.0,
        nonrobust_solve_seconds: 0.0,
    };
    let outcome = (|| -> Result<BenchmarkMetrics> {
        let sc = sample_scenario(dist, seed)?;
        let row_cfg = SolverConfig {
            rng_seed: mix_seed(batch_seed, SALT_SOLVE + id as u64),
            epsilon: dist.epsilon,
            ..*cfg
        };
        let t = Instant::now();
        let models = fit_models(&sc, mix_seed(batch_seed, SALT_MODELS + id as u64))?;
        timing.fit_seconds = t.elapsed().as_secs_f64();
        let eq = &models.equilibrium;
        let t = Instant::now();
        let (robust_alloc, _) = solve_robust(&sc, eq, &row_cfg)?;
        timing.robust_solve_seconds = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let (nonrobust_alloc, _) = solve_nonrobust(&sc, eq, &row_cfg)?;
        timing.nonrobust_solve_seconds = t.elapsed().as_secs_f64();
        compute_metrics(&robust_alloc, &nonrobust_alloc, &sc, eq, &row_cfg)
    })();
    match outcome {
        Ok(m) => {
            row.v = Some(m.v);
            row.w = Some(m.w);
            row.robust_utility_robust_solution = Some(m.robust_utility_robust_solution);
            row.robust_utility_nonrobust_solution = Some(m.robust_utility_nonrobust_solution);
            row.nonrobust_utility_robust_solution = Some(m.nonrobust_utility_robust_solution);
            row.nonrobust_utility_nonrobust_solution = Some(m.nonrobust_utility_nonrobust_solution);
        }
        Err(e) => {
            row.status = format!("error: {e}");
        }
    }
    (row, timing)
}

/// Runs `n_scenarios` seeded scenarios end to end (surrogate fit, both
/// solvers, fresh metric evaluation) with up to `parallelism` rows in
/// flight, and aggregates the percentile table. Row failures are recorded
/// in place; only pool construction can fail the batch itself.
pub fn run_batch(
    dist: &ScenarioDistribution,
    n_scenarios: usize,
    cfg: &SolverConfig,
    rng_seed: u64,
    parallelism: usize,
) -> Result<BatchReport> {
    if n_scenarios == 0 {
        return Err(Error::InvalidParameter("n_scenarios must be at least 1".into()));
    }
    dist.validate()?;
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let results: Vec<(ScenarioRow, RowTiming)> = pool.install(|| {
        (0..n_scenarios)
            .into_par_iter()
            .map(|id| run_row(dist, cfg, rng_seed, id))
            .collect()
    });
    let (rows, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let percentiles = percentile_table(&rows);
    Ok(BatchReport {
        rows,
        timings,
        percentiles,
    })
}

/// Linear-interpolation percentile on a sorted slice (the `h = (n-1)p`
/// convention: the median of 1..5 is 3 and its 95th percentile is 4.8).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty slice");
    assert!((0.0..=100.0).contains(&p), "percentile {p} out of range");
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 5th through 95th percentiles of v and w over the successful rows.
pub fn percentile_table(rows: &[ScenarioRow]) -> Vec<PercentileRow> {
    let mut vs: Vec<f64> = rows.iter().filter_map(|r| r.v).collect();
    let mut ws: Vec<f64> = rows.iter().filter_map(|r| r.w).collect();
    if vs.is_empty() || ws.is_empty() {
        return Vec::new();
    }
    vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (1..=19)
        .map(|i| {
            let p = 5.0 * i as f64;
            PercentileRow {
                percentile: p,
                v: percentile(&vs, p),
                w: percentile(&ws, p),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_draw_endpoints_and_betas() {
        let dist = ScenarioDistribution::default();
        for seed in 0..20 {
            let sc = sample_scenario(&dist, seed).unwrap();
            assert_eq!(sc.k, 10);
            // Price ladder endpoints.
            assert_eq!(sc.fisheries[9].p, 3e9);
            assert_eq!(sc.fisheries[0].p, sc.fisheries[0].p);
            assert!(sc.fisheries[0].p >= 1e9 && sc.fisheries[0].p < 2e9);
            // Militia asymmetry.
            assert!(sc.costs.beta_rb < sc.costs.beta_br);
            assert!(sc.costs.beta_rb >= sc.costs.beta_br / 2.0);
            let expected = (sc.costs.beta_br + sc.costs.beta_rb) / 4.0;
            assert_eq!(sc.costs.beta_bb, expected);
            assert_eq!(sc.costs.beta_rr, expected);
        }
    }

    #[test]
    fn scenario_draws_cover_ranges() {
        let dist = ScenarioDistribution::default();
        let n = 1000;
        let mut sums = [0.0f64; 7];
        for seed in 0..n {
            let sc = sample_scenario(&dist, seed).unwrap();
            let fp = sc.fisheries[0];
            for (acc, (value, (lo, hi))) in sums.iter_mut().zip([
                (fp.r, dist.r),
                (fp.q, dist.q),
                (fp.alpha, dist.alpha),
                (fp.gamma, dist.gamma),
                (fp.p, dist.p1),
                (sc.costs.c_b, dist.c),
                (sc.costs.beta_br, dist.beta_br),
            ]) {
                assert!(value >= lo && value < hi, "value {value} outside ({lo}, {hi})");
                *acc += value;
            }
        }
        // Empirical means within 3 standard errors of the midpoints.
        let ranges = [dist.r, dist.q, dist.alpha, dist.gamma, dist.p1, dist.c, dist.beta_br];
        for (acc, (lo, hi)) in sums.iter().zip(ranges) {
            let mean = acc / n as f64;
            let mid = 0.5 * (lo + hi);
            let se = (hi - lo) / (12.0f64).sqrt() / (n as f64).sqrt();
            assert!(
                (mean - mid).abs() <= 3.0 * se,
                "mean {mean} vs midpoint {mid} (se {se})"
            );
        }
    }

    #[test]
    fn scenario_sampling_is_deterministic() {
        let dist = ScenarioDistribution::default();
        let a = sample_scenario(&dist, 99).unwrap();
        let b = sample_scenario(&dist, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn example1_allocations_sum_to_budget() {
        let (robust, nonrobust) = example1_table_allocations().unwrap();
        assert!(robust.is_feasible());
        assert!(nonrobust.is_feasible());
        let sum: f64 = robust.values().iter().sum();
        assert!((sum - 600.0).abs() < 1e-9);
    }

    #[test]
    fn percentile_hand_check() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&xs, 50.0), 3.0);
        assert!((percentile(&xs, 95.0) - 4.8).abs() < 1e-12);
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(percentile(&xs, 100.0), 5.0);
    }

    #[test]
    fn percentile_table_monotone() {
        let rows: Vec<ScenarioRow> = (0..10)
            .map(|i| ScenarioRow {
                id: i,
                seed: i as u64,
                status: "ok".into(),
                v: Some((i as f64 * 37.0).sin()),
                w: Some((i as f64 * 17.0).cos()),
                robust_utility_robust_solution: None,
                robust_utility_nonrobust_solution: None,
                nonrobust_utility_robust_solution: None,
                nonrobust_utility_nonrobust_solution: None,
            })
            .collect();
        let table = percentile_table(&rows);
        assert_eq!(table.len(), 19);
        for pair in table.windows(2) {
            assert!(pair[1].v >= pair[0].v);
            assert!(pair[1].w >= pair[0].w);
        }
    }

    #[test]
    fn scenario_toml_roundtrip() {
        let sc = example1_scenario();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        save_scenario(&sc, &path).unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(sc, loaded);
    }

    #[test]
    fn distribution_toml_partial_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dist.toml");
        std::fs::write(&path, "k = 2\nepsilon = 0.05\n").unwrap();
        let dist = load_distribution(&path).unwrap();
        assert_eq!(dist.k, 2);
        assert_eq!(dist.epsilon, 0.05);
        assert_eq!(dist.p_r_tot, 1000.0);
    }
}
