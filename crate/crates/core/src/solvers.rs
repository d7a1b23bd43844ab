//! Critical-point finders: a generic descent flow, the structure-aware
//! reduction for the ℓ² model, and the scan for negative critical values
//! accumulating at zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::{pattern_string, residual, CriticalPoint, Functional, Sign};
use crate::model::{plus_branch, ClarkModel, ModelParams};
use crate::ode::{drive, StepControl, Verdict, DORMAND_PRINCE};
use crate::point::Point;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveConfig {
    pub residual_tol: f64,
    pub max_flow_time: f64,
    pub step_cap: f64,
    pub seed_rng: u64,
    /// Per-step local error tolerance of the integrator.
    pub integrator_tol: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            residual_tol: 1e-9,
            max_flow_time: 2e4,
            step_cap: 1.0,
            seed_rng: 0,
            integrator_tol: 1e-8,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) || !(self.step_cap > 0.0) || !(self.max_flow_time > 0.0) {
            return Err(Error::InvalidParams(format!(
                "residual_tol, step_cap and max_flow_time must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Terminal state of a descent flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stationary {
    pub point: Point,
    pub value: f64,
    pub residual: f64,
    pub flow_time: f64,
    pub steps: usize,
    /// Largest energy increase over one accepted step.
    pub max_energy_increase: f64,
}

impl Stationary {
    pub fn classify(&self, f: &dyn Functional, tol: f64) -> CriticalPoint {
        let (label, sign_pattern) = f.classify(self.point.coords(), tol);
        CriticalPoint {
            point: self.point.clone(),
            value: self.value,
            residual: self.residual,
            label,
            sign_pattern,
        }
    }
}

/// Largest energy increase tolerated over one step.
const ENERGY_SLACK: f64 = 1e-10;

/// Integrates `du/dτ = −∇I(u)` with an adaptive Dormand–Prince pair until the
/// gradient norm drops below `residual_tol`. Steps that raise the energy by
/// more than `1e-10` are rejected and retried smaller.
pub fn gradient_flow_solve(f: &dyn Functional, seed: &Point, cfg: &SolveConfig) -> Result<Stationary> {
    cfg.validate()?;
    if seed.space() != f.space() {
        return Err(Error::dims(f.space(), seed.space()));
    }
    let space = f.space();
    let y0 = seed.coords().to_vec();
    let r0 = residual(f, &y0);
    let e0 = f.energy(&y0);
    if r0 < cfg.residual_tol {
        return Ok(Stationary {
            point: seed.clone(),
            value: e0,
            residual: r0,
            flow_time: 0.0,
            steps: 0,
            max_energy_increase: 0.0,
        });
    }

    let rhs = |_t: f64, u: &[f64]| -> Vec<f64> { f.gradient_coords(u).into_iter().map(|g| -g).collect() };
    let mut ctrl = StepControl::new(cfg.integrator_tol, cfg.step_cap);
    ctrl.h_init = (0.01f64).min(cfg.step_cap);

    let mut energy = e0;
    let mut best = (r0, y0.clone(), e0, 0.0);
    let mut max_increase = 0.0f64;
    let mut last_residual = r0;
    let outcome = drive(
        &DORMAND_PRINCE,
        &rhs,
        &ctrl,
        0.0,
        y0,
        cfg.max_flow_time,
        None,
        |_t, _y, t_new, y_new| {
            let e_new = f.energy(y_new);
            if e_new > energy + ENERGY_SLACK {
                return Verdict::Reject;
            }
            max_increase = max_increase.max(e_new - energy);
            energy = e_new;
            let r = residual(f, y_new);
            last_residual = r;
            if r < best.0 {
                best = (r, y_new.to_vec(), e_new, t_new);
            }
            if r < cfg.residual_tol {
                Verdict::Stop
            } else {
                Verdict::Accept
            }
        },
    );
    match outcome {
        Ok(out) if out.stopped => Ok(Stationary {
            point: Point::from_raw(space, out.y),
            value: energy,
            residual: last_residual,
            flow_time: out.t,
            steps: out.steps,
            max_energy_increase: max_increase,
        }),
        Ok(out) => Err(Error::NonConvergence {
            best: Box::new(Stationary {
                point: Point::from_raw(space, best.1),
                value: best.2,
                residual: best.0,
                flow_time: best.3,
                steps: out.steps,
                max_energy_increase: max_increase,
            }),
            flow_time: out.t,
        }),
        Err(fail) => Err(Error::NonConvergence {
            best: Box::new(Stationary {
                point: Point::from_raw(space, best.1),
                value: best.2,
                residual: best.0,
                flow_time: best.3,
                steps: 0,
                max_energy_increase: max_increase,
            }),
            flow_time: fail.t,
        }),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StructuredSolution {
    pub critical: CriticalPoint,
    /// The pattern is stationary along a whole interval of `t`.
    pub non_isolated: bool,
    /// All isolated roots of the reduced equation in the bracket.
    pub roots: Vec<f64>,
}

const BRACKET: (f64, f64) = (-2.0, 2.0);
const SCAN_INTERVALS: usize = 256;
const ROOT_TOL: f64 = 1e-12;

/// Reduces the model to one scalar equation along a sign pattern: the `x`
/// block is slaved to `t` through the branch formula, and `∂_t I = 0` is
/// solved on `[-2, 2]` by a sign scan refined with bisection. The root with
/// the largest `t` is returned.
pub fn structured_solve(params: ModelParams, pattern: &[Sign]) -> Result<StructuredSolution> {
    if pattern.len() > params.n {
        return Err(Error::dims(format!("pattern of length <= {}", params.n), pattern.len()));
    }
    let model = ClarkModel::new(params)?;
    let mut full = pattern.to_vec();
    full.resize(params.n, Sign::Zero);
    let reduced = |t: f64| model.gradient_coords(&model.branch_point(t, &full))[0];

    let (lo, hi) = BRACKET;
    let grid: Vec<f64> = (0..=SCAN_INTERVALS)
        .map(|i| lo + (hi - lo) * i as f64 / SCAN_INTERVALS as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&t| reduced(t)).collect();

    let mut roots = Vec::new();
    let mut zero_run: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < grid.len() {
        if values[i] == 0.0 {
            let start = i;
            while i + 1 < grid.len() && values[i + 1] == 0.0 {
                i += 1;
            }
            if i > start {
                zero_run = Some((start, i));
            } else {
                roots.push(grid[i]);
            }
        } else if i + 1 < grid.len() && values[i + 1] != 0.0 && values[i].signum() != values[i + 1].signum() {
            let (mut a, mut b) = (grid[i], grid[i + 1]);
            let fa = values[i];
            while b - a > ROOT_TOL {
                let mid = 0.5 * (a + b);
                let fm = reduced(mid);
                if fm == 0.0 {
                    a = mid;
                    b = mid;
                } else if fm.signum() == fa.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        i += 1;
    }

    let (t, non_isolated) = if let Some((s, e)) = zero_run {
        (0.5 * (grid[s] + grid[e]), true)
    } else if let Some(&t) = roots.iter().max_by(|a, b| a.total_cmp(b)) {
        (t, false)
    } else {
        return Err(Error::NoSolution(pattern_string(pattern)));
    };
    let coords = model.branch_point(t, &full);
    let value = model.energy(&coords);
    let res = residual(&model, &coords);
    let (label, sign_pattern) = model.classify(&coords, 1e-12);
    Ok(StructuredSolution {
        critical: CriticalPoint {
            point: Point::from_raw(model.space(), coords),
            value,
            residual: res,
            label,
            sign_pattern,
        },
        non_isolated,
        roots,
    })
}

/// Box of seeds; coordinates from `zero_from` on are set to exactly zero
/// with probability `zero_probability`. Coordinate hyperplanes are invariant
/// under the model's flow, so critical points with zero entries are only
/// reachable from seeds that already have them.
#[derive(Debug, Clone, Serialize)]
pub struct SeedBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub zero_probability: f64,
    pub zero_from: usize,
}

impl SeedBox {
    /// `t ∈ [-1.5, 1.5]`, `x_j ∈ [-18 · 3^{-2j}, 18 · 3^{-2j}]`, each `x_j`
    /// zeroed with probability 1/3.
    pub fn clark(n: usize) -> Self {
        let mut lo = vec![-1.5];
        let mut hi = vec![1.5];
        for j in 1..=n {
            lo.push(-2.0 * plus_branch(j));
            hi.push(2.0 * plus_branch(j));
        }
        Self {
            lo,
            hi,
            zero_probability: 1.0 / 3.0,
            zero_from: 1,
        }
    }

    /// Uniform box without zeroing.
    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self {
            lo,
            hi,
            zero_probability: 0.0,
            zero_from: usize::MAX,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .enumerate()
            .map(|(i, (&a, &b))| {
                if i >= self.zero_from && rng.gen::<f64>() < self.zero_probability {
                    0.0
                } else {
                    rng.gen_range(a..=b)
                }
            })
            .collect()
    }

    pub fn samples(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample(&mut rng)).collect()
    }
}

/// Outcome of many independent descent solves.
#[derive(Debug, Clone, Serialize)]
pub struct ScanOutcome {
    pub converged: Vec<CriticalPoint>,
    pub non_converged: usize,
}

/// Runs [`gradient_flow_solve`] from every seed in parallel and classifies
/// converged points. Output order follows seed order.
pub fn solve_from_seeds(f: &dyn Functional, seeds: &[Vec<f64>], cfg: &SolveConfig) -> Result<ScanOutcome> {
    let space = f.space();
    let results: Vec<Result<Stationary>> = seeds
        .par_iter()
        .map(|s| {
            let p = Point::new(space, s.clone())?;
            gradient_flow_solve(f, &p, cfg)
        })
        .collect();
    let mut converged = Vec::new();
    let mut non_converged = 0;
    for r in results {
        match r {
            Ok(s) => converged.push(s.classify(f, cfg.residual_tol)),
            Err(Error::NonConvergence { .. }) => non_converged += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(ScanOutcome {
        converged,
        non_converged,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AccumulationReport {
    /// Converged critical points with value in the open window.
    pub found: Vec<CriticalPoint>,
    pub distances_to_k0hat: Vec<f64>,
    pub window: (f64, f64),
    pub seeds: usize,
    pub converged: usize,
    pub non_converged: usize,
}

impl AccumulationReport {
    /// CSV with columns `value,residual,t,dist_to_K0hat,label`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["value", "residual", "t", "dist_to_K0hat", "label"])?;
        for (cp, d) in self.found.iter().zip(&self.distances_to_k0hat) {
            out.write_record([
                cp.value.to_string(),
                cp.residual.to_string(),
                cp.point.coords()[0].to_string(),
                d.to_string(),
                cp.label.as_str().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Distinct found points (within `tol`), keeping the first of each group.
    pub fn distinct(&self, tol: f64) -> Vec<(CriticalPoint, f64)> {
        let mut out: Vec<(CriticalPoint, f64)> = Vec::new();
        for (cp, d) in self.found.iter().zip(&self.distances_to_k0hat) {
            if !out.iter().any(|(q, _)| q.point.dist(&cp.point) < tol) {
                out.push((cp.clone(), *d));
            }
        }
        out
    }
}

pub(crate) fn dist_to_cloud(p: &Point, cloud: &[Point]) -> f64 {
    cloud.iter().map(|q| p.dist(q)).fold(f64::INFINITY, f64::min)
}

fn canonical_cmp(a: &CriticalPoint, b: &CriticalPoint) -> std::cmp::Ordering {
    a.value.total_cmp(&b.value).then_with(|| {
        a.point
            .coords()
            .iter()
            .zip(b.point.coords())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Descends from random seeds and keeps converged critical points whose
/// values fall in `(lo, hi)`, with their distance to the `K̂₀` cloud. The
/// result is sorted by value, then lexicographically by coordinates.
pub fn accumulation_scan(
    f: &dyn Functional,
    k0hat_cloud: &[Point],
    window: (f64, f64),
    seeds: usize,
    seed_box: &SeedBox,
    cfg: &SolveConfig,
) -> Result<AccumulationReport> {
    let (lo, hi) = window;
    if !(lo < hi) || hi > 0.0 {
        return Err(Error::Precondition(format!(
            "window must satisfy lo < hi <= 0, got ({lo}, {hi})"
        )));
    }
    if k0hat_cloud.is_empty() {
        return Err(Error::EmptyInput("K0hat cloud"));
    }
    if seed_box.lo.len() != f.space().dim() || seed_box.hi.len() != f.space().dim() {
        return Err(Error::dims(f.space().dim(), seed_box.lo.len()));
    }
    let seed_points = seed_box.samples(seeds, cfg.seed_rng);
    let outcome = solve_from_seeds(f, &seed_points, cfg)?;
    let converged = outcome.converged.len();
    let mut found: Vec<CriticalPoint> = outcome
        .converged
        .into_iter()
        .filter(|cp| cp.value > lo && cp.value < hi)
        .collect();
    found.sort_by(canonical_cmp);
    let distances_to_k0hat = found.iter().map(|cp| dist_to_cloud(&cp.point, k0hat_cloud)).collect();
    Ok(AccumulationReport {
        found,
        distances_to_k0hat,
        window,
        seeds,
        converged,
        non_converged: outcome.non_converged,
    })
}

/// Minimum energy over converged descent solves from `seeds` random points
/// of the box; a floor for every minimax value.
pub fn global_minimum_estimate(
    f: &dyn Functional,
    seed_box: &SeedBox,
    seeds: usize,
    cfg: &SolveConfig,
) -> Result<Stationary> {
    let seed_points = seed_box.samples(seeds, cfg.seed_rng);
    let results: Vec<Result<Stationary>> = seed_points
        .par_iter()
        .map(|s| gradient_flow_solve(f, &Point::new(f.space(), s.clone())?, cfg))
        .collect();
    let mut best: Option<Stationary> = None;
    for r in results {
        let s = match r {
            Ok(s) => s,
            Err(Error::NonConvergence { best, .. }) => *best,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| s.value < b.value) {
            best = Some(s);
        }
    }
    best.ok_or(Error::EmptyInput("seeds"))
}
