//! The ℓ² model functional
//!
//! ```text
//! I(t, x) = ½ Σ x_j² − (2/3) Σ 3^{-j} (a₊(t) (x_j)₊^{3/2} + a₋(t) (x_j)₋^{3/2}) + φ(t)
//! ```
//!
//! truncated to `n` coordinates `x_1..x_n`, with `a₊ = 2 + μ`, `a₋ = 2 − μ`
//! and φ the quadratic penalty outside `[-1, 1]`. Coordinates of a point are
//! laid out as `[t, x_1, ..., x_n]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{residual, CriticalPoint, Functional, Label, Sign, Smoothness};
use crate::point::{Point, Space};
use crate::solvers::{gradient_flow_solve, SolveConfig};

/// Odd C¹ transition from −1 to 1 on `[-1, 1]`, constant outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Transition {
    /// `sign(t) (1 − (1 − |t|)^{3/2})`. Its derivative vanishes like
    /// `√(1 − |t|)` at `±1`, so the flow reaches `t = ±1` in finite time.
    #[default]
    HalfPower,
    /// `sin(πt/2)`. Its derivative vanishes linearly at `±1`.
    Sine,
}

impl Transition {
    pub fn mu(&self, t: f64) -> f64 {
        let a = t.abs();
        if a >= 1.0 {
            return t.signum();
        }
        let g = match self {
            Transition::HalfPower => {
                let s = 1.0 - a;
                1.0 - s * s.sqrt()
            }
            Transition::Sine => (std::f64::consts::FRAC_PI_2 * a).sin(),
        };
        if t < 0.0 {
            -g
        } else {
            g
        }
    }

    pub fn mu_prime(&self, t: f64) -> f64 {
        let a = t.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self {
            Transition::HalfPower => 1.5 * (1.0 - a).sqrt(),
            Transition::Sine => std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * a).cos(),
        }
    }

    pub fn a_plus(&self, t: f64) -> f64 {
        2.0 + self.mu(t)
    }

    pub fn a_minus(&self, t: f64) -> f64 {
        2.0 - self.mu(t)
    }
}

pub fn penalty(t: f64) -> f64 {
    if t > 1.0 {
        (t - 1.0) * (t - 1.0)
    } else if t < -1.0 {
        (t + 1.0) * (t + 1.0)
    } else {
        0.0
    }
}

pub fn penalty_prime(t: f64) -> f64 {
    if t > 1.0 {
        2.0 * (t - 1.0)
    } else if t < -1.0 {
        2.0 * (t + 1.0)
    } else {
        0.0
    }
}

/// `3^{-j}`.
pub fn weight(j: usize) -> f64 {
    3f64.powi(-(j as i32))
}

/// Magnitude of the positive branch at `t = 1`: `9 · 3^{-2j}`.
pub fn plus_branch(j: usize) -> f64 {
    9.0 * weight(2 * j)
}

/// Magnitude of the negative branch at `t = 1`: `3^{-2j}`.
pub fn minus_branch(j: usize) -> f64 {
    weight(2 * j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub transition: Transition,
}

impl ModelParams {
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParams("truncation dimension must be at least 1".into()));
        }
        Ok(Self {
            n,
            transition: Transition::default(),
        })
    }

    pub fn with_transition(mut self, transition: Transition) -> Self {
        self.transition = transition;
        self
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            n: 4,
            transition: Transition::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClarkModel {
    params: ModelParams,
    weights: Vec<f64>,
}

pub fn clark_model(params: ModelParams) -> Result<ClarkModel> {
    ClarkModel::new(params)
}

impl ClarkModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        if params.n < 1 {
            return Err(Error::InvalidParams("truncation dimension must be at least 1".into()));
        }
        let weights = (1..=params.n).map(weight).collect();
        Ok(Self { params, weights })
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn point(&self, t: f64, x: &[f64]) -> Result<Point> {
        if x.len() != self.params.n {
            return Err(Error::dims(self.params.n, x.len()));
        }
        let mut coords = Vec::with_capacity(x.len() + 1);
        coords.push(t);
        coords.extend_from_slice(x);
        Point::new(self.space(), coords)
    }

    /// Euclidean norm of the `x` block, i.e. the distance to the segment
    /// `{(t, 0, ...)}` for `|t| ≤ 1`.
    pub fn x_norm(u: &[f64]) -> f64 {
        u[1..].iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Distance from `u` to `Z ∪ N ∪ (−N)`, computed coordinatewise: the
    /// branch values decouple, so the nearest point of `±N` picks the closest
    /// of `{0, plus, minus}` in each coordinate independently.
    pub fn dist_to_critical_set(&self, u: &[f64]) -> f64 {
        let t = u[0];
        let off_segment = (t.abs() - 1.0).max(0.0);
        let to_z = off_segment * off_segment + u[1..].iter().map(|x| x * x).sum::<f64>();
        let to_branch = |side: f64| {
            let dt = t - side;
            let mut acc = dt * dt;
            for (j, &x) in u[1..].iter().enumerate() {
                let (a, b) = (side * plus_branch(j + 1), -side * minus_branch(j + 1));
                acc += [x * x, (x - a) * (x - a), (x - b) * (x - b)]
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
            }
            acc
        };
        to_z.min(to_branch(1.0)).min(to_branch(-1.0)).sqrt()
    }

    /// Unit vectors along `x_1..x_k`.
    pub fn x_block_basis(&self, k: usize) -> Result<Vec<Point>> {
        if k < 1 || k > self.params.n {
            return Err(Error::dims(format!("1..={}", self.params.n), k));
        }
        Ok((1..=k)
            .map(|j| {
                let mut c = vec![0.0; self.params.n + 1];
                c[j] = 1.0;
                Point::from_raw(self.space(), c)
            })
            .collect())
    }

    /// Coordinates of the critical point on the branch `pattern` at level `t`.
    pub fn branch_point(&self, t: f64, pattern: &[Sign]) -> Vec<f64> {
        let tr = self.params.transition;
        let (ap, am) = (tr.a_plus(t), tr.a_minus(t));
        let mut c = vec![0.0; self.params.n + 1];
        c[0] = t;
        for (j, s) in pattern.iter().enumerate().take(self.params.n) {
            let w2 = weight(2 * (j + 1));
            c[j + 1] = match s {
                Sign::Zero => 0.0,
                Sign::Plus => w2 * ap * ap,
                Sign::Minus => -w2 * am * am,
            };
        }
        c
    }
}

impl Functional for ClarkModel {
    fn space(&self) -> Space {
        Space::L2Truncation(self.params.n + 1)
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C1NotC2
    }

    fn is_even(&self) -> bool {
        true
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let t = u[0];
        let tr = self.params.transition;
        let mut quad = 0.0;
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (x, w) in u[1..].iter().zip(&self.weights) {
            quad += 0.5 * x * x;
            if *x > 0.0 {
                pos += w * x * x.sqrt();
            } else if *x < 0.0 {
                let y = -x;
                neg += w * y * y.sqrt();
            }
        }
        quad - (2.0 / 3.0) * (tr.a_plus(t) * pos + tr.a_minus(t) * neg) + penalty(t)
    }

    fn gradient_coords(&self, u: &[f64]) -> Vec<f64> {
        let t = u[0];
        let tr = self.params.transition;
        let (ap, am) = (tr.a_plus(t), tr.a_minus(t));
        let mut g = Vec::with_capacity(u.len());
        g.push(0.0);
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (x, w) in u[1..].iter().zip(&self.weights) {
            let gx = if *x > 0.0 {
                let r = x.sqrt();
                pos += w * x * r;
                x - w * ap * r
            } else if *x < 0.0 {
                let y = -x;
                let r = y.sqrt();
                neg += w * y * r;
                x + w * am * r
            } else {
                0.0
            };
            g.push(gx);
        }
        g[0] = -(2.0 / 3.0) * tr.mu_prime(t) * (pos - neg) + penalty_prime(t);
        g
    }

    fn kink_coordinates(&self, u: &[f64], h: f64) -> Vec<usize> {
        let band = 10.0 * h;
        let mut out = Vec::new();
        let t = u[0];
        if (t - 1.0).abs() < band || (t + 1.0).abs() < band || t.abs() < band {
            out.push(0);
        }
        for (j, x) in u.iter().enumerate().skip(1) {
            if x.abs() < band {
                out.push(j);
            }
        }
        out
    }

    fn classify(&self, u: &[f64], tol: f64) -> (Label, Vec<Sign>) {
        let pattern: Vec<Sign> = u[1..]
            .iter()
            .enumerate()
            .map(|(j, x)| {
                if x.abs() < 0.5 * minus_branch(j + 1) {
                    Sign::Zero
                } else if *x > 0.0 {
                    Sign::Plus
                } else {
                    Sign::Minus
                }
            })
            .collect();
        let label = if Self::x_norm(u) < 10.0 * tol && u[0].abs() <= 1.0 + tol {
            Label::Z
        } else if u[0] > 0.0 {
            Label::N
        } else {
            Label::NegN
        };
        (label, pattern)
    }
}

/// All sign patterns of length `n` in canonical order: lexicographic with
/// `x_1` most significant and `Zero < Plus < Minus`.
pub fn sign_patterns(n: usize) -> Vec<Vec<Sign>> {
    const SIGNS: [Sign; 3] = [Sign::Zero, Sign::Plus, Sign::Minus];
    let total = 3usize.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut p = vec![Sign::Zero; n];
            for slot in p.iter_mut().rev() {
                *slot = SIGNS[code % 3];
                code /= 3;
            }
            p
        })
        .collect()
}

/// Closed-form critical set: `N` at `t = 1` in canonical pattern order,
/// then `−N` (negations, same order), then `z_samples` evenly spaced points
/// of the segment `Z`.
pub fn enumerate_critical_set(params: ModelParams, z_samples: usize) -> Result<Vec<CriticalPoint>> {
    let model = ClarkModel::new(params)?;
    let space = model.space();
    let mut out = Vec::with_capacity(2 * 3usize.pow(params.n as u32) + z_samples);
    let make = |coords: Vec<f64>, label: Label, pattern: Vec<Sign>| {
        let value = model.energy(&coords);
        let res = residual(&model, &coords);
        CriticalPoint {
            point: Point::from_raw(space, coords),
            value,
            residual: res,
            label,
            sign_pattern: pattern,
        }
    };
    let patterns = sign_patterns(params.n);
    for p in &patterns {
        out.push(make(model.branch_point(1.0, p), Label::N, p.clone()));
    }
    for p in &patterns {
        let coords: Vec<f64> = model.branch_point(1.0, p).iter().map(|c| -c).collect();
        let neg: Vec<Sign> = p.iter().map(Sign::negated).collect();
        out.push(make(coords, Label::NegN, neg));
    }
    for i in 0..z_samples {
        let t = if z_samples == 1 {
            0.0
        } else {
            let m = (z_samples - 1) as f64;
            (2.0 * i as f64 - m) / m
        };
        let mut coords = vec![0.0; params.n + 1];
        coords[0] = t;
        out.push(make(coords, Label::Z, vec![Sign::Zero; params.n]));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPointRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
    pub label: String,
    pub pattern: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalSetJson {
    pub n: usize,
    pub points: Vec<CriticalPointRecord>,
}

impl CriticalSetJson {
    pub fn from_points(n: usize, points: &[CriticalPoint]) -> Self {
        Self {
            n,
            points: points
                .iter()
                .map(|cp| CriticalPointRecord {
                    t: cp.point.coords()[0],
                    x: cp.point.coords()[1..].to_vec(),
                    value: cp.value,
                    label: cp.label.as_str().to_string(),
                    pattern: cp.pattern(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TailBound {
    pub j0: usize,
    /// `Σ_{j>j0} 27 · 3^{-4j}` summed to infinity in closed form.
    pub tail_sum: f64,
    /// Same sum truncated at the model dimension.
    pub truncated_tail_sum: f64,
    /// `(2/3) · 3^{-4 j0}`.
    pub stated_bound: f64,
    /// `3^{-j0} (3^{-2 j0})^{3/2} = 3^{-4 j0}`, the left-hand lower bound.
    pub lower_bound: f64,
    /// `1 − tail_sum / lower_bound`.
    pub margin: f64,
}

pub fn tail_bound(j0: usize, n: usize) -> TailBound {
    let q = weight(4);
    let tail_sum = 27.0 * weight(4 * (j0 + 1)) / (1.0 - q);
    let truncated_tail_sum = ((j0 + 1)..=n).map(|j| 27.0 * weight(4 * j)).sum();
    let lower_bound = weight(j0) * weight(2 * j0).powf(1.5);
    TailBound {
        j0,
        tail_sum,
        truncated_tail_sum,
        stated_bound: (2.0 / 3.0) * weight(4 * j0),
        lower_bound,
        margin: 1.0 - tail_sum / lower_bound,
    }
}

/// Seeds for the interior cross-check: a tensor grid of `t` values in
/// `[-(1-δ), 1-δ]` and per-coordinate levels scaled by `9 · 3^{-2j}`.
#[derive(Debug, Clone, Serialize)]
pub struct InteriorGrid {
    pub t_points: usize,
    /// Multipliers of `9 · 3^{-2j}`, each in `[-1, 1]`.
    pub levels: Vec<f64>,
    pub delta: f64,
}

impl Default for InteriorGrid {
    fn default() -> Self {
        Self {
            t_points: 7,
            levels: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            delta: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InteriorReport {
    pub tail_bounds: Vec<TailBound>,
    pub tail_bounds_hold: bool,
    pub seeds: usize,
    pub converged: usize,
    pub non_converged: usize,
    pub interior_converged: usize,
    /// Converged points with `|t| < 1 − δ` and a nonzero `x` block.
    pub violations: Vec<Point>,
}

/// Checks that no critical point lies over the open segment with `x ≠ 0`:
/// the tail-bound inequality for each leading index, and a solver sweep
/// from grid seeds.
pub fn verify_no_interior_negatives(
    params: ModelParams,
    grid: &InteriorGrid,
    cfg: &SolveConfig,
) -> Result<InteriorReport> {
    let model = ClarkModel::new(params)?;
    let tail_bounds: Vec<TailBound> = (1..=params.n.max(6)).map(|j0| tail_bound(j0, params.n)).collect();
    let tail_bounds_hold = tail_bounds
        .iter()
        .all(|b| b.tail_sum < b.stated_bound && b.stated_bound < b.lower_bound);

    let t_max = 1.0 - grid.delta;
    let t_values: Vec<f64> = if grid.t_points <= 1 {
        vec![0.0]
    } else {
        (0..grid.t_points)
            .map(|i| -t_max + 2.0 * t_max * i as f64 / (grid.t_points - 1) as f64)
            .collect()
    };
    let mut seeds = Vec::new();
    let levels = grid.levels.len();
    let combos = levels.pow(params.n as u32);
    for &t in &t_values {
        for mut code in 0..combos {
            let mut c = vec![t; params.n + 1];
            for j in (1..=params.n).rev() {
                c[j] = grid.levels[code % levels] * plus_branch(j);
                code /= levels;
            }
            seeds.push(c);
        }
    }

    use rayon::prelude::*;
    let results: Vec<_> = seeds
        .par_iter()
        .map(|s| gradient_flow_solve(&model, &Point::from_raw(model.space(), s.clone()), cfg))
        .collect();
    let mut converged = 0;
    let mut non_converged = 0;
    let mut interior_converged = 0;
    let mut violations = Vec::new();
    for r in results {
        match r {
            Ok(sol) => {
                converged += 1;
                let c = sol.point.coords();
                if c[0].abs() < t_max {
                    interior_converged += 1;
                    if ClarkModel::x_norm(c) > 1e-6 {
                        violations.push(sol.point.clone());
                    }
                }
            }
            Err(Error::NonConvergence { .. }) => non_converged += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(InteriorReport {
        tail_bounds,
        tail_bounds_hold,
        seeds: seeds.len(),
        converged,
        non_converged,
        interior_converged,
        violations,
    })
}
