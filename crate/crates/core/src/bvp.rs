//! Shooting solver for `u″ + |u|^{p−1} u = 0` on `(0, 1)` with
//! `u(0) = u(1) = 0`, and the nodal family obtained from the base solution
//! by the exact rescaling `w(x) = α u(βx)`, `α = β^{2/(p−1)}`.
//!
//! Norms come from quadrature carried along the trajectory, so they are
//! continuum values. The grid samples are used for the discrete residual and
//! an independent grid-norm check of the scaling law.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SublinearEnergy;
use crate::ode::{drive, rk_step, StepControl, Verdict, DORMAND_PRINCE};
use crate::point::{Point, Space};

const INTEGRATION_TOL: f64 = 1e-12;
const EVENT_TOL: f64 = 1e-12;
const MAX_STEP: f64 = 0.05;

fn signed_power(u: f64, p: f64) -> f64 {
    if u > 0.0 {
        u.powf(p)
    } else if u < 0.0 {
        -(-u).powf(p)
    } else {
        0.0
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("exponent p must lie in (0, 1), got {p}")))
    }
}

/// State `(u, u′, ∫u′², ∫|u|^{p+1})`.
fn rhs(p: f64) -> impl Fn(f64, &[f64]) -> Vec<f64> {
    move |_t, y| vec![y[1], -signed_power(y[0], p), y[1] * y[1], y[0].abs().powf(p + 1.0)]
}

/// `½ u′² + |u|^{p+1} / (p+1)`, conserved along exact trajectories.
pub fn first_integral(p: f64, u: f64, du: f64) -> f64 {
    0.5 * du * du + u.abs().powf(p + 1.0) / (p + 1.0)
}

fn control() -> StepControl {
    let mut ctrl = StepControl::new(INTEGRATION_TOL, MAX_STEP);
    ctrl.h_init = 1e-3;
    ctrl
}

/// Zero of `u` where it crosses sign.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Crossing {
    pub t: f64,
    pub du: f64,
    /// `∫_0^t u′²`.
    pub kinetic: f64,
    /// `∫_0^t |u|^{p+1}`.
    pub potential: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Shot {
    pub p: f64,
    pub slope: f64,
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub crossings: Vec<Crossing>,
    /// Largest relative change of the first integral along the trajectory.
    pub energy_drift: f64,
}

impl Shot {
    pub fn crossing_times(&self) -> Vec<f64> {
        self.crossings.iter().map(|c| c.t).collect()
    }
}

/// Integrates from `u(0) = 0`, `u′(0) = slope` up to `t_max` (or the
/// first `max_crossings` sign changes), locating each sign change of `u` by
/// bisection on the step that contains it.
pub fn shoot_until(p: f64, slope: f64, t_max: f64, max_crossings: usize) -> Result<Shot> {
    check_p(p)?;
    if !(slope != 0.0 && slope.is_finite()) {
        return Err(Error::InvalidParams(format!("slope must be nonzero, got {slope}")));
    }
    if !(t_max > 0.0) {
        return Err(Error::InvalidParams(format!("t_max must be positive, got {t_max}")));
    }
    let f = rhs(p);
    let ctrl = control();
    let e0 = first_integral(p, 0.0, slope);
    let mut shot = Shot {
        p,
        slope,
        times: vec![0.0],
        u: vec![0.0],
        du: vec![slope],
        crossings: Vec::new(),
        energy_drift: 0.0,
    };
    let outcome = drive(
        &DORMAND_PRINCE,
        &f,
        &ctrl,
        0.0,
        vec![0.0, slope, 0.0, 0.0],
        t_max,
        None,
        |t, y, t_new, y_new| {
            if y[0] != 0.0 && (y[0] * y_new[0] < 0.0 || y_new[0] == 0.0) {
                // Bisect on the step length from (t, y).
                let sign0 = y[0].signum();
                let (mut a, mut b) = (0.0, t_new - t);
                let mut at_b = y_new.to_vec();
                while b - a > EVENT_TOL {
                    let mid = 0.5 * (a + b);
                    let s = rk_step(&DORMAND_PRINCE, &f, t, y, mid, &ctrl).y;
                    if s[0] == 0.0 || s[0].signum() != sign0 {
                        b = mid;
                        at_b = s;
                    } else {
                        a = mid;
                    }
                }
                shot.crossings.push(Crossing {
                    t: t + b,
                    du: at_b[1],
                    kinetic: at_b[2],
                    potential: at_b[3],
                });
            }
            shot.times.push(t_new);
            shot.u.push(y_new[0]);
            shot.du.push(y_new[1]);
            let e = first_integral(p, y_new[0], y_new[1]);
            shot.energy_drift = shot.energy_drift.max((e - e0).abs() / e0);
            if shot.crossings.len() >= max_crossings {
                Verdict::Stop
            } else {
                Verdict::Accept
            }
        },
    );
    if let Err(fail) = outcome {
        return Err(Error::IntegrationError {
            t: fail.t,
            reason: fail.reason,
            partial: None,
        });
    }
    if shot.crossings.is_empty() {
        return Err(Error::NoCrossing { t_max });
    }
    Ok(shot)
}

/// All sign changes of `u` on `[0, t_max]`.
pub fn shoot(p: f64, slope: f64, t_max: f64) -> Result<Shot> {
    shoot_until(p, slope, t_max, usize::MAX)
}

/// `u(t)` at each of the increasing `times`, integrating to each output
/// time exactly.
pub fn sample_trajectory(p: f64, slope: f64, times: &[f64]) -> Result<Vec<f64>> {
    check_p(p)?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidParams(
            "output times must be non-negative and increasing".into(),
        ));
    }
    let f = rhs(p);
    let ctrl = control();
    let mut t = 0.0;
    let mut y = vec![0.0, slope, 0.0, 0.0];
    let mut h = None;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        if target > t {
            let step = drive(&DORMAND_PRINCE, &f, &ctrl, t, y, target, h, |_, _, _, _| {
                Verdict::Accept
            })
            .map_err(|fail| Error::IntegrationError {
                t: fail.t,
                reason: fail.reason,
                partial: None,
            })?;
            t = step.t;
            y = step.y;
            h = Some(step.h_next);
        }
        out.push(y[0]);
    }
    Ok(out)
}

/// A solution with `k` nodal domains on the grid.
#[derive(Debug, Clone, Serialize)]
pub struct NodalSolution {
    pub p: f64,
    pub k: usize,
    pub grid_values: Point,
    /// `∫ u′²` from trajectory quadrature and the exact rescaling.
    pub energy_norm_sq: f64,
    /// `∫ |u|^{p+1}`, same provenance.
    pub power_integral: f64,
    /// Discrete Dirichlet energy of the grid samples.
    pub grid_energy_norm_sq: f64,
    /// `½ ‖u‖² − ∫|u|^{p+1} / (p+1)`.
    pub j_value: f64,
    /// `|‖u‖² − ∫|u|^{p+1}| / ‖u‖²`.
    pub nehari_residual: f64,
    /// Max nodal residual of the second-difference equation.
    pub discrete_residual: f64,
    pub sup_norm: f64,
    /// Sign changes among the nonzero grid values.
    pub interior_zeros: usize,
    /// `u′(0)`.
    pub slope: f64,
}

impl NodalSolution {
    /// `−u`, again a solution with the same norms.
    pub fn negated(&self) -> Self {
        Self {
            grid_values: self.grid_values.neg(),
            slope: -self.slope,
            ..self.clone()
        }
    }

    /// CSV with columns `x,u`, boundary nodes included.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let vals = self.grid_values.coords();
        let cells = vals.len() + 1;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "u"])?;
        out.write_record(["0", "0"])?;
        for (i, v) in vals.iter().enumerate() {
            out.write_record([((i + 1) as f64 / cells as f64).to_string(), v.to_string()])?;
        }
        out.write_record(["1", "0"])?;
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> NodalSummary {
        NodalSummary {
            p: self.p,
            k: self.k,
            energy_norm_sq: self.energy_norm_sq,
            grid_energy_norm_sq: self.grid_energy_norm_sq,
            j_value: self.j_value,
            nehari_residual: self.nehari_residual,
            discrete_residual: self.discrete_residual,
            sup_norm: self.sup_norm,
            interior_zeros: self.interior_zeros,
        }
    }
}

/// JSON summary of a [`NodalSolution`] without the grid values.
#[derive(Debug, Clone, Serialize)]
pub struct NodalSummary {
    pub p: f64,
    pub k: usize,
    pub energy_norm_sq: f64,
    pub grid_energy_norm_sq: f64,
    pub j_value: f64,
    pub nehari_residual: f64,
    pub discrete_residual: f64,
    pub sup_norm: f64,
    pub interior_zeros: usize,
}

/// The base solution's ingredients, shared by the whole family.
#[derive(Debug, Clone)]
struct Base {
    p: f64,
    cells: usize,
    /// `u₁` at nodes `0..=cells`, boundary zeros included.
    nodes: Vec<f64>,
    norm_sq: f64,
    power: f64,
    slope: f64,
}

fn cells_of(grid: Space) -> Result<usize> {
    match grid {
        Space::H01Grid { cells } => Ok(cells),
        other => Err(Error::InvalidParams(format!(
            "nodal solutions live on an H01 grid, got {other:?}"
        ))),
    }
}

fn base(p: f64, grid: Space) -> Result<Base> {
    check_p(p)?;
    let cells = cells_of(grid)?;
    let shot = shoot_until(p, 1.0, 100.0, 1)?;
    let c = shot.crossings[0];
    let beta = c.t;
    let alpha = beta.powf(2.0 / (p - 1.0));
    // w(x) = α u(βx): ∫w′² = α²β ∫u′², ∫|w|^{p+1} = α^{p+1} β^{-1} ∫|u|^{p+1}.
    let norm_sq = alpha * alpha * beta * c.kinetic;
    let power = alpha.powf(p + 1.0) / beta * c.potential;
    let times: Vec<f64> = (1..cells).map(|i| beta * i as f64 / cells as f64).collect();
    let mut nodes = vec![0.0];
    nodes.extend(sample_trajectory(p, 1.0, &times)?.into_iter().map(|u| alpha * u));
    nodes.push(0.0);
    Ok(Base {
        p,
        cells,
        nodes,
        norm_sq,
        power,
        slope: alpha * beta,
    })
}

fn assemble(b: &Base, k: usize) -> Result<NodalSolution> {
    if k < 1 {
        return Err(Error::InvalidParams("nodal count must be at least 1".into()));
    }
    let p = b.p;
    let cells = b.cells;
    let grid = Space::H01Grid { cells };
    let kf = k as f64;
    let amp = kf.powf(2.0 / (p - 1.0));
    // u_k(x) = ±α_k u₁(kx − m) on [m/k, (m+1)/k]; node i maps to node (k·i mod cells).
    let values: Vec<f64> = (1..cells)
        .map(|i| {
            let j = k * i;
            let sign = if (j / cells).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * amp * b.nodes[j % cells]
        })
        .collect();
    let norm_sq = amp * amp * kf * kf * b.norm_sq;
    let power = amp.powf(p + 1.0) * b.power;
    let energy = SublinearEnergy::new(p, grid)?;
    let discrete_residual = energy.bvp_residual(&values).iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let nonzero: Vec<f64> = values.iter().copied().filter(|v| *v != 0.0).collect();
    let interior_zeros = nonzero.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
    Ok(NodalSolution {
        p,
        k,
        grid_energy_norm_sq: grid.inner(&values, &values),
        sup_norm: values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        grid_values: Point::new(grid, values)?,
        energy_norm_sq: norm_sq,
        power_integral: power,
        j_value: 0.5 * norm_sq - power / (p + 1.0),
        nehari_residual: (norm_sq - power).abs() / norm_sq,
        discrete_residual,
        interior_zeros,
        slope: amp * kf * b.slope,
    })
}

/// Positive solution with one nodal domain: shoot with slope 1, rescale so
/// the first zero lands at `x = 1`.
pub fn base_solution(p: f64, grid: Space) -> Result<NodalSolution> {
    assemble(&base(p, grid)?, 1)
}

/// Solution with `k` nodal domains: the base solution compressed to width
/// `1/k` (`β = k`, `α = k^{2/(p−1)}`) with alternating signs.
pub fn nodal_solution(p: f64, k: usize, grid: Space) -> Result<NodalSolution> {
    assemble(&base(p, grid)?, k)
}

/// `u_1..u_kmax` from one base shot.
pub fn nodal_family(p: f64, kmax: usize, grid: Space) -> Result<Vec<NodalSolution>> {
    let b = base(p, grid)?;
    (1..=kmax).into_par_iter().map(|k| assemble(&b, k)).collect()
}

/// Least-squares slope of `ln y` against `ln k`.
pub fn log_log_slope(ks: &[usize], ys: &[f64]) -> Result<f64> {
    if ks.len() != ys.len() || ks.len() < 2 {
        return Err(Error::InvalidParams("need at least two matching (k, y) pairs".into()));
    }
    if ys.iter().any(|y| !(*y > 0.0)) {
        return Err(Error::InvalidParams("values must be positive for a log fit".into()));
    }
    let xs: Vec<f64> = ks.iter().map(|k| (*k as f64).ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ls.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Direct shot of `u_k` compared with the rescaled one.
#[derive(Debug, Clone, Serialize)]
pub struct ReshootReport {
    pub k: usize,
    pub slope: f64,
    /// Sign changes of the direct shot on `[0, 1]`.
    pub crossings: Vec<f64>,
    /// `max_i |direct − rescaled|` over grid nodes.
    pub sup_diff: f64,
}

/// Shoots `u_k` directly with the slope predicted by the rescaling and
/// compares it with the rescaled base solution on the grid.
pub fn reshoot_check(p: f64, k: usize, grid: Space) -> Result<ReshootReport> {
    let b = base(p, grid)?;
    let scaled = assemble(&b, k)?;
    let cells = b.cells;
    let times: Vec<f64> = (1..cells).map(|i| i as f64 / cells as f64).collect();
    let direct = sample_trajectory(p, scaled.slope, &times)?;
    let sup_diff = direct
        .iter()
        .zip(scaled.grid_values.coords())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let shot = shoot(p, scaled.slope, 1.0 + 0.5 / k as f64)?;
    Ok(ReshootReport {
        k,
        slope: scaled.slope,
        crossings: shot.crossing_times(),
        sup_diff,
    })
}

/// Writes `k,norm_sq,j_value` rows.
pub fn write_family_csv<W: std::io::Write>(family: &[NodalSolution], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "norm_sq", "j_value"])?;
    for s in family {
        out.write_record([s.k.to_string(), s.energy_norm_sq.to_string(), s.j_value.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shot_is_odd_in_the_slope() {
        let a = shoot(0.5, 1.3, 10.0).unwrap();
        let b = shoot(0.5, -1.3, 10.0).unwrap();
        assert_eq!(a.crossing_times(), b.crossing_times());
        for (x, y) in a.u.iter().zip(&b.u) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn first_integral_is_conserved() {
        let s = shoot(0.5, 1.0, 20.0).unwrap();
        assert!(s.energy_drift < 1e-8, "{}", s.energy_drift);
        assert!(s.crossings.len() >= 2);
    }

    #[test]
    fn zero_time_scales_with_slope() {
        // T(s) ∝ s^{(1−p)/(1+p)}, which is s^{1/3} at p = 1/2.
        let t1 = shoot_until(0.5, 1.0, 50.0, 1).unwrap().crossings[0].t;
        let t2 = shoot_until(0.5, 8.0, 50.0, 1).unwrap().crossings[0].t;
        assert!((t2 / t1 - 2.0).abs() < 1e-9, "{}", t2 / t1);
    }

    #[test]
    fn no_crossing_is_reported() {
        assert!(matches!(shoot(0.5, 1.0, 0.1), Err(Error::NoCrossing { .. })));
        assert!(shoot(1.5, 1.0, 10.0).is_err());
    }

    #[test]
    fn base_solution_properties() {
        let grid = Space::h01(400).unwrap();
        let u = base_solution(0.5, grid).unwrap();
        assert!(u.nehari_residual < 1e-8, "{}", u.nehari_residual);
        assert!(u.grid_values.coords().iter().all(|v| *v > 0.0));
        assert_eq!(u.interior_zeros, 0);
        let expect = -(1.0 - 0.5) / (2.0 * 1.5) * u.energy_norm_sq;
        assert!((u.j_value - expect).abs() < 1e-8 * expect.abs());
        assert!(u.j_value < 0.0);
    }

    #[test]
    fn nodal_solution_alternates() {
        let grid = Space::h01(600).unwrap();
        let u = nodal_solution(0.5, 3, grid).unwrap();
        assert_eq!(u.interior_zeros, 2);
        let v = u.grid_values.coords();
        assert!(v[50] > 0.0 && v[300] < 0.0 && v[500] > 0.0);
        // The first third is a compressed copy of the base solution.
        let b = base_solution(0.5, grid).unwrap();
        let ratio = v[99] / b.grid_values.coords()[299];
        assert!((ratio - 3f64.powf(-4.0)).abs() < 1e-12);
    }

    #[test]
    fn negation_keeps_norms() {
        let u = nodal_solution(0.3, 2, Space::h01(200).unwrap()).unwrap();
        let n = u.negated();
        assert_eq!(n.energy_norm_sq, u.energy_norm_sq);
        assert_eq!(n.j_value, u.j_value);
        assert_eq!(n.grid_values.coords()[10], -u.grid_values.coords()[10]);
    }

    #[test]
    fn log_slope_of_exact_power() {
        let ks = [1, 2, 3, 4];
        let ys: Vec<f64> = ks.iter().map(|k| (*k as f64).powi(-6)).collect();
        assert!((log_log_slope(&ks, &ys).unwrap() + 6.0).abs() < 1e-12);
    }

    #[test]
    fn csv_has_boundary_rows() {
        let u = base_solution(0.5, Space::h01(10).unwrap()).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,u\n0,0\n"));
        assert!(text.trim_end().ends_with("1,0"));
        assert_eq!(text.lines().count(), 12);
    }
}
