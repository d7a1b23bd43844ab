//! Upper bounds for the minimax values `c_j = inf_{γ(A) ≥ j} sup_A I` from
//! spheres in `j`-dimensional subspaces, which have genus exactly `j`.
//!
//! The supremum over a sphere is estimated from below (axis points, random
//! sphere samples and projected ascent), so the bounds are as good as the
//! ascent; the budget used is carried with every estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::model::ClarkModel;
use crate::point::{Point, Space};
use crate::topology::{genus_certificate, GenusCertificate, SetSpec};

/// Spheres `{ (offset + ρ) Σ c_i b_i : |c| = 1 }` in the span of an
/// orthonormal family `b_1..b_k`.
#[derive(Debug, Clone, Serialize)]
pub struct SphereFamily {
    pub space: Space,
    pub basis: Vec<Vec<f64>>,
    /// Radius at `ρ = 0`.
    pub offset: f64,
}

impl SphereFamily {
    /// Checks orthonormality in the space's inner product.
    pub fn new(space: Space, basis: Vec<Vec<f64>>, offset: f64) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidParams(
                "sphere family needs at least one direction".into(),
            ));
        }
        for (i, b) in basis.iter().enumerate() {
            if b.len() != space.dim() {
                return Err(Error::dims(space.dim(), b.len()));
            }
            for (j, c) in basis.iter().enumerate().take(i + 1) {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (space.inner(b, c) - expect).abs() > 1e-10 {
                    return Err(Error::InvalidParams(format!("basis vectors {i}, {j} not orthonormal")));
                }
            }
        }
        if !(offset >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "offset must be non-negative, got {offset}"
            )));
        }
        Ok(Self { space, basis, offset })
    }

    /// `x_1..x_k` of the ℓ² model in the slice `t = 0`.
    pub fn model(model: &ClarkModel, k: usize) -> Result<Self> {
        let basis = model.x_block_basis(k)?.into_iter().map(Point::into_coords).collect();
        Self::new(model.space(), basis, 0.0)
    }

    /// The first `k` discrete sine modes, normalized in the grid energy
    /// norm, with spheres of radius `1 + ρ`.
    pub fn sine_modes(space: Space, k: usize) -> Result<Self> {
        let Space::H01Grid { cells } = space else {
            return Err(Error::InvalidParams("sine modes need an H01 grid".into()));
        };
        if k < 1 || k > space.dim() {
            return Err(Error::dims(format!("1..={}", space.dim()), k));
        }
        let basis = (1..=k)
            .map(|m| {
                let v: Vec<f64> = (1..cells)
                    .map(|i| (std::f64::consts::PI * (m * i) as f64 / cells as f64).sin())
                    .collect();
                let n = space.norm(&v);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        Self::new(space, basis, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    fn embed(&self, radius: f64, c: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.space.dim()];
        for (ci, b) in c.iter().zip(&self.basis) {
            for (ui, bi) in u.iter_mut().zip(b) {
                *ui += radius * ci * bi;
            }
        }
        u
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Budget {
    /// Random points on the coefficient sphere.
    pub samples: usize,
    /// Best candidates refined by projected ascent.
    pub starts: usize,
    pub ascent_iters: usize,
    pub seed: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            samples: 64,
            starts: 4,
            ascent_iters: 200,
            seed: 0,
        }
    }
}

impl Budget {
    pub fn describe(&self) -> String {
        format!(
            "samples={};starts={};ascent_iters={};seed={}",
            self.samples, self.starts, self.ascent_iters, self.seed
        )
    }
}

/// Best point found on one sphere.
#[derive(Debug, Clone, Serialize)]
pub struct SphereSup {
    /// A lower bound of the true supremum.
    pub value: f64,
    pub witness: Point,
}

fn normalize(c: &mut [f64]) {
    let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    c.iter_mut().for_each(|x| *x /= n);
}

/// Projected gradient ascent on the coefficient sphere with backtracking.
fn ascend(f: &dyn Functional, fam: &SphereFamily, radius: f64, mut c: Vec<f64>, iters: usize) -> (f64, Vec<f64>) {
    let mut value = f.energy(&fam.embed(radius, &c));
    let mut step = 0.5;
    for _ in 0..iters {
        let g = f.gradient_coords(&fam.embed(radius, &c));
        // Derivative along each basis direction, then the tangent part.
        let mut dc: Vec<f64> = fam.basis.iter().map(|b| radius * fam.space.inner(&g, b)).collect();
        let radial: f64 = dc.iter().zip(&c).map(|(a, b)| a * b).sum();
        dc.iter_mut().zip(&c).for_each(|(d, ci)| *d -= radial * ci);
        let slope = dc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if slope < 1e-15 {
            break;
        }
        let mut improved = false;
        while step > 1e-12 {
            let mut trial: Vec<f64> = c.iter().zip(&dc).map(|(ci, d)| ci + step * d / slope).collect();
            normalize(&mut trial);
            let v = f.energy(&fam.embed(radius, &trial));
            if v > value {
                value = v;
                c = trial;
                improved = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (value, c)
}

/// Estimates `sup I` over the sphere of radius `offset + ρ` in the family's
/// span. The candidates are the axis points `±b_i`, random sphere points,
/// and projected ascent from the best of them.
pub fn sphere_sup(f: &dyn Functional, fam: &SphereFamily, rho: f64, budget: &Budget) -> Result<SphereSup> {
    if fam.space != f.space() {
        return Err(Error::dims(f.space(), fam.space));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidParams(format!("radius must be positive, got {rho}")));
    }
    let k = fam.dim();
    let radius = fam.offset + rho;
    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(2 * k + budget.samples);
    for i in 0..k {
        for s in [1.0, -1.0] {
            let mut c = vec![0.0; k];
            c[i] = s;
            candidates.push(c);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    for _ in 0..budget.samples {
        let mut c: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut c);
        candidates.push(c);
    }
    let mut scored: Vec<(f64, Vec<f64>)> = candidates
        .into_iter()
        .map(|c| (f.energy(&fam.embed(radius, &c)), c))
        .collect();
    // Stable sort keeps the axis points ahead of equal-valued samples.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored[0].clone();
    if k > 1 {
        for (v, c) in scored.into_iter().take(budget.starts) {
            let (v2, c2) = ascend(f, fam, radius, c, budget.ascent_iters);
            if v2.max(v) > best.0 {
                best = (v2, c2);
            }
        }
    }
    Ok(SphereSup {
        value: best.0,
        witness: Point::from_raw(fam.space, fam.embed(radius, &best.1)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimaxEstimate {
    pub j: usize,
    pub rho_star: f64,
    /// `min` of the traced sphere suprema; an upper bound for `c_j` up to
    /// ascent quality.
    pub upper_bound: f64,
    /// `(ρ, sup)` pairs: the grid, then the refinement points.
    pub sphere_sup_trace: Vec<(f64, f64)>,
    pub witness: Point,
    pub genus: GenusCertificate,
    pub budget: Budget,
}

/// `n` radii log-spaced over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Error::InvalidParams(format!("bad grid [{lo}, {hi}] with {n} points")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

/// 24 radii log-spaced over `[1e-7, 1]`. The optimal radius of the `j`-th
/// model sphere is `4 · 3^{-2j}`, about `7.5e-6` at `j = 6`.
pub fn default_rho_grid() -> Vec<f64> {
    log_grid(1e-7, 1.0, 24).expect("valid constant grid")
}

const GOLDEN_ITERS: usize = 60;

/// Minimizes the sphere supremum over `rho_grid`, then refines the best
/// grid radius by golden-section search in `log ρ` between its neighbors.
pub fn cj_upper_bound(
    f: &dyn Functional,
    fam: &SphereFamily,
    rho_grid: &[f64],
    budget: &Budget,
) -> Result<MinimaxEstimate> {
    if rho_grid.is_empty() {
        return Err(Error::EmptyInput("rho grid"));
    }
    if rho_grid.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidParams("rho grid must be positive".into()));
    }
    let j = fam.dim();
    let mut grid = rho_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let sups = grid
        .par_iter()
        .map(|&rho| sphere_sup(f, fam, rho, budget))
        .collect::<Result<Vec<_>>>()?;
    let mut trace: Vec<(f64, f64)> = grid.iter().zip(&sups).map(|(r, s)| (*r, s.value)).collect();
    let (i_best, _) = sups
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .expect("grid is nonempty");
    let mut best = (grid[i_best], sups[i_best].clone());

    if grid.len() >= 2 {
        let lo = grid[i_best.saturating_sub(1)].ln();
        let hi = grid[(i_best + 1).min(grid.len() - 1)].ln();
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let eval = |x: f64| sphere_sup(f, fam, x.exp(), budget);
        let mut x1 = b - ratio * (b - a);
        let mut x2 = a + ratio * (b - a);
        let mut s1 = eval(x1)?;
        let mut s2 = eval(x2)?;
        trace.push((x1.exp(), s1.value));
        trace.push((x2.exp(), s2.value));
        for _ in 0..GOLDEN_ITERS {
            if s1.value <= s2.value {
                b = x2;
                x2 = x1;
                s2 = s1.clone();
                x1 = b - ratio * (b - a);
                s1 = eval(x1)?;
                trace.push((x1.exp(), s1.value));
            } else {
                a = x1;
                x1 = x2;
                s1 = s2.clone();
                x2 = a + ratio * (b - a);
                s2 = eval(x2)?;
                trace.push((x2.exp(), s2.value));
            }
        }
        for (x, s) in [(x1, s1), (x2, s2)] {
            if s.value < best.1.value {
                best = (x.exp(), s);
            }
        }
    }

    if best.1.value >= 0.0 {
        return Err(Error::NoNegativeCertificate { j, best: best.1.value });
    }
    let genus = genus_certificate(&SetSpec::CoordinateSphere {
        k: j,
        radius: fam.offset + best.0,
    })?;
    Ok(MinimaxEstimate {
        j,
        rho_star: best.0,
        upper_bound: best.1.value,
        sphere_sup_trace: trace,
        witness: best.1.witness,
        genus,
        budget: *budget,
    })
}

/// Bounds for `j = 1..=families.len()` on one budget, checked to be
/// non-decreasing in `j`.
pub fn minimax_sequence(
    f: &dyn Functional,
    families: &[SphereFamily],
    rho_grid: &[f64],
    budget: &Budget,
) -> Result<Vec<MinimaxEstimate>> {
    let out = families
        .iter()
        .map(|fam| cj_upper_bound(f, fam, rho_grid, budget))
        .collect::<Result<Vec<_>>>()?;
    for w in out.windows(2) {
        if w[0].upper_bound > w[1].upper_bound {
            return Err(Error::MonotonicityViolation {
                j: w[0].j,
                lower: w[0].upper_bound,
                upper: w[1].upper_bound,
            });
        }
    }
    Ok(out)
}

/// Model bounds for `j = 1..=jmax` using the `x_1..x_j` spheres.
pub fn model_minimax(
    model: &ClarkModel,
    jmax: usize,
    rho_grid: &[f64],
    budget: &Budget,
) -> Result<Vec<MinimaxEstimate>> {
    let families = (1..=jmax)
        .map(|j| SphereFamily::model(model, j))
        .collect::<Result<Vec<_>>>()?;
    minimax_sequence(model, &families, rho_grid, budget)
}

/// CSV with columns `j,rho_star,upper_bound,budget`.
pub fn write_estimates_csv<W: std::io::Write>(estimates: &[MinimaxEstimate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["j", "rho_star", "upper_bound", "budget"])?;
    for e in estimates {
        out.write_record([
            e.j.to_string(),
            e.rho_star.to_string(),
            e.upper_bound.to_string(),
            e.budget.describe(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{wrapper_functional, ModelParams};

    fn model(n: usize) -> ClarkModel {
        ClarkModel::new(ModelParams::new(n).unwrap()).unwrap()
    }

    #[test]
    fn single_axis_sphere_matches_closed_form() {
        let m = model(4);
        let fam = SphereFamily::model(&m, 1).unwrap();
        for rho in [0.01, 0.2, 4.0 / 9.0, 1.0] {
            let s = sphere_sup(&m, &fam, rho, &Budget::default()).unwrap();
            let exact = 0.5 * rho * rho - (4.0 / 9.0) * rho.powf(1.5);
            assert!((s.value - exact).abs() < 1e-15, "{rho}");
        }
        let s = sphere_sup(&m, &fam, 4.0 / 9.0, &Budget::default()).unwrap();
        assert!((s.value + 8.0 / 243.0).abs() < 1e-15);
    }

    #[test]
    fn small_radius_sup_tends_to_zero() {
        let m = model(3);
        let fam = SphereFamily::model(&m, 2).unwrap();
        let s = sphere_sup(&m, &fam, 1e-10, &Budget::default()).unwrap();
        assert!(s.value.abs() < 1e-14);
    }

    #[test]
    fn family_larger_than_truncation_rejected() {
        assert!(matches!(
            SphereFamily::model(&model(2), 3),
            Err(Error::DimensionError { .. })
        ));
    }

    #[test]
    fn c1_bound_refines_to_closed_form() {
        let m = model(4);
        let fam = SphereFamily::model(&m, 1).unwrap();
        let e = cj_upper_bound(&m, &fam, &default_rho_grid(), &Budget::default()).unwrap();
        assert!((e.upper_bound + 8.0 / 243.0).abs() < 1e-12, "{}", e.upper_bound);
        assert!((e.rho_star - 4.0 / 9.0).abs() < 1e-4);
        assert!(m.energy(e.witness.coords()) <= e.upper_bound + 1e-12);
        let min_trace = e.sphere_sup_trace.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert_eq!(min_trace, e.upper_bound);
        assert_eq!((e.genus.lower, e.genus.upper), (1, 1));
    }

    #[test]
    fn model_bounds_follow_the_closed_form() {
        let m = model(6);
        let est = model_minimax(&m, 4, &default_rho_grid(), &Budget::default()).unwrap();
        for e in &est {
            let exact = -(8.0 / 3.0) * 3f64.powi(-4 * e.j as i32);
            assert!(
                (e.upper_bound - exact).abs() < 1e-9 * exact.abs(),
                "j={} {}",
                e.j,
                e.upper_bound
            );
        }
    }

    #[test]
    fn positive_sups_give_no_certificate() {
        let m = model(2);
        let fam = SphereFamily::model(&m, 1).unwrap();
        let err = cj_upper_bound(&m, &fam, &[2.0, 3.0], &Budget::default());
        assert!(matches!(err, Err(Error::NoNegativeCertificate { j: 1, .. })));
    }

    #[test]
    fn wrapper_spheres_just_outside_the_ball_are_negative() {
        // the sublinear term dominates only for small shell radii
        let space = Space::h01(40).unwrap();
        let w = wrapper_functional(space, 0.5).unwrap();
        for k in 1..=3 {
            let fam = SphereFamily::sine_modes(space, k).unwrap();
            let s = sphere_sup(&w, &fam, 1e-4, &Budget::default()).unwrap();
            assert!(s.value < 0.0, "k={k}: {}", s.value);
            assert!((s.witness.norm() - 1.0001).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_columns() {
        let m = model(2);
        let est = model_minimax(&m, 2, &default_rho_grid(), &Budget::default()).unwrap();
        let mut buf = Vec::new();
        write_estimates_csv(&est, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("j,rho_star,upper_bound,budget\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
