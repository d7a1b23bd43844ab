//! The sublinear energy `J(u) = ½‖u‖² − (1/(p+1)) ∫|u|^{p+1}` on an H₀¹
//! grid, and the wrapper functional built on top of it:
//!
//! ```text
//! I(u) = 1 − cos(2π‖u‖²)        for ‖u‖ ≤ 1
//! I(u) = J((‖u‖² − 1) u)        for ‖u‖ > 1
//! ```

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::functional::{Functional, Smoothness};
use crate::point::Space;

fn signed_power(u: f64, p: f64) -> f64 {
    if u > 0.0 {
        u.powf(p)
    } else if u < 0.0 {
        -(-u).powf(p)
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct SublinearEnergy {
    p: f64,
    space: Space,
}

pub fn sublinear_energy(p: f64, grid: Space) -> Result<SublinearEnergy> {
    SublinearEnergy::new(p, grid)
}

impl SublinearEnergy {
    pub fn new(p: f64, space: Space) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParams(format!("exponent p must lie in (0, 1), got {p}")));
        }
        if !matches!(space, Space::H01Grid { .. }) {
            return Err(Error::InvalidParams("the sublinear energy lives on an H01 grid".into()));
        }
        Ok(Self { p, space })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    fn h(&self) -> f64 {
        self.space.mesh_width().expect("H01 grid")
    }

    /// Trapezoid rule for `∫|u|^{p+1}` with zero boundary values.
    pub fn power_integral(&self, u: &[f64]) -> f64 {
        let q = self.p + 1.0;
        self.h() * u.iter().map(|x| x.abs().powf(q)).sum::<f64>()
    }

    /// Nodal residual of the boundary value problem,
    /// `−D²u_i − |u_i|^{p−1} u_i`, with second central differences.
    pub fn bvp_residual(&self, u: &[f64]) -> Vec<f64> {
        let h = self.h();
        let m = u.len();
        (0..m)
            .map(|i| {
                let left = if i > 0 { u[i - 1] } else { 0.0 };
                let right = if i + 1 < m { u[i + 1] } else { 0.0 };
                (2.0 * u[i] - left - right) / (h * h) - signed_power(u[i], self.p)
            })
            .collect()
    }

    /// Nehari mismatch `(‖u‖² − ∫|u|^{p+1}) / ‖u‖²` of the grid function.
    pub fn nehari_mismatch(&self, u: &[f64]) -> f64 {
        let norm_sq = self.space.inner(u, u);
        (norm_sq - self.power_integral(u)) / norm_sq
    }
}

impl Functional for SublinearEnergy {
    fn space(&self) -> Space {
        self.space
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C1NotC2
    }

    fn is_even(&self) -> bool {
        true
    }

    fn energy(&self, u: &[f64]) -> f64 {
        0.5 * self.space.inner(u, u) - self.power_integral(u) / (self.p + 1.0)
    }

    fn gradient_coords(&self, u: &[f64]) -> Vec<f64> {
        let h = self.h();
        let load: Vec<f64> = u.iter().map(|x| h * signed_power(*x, self.p)).collect();
        let lifted = self.space.raise(&load);
        u.iter().zip(lifted).map(|(x, l)| x - l).collect()
    }

    fn kink_coordinates(&self, u: &[f64], h: f64) -> Vec<usize> {
        u.iter()
            .enumerate()
            .filter(|(_, x)| x.abs() < 10.0 * h)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Wrapper {
    inner: SublinearEnergy,
}

/// Wrapper functional on `grid` with sublinear exponent `p` in the outer
/// region.
pub fn wrapper_functional(grid: Space, p: f64) -> Result<Wrapper> {
    Ok(Wrapper {
        inner: SublinearEnergy::new(p, grid)?,
    })
}

impl Wrapper {
    pub fn sublinear(&self) -> &SublinearEnergy {
        &self.inner
    }

    /// `1 − cos(2π‖u‖²)` regardless of which region `u` lies in.
    pub fn inner_branch_energy(&self, u: &[f64]) -> f64 {
        let s = self.inner.space.inner(u, u);
        1.0 - (2.0 * PI * s).cos()
    }

    pub fn inner_branch_gradient(&self, u: &[f64]) -> Vec<f64> {
        let s = self.inner.space.inner(u, u);
        let c = 4.0 * PI * (2.0 * PI * s).sin();
        u.iter().map(|x| c * x).collect()
    }

    /// `J((‖u‖² − 1) u)` regardless of region.
    pub fn outer_branch_energy(&self, u: &[f64]) -> f64 {
        let s = self.inner.space.inner(u, u);
        let w: Vec<f64> = u.iter().map(|x| (s - 1.0) * x).collect();
        self.inner.energy(&w)
    }

    /// Chain rule through `u ↦ (‖u‖² − 1) u`, whose derivative is
    /// self-adjoint: `(s − 1) g + 2 ⟨u, g⟩ u` with `g = ∇J(w)`.
    pub fn outer_branch_gradient(&self, u: &[f64]) -> Vec<f64> {
        let space = self.inner.space;
        let s = space.inner(u, u);
        let w: Vec<f64> = u.iter().map(|x| (s - 1.0) * x).collect();
        let g = self.inner.gradient_coords(&w);
        let ug = space.inner(u, &g);
        g.iter().zip(u).map(|(gi, ui)| (s - 1.0) * gi + 2.0 * ug * ui).collect()
    }
}

impl Functional for Wrapper {
    fn space(&self) -> Space {
        self.inner.space
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C1NotC2
    }

    fn is_even(&self) -> bool {
        true
    }

    fn energy(&self, u: &[f64]) -> f64 {
        if self.inner.space.inner(u, u) <= 1.0 {
            self.inner_branch_energy(u)
        } else {
            self.outer_branch_energy(u)
        }
    }

    fn gradient_coords(&self, u: &[f64]) -> Vec<f64> {
        if self.inner.space.inner(u, u) <= 1.0 {
            self.inner_branch_gradient(u)
        } else {
            self.outer_branch_gradient(u)
        }
    }

    fn kink_coordinates(&self, u: &[f64], h: f64) -> Vec<usize> {
        let norm = self.inner.space.norm(u);
        let gram_scale = 1.0 / self.inner.h();
        // A coordinate step of h moves the norm by at most about h·√(4/h).
        if (norm - 1.0).abs() < 10.0 * h * (4.0 * gram_scale).sqrt() {
            return (0..u.len()).collect();
        }
        if norm <= 1.0 {
            return Vec::new();
        }
        let s = norm * norm;
        u.iter()
            .enumerate()
            .filter(|(_, x)| ((s - 1.0) * **x).abs() < 10.0 * h)
            .map(|(i, _)| i)
            .collect()
    }
}
