//! Finite-dimensional points and the Hilbert structure they live in.
//!
//! Two spaces are supported: a truncation of ℓ² with the Euclidean inner
//! product, and the interior nodal values of a uniform grid on (0, 1) with
//! the discrete Dirichlet inner product
//! `⟨u, v⟩ = Σ_i (u_{i+1} − u_i)(v_{i+1} − v_i) / h`, boundary values pinned
//! to zero. The dual is identified with the space through this inner product,
//! so gradients are Riesz representatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    /// Truncated ℓ² with the given number of coordinates.
    L2Truncation(usize),
    /// Interior nodes of a uniform grid of `cells` intervals on (0, 1).
    H01Grid { cells: usize },
}

impl Space {
    pub fn h01(cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::InvalidParams(format!(
                "an H01 grid needs at least 2 cells, got {cells}"
            )));
        }
        Ok(Space::H01Grid { cells })
    }

    /// Number of free coordinates.
    pub fn dim(&self) -> usize {
        match *self {
            Space::L2Truncation(n) => n,
            Space::H01Grid { cells } => cells - 1,
        }
    }

    pub fn mesh_width(&self) -> Option<f64> {
        match *self {
            Space::L2Truncation(_) => None,
            Space::H01Grid { cells } => Some(1.0 / cells as f64),
        }
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match *self {
            Space::L2Truncation(_) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Space::H01Grid { cells } => {
                let inv_h = cells as f64;
                let m = a.len();
                let mut acc = 0.0;
                let mut pa = 0.0;
                let mut pb = 0.0;
                for i in 0..=m {
                    let (na, nb) = if i < m { (a[i], b[i]) } else { (0.0, 0.0) };
                    acc += (na - pa) * (nb - pb);
                    pa = na;
                    pb = nb;
                }
                acc * inv_h
            }
        }
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.norm(&d)
    }

    /// Applies the Gram matrix: maps a vector to the Euclidean covector
    /// `w ↦ ⟨v, w⟩`. For ℓ² this is the identity.
    pub fn lower(&self, v: &[f64]) -> Vec<f64> {
        match *self {
            Space::L2Truncation(_) => v.to_vec(),
            Space::H01Grid { cells } => {
                let inv_h = cells as f64;
                let m = v.len();
                (0..m)
                    .map(|i| {
                        let left = if i > 0 { v[i - 1] } else { 0.0 };
                        let right = if i + 1 < m { v[i + 1] } else { 0.0 };
                        (2.0 * v[i] - left - right) * inv_h
                    })
                    .collect()
            }
        }
    }

    /// Inverse of [`Space::lower`]: the Riesz representative of a covector.
    pub fn raise(&self, covector: &[f64]) -> Vec<f64> {
        match *self {
            Space::L2Truncation(_) => covector.to_vec(),
            Space::H01Grid { cells } => {
                // (1/h) tridiag(-1, 2, -1) x = c, Thomas algorithm.
                let h = 1.0 / cells as f64;
                let m = covector.len();
                let mut c_prime = vec![0.0; m];
                let mut d_prime = vec![0.0; m];
                for i in 0..m {
                    let rhs = covector[i] * h;
                    if i == 0 {
                        c_prime[0] = -0.5;
                        d_prime[0] = rhs * 0.5;
                    } else {
                        let denom = 2.0 + c_prime[i - 1];
                        c_prime[i] = -1.0 / denom;
                        d_prime[i] = (rhs + d_prime[i - 1]) / denom;
                    }
                }
                let mut x = vec![0.0; m];
                for i in (0..m).rev() {
                    x[i] = if i + 1 < m {
                        d_prime[i] - c_prime[i] * x[i + 1]
                    } else {
                        d_prime[i]
                    };
                }
                x
            }
        }
    }
}

/// A coordinate vector tagged with its space. Coordinates are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: Vec<f64>,
    space: Space,
}

impl Point {
    pub fn new(space: Space, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != space.dim() {
            return Err(Error::dims(space.dim(), coords.len()));
        }
        if let Some(index) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidPoint { index });
        }
        Ok(Self { coords, space })
    }

    pub fn zeros(space: Space) -> Self {
        Self {
            coords: vec![0.0; space.dim()],
            space,
        }
    }

    /// ℓ² point from raw coordinates.
    pub fn l2(coords: Vec<f64>) -> Result<Self> {
        Self::new(Space::L2Truncation(coords.len()), coords)
    }

    /// Skips the finiteness check. Used by integrators whose states are
    /// already validated.
    pub(crate) fn from_raw(space: Space, coords: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len(), space.dim());
        Self { coords, space }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        self.space.norm(&self.coords)
    }

    pub fn inner(&self, other: &Point) -> f64 {
        self.space.inner(&self.coords, &other.coords)
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.space.dist(&self.coords, &other.coords)
    }

    pub fn neg(&self) -> Point {
        Point::from_raw(self.space, self.coords.iter().map(|c| -c).collect())
    }

    pub fn scale(&self, s: f64) -> Point {
        Point::from_raw(self.space, self.coords.iter().map(|c| s * c).collect())
    }

    pub fn add(&self, other: &Point) -> Point {
        Point::from_raw(
            self.space,
            self.coords.iter().zip(&other.coords).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn sub(&self, other: &Point) -> Point {
        Point::from_raw(
            self.space,
            self.coords.iter().zip(&other.coords).map(|(a, b)| a - b).collect(),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_finite_and_wrong_length() {
        assert!(matches!(
            Point::new(Space::L2Truncation(2), vec![0.0, f64::NAN]),
            Err(Error::InvalidPoint { index: 1 })
        ));
        assert!(matches!(
            Point::new(Space::L2Truncation(3), vec![0.0]),
            Err(Error::DimensionError { .. })
        ));
    }

    #[test]
    fn h01_norm_is_discrete_dirichlet_energy() {
        // u(x) = x(1-x) on 4 cells: nodes 3/16, 1/4, 3/16.
        let space = Space::h01(4).unwrap();
        let u: [f64; 3] = [3.0 / 16.0, 0.25, 3.0 / 16.0];
        let h: f64 = 0.25;
        let padded: [f64; 5] = [0.0, u[0], u[1], u[2], 0.0];
        let expected: f64 = padded.windows(2).map(|w| ((w[1] - w[0]) / h).powi(2) * h).sum();
        assert!((space.inner(&u, &u) - expected).abs() < 1e-15);
    }

    #[test]
    fn raise_inverts_lower() {
        let space = Space::h01(9).unwrap();
        let v: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let back = space.raise(&space.lower(&v));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_zero_iff_origin() {
        let space = Space::h01(6).unwrap();
        assert_eq!(Point::zeros(space).norm(), 0.0);
        let p = Point::new(space, vec![0.0, 0.0, 1e-9, 0.0, 0.0]).unwrap();
        assert!(p.norm() > 0.0);
    }

    fn space_strategy() -> impl Strategy<Value = Space> {
        prop_oneof![
            (1usize..8).prop_map(Space::L2Truncation),
            (2usize..12).prop_map(|cells| Space::H01Grid { cells }),
        ]
    }

    fn triple() -> impl Strategy<Value = (Space, Vec<f64>, Vec<f64>, f64)> {
        space_strategy().prop_flat_map(|s| {
            let d = s.dim();
            (
                Just(s),
                prop::collection::vec(-10.0..10.0f64, d),
                prop::collection::vec(-10.0..10.0f64, d),
                -5.0..5.0f64,
            )
        })
    }

    proptest! {
        #[test]
        fn norm_axioms((space, a, b, s) in triple()) {
            let pa = Point::new(space, a).unwrap();
            let pb = Point::new(space, b).unwrap();
            let scaled = pa.scale(s).norm();
            prop_assert!((scaled - s.abs() * pa.norm()).abs() <= 1e-12 * (1.0 + scaled));
            let sum = pa.add(&pb).norm();
            prop_assert!(sum <= pa.norm() + pb.norm() + 1e-12 * (1.0 + sum));
            prop_assert!(pa.norm() >= 0.0);
        }
    }
}
