//! The functional abstraction shared by every other module, plus the
//! finite-difference gradient check and the Palais–Smale sequence diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{Point, Space};
use crate::topology::{components_of, Cloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    C1,
    /// Continuously differentiable with kinks in the second derivative.
    C1NotC2,
}

/// Classification of a critical point of the ℓ² model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Z,
    N,
    NegN,
    Other,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Z => "Z",
            Label::N => "N",
            Label::NegN => "-N",
            Label::Other => "other",
        }
    }
}

/// Sign of one coordinate. The declaration order is the canonical
/// enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Zero,
    Plus,
    Minus,
}

impl Sign {
    pub fn as_char(&self) -> char {
        match self {
            Sign::Zero => '0',
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }

    pub fn negated(&self) -> Sign {
        match self {
            Sign::Zero => Sign::Zero,
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

pub fn pattern_string(pattern: &[Sign]) -> String {
    pattern.iter().map(Sign::as_char).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub point: Point,
    pub value: f64,
    pub residual: f64,
    pub label: Label,
    pub sign_pattern: Vec<Sign>,
}

impl CriticalPoint {
    pub fn pattern(&self) -> String {
        pattern_string(&self.sign_pattern)
    }
}

/// A C¹ functional on a finite-dimensional Hilbert space.
///
/// `energy` and `gradient_coords` work on raw coordinates and skip
/// validation; use [`evaluate`] and [`gradient`] at API boundaries.
pub trait Functional: Send + Sync {
    fn space(&self) -> Space;

    fn smoothness(&self) -> Smoothness;

    fn is_even(&self) -> bool;

    fn energy(&self, u: &[f64]) -> f64;

    /// Riesz representative of the derivative at `u`.
    fn gradient_coords(&self, u: &[f64]) -> Vec<f64>;

    /// Coordinates along which a central difference of step `h` would
    /// straddle a kink of the second derivative.
    fn kink_coordinates(&self, _u: &[f64], _h: f64) -> Vec<usize> {
        Vec::new()
    }

    fn classify(&self, _u: &[f64], _tol: f64) -> (Label, Vec<Sign>) {
        (Label::Other, Vec::new())
    }
}

fn check_point(f: &dyn Functional, u: &Point) -> Result<()> {
    if u.space() != f.space() {
        return Err(Error::dims(f.space(), u.space()));
    }
    if let Some(index) = u.coords().iter().position(|c| !c.is_finite()) {
        return Err(Error::InvalidPoint { index });
    }
    Ok(())
}

pub fn evaluate(f: &dyn Functional, u: &Point) -> Result<f64> {
    check_point(f, u)?;
    Ok(f.energy(u.coords()))
}

pub fn gradient(f: &dyn Functional, u: &Point) -> Result<Point> {
    check_point(f, u)?;
    Ok(Point::from_raw(f.space(), f.gradient_coords(u.coords())))
}

/// Gradient norm in the space's own norm.
pub fn residual(f: &dyn Functional, u: &[f64]) -> f64 {
    f.space().norm(&f.gradient_coords(u))
}

#[derive(Debug, Clone, Serialize)]
pub struct RelErrorReport {
    pub step: f64,
    /// `max_i |fd_i − g_i| / max(‖g‖_∞, 1e-12)` over checked coordinates,
    /// where `g` is the analytic derivative as a covector.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub skipped: Vec<usize>,
}

/// Central finite differences against the analytic gradient. The analytic
/// side is lowered through the Gram matrix so both are compared as partial
/// derivatives.
pub fn fd_gradient_check(f: &dyn Functional, u: &Point, h: f64) -> Result<RelErrorReport> {
    check_point(f, u)?;
    if !(h > 0.0) {
        return Err(Error::InvalidParams(format!("step must be positive, got {h}")));
    }
    let space = f.space();
    let analytic = space.lower(&f.gradient_coords(u.coords()));
    let skipped = f.kink_coordinates(u.coords(), h);
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12);

    let mut work = u.coords().to_vec();
    let mut max_abs = 0.0f64;
    let mut checked = 0;
    for i in 0..work.len() {
        if skipped.contains(&i) {
            continue;
        }
        let orig = work[i];
        work[i] = orig + h;
        let up = f.energy(&work);
        work[i] = orig - h;
        let down = f.energy(&work);
        work[i] = orig;
        let fd = (up - down) / (2.0 * h);
        max_abs = max_abs.max((fd - analytic[i]).abs());
        checked += 1;
    }
    Ok(RelErrorReport {
        step: h,
        max_rel_error: max_abs / scale,
        max_abs_error: max_abs,
        checked,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PsReport {
    pub target_level: f64,
    pub value_trace: Vec<f64>,
    pub residual_trace: Vec<f64>,
    pub cluster_points: Vec<Point>,
    pub has_convergent_subsequence: bool,
    /// Tail values within `tol` of the target and tail residuals below `tol`.
    pub is_ps_sequence: bool,
    pub note: String,
}

/// Length of the tail examined by [`ps_diagnostic`]: the last quarter,
/// at least two terms when available.
fn tail_len(len: usize) -> usize {
    (len.div_ceil(4)).max(2.min(len))
}

/// Palais–Smale diagnostic for a finite sequence at level `c`.
///
/// The tail is clustered by chaining points closer than `tol`; a cluster
/// whose members all lie within `tol` of its centroid is taken as the limit
/// of a convergent subsequence.
pub fn ps_diagnostic(f: &dyn Functional, seq: &[Point], c: f64, tol: f64) -> Result<PsReport> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("sequence"));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance must be positive, got {tol}")));
    }
    for u in seq {
        check_point(f, u)?;
    }
    let value_trace: Vec<f64> = seq.iter().map(|u| f.energy(u.coords())).collect();
    let residual_trace: Vec<f64> = seq.iter().map(|u| residual(f, u.coords())).collect();

    let tail = tail_len(seq.len());
    let start = seq.len() - tail;
    let values_ok = value_trace[start..].iter().all(|v| (v - c).abs() <= tol);
    let residuals_ok = residual_trace[start..].iter().all(|r| *r <= tol);

    let tail_points = seq[start..].to_vec();
    let cloud = Cloud::new(tail_points.clone(), false);
    // Chaining threshold tol corresponds to balls of radius tol / 2.
    let parts = components_of(&cloud, tol / 2.0);
    let min_members = 2.min(tail_points.len());
    let mut cluster_points = Vec::new();
    let mut convergent = false;
    for part in &parts {
        let dim = tail_points[0].dim();
        let mut centroid = vec![0.0; dim];
        for &i in part {
            for (acc, x) in centroid.iter_mut().zip(tail_points[i].coords()) {
                *acc += x;
            }
        }
        for acc in centroid.iter_mut() {
            *acc /= part.len() as f64;
        }
        let centroid = Point::from_raw(f.space(), centroid);
        let tight = part.iter().all(|&i| tail_points[i].dist(&centroid) <= tol);
        if part.len() >= min_members && tight {
            convergent = true;
        }
        cluster_points.push(centroid);
    }

    let mut note = String::new();
    if !values_ok {
        note.push_str(&format!(
            "not a PS sequence at level {c}: values do not approach the level; "
        ));
    } else if !residuals_ok {
        note.push_str(&format!(
            "not a PS sequence at level {c}: gradient norms stay above tolerance; "
        ));
    }
    note.push_str(&format!(
        "finite truncation ({:?}): every bounded sequence has a convergent subsequence here, \
         so clustering does not certify the infinite-dimensional condition",
        f.space()
    ));

    Ok(PsReport {
        target_level: c,
        value_trace,
        residual_trace,
        cluster_points,
        has_convergent_subsequence: convergent,
        is_ps_sequence: values_ok && residuals_ok,
        note,
    })
}
