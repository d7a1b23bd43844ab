//! Cutoff pseudo-gradient flow and the odd deformation `η_ε`.
//!
//! The vector field is `Ṽ = φ₁ φ₂ ∇I / ‖∇I‖`, where `φ₁` ramps from 0 on
//! `[I ≤ −2d]` to 1 on `[−d ≤ I]` and `φ₂` ramps from 0 on `N_r(K_{0,e})`
//! to 1 outside `N_{2r}(K_{0,e})`. Both ramps are piecewise linear. The flow
//! `η′ = −Ṽ(η)` has speed at most 1 and never raises the energy; running it
//! for `T_ε = 2d / ν_ε` pushes `[I ≤ −ε]` into `[I ≤ −d] ∪ N_{3r}(K_{0,e})`
//! provided the sampled gradient bounds are not overestimates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::{Functional, Smoothness};
use crate::ode::{drive, StepControl, Verdict, BOGACKI_SHAMPINE};
use crate::point::{Point, Space};
use crate::topology::Cloud;

/// Sampled solution of the flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowTrace {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub energies: Vec<f64>,
}

impl FlowTrace {
    fn start(f: &dyn Functional, u: &Point) -> Self {
        Self {
            times: vec![0.0],
            points: vec![u.clone()],
            energies: vec![f.energy(u.coords())],
        }
    }

    pub fn last(&self) -> &Point {
        self.points.last().expect("trace is never empty")
    }

    /// Largest energy increase over one recorded step.
    pub fn max_energy_increase(&self) -> f64 {
        self.energies
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0)
    }

    /// Largest `‖Δη‖ / Δt` over recorded steps.
    pub fn max_speed(&self) -> f64 {
        self.points
            .windows(2)
            .zip(self.times.windows(2))
            .map(|(p, t)| p[0].dist(&p[1]) / (t[1] - t[0]))
            .fold(0.0, f64::max)
    }

    /// CSV with columns `time,energy,x0,x1,...`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self.points.first().map_or(0, Point::dim);
        let mut header = vec!["time".to_string(), "energy".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        out.write_record(&header)?;
        for ((t, e), p) in self.times.iter().zip(&self.energies).zip(&self.points) {
            let mut row = vec![t.to_string(), e.to_string()];
            row.extend(p.coords().iter().map(|c| c.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Even test functional on the plane with zero-value critical points at
/// `0` and `±(q, 0)`:
///
/// ```text
/// I(x, y) = −q² g(x/q) + ½ y²,   g(s) = s² (s² − 1)² / (1 + s⁶)
/// ```
///
/// Its only other critical points near the zero level are saddles at
/// `x ≈ ±0.56 q` with value `≈ −0.1433 q²`, so every band `[−ρ, 0]` with
/// `ρ < 0.14 q²` is free of them.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwoCluster {
    pub q: f64,
}

impl TwoCluster {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "cluster offset must be positive, got {q}"
            )));
        }
        Ok(Self { q })
    }

    fn g(s: f64) -> f64 {
        let s2 = s * s;
        let m = s2 - 1.0;
        s2 * m * m / (1.0 + s2 * s2 * s2)
    }

    fn g_prime(s: f64) -> f64 {
        let s2 = s * s;
        let s4 = s2 * s2;
        let m = s2 - 1.0;
        let num = s2 * m * m;
        let den = 1.0 + s4 * s2;
        let num_p = 2.0 * s * m * (3.0 * s2 - 1.0);
        let den_p = 6.0 * s * s4;
        (num_p * den - num * den_p) / (den * den)
    }

    pub fn inner_cluster(&self) -> Cloud {
        Cloud::new(vec![Point::zeros(Space::L2Truncation(2))], true)
    }

    pub fn outer_cluster(&self) -> Cloud {
        Cloud::new(
            vec![
                Point::from_raw(Space::L2Truncation(2), vec![self.q, 0.0]),
                Point::from_raw(Space::L2Truncation(2), vec![-self.q, 0.0]),
            ],
            true,
        )
    }

    /// `K₀ = {0, ±(q, 0)}`.
    pub fn zero_level_cluster(&self) -> Cloud {
        let mut pts = self.inner_cluster().points;
        pts.extend(self.outer_cluster().points);
        Cloud::new(pts, true)
    }
}

impl Functional for TwoCluster {
    fn space(&self) -> Space {
        Space::L2Truncation(2)
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C1
    }

    fn is_even(&self) -> bool {
        true
    }

    fn energy(&self, u: &[f64]) -> f64 {
        -self.q * self.q * Self::g(u[0] / self.q) + 0.5 * u[1] * u[1]
    }

    fn gradient_coords(&self, u: &[f64]) -> Vec<f64> {
        vec![-self.q * Self::g_prime(u[0] / self.q), u[1]]
    }
}

/// Tensor grid of sample points over a box, used to estimate gradient
/// lower bounds.
#[derive(Debug, Clone, Serialize)]
pub struct SampleSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub per_axis: usize,
    /// A polished gradient norm at or below this counts as a critical point.
    pub critical_tol: f64,
}

impl SampleSpec {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.lo.len() != dim || self.hi.len() != dim {
            return Err(Error::dims(dim, self.lo.len()));
        }
        if self.per_axis < 2 || self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParams(
                "sample box must be non-degenerate with per_axis >= 2".into(),
            ));
        }
        let total = (self.per_axis as f64).powi(dim as i32);
        if total > 5e7 {
            return Err(Error::InvalidParams(format!(
                "sampling budget too large: {total} points"
            )));
        }
        Ok(())
    }

    fn spacing(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) / (self.per_axis - 1) as f64)
            .fold(0.0, f64::max)
    }

    fn points(&self) -> Vec<Vec<f64>> {
        let dim = self.lo.len();
        let total = self.per_axis.pow(dim as u32);
        (0..total)
            .map(|mut code| {
                (0..dim)
                    .map(|i| {
                        let k = code % self.per_axis;
                        code /= self.per_axis;
                        self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (self.per_axis - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }
}

/// How the band depth ρ is chosen.
#[derive(Debug, Clone, Serialize)]
pub enum RhoChoice {
    Fixed(f64),
    /// Largest candidate whose band contains no critical point outside
    /// `N_r(K₀)`.
    Largest(Vec<f64>),
}

#[derive(Debug, Clone, Serialize)]
struct Sample {
    coords: Vec<f64>,
    energy: f64,
    grad_norm: f64,
    dist_k0: f64,
    dist_k0e: f64,
}

/// Empirical gradient bounds on the band `[−ρ ≤ I ≤ 0]`. The values are
/// sampled lower-confidence estimates, not proven bounds.
#[derive(Debug, Clone, Serialize)]
pub struct GradientBounds {
    pub rho: f64,
    /// `0.9 ×` the sampled infimum of `‖∇I‖` over `[−ρ ≤ I ≤ 0] ∖ N_r(K₀)`.
    pub nu: f64,
    pub sampled_infimum: f64,
    /// Smallest gradient norm after local polishing.
    pub polished_infimum: f64,
    pub samples_in_region: usize,
    pub r: f64,
    pub empirical: bool,
    #[serde(skip)]
    samples: Vec<Sample>,
    #[serde(skip)]
    spacing: f64,
    #[serde(skip)]
    critical_tol: f64,
}

const SAFETY: f64 = 0.9;
const POLISH_STARTS: usize = 8;

/// Derivative-free compass search for a local minimum of `‖∇I‖` inside
/// `region`, starting at `start` with step `step`.
fn polish(f: &dyn Functional, start: &[f64], step: f64, region: &dyn Fn(&[f64]) -> bool) -> f64 {
    let space = f.space();
    let norm = |u: &[f64]| space.norm(&f.gradient_coords(u));
    let mut u = start.to_vec();
    let mut best = norm(&u);
    let mut s = step;
    let mut evals = 0;
    while s > 1e-13 && evals < 20_000 && best > 0.0 {
        let mut moved = false;
        for i in 0..u.len() {
            for dir in [1.0, -1.0] {
                let mut v = u.clone();
                v[i] += dir * s;
                evals += 1;
                if !region(&v) {
                    continue;
                }
                let n = norm(&v);
                if n < best {
                    best = n;
                    u = v;
                    moved = true;
                }
            }
        }
        if !moved {
            s *= 0.5;
        }
    }
    best
}

impl GradientBounds {
    /// Sampled infimum over the samples selected by `keep`, polished from the
    /// best few; `SetupInconsistent` when the polished value is critical.
    fn infimum(
        &self,
        f: &dyn Functional,
        keep: &dyn Fn(&Sample) -> bool,
        region: &dyn Fn(&[f64]) -> bool,
        what: &str,
    ) -> Result<(f64, f64, usize)> {
        let mut chosen: Vec<&Sample> = self.samples.iter().filter(|s| keep(s)).collect();
        if chosen.is_empty() {
            return Ok((f64::INFINITY, f64::INFINITY, 0));
        }
        chosen.sort_by(|a, b| a.grad_norm.total_cmp(&b.grad_norm));
        let sampled = chosen[0].grad_norm;
        let polished = chosen
            .iter()
            .take(POLISH_STARTS)
            .map(|s| polish(f, &s.coords, self.spacing, region))
            .fold(sampled, f64::min);
        if polished <= self.critical_tol {
            return Err(Error::SetupInconsistent(format!(
                "critical point (gradient norm {polished:e}) in {what}"
            )));
        }
        Ok((sampled, polished, chosen.len()))
    }

    /// `ν_ε = min(ν, 0.9 ×` the sampled infimum over
    /// `[−ρ ≤ I ≤ −ε] ∖ N_r(K_{0,e})`), evaluated on the same samples as ν.
    pub fn nu_eps(&self, f: &dyn Functional, k0e: &Cloud, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps < self.rho) {
            return Err(Error::InvalidParams(format!("eps must lie in (0, rho), got {eps}")));
        }
        let (rho, r) = (self.rho, self.r);
        let keep = |s: &Sample| s.energy >= -rho && s.energy <= -eps && s.dist_k0e >= r;
        let region = |u: &[f64]| {
            let e = f.energy(u);
            e >= -rho && e <= -eps && k0e.dist_to(&Point::from_raw(f.space(), u.to_vec())) >= r
        };
        let (sampled, _, _) = self.infimum(f, &keep, &region, "[-rho <= I <= -eps] outside N_r(K0e)")?;
        Ok(self.nu.min(SAFETY * sampled))
    }
}

/// Samples `‖∇I‖` on a grid and returns ρ, ν and the data needed for
/// `ν_ε(ε)`.
pub fn estimate_bounds(
    f: &dyn Functional,
    k0: &Cloud,
    k0e: &Cloud,
    r: f64,
    spec: &SampleSpec,
    rho: &RhoChoice,
) -> Result<GradientBounds> {
    if k0.is_empty() || k0e.is_empty() {
        return Err(Error::EmptyInput("zero-level cluster"));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParams(format!("r must be positive, got {r}")));
    }
    let space = f.space();
    spec.validate(space.dim())?;
    let samples: Vec<Sample> = spec
        .points()
        .into_iter()
        .map(|coords| {
            let p = Point::from_raw(space, coords);
            Sample {
                energy: f.energy(p.coords()),
                grad_norm: space.norm(&f.gradient_coords(p.coords())),
                dist_k0: k0.dist_to(&p),
                dist_k0e: k0e.dist_to(&p),
                coords: p.into_coords(),
            }
        })
        .collect();
    let candidates = match rho {
        RhoChoice::Fixed(v) => vec![*v],
        RhoChoice::Largest(list) => {
            let mut l = list.clone();
            l.sort_by(|a, b| b.total_cmp(a));
            l
        }
    };
    if candidates.is_empty() || candidates.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParams(
            "rho candidates must be positive and nonempty".into(),
        ));
    }
    let mut bounds = GradientBounds {
        rho: 0.0,
        nu: 0.0,
        sampled_infimum: 0.0,
        polished_infimum: 0.0,
        samples_in_region: 0,
        r,
        empirical: true,
        samples,
        spacing: spec.spacing(),
        critical_tol: spec.critical_tol,
    };
    let mut last_err = None;
    for rho in candidates {
        let keep = |s: &Sample| s.energy >= -rho && s.energy <= 0.0 && s.dist_k0 >= r;
        let region = |u: &[f64]| {
            let e = f.energy(u);
            e >= -rho && e <= 0.0 && k0.dist_to(&Point::from_raw(space, u.to_vec())) >= r
        };
        match bounds.infimum(f, &keep, &region, &format!("[-{rho} <= I <= 0] outside N_r(K0)")) {
            Ok((sampled, polished, count)) => {
                if count == 0 {
                    return Err(Error::SetupInconsistent(format!(
                        "no samples in the band [-{rho}, 0] outside N_r(K0)"
                    )));
                }
                bounds.rho = rho;
                bounds.sampled_infimum = sampled;
                bounds.polished_infimum = polished;
                bounds.samples_in_region = count;
                bounds.nu = SAFETY * sampled;
                return Ok(bounds);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Internal("no rho candidate evaluated".into())))
}

/// Constants of the deformation. Immutable once built.
#[derive(Clone)]
pub struct DeformationSetup {
    f: Arc<dyn Functional>,
    k0i: Cloud,
    k0e: Cloud,
    r: f64,
    rho: f64,
    nu: f64,
    nu_eps: f64,
    d: f64,
    eps: f64,
    delta0: f64,
}

/// JSON view of a setup.
#[derive(Debug, Clone, Serialize)]
pub struct SetupSummary {
    pub r: f64,
    pub rho: f64,
    pub nu: f64,
    pub nu_eps: f64,
    pub d: f64,
    pub eps: f64,
    pub delta0: f64,
    pub t_eps: f64,
    pub k0i: Vec<Vec<f64>>,
    pub k0e: Vec<Vec<f64>>,
    /// ν and ν_ε come from sampling, not from a proof.
    pub empirical: bool,
}

impl std::fmt::Debug for DeformationSetup {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(fmt, "{:?}", self.summary())
    }
}

impl DeformationSetup {
    /// Validates the constants and sets `d = (1/3) min(ρ, ν r)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        f: Arc<dyn Functional>,
        k0i: Cloud,
        k0e: Cloud,
        delta0: f64,
        r: f64,
        rho: f64,
        nu: f64,
        nu_eps: f64,
        eps: f64,
    ) -> Result<Self> {
        if k0i.is_empty() || k0e.is_empty() {
            return Err(Error::EmptyInput("zero-level cluster"));
        }
        let space = f.space();
        if k0i.points.iter().chain(&k0e.points).any(|p| p.space() != space) {
            return Err(Error::dims(space, "cluster point in another space"));
        }
        if !(delta0 > 0.0) || !(r > 0.0 && r <= delta0 / 3.0) {
            return Err(Error::SetupInconsistent(format!(
                "need 0 < r <= delta0/3, got r = {r}, delta0 = {delta0}"
            )));
        }
        if !(rho > 0.0 && nu > 0.0) {
            return Err(Error::SetupInconsistent(format!(
                "rho and nu must be positive, got {rho}, {nu}"
            )));
        }
        let d = (rho.min(nu * r)) / 3.0;
        if !(eps > 0.0 && eps <= d / 2.0) {
            return Err(Error::SetupInconsistent(format!(
                "need 0 < eps <= d/2 = {}, got {eps}",
                d / 2.0
            )));
        }
        if !(nu_eps > 0.0 && nu_eps <= nu) {
            return Err(Error::SetupInconsistent(format!("need 0 < nu_eps <= nu, got {nu_eps}")));
        }
        let sep = k0i.points.iter().map(|p| k0e.dist_to(p)).fold(f64::INFINITY, f64::min);
        if sep < 2.0 * delta0 {
            return Err(Error::SetupInconsistent(format!(
                "clusters {sep} apart, need at least 2 delta0 = {}",
                2.0 * delta0
            )));
        }
        if let Some(i) = k0e.unmatched_negation(1e-12) {
            return Err(Error::SetupInconsistent(format!(
                "outer cluster not symmetric at point {i}"
            )));
        }
        Ok(Self {
            f,
            k0i,
            k0e,
            r,
            rho,
            nu,
            nu_eps,
            d,
            eps,
            delta0,
        })
    }

    /// Setup from sampled bounds.
    pub fn from_bounds(
        f: Arc<dyn Functional>,
        k0i: Cloud,
        k0e: Cloud,
        delta0: f64,
        bounds: &GradientBounds,
        eps: f64,
    ) -> Result<Self> {
        let nu_eps = bounds.nu_eps(f.as_ref(), &k0e, eps)?;
        Self::new(f, k0i, k0e, delta0, bounds.r, bounds.rho, bounds.nu, nu_eps, eps)
    }

    /// Same setup with a different `ν_ε`.
    pub fn with_nu_eps(&self, nu_eps: f64) -> Result<Self> {
        Self::new(
            self.f.clone(),
            self.k0i.clone(),
            self.k0e.clone(),
            self.delta0,
            self.r,
            self.rho,
            self.nu,
            nu_eps,
            self.eps,
        )
    }

    pub fn functional(&self) -> &dyn Functional {
        self.f.as_ref()
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn nu_eps(&self) -> f64 {
        self.nu_eps
    }

    pub fn outer_cluster(&self) -> &Cloud {
        &self.k0e
    }

    /// `T_ε = 2d / ν_ε`.
    pub fn t_eps(&self) -> f64 {
        2.0 * self.d / self.nu_eps
    }

    pub fn summary(&self) -> SetupSummary {
        let rows = |c: &Cloud| c.points.iter().map(|p| p.coords().to_vec()).collect();
        SetupSummary {
            r: self.r,
            rho: self.rho,
            nu: self.nu,
            nu_eps: self.nu_eps,
            d: self.d,
            eps: self.eps,
            delta0: self.delta0,
            t_eps: self.t_eps(),
            k0i: rows(&self.k0i),
            k0e: rows(&self.k0e),
            empirical: true,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }

    /// `φ₁`: 0 on `[I ≤ −2d]`, 1 on `[−d ≤ I]`.
    pub fn energy_cutoff(&self, energy: f64) -> f64 {
        ((energy + 2.0 * self.d) / self.d).clamp(0.0, 1.0)
    }

    /// `φ₂`: 0 on `N_r(K_{0,e})`, 1 outside `N_{2r}(K_{0,e})`.
    pub fn distance_cutoff(&self, dist: f64) -> f64 {
        ((dist - self.r) / self.r).clamp(0.0, 1.0)
    }

    pub fn dist_to_outer(&self, u: &[f64]) -> f64 {
        self.k0e.dist_to(&Point::from_raw(self.f.space(), u.to_vec()))
    }

    /// `Ṽ(u)` on raw coordinates. Exact zeros where a cutoff vanishes.
    fn field(&self, u: &[f64]) -> std::result::Result<Vec<f64>, String> {
        let cut = self.energy_cutoff(self.f.energy(u)) * self.distance_cutoff(self.dist_to_outer(u));
        if cut == 0.0 {
            return Ok(vec![0.0; u.len()]);
        }
        let g = self.f.gradient_coords(u);
        let n = self.f.space().norm(&g);
        if n == 0.0 {
            return Err(format!("gradient vanishes in the active region at {u:?}"));
        }
        Ok(g.into_iter().map(|x| cut * x / n).collect())
    }
}

/// `Ṽ(u) = φ₁(u) φ₂(u) ∇I(u) / ‖∇I(u)‖`.
pub fn pseudo_gradient(setup: &DeformationSetup, u: &Point) -> Result<Point> {
    let f = setup.functional();
    crate::functional::evaluate(f, u)?;
    if f.energy(u.coords()) >= 0.0 {
        return Err(Error::Precondition("the pseudo-gradient is defined on [I < 0]".into()));
    }
    let v = setup.field(u.coords()).map_err(Error::SetupInconsistent)?;
    Ok(Point::from_raw(f.space(), v))
}

/// Largest energy increase tolerated over one step of the flow.
const FLOW_ENERGY_SLACK: f64 = 1e-11;

/// Integrates `η′ = −Ṽ(η)` from `u` over `[0, T]` with Bogacki–Shampine
/// 3(2), whose non-negative weights keep every step within `h` of its start.
pub fn flow(setup: &DeformationSetup, u: &Point, t_end: f64) -> Result<FlowTrace> {
    let f = setup.functional();
    crate::functional::evaluate(f, u)?;
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "flow time must be non-negative, got {t_end}"
        )));
    }
    if f.energy(u.coords()) >= 0.0 {
        return Err(Error::Precondition("the flow starts in [I < 0]".into()));
    }
    let mut trace = FlowTrace::start(f, u);
    if t_end == 0.0 {
        return Ok(trace);
    }
    let space = f.space();
    let field_error = std::cell::RefCell::new(None::<String>);
    let rhs = |_t: f64, y: &[f64]| -> Vec<f64> {
        match setup.field(y) {
            Ok(v) => v.into_iter().map(|x| -x).collect(),
            Err(msg) => {
                field_error.borrow_mut().get_or_insert(msg);
                vec![f64::NAN; y.len()]
            }
        }
    };
    let mut ctrl = StepControl::new(1e-10, 0.01 * setup.r);
    ctrl.h_init = ctrl.h_max;
    let mut energy = trace.energies[0];
    let outcome = drive(
        &BOGACKI_SHAMPINE,
        &rhs,
        &ctrl,
        0.0,
        u.coords().to_vec(),
        t_end,
        None,
        |_t, _y, t_new, y_new| {
            let e = f.energy(y_new);
            if e > energy + FLOW_ENERGY_SLACK {
                return Verdict::Reject;
            }
            energy = e;
            trace.times.push(t_new);
            trace.points.push(Point::from_raw(space, y_new.to_vec()));
            trace.energies.push(e);
            Verdict::Accept
        },
    );
    if let Some(msg) = field_error.into_inner() {
        return Err(Error::SetupInconsistent(msg));
    }
    match outcome {
        Ok(_) => Ok(trace),
        Err(fail) => Err(Error::IntegrationError {
            t: fail.t,
            reason: fail.reason,
            partial: Some(Box::new(trace)),
        }),
    }
}

/// Result of `η_ε` with the contract checked.
#[derive(Debug, Clone, Serialize)]
pub struct Deformed {
    pub point: Point,
    pub energy: f64,
    pub dist_to_outer: f64,
    pub trace: FlowTrace,
}

/// `η_ε(u) = η(T_ε, u)`, checked against `I ≤ −d` or `dist(·, K_{0,e}) < 3r`.
pub fn eta_epsilon(setup: &DeformationSetup, u: &Point) -> Result<Deformed> {
    let f = setup.functional();
    crate::functional::evaluate(f, u)?;
    if f.energy(u.coords()) > -setup.eps {
        return Err(Error::Precondition(format!(
            "eta_epsilon needs I(u) <= -eps = {}",
            -setup.eps
        )));
    }
    let trace = flow(setup, u, setup.t_eps())?;
    let point = trace.last().clone();
    let energy = *trace.energies.last().expect("trace is never empty");
    let dist = setup.dist_to_outer(point.coords());
    if energy <= -setup.d || dist < 3.0 * setup.r {
        Ok(Deformed {
            point,
            energy,
            dist_to_outer: dist,
            trace,
        })
    } else {
        Err(Error::DeformationFailure {
            energy,
            distance: dist,
            trace: Box::new(trace),
        })
    }
}

/// [`eta_epsilon`], halving `ν_ε` after each contract failure, at most
/// `max_halvings` times. Returns the result and the `ν_ε` that worked.
pub fn eta_epsilon_with_retry(setup: &DeformationSetup, u: &Point, max_halvings: usize) -> Result<(Deformed, f64)> {
    let mut current = setup.clone();
    let mut attempt = 0;
    loop {
        match eta_epsilon(&current, u) {
            Ok(out) => return Ok((out, current.nu_eps)),
            Err(Error::DeformationFailure { .. }) if attempt < max_halvings => {
                attempt += 1;
                current = current.with_nu_eps(current.nu_eps / 2.0)?;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Largest value of `dI/dt + ν_ε/2` over trace steps whose endpoints both lie
/// in `[−d ≤ I ≤ −ε] ∖ N_{2r}(K_{0,e})`; non-positive when the descent rate
/// holds. `None` when no step qualifies.
pub fn descent_rate_excess(setup: &DeformationSetup, trace: &FlowTrace) -> Option<f64> {
    let inside = |k: usize| {
        let e = trace.energies[k];
        e >= -setup.d && e <= -setup.eps && setup.dist_to_outer(trace.points[k].coords()) >= 2.0 * setup.r
    };
    (0..trace.times.len().saturating_sub(1))
        .filter(|&k| inside(k) && inside(k + 1))
        .map(|k| {
            let rate = (trace.energies[k + 1] - trace.energies[k]) / (trace.times[k + 1] - trace.times[k]);
            rate + setup.nu_eps / 2.0
        })
        .reduce(f64::max)
}

/// Rejection-samples `count` points of `[I ≤ −ε]` uniformly from the box
/// `[lo, hi]`, deterministically from `seed`.
pub fn sample_sublevel(
    setup: &DeformationSetup,
    lo: &[f64],
    hi: &[f64],
    count: usize,
    seed: u64,
) -> Result<Vec<Point>> {
    let f = setup.functional();
    let space = f.space();
    if lo.len() != space.dim() || hi.len() != space.dim() {
        return Err(Error::dims(space.dim(), lo.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let max_draws = 1000 * count.max(1);
    for _ in 0..max_draws {
        if out.len() == count {
            break;
        }
        let c: Vec<f64> = lo.iter().zip(hi).map(|(&a, &b)| rng.gen_range(a..=b)).collect();
        if f.energy(&c) <= -setup.eps {
            out.push(Point::from_raw(space, c));
        }
    }
    if out.len() < count {
        return Err(Error::Precondition(format!(
            "sublevel set [I <= {}] too thin in the sampling box: {} of {count} points",
            -setup.eps,
            out.len()
        )));
    }
    Ok(out)
}

/// Aggregate check of the deformation contract over many starting points.
#[derive(Debug, Clone, Serialize)]
pub struct ContractReport {
    pub samples: usize,
    /// Images in `[I ≤ −d] ∪ N_{3r}(K_{0,e})`.
    pub passed: usize,
    /// Samples that needed at least one halving of `ν_ε`.
    pub retried: usize,
    pub smallest_nu_eps: f64,
    /// Largest `‖Δη‖ / Δt` over all traces.
    pub max_speed: f64,
    pub max_energy_increase: f64,
    /// Largest `‖η_ε(−u) + η_ε(u)‖`.
    pub max_oddness_error: f64,
    /// Largest descent-rate excess over all traces; non-positive when the
    /// rate `ν_ε/2` holds wherever it applies.
    pub max_rate_excess: Option<f64>,
    pub failures: Vec<Point>,
}

impl ContractReport {
    pub fn holds(&self) -> bool {
        self.passed == self.samples
            && self.max_speed <= 1.0 + 1e-8
            && self.max_energy_increase <= 1e-10
            && self.max_oddness_error <= 1e-8
    }
}

/// Runs `η_ε` with retry from every sample and from its negation and
/// collects the contract, speed, monotonicity and oddness figures.
pub fn check_contract(setup: &DeformationSetup, samples: &[Point], max_halvings: usize) -> Result<ContractReport> {
    use rayon::prelude::*;
    let runs: Vec<Result<_>> = samples
        .par_iter()
        .map(|u| {
            let plus = eta_epsilon_with_retry(setup, u, max_halvings);
            let minus = eta_epsilon_with_retry(setup, &u.neg(), max_halvings);
            Ok((u.clone(), plus, minus))
        })
        .collect();
    let mut report = ContractReport {
        samples: samples.len(),
        passed: 0,
        retried: 0,
        smallest_nu_eps: setup.nu_eps,
        max_speed: 0.0,
        max_energy_increase: 0.0,
        max_oddness_error: 0.0,
        max_rate_excess: None,
        failures: Vec::new(),
    };
    for run in runs {
        let (u, plus, minus) = run?;
        let (plus, minus) = match (plus, minus) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::DeformationFailure { .. }), _) | (_, Err(Error::DeformationFailure { .. })) => {
                report.failures.push(u);
                continue;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        report.passed += 1;
        let (out, nu_eps) = plus;
        if nu_eps < setup.nu_eps {
            report.retried += 1;
            report.smallest_nu_eps = report.smallest_nu_eps.min(nu_eps);
        }
        for trace in [&out.trace, &minus.0.trace] {
            report.max_speed = report.max_speed.max(trace.max_speed());
            report.max_energy_increase = report.max_energy_increase.max(trace.max_energy_increase());
        }
        let odd = out.point.add(&minus.0.point).norm();
        report.max_oddness_error = report.max_oddness_error.max(odd);
        let used = setup.with_nu_eps(nu_eps)?;
        if let Some(x) = descent_rate_excess(&used, &out.trace) {
            report.max_rate_excess = Some(report.max_rate_excess.map_or(x, |m: f64| m.max(x)));
        }
    }
    Ok(report)
}

/// The two-cluster setup used for verification: `q = 1`, `δ₀ = q/2`,
/// `r = 0.1`, ρ chosen from a candidate list and ν, ν_ε sampled on a
/// `per_axis²` grid over `[-1.6, 1.6] × [-1.1, 1.1]`.
pub fn two_cluster_setup(per_axis: usize, eps_fraction: f64) -> Result<(DeformationSetup, GradientBounds)> {
    let tc = TwoCluster::new(1.0)?;
    let f: Arc<dyn Functional> = Arc::new(tc);
    let spec = SampleSpec {
        lo: vec![-1.6, -1.1],
        hi: vec![1.6, 1.1],
        per_axis,
        critical_tol: 1e-6,
    };
    let r = 0.1;
    let bounds = estimate_bounds(
        f.as_ref(),
        &tc.zero_level_cluster(),
        &tc.outer_cluster(),
        r,
        &spec,
        &RhoChoice::Largest(vec![0.5, 0.2, 0.1, 0.05, 0.02]),
    )?;
    let d = bounds.rho.min(bounds.nu * r) / 3.0;
    let setup = DeformationSetup::from_bounds(
        f,
        tc.inner_cluster(),
        tc.outer_cluster(),
        0.5 * tc.q,
        &bounds,
        eps_fraction * d / 2.0,
    )?;
    Ok((setup, bounds))
}
