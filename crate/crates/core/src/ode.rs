//! Embedded explicit Runge–Kutta pairs with an adaptive driver.
//!
//! The driver is deliberately small: it owns step-size control and hands
//! every error-accepted step to a hook that may still reject it (energy
//! monotonicity) or stop the integration (residual reached, event found).

/// Butcher tableau of an embedded pair. `b` advances the solution, `b_low`
/// is the embedded lower-order weights used for the error estimate.
pub struct Tableau {
    pub c: &'static [f64],
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
    pub b_low: &'static [f64],
    /// Order of the lower member, used in the step-size exponent.
    pub low_order: u32,
}

/// Bogacki–Shampine 3(2). All propagating weights are non-negative, so a
/// step never moves further than `h · max‖k_i‖`.
pub const BOGACKI_SHAMPINE: Tableau = Tableau {
    c: &[0.0, 0.5, 0.75, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.75], &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]],
    b: &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0],
    b_low: &[7.0 / 24.0, 0.25, 1.0 / 3.0, 0.125],
    low_order: 2,
};

/// Dormand–Prince 5(4).
pub const DORMAND_PRINCE: Tableau = Tableau {
    c: &[0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0],
    a: &[
        &[],
        &[0.2],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
        ],
        &[
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ],
    b: &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ],
    b_low: &[
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ],
    low_order: 4,
};

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub atol: f64,
    pub rtol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl StepControl {
    pub fn new(tol: f64, h_max: f64) -> Self {
        Self {
            atol: tol,
            rtol: tol,
            h_init: (h_max * 0.1).min(1e-2),
            h_max,
            h_min: 1e-14,
            max_steps: 5_000_000,
        }
    }
}

pub struct StepOutput {
    pub y: Vec<f64>,
    /// Error estimate scaled by the tolerances; a step is acceptable at ≤ 1.
    pub err: f64,
}

/// One step of the pair from `(t, y)` with size `h`.
pub fn rk_step<F>(tab: &Tableau, rhs: &F, t: f64, y: &[f64], h: f64, ctrl: &StepControl) -> StepOutput
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let stages = tab.c.len();
    let n = y.len();
    let mut ks: Vec<Vec<f64>> = Vec::with_capacity(stages);
    let mut tmp = vec![0.0; n];
    for s in 0..stages {
        tmp.copy_from_slice(y);
        for (j, a) in tab.a[s].iter().enumerate() {
            if *a != 0.0 {
                for (t_i, k_i) in tmp.iter_mut().zip(&ks[j]) {
                    *t_i += h * a * k_i;
                }
            }
        }
        ks.push(rhs(t + tab.c[s] * h, &tmp));
    }
    let mut y_new = y.to_vec();
    let mut err = 0.0f64;
    for i in 0..n {
        let mut hi = 0.0;
        let mut lo = 0.0;
        for ((k, b), b_low) in ks.iter().zip(tab.b).zip(tab.b_low) {
            hi += b * k[i];
            lo += b_low * k[i];
        }
        y_new[i] += h * hi;
        let scale = ctrl.atol + ctrl.rtol * y[i].abs().max(y_new[i].abs());
        err = err.max((h * (hi - lo)).abs() / scale);
    }
    StepOutput { y: y_new, err }
}

pub enum Verdict {
    Accept,
    /// Retry the step with half the size.
    Reject,
    /// Accept and end the integration.
    Stop,
}

#[derive(Debug, Clone)]
pub struct DriveOutcome {
    pub t: f64,
    pub y: Vec<f64>,
    pub h_next: f64,
    pub steps: usize,
    pub stopped: bool,
}

#[derive(Debug, Clone)]
pub struct DriveFailure {
    pub t: f64,
    pub y: Vec<f64>,
    pub reason: String,
}

/// Integrates from `t0` to exactly `t_end`, calling `hook(t, y, t_new, y_new)`
/// after every error-accepted step.
#[allow(clippy::too_many_arguments)]
pub fn drive<F, H>(
    tab: &Tableau,
    rhs: &F,
    ctrl: &StepControl,
    t0: f64,
    y0: Vec<f64>,
    t_end: f64,
    h0: Option<f64>,
    mut hook: H,
) -> Result<DriveOutcome, DriveFailure>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
    H: FnMut(f64, &[f64], f64, &[f64]) -> Verdict,
{
    let mut t = t0;
    let mut y = y0;
    let mut h = h0.unwrap_or(ctrl.h_init).min(ctrl.h_max);
    let mut steps = 0;
    let exponent = 1.0 / (tab.low_order as f64 + 1.0);
    while t < t_end {
        if steps >= ctrl.max_steps {
            return Err(DriveFailure {
                t,
                y,
                reason: format!("step budget of {} exhausted", ctrl.max_steps),
            });
        }
        let remaining = t_end - t;
        let last = h >= remaining;
        let h_try = if last { remaining } else { h };
        let out = rk_step(tab, rhs, t, &y, h_try, ctrl);
        if !out.err.is_finite() || out.y.iter().any(|v| !v.is_finite()) {
            h = h_try * 0.25;
            if h < ctrl.h_min {
                return Err(DriveFailure {
                    t,
                    y,
                    reason: "non-finite state".into(),
                });
            }
            continue;
        }
        let factor = if out.err == 0.0 {
            5.0
        } else {
            (0.9 * out.err.powf(-exponent)).clamp(0.2, 5.0)
        };
        if out.err > 1.0 {
            h = h_try * factor;
            if h < ctrl.h_min {
                return Err(DriveFailure {
                    t,
                    y,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            continue;
        }
        let t_new = if last { t_end } else { t + h_try };
        match hook(t, &y, t_new, &out.y) {
            Verdict::Reject => {
                h = h_try * 0.5;
                if h < ctrl.h_min {
                    return Err(DriveFailure {
                        t,
                        y,
                        reason: "step rejected down to minimum size".into(),
                    });
                }
                continue;
            }
            verdict => {
                steps += 1;
                t = t_new;
                y = out.y;
                // Do not let a short final step shrink the carried size.
                h = if last { h.max(h_try * factor) } else { h_try * factor };
                h = h.min(ctrl.h_max);
                if matches!(verdict, Verdict::Stop) {
                    return Ok(DriveOutcome {
                        t,
                        y,
                        h_next: h,
                        steps,
                        stopped: true,
                    });
                }
            }
        }
    }
    Ok(DriveOutcome {
        t,
        y,
        h_next: h,
        steps,
        stopped: false,
    })
}
