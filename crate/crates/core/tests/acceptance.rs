//! Acceptance criteria 1–10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use clark_core::bvp::{log_log_slope, nodal_family, reshoot_check};
use clark_core::deformation::{check_contract, sample_sublevel, two_cluster_setup};
use clark_core::minimax::{default_rho_grid, model_minimax, Budget};
use clark_core::model::{
    sublinear_energy, tail_bound, verify_no_interior_negatives, wrapper_functional, ClarkModel, InteriorGrid,
    ModelParams,
};
use clark_core::solvers::{solve_from_seeds, structured_solve, SeedBox, SolveConfig};
use clark_core::topology::{lemma21_check, model_critical_cloud, Cloud};
use clark_core::{evaluate, fd_gradient_check, Functional, Point, Sign, Space};

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

/// Criterion 1: 2,000 descents on the n = 3 model land on Z ∪ N ∪ (−N).
fn critical_set_oracle() -> Verdict {
    let started = Instant::now();
    let model = ClarkModel::new(ModelParams::new(3).unwrap()).unwrap();
    let cfg = SolveConfig {
        residual_tol: 1e-8,
        ..SolveConfig::default()
    };
    let seeds = SeedBox::clark(3).samples(2000, cfg.seed_rng);
    let out = solve_from_seeds(&model, &seeds, &cfg).unwrap();
    let worst = out
        .converged
        .iter()
        .map(|cp| model.dist_to_critical_set(cp.point.coords()))
        .fold(0.0, f64::max);
    let secs = started.elapsed().as_secs_f64();
    verdict(
        !out.converged.is_empty() && worst <= 1e-6 && secs < 30.0,
        format!(
            "{} converged, {} not; worst distance {worst:.2e} (tol 1e-6); {secs:.1}s (limit 30s)",
            out.converged.len(),
            out.non_converged
        ),
    )
}

/// Criterion 2: closed-form values.
fn exact_values() -> Verdict {
    let m3 = ClarkModel::new(ModelParams::new(3).unwrap()).unwrap();
    let v = evaluate(&m3, &m3.point(1.0, &[1.0, 0.0, 0.0]).unwrap()).unwrap();
    let mut worst = (v + 1.0 / 6.0).abs();
    let m4 = ClarkModel::new(ModelParams::new(4).unwrap()).unwrap();
    for j in 1..=4 {
        let mut pattern = vec![Sign::Zero; 4];
        pattern[j - 1] = Sign::Plus;
        let u = Point::new(m4.space(), m4.branch_point(1.0, &pattern)).unwrap();
        let expected = -13.5 * 3f64.powi(-4 * j as i32);
        worst = worst.max((evaluate(&m4, &u).unwrap() - expected).abs());
    }
    verdict(
        worst <= 1e-12,
        format!("I(1,1,0,0) = {v:.15}; worst error {worst:.1e} (tol 1e-12)"),
    )
}

/// Criterion 3: no critical point over the open segment, and the tail bound
/// holds with margin.
fn interior_exclusion() -> Verdict {
    let report = verify_no_interior_negatives(
        ModelParams::new(3).unwrap(),
        &InteriorGrid::default(),
        &SolveConfig::default(),
    )
    .unwrap();
    let bounds: Vec<_> = (1..=6).map(|j0| tail_bound(j0, 6)).collect();
    // Margin of the tail sum below the stated (2/3)·3^{-4 j0}; the margin
    // below the lower bound 3^{-4 j0} is larger.
    let stated_margin = bounds
        .iter()
        .map(|b| 1.0 - b.tail_sum / b.stated_bound)
        .fold(f64::INFINITY, f64::min);
    let lower_margin = bounds.iter().map(|b| b.margin).fold(f64::INFINITY, f64::min);
    let chain = bounds
        .iter()
        .all(|b| b.tail_sum < b.stated_bound && b.stated_bound < b.lower_bound);
    let mut far_interior = 0;
    for p in &report.violations {
        if p.coords()[0].abs() <= 0.999 {
            far_interior += 1;
        }
    }
    verdict(
        report.violations.is_empty() && far_interior == 0 && chain && stated_margin >= 0.25,
        format!(
            "{} seeds, {} converged, {} interior, {} violations; tail margin {:.1}% vs stated bound, {:.1}% vs lower bound (need 25%)",
            report.seeds,
            report.converged,
            report.interior_converged,
            report.violations.len(),
            100.0 * stated_margin,
            100.0 * lower_margin
        ),
    )
}

/// Criterion 4: the structured sequence accumulates at (1, 0, ...).
fn accumulation() -> Verdict {
    let params = ModelParams::new(8).unwrap();
    let mut ok = true;
    let mut prev_value = f64::NEG_INFINITY;
    let mut prev_dist = f64::INFINITY;
    let mut last = (0.0, 0.0);
    for k in 1..=8 {
        let mut pattern = vec![Sign::Zero; 8];
        pattern[k - 1] = Sign::Plus;
        let s = structured_solve(params, &pattern).unwrap();
        let value = s.critical.value;
        let dist = ClarkModel::x_norm(s.critical.point.coords());
        let scale = 3f64.powi(-2 * k as i32);
        ok &= value < 0.0
            && value.abs() <= 13.5 * scale * scale + 1e-12
            && dist <= 9.0 * scale + 1e-12
            && (s.critical.point.coords()[0] - 1.0).abs() <= 1e-12
            && value > prev_value
            && dist < prev_dist;
        prev_value = value;
        prev_dist = dist;
        last = (value, dist);
    }
    verdict(
        ok,
        format!("k = 8: I = {:.3e}, dist to Z = {:.3e}; decay monotone", last.0, last.1),
    )
}

/// Criterion 5: the deformation contract on the two-cluster functional.
fn deformation_contract() -> Verdict {
    let started = Instant::now();
    let (setup, bounds) = two_cluster_setup(161, 0.5).unwrap();
    let samples = sample_sublevel(&setup, &[-1.6, -1.1], &[1.6, 1.1], 500, 0).unwrap();
    let report = check_contract(&setup, &samples, 4).unwrap();
    let secs = started.elapsed().as_secs_f64();
    verdict(
        report.holds() && report.max_rate_excess.is_none_or(|x| x <= 1e-8) && secs < 60.0,
        format!(
            "nu = {:.4}, rho = {}; {}/{} in [I <= -d] u N_3r, {} retried; speed {:.9}, energy rise {:.1e}, oddness {:.1e}; {secs:.1}s",
            bounds.nu,
            bounds.rho,
            report.passed,
            report.samples,
            report.retried,
            report.max_speed,
            report.max_energy_increase,
            report.max_oddness_error
        ),
    )
}

fn line_cloud(xs: impl IntoIterator<Item = f64>) -> Cloud {
    Cloud::new(xs.into_iter().map(|x| Point::l2(vec![x]).unwrap()).collect(), false)
}

/// Criterion 6: the three stabilization examples and nesting on random clouds.
fn lemma21_examples() -> Verdict {
    let coarse = [0.3, 0.2, 0.1, 0.05];
    let gap = line_cloud(std::iter::once(0.0).chain((0..=50).map(|i| 0.5 + 0.01 * i as f64)));
    let gap_ok = lemma21_check(&gap, &coarse).unwrap().stabilized == vec![0];
    let segment = line_cloud((-100..=100).map(|i| 0.01 * i as f64));
    let seg_ok = lemma21_check(&segment, &coarse).unwrap().stabilized == (0..segment.len()).collect::<Vec<_>>();
    let model = model_critical_cloud(ModelParams::new(2).unwrap(), 1e-4).unwrap();
    let z: Vec<usize> = (0..model.len())
        .filter(|&i| ClarkModel::x_norm(model.points[i].coords()) == 0.0)
        .collect();
    let model_ok = lemma21_check(&model, &[0.1, 0.01, 1e-3, 1e-4]).unwrap().stabilized == z;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut nested = 0;
    for _ in 0..100 {
        let size = rng.gen_range(5..60);
        let mut pts = vec![Point::zeros(Space::L2Truncation(2))];
        for _ in 0..size {
            pts.push(Point::l2(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap());
        }
        let mut schedule: Vec<f64> = (0..rng.gen_range(2..8)).map(|_| rng.gen_range(0.005..0.6)).collect();
        schedule.sort_by(|a, b| b.total_cmp(a));
        schedule.dedup();
        let rep = lemma21_check(&Cloud::new(pts, false), &schedule).unwrap();
        nested += usize::from(rep.nested && rep.matches_bfs);
    }
    verdict(
        gap_ok && seg_ok && model_ok && nested == 100,
        format!("gap {gap_ok}, segment {seg_ok}, model {model_ok}; {nested}/100 random clouds nested"),
    )
}

/// Criterion 7: sphere-family minimax bounds on the n = 8 model.
fn minimax_structure() -> Verdict {
    let model = ClarkModel::new(ModelParams::new(8).unwrap()).unwrap();
    let est = model_minimax(&model, 6, &default_rho_grid(), &Budget::default()).unwrap();
    let c: Vec<f64> = est.iter().map(|e| e.upper_bound).collect();
    let ok = c.iter().all(|v| *v < 0.0)
        && c.windows(2).all(|w| w[0] <= w[1])
        && c[5].abs() < c[0].abs() / 50.0
        && c[0] <= -8.0 / 243.0 + 1e-9
        && c[0] >= -1.0 / 6.0 - 1e-6;
    verdict(
        ok,
        format!(
            "c1..c6 upper bounds {:.4e} .. {:.4e}; c1 + 8/243 = {:.1e}",
            c[0],
            c[5],
            c[0] + 8.0 / 243.0
        ),
    )
}

fn ball_seeds(space: Space, radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = space.dim();
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
            let n = space.norm(&v);
            v.into_iter().map(|x| x * r / n).collect()
        })
        .collect()
}

/// Criterion 8: zero is isolated among critical points of the wrapper.
fn isolated_zero() -> Verdict {
    let space = Space::h01(11).unwrap();
    let w = wrapper_functional(space, 0.5).unwrap();
    let cfg = SolveConfig {
        residual_tol: 1e-6,
        ..SolveConfig::default()
    };
    // Inside ‖u‖² ≤ 1/4 the gradient norm is at least 16π‖u‖³, so a
    // residual r pins the point within (r / 16π)^{1/3} of the origin.
    let zero_radius = |r: f64| (r / (16.0 * std::f64::consts::PI)).cbrt() * (1.0 + 1e-9);
    let near = solve_from_seeds(&w, &ball_seeds(space, 0.3, 200, 8), &cfg).unwrap();
    let near_ok = near.non_converged == 0
        && near
            .converged
            .iter()
            .all(|cp| cp.point.norm() <= zero_radius(cp.residual));
    let wide = solve_from_seeds(&w, &ball_seeds(space, 1.5, 200, 9), &cfg).unwrap();
    let threshold = std::f64::consts::FRAC_1_SQRT_2 - 1e-6;
    let mut nonzero = 0;
    let mut smallest = f64::INFINITY;
    let mut wide_ok = true;
    for cp in &wide.converged {
        let n = cp.point.norm();
        if n > zero_radius(cp.residual) {
            nonzero += 1;
            smallest = smallest.min(n);
            wide_ok &= n >= threshold;
        }
    }
    verdict(
        near_ok && wide_ok,
        format!(
            "ball 0.3: {}/200 converged to 0; ball 1.5: {} converged, {} nonzero with smallest norm {:.6} (need >= {:.6})",
            near.converged.len(),
            wide.converged.len(),
            nonzero,
            smallest,
            threshold
        ),
    )
}

/// Criterion 9: the nodal family at p = 1/2 on a 2000-cell grid.
fn bvp_family() -> Verdict {
    let grid = Space::h01(2000).unwrap();
    let fam = nodal_family(0.5, 6, grid).unwrap();
    let ks: Vec<usize> = fam.iter().map(|s| s.k).collect();
    let norms: Vec<f64> = fam.iter().map(|s| s.energy_norm_sq).collect();
    let slope = log_log_slope(&ks, &norms).unwrap();
    let nehari = fam.iter().map(|s| s.nehari_residual).fold(0.0, f64::max);
    let j_err = fam
        .iter()
        .map(|s| ((s.j_value + s.energy_norm_sq / 6.0) / s.j_value).abs())
        .fold(0.0, f64::max);
    let re = reshoot_check(0.5, 2, grid).unwrap();
    verdict(
        nehari < 1e-6 && (slope + 6.0).abs() <= 0.01 && j_err <= 1e-6 && re.sup_diff < 1e-5,
        format!(
            "max Nehari residual {nehari:.1e}; slope {slope:.6}; J relative error {j_err:.1e}; re-shot sup diff {:.1e}",
            re.sup_diff
        ),
    )
}

/// Random point with no coordinate near a kink for step `h`.
fn kink_free(f: &dyn Functional, rng: &mut ChaCha8Rng, draw: impl Fn(&mut ChaCha8Rng) -> Vec<f64>, h: f64) -> Point {
    loop {
        let c = draw(rng);
        if f.kink_coordinates(&c, h).is_empty() {
            return Point::new(f.space(), c).unwrap();
        }
    }
}

/// Criterion 10: finite-difference gradient checks for all three functionals.
fn gradient_integrity() -> Verdict {
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = [0.0f64; 3];

    let model = ClarkModel::new(ModelParams::new(4).unwrap()).unwrap();
    let box_ = SeedBox::uniform(
        std::iter::once(-1.5)
            .chain((1..=4).map(|j| -2.0 * 9.0 * 3f64.powi(-2 * j)))
            .collect(),
        std::iter::once(1.5)
            .chain((1..=4).map(|j| 2.0 * 9.0 * 3f64.powi(-2 * j)))
            .collect(),
    );
    let grid = Space::h01(40).unwrap();
    let j = sublinear_energy(0.5, grid).unwrap();
    let wrap_space = Space::h01(11).unwrap();
    let wrap = wrapper_functional(wrap_space, 0.5).unwrap();
    let smooth_draw = |dim: usize, amp: f64| {
        move |r: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| amp * (r.gen::<f64>() - 0.5)).collect() }
    };

    for _ in 0..100 {
        let u = kink_free(&model, &mut rng, |r| box_.sample(r), h);
        worst[0] = worst[0].max(fd_gradient_check(&model, &u, h).unwrap().max_rel_error);
        let u = kink_free(&j, &mut rng, smooth_draw(grid.dim(), 2.0), h);
        worst[1] = worst[1].max(fd_gradient_check(&j, &u, h).unwrap().max_rel_error);
        // Radii spread over both branches of the wrapper.
        let u = kink_free(&wrap, &mut rng, smooth_draw(wrap_space.dim(), 0.3), h);
        worst[2] = worst[2].max(fd_gradient_check(&wrap, &u, h).unwrap().max_rel_error);
    }
    verdict(
        worst.iter().all(|w| *w < 1e-5),
        format!(
            "max relative error: model {:.1e}, J {:.1e}, wrapper {:.1e} (tol 1e-5)",
            worst[0], worst[1], worst[2]
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("critical-set oracle equivalence", critical_set_oracle),
        ("exact values", exact_values),
        ("interior exclusion", interior_exclusion),
        ("accumulation at (1, 0, ...)", accumulation),
        ("deformation contract", deformation_contract),
        ("origin-component stabilization", lemma21_examples),
        ("minimax structure", minimax_structure),
        ("isolated zero of the wrapper", isolated_zero),
        ("nodal BVP family", bvp_family),
        ("gradient integrity", gradient_integrity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        println!(
            "criterion {:>2} {}: {name}: {}",
            i + 1,
            if v.ok { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.ok);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
