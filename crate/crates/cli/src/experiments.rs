//! One function per subcommand. Each resolves its parameters, rejects
//! unknown config keys, runs, and returns results, named checks and CSVs.

use std::collections::BTreeMap;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use clark_core::bvp::{log_log_slope, nodal_family, reshoot_check, write_family_csv};
use clark_core::deformation::{check_contract, eta_epsilon_with_retry, sample_sublevel, two_cluster_setup};
use clark_core::minimax::{log_grid, model_minimax, write_estimates_csv};
use clark_core::model::{enumerate_critical_set, ClarkModel, ModelParams};
use clark_core::solvers::{accumulation_scan, global_minimum_estimate, SeedBox, SolveConfig};
use clark_core::topology::{lemma21_check, model_critical_cloud, Cloud};
use clark_core::{ps_diagnostic, Functional, Label, Point, Sign, Space};

use crate::config::Params;
use crate::Failure;

/// What an experiment hands back to the runner.
#[derive(Debug, Default)]
pub struct Outcome {
    pub results: BTreeMap<String, Value>,
    pub checks: BTreeMap<String, bool>,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn set(&mut self, key: &str, value: impl serde::Serialize) -> Result<(), Failure> {
        let v = serde_json::to_value(value).map_err(|e| Failure::Runtime(e.to_string()))?;
        self.results.insert(key.to_string(), v);
        Ok(())
    }

    fn check(&mut self, name: &str, ok: bool) {
        self.checks.insert(name.to_string(), ok);
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> clark_core::Result<()>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.checks.values().all(|ok| *ok)
    }
}

fn write_rows(buf: &mut Vec<u8>, header: &[String], rows: &[Vec<String>]) -> clark_core::Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EnumerateArgs {
    /// Truncation dimension of the model.
    #[arg(long)]
    pub n: Option<usize>,
    /// Evenly spaced samples of the segment Z.
    #[arg(long)]
    pub z_samples: Option<usize>,
}

pub fn enumerate(a: &EnumerateArgs, p: &mut Params) -> Result<Outcome, Failure> {
    let n = p.get("n", a.n, 4usize)?;
    let z_samples = p.get("z-samples", a.z_samples, 21usize)?;
    p.finish()?;
    if n > 12 {
        return Err(Failure::Usage(format!(
            "n = {n} would enumerate 3^n points per side; use n <= 12"
        )));
    }
    let params = ModelParams::new(n)?;
    let set = enumerate_critical_set(params, z_samples)?;
    let count = |l: Label| set.iter().filter(|c| c.label == l).count();
    let expected = 3usize.pow(n as u32);
    let max_residual = set.iter().map(|c| c.residual).fold(0.0, f64::max);

    let mut out = Outcome::default();
    out.set(
        "counts",
        json!({"N": count(Label::N), "NegN": count(Label::NegN), "Z": count(Label::Z)}),
    )?;
    out.set("max_residual", max_residual)?;
    out.set("critical_set", clark_core::model::CriticalSetJson::from_points(n, &set))?;
    out.check("n_count", count(Label::N) == expected);
    out.check("neg_n_count", count(Label::NegN) == expected);
    out.check("z_count", count(Label::Z) == z_samples);
    out.check("residuals_below_1e-12", max_residual < 1e-12);

    let mut header: Vec<String> = ["label", "pattern", "t", "value", "residual"]
        .map(String::from)
        .to_vec();
    header.extend((1..=n).map(|j| format!("x{j}")));
    let rows: Vec<Vec<String>> = set
        .iter()
        .map(|cp| {
            let c = cp.point.coords();
            let mut row = vec![
                cp.label.as_str().to_string(),
                cp.pattern(),
                c[0].to_string(),
                cp.value.to_string(),
                cp.residual.to_string(),
            ];
            row.extend(c[1..].iter().map(f64::to_string));
            row
        })
        .collect();
    out.csv("critical_set.csv", |b| write_rows(b, &header, &rows))?;
    Ok(out)
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct ScanArgs {
    /// Truncation dimension of the model.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of random descent seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Lower end of the open value window.
    #[arg(long)]
    pub window_lo: Option<f64>,
    /// Upper end of the open value window (at most 0).
    #[arg(long)]
    pub window_hi: Option<f64>,
    /// Gradient-norm tolerance for convergence.
    #[arg(long)]
    pub residual_tol: Option<f64>,
    /// Spacing of the Z samples that stand in for the origin's component.
    #[arg(long)]
    pub z_spacing: Option<f64>,
}

pub fn scan(a: &ScanArgs, p: &mut Params, seed: u64) -> Result<Outcome, Failure> {
    let n = p.get("n", a.n, 4usize)?;
    let seeds = p.get("seeds", a.seeds, 2000usize)?;
    let lo = p.get("window-lo", a.window_lo, -1e-3)?;
    let hi = p.get("window-hi", a.window_hi, 0.0)?;
    let residual_tol = p.get("residual-tol", a.residual_tol, 1e-12)?;
    let z_spacing = p.get("z-spacing", a.z_spacing, 0.01)?;
    p.finish()?;
    if !(z_spacing > 0.0 && z_spacing <= 1.0) {
        return Err(Failure::Usage(format!("z-spacing must lie in (0, 1], got {z_spacing}")));
    }
    let params = ModelParams::new(n)?;
    let model = ClarkModel::new(params)?;
    let z_count = 2 * (1.0 / z_spacing).ceil() as usize + 1;
    let k0hat: Vec<Point> = enumerate_critical_set(params, z_count)?
        .into_iter()
        .filter(|c| c.label == Label::Z)
        .map(|c| c.point)
        .collect();
    let cfg = SolveConfig {
        residual_tol,
        seed_rng: seed,
        ..SolveConfig::default()
    };
    let report = accumulation_scan(&model, &k0hat, (lo, hi), seeds, &SeedBox::clark(n), &cfg)?;

    let on_set = report
        .found
        .iter()
        .all(|cp| model.dist_to_critical_set(cp.point.coords()) <= 1e-6);
    let at_ends = report
        .found
        .iter()
        .all(|cp| (cp.point.coords()[0].abs() - 1.0).abs() <= 1e-6);
    let distinct: Vec<Value> = report
        .distinct(1e-6)
        .into_iter()
        .map(|(cp, d)| {
            json!({
                "value": cp.value,
                "t": cp.point.coords()[0],
                "label": cp.label.as_str(),
                "pattern": cp.pattern(),
                "dist_to_k0hat": d,
            })
        })
        .collect();

    let mut out = Outcome::default();
    out.set("window", [lo, hi])?;
    out.set("seeds", seeds)?;
    out.set("converged", report.converged)?;
    out.set("non_converged", report.non_converged)?;
    out.set("found", report.found.len())?;
    out.set("distinct", distinct)?;
    out.check("found_points_on_critical_set", on_set);
    out.check("found_points_at_t_pm1", at_ends);
    out.csv("accumulation.csv", |b| report.write_csv(b))?;
    Ok(out)
}

#[derive(Args, Debug)]
pub struct DeformArgs {
    /// Grid samples per axis for the gradient bounds.
    #[arg(long)]
    pub per_axis: Option<usize>,
    /// ε as a fraction of d/2.
    #[arg(long)]
    pub eps_fraction: Option<f64>,
    /// Starting points drawn from [I <= -ε].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Halvings of ν_ε allowed per point after a contract failure.
    #[arg(long)]
    pub max_halvings: Option<usize>,
}

const DEFORM_BOX: ([f64; 2], [f64; 2]) = ([-1.6, -1.1], [1.6, 1.1]);

pub fn deform(a: &DeformArgs, p: &mut Params, seed: u64) -> Result<Outcome, Failure> {
    let per_axis = p.get("per-axis", a.per_axis, 161usize)?;
    let eps_fraction = p.get("eps-fraction", a.eps_fraction, 0.5)?;
    let samples = p.get("samples", a.samples, 500usize)?;
    let max_halvings = p.get("max-halvings", a.max_halvings, 4usize)?;
    p.finish()?;
    if samples == 0 {
        return Err(Failure::Usage("samples must be positive".into()));
    }
    let (setup, bounds) = two_cluster_setup(per_axis, eps_fraction)?;
    let starts = sample_sublevel(&setup, &DEFORM_BOX.0, &DEFORM_BOX.1, samples, seed)?;
    let report = check_contract(&setup, &starts, max_halvings)?;
    let failures: Vec<&[f64]> = report.failures.iter().map(Point::coords).collect();

    let mut out = Outcome::default();
    out.set("setup", setup.summary())?;
    out.set("bounds", &bounds)?;
    out.set(
        "contract",
        json!({
            "samples": report.samples,
            "passed": report.passed,
            "retried": report.retried,
            "smallest_nu_eps": report.smallest_nu_eps,
            "max_speed": report.max_speed,
            "max_energy_increase": report.max_energy_increase,
            "max_oddness_error": report.max_oddness_error,
            "max_rate_excess": report.max_rate_excess,
            "failures": failures,
        }),
    )?;
    out.check("inclusion", report.passed == report.samples);
    out.check("speed_bound", report.max_speed <= 1.0 + 1e-8);
    out.check("energy_monotone", report.max_energy_increase <= 1e-10);
    out.check("oddness", report.max_oddness_error <= 1e-8);
    out.check("descent_rate", report.max_rate_excess.is_none_or(|x| x <= 1e-8));

    if let Ok((first, _)) = eta_epsilon_with_retry(&setup, &starts[0], max_halvings) {
        out.csv("trace.csv", |b| first.trace.write_csv(b))?;
    }
    Ok(out)
}

#[derive(Args, Debug)]
pub struct Lemma21Args {
    /// Random clouds for the nesting check.
    #[arg(long)]
    pub random_clouds: Option<usize>,
    /// Points per random cloud, origin excluded.
    #[arg(long)]
    pub cloud_size: Option<usize>,
}

fn line_cloud(xs: impl IntoIterator<Item = f64>) -> Cloud {
    let points = xs.into_iter().map(|x| Point::l2(vec![x]).expect("finite")).collect();
    Cloud::new(points, false)
}

pub fn lemma21(a: &Lemma21Args, p: &mut Params, seed: u64) -> Result<Outcome, Failure> {
    let random_clouds = p.get("random-clouds", a.random_clouds, 100usize)?;
    let cloud_size = p.get("cloud-size", a.cloud_size, 40usize)?;
    p.finish()?;

    let coarse = [0.3, 0.2, 0.1, 0.05];
    let gap = line_cloud(std::iter::once(0.0).chain((0..=50).map(|i| 0.5 + 0.01 * i as f64)));
    let segment = line_cloud((-100..=100).map(|i| 0.01 * i as f64));
    let model = model_critical_cloud(ModelParams::new(2)?, 1e-4)?;
    let z_members: Vec<usize> = (0..model.len())
        .filter(|&i| ClarkModel::x_norm(model.points[i].coords()) == 0.0)
        .collect();
    let examples: [(&str, &Cloud, Vec<f64>, Vec<usize>); 3] = [
        ("gap", &gap, coarse.to_vec(), vec![0]),
        ("segment", &segment, coarse.to_vec(), (0..segment.len()).collect()),
        ("model", &model, vec![0.1, 0.01, 1e-3, 1e-4], z_members),
    ];

    let mut out = Outcome::default();
    let mut summaries = BTreeMap::new();
    for (name, cloud, schedule, expected) in examples {
        let rep = lemma21_check(cloud, &schedule)?;
        let sizes: Vec<usize> = rep.origin_components.iter().map(Vec::len).collect();
        let matches = rep.stabilized == expected;
        summaries.insert(
            name,
            json!({
                "cloud_size": cloud.len(),
                "schedule": rep.schedule,
                "origin_component_sizes": sizes,
                "stabilized_size": rep.stabilized.len(),
                "stabilized_from": rep.stabilized_from,
                "nested": rep.nested,
                "matches_bfs": rep.matches_bfs,
                "matches_expected": matches,
            }),
        );
        out.check(
            &format!("{name}_stabilizes_as_expected"),
            matches && rep.nested && rep.matches_bfs,
        );
    }
    out.set("examples", summaries)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nested = 0;
    let mut bfs = 0;
    for _ in 0..random_clouds {
        let mut points = vec![Point::zeros(Space::L2Truncation(2))];
        for _ in 0..cloud_size {
            points.push(Point::l2(vec![rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)])?);
        }
        let mut schedule: Vec<f64> = (0..5).map(|_| rng.gen_range(0.01..0.5)).collect();
        schedule.sort_by(|x, y| y.total_cmp(x));
        schedule.dedup();
        let rep = lemma21_check(&Cloud::new(points, false), &schedule)?;
        nested += usize::from(rep.nested);
        bfs += usize::from(rep.matches_bfs);
    }
    out.set(
        "random",
        json!({"clouds": random_clouds, "cloud_size": cloud_size, "nested": nested, "matches_bfs": bfs}),
    )?;
    out.check("random_nesting", nested == random_clouds);
    out.check("random_matches_bfs", bfs == random_clouds);
    Ok(out)
}

#[derive(Args, Debug)]
pub struct MinimaxArgs {
    /// Truncation dimension of the model.
    #[arg(long)]
    pub n: Option<usize>,
    /// Largest sphere dimension j.
    #[arg(long)]
    pub jmax: Option<usize>,
    /// Smallest radius of the log grid.
    #[arg(long)]
    pub grid_lo: Option<f64>,
    /// Largest radius of the log grid.
    #[arg(long)]
    pub grid_hi: Option<f64>,
    /// Radii in the log grid.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Random sphere samples per radius.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Ascent starts per radius.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Projected ascent iterations per start.
    #[arg(long)]
    pub ascent_iters: Option<usize>,
    /// Descent seeds for the global-minimum floor.
    #[arg(long)]
    pub floor_seeds: Option<usize>,
}

pub fn minimax(a: &MinimaxArgs, p: &mut Params, seed: u64) -> Result<Outcome, Failure> {
    let n = p.get("n", a.n, 8usize)?;
    let jmax = p.get("jmax", a.jmax, 6usize)?;
    let grid_lo = p.get("grid-lo", a.grid_lo, 1e-7)?;
    let grid_hi = p.get("grid-hi", a.grid_hi, 1.0)?;
    let grid_points = p.get("grid-points", a.grid_points, 24usize)?;
    let samples = p.get("samples", a.samples, 64usize)?;
    let starts = p.get("starts", a.starts, 4usize)?;
    let ascent_iters = p.get("ascent-iters", a.ascent_iters, 200usize)?;
    let floor_seeds = p.get("floor-seeds", a.floor_seeds, 200usize)?;
    p.finish()?;
    if jmax < 1 || jmax > n {
        return Err(Failure::Usage(format!("jmax must lie in 1..={n}, got {jmax}")));
    }
    let model = ClarkModel::new(ModelParams::new(n)?)?;
    let grid = log_grid(grid_lo, grid_hi, grid_points)?;
    let budget = clark_core::minimax::Budget {
        samples,
        starts,
        ascent_iters,
        seed,
    };
    let estimates = model_minimax(&model, jmax, &grid, &budget)?;
    let cfg = SolveConfig {
        seed_rng: seed,
        ..SolveConfig::default()
    };
    let floor = global_minimum_estimate(&model, &SeedBox::clark(n), floor_seeds, &cfg)?;

    let bounds: Vec<f64> = estimates.iter().map(|e| e.upper_bound).collect();
    let c1 = bounds[0];
    let mut out = Outcome::default();
    out.set(
        "estimates",
        estimates
            .iter()
            .map(|e| {
                json!({
                    "j": e.j,
                    "rho_star": e.rho_star,
                    "upper_bound": e.upper_bound,
                    "witness": e.witness.coords(),
                    "genus": e.genus,
                })
            })
            .collect::<Vec<_>>(),
    )?;
    out.set("budget", budget)?;
    out.set(
        "global_minimum",
        json!({"value": floor.value, "point": floor.point.coords()}),
    )?;
    out.check("bounds_negative", bounds.iter().all(|b| *b < 0.0));
    out.check("bounds_non_decreasing", bounds.windows(2).all(|w| w[0] <= w[1]));
    out.check("c1_at_most_model_sphere_value", c1 <= -8.0 / 243.0 + 1e-9);
    out.check("c1_above_global_minimum", c1 >= floor.value - 1e-6);
    if jmax >= 6 {
        out.check("c6_below_c1_over_50", bounds[5].abs() < c1.abs() / 50.0);
    }
    out.csv("minimax.csv", |b| write_estimates_csv(&estimates, b))?;
    Ok(out)
}

#[derive(Args, Debug)]
pub struct BvpArgs {
    /// Exponent p in (0, 1).
    #[arg(long)]
    pub p: Option<f64>,
    /// Largest nodal-domain count.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Grid cells on [0, 1].
    #[arg(long)]
    pub cells: Option<usize>,
    /// Nodal count re-shot directly as a cross-check.
    #[arg(long)]
    pub reshoot_k: Option<usize>,
}

pub fn bvp(a: &BvpArgs, p: &mut Params) -> Result<Outcome, Failure> {
    let exponent = p.get("p", a.p, 0.5)?;
    let kmax = p.get("kmax", a.kmax, 6usize)?;
    let cells = p.get("cells", a.cells, 2000usize)?;
    let reshoot_k = p.get("reshoot-k", a.reshoot_k, 2usize)?;
    p.finish()?;
    if kmax < 2 {
        return Err(Failure::Usage("kmax must be at least 2 for the slope fit".into()));
    }
    let grid = Space::h01(cells)?;
    let family = nodal_family(exponent, kmax, grid)?;
    let ks: Vec<usize> = family.iter().map(|s| s.k).collect();
    let norms: Vec<f64> = family.iter().map(|s| s.energy_norm_sq).collect();
    let slope = log_log_slope(&ks, &norms)?;
    let expected = (2.0 * exponent + 2.0) / (exponent - 1.0);
    let nehari_factor = (1.0 - exponent) / (2.0 * (exponent + 1.0));
    let reshoot = reshoot_check(exponent, reshoot_k, grid)?;

    let mut out = Outcome::default();
    out.set("solutions", family.iter().map(|s| s.summary()).collect::<Vec<_>>())?;
    out.set("slope", json!({"fitted": slope, "expected": expected}))?;
    out.set("reshoot", &reshoot)?;
    out.check(
        "nehari_residual_below_1e-6",
        family.iter().all(|s| s.nehari_residual < 1e-6),
    );
    out.check("slope_within_0.01", (slope - expected).abs() <= 0.01);
    out.check(
        "j_matches_nehari_identity",
        family
            .iter()
            .all(|s| (s.j_value + nehari_factor * s.energy_norm_sq).abs() <= 1e-6 * s.j_value.abs()),
    );
    out.check(
        "j_negative_and_increasing",
        family.iter().all(|s| s.j_value < 0.0) && family.windows(2).all(|w| w[0].j_value < w[1].j_value),
    );
    out.check("nodal_domains", family.iter().all(|s| s.interior_zeros + 1 == s.k));
    out.check("reshoot_sup_diff_below_1e-5", reshoot.sup_diff < 1e-5);
    out.csv("family.csv", |b| write_family_csv(&family, b))?;
    out.csv("base_solution.csv", |b| family[0].write_csv(b))?;
    Ok(out)
}

#[derive(Args, Debug)]
pub struct PsdiagArgs {
    /// Truncation dimension; the sequence has one term per coordinate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Tolerance for values, residuals and clustering.
    #[arg(long)]
    pub tol: Option<f64>,
}

pub fn psdiag(a: &PsdiagArgs, p: &mut Params) -> Result<Outcome, Failure> {
    let n = p.get("n", a.n, 8usize)?;
    let tol = p.get("tol", a.tol, 1e-4)?;
    p.finish()?;
    let model = ClarkModel::new(ModelParams::new(n)?)?;
    let seq: Vec<Point> = (0..n)
        .map(|k| {
            let mut pattern = vec![Sign::Zero; n];
            pattern[k] = Sign::Plus;
            Point::new(model.space(), model.branch_point(1.0, &pattern))
        })
        .collect::<clark_core::Result<_>>()?;
    let report = ps_diagnostic(&model, &seq, 0.0, tol)?;
    let limit = model.point(1.0, &vec![0.0; n])?;
    let dists: Vec<f64> = seq.iter().map(|u| u.dist(&limit)).collect();
    let clusters_at_limit = report.cluster_points.iter().any(|c| c.dist(&limit) <= tol);

    let mut out = Outcome::default();
    out.set("level", 0.0)?;
    out.set("value_trace", &report.value_trace)?;
    out.set("residual_trace", &report.residual_trace)?;
    out.set("dist_to_limit", &dists)?;
    out.set("has_convergent_subsequence", report.has_convergent_subsequence)?;
    out.set("is_ps_sequence", report.is_ps_sequence)?;
    out.set("note", &report.note)?;
    out.check("values_negative", report.value_trace.iter().all(|v| *v < 0.0));
    out.check(
        "values_increase_to_level",
        report.value_trace.windows(2).all(|w| w[0] < w[1]),
    );
    out.check("residuals_vanish", report.residual_trace.iter().all(|r| *r <= 1e-12));
    out.check("ps_sequence", report.is_ps_sequence);
    out.check(
        "clusters_at_limit",
        report.has_convergent_subsequence && clusters_at_limit,
    );

    let header = ["k", "value", "residual", "dist_to_limit"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            vec![
                (i + 1).to_string(),
                report.value_trace[i].to_string(),
                report.residual_trace[i].to_string(),
                dists[i].to_string(),
            ]
        })
        .collect();
    out.csv("sequence.csv", |b| write_rows(b, &header, &rows))?;
    Ok(out)
}
