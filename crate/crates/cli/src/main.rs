//! `clark-lab`: runs one verification experiment and writes `results.json`,
//! CSV tables and `manifest.json` into the output directory.
//!
//! Exit status is 0 when every check passes, 2 when a check or a numerical
//! contract fails, and 1 on usage errors.

mod config;
mod experiments;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use config::Params;
use experiments::Outcome;

#[derive(Parser, Debug)]
#[command(
    name = "clark-lab",
    version,
    about = "Batch runner for the clark-core verification experiments"
)]
struct Cli {
    /// Flat `key = value` file; command-line flags win over its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form critical set Z ∪ N ∪ (−N) of the ℓ² model.
    Enumerate(experiments::EnumerateArgs),
    /// Descent scan for negative critical values near zero.
    Scan(experiments::ScanArgs),
    /// Deformation contract on the two-cluster test functional.
    Deform(experiments::DeformArgs),
    /// Origin-component stabilization along δ schedules.
    Lemma21(experiments::Lemma21Args),
    /// Sphere-family upper bounds for the minimax values.
    Minimax(experiments::MinimaxArgs),
    /// Nodal solutions of the sublinear boundary value problem.
    Bvp(experiments::BvpArgs),
    /// Palais–Smale diagnostic along the model's critical sequence.
    Psdiag(experiments::PsdiagArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Enumerate(_) => "enumerate",
            Command::Scan(_) => "scan",
            Command::Deform(_) => "deform",
            Command::Lemma21(_) => "lemma21",
            Command::Minimax(_) => "minimax",
            Command::Bvp(_) => "bvp",
            Command::Psdiag(_) => "psdiag",
        }
    }

    fn run(&self, params: &mut Params, seed: u64) -> Result<Outcome, Failure> {
        match self {
            Command::Enumerate(a) => experiments::enumerate(a, params),
            Command::Scan(a) => experiments::scan(a, params, seed),
            Command::Deform(a) => experiments::deform(a, params, seed),
            Command::Lemma21(a) => experiments::lemma21(a, params, seed),
            Command::Minimax(a) => experiments::minimax(a, params, seed),
            Command::Bvp(a) => experiments::bvp(a, params),
            Command::Psdiag(a) => experiments::psdiag(a, params),
        }
    }
}

/// Why a run did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    /// A numerical contract or verification failed.
    Contract(String),
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Contract(_) => 2,
            Failure::Usage(_) | Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Contract(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<clark_core::Error> for Failure {
    fn from(e: clark_core::Error) -> Self {
        use clark_core::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidParams(_)
            | E::Precondition(_)
            | E::DimensionError { .. }
            | E::InvalidPoint { .. }
            | E::EmptyInput(_) => Failure::Usage(msg),
            E::Io(_) | E::Csv(_) | E::Json(_) => Failure::Runtime(msg),
            _ => Failure::Contract(msg),
        }
    }
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

struct Run<'a> {
    command: &'a Command,
    config_file: Option<&'a Path>,
    params: Params,
    seed: u64,
    threads: usize,
    out: PathBuf,
}

impl Run<'_> {
    /// Runs the experiment and writes its artifacts. Returns the list of
    /// written files.
    fn execute(&mut self) -> Result<(Vec<String>, Outcome), Failure> {
        if self.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build_global()
                .map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        let outcome = self.command.run(&mut self.params, self.seed)?;
        fs::create_dir_all(&self.out).map_err(|e| Failure::Runtime(format!("{}: {e}", self.out.display())))?;
        let mut written = Vec::new();
        for (name, bytes) in &outcome.files {
            let path = self.out.join(name);
            fs::write(&path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            written.push(name.clone());
        }
        let results = json!({
            "experiment": self.command.name(),
            "params": self.params.experiment(),
            "rng_seed": self.seed,
            "results": outcome.results,
            "checks": outcome.checks,
            "passed": outcome.passed(),
        });
        write_json(&self.out.join("results.json"), &results)?;
        written.push("results.json".into());
        Ok((written, outcome))
    }

    fn manifest(&self, status: &str, code: u8, message: Option<&str>, outputs: &[String], secs: f64) -> Value {
        json!({
            "experiment": self.command.name(),
            "status": status,
            "exit_code": code,
            "message": message,
            "config_file": self.config_file.map(|p| p.display().to_string()),
            "params": self.params.all(),
            "rng_seed": self.seed,
            "threads": self.threads,
            "versions": {
                "clark-lab": env!("CARGO_PKG_VERSION"),
                "clark-core": clark_core::VERSION,
            },
            "wall_time_seconds": secs,
            "outputs": outputs,
        })
    }
}

fn resolve_common(cli: &Cli) -> Result<(Params, u64, usize, PathBuf), Failure> {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            config::parse(&text)?
        }
        None => BTreeMap::new(),
    };
    let mut params = Params::new(file);
    let out = params.get("out", cli.out.clone(), "out".to_string())?;
    let seed = params.get("seed", cli.seed, 0u64)?;
    let threads = params.get("threads", cli.threads, 0usize)?;
    Ok((params, seed, threads, PathBuf::from(out)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (params, seed, threads, out) = match resolve_common(&cli) {
        Ok(v) => v,
        Err(f) => {
            eprintln!("error: {}", f.message());
            return ExitCode::from(f.exit_code());
        }
    };
    let mut run = Run {
        command: &cli.command,
        config_file: cli.config.as_deref(),
        params,
        seed,
        threads,
        out,
    };
    let started = Instant::now();
    let result = run.execute();
    let secs = started.elapsed().as_secs_f64();

    let (status, code, message, outputs) = match &result {
        Ok((files, outcome)) if outcome.passed() => ("ok", 0, None, files.clone()),
        Ok((files, outcome)) => {
            let failed: Vec<&str> = outcome
                .checks
                .iter()
                .filter(|(_, ok)| !**ok)
                .map(|(k, _)| k.as_str())
                .collect();
            let msg = format!("failed checks: {}", failed.join(", "));
            ("verification-failed", 2, Some(msg), files.clone())
        }
        Err(f) => {
            let status = if f.exit_code() == 2 { "contract-failed" } else { "error" };
            (status, f.exit_code(), Some(f.message().to_string()), Vec::new())
        }
    };
    if let Some(m) = &message {
        eprintln!("{}: {m}", cli.command.name());
    }
    let mut outputs = outputs;
    outputs.push("manifest.json".into());
    let manifest = run.manifest(status, code, message.as_deref(), &outputs, secs);
    let written = fs::create_dir_all(&run.out)
        .map_err(|e| Failure::Runtime(e.to_string()))
        .and_then(|_| write_json(&run.out.join("manifest.json"), &manifest));
    if let Err(f) = written {
        eprintln!("error: cannot write manifest: {}", f.message());
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
