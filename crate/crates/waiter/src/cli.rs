//! Subcommand implementations shared by the `waiter` binary and the tests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use waiter_core::balance::Body;
use waiter_core::minmu::{solve_min_mu, witness_residual, MinMuProblem};
use waiter_core::ocp::ConstraintMode;

use crate::scenario::Scenario;
use crate::simworld::{compare_modes, object_tilts, run_scenario, ModeRun, ObjectTilt, RunLog, RunSummary};

pub const EXIT_DROP: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

/// Environment variable holding the log filter (`error`, `warn`, `info`,
/// `debug`, `trace`).
pub const LOG_ENV: &str = "WAITER_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "waiter",
    version,
    about = "Balance objects on a tray while moving a mobile manipulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimum friction coefficients that balance the arrangement statically.
    MinMu { scenario: PathBuf },
    /// Run one closed-loop simulation and write `<name>.csv` and
    /// `<name>.summary.json`.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Store the wall-clock update times in the CSV.
        #[arg(long)]
        log_timing: bool,
    },
    /// Run the scenario under all four constraint modes.
    CompareModes {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Run the modes one after another (keeps timings comparable).
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ConstraintMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub duration: Option<f64>,
}

fn parse_mode(s: &str) -> std::result::Result<ConstraintMode, String> {
    s.parse()
        .map_err(|_| format!("unknown mode `{s}` (none, upward, full, robust)"))
}

impl RunArgs {
    pub fn apply(&self, s: &mut Scenario) -> Result<()> {
        if let Some(m) = self.mode {
            s.mode = m;
        }
        if let Some(seed) = self.seed {
            s.sim.seed = seed;
        }
        if let Some(d) = self.duration {
            s.sim.duration = d;
        }
        s.sim.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub supporting: String,
    pub supported: String,
    pub contacts: Vec<usize>,
    pub mu: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MinMuReport {
    pub name: String,
    pub converged: bool,
    pub groups: Vec<GroupReport>,
    /// Roll, pitch and yaw of the tray.
    pub theta: [f64; 3],
    pub tilt_deg: f64,
    pub object_tilts: Vec<ObjectTilt>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub witness_residual: f64,
    /// Witness contact forces, end-effector frame.
    pub forces: Vec<[f64; 3]>,
}

pub fn min_mu_report(s: &Scenario) -> Result<MinMuReport> {
    let arr = &s.arrangement;
    let problem = MinMuProblem::new(arr.clone())?;
    let sol = solve_min_mu(&problem).context("minimum-friction problem failed")?;
    let body = |b: Body| match b {
        Body::Tray => "tray".to_string(),
        Body::Object(j) => arr.objects[j].name.clone(),
    };
    let groups = problem
        .groups
        .iter()
        .zip(&sol.mu)
        .map(|(g, &mu)| {
            let c = &arr.contacts[g[0]];
            GroupReport {
                supporting: body(c.supporting),
                supported: arr.objects[c.supported].name.clone(),
                contacts: g.clone(),
                mu,
            }
        })
        .collect();
    let forces = (0..arr.num_contacts())
        .map(|i| {
            let f = sol.forces.force(i, arr);
            [f.x, f.y, f.z]
        })
        .collect();
    Ok(MinMuReport {
        name: s.name.clone(),
        converged: sol.converged,
        groups,
        theta: sol.theta,
        tilt_deg: sol.tilt().to_degrees(),
        object_tilts: object_tilts(arr, &sol.rotation),
        objective: sol.objective,
        kkt_residual: sol.kkt_residual,
        witness_residual: witness_residual(&problem, &sol)?,
        forces,
    })
}

/// Exit code of a finished run: abort wins over drop.
pub fn exit_code(log: &RunLog) -> i32 {
    if log.aborted() {
        EXIT_ABORT
    } else if log.dropped() {
        EXIT_DROP
    } else {
        0
    }
}

/// Writes `<out>/<name>.csv` and `<out>/<name>.summary.json`.
pub fn write_run(log: &RunLog, out: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let csv_path = out.join(format!("{}.csv", log.name));
    let json_path = out.join(format!("{}.summary.json", log.name));
    let file = fs::File::create(&csv_path).with_context(|| format!("cannot create {}", csv_path.display()))?;
    log.write_csv(std::io::BufWriter::new(file))?;
    let summary = serde_json::to_string_pretty(&log.summary())?;
    fs::write(&json_path, summary + "\n").with_context(|| format!("cannot write {}", json_path.display()))?;
    Ok((csv_path, json_path))
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub mode: String,
    pub error: Option<String>,
    pub dropped: Option<bool>,
    pub aborted: Option<bool>,
    pub converged: Option<bool>,
    pub convergence_time: Option<f64>,
    pub mean_compute_ms: Option<f64>,
    pub max_compute_ms: Option<f64>,
    pub max_fric_util: Option<f64>,
    pub mean_fric_util: Option<f64>,
}

impl ComparisonRow {
    pub fn new(run: &ModeRun) -> Self {
        let empty = |error| Self {
            mode: run.mode.to_string(),
            error,
            dropped: None,
            aborted: None,
            converged: None,
            convergence_time: None,
            mean_compute_ms: None,
            max_compute_ms: None,
            max_fric_util: None,
            mean_fric_util: None,
        };
        match &run.result {
            Err(e) => empty(Some(e.clone())),
            Ok(log) => {
                let s: RunSummary = log.summary();
                Self {
                    dropped: Some(s.dropped),
                    aborted: Some(log.aborted()),
                    converged: Some(s.converged),
                    convergence_time: s.convergence_time,
                    mean_compute_ms: s.mean_compute_ms,
                    max_compute_ms: s.max_compute_ms,
                    max_fric_util: s.max_fric_util,
                    mean_fric_util: s.mean_fric_util,
                    ..empty(None)
                }
            }
        }
    }
}

/// Aligned text table of a mode comparison.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let opt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |x| format!("{x:.digits$}"));
    let flag = |v: Option<bool>| v.map_or("-".to_string(), |b| if b { "yes" } else { "no" }.to_string());
    let header = [
        "mode",
        "dropped",
        "converged",
        "t_conv [s]",
        "mean [ms]",
        "max [ms]",
        "max util",
        "mean util",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        if let Some(e) = &r.error {
            cells.push(vec![r.mode.clone(), format!("error: {e}")]);
            continue;
        }
        cells.push(vec![
            r.mode.clone(),
            flag(r.dropped),
            flag(r.converged),
            opt(r.convergence_time, 3),
            opt(r.mean_compute_ms, 1),
            opt(r.max_compute_ms, 1),
            opt(r.max_fric_util, 3),
            opt(r.mean_fric_util, 3),
        ]);
    }
    let mut widths = vec![0; header.len()];
    for row in cells.iter().filter(|r| r.len() == header.len()) {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| match (row.len() == header.len(), i) {
                (true, 0) => format!("{c:<w$}", w = widths[0]),
                (true, _) => format!("{c:>w$}", w = widths[i]),
                _ => c.clone(),
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Runs a subcommand and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::MinMu { scenario } => {
            let s = Scenario::load(&scenario)?;
            let report = min_mu_report(&s)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.converged {
                eprintln!("minimum-friction solver did not converge");
                return Ok(1);
            }
            Ok(0)
        }
        Command::Simulate {
            scenario,
            run,
            log_timing,
        } => {
            let mut s = Scenario::load(&scenario)?;
            run.apply(&mut s)?;
            s.sim.log_compute_time |= log_timing;
            let log = run_scenario(&s)?;
            let (csv, json) = write_run(&log, &run.out)?;
            let summary = log.summary();
            eprintln!(
                "{} [{}]: {}, wrote {} and {}",
                s.name,
                s.mode,
                describe(&summary),
                csv.display(),
                json.display()
            );
            Ok(exit_code(&log))
        }
        Command::CompareModes {
            scenario,
            run,
            sequential,
        } => {
            let mut s = Scenario::load(&scenario)?;
            run.apply(&mut s)?;
            let modes = match run.mode {
                Some(m) => vec![m],
                None => ConstraintMode::ALL.to_vec(),
            };
            let runs = compare_modes(&s, &modes, !sequential);
            let rows: Vec<ComparisonRow> = runs.iter().map(ComparisonRow::new).collect();
            fs::create_dir_all(&run.out)?;
            let path = run.out.join(format!("{}.compare.json", s.name));
            fs::write(&path, serde_json::to_string_pretty(&rows)? + "\n")?;
            print!("{}", comparison_table(&rows));
            eprintln!("wrote {}", path.display());
            Ok(0)
        }
    }
}

fn describe(s: &RunSummary) -> String {
    let mut text = match &s.status {
        crate::simworld::RunStatus::Completed => "completed".to_string(),
        crate::simworld::RunStatus::Aborted { time, reason } => format!("aborted at {time:.3} s ({reason})"),
    };
    if s.dropped {
        text += ", dropped";
    }
    match s.convergence_time {
        Some(t) => text += &format!(", converged at {t:.2} s"),
        None => text += ", not converged",
    }
    text
}
