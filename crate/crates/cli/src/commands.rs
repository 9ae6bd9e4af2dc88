use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use volfill::diagnostics::{decay_fit, default_window, read_hstar_series, write_csv, FitResult};
use volfill::oracle::verify_all;
use volfill::scenario::{load_scenario, ScenarioError};
use volfill::scheme::{run_simulation, write_snapshot, Trajectory};
use volfill::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success,
    Validation,
    SolverAbort,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(match e {
            Exit::Success => 0,
            Exit::Validation => 1,
            Exit::SolverAbort => 2,
        })
    }
}

pub fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if !(a < b) {
        return Err(format!("window start {a} must be below end {b}"));
    }
    Ok((a, b))
}

fn report_scenario_error(path: &Path, e: &ScenarioError) {
    eprintln!("{}: {e}", path.display());
}

fn fit_trajectory(traj: &Trajectory) -> Option<FitResult> {
    let series = traj.hstar_series();
    let window = default_window(&series)?;
    decay_fit(&series, window).ok()
}

/// Output of a completed run.
pub struct RunOutput {
    pub dir: PathBuf,
    pub fit: Option<FitResult>,
}

fn write_outputs(scenario: &Scenario, traj: &Trajectory, dir: &Path) -> Result<Option<FitResult>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let diag = dir.join("diagnostics.csv");
    let file = BufWriter::new(File::create(&diag).with_context(|| format!("creating {}", diag.display()))?);
    write_csv(&traj.records, scenario.species, file)?;
    for snap in &traj.snapshots {
        write_snapshot(dir, snap, &scenario.mesh)?;
    }
    let fit = fit_trajectory(traj);
    let first = traj.records.first().expect("initial record");
    let last = traj.records.last().expect("initial record");
    let mut summary = BufWriter::new(File::create(dir.join("summary.txt"))?);
    writeln!(summary, "scenario        {}", scenario.name)?;
    writeln!(summary, "T               {}", last.t)?;
    writeln!(summary, "steps           {}", traj.steps.len())?;
    writeln!(summary, "rejections      {}", traj.total_rejections())?;
    writeln!(summary, "Hstar(0)        {:.16e}", first.hstar)?;
    writeln!(summary, "Hstar(T)        {:.16e}", last.hstar)?;
    writeln!(summary, "sup_dev(0)      {:.16e}", first.sup_dev)?;
    writeln!(summary, "sup_dev(T)      {:.16e}", last.sup_dev)?;
    match &fit {
        Some(f) => write!(summary, "{}", f.render())?,
        None => writeln!(summary, "verdict         inconclusive (no resolvable decay)")?,
    }
    summary.flush()?;
    Ok(fit)
}

fn output_dir(scenario: &Scenario, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| scenario.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name))
}

/// Loads, runs and writes one scenario.
fn run_one(path: &Path, out: Option<&Path>) -> Result<std::result::Result<(Scenario, RunOutput), Exit>> {
    let scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(e) => {
            report_scenario_error(path, &e);
            return Ok(Err(Exit::Validation));
        }
    };
    let traj = match run_simulation(&scenario) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: solver aborted: {e}", path.display());
            return Ok(Err(Exit::SolverAbort));
        }
    };
    let dir = output_dir(&scenario, out);
    let fit = write_outputs(&scenario, &traj, &dir)?;
    Ok(Ok((scenario, RunOutput { dir, fit })))
}

pub fn run(path: &Path, out: Option<&Path>) -> Result<Exit> {
    match run_one(path, out)? {
        Ok((scenario, result)) => {
            println!("{}: wrote {}", scenario.name, result.dir.display());
            print!("{}", fs::read_to_string(result.dir.join("summary.txt"))?);
            Ok(Exit::Success)
        }
        Err(code) => Ok(code),
    }
}

struct SweepRow {
    scenario: String,
    alpha: Option<f64>,
    fit: Option<FitResult>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.10e}"))
}

pub fn sweep(pattern: &str, out: &Path, jobs: usize) -> Result<Exit> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .with_context(|| format!("bad pattern {pattern}"))?
        .collect::<std::result::Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no scenario matches {pattern}");
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<std::result::Result<SweepRow, Exit>>>> = Mutex::new((0..paths.len()).map(|_| None).collect());
    let failure: Mutex<Option<anyhow::Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, paths.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = paths.get(i) else { break };
                let stem = path.file_stem().map_or_else(|| format!("scenario_{i}"), |s| s.to_string_lossy().into_owned());
                let row = match run_one(path, Some(&out.join(&stem))) {
                    Ok(Ok((scenario, res))) => Ok(SweepRow {
                        scenario: scenario.name.clone(),
                        alpha: scenario.alpha(),
                        fit: res.fit,
                    }),
                    Ok(Err(code)) => Err(code),
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        Err(Exit::Validation)
                    }
                };
                results.lock().unwrap()[i] = Some(row);
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    fs::create_dir_all(out)?;
    let mut table = String::from("scenario,alpha,lambda,gamma,verdict\n");
    let mut exit = Exit::Success;
    for row in results.into_inner().unwrap().into_iter().flatten() {
        match row {
            Ok(r) => {
                let verdict = r.fit.as_ref().map_or("inconclusive", |f| f.verdict.as_str());
                table.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.scenario,
                    fmt_opt(r.alpha),
                    fmt_opt(r.fit.as_ref().map(|f| f.exp_rate)),
                    fmt_opt(r.fit.as_ref().map(|f| f.alg_exponent)),
                    verdict
                ));
            }
            Err(code) => {
                if exit != Exit::SolverAbort {
                    exit = code;
                }
            }
        }
    }
    fs::write(out.join("rates.csv"), &table)?;
    print!("{table}");
    Ok(exit)
}

pub fn check(path: &Path) -> Result<Exit> {
    match load_scenario(path) {
        Ok(s) => {
            println!("{}: ok", s.name);
            print!("{}", s.report.render());
            Ok(Exit::Success)
        }
        Err(ScenarioError::Hypotheses(report)) => {
            println!("{}: refused", path.display());
            print!("{}", report.render());
            Ok(Exit::Validation)
        }
        Err(e) => {
            report_scenario_error(path, &e);
            Ok(Exit::Validation)
        }
    }
}

pub fn fit(path: &Path, window: Option<(f64, f64)>) -> Result<Exit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let series = read_hstar_series(&text).map_err(anyhow::Error::msg)?;
    let window = match window.or_else(|| default_window(&series)) {
        Some(w) => w,
        None => bail!("Hstar never exceeds round-off; nothing to fit"),
    };
    let result = decay_fit(&series, window)?;
    print!("{}", result.render());
    Ok(Exit::Success)
}

pub fn verify(seed: u64) -> Result<Exit> {
    let report = verify_all(seed)?;
    print!("{}", report.render());
    Ok(if report.all_passed() { Exit::Success } else { Exit::Validation })
}
