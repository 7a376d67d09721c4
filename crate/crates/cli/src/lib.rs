//! Command implementations behind the `rishm` binary: instance generation,
//! optimization runs, result aggregation and surrogate accuracy checks.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rishm_core::controller::{run, surrogate_accuracy, AccuracyReport, RunConfig, RunResult, Variant};
use rishm_core::scenario::{generate_instance, Scale, ScenarioInstance};
use rishm_core::terrain::{generate_terrain, DemGrid, TerrainParams};
use rishm_core::Error;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RISHM_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Runtime => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Config(_) => ErrorKind::Usage,
            Error::Parse { .. } | Error::Domain(_) => ErrorKind::Data,
            Error::Io { .. } | Error::State(_) | Error::BudgetExhausted { .. } => ErrorKind::Runtime,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

/// Failures while reading inputs are data errors, even I/O ones.
fn input_error(e: Error) -> CliError {
    CliError {
        kind: ErrorKind::Data,
        message: e.to_string(),
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn load_instance(path: &Path) -> CliResult<ScenarioInstance> {
    ScenarioInstance::load(path).map_err(input_error)
}

pub fn load_result(path: &Path) -> CliResult<RunResult> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(Error::Io { path: path.to_path_buf(), source: e }))?;
    RunResult::from_json(&text, &path.display().to_string()).map_err(input_error)
}

/// Writes `instance-<scale>-<seed>.json` and returns its path. Terrain is
/// synthesised from the same seed unless a DEM file is given.
pub fn cmd_gen(scale: Scale, seed: u64, dem: Option<&Path>, out_dir: &Path) -> CliResult<PathBuf> {
    let grid = match dem {
        Some(p) => DemGrid::read_esri_ascii(p).map_err(input_error)?,
        None => generate_terrain(seed, &TerrainParams::default())?,
    };
    let inst = generate_instance(seed, scale, &grid)?;
    ensure_dir(out_dir)?;
    let path = out_dir.join(format!("instance-{}.json", inst.id()));
    write_file(&path, &inst.to_json())?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub instance: PathBuf,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub max_fes: u64,
    pub pop_size: Option<usize>,
    pub out_dir: PathBuf,
}

pub fn result_file_name(instance_id: &str, variant: Variant, seed: u64) -> String {
    format!("result-{instance_id}-{variant}-{seed}.json")
}

/// Runs every (variant, seed) combination, in parallel, and writes one
/// result file per run. Output order follows the request order.
pub fn cmd_run(req: &RunRequest) -> CliResult<Vec<(PathBuf, RunResult)>> {
    if req.variants.is_empty() || req.seeds.is_empty() {
        return Err(CliError::usage("at least one variant and one seed are required"));
    }
    let inst = load_instance(&req.instance)?;
    let base = RunConfig {
        max_fes: req.max_fes,
        pop_size: req.pop_size.unwrap_or(RunConfig::default().pop_size),
        ..RunConfig::default()
    };
    base.validate(&inst)?;
    ensure_dir(&req.out_dir)?;
    let jobs: Vec<(Variant, u64)> = req
        .variants
        .iter()
        .flat_map(|&v| req.seeds.iter().map(move |&s| (v, s)))
        .collect();
    jobs.par_iter()
        .map(|&(variant, seed)| {
            let cfg = RunConfig {
                variant,
                seed,
                ..base.clone()
            };
            let result = run(&inst, &cfg)?;
            let path = req.out_dir.join(result_file_name(inst.id(), variant, seed));
            write_file(&path, &result.to_json())?;
            Ok((path, result))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub instance_id: String,
    pub variant: Variant,
    pub runs: usize,
    pub mean: f64,
    /// Population standard deviation (divides by the number of runs).
    pub std: f64,
    pub mean_coverage: f64,
}

/// Mean and population standard deviation of final best fitness per
/// (instance, variant). Results from several instances need `group`.
pub fn summarize(results: &[RunResult], group: bool) -> CliResult<Vec<GroupSummary>> {
    if results.is_empty() {
        return Err(CliError::usage("no result files given"));
    }
    let first = &results[0].instance_id;
    if !group && results.iter().any(|r| &r.instance_id != first) {
        return Err(CliError::usage(
            "results come from several instances; pass --group to summarise them per instance",
        ));
    }
    let mut groups: BTreeMap<(String, &str), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.instance_id.clone(), r.config.variant.as_str()))
            .or_default()
            .push(r);
    }
    Ok(groups
        .into_values()
        .map(|rs| {
            let n = rs.len() as f64;
            let mean = rs.iter().map(|r| r.final_best()).sum::<f64>() / n;
            let var = rs.iter().map(|r| (r.final_best() - mean).powi(2)).sum::<f64>() / n;
            GroupSummary {
                instance_id: rs[0].instance_id.clone(),
                variant: rs[0].config.variant,
                runs: rs.len(),
                mean,
                std: var.sqrt(),
                mean_coverage: rs.iter().map(|r| r.best.objective.coverage_fraction).sum::<f64>() / n,
            }
        })
        .collect())
}

pub fn render_table(rows: &[GroupSummary]) -> String {
    let mut s = String::new();
    writeln!(s, "final best fitness as Avg(Std); Std is the population standard deviation").unwrap();
    writeln!(
        s,
        "{:<20} {:<16} {:>4} {:>24} {:>10}",
        "instance", "variant", "runs", "fitness", "coverage"
    )
    .unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<20} {:<16} {:>4} {:>24} {:>10.4}",
            r.instance_id,
            r.variant.as_str(),
            r.runs,
            format!("{:.4e}({:.2e})", r.mean, r.std),
            r.mean_coverage
        )
        .unwrap();
    }
    s
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::runtime(format!("cannot write {}: {e}", path.display()))
}

pub struct ReportOutput {
    pub table: String,
    pub summary: Vec<GroupSummary>,
    pub summary_csv: PathBuf,
    pub convergence_csv: PathBuf,
    pub convergence_rows: usize,
}

/// Summarises result files and writes `summary.csv` plus a merged
/// `convergence.csv` with one row per trace point.
pub fn cmd_report(files: &[PathBuf], group: bool, out_dir: &Path) -> CliResult<ReportOutput> {
    let results = files.iter().map(|f| load_result(f)).collect::<CliResult<Vec<_>>>()?;
    let summary = summarize(&results, group)?;
    ensure_dir(out_dir)?;

    let summary_csv = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_csv).map_err(|e| csv_error(&summary_csv, e))?;
    w.write_record(["instance", "variant", "runs", "mean_fitness", "std_fitness", "mean_coverage"])
        .map_err(|e| csv_error(&summary_csv, e))?;
    for r in &summary {
        w.write_record([
            r.instance_id.clone(),
            r.variant.to_string(),
            r.runs.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.mean_coverage.to_string(),
        ])
        .map_err(|e| csv_error(&summary_csv, e))?;
    }
    w.flush().map_err(|e| CliError::runtime(e.to_string()))?;

    let convergence_csv = out_dir.join("convergence.csv");
    let mut w = csv::Writer::from_path(&convergence_csv).map_err(|e| csv_error(&convergence_csv, e))?;
    w.write_record(["variant", "seed", "fe", "best_fitness"])
        .map_err(|e| csv_error(&convergence_csv, e))?;
    let mut rows = 0;
    for r in &results {
        for t in &r.trace {
            w.write_record([
                r.config.variant.to_string(),
                r.config.seed.to_string(),
                t.fe.to_string(),
                t.best_fitness.to_string(),
            ])
            .map_err(|e| csv_error(&convergence_csv, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| CliError::runtime(e.to_string()))?;

    Ok(ReportOutput {
        table: render_table(&summary),
        summary,
        summary_csv,
        convergence_csv,
        convergence_rows: rows,
    })
}

/// Held-out ranker accuracy for each seed; writes one JSON report per seed.
pub fn cmd_accuracy(instance: &Path, seeds: &[u64], out_dir: &Path) -> CliResult<Vec<(PathBuf, AccuracyReport)>> {
    if seeds.is_empty() {
        return Err(CliError::usage("at least one seed is required"));
    }
    let inst = load_instance(instance)?;
    ensure_dir(out_dir)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = RunConfig {
                seed,
                ..RunConfig::default()
            };
            let report = surrogate_accuracy(&inst, &cfg)?;
            let path = out_dir.join(format!("accuracy-{}-{seed}.json", inst.id()));
            let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
            text.push('\n');
            write_file(&path, &text)?;
            Ok((path, report))
        })
        .collect()
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
