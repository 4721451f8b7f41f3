//! `mtmeta`: command-line front end for metric meta-evaluation.
//!
//! Every command writes its result to `--out` and a reproducibility
//! manifest to `<out>.manifest.json`. Exit codes: 0 success, 2 bad input
//! data, 3 degenerate computation, 4 invalid flags.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtmeta::corpus::load_dataset;
use mtmeta::experiments::{
    default_grid, held_out_sweep, length_bias_report, matrix_to_csv, metric_correlation_matrix, tie_sweep,
    SubsampleConfig, SweepResult,
};
use mtmeta::numfmt;
use mtmeta::sentinels::{
    discretize, perturb_discrete, segment_constant_scores, DiscreteLevels, PerturbConfig, Reducer,
};
use mtmeta::significance::{
    aggregate_ranking, run_task, CalibratedAccEq, Evaluator, GroupedCorrelation, PermConfig, SystemAccuracy,
    SystemPearson, TaskResult,
};
use mtmeta::ties::calibrated_acc_eq;
use mtmeta::{Dataset, Grouping, PairScope, ScoreMatrix, Statistic};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const EXIT_DATA: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self::data(format!("{}: {err}", path.display()))
    }

    /// Attaches the metric (or other subject) the failure is about.
    fn about(self, subject: &str) -> Self {
        Self { message: format!("{subject}: {}", self.message), ..self }
    }
}

impl From<mtmeta::Error> for CliError {
    fn from(e: mtmeta::Error) -> Self {
        let code = if e.is_data_error() {
            EXIT_DATA
        } else if matches!(e, mtmeta::Error::InvalidConfig(_)) {
            EXIT_USAGE
        } else {
            EXIT_DEGENERATE
        };
        Self { code, message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mtmeta", version, about = "Meta-evaluation of machine-translation metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank metrics over one or more datasets with significance clusters.
    Rank(RankArgs),
    /// Tie-calibrated acc_eq and the selected epsilon per metric.
    Calibrate(CalibrateArgs),
    /// Tie calibration over a grid of tied/untied pair subsampling rates.
    Sweep(SweepArgs),
    /// Calibrate epsilon on a share of the segments, evaluate on the rest.
    Heldout(HeldoutArgs),
    /// Metric score against candidate length, with a least-squares fit.
    Lengthbias(LengthBiasArgs),
    /// Pairwise correlation matrix between metrics.
    Matrix(MatrixArgs),
    /// Generate a synthetic probe metric as a canonical metric TSV.
    Sentinel(SentinelArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StatArg {
    Pearson,
    Kendall,
    #[value(name = "acc_eq")]
    AccEq,
    #[value(name = "sys_acc")]
    SysAcc,
    #[value(name = "sys_pearson")]
    SysPearson,
}

impl StatArg {
    fn evaluator(self, grouping: Grouping, scope: PairScope) -> Box<dyn Evaluator> {
        match self {
            StatArg::Pearson => Box::new(GroupedCorrelation { grouping, statistic: Statistic::Pearson }),
            StatArg::Kendall => Box::new(GroupedCorrelation { grouping, statistic: Statistic::KendallTau }),
            StatArg::AccEq => Box::new(CalibratedAccEq { scope }),
            StatArg::SysAcc => Box::new(SystemAccuracy),
            StatArg::SysPearson => Box::new(SystemPearson),
        }
    }

    fn statistic(self) -> Statistic {
        match self {
            StatArg::Pearson | StatArg::SysPearson => Statistic::Pearson,
            StatArg::Kendall => Statistic::KendallTau,
            StatArg::AccEq => Statistic::AccEq,
            StatArg::SysAcc => Statistic::SysPairwiseAcc,
        }
    }

    fn name(self) -> &'static str {
        match self {
            StatArg::Pearson => "pearson",
            StatArg::Kendall => "kendall",
            StatArg::AccEq => "acc_eq",
            StatArg::SysAcc => "sys_acc",
            StatArg::SysPearson => "sys_pearson",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        <Self as ValueEnum>::from_str(s, true).ok()
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GroupingArg {
    None,
    Segment,
    System,
}

impl From<GroupingArg> for Grouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::None => Grouping::None,
            GroupingArg::Segment => Grouping::Segment,
            GroupingArg::System => Grouping::System,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScopeArg {
    Segment,
    All,
}

impl From<ScopeArg> for PairScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Segment => PairScope::WithinSegment,
            ScopeArg::All => PairScope::All,
        }
    }
}

#[derive(Args, Serialize)]
struct RankArgs {
    /// Dataset directory; repeat for several language pairs.
    #[arg(long = "data", value_name = "DIR")]
    data: Vec<PathBuf>,
    /// Statistics to compute per dataset (default: pearson and acc_eq).
    #[arg(long = "statistic", value_enum)]
    statistics: Vec<StatArg>,
    #[arg(long, value_enum, default_value = "none")]
    grouping: GroupingArg,
    #[arg(long = "pair-scope", value_enum, default_value = "segment")]
    pair_scope: ScopeArg,
    /// Restrict to these metrics (default: every metric of the datasets).
    #[arg(long = "metric", value_name = "NAME")]
    metrics: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for permutation tests (results do not depend on it).
    #[arg(long)]
    #[serde(skip)]
    workers: Option<usize>,
    /// Precomputed per-task values instead of datasets: TSV with header
    /// `metric  <task>:<statistic> ...`.
    #[arg(long = "tasks-file", value_name = "TSV", conflicts_with = "data")]
    tasks_file: Option<PathBuf>,
    /// P-values for precomputed tasks: TSV `task  better  worse  p`, where
    /// `task` is `<task>/<statistic>`.
    #[arg(long = "pvalues-file", value_name = "TSV", requires = "tasks_file")]
    pvalues_file: Option<PathBuf>,
    /// Aggregated ranking TSV; per-task detail goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    #[arg(long = "data", value_name = "DIR")]
    data: PathBuf,
    #[arg(long = "metric", value_name = "NAME")]
    metrics: Vec<String>,
    #[arg(long = "pair-scope", value_enum, default_value = "segment")]
    pair_scope: ScopeArg,
    /// JSON output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GridArgs {
    /// CSV with header `p_t,p_n`, one grid point per row.
    #[arg(long = "grid-file", value_name = "CSV", conflicts_with_all = ["p_tied", "p_untied"])]
    grid_file: Option<PathBuf>,
    /// Removal probability for human-tied pairs (single grid point).
    #[arg(long = "p-tied")]
    p_tied: Option<f64>,
    /// Removal probability for untied pairs (single grid point).
    #[arg(long = "p-untied")]
    p_untied: Option<f64>,
    /// Repetitions per grid point.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long = "data", value_name = "DIR")]
    data: PathBuf,
    #[arg(long = "metric", value_name = "NAME")]
    metrics: Vec<String>,
    #[arg(long = "pair-scope", value_enum, default_value = "segment")]
    pair_scope: ScopeArg,
    #[command(flatten)]
    grid: GridArgs,
    /// CSV output, or JSON when the name ends in `.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct HeldoutArgs {
    #[arg(long = "data", value_name = "DIR")]
    data: PathBuf,
    #[arg(long = "metric", value_name = "NAME")]
    metrics: Vec<String>,
    #[arg(long = "pair-scope", value_enum, default_value = "segment")]
    pair_scope: ScopeArg,
    /// Share of segments used for calibration.
    #[arg(long = "calibration-fraction", default_value_t = 0.2)]
    calibration_fraction: f64,
    #[command(flatten)]
    grid: GridArgs,
    /// CSV output, or JSON when the name ends in `.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct LengthBiasArgs {
    #[arg(long = "data", value_name = "DIR")]
    data: PathBuf,
    #[arg(long = "metric", value_name = "NAME")]
    metric: String,
    /// Drop entries whose human score is below this value.
    #[arg(long = "min-human", allow_hyphen_values = true)]
    min_human: Option<f64>,
    /// Scatter CSV, or the full report as JSON when the name ends in `.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct MatrixArgs {
    #[arg(long = "data", value_name = "DIR")]
    data: PathBuf,
    /// Metrics to compare (default: every metric); `human` is accepted.
    #[arg(long = "metric", value_name = "NAME")]
    metrics: Vec<String>,
    #[arg(long, value_enum, default_value = "pearson")]
    statistic: StatArg,
    #[arg(long, value_enum, default_value = "none")]
    grouping: GroupingArg,
    /// CSV output, or JSON when the name ends in `.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SentinelKind {
    /// Per-segment constant derived from the human scores.
    Segconst,
    /// Truncated Gaussian continuization of a discrete metric.
    Perturb,
    /// Snap a metric to fixed levels.
    Discretize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ReducerArg {
    Mean,
    Median,
}

#[derive(Args, Serialize)]
struct SentinelArgs {
    #[arg(value_enum)]
    kind: SentinelKind,
    #[arg(long = "data", value_name = "DIR")]
    data: PathBuf,
    /// Source metric (perturb, discretize).
    #[arg(long = "metric", value_name = "NAME")]
    metric: Option<String>,
    #[arg(long, value_enum, default_value = "mean")]
    reducer: ReducerArg,
    /// Noise variance (perturb).
    #[arg(long, default_value_t = 1e-4)]
    variance: f64,
    /// Noise stays below this fraction of the smallest level gap (perturb).
    #[arg(long = "truncation-factor", default_value_t = 0.4)]
    truncation_factor: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated increasing levels (discretize).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    levels: Vec<f64>,
    /// Output metric name (defaults to the conventional sentinel name).
    #[arg(long)]
    name: Option<String>,
    /// Canonical metric TSV output.
    #[arg(long)]
    out: PathBuf,
}

/// Reproducibility envelope written next to every output.
#[derive(Serialize)]
struct Manifest {
    command: String,
    config: Value,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    tool_version: &'static str,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::io(path, e))?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn digests(inputs: &[&Path]) -> CliResult<Vec<InputDigest>> {
    let mut files = Vec::new();
    for p in inputs {
        collect_files(p, &mut files)?;
    }
    files
        .into_iter()
        .map(|f| {
            let bytes = fs::read(&f).map_err(|e| CliError::io(&f, e))?;
            Ok(InputDigest { path: f.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable");
    numfmt::round_json(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Writes the outputs and the manifest for `out`.
fn finish(command: &str, config: Value, inputs: &[&Path], out: &Path, files: &[(PathBuf, String)]) -> CliResult<()> {
    let inputs = digests(inputs)?;
    for (path, contents) in files {
        write_file(path, contents)?;
    }
    let manifest = Manifest {
        command: command.to_string(),
        config,
        inputs,
        outputs: files.iter().map(|(p, _)| p.display().to_string()).collect(),
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    write_file(&with_suffix(out, ".manifest.json"), &to_json(&manifest))
}

/// Explicit seed, or a fresh one that ends up in the manifest.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn load(dir: &Path) -> CliResult<Dataset> {
    Ok(load_dataset(dir)?)
}

fn select_metrics(ds: &Dataset, requested: &[String]) -> CliResult<Vec<String>> {
    if requested.is_empty() {
        return Ok(ds.metric_names());
    }
    for m in requested {
        ds.scores(m).map_err(CliError::from)?;
    }
    Ok(requested.to_vec())
}

fn cmd_rank(args: &RankArgs) -> CliResult<()> {
    if args.data.is_empty() && args.tasks_file.is_none() {
        return Err(CliError::usage("rank needs --data or --tasks-file"));
    }
    let seed = resolve_seed(args.seed);
    let statistics =
        if args.statistics.is_empty() { vec![StatArg::Pearson, StatArg::AccEq] } else { args.statistics.clone() };
    let perm = PermConfig { n_resamples: args.resamples, alpha: args.alpha, seed, workers: args.workers.unwrap_or(0) };
    perm.validate()?;

    let (tasks, inputs): (Vec<TaskResult>, Vec<&Path>) = match &args.tasks_file {
        Some(file) => {
            let mut inputs = vec![file.as_path()];
            inputs.extend(args.pvalues_file.as_deref());
            (precomputed_tasks(file, args.pvalues_file.as_deref())?, inputs)
        }
        None => {
            let mut tasks = Vec::new();
            for dir in &args.data {
                let ds = load(dir)?;
                let names = select_metrics(&ds, &args.metrics)?;
                if names.len() < 2 {
                    return Err(CliError::data(format!("{}: need at least two metrics", dir.display())));
                }
                let mats: Vec<&ScoreMatrix> = names.iter().map(|n| ds.scores(n)).collect::<Result<_, _>>()?;
                for stat in &statistics {
                    let eval = stat.evaluator(args.grouping.into(), args.pair_scope.into());
                    for m in &mats {
                        eval.evaluate(m, &ds.human).map_err(|e| CliError::from(e).about(m.name()))?;
                    }
                    let id = format!("{}/{}", ds.language_pair, stat.name());
                    tasks.push(run_task(id, &mats, &ds.human, eval.as_ref(), &perm)?);
                }
            }
            (tasks, args.data.iter().map(PathBuf::as_path).collect())
        }
    };
    let table = aggregate_ranking(&tasks, None, args.alpha)?;

    let detail = json!({
        "tasks": tasks.iter().map(|t| Ok(json!({
            "id": t.id,
            "statistic": t.statistic,
            "values": t.values,
            "ranks": t.ranks(args.alpha)?,
            "pvalues": task_pvalues_json(t),
        }))).collect::<CliResult<Vec<_>>>()?,
        "ranking": table,
    });
    let mut config = serde_json::to_value(args).expect("serializable");
    config["seed"] = json!(seed);
    config["statistics"] = json!(statistics);
    finish(
        "rank",
        config,
        &inputs,
        &args.out,
        &[(args.out.clone(), table.to_tsv()), (with_suffix(&args.out, ".json"), to_json(&detail))],
    )?;
    print!("{}", table.to_tsv());
    Ok(())
}

fn task_pvalues_json(t: &TaskResult) -> Value {
    let mut entries: Vec<(&(String, String), &f64)> = t.pvalues.iter().collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    Value::Array(entries.into_iter().map(|((b, w), p)| json!({"better": b, "worse": w, "p": p})).collect())
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::data(format!("{}:{line}: not a number: {s:?}", path.display())))
}

fn precomputed_tasks(file: &Path, pvalues: Option<&Path>) -> CliResult<Vec<TaskResult>> {
    let text = read_text(file)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| CliError::data(format!("{}: empty file", file.display())))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.first() != Some(&"metric") || cols.len() < 2 {
        return Err(CliError::data(format!("{}:1: header must be `metric` followed by task columns", file.display())));
    }
    let mut tasks: Vec<TaskResult> = cols[1..]
        .iter()
        .map(|c| {
            let (id, stat) = c.rsplit_once(':').unwrap_or((c, ""));
            let stat = StatArg::parse(stat).ok_or_else(|| {
                CliError::data(format!("{}:1: task column {c:?} must look like <task>:<statistic>", file.display()))
            })?;
            Ok(TaskResult {
                id: format!("{id}/{}", stat.name()),
                statistic: stat.statistic(),
                values: BTreeMap::new(),
                pvalues: HashMap::new(),
            })
        })
        .collect::<CliResult<_>>()?;
    for (i, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(CliError::data(format!("{}:{}: expected {} fields", file.display(), i + 1, cols.len())));
        }
        for (t, v) in tasks.iter_mut().zip(&f[1..]) {
            if t.values.insert(f[0].to_string(), parse_f64(file, i + 1, v)?).is_some() {
                return Err(CliError::data(format!("{}:{}: duplicate metric {}", file.display(), i + 1, f[0])));
            }
        }
    }
    match pvalues {
        Some(pfile) => {
            let text = read_text(pfile)?;
            for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 4 {
                    return Err(CliError::data(format!(
                        "{}:{}: expected task, better, worse, p",
                        pfile.display(),
                        i + 1
                    )));
                }
                let task = tasks
                    .iter_mut()
                    .find(|t| t.id == f[0])
                    .ok_or_else(|| CliError::data(format!("{}:{}: unknown task {}", pfile.display(), i + 1, f[0])))?;
                task.pvalues.insert((f[1].to_string(), f[2].to_string()), parse_f64(pfile, i + 1, f[3])?);
            }
        }
        None => {
            // Without p-values no difference counts as significant.
            for t in &mut tasks {
                for (a, va) in &t.values {
                    for (b, vb) in &t.values {
                        if va > vb {
                            t.pvalues.insert((a.clone(), b.clone()), 1.0);
                        }
                    }
                }
            }
        }
    }
    Ok(tasks)
}

fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let names = select_metrics(&ds, &args.metrics)?;
    let mut results = BTreeMap::new();
    for name in &names {
        let r = calibrated_acc_eq(ds.scores(name)?, &ds.human, args.pair_scope.into())
            .map_err(|e| CliError::from(e).about(name))?;
        results.insert(name.clone(), r);
    }
    let out = json!({ "language_pair": ds.language_pair, "pair_scope": args.pair_scope, "results": results });
    let text = to_json(&out);
    finish(
        "calibrate",
        serde_json::to_value(args).expect("serializable"),
        &[&args.data],
        &args.out,
        &[(args.out.clone(), text.clone())],
    )?;
    print!("{text}");
    Ok(())
}

fn resolve_grid(g: &GridArgs) -> CliResult<Vec<SubsampleConfig>> {
    if g.seeds == 0 {
        return Err(CliError::usage("--seeds must be at least 1"));
    }
    if let Some(file) = &g.grid_file {
        let text = read_text(file)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.replace(' ', "") == "p_t,p_n" => {}
            _ => return Err(CliError::data(format!("{}:1: header must be `p_t,p_n`", file.display()))),
        }
        let grid = lines
            .map(|(i, l)| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 2 {
                    return Err(CliError::data(format!("{}:{}: expected p_t,p_n", file.display(), i + 1)));
                }
                let c = SubsampleConfig::new(parse_f64(file, i + 1, f[0])?, parse_f64(file, i + 1, f[1])?, 0)
                    .map_err(|e| CliError::data(format!("{}:{}: {e}", file.display(), i + 1)))?;
                Ok(c)
            })
            .collect::<CliResult<Vec<_>>>()?;
        if grid.is_empty() {
            return Err(CliError::data(format!("{}: no grid points", file.display())));
        }
        return Ok(grid);
    }
    if g.p_tied.is_some() || g.p_untied.is_some() {
        return Ok(vec![SubsampleConfig::new(g.p_tied.unwrap_or(0.0), g.p_untied.unwrap_or(0.0), 0)?]);
    }
    Ok(default_grid())
}

fn sweep_output(result: &SweepResult, out: &Path) -> String {
    if is_json(out) {
        to_json(result)
    } else {
        result.to_csv()
    }
}

fn grid_config(args: &impl Serialize, grid: &[SubsampleConfig], seed: u64) -> Value {
    let mut config = serde_json::to_value(args).expect("serializable");
    config["seed"] = json!(seed);
    config["resolved_grid"] = json!(grid.iter().map(|c| json!({"p_t": c.p_t, "p_n": c.p_n})).collect::<Vec<_>>());
    config
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let grid = resolve_grid(&args.grid)?;
    let seed = resolve_seed(args.grid.seed);
    let ds = load(&args.data)?;
    let names = select_metrics(&ds, &args.metrics)?;
    let result = tie_sweep(&ds, &names, &grid, args.grid.seeds, seed, args.pair_scope.into())?;
    let text = sweep_output(&result, &args.out);
    finish("sweep", grid_config(args, &grid, seed), &[&args.data], &args.out, &[(args.out.clone(), text.clone())])?;
    print!("{text}");
    Ok(())
}

fn cmd_heldout(args: &HeldoutArgs) -> CliResult<()> {
    let grid = resolve_grid(&args.grid)?;
    let seed = resolve_seed(args.grid.seed);
    let ds = load(&args.data)?;
    let names = select_metrics(&ds, &args.metrics)?;
    let result =
        held_out_sweep(&ds, &names, args.pair_scope.into(), args.calibration_fraction, &grid, args.grid.seeds, seed)?;
    let text = sweep_output(&result, &args.out);
    finish("heldout", grid_config(args, &grid, seed), &[&args.data], &args.out, &[(args.out.clone(), text.clone())])?;
    print!("{text}");
    Ok(())
}

fn cmd_lengthbias(args: &LengthBiasArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let report =
        length_bias_report(&ds, &args.metric, args.min_human).map_err(|e| CliError::from(e).about(&args.metric))?;
    let text = if is_json(&args.out) { to_json(&report) } else { report.scatter_csv() };
    finish(
        "lengthbias",
        serde_json::to_value(args).expect("serializable"),
        &[&args.data],
        &args.out,
        &[(args.out.clone(), text)],
    )?;
    println!(
        "{}: slope {} intercept {} over {} points",
        args.metric,
        numfmt::fmt(report.fit.slope),
        numfmt::fmt(report.fit.intercept),
        report.fit.n
    );
    Ok(())
}

fn cmd_matrix(args: &MatrixArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let names = select_metrics(&ds, &args.metrics)?;
    let statistic = match args.statistic {
        StatArg::Pearson => Statistic::Pearson,
        StatArg::Kendall => Statistic::KendallTau,
        StatArg::AccEq => Statistic::AccEq,
        other => return Err(CliError::usage(format!("{} is not a segment-level statistic", other.name()))),
    };
    let matrix = metric_correlation_matrix(&ds, &names, statistic, args.grouping.into())?;
    let text = if is_json(&args.out) {
        to_json(&json!({ "metrics": names, "statistic": statistic, "matrix": matrix }))
    } else {
        matrix_to_csv(&names, &matrix)
    };
    finish(
        "matrix",
        serde_json::to_value(args).expect("serializable"),
        &[&args.data],
        &args.out,
        &[(args.out.clone(), text.clone())],
    )?;
    print!("{text}");
    Ok(())
}

fn cmd_sentinel(args: &SentinelArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let source = || -> CliResult<&ScoreMatrix> {
        let name = args.metric.as_deref().ok_or_else(|| CliError::usage("this sentinel needs --metric"))?;
        Ok(ds.scores(name)?)
    };
    let mut config = serde_json::to_value(args).expect("serializable");
    let matrix = match args.kind {
        SentinelKind::Segconst => {
            let reducer = match args.reducer {
                ReducerArg::Mean => Reducer::Mean,
                ReducerArg::Median => Reducer::Median,
            };
            segment_constant_scores(&ds.human, reducer)?
        }
        SentinelKind::Perturb => {
            let seed = resolve_seed(args.seed);
            config["seed"] = json!(seed);
            let cfg = PerturbConfig {
                variance: args.variance,
                seed,
                truncation_factor: args.truncation_factor,
                ..PerturbConfig::default()
            };
            let src = source()?;
            perturb_discrete(src, &cfg).map_err(|e| CliError::from(e).about(src.name()))?
        }
        SentinelKind::Discretize => {
            let levels = DiscreteLevels::new(args.levels.clone())?;
            discretize(source()?, &levels)
        }
    };
    let matrix = match &args.name {
        Some(n) => matrix.with_name(n.clone()),
        None => matrix,
    };
    finish("sentinel", config, &[&args.data], &args.out, &[(args.out.clone(), matrix.to_tsv())])?;
    println!("wrote {} ({} scores) to {}", matrix.name(), matrix.n_present(), args.out.display());
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Rank(a) => cmd_rank(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Heldout(a) => cmd_heldout(a),
        Command::Lengthbias(a) => cmd_lengthbias(a),
        Command::Matrix(a) => cmd_matrix(a),
        Command::Sentinel(a) => cmd_sentinel(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
