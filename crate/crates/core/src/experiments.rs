//! Diagnostic studies built on the statistics modules: tied-pair
//! subsampling sweeps, held-out tie calibration, length-bias regression and
//! metric-vs-metric correlation matrices.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{align, Dataset, ScoreMatrix};
use crate::correlation::{grouped_statistic, Grouping, Statistic};
use crate::error::{Error, Result};
use crate::numfmt;
use crate::seeding;
use crate::ties::{acc_eq_at, calibrate_epsilon, enumerate_pairs, Pair, PairScope, PairSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    /// Removal probability for human-tied pairs.
    pub p_t: f64,
    /// Removal probability for pairs not tied in the human scores.
    pub p_n: f64,
    pub seed: u64,
}

impl SubsampleConfig {
    pub fn new(p_t: f64, p_n: f64, seed: u64) -> Result<Self> {
        let c = Self { p_t, p_n, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn identity() -> Self {
        Self { p_t: 0.0, p_n: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_t", self.p_t), ("p_n", self.p_n)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// The 13-point `(p_t, p_n)` grid: first tied pairs are thinned, then
/// untied ones.
pub fn default_grid() -> Vec<SubsampleConfig> {
    let pt = [1.0, 0.65, 0.30].map(|p| (p, 0.0));
    let pn = [0.0, 0.2, 0.4, 0.5, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85].map(|p| (0.0, p));
    pt.into_iter().chain(pn).map(|(p_t, p_n)| SubsampleConfig { p_t, p_n, seed: 0 }).collect()
}

/// Expected human-tie fraction after subsampling a set with tie fraction `t`.
pub fn expected_tie_fraction(t: f64, p_t: f64, p_n: f64) -> f64 {
    let tied = t * (1.0 - p_t);
    let untied = (1.0 - t) * (1.0 - p_n);
    if tied + untied == 0.0 {
        0.0
    } else {
        tied / (tied + untied)
    }
}

/// Keeps each human-tied pair with probability `1 − p_t` and every other
/// pair with probability `1 − p_n`. One uniform draw per pair, in order.
pub fn subsample_pairs(pairs: &PairSet, config: &SubsampleConfig) -> Result<PairSet> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let mut rng = seeding::rng(config.seed, &[]);
    let kept: Vec<Pair> = pairs
        .pairs
        .iter()
        .filter(|p| {
            let drop = if p.human_tied() { config.p_t } else { config.p_n };
            rng.random::<f64>() >= drop
        })
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::AllPairsRemoved);
    }
    Ok(PairSet::new(kept))
}

/// Human-only pairs over the keys where the human score is present.
fn human_pairs(human: &ScoreMatrix, scope: PairScope) -> Result<PairSet> {
    enumerate_pairs(human, human, scope)
}

/// Attaches `metric` scores to human pairs, dropping pairs where the metric
/// is missing on either side.
fn with_metric(pairs: &PairSet, metric: &ScoreMatrix) -> PairSet {
    let s = metric.scores();
    PairSet::new(
        pairs
            .pairs
            .iter()
            .filter_map(|p| match (s[p.a], s[p.b]) {
                (Some(ma), Some(mb)) => Some(Pair { m: (ma, mb), ..*p }),
                _ => None,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub epsilon: f64,
    pub acc_eq: f64,
    /// ε min-max scaled across the sweep for this metric (0 when constant).
    pub epsilon_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: SubsampleConfig,
    /// Human-tie fraction of the (calibration) pairs, mean over seeds.
    pub tie_fraction: f64,
    /// Retained (calibration) pairs, mean over seeds.
    pub retained_pairs: f64,
    /// Held-out runs only: human-tie fraction of the evaluation pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_tie_fraction: Option<f64>,
    /// Per metric, in `SweepResult::metrics` order.
    pub metrics: Vec<MetricPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metrics: Vec<String>,
    pub original_pairs: usize,
    pub rows: Vec<SweepRow>,
    pub seeds_used: usize,
}

impl SweepResult {
    fn scale_epsilons(&mut self) {
        for m in 0..self.metrics.len() {
            let eps: Vec<f64> = self.rows.iter().map(|r| r.metrics[m].epsilon).collect();
            let lo = eps.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = eps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for row in &mut self.rows {
                let e = row.metrics[m].epsilon;
                row.metrics[m].epsilon_scaled = if hi > lo { (e - lo) / (hi - lo) } else { 0.0 };
            }
        }
    }

    /// One CSV row per grid point × metric.
    pub fn to_csv(&self) -> String {
        let held_out = self.rows.iter().any(|r| r.test_tie_fraction.is_some());
        let mut out = String::from("p_t,p_n,tie_fraction,retained_pairs,");
        if held_out {
            out.push_str("test_tie_fraction,");
        }
        out.push_str("metric,epsilon,epsilon_scaled,acc_eq\n");
        for row in &self.rows {
            for (name, mp) in self.metrics.iter().zip(&row.metrics) {
                out.push_str(&format!(
                    "{},{},{},{},",
                    numfmt::fmt(row.config.p_t),
                    numfmt::fmt(row.config.p_n),
                    numfmt::fmt(row.tie_fraction),
                    numfmt::fmt(row.retained_pairs)
                ));
                if let Some(t) = row.test_tie_fraction {
                    out.push_str(&format!("{},", numfmt::fmt(t)));
                }
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    csv_field(name),
                    numfmt::fmt(mp.epsilon),
                    numfmt::fmt(mp.epsilon_scaled),
                    numfmt::fmt(mp.acc_eq)
                ));
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct RunOutcome {
    tie_fraction: f64,
    retained: usize,
    test_tie_fraction: Option<f64>,
    per_metric: Vec<(f64, f64)>,
}

fn mean_rows(config: SubsampleConfig, runs: &[RunOutcome], n_metrics: usize) -> SweepRow {
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&RunOutcome) -> f64| runs.iter().map(f).sum::<f64>() / n;
    SweepRow {
        config,
        tie_fraction: mean(&|r| r.tie_fraction),
        retained_pairs: mean(&|r| r.retained as f64),
        test_tie_fraction: runs[0].test_tie_fraction.map(|_| mean(&|r| r.test_tie_fraction.unwrap_or(0.0))),
        metrics: (0..n_metrics)
            .map(|m| MetricPoint {
                epsilon: mean(&|r| r.per_metric[m].0),
                acc_eq: mean(&|r| r.per_metric[m].1),
                epsilon_scaled: 0.0,
            })
            .collect(),
    }
}

fn resolve_metrics<'a>(dataset: &'a Dataset, metrics: &[String]) -> Result<Vec<&'a ScoreMatrix>> {
    metrics.iter().map(|m| dataset.scores(m)).collect()
}

/// Tie-calibration sweep over a subsampling grid.
///
/// For each grid point and seed the human pair universe is thinned once and
/// every metric is calibrated on the surviving pairs (restricted to keys
/// where the metric is present). The run for grid point `g`, seed index `s`
/// uses seed `derive(base_seed, [g, s])`, so the output does not depend on
/// scheduling. The grid configs' own `seed` fields are ignored.
pub fn tie_sweep(
    dataset: &Dataset,
    metrics: &[String],
    grid: &[SubsampleConfig],
    n_seeds: usize,
    base_seed: u64,
    scope: PairScope,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    if n_seeds == 0 {
        return Err(Error::InvalidConfig("n_seeds must be at least 1".into()));
    }
    let mats = resolve_metrics(dataset, metrics)?;
    let universe = human_pairs(&dataset.human, scope)?;

    let units: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..n_seeds).map(move |s| (g, s))).collect();
    let outcomes: Vec<RunOutcome> = units
        .par_iter()
        .map(|&(g, s)| {
            let cfg = SubsampleConfig { seed: seeding::derive(base_seed, &[g as u64, s as u64]), ..grid[g] };
            let sample = subsample_pairs(&universe, &cfg)?;
            let per_metric = mats
                .iter()
                .map(|m| {
                    let r = calibrate_epsilon(&with_metric(&sample, m))?;
                    Ok((r.epsilon.value(), r.acc_eq))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RunOutcome {
                tie_fraction: sample.human_tied_fraction(),
                retained: sample.len(),
                test_tie_fraction: None,
                per_metric,
            })
        })
        .collect::<Result<_>>()?;

    let rows = outcomes.chunks(n_seeds).zip(grid).map(|(runs, cfg)| mean_rows(*cfg, runs, mats.len())).collect();
    let mut result =
        SweepResult { metrics: metrics.to_vec(), original_pairs: universe.len(), rows, seeds_used: n_seeds };
    result.scale_epsilons();
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutConfig {
    /// Fraction of segments used for calibration.
    pub calibration_fraction: f64,
    pub seed: u64,
    /// Applied to the calibration pairs only.
    pub subsample: SubsampleConfig,
}

impl Default for HeldOutConfig {
    fn default() -> Self {
        Self { calibration_fraction: 0.2, seed: 0, subsample: SubsampleConfig::identity() }
    }
}

/// Segment-level split: returns `(calibration, test)` segment indices.
pub fn split_segments(n_segments: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("calibration fraction must be in (0, 1), got {fraction}")));
    }
    let n_cal = (fraction * n_segments as f64).round() as usize;
    if n_cal == 0 || n_cal >= n_segments {
        return Err(Error::SplitTooSmall { calibration: n_cal, test: n_segments.saturating_sub(n_cal) });
    }
    let mut order: Vec<usize> = (0..n_segments).collect();
    order.shuffle(&mut seeding::rng(seed, &[0x5e9]));
    let mut cal = order[..n_cal].to_vec();
    let mut test = order[n_cal..].to_vec();
    cal.sort_unstable();
    test.sort_unstable();
    Ok((cal, test))
}

fn pairs_in_segments(pairs: &PairSet, dataset: &Dataset, segments: &[usize]) -> PairSet {
    let mut member = vec![false; dataset.keys.n_segments()];
    for &s in segments {
        member[s] = true;
    }
    PairSet::new(
        pairs
            .pairs
            .iter()
            .filter(|p| member[dataset.keys.coords(p.a).0] && member[dataset.keys.coords(p.b).0])
            .copied()
            .collect(),
    )
}

/// Calibrates ε on a (subsampled) held-out share of the segments and scores
/// `acc_eq` at that ε on the remaining segments. Pairs never straddle the
/// split.
pub fn held_out_calibration(
    dataset: &Dataset,
    metrics: &[String],
    scope: PairScope,
    config: &HeldOutConfig,
) -> Result<SweepResult> {
    let mats = resolve_metrics(dataset, metrics)?;
    let universe = human_pairs(&dataset.human, scope)?;
    let (cal_segments, test_segments) =
        split_segments(dataset.keys.n_segments(), config.calibration_fraction, config.seed)?;
    let cal_pairs = pairs_in_segments(&universe, dataset, &cal_segments);
    let test_pairs = pairs_in_segments(&universe, dataset, &test_segments);
    if cal_pairs.is_empty() || test_pairs.is_empty() {
        return Err(Error::SplitTooSmall { calibration: cal_pairs.len(), test: test_pairs.len() });
    }
    let cal_sample = subsample_pairs(&cal_pairs, &config.subsample)?;

    let per_metric = mats
        .iter()
        .map(|m| {
            let eps = calibrate_epsilon(&with_metric(&cal_sample, m))?.epsilon;
            Ok((eps.value(), acc_eq_at(&with_metric(&test_pairs, m), eps)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let run = RunOutcome {
        tie_fraction: cal_sample.human_tied_fraction(),
        retained: cal_sample.len(),
        test_tie_fraction: Some(test_pairs.human_tied_fraction()),
        per_metric,
    };
    let mut result = SweepResult {
        metrics: metrics.to_vec(),
        original_pairs: cal_pairs.len(),
        rows: vec![mean_rows(config.subsample, std::slice::from_ref(&run), mats.len())],
        seeds_used: 1,
    };
    result.scale_epsilons();
    Ok(result)
}

/// Held-out calibration over a subsampling grid and several seeds. The split
/// is fixed by `seed`; the calibration subsample for grid point `g`, seed
/// index `s` uses `derive(seed, [g, s])`.
pub fn held_out_sweep(
    dataset: &Dataset,
    metrics: &[String],
    scope: PairScope,
    calibration_fraction: f64,
    grid: &[SubsampleConfig],
    n_seeds: usize,
    seed: u64,
) -> Result<SweepResult> {
    if grid.is_empty() || n_seeds == 0 {
        return Err(Error::InvalidConfig("need a non-empty grid and at least one seed".into()));
    }
    let units: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..n_seeds).map(move |s| (g, s))).collect();
    let runs: Vec<SweepResult> = units
        .par_iter()
        .map(|&(g, s)| {
            let cfg = HeldOutConfig {
                calibration_fraction,
                seed,
                subsample: SubsampleConfig { seed: seeding::derive(seed, &[g as u64, s as u64]), ..grid[g] },
            };
            held_out_calibration(dataset, metrics, scope, &cfg)
        })
        .collect::<Result<_>>()?;
    let original_pairs = runs[0].original_pairs;
    let rows = runs
        .chunks(n_seeds)
        .zip(grid)
        .map(|(chunk, cfg)| {
            let outcomes: Vec<RunOutcome> = chunk
                .iter()
                .map(|r| {
                    let row = &r.rows[0];
                    RunOutcome {
                        tie_fraction: row.tie_fraction,
                        retained: row.retained_pairs as usize,
                        test_tie_fraction: row.test_tie_fraction,
                        per_metric: row.metrics.iter().map(|m| (m.epsilon, m.acc_eq)).collect(),
                    }
                })
                .collect();
            mean_rows(*cfg, &outcomes, metrics.len())
        })
        .collect();
    let mut result = SweepResult { metrics: metrics.to_vec(), original_pairs, rows, seeds_used: n_seeds };
    result.scale_epsilons();
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Closed-form least-squares line `y = intercept + slope · x`.
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::TooFewPoints(x.len()));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::ConstantX);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = sxy / sxx;
    Ok(OlsFit { slope, intercept: my - slope * mx, n: x.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBiasReport {
    pub metric: String,
    /// `(candidate length in characters, score)`.
    pub points: Vec<(u64, f64)>,
    pub fit: OlsFit,
}

impl LengthBiasReport {
    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("length,score\n");
        for (l, s) in &self.points {
            out.push_str(&format!("{l},{}\n", numfmt::fmt(*s)));
        }
        out
    }
}

/// Score against candidate length for every key where the metric, the human
/// score and the length are all present, with the least-squares fit.
/// `min_human` optionally drops entries whose human score is below it.
pub fn length_bias_report(dataset: &Dataset, metric: &str, min_human: Option<f64>) -> Result<LengthBiasReport> {
    let lengths = dataset.candidate_lengths.as_ref().ok_or(Error::MissingLengths)?;
    let scores = dataset.scores(metric)?;
    let aligned = align(scores, &dataset.human, None)?;
    let points: Vec<(u64, f64)> = aligned
        .keys
        .iter()
        .zip(&aligned.metric_scores)
        .zip(&aligned.human_scores)
        .filter(|(_, &h)| min_human.is_none_or(|t| h >= t))
        .filter_map(|((&k, &m), _)| lengths[k].map(|l| (l, m)))
        .collect();
    if points.is_empty() {
        return Err(Error::MissingLengths);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().map(|&(l, s)| (l as f64, s)).unzip();
    Ok(LengthBiasReport { metric: metric.to_string(), fit: ols_fit(&x, &y)?, points })
}

/// Symmetric matrix of grouped correlations between metrics (humans play no
/// role). Each off-diagonal entry is computed once and mirrored.
pub fn metric_correlation_matrix(
    dataset: &Dataset,
    metrics: &[String],
    statistic: Statistic,
    grouping: Grouping,
) -> Result<Vec<Vec<f64>>> {
    if metrics.len() < 2 {
        return Err(Error::InvalidConfig("need at least two metrics".into()));
    }
    let mats = resolve_metrics(dataset, metrics)?;
    let n = mats.len();
    let upper: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = upper
        .par_iter()
        .map(|&(i, j)| Ok(grouped_statistic(mats[i], mats[j], grouping, statistic)?.value))
        .collect::<Result<_>>()?;
    let mut out = vec![vec![1.0; n]; n];
    for (&(i, j), v) in upper.iter().zip(values) {
        out[i][j] = v;
        out[j][i] = v;
    }
    Ok(out)
}

pub fn matrix_to_csv(names: &[String], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("metric");
    for n in names {
        out.push(',');
        out.push_str(&csv_field(n));
    }
    out.push('\n');
    for (name, row) in names.iter().zip(matrix) {
        out.push_str(&csv_field(name));
        for v in row {
            out.push(',');
            out.push_str(&numfmt::fmt(*v));
        }
        out.push('\n');
    }
    out
}
