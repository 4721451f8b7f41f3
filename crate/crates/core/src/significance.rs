//! PERM-BOTH permutation tests, significance clusters and multi-task
//! rankings.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ScoreMatrix;
use crate::correlation::{grouped_statistic, sys_pairwise_accuracy, system_level_pearson, Grouping, Statistic};
use crate::error::{Error, Result};
use crate::numfmt;
use crate::seeding;
use crate::ties::{calibrated_acc_eq, PairScope};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermConfig {
    pub n_resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Worker threads for the resampling loop; 0 uses the global pool.
    /// Results do not depend on this value.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for PermConfig {
    fn default() -> Self {
        Self { n_resamples: 1000, alpha: 0.05, seed: 0, workers: 0 }
    }
}

impl PermConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_resamples == 0 {
            return Err(Error::InvalidConfig("n_resamples must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// A meta-evaluation statistic: scores one metric against the humans.
pub trait Evaluator: Sync {
    fn evaluate(&self, metric: &ScoreMatrix, human: &ScoreMatrix) -> Result<f64>;

    fn statistic(&self) -> Statistic;
}

/// Segment-level correlation under a grouping strategy.
#[derive(Debug, Clone, Copy)]
pub struct GroupedCorrelation {
    pub grouping: Grouping,
    pub statistic: Statistic,
}

impl Evaluator for GroupedCorrelation {
    fn evaluate(&self, metric: &ScoreMatrix, human: &ScoreMatrix) -> Result<f64> {
        Ok(grouped_statistic(metric, human, self.grouping, self.statistic)?.value)
    }

    fn statistic(&self) -> Statistic {
        self.statistic
    }
}

/// `acc_eq` with tie calibration on the evaluated pairs.
#[derive(Debug, Clone, Copy)]
pub struct CalibratedAccEq {
    pub scope: PairScope,
}

impl Evaluator for CalibratedAccEq {
    fn evaluate(&self, metric: &ScoreMatrix, human: &ScoreMatrix) -> Result<f64> {
        Ok(calibrated_acc_eq(metric, human, self.scope)?.acc_eq)
    }

    fn statistic(&self) -> Statistic {
        Statistic::AccEq
    }
}

type SystemMeans = indexmap::IndexMap<crate::SystemId, f64>;

/// Per-system means over the keys where both metric and human are present.
/// Systems without any such key are left out.
fn paired_system_scores(metric: &ScoreMatrix, human: &ScoreMatrix) -> Result<(SystemMeans, SystemMeans)> {
    let aligned = crate::corpus::align(metric, human, None)?;
    let keys = metric.keys();
    let mut sums = vec![(0.0, 0.0, 0usize); keys.n_systems()];
    for ((&k, &m), &h) in aligned.keys.iter().zip(&aligned.metric_scores).zip(&aligned.human_scores) {
        let s = &mut sums[keys.coords(k).1];
        s.0 += m;
        s.1 += h;
        s.2 += 1;
    }
    let mut ms = SystemMeans::new();
    let mut hs = SystemMeans::new();
    for (j, &(m, h, n)) in sums.iter().enumerate() {
        if n > 0 {
            ms.insert(keys.system(j).clone(), m / n as f64);
            hs.insert(keys.system(j).clone(), h / n as f64);
        }
    }
    Ok((ms, hs))
}

/// System-level pairwise ranking accuracy on mean scores.
#[derive(Debug, Clone, Copy)]
pub struct SystemAccuracy;

impl Evaluator for SystemAccuracy {
    fn evaluate(&self, metric: &ScoreMatrix, human: &ScoreMatrix) -> Result<f64> {
        let (m, h) = paired_system_scores(metric, human)?;
        Ok(sys_pairwise_accuracy(&m, &h)?.value)
    }

    fn statistic(&self) -> Statistic {
        Statistic::SysPairwiseAcc
    }
}

/// System-level Pearson correlation on mean scores.
#[derive(Debug, Clone, Copy)]
pub struct SystemPearson;

impl Evaluator for SystemPearson {
    fn evaluate(&self, metric: &ScoreMatrix, human: &ScoreMatrix) -> Result<f64> {
        let (m, h) = paired_system_scores(metric, human)?;
        Ok(system_level_pearson(&m, &h)?.value)
    }

    fn statistic(&self) -> Statistic {
        Statistic::Pearson
    }
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// One-sided PERM-BOTH p-value for "`metric_a` is better than `metric_b`".
///
/// Each resample swaps the two metrics' scores at every key where both are
/// present, independently with probability ½, and recomputes
/// `evaluate(a) − evaluate(b)`. The p-value is
/// `(1 + #{resampled ≥ observed}) / (1 + n_resamples)`.
pub fn perm_both_pvalue(
    metric_a: &ScoreMatrix,
    metric_b: &ScoreMatrix,
    human: &ScoreMatrix,
    evaluator: &dyn Evaluator,
    config: &PermConfig,
) -> Result<f64> {
    config.validate()?;
    if !metric_a.shares_keys(human) || !metric_b.shares_keys(human) {
        return Err(Error::InvalidDataset("metrics do not share the human key space".into()));
    }
    let swappable: Vec<usize> = (0..human.scores().len())
        .filter(|&k| metric_a.scores()[k].is_some() && metric_b.scores()[k].is_some())
        .collect();
    if !swappable.iter().any(|&k| human.scores()[k].is_some()) {
        return Err(Error::EmptyAlignment);
    }

    let observed = evaluator.evaluate(metric_a, human)? - evaluator.evaluate(metric_b, human)?;

    let resample = |r: usize| -> Result<bool> {
        let mut rng = seeding::rng(config.seed, &[r as u64]);
        let mut a = metric_a.scores().to_vec();
        let mut b = metric_b.scores().to_vec();
        for &k in &swappable {
            if rng.random_bool(0.5) {
                std::mem::swap(&mut a[k], &mut b[k]);
            }
        }
        let a = ScoreMatrix::new(metric_a.name(), human.keys().clone(), a)?;
        let b = ScoreMatrix::new(metric_b.name(), human.keys().clone(), b)?;
        let delta = evaluator.evaluate(&a, human)? - evaluator.evaluate(&b, human)?;
        Ok(delta >= observed)
    };

    let hits: Vec<bool> = with_workers(config.workers, || {
        (0..config.n_resamples).into_par_iter().map(resample).collect::<Result<Vec<_>>>()
    })??;
    let at_least = hits.iter().filter(|&&h| h).count();
    Ok((1 + at_least) as f64 / (1 + config.n_resamples) as f64)
}

/// `rank(m) = 1 + |{m' : value(m') > value(m) and p(m', m) < alpha}|`.
///
/// `pairwise_p` maps `(better, worse)` to the p-value of "better beats worse".
pub fn cluster_ranks(
    metrics: &[(String, f64)],
    pairwise_p: &HashMap<(String, String), f64>,
    alpha: f64,
) -> Result<BTreeMap<String, usize>> {
    let mut ranks = BTreeMap::new();
    for (name, value) in metrics {
        let mut rank = 1;
        for (other, other_value) in metrics {
            if other_value > value {
                let p = pairwise_p
                    .get(&(other.clone(), name.clone()))
                    .ok_or_else(|| Error::MissingPValue { better: other.clone(), worse: name.clone() })?;
                if *p < alpha {
                    rank += 1;
                }
            }
        }
        ranks.insert(name.clone(), rank);
    }
    Ok(ranks)
}

/// Per-metric results of one evaluation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub id: String,
    pub statistic: Statistic,
    /// Metric name to statistic value.
    pub values: BTreeMap<String, f64>,
    /// `(better, worse)` to p-value, for ordered pairs with
    /// `value(better) > value(worse)`.
    #[serde(with = "pair_map", default)]
    pub pvalues: HashMap<(String, String), f64>,
}

mod pair_map {
    use std::collections::HashMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        better: String,
        worse: String,
        p: f64,
    }

    pub fn serialize<S: Serializer>(map: &HashMap<(String, String), f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut entries: Vec<Entry> =
            map.iter().map(|((b, w), &p)| Entry { better: b.clone(), worse: w.clone(), p }).collect();
        entries.sort_by(|x, y| (&x.better, &x.worse).cmp(&(&y.better, &y.worse)));
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<HashMap<(String, String), f64>, D::Error> {
        Ok(Vec::<Entry>::deserialize(d)?.into_iter().map(|e| ((e.better, e.worse), e.p)).collect())
    }
}

impl TaskResult {
    /// Values ordered best-first, ties broken by name.
    pub fn sorted_values(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = self.values.iter().map(|(k, &x)| (k.clone(), x)).collect();
        sort_desc(&mut v);
        v
    }

    pub fn ranks(&self, alpha: f64) -> Result<BTreeMap<String, usize>> {
        cluster_ranks(&self.sorted_values(), &self.pvalues, alpha)
    }

    /// Value on the common `[0, 1]` scale used for averaging: signed
    /// correlations `r` become `(1 + r) / 2`, accuracies are unchanged.
    pub fn normalized(&self, metric: &str) -> Option<f64> {
        let v = *self.values.get(metric)?;
        Some(if self.statistic.is_signed() { (1.0 + v) / 2.0 } else { v })
    }
}

fn sort_desc(v: &mut [(String, f64)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Runs one task: evaluates every metric and every ordered pair of
/// (better, worse) metrics with the permutation test.
pub fn run_task(
    id: impl Into<String>,
    metrics: &[&ScoreMatrix],
    human: &ScoreMatrix,
    evaluator: &dyn Evaluator,
    config: &PermConfig,
) -> Result<TaskResult> {
    let mut values = BTreeMap::new();
    for m in metrics {
        values.insert(m.name().to_string(), evaluator.evaluate(m, human)?);
    }
    let mut pvalues = HashMap::new();
    for a in metrics {
        for b in metrics {
            if values[a.name()] > values[b.name()] {
                let p = perm_both_pvalue(a, b, human, evaluator, config)?;
                pvalues.insert((a.name().to_string(), b.name().to_string()), p);
            }
        }
    }
    Ok(TaskResult { id: id.into(), statistic: evaluator.statistic(), values, pvalues })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub metric: String,
    /// Raw statistic per task, in `task_list` order.
    pub task_values: Vec<f64>,
    /// Cluster rank within each task, in `task_list` order.
    pub task_ranks: Vec<usize>,
    pub average: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub task_list: Vec<String>,
    pub rows: Vec<RankingRow>,
}

impl RankingTable {
    /// TSV with columns `metric`, one per task, `avg`, `rank`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric");
        for t in &self.task_list {
            out.push('\t');
            out.push_str(t);
        }
        out.push_str("\tavg\trank\n");
        for row in &self.rows {
            out.push_str(&row.metric);
            for v in &row.task_values {
                out.push('\t');
                out.push_str(&numfmt::fmt(*v));
            }
            out.push_str(&format!("\t{}\t{}\n", numfmt::fmt(row.average), row.rank));
        }
        out
    }
}

/// Averages per-task values and assigns significance-cluster ranks on the
/// averages. When signed correlations are averaged together with accuracies,
/// the correlations are first mapped to `[0, 1]` (see
/// [`TaskResult::normalized`]); otherwise raw values are averaged.
///
/// Across tasks, `A` is significantly better than `B` when it is significant
/// in a strict majority of the tasks where `A`'s value exceeds `B`'s.
pub fn aggregate_ranking(tasks: &[TaskResult], weights: Option<&[f64]>, alpha: f64) -> Result<RankingTable> {
    let first = tasks.first().ok_or_else(|| Error::InconsistentMetricSets("no tasks".into()))?;
    let names: Vec<String> = first.values.keys().cloned().collect();
    for t in tasks {
        if t.values.len() != names.len() || !names.iter().all(|n| t.values.contains_key(n)) {
            return Err(Error::InconsistentMetricSets(format!("task {} has a different metric set", t.id)));
        }
    }
    let weights: Vec<f64> = match weights {
        Some(w) if w.len() != tasks.len() => {
            return Err(Error::InvalidConfig(format!("{} weights for {} tasks", w.len(), tasks.len())))
        }
        Some(w) if w.iter().any(|&x| x.is_nan() || x < 0.0) || w.iter().sum::<f64>() <= 0.0 => {
            return Err(Error::InvalidConfig("weights must be non-negative with a positive sum".into()))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; tasks.len()],
    };
    let weight_sum: f64 = weights.iter().sum();
    let mixed = tasks.iter().any(|t| t.statistic.is_signed()) && tasks.iter().any(|t| !t.statistic.is_signed());
    let value = |t: &TaskResult, n: &str| if mixed { t.normalized(n) } else { t.values.get(n).copied() };

    let mut averaged: Vec<(String, f64)> = names
        .iter()
        .map(|n| {
            let s: f64 = tasks.iter().zip(&weights).map(|(t, w)| w * value(t, n).expect("checked")).sum();
            (n.clone(), s / weight_sum)
        })
        .collect();
    sort_desc(&mut averaged);

    // Cross-task significance, encoded as p = 0 / 1 for cluster_ranks.
    let mut majority = HashMap::new();
    for (a, _) in &averaged {
        for (b, _) in &averaged {
            let mut better_in = 0;
            let mut significant_in = 0;
            for t in tasks {
                if t.values[a] > t.values[b] {
                    better_in += 1;
                    let p = t
                        .pvalues
                        .get(&(a.clone(), b.clone()))
                        .ok_or_else(|| Error::MissingPValue { better: a.clone(), worse: b.clone() })?;
                    if *p < alpha {
                        significant_in += 1;
                    }
                }
            }
            let significant = 2 * significant_in > better_in;
            majority.insert((a.clone(), b.clone()), if significant { 0.0 } else { 1.0 });
        }
    }
    let ranks = cluster_ranks(&averaged, &majority, alpha)?;
    let task_ranks: Vec<BTreeMap<String, usize>> = tasks.iter().map(|t| t.ranks(alpha)).collect::<Result<_>>()?;

    let rows = averaged
        .into_iter()
        .map(|(metric, average)| RankingRow {
            task_values: tasks.iter().map(|t| t.values[&metric]).collect(),
            task_ranks: task_ranks.iter().map(|r| r[&metric]).collect(),
            rank: ranks[&metric],
            average,
            metric,
        })
        .collect();
    Ok(RankingTable { task_list: tasks.iter().map(|t| t.id.clone()).collect(), rows })
}
