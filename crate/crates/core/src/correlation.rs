//! Pearson and Kendall τ_b correlations, grouping strategies and
//! system-level statistics.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{align, ScoreMatrix, SystemId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    /// All aligned points pooled into one correlation.
    None,
    /// One correlation per source segment, averaged.
    Segment,
    /// One correlation per system, averaged.
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Pearson,
    KendallTau,
    AccEq,
    SysPairwiseAcc,
}

impl Statistic {
    /// Whether the statistic ranges over `[-1, 1]` (as opposed to `[0, 1]`).
    pub fn is_signed(self) -> bool {
        matches!(self, Statistic::Pearson | Statistic::KendallTau)
    }
}

/// Outcome of a raw correlation: a number, or undefined because one of the
/// inputs has no variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Value(f64),
    ZeroVariance,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(v),
            Correlation::ZeroVariance => None,
        }
    }

    /// Maps an undefined correlation to 0.
    pub fn or_zero(self) -> f64 {
        self.value().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationValue {
    pub statistic: Statistic,
    pub value: f64,
    /// Groups that contributed to the average.
    pub n_groups: usize,
    /// Aligned points across contributing groups.
    pub n_points: usize,
    /// Contributing groups whose correlation was undefined and counted as 0.
    pub n_zero_variance: usize,
    /// Groups dropped for having fewer than two aligned points.
    pub n_dropped: usize,
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::TooFewPoints(x.len()));
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_lengths(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Ok(Correlation::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation::ZeroVariance);
    }
    Ok(Correlation::Value((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

fn tie_pairs(run: u64) -> u64 {
    run * run.saturating_sub(1) / 2
}

/// Sum of `t(t-1)/2` over runs of equal consecutive values.
fn tied_pairs_in_runs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += tie_pairs(run);
            run = 1;
        }
    }
    total + tie_pairs(run)
}

/// Counts inversions of `v` while merge-sorting it in place.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall τ_b, `(C − D) / sqrt((C + D + T_h)(C + D + T_m))`, in
/// `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(m: &[f64], h: &[f64]) -> Result<Correlation> {
    check_lengths(m, h)?;
    let n = m.len() as u64;
    let total = n * (n - 1) / 2;

    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by(|&a, &b| m[a].total_cmp(&m[b]).then(h[a].total_cmp(&h[b])));

    let ms: Vec<f64> = order.iter().map(|&i| m[i]).collect();
    let joint: Vec<(f64, f64)> = order.iter().map(|&i| (m[i], h[i])).collect();
    let metric_ties = tied_pairs_in_runs(&ms); // T_m + T_hm
    let joint_ties = tied_pairs_in_runs(&joint); // T_hm

    let mut hs: Vec<f64> = order.iter().map(|&i| h[i]).collect();
    let mut buf = vec![0.0; hs.len()];
    let discordant = merge_count(&mut hs, &mut buf);
    let human_ties = tied_pairs_in_runs(&hs); // T_h + T_hm

    let not_metric_tied = total - metric_ties; // C + D + T_h
    let not_human_tied = total - human_ties; // C + D + T_m
    if not_metric_tied == 0 || not_human_tied == 0 {
        return Ok(Correlation::ZeroVariance);
    }
    // C - D = total - metric_ties - human_ties + joint_ties - 2D
    let c_minus_d =
        total as i128 - metric_ties as i128 - human_ties as i128 + joint_ties as i128 - 2 * discordant as i128;
    let tau = c_minus_d as f64 / ((not_metric_tied as f64) * (not_human_tied as f64)).sqrt();
    Ok(Correlation::Value(tau.clamp(-1.0, 1.0)))
}

fn raw(statistic: Statistic, m: &[f64], h: &[f64]) -> Result<Correlation> {
    match statistic {
        Statistic::Pearson => pearson(m, h),
        Statistic::KendallTau => kendall_tau(m, h),
        other => Err(Error::InvalidConfig(format!("{other:?} is not a correlation statistic"))),
    }
}

/// Correlation between `metric` and `human` under a grouping strategy.
///
/// Groups with fewer than two aligned points are dropped; groups whose
/// correlation is undefined (zero variance) contribute 0. The average is
/// unweighted and accumulated in canonical group order.
pub fn grouped_statistic(
    metric: &ScoreMatrix,
    human: &ScoreMatrix,
    grouping: Grouping,
    statistic: Statistic,
) -> Result<CorrelationValue> {
    let aligned = align(metric, human, None)?;
    let keys = metric.keys();

    let mut groups: Vec<(Vec<f64>, Vec<f64>)> = match grouping {
        Grouping::None => vec![(aligned.metric_scores.clone(), aligned.human_scores.clone())],
        Grouping::Segment | Grouping::System => {
            let n_groups = if grouping == Grouping::Segment { keys.n_segments() } else { keys.n_systems() };
            let mut g = vec![(Vec::new(), Vec::new()); n_groups];
            for ((&k, &m), &h) in aligned.keys.iter().zip(&aligned.metric_scores).zip(&aligned.human_scores) {
                let (seg, sys) = keys.coords(k);
                let idx = if grouping == Grouping::Segment { seg } else { sys };
                g[idx].0.push(m);
                g[idx].1.push(h);
            }
            g
        }
    };

    let total_groups = groups.len();
    groups.retain(|(m, _)| m.len() >= 2);
    let n_dropped = total_groups - groups.len();
    if groups.is_empty() {
        return Err(Error::NoValidGroups);
    }

    let mut sum = 0.0;
    let mut n_points = 0;
    let mut n_zero_variance = 0;
    for (m, h) in &groups {
        n_points += m.len();
        match raw(statistic, m, h)? {
            Correlation::Value(v) => sum += v,
            Correlation::ZeroVariance => n_zero_variance += 1,
        }
    }
    Ok(CorrelationValue {
        statistic,
        value: sum / groups.len() as f64,
        n_groups: groups.len(),
        n_points,
        n_zero_variance,
        n_dropped,
    })
}

fn common_systems<'a>(
    metric_sys: &'a IndexMap<SystemId, f64>,
    human_sys: &'a IndexMap<SystemId, f64>,
) -> Vec<(f64, f64)> {
    metric_sys.iter().filter_map(|(s, &m)| human_sys.get(s).map(|&h| (m, h))).collect()
}

/// Fraction of system pairs, among pairs not tied in the human scores, that
/// the metric orders the same way as the humans. Metric ties count as wrong.
pub fn sys_pairwise_accuracy(
    metric_sys: &IndexMap<SystemId, f64>,
    human_sys: &IndexMap<SystemId, f64>,
) -> Result<CorrelationValue> {
    let both = common_systems(metric_sys, human_sys);
    if both.len() < 2 {
        return Err(Error::TooFewSystems(both.len()));
    }
    let (mut correct, mut considered) = (0usize, 0usize);
    for (i, &(mi, hi)) in both.iter().enumerate() {
        for &(mj, hj) in &both[i + 1..] {
            if hi == hj {
                continue;
            }
            considered += 1;
            if mi != mj && (mi > mj) == (hi > hj) {
                correct += 1;
            }
        }
    }
    if considered == 0 {
        return Err(Error::NoUntiedPairs);
    }
    Ok(CorrelationValue {
        statistic: Statistic::SysPairwiseAcc,
        value: correct as f64 / considered as f64,
        n_groups: 1,
        n_points: both.len(),
        n_zero_variance: 0,
        n_dropped: 0,
    })
}

/// Pearson correlation of per-system scores. Undefined correlations are
/// reported as [`Error::ZeroVariance`].
pub fn system_level_pearson(
    metric_sys: &IndexMap<SystemId, f64>,
    human_sys: &IndexMap<SystemId, f64>,
) -> Result<CorrelationValue> {
    let both = common_systems(metric_sys, human_sys);
    let (m, h): (Vec<f64>, Vec<f64>) = both.into_iter().unzip();
    match pearson(&m, &h)? {
        Correlation::Value(value) => Ok(CorrelationValue {
            statistic: Statistic::Pearson,
            value,
            n_groups: 1,
            n_points: m.len(),
            n_zero_variance: 0,
            n_dropped: 0,
        }),
        Correlation::ZeroVariance => Err(Error::ZeroVariance),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::corpus::{KeySpace, ScoreMatrix};

    fn v(c: Correlation) -> f64 {
        c.value().expect("defined correlation")
    }

    #[test]
    fn pearson_examples() {
        assert_abs_diff_eq!(v(pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap()), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v(pearson(&[1., 2., 3.], &[-1., -2., -3.]).unwrap()), -1.0, epsilon = 1e-12);
        assert_eq!(pearson(&[1., 2., 3.], &[5., 5., 5.]).unwrap(), Correlation::ZeroVariance);
        assert_eq!(pearson(&[0.1; 7], &[1., 2., 3., 4., 5., 6., 7.]).unwrap(), Correlation::ZeroVariance);
        assert!(matches!(pearson(&[1.], &[1.]), Err(Error::TooFewPoints(1))));
        assert!(matches!(pearson(&[1., 2.], &[1.]), Err(Error::LengthMismatch(2, 1))));
    }

    #[test]
    fn kendall_worked_example() {
        let tau = v(kendall_tau(&[0.6, 0.5, 0.4, 0.4], &[5., 3., 5., 5.]).unwrap());
        assert_abs_diff_eq!(tau, -1.0 / 15f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(tau, -0.258, epsilon = 5e-4);
    }

    #[test]
    fn kendall_extremes() {
        assert_eq!(v(kendall_tau(&[1., 2., 3., 4.], &[1., 2., 3., 4.]).unwrap()), 1.0);
        assert_eq!(v(kendall_tau(&[1., 2., 3.], &[3., 2., 1.]).unwrap()), -1.0);
        assert_eq!(kendall_tau(&[1., 1., 1.], &[3., 2., 1.]).unwrap(), Correlation::ZeroVariance);
        assert!(matches!(kendall_tau(&[1.], &[1.]), Err(Error::TooFewPoints(1))));
    }

    fn matrix(name: &str, n_seg: usize, n_sys: usize, grid: &[Vec<f64>]) -> ScoreMatrix {
        ScoreMatrix::from_grid(name, Arc::new(KeySpace::synthetic(n_seg, n_sys)), grid).unwrap()
    }

    #[test]
    fn segment_constant_metric_scores_zero_under_segment_grouping() {
        let human = matrix("human", 3, 3, &[vec![1., 2., 3.], vec![4., 9., 5.], vec![0., 1., 1.]]);
        let metric = matrix("m", 3, 3, &[vec![2.; 3], vec![6.; 3], vec![0.5; 3]]);
        let r = grouped_statistic(&metric, &human, Grouping::Segment, Statistic::Pearson).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.n_groups, 3);
        assert_eq!(r.n_zero_variance, 3);
        let pooled = grouped_statistic(&metric, &human, Grouping::None, Statistic::Pearson).unwrap();
        assert!(pooled.value > 0.0);
    }

    #[test]
    fn single_segment_identity() {
        let h = matrix("human", 1, 2, &[vec![1., 2.]]);
        let r = grouped_statistic(&h, &h, Grouping::Segment, Statistic::Pearson).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-12);
        assert_eq!(r.n_groups, 1);
    }

    #[test]
    fn small_groups_are_dropped() {
        let keys = Arc::new(KeySpace::synthetic(2, 2));
        let human = ScoreMatrix::new("human", keys.clone(), vec![Some(1.), Some(2.), Some(3.), None]).unwrap();
        let metric = ScoreMatrix::new("m", keys, vec![Some(1.), Some(3.), Some(2.), Some(5.)]).unwrap();
        let r = grouped_statistic(&metric, &human, Grouping::Segment, Statistic::Pearson).unwrap();
        assert_eq!((r.n_groups, r.n_dropped, r.n_points), (1, 1, 2));
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-12);

        let lone = ScoreMatrix::new("m", human.keys().clone(), vec![Some(1.), None, Some(2.), None]).unwrap();
        assert!(matches!(
            grouped_statistic(&lone, &human, Grouping::Segment, Statistic::Pearson),
            Err(Error::NoValidGroups)
        ));
    }

    #[test]
    fn none_grouping_equals_pooled_pearson() {
        // 3 × 4 scores from a fixed linear-congruential stream.
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let hg: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| next()).collect()).collect();
        let mg: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| next()).collect()).collect();
        let h = matrix("human", 3, 4, &hg);
        let m = matrix("m", 3, 4, &mg);
        let grouped = grouped_statistic(&m, &h, Grouping::None, Statistic::Pearson).unwrap();
        let flat_m: Vec<f64> = mg.concat();
        let flat_h: Vec<f64> = hg.concat();
        assert_eq!(grouped.value, v(pearson(&flat_m, &flat_h).unwrap()));
        assert_eq!(grouped.n_points, 12);
    }

    fn sys(vals: &[f64]) -> IndexMap<SystemId, f64> {
        vals.iter().enumerate().map(|(i, &x)| (SystemId::new(format!("sys{i}")).unwrap(), x)).collect()
    }

    #[test]
    fn system_accuracy_examples() {
        let h = sys(&[1., 2., 3.]);
        assert_eq!(sys_pairwise_accuracy(&sys(&[10., 20., 30.]), &h).unwrap().value, 1.0);
        assert_eq!(sys_pairwise_accuracy(&sys(&[3., 2., 1.]), &h).unwrap().value, 0.0);
        let r = sys_pairwise_accuracy(&sys(&[1., 2., 4., 3.]), &sys(&[1., 2., 3., 4.])).unwrap();
        assert_eq!(r.value, 5.0 / 6.0);
        // metric tie counts as wrong, human tie is excluded
        let r = sys_pairwise_accuracy(&sys(&[1., 1., 2.]), &sys(&[1., 2., 2.])).unwrap();
        assert_eq!(r.value, 0.5);
        assert!(matches!(sys_pairwise_accuracy(&sys(&[1.]), &sys(&[1.])), Err(Error::TooFewSystems(1))));
        assert!(matches!(sys_pairwise_accuracy(&sys(&[1., 2.]), &sys(&[3., 3.])), Err(Error::NoUntiedPairs)));
    }

    #[test]
    fn system_pearson_examples() {
        let h = sys(&[1., 2., 3.]);
        assert_abs_diff_eq!(system_level_pearson(&h, &h).unwrap().value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(system_level_pearson(&sys(&[3., 5., 7.]), &h).unwrap().value, 1.0, epsilon = 1e-12);
        assert!(matches!(system_level_pearson(&sys(&[4., 4., 4.]), &h), Err(Error::ZeroVariance)));
    }
}
