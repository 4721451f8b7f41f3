//! Synthetic probe metrics.
//!
//! * [`segment_constant_scores`] scores every translation of a segment with
//!   the same value derived from that segment's human scores. It carries
//!   per-segment difficulty but nothing about individual translations.
//! * [`perturb_discrete`] adds small truncated Gaussian noise to a discrete
//!   metric, breaking its ties without ever reordering different levels.
//! * [`discretize`] snaps scores to a fixed set of levels.

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::corpus::ScoreMatrix;
use crate::error::{Error, Result};
use crate::seeding;

pub const SEGMENT_CONSTANT_NAME: &str = "sentinel_seg_const";

pub fn perturbed_name(metric: &str) -> String {
    format!("perturbed:{metric}")
}

pub fn discretized_name(metric: &str) -> String {
    format!("discretized:{metric}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reducer {
    Mean,
    Median,
}

fn reduce(values: &mut [f64], reducer: Reducer) -> f64 {
    match reducer {
        Reducer::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Reducer::Median => {
            values.sort_by(f64::total_cmp);
            let n = values.len();
            if n % 2 == 1 {
                values[n / 2]
            } else {
                (values[n / 2 - 1] + values[n / 2]) / 2.0
            }
        }
    }
}

/// Every entry of a segment gets the reduced human score of that segment.
pub fn segment_constant_scores(human: &ScoreMatrix, reducer: Reducer) -> Result<ScoreMatrix> {
    let keys = human.keys();
    let mut scores = Vec::with_capacity(keys.len());
    for i in 0..keys.n_segments() {
        let mut present: Vec<f64> = (0..keys.n_systems()).filter_map(|j| human.get(i, j)).collect();
        if present.is_empty() {
            return Err(Error::EmptySegment(keys.segment(i).to_string()));
        }
        let v = reduce(&mut present, reducer);
        scores.extend(std::iter::repeat_n(Some(v), keys.n_systems()));
    }
    ScoreMatrix::new(SEGMENT_CONSTANT_NAME, keys.clone(), scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Variance of the Gaussian noise (standard deviation is its root).
    pub variance: f64,
    pub seed: u64,
    /// Noise magnitude is kept strictly below this fraction of the smallest
    /// gap between distinct score levels.
    pub truncation_factor: f64,
    /// Upper bound on the number of distinct values of a "discrete" metric.
    pub max_levels: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { variance: 1e-4, seed: 0, truncation_factor: 0.4, max_levels: 1000 }
    }
}

/// Rejection attempts before falling back to a uniform draw on the
/// truncation interval. Only reached when the bound is tiny compared to the
/// standard deviation, where the truncated normal is practically uniform.
const MAX_REJECTIONS: usize = 10_000;

/// Adds independent truncated Gaussian noise to every present score.
///
/// The noise for entry `(segment i, system j)` comes from a stream seeded by
/// `(seed, i, j)`. Because `|noise| < truncation_factor × min_gap` with
/// `truncation_factor < 0.5`, entries from different levels keep their order.
pub fn perturb_discrete(metric: &ScoreMatrix, config: &PerturbConfig) -> Result<ScoreMatrix> {
    if !(config.variance > 0.0 && config.variance.is_finite()) {
        return Err(Error::InvalidConfig(format!("variance must be positive, got {}", config.variance)));
    }
    if !(config.truncation_factor > 0.0 && config.truncation_factor < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "truncation factor must be in (0, 0.5), got {}",
            config.truncation_factor
        )));
    }
    let mut levels: Vec<f64> = metric.scores().iter().flatten().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() > config.max_levels {
        return Err(Error::NotDiscrete { found: levels.len(), cap: config.max_levels });
    }
    let min_gap = levels.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(min_gap > 0.0 && min_gap.is_finite()) {
        return Err(Error::ZeroGap);
    }
    let bound = config.truncation_factor * min_gap;
    let normal = Normal::new(0.0, config.variance.sqrt()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let uniform = Uniform::new(-bound, bound).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let keys = metric.keys();
    let scores = metric
        .scores()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            s.map(|v| {
                let (i, j) = keys.coords(k);
                let mut rng = seeding::rng(config.seed, &[i as u64, j as u64]);
                let noise = (0..MAX_REJECTIONS)
                    .map(|_| normal.sample(&mut rng))
                    .find(|x| x.abs() < bound)
                    .unwrap_or_else(|| uniform.sample(&mut rng));
                v + noise
            })
        })
        .collect();
    ScoreMatrix::new(perturbed_name(metric.name()), keys.clone(), scores)
}

/// Strictly increasing score levels with at least two entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLevels(Vec<f64>);

impl DiscreteLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidConfig("need at least two levels".into()));
        }
        if levels.iter().any(|l| !l.is_finite()) || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("levels must be finite and strictly increasing".into()));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    /// Nearest level; exact midpoints go to the lower level.
    pub fn snap(&self, x: f64) -> f64 {
        let l = &self.0;
        let idx = l.partition_point(|&v| v < x);
        if idx == 0 {
            return l[0];
        }
        if idx == l.len() {
            return l[l.len() - 1];
        }
        let (lo, hi) = (l[idx - 1], l[idx]);
        if x - lo <= hi - x {
            lo
        } else {
            hi
        }
    }
}

pub fn discretize(metric: &ScoreMatrix, levels: &DiscreteLevels) -> ScoreMatrix {
    metric.map(discretized_name(metric.name()), |x| levels.snap(x)).expect("levels are finite")
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::KeySpace;
    use crate::correlation::{grouped_statistic, Grouping, Statistic};

    fn grid(n_seg: usize, n_sys: usize, f: impl Fn(usize, usize) -> f64) -> ScoreMatrix {
        let keys = Arc::new(KeySpace::synthetic(n_seg, n_sys));
        let g: Vec<Vec<f64>> = (0..n_seg).map(|i| (0..n_sys).map(|j| f(i, j)).collect()).collect();
        ScoreMatrix::from_grid("m", keys, &g).unwrap()
    }

    #[test]
    fn segment_constant_mean_and_median() {
        let human = grid(1, 2, |_, j| [2.0, 4.0][j]);
        let s = segment_constant_scores(&human, Reducer::Mean).unwrap();
        assert_eq!(s.scores(), &[Some(3.0), Some(3.0)]);
        assert_eq!(s.name(), SEGMENT_CONSTANT_NAME);

        let human = grid(1, 3, |_, j| [5.0, 1.0, 2.0][j]);
        let s = segment_constant_scores(&human, Reducer::Median).unwrap();
        assert_eq!(s.scores(), &[Some(2.0); 3]);

        let keys = Arc::new(KeySpace::synthetic(2, 1));
        let holey = ScoreMatrix::new("human", keys, vec![Some(1.0), None]).unwrap();
        assert!(matches!(segment_constant_scores(&holey, Reducer::Mean), Err(Error::EmptySegment(_))));
    }

    #[test]
    fn segment_constant_correlates_only_across_segments() {
        // 10 segments with distinct difficulty, systems vary within a segment
        let human = grid(10, 4, |i, j| -(i as f64) * 3.0 + [0.5, -0.25, 1.0, 0.0][(i + j) % 4]);
        let sentinel = segment_constant_scores(&human, Reducer::Mean).unwrap();
        let seg = grouped_statistic(&sentinel, &human, Grouping::Segment, Statistic::Pearson).unwrap();
        assert_eq!(seg.value, 0.0);
        let none = grouped_statistic(&sentinel, &human, Grouping::None, Statistic::Pearson).unwrap();
        assert!(none.value > 0.9, "{}", none.value);
    }

    #[test]
    fn perturbation_keeps_cross_level_order() {
        let m = grid(10, 10, |i, j| [0.0, 5.0, 10.0][(i * 7 + j * 3) % 3]);
        let p = perturb_discrete(&m, &PerturbConfig { seed: 3, ..Default::default() }).unwrap();
        let (orig, pert) = (m.scores(), p.scores());
        for a in 0..orig.len() {
            for b in 0..orig.len() {
                let (oa, ob) = (orig[a].unwrap(), orig[b].unwrap());
                let (pa, pb) = (pert[a].unwrap(), pert[b].unwrap());
                if oa > ob {
                    assert!(pa > pb);
                } else if oa == ob && a != b {
                    assert_ne!(pa, pb);
                }
            }
        }
        assert_eq!(p.name(), "perturbed:m");
    }

    #[test]
    fn perturbation_is_seeded() {
        let m = grid(10, 10, |i, j| ((i + j) % 4) as f64);
        let cfg = PerturbConfig { seed: 11, ..Default::default() };
        assert_eq!(perturb_discrete(&m, &cfg).unwrap(), perturb_discrete(&m, &cfg).unwrap());
        let other = perturb_discrete(&m, &PerturbConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(perturb_discrete(&m, &cfg).unwrap().scores(), other.scores());
    }

    #[test]
    fn perturbation_errors() {
        let flat = grid(2, 2, |_, _| 1.0);
        assert!(matches!(perturb_discrete(&flat, &PerturbConfig::default()), Err(Error::ZeroGap)));
        let many = grid(10, 10, |i, j| (i * 10 + j) as f64);
        let cfg = PerturbConfig { max_levels: 50, ..Default::default() };
        assert!(matches!(perturb_discrete(&many, &cfg), Err(Error::NotDiscrete { found: 100, cap: 50 })));
        let bad = PerturbConfig { truncation_factor: 0.5, ..Default::default() };
        assert!(perturb_discrete(&many, &bad).is_err());
    }

    #[test]
    fn tiny_gaps_fall_back_to_uniform_noise() {
        let m = grid(2, 2, |i, j| ((i + j) % 2) as f64 * 1e-9);
        let p = perturb_discrete(&m, &PerturbConfig::default()).unwrap();
        for (o, q) in m.scores().iter().zip(p.scores()) {
            assert!((o.unwrap() - q.unwrap()).abs() < 0.4e-9);
        }
    }

    #[test]
    fn discretize_examples() {
        let levels = DiscreteLevels::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(levels.snap(0.7), 1.0);
        assert_eq!(levels.snap(0.5), 0.0);
        assert_eq!(levels.snap(-3.0), 0.0);
        assert_eq!(levels.snap(3.0), 1.0);
        assert!(DiscreteLevels::new(vec![1.0]).is_err());
        assert!(DiscreteLevels::new(vec![1.0, 1.0]).is_err());
        let m = grid(1, 3, |_, j| [0.2, 0.5, 0.9][j]);
        assert_eq!(discretize(&m, &levels).scores(), &[Some(0.0), Some(0.0), Some(1.0)]);
    }
}
