//! Pair classification, `acc_eq` and tie calibration.
//!
//! A pair of aligned points is *metric-tied* when `|m_i − m_j| ≤ ε` and
//! *human-tied* when `h_i == h_j` (exact equality, no tolerance). Tie
//! calibration picks the ε that maximizes `acc_eq` over the candidate set
//! `{0} ∪ {|m_i − m_j|}`, preferring the smallest ε on ties.

use serde::{Deserialize, Serialize};

use crate::corpus::{align, ScoreMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieCounts {
    /// Concordant.
    pub c: u64,
    /// Discordant.
    pub d: u64,
    /// Tied only in the human scores.
    pub t_h: u64,
    /// Tied only in the metric scores.
    pub t_m: u64,
    /// Tied in both.
    pub t_hm: u64,
}

impl TieCounts {
    pub fn total(&self) -> u64 {
        self.c + self.d + self.t_h + self.t_m + self.t_hm
    }

    /// `(C + T_hm) / total`.
    pub fn acc_eq(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::EmptyPairs),
            n => Ok((self.c + self.t_hm) as f64 / n as f64),
        }
    }

    /// Kendall τ_b from the counts; `None` when a radicand factor is 0.
    pub fn kendall_tau(&self) -> Option<f64> {
        let a = (self.c + self.d + self.t_h) as f64;
        let b = (self.c + self.d + self.t_m) as f64;
        if a == 0.0 || b == 0.0 {
            return None;
        }
        Some((self.c as f64 - self.d as f64) / (a * b).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Epsilon(f64);

impl Epsilon {
    pub const ZERO: Epsilon = Epsilon(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value >= 0.0 && !value.is_nan() {
            Ok(Self(value))
        } else {
            Err(Error::InvalidConfig(format!("epsilon must be non-negative, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// One unordered pair of aligned points. `a < b` are flat key indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub m: (f64, f64),
    pub h: (f64, f64),
}

impl Pair {
    #[inline]
    pub fn metric_gap(&self) -> f64 {
        (self.m.0 - self.m.1).abs()
    }

    #[inline]
    pub fn human_tied(&self) -> bool {
        self.h.0 == self.h.1
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn new(pairs: Vec<Pair>) -> Self {
        Self { pairs }
    }

    /// All unordered pairs of parallel score vectors, keys `0..n`.
    pub fn from_vectors(m: &[f64], h: &[f64]) -> Result<Self> {
        if m.len() != h.len() {
            return Err(Error::LengthMismatch(m.len(), h.len()));
        }
        let mut pairs = Vec::with_capacity(m.len() * m.len().saturating_sub(1) / 2);
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                pairs.push(Pair { a: i, b: j, m: (m[i], m[j]), h: (h[i], h[j]) });
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn human_tied_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().filter(|p| p.human_tied()).count() as f64 / self.pairs.len() as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScope {
    /// Only translations of the same source segment are compared.
    #[default]
    WithinSegment,
    /// Every pair of aligned points.
    All,
}

/// Materializes the pairs of aligned `(metric, human)` points.
pub fn enumerate_pairs(metric: &ScoreMatrix, human: &ScoreMatrix, scope: PairScope) -> Result<PairSet> {
    let aligned = align(metric, human, None)?;
    let keys = metric.keys();
    let n = aligned.len();
    let mut pairs = Vec::new();
    let mut start = 0;
    while start < n {
        // aligned keys are segment-major, so each segment is a contiguous run
        let end = match scope {
            PairScope::All => n,
            PairScope::WithinSegment => {
                let seg = keys.coords(aligned.keys[start]).0;
                start + aligned.keys[start..].iter().take_while(|&&k| keys.coords(k).0 == seg).count()
            }
        };
        for i in start..end {
            for j in i + 1..end {
                pairs.push(Pair {
                    a: aligned.keys[i],
                    b: aligned.keys[j],
                    m: (aligned.metric_scores[i], aligned.metric_scores[j]),
                    h: (aligned.human_scores[i], aligned.human_scores[j]),
                });
            }
        }
        start = end;
    }
    Ok(PairSet { pairs })
}

/// Classifies every pair exactly once.
pub fn count_pairs(pairs: &PairSet, epsilon: Epsilon) -> TieCounts {
    let eps = epsilon.value();
    let mut t = TieCounts::default();
    for p in &pairs.pairs {
        let metric_tied = (p.m.0 - p.m.1).abs() <= eps;
        let human_tied = p.h.0 == p.h.1;
        match (metric_tied, human_tied) {
            (true, true) => t.t_hm += 1,
            (true, false) => t.t_m += 1,
            (false, true) => t.t_h += 1,
            (false, false) => {
                if (p.m.0 > p.m.1) == (p.h.0 > p.h.1) {
                    t.c += 1;
                } else {
                    t.d += 1;
                }
            }
        }
    }
    t
}

pub fn acc_eq_at(pairs: &PairSet, epsilon: Epsilon) -> Result<f64> {
    count_pairs(pairs, epsilon).acc_eq()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub epsilon: Epsilon,
    pub acc_eq: f64,
    pub counts_at_epsilon: TieCounts,
    pub candidates_evaluated: usize,
}

/// Tie calibration by a single sweep over the pairs sorted by metric gap.
///
/// At threshold ε the correct pairs are the human-tied pairs with gap ≤ ε
/// plus the concordant untied pairs with gap > ε, so raising ε past a gap
/// adds one for a human-tied pair and removes one for a concordant pair.
pub fn calibrate_epsilon(pairs: &PairSet) -> Result<CalibrationResult> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    // (gap, +1 / -1 / 0 delta when the pair becomes metric-tied)
    let mut events: Vec<(f64, i64)> = Vec::with_capacity(pairs.len());
    let mut correct: i64 = 0;
    for p in &pairs.pairs {
        let gap = p.metric_gap();
        let delta = if p.human_tied() {
            1
        } else if p.m.0 != p.m.1 && (p.m.0 > p.m.1) == (p.h.0 > p.h.1) {
            // concordant while untied; gap > 0 here
            correct += 1;
            -1
        } else {
            0
        };
        events.push((gap, delta));
    }
    events.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let total = pairs.len() as f64;
    let mut best_eps = 0.0;
    let mut best_correct = i64::MIN;
    let mut candidates = 0usize;
    let mut i = 0;
    if events[0].0 > 0.0 {
        // ε = 0 is not among the gaps: nothing is metric-tied yet.
        candidates += 1;
        best_correct = correct;
    }
    while i < events.len() {
        let gap = events[i].0;
        while i < events.len() && events[i].0 == gap {
            correct += events[i].1;
            i += 1;
        }
        candidates += 1;
        if correct > best_correct {
            best_correct = correct;
            best_eps = gap;
        }
    }

    let epsilon = Epsilon(best_eps);
    Ok(CalibrationResult {
        epsilon,
        acc_eq: best_correct as f64 / total,
        counts_at_epsilon: count_pairs(pairs, epsilon),
        candidates_evaluated: candidates,
    })
}

/// Reference calibration: recounts every pair at every candidate ε.
/// `O(P²)`; meant for checking [`calibrate_epsilon`] on small inputs.
pub fn calibrate_epsilon_bruteforce(pairs: &PairSet) -> Result<CalibrationResult> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let mut candidates: Vec<f64> =
        std::iter::once(0.0).chain(pairs.pairs.iter().map(|p| (p.m.0 - p.m.1).abs())).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite gaps"));
    candidates.dedup();

    let mut best: Option<(f64, f64, TieCounts)> = None;
    for &eps in &candidates {
        let counts = count_pairs(pairs, Epsilon(eps));
        let acc = counts.acc_eq()?;
        if best.is_none_or(|(_, best_acc, _)| acc > best_acc) {
            best = Some((eps, acc, counts));
        }
    }
    let (eps, acc, counts) = best.expect("at least one candidate");
    Ok(CalibrationResult {
        epsilon: Epsilon(eps),
        acc_eq: acc,
        counts_at_epsilon: counts,
        candidates_evaluated: candidates.len(),
    })
}

/// Calibrates on `metric` vs `human` pairs in one call.
pub fn calibrated_acc_eq(metric: &ScoreMatrix, human: &ScoreMatrix, scope: PairScope) -> Result<CalibrationResult> {
    calibrate_epsilon(&enumerate_pairs(metric, human, scope)?)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::corpus::KeySpace;

    fn worked_example() -> PairSet {
        PairSet::from_vectors(&[0.6, 0.5, 0.4, 0.4], &[5., 3., 5., 5.]).unwrap()
    }

    #[test]
    fn worked_example_counts() {
        let pairs = worked_example();
        let c0 = count_pairs(&pairs, Epsilon::ZERO);
        assert_eq!(c0, TieCounts { c: 1, d: 2, t_h: 2, t_m: 0, t_hm: 1 });
        assert_abs_diff_eq!(c0.acc_eq().unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c0.kendall_tau().unwrap(), -0.258, epsilon = 5e-4);

        let c2 = count_pairs(&pairs, Epsilon::new(0.2).unwrap());
        assert_eq!(c2, TieCounts { c: 0, d: 0, t_h: 0, t_m: 3, t_hm: 3 });
        assert_eq!(acc_eq_at(&pairs, Epsilon::new(0.2).unwrap()).unwrap(), 0.5);

        let big = count_pairs(&pairs, Epsilon::new(10.0).unwrap());
        assert_eq!((big.c, big.d, big.t_h), (0, 0, 0));
    }

    #[test]
    fn worked_example_calibration() {
        let pairs = worked_example();
        for r in [calibrate_epsilon(&pairs).unwrap(), calibrate_epsilon_bruteforce(&pairs).unwrap()] {
            assert_abs_diff_eq!(r.epsilon.value(), 0.2, epsilon = 1e-12);
            assert_eq!(r.acc_eq, 0.5);
            assert_eq!(r.candidates_evaluated, 3);
        }
    }

    #[test]
    fn calibration_edge_cases() {
        let concordant = PairSet::from_vectors(&[1., 2., 3., 4.], &[10., 20., 30., 40.]).unwrap();
        let r = calibrate_epsilon(&concordant).unwrap();
        assert_eq!((r.epsilon.value(), r.acc_eq), (0.0, 1.0));

        let flat = PairSet::from_vectors(&[0.3; 4], &[1.; 4]).unwrap();
        let r = calibrate_epsilon(&flat).unwrap();
        assert_eq!((r.epsilon.value(), r.acc_eq), (0.0, 1.0));

        let single = PairSet::from_vectors(&[0.5, 0.5], &[2., 2.]).unwrap();
        let r = calibrate_epsilon_bruteforce(&single).unwrap();
        assert_eq!((r.epsilon.value(), r.acc_eq), (0.0, 1.0));

        assert!(matches!(calibrate_epsilon(&PairSet::default()), Err(Error::EmptyPairs)));
        assert!(matches!(calibrate_epsilon_bruteforce(&PairSet::default()), Err(Error::EmptyPairs)));
        assert!(matches!(acc_eq_at(&PairSet::default(), Epsilon::ZERO), Err(Error::EmptyPairs)));
        assert!(Epsilon::new(-1.0).is_err());
    }

    #[test]
    fn pair_scopes() {
        let keys = Arc::new(KeySpace::synthetic(2, 3));
        let m = ScoreMatrix::from_grid("m", keys.clone(), &[vec![1., 2., 3.], vec![4., 5., 6.]]).unwrap();
        assert_eq!(enumerate_pairs(&m, &m, PairScope::WithinSegment).unwrap().len(), 6);
        assert_eq!(enumerate_pairs(&m, &m, PairScope::All).unwrap().len(), 15);

        let one = Arc::new(KeySpace::synthetic(1, 4));
        let m = ScoreMatrix::from_grid("m", one, &[vec![1., 2., 3., 4.]]).unwrap();
        assert_eq!(enumerate_pairs(&m, &m, PairScope::WithinSegment).unwrap().len(), 6);
        assert_eq!(enumerate_pairs(&m, &m, PairScope::All).unwrap().len(), 6);

        let holes = ScoreMatrix::new("m", keys, vec![Some(1.), None, Some(3.), Some(4.), Some(5.), None]).unwrap();
        let pairs = enumerate_pairs(&holes, &holes, PairScope::WithinSegment).unwrap();
        assert_eq!(pairs.pairs.iter().map(|p| (p.a, p.b)).collect::<Vec<_>>(), vec![(0, 2), (3, 4)]);
    }
}
