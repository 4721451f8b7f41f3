//! Data model and TSV ingestion for human judgments and metric scores.
//!
//! A dataset lives in one directory:
//!
//! ```text
//! human.tsv            segment_id  system_id  score     (score may be NA)
//! metrics/<name>.tsv   segment_id  system_id  score
//! lengths.tsv          segment_id  system_id  chars     (optional)
//! flags.tsv            metric_name reference_free baseline sentinel (optional, 0/1)
//! ```
//!
//! Segments and systems are ordered by first appearance in `human.tsv`; every
//! matrix is stored densely in segment-major, system-minor order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token marking an absent score in the TSV files.
pub const MISSING_TOKEN: &str = "NA";

const SCORE_HEADER: [&str; 3] = ["segment_id", "system_id", "score"];
const LENGTH_HEADER: [&str; 3] = ["segment_id", "system_id", "chars"];
const FLAGS_HEADER: [&str; 4] = ["metric_name", "reference_free", "baseline", "sentinel"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SystemId(String);

macro_rules! id_impls {
    ($ty:ident) => {
        impl $ty {
            pub fn new(value: impl Into<String>) -> Result<Self> {
                let value = value.into();
                if value.is_empty() {
                    return Err(Error::InvalidDataset(concat!(stringify!($ty), " must be non-empty").into()));
                }
                Ok(Self(value))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

id_impls!(SegmentId);
id_impls!(SystemId);

/// The `(segment, system)` cross product shared by every matrix of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySpace {
    segments: IndexSet<SegmentId>,
    systems: IndexSet<SystemId>,
}

impl KeySpace {
    pub fn new(segments: Vec<SegmentId>, systems: Vec<SystemId>) -> Result<Self> {
        let n_seg = segments.len();
        let n_sys = systems.len();
        let segments: IndexSet<_> = segments.into_iter().collect();
        let systems: IndexSet<_> = systems.into_iter().collect();
        if segments.len() != n_seg || systems.len() != n_sys {
            return Err(Error::InvalidDataset("duplicate segment or system id".into()));
        }
        if segments.is_empty() || systems.is_empty() {
            return Err(Error::InvalidDataset("empty key space".into()));
        }
        Ok(Self { segments, systems })
    }

    /// Convenience constructor with ids `s0, s1, ...` and `sys0, sys1, ...`.
    pub fn synthetic(n_segments: usize, n_systems: usize) -> Self {
        Self::new(
            (0..n_segments).map(|i| SegmentId(format!("s{i}"))).collect(),
            (0..n_systems).map(|i| SystemId(format!("sys{i}"))).collect(),
        )
        .expect("non-empty synthetic key space")
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn n_systems(&self) -> usize {
        self.systems.len()
    }

    pub fn len(&self) -> usize {
        self.segments.len() * self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> impl ExactSizeIterator<Item = &SegmentId> {
        self.segments.iter()
    }

    pub fn systems(&self) -> impl ExactSizeIterator<Item = &SystemId> {
        self.systems.iter()
    }

    pub fn segment(&self, i: usize) -> &SegmentId {
        &self.segments[i]
    }

    pub fn system(&self, j: usize) -> &SystemId {
        &self.systems[j]
    }

    pub fn segment_index(&self, id: &str) -> Option<usize> {
        self.segments.get_index_of(id)
    }

    pub fn system_index(&self, id: &str) -> Option<usize> {
        self.systems.get_index_of(id)
    }

    /// Flat index of `(segment, system)` in canonical order.
    #[inline]
    pub fn index(&self, segment: usize, system: usize) -> usize {
        segment * self.systems.len() + system
    }

    /// Inverse of [`KeySpace::index`].
    #[inline]
    pub fn coords(&self, key: usize) -> (usize, usize) {
        (key / self.systems.len(), key % self.systems.len())
    }
}

impl std::borrow::Borrow<str> for SegmentId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl std::borrow::Borrow<str> for SystemId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Scores indexed by `(segment, system)`, `None` meaning MISSING.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    name: String,
    keys: Arc<KeySpace>,
    scores: Vec<Option<f64>>,
}

impl PartialEq for ScoreMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && *self.keys == *other.keys && self.scores == other.scores
    }
}

impl ScoreMatrix {
    /// Builds a matrix from dense canonical-order scores.
    pub fn new(name: impl Into<String>, keys: Arc<KeySpace>, scores: Vec<Option<f64>>) -> Result<Self> {
        if scores.len() != keys.len() {
            return Err(Error::LengthMismatch(scores.len(), keys.len()));
        }
        if let Some(bad) = scores.iter().flatten().find(|s| !s.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite score {bad}")));
        }
        Ok(Self { name: name.into(), keys, scores })
    }

    /// Builds a fully-present matrix from a `[segment][system]` grid.
    pub fn from_grid(name: impl Into<String>, keys: Arc<KeySpace>, grid: &[Vec<f64>]) -> Result<Self> {
        let scores = grid.iter().flat_map(|row| row.iter().map(|&v| Some(v))).collect();
        Self::new(name, keys, scores)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn keys(&self) -> &Arc<KeySpace> {
        &self.keys
    }

    pub fn scores(&self) -> &[Option<f64>] {
        &self.scores
    }

    pub fn get(&self, segment: usize, system: usize) -> Option<f64> {
        self.scores[self.keys.index(segment, system)]
    }

    pub fn n_present(&self) -> usize {
        self.scores.iter().filter(|s| s.is_some()).count()
    }

    /// Same key space and same name-independent layout.
    pub fn shares_keys(&self, other: &ScoreMatrix) -> bool {
        Arc::ptr_eq(&self.keys, &other.keys) || *self.keys == *other.keys
    }

    /// Applies `f` to every present score.
    pub fn map(&self, name: impl Into<String>, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let scores = self.scores.iter().map(|s| s.map(&mut f)).collect();
        Self::new(name, self.keys.clone(), scores)
    }

    /// Serializes in the canonical TSV layout. Missing entries are written as
    /// `NA`; present scores use the shortest decimal that parses back to the
    /// same value.
    pub fn to_tsv(&self) -> String {
        let mut out = SCORE_HEADER.join("\t");
        out.push('\n');
        for (key, score) in self.scores.iter().enumerate() {
            let (i, j) = self.keys.coords(key);
            out.push_str(self.keys.segment(i).as_str());
            out.push('\t');
            out.push_str(self.keys.system(j).as_str());
            out.push('\t');
            match score {
                Some(v) => out.push_str(&format!("{v}")),
                None => out.push_str(MISSING_TOKEN),
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    pub reference_free: bool,
    pub baseline: bool,
    pub sentinel: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub language_pair: String,
    pub keys: Arc<KeySpace>,
    pub human: ScoreMatrix,
    pub metrics: BTreeMap<String, ScoreMatrix>,
    /// Candidate translation lengths in characters, canonical order.
    pub candidate_lengths: Option<Vec<Option<u64>>>,
    pub metric_flags: BTreeMap<String, MetricFlags>,
}

impl Dataset {
    /// Assembles a dataset from in-memory parts, checking the shared key space.
    pub fn new(language_pair: impl Into<String>, human: ScoreMatrix, metrics: Vec<ScoreMatrix>) -> Result<Self> {
        let keys = human.keys().clone();
        let mut map = BTreeMap::new();
        for m in metrics {
            if !m.shares_keys(&human) {
                return Err(Error::InvalidDataset(format!("metric {} has a different key space", m.name())));
            }
            if map.insert(m.name().to_string(), m).is_some() {
                return Err(Error::InvalidDataset("duplicate metric name".into()));
            }
        }
        Ok(Self {
            language_pair: language_pair.into(),
            keys,
            human,
            metrics: map,
            candidate_lengths: None,
            metric_flags: BTreeMap::new(),
        })
    }

    pub fn metric(&self, name: &str) -> Result<&ScoreMatrix> {
        self.metrics.get(name).ok_or_else(|| Error::UnknownMetric(name.to_string()))
    }

    /// Looks up a metric, accepting `human` as the human matrix.
    pub fn scores(&self, name: &str) -> Result<&ScoreMatrix> {
        if name == "human" {
            Ok(&self.human)
        } else {
            self.metric(name)
        }
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.metrics.keys().cloned().collect()
    }

    /// Writes the dataset back out in the canonical directory layout.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        let metrics_dir = dir.join("metrics");
        fs::create_dir_all(&metrics_dir).map_err(io(&metrics_dir))?;
        let human = dir.join("human.tsv");
        fs::write(&human, self.human.to_tsv()).map_err(io(&human))?;
        for (name, m) in &self.metrics {
            let p = metrics_dir.join(format!("{name}.tsv"));
            fs::write(&p, m.to_tsv()).map_err(io(&p))?;
        }
        if let Some(lengths) = &self.candidate_lengths {
            let mut out = LENGTH_HEADER.join("\t");
            out.push('\n');
            for (key, len) in lengths.iter().enumerate() {
                if let Some(len) = len {
                    let (i, j) = self.keys.coords(key);
                    out.push_str(&format!("{}\t{}\t{len}\n", self.keys.segment(i), self.keys.system(j)));
                }
            }
            let p = dir.join("lengths.tsv");
            fs::write(&p, out).map_err(io(&p))?;
        }
        if !self.metric_flags.is_empty() {
            let mut out = FLAGS_HEADER.join("\t");
            out.push('\n');
            for (name, f) in &self.metric_flags {
                out.push_str(&format!(
                    "{name}\t{}\t{}\t{}\n",
                    f.reference_free as u8, f.baseline as u8, f.sentinel as u8
                ));
            }
            let p = dir.join("flags.tsv");
            fs::write(&p, out).map_err(io(&p))?;
        }
        Ok(())
    }
}

/// Metric and human scores at the keys where both are present.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPairVector {
    pub metric_scores: Vec<f64>,
    pub human_scores: Vec<f64>,
    /// Flat canonical key indices, ascending.
    pub keys: Vec<usize>,
}

impl AlignedPairVector {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Pairwise deletion: keeps the keys where both matrices have a score,
/// optionally restricted to `subset` (flat key indices).
pub fn align(metric: &ScoreMatrix, human: &ScoreMatrix, subset: Option<&[usize]>) -> Result<AlignedPairVector> {
    if !metric.shares_keys(human) {
        return Err(Error::InvalidDataset(format!("{} and {} do not share a key space", metric.name(), human.name())));
    }
    let mut out = AlignedPairVector { metric_scores: Vec::new(), human_scores: Vec::new(), keys: Vec::new() };
    let mut push = |k: usize| {
        if let (Some(m), Some(h)) = (metric.scores[k], human.scores[k]) {
            out.metric_scores.push(m);
            out.human_scores.push(h);
            out.keys.push(k);
        }
    };
    match subset {
        Some(subset) => {
            let mut sorted: Vec<usize> = subset.iter().copied().filter(|&k| k < metric.scores.len()).collect();
            sorted.sort_unstable();
            sorted.dedup();
            sorted.into_iter().for_each(&mut push);
        }
        None => (0..metric.scores.len()).for_each(&mut push),
    }
    if out.is_empty() {
        return Err(Error::EmptyAlignment);
    }
    Ok(out)
}

/// Per-system mean of the present scores, in canonical system order.
pub fn system_scores(matrix: &ScoreMatrix) -> Result<IndexMap<SystemId, f64>> {
    let keys = matrix.keys();
    let mut out = IndexMap::with_capacity(keys.n_systems());
    for (j, sys) in keys.systems().enumerate() {
        let (sum, n) =
            (0..keys.n_segments()).filter_map(|i| matrix.get(i, j)).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            return Err(Error::EmptySystem(sys.to_string()));
        }
        out.insert(sys.clone(), sum / n as f64);
    }
    Ok(out)
}

/// Copy of `matrix` with every entry outside `keep` set to MISSING.
pub fn restrict(matrix: &ScoreMatrix, keep: &[usize]) -> ScoreMatrix {
    let mut scores = vec![None; matrix.scores.len()];
    for &k in keep {
        scores[k] = matrix.scores[k];
    }
    ScoreMatrix { name: matrix.name.clone(), keys: matrix.keys.clone(), scores }
}

// ---------------------------------------------------------------------------
// Loading

struct TsvFile {
    path: PathBuf,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_tsv(path: &Path, header: &[&str]) -> Result<TsvFile> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "missing header line".into()))?;
    let got: Vec<&str> = first.trim_end_matches('\r').split('\t').collect();
    if got != header {
        return Err(parse_err(1, format!("expected header {:?}, found {:?}", header.join("\t"), got.join("\t"))));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(parse_err(idx + 1, format!("expected {} columns, found {}", header.len(), fields.len())));
        }
        if fields.iter().any(String::is_empty) {
            return Err(parse_err(idx + 1, "empty field".into()));
        }
        rows.push((idx + 1, fields));
    }
    Ok(TsvFile { path: path.to_path_buf(), rows })
}

fn parse_score(file: &TsvFile, line: usize, raw: &str) -> Result<Option<f64>> {
    if raw == MISSING_TOKEN {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse { path: file.path.clone(), line, message: format!("invalid score {raw:?}") }),
    }
}

fn fill_matrix<T: Clone>(
    file: &TsvFile,
    keys: &KeySpace,
    value_of: impl Fn(usize, &str) -> Result<Option<T>>,
) -> Result<Vec<Option<T>>> {
    let mut scores = vec![None; keys.len()];
    let mut seen = vec![false; keys.len()];
    for (line, fields) in &file.rows {
        let (seg, sys) = (&fields[0], &fields[1]);
        let (Some(i), Some(j)) = (keys.segment_index(seg), keys.system_index(sys)) else {
            return Err(Error::KeyMismatch {
                path: file.path.clone(),
                line: *line,
                segment: seg.clone(),
                system: sys.clone(),
            });
        };
        let k = keys.index(i, j);
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::DuplicateKey {
                path: file.path.clone(),
                line: *line,
                segment: seg.clone(),
                system: sys.clone(),
            });
        }
        scores[k] = value_of(*line, &fields[2])?;
    }
    Ok(scores)
}

fn parse_flag(file: &TsvFile, line: usize, raw: &str) -> Result<bool> {
    match raw {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => {
            Err(Error::Parse { path: file.path.clone(), line, message: format!("flag must be 0 or 1, found {raw:?}") })
        }
    }
}

/// Loads a dataset directory in the canonical TSV layout. The language pair
/// is taken from the directory name.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let human_file = read_tsv(&dir.join("human.tsv"), &SCORE_HEADER)?;

    let mut segments = IndexSet::new();
    let mut systems = IndexSet::new();
    for (_, fields) in &human_file.rows {
        segments.insert(SegmentId(fields[0].clone()));
        systems.insert(SystemId(fields[1].clone()));
    }
    if segments.is_empty() {
        return Err(Error::Parse { path: human_file.path.clone(), line: 1, message: "no rows".into() });
    }
    let keys = Arc::new(KeySpace { segments, systems });
    let human_scores = fill_matrix(&human_file, &keys, |line, raw| parse_score(&human_file, line, raw))?;
    let human = ScoreMatrix { name: "human".into(), keys: keys.clone(), scores: human_scores };

    let mut metrics = BTreeMap::new();
    let metrics_dir = dir.join("metrics");
    if metrics_dir.is_dir() {
        let entries = fs::read_dir(&metrics_dir).map_err(|source| Error::Io { path: metrics_dir.clone(), source })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "tsv"))
            .collect();
        paths.sort();
        for path in paths {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if name.is_empty() || name == "human" {
                return Err(Error::InvalidDataset(format!("invalid metric file name {}", path.display())));
            }
            let file = read_tsv(&path, &SCORE_HEADER)?;
            let scores = fill_matrix(&file, &keys, |line, raw| parse_score(&file, line, raw))?;
            metrics.insert(name.clone(), ScoreMatrix { name, keys: keys.clone(), scores });
        }
    }

    let lengths_path = dir.join("lengths.tsv");
    let candidate_lengths = if lengths_path.exists() {
        let file = read_tsv(&lengths_path, &LENGTH_HEADER)?;
        let lengths = fill_matrix(&file, &keys, |line, raw| {
            raw.parse::<u64>().map(Some).map_err(|_| Error::Parse {
                path: file.path.clone(),
                line,
                message: format!("invalid character count {raw:?}"),
            })
        })?;
        Some(lengths)
    } else {
        None
    };

    let flags_path = dir.join("flags.tsv");
    let mut metric_flags = BTreeMap::new();
    if flags_path.exists() {
        let file = read_tsv(&flags_path, &FLAGS_HEADER)?;
        let mut seen = HashMap::new();
        for (line, f) in &file.rows {
            if seen.insert(f[0].clone(), *line).is_some() {
                return Err(Error::Parse {
                    path: file.path.clone(),
                    line: *line,
                    message: format!("duplicate metric {:?}", f[0]),
                });
            }
            metric_flags.insert(
                f[0].clone(),
                MetricFlags {
                    reference_free: parse_flag(&file, *line, &f[1])?,
                    baseline: parse_flag(&file, *line, &f[2])?,
                    sentinel: parse_flag(&file, *line, &f[3])?,
                },
            );
        }
    }

    let language_pair = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_default();

    Ok(Dataset { language_pair, keys, human, metrics, candidate_lengths, metric_flags })
}
