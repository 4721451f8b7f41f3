use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mtmeta(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtmeta")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn write_scores(path: &Path, rows: &[(String, String, String)]) {
    let mut text = String::from("segment_id\tsystem_id\tscore\n");
    for (seg, sys, v) in rows {
        text.push_str(&format!("{seg}\t{sys}\t{v}\n"));
    }
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

type CellFn<'a> = &'a dyn Fn(usize, usize) -> f64;

/// Writes a dataset whose cells are produced by `f(segment, system)`.
fn dataset(
    root: &Path,
    name: &str,
    n_seg: usize,
    n_sys: usize,
    human: impl Fn(usize, usize) -> f64,
    metrics: &[(&str, CellFn)],
) -> PathBuf {
    let dir = root.join(name);
    let cells = |f: &dyn Fn(usize, usize) -> f64| -> Vec<(String, String, String)> {
        (0..n_seg)
            .flat_map(|i| (0..n_sys).map(move |j| (i, j)))
            .map(|(i, j)| (format!("seg{i}"), format!("sys{j}"), format!("{}", f(i, j))))
            .collect()
    };
    write_scores(&dir.join("human.tsv"), &cells(&human));
    for (m, f) in metrics {
        write_scores(&dir.join("metrics").join(format!("{m}.tsv")), &cells(f));
    }
    dir
}

fn toy(root: &Path) -> PathBuf {
    let h = [5.0, 3.0, 5.0, 5.0];
    let m = [0.6, 0.5, 0.4, 0.4];
    dataset(root, "toy", 1, 4, |_, j| h[j], &[("m", &|_, j| m[j])])
}

fn quality(i: usize, j: usize) -> f64 {
    ((i * 7 + j * 13) % 17) as f64 + (i as f64 * 0.37).sin() * 0.1 + j as f64 * 1e-3
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn calibrate_worked_example() {
    let tmp = TempDir::new().unwrap();
    toy(tmp.path());
    ok(&mtmeta(&["calibrate", "--data", "toy", "--out", "cal.json"], tmp.path()));
    let v = read_json(&tmp.path().join("cal.json"));
    assert_eq!(v["results"]["m"]["epsilon"], 0.2);
    assert_eq!(v["results"]["m"]["acc_eq"], 0.5);
    let manifest = read_json(&tmp.path().join("cal.json.manifest.json"));
    assert_eq!(manifest["command"], "calibrate");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn continuous_metric_without_human_ties_gets_zero_epsilon() {
    let tmp = TempDir::new().unwrap();
    dataset(tmp.path(), "d", 10, 6, quality, &[("m", &|i, j| quality(i, j) * 0.5 + ((i * 6 + j) as f64).cos())]);
    ok(&mtmeta(&["calibrate", "--data", "d", "--out", "cal.json"], tmp.path()));
    let v = read_json(&tmp.path().join("cal.json"));
    assert_eq!(v["results"]["m"]["epsilon"], 0.0);
}

#[test]
fn empty_metric_file_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let dir = toy(tmp.path());
    fs::write(dir.join("metrics/m.tsv"), "").unwrap();
    let out = mtmeta(&["calibrate", "--data", "toy", "--out", "cal.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m.tsv"));
}

fn ranking_dataset(root: &Path) -> PathBuf {
    dataset(root, "xx-yy", 20, 5, quality, &[("good", &quality), ("bad", &|i, j| -quality(i, j))])
}

#[test]
fn rank_orders_good_above_anticorrelated() {
    let tmp = TempDir::new().unwrap();
    ranking_dataset(tmp.path());
    ok(&mtmeta(&["rank", "--data", "xx-yy", "--resamples", "200", "--seed", "3", "--out", "rank.tsv"], tmp.path()));
    let tsv = fs::read_to_string(tmp.path().join("rank.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["metric", "xx-yy/pearson", "xx-yy/acc_eq", "avg", "rank"]);
    assert_eq!((rows[1][0], rows[1][4]), ("good", "1"));
    assert_eq!((rows[2][0], rows[2][4]), ("bad", "2"));
    let detail = read_json(&tmp.path().join("rank.tsv.json"));
    assert_eq!(detail["tasks"].as_array().unwrap().len(), 2);
    assert_eq!(detail["tasks"][0]["values"]["good"], 1.0);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    ranking_dataset(tmp.path());
    let files = ["rank.tsv", "rank.tsv.json", "rank.tsv.manifest.json"];
    let args = ["rank", "--data", "xx-yy", "--resamples", "100", "--seed", "9", "--out", "rank.tsv"];
    ok(&mtmeta(&args, tmp.path()));
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(tmp.path().join(f)).unwrap()).collect();
    ok(&mtmeta(&[&args[..], &["--workers", "3"]].concat(), tmp.path()));
    let second: Vec<Vec<u8>> = files.iter().map(|f| fs::read(tmp.path().join(f)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn missing_seed_is_generated_and_recorded() {
    let tmp = TempDir::new().unwrap();
    ranking_dataset(tmp.path());
    ok(&mtmeta(&["sweep", "--data", "xx-yy", "--p-untied", "0.5", "--seeds", "2", "--out", "s.csv"], tmp.path()));
    let manifest = read_json(&tmp.path().join("s.csv.manifest.json"));
    let seed = manifest["config"]["seed"].as_u64().expect("seed recorded");
    let first = fs::read(tmp.path().join("s.csv")).unwrap();
    let seed = seed.to_string();
    ok(&mtmeta(
        &["sweep", "--data", "xx-yy", "--p-untied", "0.5", "--seeds", "2", "--seed", &seed, "--out", "s.csv"],
        tmp.path(),
    ));
    assert_eq!(first, fs::read(tmp.path().join("s.csv")).unwrap());
}

#[test]
fn inputs_are_not_modified() {
    let tmp = TempDir::new().unwrap();
    let dir = ranking_dataset(tmp.path());
    let before = fs::read(dir.join("metrics/good.tsv")).unwrap();
    ok(&mtmeta(
        &[
            "sentinel",
            "perturb",
            "--data",
            "xx-yy",
            "--metric",
            "good",
            "--seed",
            "1",
            "--out",
            "xx-yy/metrics/copy.tsv",
        ],
        tmp.path(),
    ));
    assert_eq!(before, fs::read(dir.join("metrics/good.tsv")).unwrap());
}

/// Converts the published per-task table into `--tasks-file` form.
fn published_tasks(root: &Path) -> (PathBuf, Vec<(String, f64)>) {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/wmt23_seg_tasks.tsv");
    let text = fs::read_to_string(fixture).unwrap();
    let mut out =
        String::from("metric\ten-de:pearson\ten-de:acc_eq\the-en:pearson\the-en:acc_eq\tzh-en:pearson\tzh-en:acc_eq\n");
    let mut expected = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        out.push_str(&format!("{}\t{}\t{}\t{}\t{}\t{}\t{}\n", f[0], f[4], f[6], f[8], f[10], f[12], f[14]));
        expected.push((f[0].to_string(), f[2].parse().unwrap()));
    }
    let path = root.join("tasks.tsv");
    fs::write(&path, out).unwrap();
    (path, expected)
}

#[test]
fn precomputed_tasks_reproduce_published_averages() {
    let tmp = TempDir::new().unwrap();
    let (_, expected) = published_tasks(tmp.path());
    ok(&mtmeta(&["rank", "--tasks-file", "tasks.tsv", "--seed", "0", "--out", "agg.tsv"], tmp.path()));
    let tsv = fs::read_to_string(tmp.path().join("agg.tsv")).unwrap();
    let got: std::collections::HashMap<String, f64> = tsv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[f.len() - 2].parse().unwrap())
        })
        .collect();
    assert_eq!(got.len(), 35);
    for (metric, avg) in expected {
        assert!((got[&metric] - avg).abs() <= 0.001, "{metric}: {} vs {avg}", got[&metric]);
    }
}

#[test]
fn identity_sweep_matches_calibrate() {
    let tmp = TempDir::new().unwrap();
    ranking_dataset(tmp.path());
    ok(&mtmeta(&["calibrate", "--data", "xx-yy", "--out", "cal.json"], tmp.path()));
    ok(&mtmeta(
        &[
            "sweep",
            "--data",
            "xx-yy",
            "--p-tied",
            "0",
            "--p-untied",
            "0",
            "--seeds",
            "1",
            "--seed",
            "4",
            "--out",
            "s.json",
        ],
        tmp.path(),
    ));
    let cal = read_json(&tmp.path().join("cal.json"));
    let sweep = read_json(&tmp.path().join("s.json"));
    let names = sweep["metrics"].as_array().unwrap();
    for (k, name) in names.iter().enumerate() {
        let point = &sweep["rows"][0]["metrics"][k];
        let c = &cal["results"][name.as_str().unwrap()];
        assert_eq!(point["acc_eq"], c["acc_eq"]);
        assert_eq!(point["epsilon"], c["epsilon"]);
    }
}

#[test]
fn perturbed_discrete_metric_beats_original_without_human_ties() {
    let tmp = TempDir::new().unwrap();
    // Human scores are all distinct; the metric has three levels.
    dataset(
        tmp.path(),
        "d",
        30,
        6,
        |i, j| (i * 6 + j) as f64 * 0.01 + quality(i, j),
        &[("disc", &|i, j| (quality(i, j) / 6.0).floor().min(2.0))],
    );
    ok(&mtmeta(
        &[
            "sentinel",
            "perturb",
            "--data",
            "d",
            "--metric",
            "disc",
            "--seed",
            "5",
            "--name",
            "cont",
            "--out",
            "d/metrics/cont.tsv",
        ],
        tmp.path(),
    ));
    ok(&mtmeta(&["calibrate", "--data", "d", "--out", "cal.json"], tmp.path()));
    let cal = read_json(&tmp.path().join("cal.json"));
    let disc = cal["results"]["disc"]["acc_eq"].as_f64().unwrap();
    let cont = cal["results"]["cont"]["acc_eq"].as_f64().unwrap();
    assert!(cont >= disc, "{cont} < {disc}");
}

#[test]
fn matrix_of_affine_copy_is_one() {
    let tmp = TempDir::new().unwrap();
    dataset(
        tmp.path(),
        "d",
        8,
        4,
        quality,
        &[("m", &|i, j| quality(i, j).sin()), ("m2", &|i, j| quality(i, j).sin() * 2.0 + 1.0)],
    );
    ok(&mtmeta(&["matrix", "--data", "d", "--metric", "m", "--metric", "m2", "--out", "mat.csv"], tmp.path()));
    let csv = fs::read_to_string(tmp.path().join("mat.csv")).unwrap();
    assert_eq!(csv, "metric,m,m2\nm,1,1\nm2,1,1\n");
}

#[test]
fn segment_constant_sentinel_and_discretize() {
    let tmp = TempDir::new().unwrap();
    dataset(tmp.path(), "d", 2, 2, |i, j| (i * 2 + j) as f64, &[("m", &|i, j| (i + j) as f64 * 0.3)]);
    ok(&mtmeta(&["sentinel", "segconst", "--data", "d", "--out", "seg.tsv"], tmp.path()));
    assert_eq!(
        fs::read_to_string(tmp.path().join("seg.tsv")).unwrap(),
        "segment_id\tsystem_id\tscore\nseg0\tsys0\t0.5\nseg0\tsys1\t0.5\nseg1\tsys0\t2.5\nseg1\tsys1\t2.5\n"
    );
    ok(&mtmeta(
        &["sentinel", "discretize", "--data", "d", "--metric", "m", "--levels", "0,1", "--out", "disc.tsv"],
        tmp.path(),
    ));
    assert!(fs::read_to_string(tmp.path().join("disc.tsv")).unwrap().ends_with("seg1\tsys1\t1\n"));
}

#[test]
fn lengthbias_needs_lengths() {
    let tmp = TempDir::new().unwrap();
    let dir = dataset(tmp.path(), "d", 3, 3, quality, &[("m", &|i, j| -((i * 3 + j) as f64))]);
    let out = mtmeta(&["lengthbias", "--data", "d", "--metric", "m", "--out", "lb.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let mut lengths = String::from("segment_id\tsystem_id\tchars\n");
    for i in 0..3 {
        for j in 0..3 {
            lengths.push_str(&format!("seg{i}\tsys{j}\t{}\n", 10 * (i * 3 + j)));
        }
    }
    fs::write(dir.join("lengths.tsv"), lengths).unwrap();
    ok(&mtmeta(&["lengthbias", "--data", "d", "--metric", "m", "--out", "lb.json"], tmp.path()));
    let v = read_json(&tmp.path().join("lb.json"));
    assert_eq!(v["fit"]["slope"], -0.1);
}

#[test]
fn heldout_runs_on_a_segment_split() {
    let tmp = TempDir::new().unwrap();
    ranking_dataset(tmp.path());
    ok(&mtmeta(
        &[
            "heldout",
            "--data",
            "xx-yy",
            "--calibration-fraction",
            "0.25",
            "--p-tied",
            "0",
            "--seeds",
            "2",
            "--seed",
            "1",
            "--out",
            "h.csv",
        ],
        tmp.path(),
    ));
    let csv = fs::read_to_string(tmp.path().join("h.csv")).unwrap();
    assert!(csv.starts_with("p_t,p_n,tie_fraction,retained_pairs,test_tie_fraction,metric,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn invalid_flags_exit_4() {
    let tmp = TempDir::new().unwrap();
    ranking_dataset(tmp.path());
    let cases: [&[&str]; 4] = [
        &["rank", "--data", "xx-yy", "--grouping", "document", "--out", "r.tsv"],
        &["sweep", "--data", "xx-yy", "--grid-file", "g.csv", "--p-tied", "0.5", "--out", "s.csv"],
        &["rank", "--data", "xx-yy", "--alpha", "1.5", "--out", "r.tsv"],
        &["sweep", "--data", "xx-yy", "--p-tied", "2", "--out", "s.csv"],
    ];
    for args in cases {
        assert_eq!(mtmeta(args, tmp.path()).status.code(), Some(4), "{args:?}");
    }
}

#[test]
fn degenerate_statistic_exits_3_naming_the_metric() {
    let tmp = TempDir::new().unwrap();
    // One system per segment: no segment group has two points.
    dataset(tmp.path(), "d", 6, 1, |i, _| i as f64, &[("a", &|i, _| i as f64), ("b", &|i, _| -(i as f64))]);
    let out = mtmeta(
        &["rank", "--data", "d", "--grouping", "segment", "--statistic", "pearson", "--seed", "0", "--out", "r.tsv"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("a:") || err.contains("b:"), "{err}");
}
