use std::path::Path;
use std::process::{Command, Output};

use lie_mef::observation::h_k;
use lie_mef::synth::load_pose_file;
use lie_mef_cli::io::{load_observations, Table};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lie-mef"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn table(out: &Output) -> Table {
    Table::read(out.stdout.as_slice()).unwrap()
}

fn column(t: &Table, name: &str) -> Vec<String> {
    let idx = t.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    t.rows.iter().map(|r| r[idx].clone()).collect()
}

fn floats(t: &Table, name: &str) -> Vec<f64> {
    column(t, name).iter().map(|s| s.parse().unwrap()).collect()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_frames_plus_one_poses() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out-dir", s(dir.path()), "--frames", "12", "--n-obs", "8"]);
    let track = load_pose_file(&dir.path().join("poses.txt")).unwrap();
    assert_eq!(track.len(), 13);
    let obs = load_observations(&dir.path().join("observations.csv")).unwrap();
    assert_eq!(obs.len(), 12);
    assert!(obs.iter().all(|f| f.len() == 8));
}

#[test]
fn simulate_is_reproducible_under_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&["simulate", "--out-dir", s(d.path()), "--frames", "5", "--noise", "MG", "--variance", "0.01", "--seed", "9"]);
    }
    for f in ["poses.txt", "observations.csv", "config.toml"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn noiseless_simulation_has_residual_free_observations() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out-dir", s(dir.path()), "--frames", "6", "--n-obs", "10"]);
    let track = load_pose_file(&dir.path().join("poses.txt")).unwrap();
    let obs = load_observations(&dir.path().join("observations.csv")).unwrap();
    for (rel, frame) in track.relative_poses().iter().zip(&obs) {
        for o in frame {
            assert!((h_k(rel, &o.g()).unwrap() - o.y).norm() < 1e-12);
        }
    }
}

#[test]
fn json_lines_and_csv_give_identical_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&["simulate", "--out-dir", s(a.path()), "--frames", "8"]);
    ok(&["simulate", "--out-dir", s(b.path()), "--frames", "8", "--format", "jsonl"]);
    let csv = ok(&["filter", "--frames", "8", "--observations", s(&a.path().join("observations.csv"))]);
    let jsonl = ok(&["filter", "--frames", "8", "--observations", s(&b.path().join("observations.jsonl"))]);
    assert_eq!(csv.stdout, jsonl.stdout);
}

#[test]
fn noiseless_constant_velocity_run_converges() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[filter]\nq_scale = 1.0\nalpha = 0.0\nblock_decay = 10.0\n[track]\nincrements = [[0.01, 0.005, 0.003, 0.1, 0.05, 0.5]]\n",
    );
    ok(&["simulate", "-c", &cfg, "--out-dir", s(dir.path())]);
    let out = ok(&[
        "filter",
        "-c",
        &cfg,
        "--order",
        "2",
        "--observations",
        s(&dir.path().join("observations.csv")),
        "--truth",
        s(&dir.path().join("poses.txt")),
    ]);
    let t = table(&out);
    assert_eq!(t.header.len(), 2 + 12 + 12 + 3);
    assert_eq!(t.rows.len(), 100);
    let err = floats(&t, "geodesic_error");
    assert!(*err.last().unwrap() < 1e-2, "final error {}", err.last().unwrap());
}

#[test]
fn missing_truth_leaves_error_columns_empty() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out-dir", s(dir.path()), "--frames", "4"]);
    let out = ok(&["filter", "--observations", s(&dir.path().join("observations.csv"))]);
    let t = table(&out);
    assert!(t.comments[0].starts_with("lie-mef filter results v1"));
    for name in ["geodesic_error", "rotation_error_deg", "translation_error"] {
        assert!(column(&t, name).iter().all(String::is_empty));
    }
}

#[test]
fn order_flag_changes_the_filter() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out-dir", s(dir.path()), "--frames", "10"]);
    let obs = dir.path().join("observations.csv");
    let m1 = table(&ok(&["filter", "--order", "1", "--observations", s(&obs)]));
    let m3 = table(&ok(&["filter", "--order", "3", "--observations", s(&obs)]));
    assert!(m1.comments[1].starts_with("order 1 "));
    assert!(m3.comments[1].starts_with("order 3 "));
    assert_ne!(m1.rows, m3.rows);
}

#[test]
fn results_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out-dir", s(dir.path()), "--frames", "4"]);
    let obs = dir.path().join("observations.csv");
    let results = dir.path().join("results.csv");
    let stdout = ok(&["filter", "--observations", s(&obs)]).stdout;
    ok(&["filter", "--observations", s(&obs), "--output", s(&results)]);
    assert_eq!(std::fs::read(results).unwrap(), stdout);
}

#[test]
fn one_cell_sweep_matches_filter_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 4\nn_obs = 20\n[track]\nframes = 15\n[noise]\nkind = \"MG\"\nvariance = 0.01\n\
         [sweep]\norders = [2]\nnoise_kinds = [\"MG\"]\nvariances = [0.01]\nn_obs = [20]\nalphas = [2.0]\nrepeats = 1\n",
    );
    ok(&["simulate", "-c", &cfg, "--out-dir", s(dir.path())]);
    let single = table(&ok(&[
        "filter",
        "-c",
        &cfg,
        "--observations",
        s(&dir.path().join("observations.csv")),
        "--truth",
        s(&dir.path().join("poses.txt")),
    ]));
    let err = floats(&single, "geodesic_error");
    let mean = err.iter().sum::<f64>() / err.len() as f64;
    let sweep = table(&ok(&["sweep", "-c", &cfg]));
    assert_eq!(sweep.rows.len(), 1);
    let reported = floats(&sweep, "mean_geodesic_error")[0];
    assert!((reported - mean).abs() <= 1e-14 * mean, "{reported} vs {mean}");
}

#[test]
fn sweep_emits_one_row_per_observation_count_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[track]\nframes = 10\n[sweep]\norders = [2]\nnoise_kinds = [\"MG\"]\nvariances = [0.001]\nn_obs = [5, 10, 20, 40]\nrepeats = 2\n",
    );
    let first = ok(&["sweep", "-c", &cfg]);
    let t = table(&first);
    assert!(t.comments[0].starts_with("lie-mef sweep results v1"));
    assert_eq!(column(&t, "n_obs"), vec!["5", "10", "20", "40"]);
    assert!(column(&t, "status").iter().all(|s| s == "ok"));
    let second = ok(&["sweep", "-c", &cfg]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn compare_from_truth_on_noiseless_data_stays_close() {
    let dir = tempfile::tempdir().unwrap();
    // Frame data enters at the step midpoint, which leaves a steady offset of
    // about |v| δ / 2 even from the truth; δ = 0.02 keeps it below 1e-2.
    let cfg = write_config(dir.path(), "[compare]\ninit = \"truth\"\nprocess_noise = 0.0\nobs_sd = 0.0\nframe_dt = 0.02\n");
    let t = table(&ok(&["compare-ekf", "-c", &cfg]));
    assert_eq!(t.header.len(), 2 + 18 + 2);
    assert_eq!(t.rows.len(), 40);
    assert!(t.comments.iter().any(|c| c == "mef: ok"));
    assert!(floats(&t, "mef_error").iter().all(|e| *e < 1e-2));
}

#[test]
fn compare_from_identity_converges() {
    let t = table(&ok(&["compare-ekf", "--seed", "3"]));
    let err = floats(&t, "mef_error");
    assert!(err[39] < err[4], "{} vs {}", err[39], err[4]);
    let gt0 = floats(&t, "gt_0");
    assert_eq!(gt0.len(), 40);
}

#[test]
fn compare_is_reproducible() {
    let a = ok(&["compare-ekf", "--seed", "5"]);
    let b = ok(&["compare-ekf", "--seed", "5"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write_config(dir.path(), "alpah = 1.0\n");
    for args in [
        vec!["sweep", "-c", bad_key.as_str()],
        vec!["sweep", "--n-obs", "1"],
        vec!["simulate", "--noise", "pink", "--out-dir", s(dir.path())],
        vec!["filter", "--observations", "/nonexistent/obs.csv"],
        vec!["sweep", "-c", "/nonexistent/config.toml"],
        vec!["sweep", "--no-such-flag"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn fatal_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.csv");
    std::fs::write(&obs, "frame,point_id,x1,x2,depth,y1,y2\n1,0,0.1,0.1,abc,0.1,0.1\n").unwrap();
    let out = run(&["filter", "--observations", s(&obs)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("record 1"));
}
