use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evseg")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/features_200.csv")
}

const SMALL: [&str; 2] = ["--hidden-dim", "16"];

#[test]
fn segment_writes_outputs_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = evseg(&[&["segment", "--input", s(&fixture()), "--cell", "lstm", "--out", s(&out)][..], &SMALL].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["segments.json", "trace.csv", "model.psp", "config.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("frames=200") && stdout.contains("boundaries=") && stdout.contains("wall_time="));
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("hidden_dim = 16"));
    assert!(echo.contains("threshold = 1.5"));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,E_P,P_q,G,lambda"));
}

#[test]
fn same_seed_gives_byte_identical_segments() {
    let dir = tempfile::tempdir().unwrap();
    let mut jsons = Vec::new();
    for run in ["one", "two"] {
        let out = dir.path().join(run);
        let o = evseg(&[&["segment", "--input", s(&fixture()), "--seed", "9", "--out", s(&out)][..], &SMALL].concat());
        assert!(o.status.success(), "{}", stderr(&o));
        jsons.push(fs::read(out.join("segments.json")).unwrap());
    }
    assert_eq!(jsons[0], jsons[1]);
}

#[test]
fn missing_input_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = evseg(&["segment", "--input", s(&missing), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,x\n").unwrap();
    let o = evseg(&["segment", "--input", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("non-numeric"));
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(evseg(&["segment"]).status.code(), Some(1));
    assert_eq!(evseg(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let o = evseg(&["segment", "--input", s(&fixture()), "--out", s(dir.path()), "--threshold", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = evseg(&["segment", "--input", s(&fixture()), "--out", s(dir.path()), "--cell", "gru"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exploding_updates_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = evseg(&[
        &["segment", "--input", s(&fixture()), "--out", s(dir.path()), "--lambda-init", "1e306"][..],
        &SMALL,
    ]
    .concat());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn print_config_reflects_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "history = 8\nthreshold = 2.0\n").unwrap();
    let o = evseg(&[
        "segment", "--input", "unused.csv", "--out", s(dir.path()), "--config", s(&cfg), "--threshold", "1.25",
        "--print-config",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("history = 8"));
    assert!(text.contains("threshold = 1.25"));
    assert!(text.contains("lambda_init = 1e-6"));
}

fn write_pair(dir: &Path, stem: &str, boundaries: &[usize], labels: &[usize]) {
    let seg = evseg::segmenter::Segmentation::from_boundaries(boundaries, labels.len(), stem);
    seg.write_json(&dir.join(format!("{stem}.json"))).unwrap();
    evseg::encoder::write_labels(labels, &dir.join(format!("{stem}.labels.csv"))).unwrap();
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn eval_hand_case_and_perfect_pair() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "hand", &[3], &[0, 0, 1, 1, 1, 1]);
    write_pair(dir.path(), "perfect", &[2, 5], &[4, 4, 1, 1, 1, 9]);

    let out = dir.path().join("r1");
    let o = evseg(&[
        "eval", "--pred", s(&dir.path().join("hand.json")), "--labels", s(&dir.path().join("hand.labels.csv")),
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(&out);
    assert!((r["mof"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-9);
    assert!((r["iou"].as_f64().unwrap() - 17.0 / 24.0).abs() < 1e-9);

    let out = dir.path().join("r2");
    let o = evseg(&[
        "eval", "--pred", s(&dir.path().join("perfect.json")), "--labels",
        s(&dir.path().join("perfect.labels.csv")), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(&out);
    assert_eq!((r["mof"].as_f64(), r["iou"].as_f64(), r["f1"].as_f64()), (Some(1.0), Some(1.0), Some(1.0)));
}

#[test]
fn eval_corpus_reports_every_video() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds");
    fs::create_dir(&preds).unwrap();
    write_pair(&preds, "a", &[3], &[0, 0, 1, 1, 1, 1]);
    write_pair(&preds, "b", &[], &[2, 2, 2]);
    write_pair(&preds, "c", &[1, 2], &[0, 1, 1, 1]);
    let out = dir.path().join("out");
    let o = evseg(&["eval", "--pred", s(&preds), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(&out);
    assert_eq!(r["per_video"].as_array().unwrap().len(), 3);
    assert_eq!(r["videos"], 3);
    assert!(r["pooled_mof"].is_number());
    let csv = fs::read_to_string(out.join("per_video.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("source_id,frames,predicted_segments,mof,iou,f1"));
}

#[test]
fn eval_length_mismatch_exits_1_with_both_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "x", &[2], &[0, 0, 1, 1]);
    evseg::encoder::write_labels(&[0, 0, 1], &dir.path().join("short.labels.csv")).unwrap();
    let o = evseg(&[
        "eval", "--pred", s(&dir.path().join("x.json")), "--labels", s(&dir.path().join("short.labels.csv")),
        "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains('4') && e.contains('3'), "{e}");
}

#[test]
fn synth_writes_streams_and_rejects_infeasible_specs() {
    let dir = tempfile::tempdir().unwrap();
    let o = evseg(&["synth", "--out", s(dir.path()), "--count", "2", "--seed", "3", "--dim", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for stem in ["synth-3", "synth-4"] {
        let stream = evseg::encoder::load_stream(
            &dir.path().join(format!("{stem}.csv")),
            evseg::encoder::StreamFormat::Csv,
        )
        .unwrap();
        assert_eq!(stream.dim(), 8);
        assert_eq!(stream.labels().unwrap().len(), stream.len());
    }
    let o = evseg(&[
        "synth", "--out", s(&dir.path().join("bad")), "--dim", "1", "--num-events", "50", "--cluster-separation", "100",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablate_grid_rows_and_rerun_identity() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = evseg(&["synth", "--out", s(&data), "--count", "2", "--dim", "8", "--min-len", "20", "--max-len", "30"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut csvs = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        let o = evseg(&[
            "ablate", "--input", s(&data), "--out", s(&out), "--cells", "rnn,lstm", "--adaptive-grid", "true,false",
            "--histories", "5", "--thresholds", "1.5", "--hidden-dim", "8",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(out.join("config.txt").is_file());
        csvs.push(fs::read_to_string(out.join("results.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let lines: Vec<&str> = csvs[0].lines().collect();
    assert_eq!(lines[0], evseg::cli::ABLATION_HEADER);
    assert_eq!(lines.len(), 5);

    let o = evseg(&["ablate", "--input", s(&data), "--out", s(&dir.path().join("e")), "--cells", ""]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablate_config_echo_loads_back_as_a_run_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    let o = evseg(&[
        "ablate", "--out", s(&out), "--synth-count", "1", "--synth-dim", "4", "--cells", "lstm",
        "--adaptive-grid", "true", "--hidden-dim", "4", "--refractory", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = evseg::cli::RunConfig::load(&out.join("config.txt")).unwrap();
    assert_eq!(cfg.refractory, 3);
    assert_eq!(cfg.hidden_dim, 4);
}
