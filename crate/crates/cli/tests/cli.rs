use std::path::Path;
use std::process::Command;

use mtm_lab::output::{parse, read_rows, write_rows, COLUMNS};
use mtm_lab::{Format, ResultRow};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtm-lab"))
}

fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn run_to(dir: &Path, name: &str, args: &[&str]) -> Vec<u8> {
    let path = dir.join(name);
    let mut all: Vec<&str> = args.to_vec();
    let p = path.to_str().unwrap().to_string();
    all.extend(["--out", &p]);
    let (code, err) = run(&all);
    assert_eq!(code, 0, "{err}");
    std::fs::read(&path).unwrap()
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["sample", "--seed", "5", "--kernel", "mtm", "--n", "3", "--steps", "10000", "--chains", "3"],
        &["sample", "--seed", "5", "--kernel", "semi-ideal", "--n", "2", "--inner-samples", "4", "--steps", "10000"],
        &["mtm-vs-ideal", "--seed", "2", "--n-grid", "1,4", "--steps", "10000", "--samples", "2000"],
        &["scaling", "--seed", "9", "--d-grid", "2,8", "--steps", "10000", "--samples", "2000"],
        &["oracle", "--seed", "4", "--specs", "30", "--format", "jsonl"],
        &["moments", "--seed", "4", "--mc-draws", "20000"],
    ];
    for (i, args) in cases.iter().enumerate() {
        let mut one = args.to_vec();
        one.extend(["--threads", "1"]);
        let mut many = args.to_vec();
        many.extend(["--threads", "4"]);
        let a = run_to(dir.path(), &format!("a{i}"), &one);
        let b = run_to(dir.path(), &format!("b{i}"), &many);
        let c = run_to(dir.path(), &format!("c{i}"), &many);
        assert!(!a.is_empty());
        assert_eq!(a, b, "case {i} differs across thread counts");
        assert_eq!(b, c, "case {i} differs across reruns");
    }
}

#[test]
fn emitted_files_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    for fmt in ["csv", "jsonl"] {
        let path = dir.path().join(format!("m.{fmt}"));
        let (code, err) =
            run(&["moments", "--seed", "1", "--mc-draws", "5000", "--format", fmt, "--out", path.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        let f = if fmt == "csv" { Format::Csv } else { Format::Jsonl };
        let rows = parse(&path, f).unwrap();
        assert!(rows.iter().any(|r| r.estimator == "m(2)/quadrature"));
        let mut buf = Vec::new();
        write_rows(&rows, f, &mut buf).unwrap();
        assert_eq!(buf, std::fs::read(&path).unwrap());
    }
}

#[test]
fn empty_result_set_is_header_only() {
    let mut buf = Vec::new();
    write_rows(&[], Format::Csv, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap(), format!("{}\n", COLUMNS.join(",")));
    assert_eq!(read_rows(&buf[..], Format::Csv).unwrap(), Vec::<ResultRow>::new());
}

#[test]
fn row_round_trip_field_for_field() {
    let rows = vec![
        ResultRow {
            experiment: "gb-decay".into(),
            kernel: "mtm".into(),
            d: Some(5),
            sigma: Some(0.5),
            theta: Some(1.0),
            n: Some(1000),
            estimator: "acceptance-rate/r=2".into(),
            estimate: 1.0 / 3.0,
            se: Some(2.5e-3),
            n_samples: Some(100_000),
            seed: 42,
        },
        ResultRow {
            experiment: "bounds".into(),
            kernel: "analytic,quoted \"x\"".into(),
            d: None,
            sigma: None,
            theta: None,
            n: None,
            estimator: "gap-upper".into(),
            estimate: f64::MIN_POSITIVE,
            se: None,
            n_samples: None,
            seed: 0,
        },
    ];
    for f in [Format::Csv, Format::Jsonl] {
        let mut buf = Vec::new();
        write_rows(&rows, f, &mut buf).unwrap();
        assert_eq!(read_rows(&buf[..], f).unwrap(), rows);
    }
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["bounds"]).0, 2);
    assert_eq!(run(&["sample", "--seed", "1", "--sigma", "0"]).0, 2);
    assert_eq!(run(&["sample", "--seed", "1", "--steps", "1000000000"]).0, 3);
    assert_eq!(run(&["oracle", "--seed", "1", "--n-max", "12"]).0, 3);
    assert_eq!(run(&["bounds", "--seed", "1", "--threads", "0"]).0, 2);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 3, "zeta": 1.0, "d": 16, "k_grid": [1, 10]}"#).unwrap();
    let out = dir.path().join("b.csv");
    let (code, err) = run(&["bounds", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let rows = parse(&out, Format::Csv).unwrap();
    let gamma = rows.iter().find(|r| r.estimator == "gap-lower").unwrap();
    assert!((gamma.estimate - 4.32e-5).abs() < 1e-7);
    assert_eq!(gamma.seed, 3);
    let (code, _) = run(&["bounds", "--config", cfg.to_str().unwrap(), "--seed", "8", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(parse(&out, Format::Csv).unwrap().iter().all(|r| r.seed == 8));
    std::fs::write(&cfg, r#"{"seed": 3, "zeta": "one"}"#).unwrap();
    assert_eq!(run(&["bounds", "--config", cfg.to_str().unwrap()]).0, 2);
}

#[test]
fn oracle_accepts_a_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = mtm_core::discrete::random_spec(1, 2, 3, 3, mtm_core::discrete::WeightKind::LogUniform);
    let sp = dir.path().join("spec.json");
    spec.save(&sp).unwrap();
    let out = dir.path().join("o.csv");
    let (code, err) = run(&["oracle", "--seed", "1", "--spec", sp.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let rows = parse(&out, Format::Csv).unwrap();
    assert!(rows.iter().filter(|r| !r.estimator.starts_with("beta")).all(|r| r.d == Some(3) && r.n == Some(3)));
}
