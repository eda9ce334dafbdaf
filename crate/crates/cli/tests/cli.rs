use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"
seed = 11
neurons = 40
samples_per_intra = 20

[[classes]]
label = "cn"
[[classes.intra]]
tag = "a"
signature_range = [0, 8]
signature_shift = 10.0
[[classes.intra]]
tag = "b"
signature_range = [8, 16]
signature_shift = 10.0

[[classes]]
label = "ad"
[[classes.intra]]
tag = "c"
signature_range = [0, 8]
signature_shift = 6.0
"#;

fn percept(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_percept"))
        .current_dir(dir)
        .env_remove("PERCEPT_THREADS")
        .args(args)
        .output()
        .expect("spawn percept")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = percept(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn pipeline(dir: &Path) {
    fs::write(dir.join("spec.toml"), SPEC).unwrap();
    ok(dir, &["synth", "--spec", "spec.toml", "--out-dir", "data"]);
    for class in ["cn", "ad"] {
        let dump = format!("data/{class}.pcact");
        ok(dir, &["validate", &dump]);
        ok(dir, &["hist", &dump, "--bins", "32", "--out", &format!("{class}.pchist")]);
        ok(dir, &["fit", &dump, "--bins", "32", "--q", "0.5", "--out", &format!("{class}.pcbank")]);
        ok(
            dir,
            &["encode", &dump, "--bank", &format!("{class}.pcbank"), "--out", &format!("{class}.pccode")],
        );
        ok(
            dir,
            &[
                "atlas",
                "build",
                &format!("{class}.pccode"),
                "--meta",
                "data/meta.tsv",
                "--out",
                &format!("{class}.pcatlas"),
            ],
        );
    }
    ok(
        dir,
        &["eval", "cn.pcatlas", "--test", "cn.pccode", "--meta", "data/meta.tsv", "--report", "report.tsv"],
    );
}

#[test]
fn end_to_end_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    let report = fs::read_to_string(dir.join("report.tsv")).unwrap();
    assert!(report.contains("# class=cn\n"));
    assert!(report.contains("# k=5\n"));
    assert!(report.contains("\"q\":0.5"));
    assert!(report.contains("\"seed\":11"));
    let rows = report.lines().filter(|l| l.starts_with("cn-")).count();
    assert_eq!(rows, 40);

    for f in ["cn.pchist", "cn.pcbank", "cn.pccode", "cn.pcatlas"] {
        let line = ok(dir, &["validate", f]);
        assert!(line.starts_with("ok\t"), "{line}");
    }
}

#[test]
fn info_prints_embedded_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    let out = ok(dir, &["info", "cn.pcbank"]);
    assert!(out.starts_with("kind: pcbank\nversion: 1\n"), "{out}");
    assert!(out.contains("\"bins\": 32"), "{out}");
    assert!(out.contains("\"q\": 0.5"), "{out}");
    let out = ok(dir, &["info", "cn.pccode"]);
    assert!(out.contains("more\""), "long id list should be abbreviated: {out}");
}

#[test]
fn fit_from_histograms_matches_fit_from_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    ok(dir, &["fit", "cn.pchist", "--q", "0.5", "--out", "from_hist.pcbank"]);
    assert_eq!(
        fs::read(dir.join("cn.pcbank")).unwrap(),
        fs::read(dir.join("from_hist.pcbank")).unwrap()
    );
}

#[test]
fn query_prints_ranked_tsv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    let out = ok(dir, &["query", "cn.pcatlas", "--code", "cn.pccode:cn-00004", "-k", "3"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "rank\tsample_id\tdistance\tmetadata");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1\tcn-00004\t0\t"), "{}", lines[1]);

    let out = ok(
        dir,
        &["query", "cn.pcatlas", "--code", "cn.pccode:cn-00004", "--exclude-self", "--weighted", "--weight-transform", "log_inverse"],
    );
    assert!(!out.contains("\tcn-00004\t"));
    assert_eq!(out.lines().count(), 6);
}

#[test]
fn query_with_other_class_names_both_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    let out = percept(dir, &["query", "cn.pcatlas", "--code", "ad.pccode:ad-00001"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("`cn`") && err.contains("`ad`"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn encode_with_wrong_prediction_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    let out = percept(
        dir,
        &["encode", "data/cn.pcact", "--bank", "ad.pcbank", "--out", "x.pccode"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("`cn`") && err.contains("`ad`"), "{err}");

    ok(
        dir,
        &["encode", "data/cn.pcact", "--bank", "ad.pcbank", "--predicted", "ad", "--out", "x.pccode"],
    );
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = percept(tmp.path(), &["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = percept(tmp.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = percept(tmp.path(), &["encode", "x", "--bank", "b", "--out", "o", "--interval-mode", "wide"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("junk.pcact"), b"NOTMAGIC\x01\x00\x00\x00").unwrap();
    let out = percept(dir, &["validate", "junk.pcact"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).starts_with("error: "));

    let out = percept(dir, &["validate", "missing.pcact"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn threads_flag_and_env_do_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    ok(dir, &["--threads", "1", "atlas", "build", "cn.pccode", "--meta", "data/meta.tsv", "--out", "one.pcatlas"]);
    let out = Command::new(env!("CARGO_BIN_EXE_percept"))
        .current_dir(dir)
        .env("PERCEPT_THREADS", "3")
        .args(["eval", "one.pcatlas", "--test", "cn.pccode", "--meta", "data/meta.tsv", "--report", "r3.tsv"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(dir.join("one.pcatlas")).unwrap(), fs::read(dir.join("cn.pcatlas")).unwrap());
    assert_eq!(fs::read(dir.join("r3.tsv")).unwrap(), fs::read(dir.join("report.tsv")).unwrap());
}

#[test]
fn project_writes_points_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    ok(dir, &["project", "cn.pcatlas", "--meta", "data/meta.tsv", "--out", "p.tsv", "--svg", "p.svg"]);
    let tsv = fs::read_to_string(dir.join("p.tsv")).unwrap();
    assert_eq!(tsv.lines().filter(|l| l.starts_with("cn-")).count(), 40);
    let svg = fs::read_to_string(dir.join("p.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn atlas_build_reports_memory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    let out = ok(dir, &["atlas", "build", "cn.pccode", "--out", "m.pcatlas"]);
    assert!(out.contains("code_bytes_per_sample\t10\n"), "{out}");
    assert!(out.contains("raw_bytes_per_sample\t160\n"), "{out}");
}
