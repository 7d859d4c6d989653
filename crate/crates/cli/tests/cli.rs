use std::path::Path;
use std::process::{Command, Output};

use fedchain_core::ctnorm::{read_ctv1, write_ctv1, CtVolume, Ctv1};

fn fedchain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedchain")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        r#"
[experiment]
seed = 5
n_hospitals = 2
rounds = 2
output_dir = "out"

[dataset]
kind = "blobs"
dim = 6
n_train = 40
n_validation = 20
n_test = 20
"#,
    )
    .unwrap();
    path
}

#[test]
fn run_then_inspect_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let o = fedchain(&["run", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("final accuracy"));
    let csv = std::fs::read_to_string(dir.path().join("out/rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);

    let ledger = dir.path().join("out/ledger-p2.jsonl");
    let v = fedchain(&["ledger", "verify", ledger.to_str().unwrap()]);
    assert!(v.status.success());
    assert!(stdout(&v).starts_with("ok: 3 blocks"));

    let show = fedchain(&["ledger", "show", ledger.to_str().unwrap(), "--height", "2"]);
    assert!(show.status.success());
    let block: serde_json::Value = serde_json::from_str(&stdout(&show)).unwrap();
    assert_eq!(block["height"], 2);
    assert!(!fedchain(&["ledger", "show", ledger.to_str().unwrap(), "--height", "9"]).status.success());

    let mut bytes = std::fs::read(&ledger).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x20;
    std::fs::write(&ledger, bytes).unwrap();
    let bad = fedchain(&["ledger", "verify", ledger.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(stdout(&bad).starts_with("corrupt"));
}

#[test]
fn normalize_file_and_directory() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    for k in 0..2 {
        let v = CtVolume::filled([6, 6, 4], [2.0, 2.0, 3.0], -600.0 + 100.0 * k as f32).unwrap();
        write_ctv1(input.join(format!("s{k}.ctv")), &Ctv1::from(&v)).unwrap();
    }
    let out = dir.path().join("out");
    let o = fedchain(&[
        "normalize", "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap(),
        "--extent", "12,12,12", "--spacing", "4,4,4", "--wl", "-600", "--ww", "1200",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n0 = read_ctv1(out.join("s0.ctv")).unwrap();
    assert_eq!(n0.dims, [3, 3, 3]);
    assert!(n0.voxels.iter().all(|&x| x == 0.0));
    let n1 = read_ctv1(out.join("s1.ctv")).unwrap();
    assert!(n1.voxels.iter().all(|&x| (x - 100.0 / 1200.0).abs() < 1e-6));

    let single = dir.path().join("single.ctv");
    let o = fedchain(&["normalize", "--input", input.join("s0.ctv").to_str().unwrap(), "--output", single.to_str().unwrap(), "--extent", "12,12,12"]);
    assert!(o.status.success());
    assert_eq!(read_ctv1(&single).unwrap().dims, [6, 6, 6]);

    let bad = fedchain(&["normalize", "--input", single.to_str().unwrap(), "--output", "x.ctv", "--ww", "0"]);
    assert!(!bad.status.success());
}

#[test]
fn missing_config_fails_cleanly() {
    let o = fedchain(&["run", "--config", "/nonexistent/exp.toml"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}
