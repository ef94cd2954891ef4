use std::path::Path;
use std::process::{Command, Output};

fn multislam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multislam")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
seed = 3
out = "results"
robots = 2
outliers = 40

[dataset]
source = "manhattan"

[dataset.manhattan]
poses = 300

[pcm_bench]
batch = 10
max_vertices = 60
repetitions = 1
"#;

#[test]
fn missing_config_file_is_a_config_error() {
    let out = multislam(&["print-config", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_without_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "robots = 2\n");
    assert_eq!(multislam(&["print-config", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nrobts = 2\n");
    assert_eq!(multislam(&["print-config", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn run_needs_a_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(multislam(&["run", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn report_on_empty_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = multislam(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn print_config_round_trips_and_applies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = multislam(&["print-config", "--config", &cfg, "--seed", "11", "--rank", "6", "--early-stop", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let printed = String::from_utf8(out.stdout).unwrap();
    let again = write_config(dir.path(), &printed);
    let out2 = multislam(&["print-config", "--config", &again]);
    assert_eq!(out2.status.code(), Some(0));
    assert_eq!(String::from_utf8(out2.stdout).unwrap(), printed);
    let parsed: toml::Table = printed.parse().unwrap();
    assert_eq!(parsed["seed"].as_integer(), Some(11));
    assert_eq!(parsed["rbcd"]["rank"].as_integer(), Some(6));
}

#[test]
fn pcm_bench_writes_artifacts_manifest_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let results = dir.path().join("results");
    let res = results.to_str().unwrap();
    let out = multislam(&["pcm-bench", "--config", &cfg, "--out", res]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bench = std::fs::read_to_string(results.join("pcm_bench.csv")).unwrap();
    assert!(bench.starts_with("n_vertices,batch_ms,incremental_ms,batch_size,incremental_size\n"));
    assert_eq!(bench.lines().count(), 1 + 6);

    let manifest: toml::Table = std::fs::read_to_string(results.join("manifest-pcm-bench.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(3));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["versions"]["multislam"].is_str());
    let artifacts = manifest["artifacts"].as_table().unwrap();
    assert!(artifacts.contains_key("pcm_bench.csv") && artifacts.contains_key("pcm_selection.csv"));

    let report = multislam(&["report", "--config", &cfg, "--out", res]);
    assert_eq!(report.status.code(), Some(0));
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("pcm_bench.csv") && text.contains("largest clique size gap"));
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(multislam(&["generate", "--config", &cfg, "--out", d.to_str().unwrap()]).status.code(), Some(0));
    }
    let ga = std::fs::read(a.join("graph.g2o")).unwrap();
    assert!(!ga.is_empty());
    assert_eq!(ga, std::fs::read(b.join("graph.g2o")).unwrap());
    assert!(a.join("groundtruth_robot1.tum").is_file());
    let ma = std::fs::read_to_string(a.join("manifest-generate.toml")).unwrap();
    let mb = std::fs::read_to_string(b.join("manifest-generate.toml")).unwrap();
    let digest = |m: &str| m.parse::<toml::Table>().unwrap()["config_sha256"].as_str().unwrap().to_string();
    assert_eq!(digest(&ma), digest(&mb));
}
