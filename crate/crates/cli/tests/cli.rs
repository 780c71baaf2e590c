use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const SMALL: &[&str] = &[
    "--set",
    "corpus.n_ped=400",
    "--set",
    "corpus.n_bg=400",
    "--set",
    "cluster.k=12",
    "--set",
    "tune.epochs=10",
    "--set",
    "toy.n_train=200",
    "--set",
    "toy.n_eval=80",
    "--set",
    "toy.epochs=2",
    "--set",
    "toy.seeds=[0,1]",
    "--set",
    "toy.ks=[0,6,12]",
];

fn aelem(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aelem"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let mut full = args.to_vec();
    full.extend_from_slice(SMALL);
    let o = aelem(out, &full);
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(
        o.status.success(),
        "{args:?} failed: {stdout}{}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout
}

fn manifest_stages(out: &Path) -> Vec<String> {
    std::fs::read_to_string(out.join("manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["stage"].as_str().unwrap().to_string()
        })
        .collect()
}

#[test]
fn gen_corpus_writes_corpus_and_manifest_entry() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-corpus"]);
    let lines = std::fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 800);
    assert_eq!(manifest_stages(dir.path()), ["gen-corpus"]);
    let entry: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(dir.path().join("manifest.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(entry["config"]["corpus"]["n_ped"], 400);
    assert!(entry["outputs"]["corpus.jsonl"].is_string());
}

#[test]
fn missing_input_names_the_producing_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-corpus"]);
    let o = aelem(dir.path(), &["cluster"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("embeddings.ldae"), "{err}");
    assert!(err.contains("aelem encode"), "{err}");
}

#[test]
fn unchanged_rerun_is_a_no_op_and_force_reruns() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-corpus"]);
    let before = std::fs::metadata(dir.path().join("corpus.jsonl"))
        .unwrap()
        .modified()
        .unwrap();
    let s = ok(dir.path(), &["gen-corpus"]);
    assert!(s.contains("up to date"), "{s}");
    assert_eq!(manifest_stages(dir.path()).len(), 1);
    let after = std::fs::metadata(dir.path().join("corpus.jsonl"))
        .unwrap()
        .modified()
        .unwrap();
    assert_eq!(before, after);
    let s = ok(dir.path(), &["gen-corpus", "--force"]);
    assert!(!s.contains("up to date"), "{s}");
    assert_eq!(manifest_stages(dir.path()).len(), 2);
}

#[test]
fn changed_config_reruns() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-corpus"]);
    let o = aelem(dir.path(), &["gen-corpus", "--set", "corpus.seed=9"]);
    assert!(o.status.success());
    assert!(!String::from_utf8_lossy(&o.stdout).contains("up to date"));
    assert_eq!(manifest_stages(dir.path()).len(), 2);
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = aelem(dir.path(), &["gen-corpus", "--set", "cluster.k=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cluster.k"));

    let o = aelem(dir.path(), &["gen-corpus", "--set", "toy.sigma_v=-0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("toy.sigma_v"));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"tune": {"epochz": 3}}"#).unwrap();
    let o = aelem(
        dir.path(),
        &["gen-corpus", "--config", cfg.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tune.epochz"));
    assert!(!dir.path().join("manifest.jsonl").exists());
}

#[test]
fn file_provider_reads_an_external_container() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-corpus"]);
    ok(dir.path(), &["encode"]);
    let ext = dir.path().join("external.ldae");
    std::fs::copy(dir.path().join("embeddings.ldae"), &ext).unwrap();
    let other = tempfile::tempdir().unwrap();
    ok(other.path(), &["gen-corpus"]);
    ok(
        other.path(),
        &[
            "encode",
            "--set",
            "embedding.provider=file",
            "--set",
            &format!("embedding.path={}", ext.to_str().unwrap()),
        ],
    );
    assert_eq!(
        std::fs::read(ext).unwrap(),
        std::fs::read(other.path().join("embeddings.ldae")).unwrap()
    );
}

#[test]
fn file_provider_rejects_row_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-corpus"]);
    ok(dir.path(), &["encode"]);
    let ext = dir.path().join("external.ldae");
    std::fs::copy(dir.path().join("embeddings.ldae"), &ext).unwrap();

    let other = tempfile::tempdir().unwrap();
    let tiny = [
        "--set",
        "corpus.n_ped=10",
        "--set",
        "corpus.n_bg=10",
        "--set",
        "cluster.k=5",
        "--set",
        "toy.ks=[0,5]",
    ];
    let mut args = vec!["gen-corpus"];
    args.extend_from_slice(&tiny);
    assert!(aelem(other.path(), &args).status.success());

    let path = format!("embedding.path={}", ext.to_str().unwrap());
    let mut args = vec!["encode", "--set", "embedding.provider=file", "--set", &path];
    args.extend_from_slice(&tiny);
    let o = aelem(other.path(), &args);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("800 rows for 20 corpus lines"));
}

#[test]
fn full_pipeline_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for stage in [
        "gen-corpus",
        "encode",
        "cluster",
        "tune",
        "analyze",
        "train-toy",
        "sweep",
        "report",
    ] {
        ok(out, &[stage]);
    }
    for name in [
        "corpus.jsonl",
        "embeddings.ldae",
        "centroids.ldae",
        "assignments.json",
        "partition.json",
        "cluster_stats.json",
        "elements.ldae",
        "prompts.ldae",
        "head.ldae",
        "tune_curve.csv",
        "tune_summary.json",
        "attribute_report.json",
        "toy_runs.json",
        "overhead.json",
        "toy_model_seed0.ldae",
        "toy_model_seed1.ldae",
        "sweep.csv",
        "sweep.svg",
        "sweep.json",
        "report.md",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }

    // one data row per (K, seed) pair plus the header
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    let assignments: Vec<usize> =
        serde_json::from_str(&std::fs::read_to_string(out.join("assignments.json")).unwrap())
            .unwrap();
    assert_eq!(assignments.len(), 800);
    assert!(assignments.iter().all(|&a| a < 12));

    let curve = std::fs::read_to_string(out.join("tune_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 10);

    let report = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(report.contains("K = 12"));
    assert!(report.contains("## K sweep"));

    let stages = manifest_stages(out);
    assert_eq!(stages.len(), 8);
    // downstream stages stay up to date when nothing upstream changed
    assert!(ok(out, &["tune"]).contains("up to date"));
    // a forced upstream rerun with identical output keeps downstream current
    ok(out, &["cluster", "--force"]);
    assert!(ok(out, &["tune"]).contains("up to date"));
}

#[test]
fn gradcheck_passes_and_records_result() {
    let dir = tempfile::tempdir().unwrap();
    let o = aelem(dir.path(), &["gradcheck", "--seeds", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gradcheck.json")).unwrap())
            .unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["failures"], 0);
    assert!(v["max_rel_error"].as_f64().unwrap() < v["tolerance"].as_f64().unwrap());
}

#[test]
fn failed_gradcheck_record_exits_4_even_when_up_to_date() {
    let dir = tempfile::tempdir().unwrap();
    assert!(aelem(dir.path(), &["gradcheck", "--seeds", "1"])
        .status
        .success());
    let p = dir.path().join("gradcheck.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    v["passed"] = serde_json::Value::Bool(false);
    let bytes = serde_json::to_vec(&v).unwrap();
    std::fs::write(&p, &bytes).unwrap();
    // keep the manifest consistent so the stage counts as up to date
    let m = dir.path().join("manifest.jsonl");
    let mut entry: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&m).unwrap().trim()).unwrap();
    entry["outputs"]["gradcheck.json"] = hex::encode(Sha256::digest(&bytes)).into();
    std::fs::write(&m, format!("{entry}\n")).unwrap();

    let o = aelem(dir.path(), &["gradcheck", "--seeds", "1"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("up to date"));
    assert_eq!(o.status.code(), Some(4));

    // an edited output without a matching digest makes the suite run again
    std::fs::write(&p, b"{}").unwrap();
    assert!(aelem(dir.path(), &["gradcheck", "--seeds", "1"])
        .status
        .success());
}

#[test]
fn invalid_jobs_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = aelem(dir.path(), &["gen-corpus", "--jobs", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
