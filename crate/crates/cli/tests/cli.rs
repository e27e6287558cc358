use std::path::Path;
use std::process::{Command, Output};

fn mtsq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtsq"))
        .args(args)
        .env_remove("MTSQ_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mtsq(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for f in [&a, &b] {
        ok(&[
            "gen",
            "--n",
            "16",
            "--c",
            "8",
            "--m",
            "512",
            "--seed",
            "7",
            "--out",
            p(f),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.bin");
    let out = Command::new(env!("CARGO_BIN_EXE_mtsq"))
        .args(["gen", "--n", "16", "--c", "8", "--m", "512", "--out", p(&c)])
        .env("MTSQ_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn build_then_query_finds_the_source_window() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    let index = dir.path().join("d.idx");
    ok(&[
        "gen",
        "--n",
        "6",
        "--c",
        "3",
        "--m",
        "300",
        "--seed",
        "3",
        "--out",
        p(&data),
    ]);
    ok(&["build", "--dataset", p(&data), "--qlen", "32", "--out", p(&index)]);
    let out = ok(&[
        "query",
        "--dataset",
        p(&data),
        "--index",
        p(&index),
        "--series",
        "4",
        "--offset",
        "117",
        "--k",
        "3",
    ]);
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["rank"], 1);
    assert_eq!(lines[0]["series_id"], 4);
    assert_eq!(lines[0]["offset"], 117);
    assert_eq!(lines[0]["distance"], 0.0);
    assert!(lines[3]["stats"]["subsequences_total"].as_u64().unwrap() > 0);

    let inspect = ok(&["inspect", "--dataset", p(&data), "--index", p(&index)]);
    let summary: serde_json::Value = serde_json::from_str(inspect.trim()).unwrap();
    assert_eq!(summary["qlen"], 32);
    assert_eq!(summary["pivot_count"], 1);

    let pretty = ok(&[
        "query",
        "--dataset",
        p(&data),
        "--index",
        p(&index),
        "--workload",
        "3",
        "--parallel",
        "--pretty",
    ]);
    assert_eq!(pretty.matches("query ").count(), 3);
}

#[test]
fn csv_dataset_and_query_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("csv");
    let index = dir.path().join("i.idx");
    ok(&[
        "gen",
        "--n",
        "3",
        "--c",
        "2",
        "--m",
        "80",
        "--format",
        "csv",
        "--out",
        p(&data),
    ]);
    ok(&[
        "build",
        "--dataset",
        p(&data),
        "--qlen",
        "4",
        "--mode",
        "znorm",
        "--out",
        p(&index),
    ]);
    let q = dir.path().join("q.csv");
    std::fs::write(&q, "channel_1\n1\n2\n3\n5\n").unwrap();
    let out = ok(&[
        "query",
        "--dataset",
        p(&data),
        "--index",
        p(&index),
        "--query-file",
        p(&q),
    ]);
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    let index = dir.path().join("d.idx");
    ok(&["gen", "--n", "3", "--c", "2", "--m", "100", "--out", p(&data)]);
    ok(&["build", "--dataset", p(&data), "--qlen", "16", "--out", p(&index)]);

    let out = mtsq(&[
        "query",
        "--dataset",
        p(&data),
        "--index",
        p(&index),
        "--qlen",
        "20",
        "--series",
        "0",
        "--offset",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("qlen"));

    let out = mtsq(&[
        "query",
        "--dataset",
        p(&data),
        "--index",
        p(&index),
        "--channels",
        "5",
        "--series",
        "0",
        "--offset",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&index, b"garbage").unwrap();
    let out = mtsq(&["inspect", "--dataset", p(&data), "--index", p(&index)]);
    assert_eq!(out.status.code(), Some(2));

    let out = mtsq(&[
        "query",
        "--dataset",
        p(&dir.path().join("missing.bin")),
        "--index",
        p(&index),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_with_every_method_passes_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let csv = dir.path().join("r.csv");
    ok(&[
        "bench",
        "--n",
        "8",
        "--c",
        "4",
        "--m",
        "256",
        "--qlen",
        "32",
        "--queries",
        "4",
        "--k",
        "2",
        "--methods",
        "brute,mass,msindex,utsbase",
        "--repetitions",
        "1",
        "--out",
        p(&report),
        "--csv",
        p(&csv),
    ]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["schema_version"], 1);
    assert!(r["exactness_gate"].as_str().unwrap().starts_with("passed"));
    assert_eq!(r["methods"].as_array().unwrap().len(), 4);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 4 * 4);

    let out = mtsq(&["bench", "--methods", "rtree"]);
    assert_eq!(out.status.code(), Some(2));
}
