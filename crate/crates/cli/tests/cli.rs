//! End-to-end runs of the `vqattack` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use vqattack_core::image_io::load_image;
use vqattack_core::vq_codec::{decode, encode, read_codebook};

fn vqattack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqattack"))
        .args(args)
        .env_remove("VQATTACK_ORACLE_URL")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vqattack(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic dataset plus a sorted L=16 codebook trained on it.
fn workspace(count: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["make-fixture", "--out", p(&data), "--count", count, "--seed", "3"]);
    let raw = dir.path().join("raw.vqcb");
    ok(&["train-codebook", "--images", p(&data), "--L", "16", "--block", "2x2", "--seed", "1", "--out", p(&raw)]);
    ok(&["sort-codebook", "--in", p(&raw), "--out", p(&dir.path().join("sorted.vqcb"))]);
    dir
}

fn digest(path: &Path) -> [u8; 32] {
    Sha256::digest(fs::read(path).unwrap()).into()
}

#[test]
fn decode_of_encode_matches_the_library() {
    let dir = workspace("6");
    let image = dir.path().join("data/syn0002.ppm");
    for book in ["raw.vqcb", "sorted.vqcb"] {
        let cb_path = dir.path().join(book);
        let idx_path = dir.path().join("x.vqix");
        let out_path = dir.path().join("x.ppm");
        ok(&["encode", "--image", p(&image), "--codebook", p(&cb_path), "--out", p(&idx_path)]);
        ok(&["decode", "--indices", p(&idx_path), "--codebook", p(&cb_path), "--out", p(&out_path)]);

        let cb = read_codebook(&fs::read(&cb_path).unwrap()).unwrap();
        let img = load_image(&fs::read(&image).unwrap()).unwrap();
        let expected = vqattack_core::image_io::save_image(&decode(&encode(&img, &cb).unwrap(), &cb).unwrap());
        assert_eq!(fs::read(&out_path).unwrap(), expected);
    }
    // indices against the raw codebook decode identically through the sorted one
    let idx = dir.path().join("raw.vqix");
    ok(&["encode", "--image", p(&image), "--codebook", p(&dir.path().join("raw.vqcb")), "--out", p(&idx)]);
    let (a, b) = (dir.path().join("a.ppm"), dir.path().join("b.ppm"));
    ok(&["decode", "--indices", p(&idx), "--codebook", p(&dir.path().join("raw.vqcb")), "--out", p(&a)]);
    ok(&["decode", "--indices", p(&idx), "--codebook", p(&dir.path().join("sorted.vqcb")), "--out", p(&b)]);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn identical_batch_runs_write_identical_files() {
    let dir = workspace("12");
    let run = |name: &str, workers: &str| {
        let report = dir.path().join(name);
        let out = ok(&[
            "batch", "--manifest", p(&dir.path().join("data/manifest.csv")),
            "--codebook", p(&dir.path().join("sorted.vqcb")),
            "--fixture", p(&dir.path().join("data/fixture.lsmw")),
            "--method", "de", "--population", "8", "--generations", "6", "--snapshots",
            "--seed", "9", "--workers", workers, "--report", p(&report),
        ]);
        (report, String::from_utf8(out.stdout).unwrap())
    };
    let (a, summary) = run("a", "1");
    let (b, _) = run("b", "1");
    let (c, _) = run("c", "3");
    assert!(summary.contains('%'));
    for file in ["report.json", "records.csv", "heatmap.csv", "trajectories.csv", "snapshots.csv", "summary.txt"] {
        assert_eq!(digest(&a.join(file)), digest(&b.join(file)), "{file}");
        assert_eq!(digest(&a.join(file)), digest(&c.join(file)), "{file} with 3 workers");
    }
    let rows = fs::read_to_string(a.join("records.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 12);
}

#[test]
fn attack_and_distance_profile() {
    let dir = workspace("4");
    let cb = dir.path().join("sorted.vqcb");
    let idx = dir.path().join("x.vqix");
    ok(&["encode", "--image", p(&dir.path().join("data/syn0000.ppm")), "--codebook", p(&cb), "--out", p(&idx)]);
    let report = dir.path().join("attack.json");
    let adv = dir.path().join("adv.ppm");
    let manifest = fs::read_to_string(dir.path().join("data/manifest.csv")).unwrap();
    let label = manifest.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string();
    ok(&[
        "attack", "--indices", p(&idx), "--codebook", p(&cb),
        "--fixture", p(&dir.path().join("data/fixture.lsmw")), "--true-label", &label,
        "--population", "10", "--generations", "4", "--report", p(&report),
        "--adversarial-image", p(&adv),
    ]);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["evaluations"], 50);
    assert_eq!(json["trajectory"].as_array().unwrap().len(), 5);
    assert!(load_image(&fs::read(adv).unwrap()).is_ok());

    let csv = dir.path().join("profile.csv");
    ok(&["distance-profile", "--codebook", p(&cb), "--ref", "0", "--out", p(&csv)]);
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 17);
    assert_eq!(text.lines().nth(1), Some("0,0"));
}

#[test]
fn validation_errors_exit_with_one_and_name_the_flag() {
    let dir = workspace("4");
    let common = |extra: &[&str]| {
        let mut v = vec![
            "batch".to_string(), "--manifest".into(), p(&dir.path().join("data/manifest.csv")).into(),
            "--codebook".into(), p(&dir.path().join("sorted.vqcb")).into(),
            "--report".into(), p(&dir.path().join("r")).into(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let fixture = dir.path().join("data/fixture.lsmw");
    for (extra, flag) in [
        (vec!["--fixture", p(&fixture), "--population", "3"], "--population"),
        (vec!["--fixture", p(&fixture), "--scale", "3"], "--scale"),
        (vec!["--fixture", p(&fixture), "--method", "genetic"], "--method"),
        (vec![], "--oracle"),
    ] {
        let args = common(&extra);
        let out = vqattack(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(out.status.code(), Some(1), "{extra:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(flag), "{extra:?}");
    }
    let out = vqattack(&["train-codebook", "--images", p(&dir.path().join("data")), "--L", "1", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--L"));
}

#[test]
fn unreachable_oracle_exits_with_two() {
    let dir = workspace("4");
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let (manifest, codebook, report) = (
        dir.path().join("data/manifest.csv"),
        dir.path().join("sorted.vqcb"),
        dir.path().join("r"),
    );
    let base = ["batch", "--manifest", p(&manifest), "--codebook", p(&codebook), "--report", p(&report)];
    let mut args = base.to_vec();
    args.extend(["--oracle", &url]);
    assert_eq!(vqattack(&args).status.code(), Some(2));

    // the environment variable stands in for --oracle
    let out = Command::new(env!("CARGO_BIN_EXE_vqattack"))
        .args(base)
        .env("VQATTACK_ORACLE_URL", &url)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
