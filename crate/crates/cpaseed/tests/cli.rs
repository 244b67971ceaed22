use std::path::Path;
use std::process::{Command, Output};

use cpaseed::io::AtlasFile;

fn cpaseed(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpaseed")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
[dataset]
n = 60

[model]
width = 6
depth = 2

[optimizer]
lr = 1e-2
epochs = 6

[schedule]
enumerate_every = 3
seeds = [0, 1]

[output]
dir = "runs/seeded"
"#;

#[test]
fn train_then_enumerate_yields_regions() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = cpaseed(&["train", "tiny.toml", "--seed", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = dir.path().join("runs/seeded/seed_1/checkpoint.json");
    assert!(ck.exists());
    assert!(!dir.path().join("runs/seeded/seed_0").exists());

    let o = cpaseed(&["enumerate", ck.to_str().unwrap(), "--out", "atlas.json"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n: usize = stdout(&o).trim().parse().unwrap();
    assert!(n > 0);
    let atlas = AtlasFile::load(&dir.path().join("atlas.json")).unwrap();
    assert_eq!(atlas.region_count, n);
    assert_eq!(atlas.epoch, Some(6));

    let o =
        cpaseed(&["plot", "atlas.json", "--data", "runs/seeded/seed_1/data/train.csv", "--out", "p.svg"], dir.path());
    assert!(o.status.success());
    let svg = std::fs::read_to_string(dir.path().join("p.svg")).unwrap();
    assert_eq!(svg.matches("class=\"cell\"").count(), n);
}

#[test]
fn train_all_seeds_then_compare_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("seeded.toml"), TINY).unwrap();
    std::fs::write(
        dir.path().join("base.toml"),
        TINY.replace("runs/seeded", "runs/base") + "\n[penalty]\nalpha = 0.0\n",
    )
    .unwrap();
    for cfg in ["seeded.toml", "base.toml"] {
        assert!(cpaseed(&["train", cfg], dir.path()).status.success());
    }
    let o = cpaseed(&["compare", "runs/base", "runs/seeded", "--out", "cmp.json"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cmp: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("cmp.json")).unwrap()).unwrap();
    assert_eq!(cmp["seeded"]["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(cmp["early_last"], 1);

    let o = cpaseed(
        &[
            "histogram",
            "runs/seeded/seed_0/checkpoint.json",
            "runs/seeded/seed_0/data/train.csv",
            "--against",
            "runs/base/seed_0/checkpoint.json",
            "--layer",
            "2",
            "--out",
            "h.svg",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 4);
    assert!(std::fs::read_to_string(dir.path().join("h.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpaseed(&["train", "absent.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.toml"));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[optimizer]\nlr = \"fast\"\n").unwrap();
    let o = cpaseed(&["train", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("optimizer.lr"));
}

#[test]
fn verify_lower_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpaseed(&["verify", "--suite", "lower", "--instances", "1000", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["suite"], "lower");
    assert_eq!(r["holds"], 1000);
    assert_eq!(r["violated"], 0);
    assert_eq!(r["passed"], true);
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!cpaseed(&["verify", "--suite", "sideways"], dir.path()).status.success());
    assert_eq!(cpaseed(&["enumerate", "nope.json", "--out", "a.json"], dir.path()).status.code(), Some(2));
    assert_eq!(cpaseed(&["plot", "nope.json"], dir.path()).status.code(), Some(2));
    assert!(cpaseed(&["--help"], dir.path()).status.success());
    for sub in ["train", "enumerate", "verify", "histogram", "compare", "plot"] {
        let o = cpaseed(&[sub, "--help"], dir.path());
        assert!(o.status.success() && stdout(&o).contains("Usage"), "{sub}");
    }
}
