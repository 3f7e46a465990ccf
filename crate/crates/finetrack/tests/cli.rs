use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn finetrack(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finetrack"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawning the finetrack binary")
}

fn succeed(args: &[&str], out: &Path) -> Output {
    let o = finetrack(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn trained_toy() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    succeed(&["train", "--config", toy_config().to_str().unwrap()], dir.path());
    dir
}

fn totals(log: &str) -> Vec<f64> {
    log.lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["total"]
                .as_f64()
                .unwrap()
        })
        .collect()
}

#[test]
fn toy_training_logs_every_step_and_lowers_the_loss() {
    let dir = trained_toy();
    let log = fs::read_to_string(dir.path().join("loss_log.jsonl")).unwrap();
    // 4 epochs; two videos of 24 frames keep 19 for training, i.e. two
    // 8-frame segments each.
    let t = totals(&log);
    assert_eq!(t.len(), 4 * 4);
    assert!(t.iter().all(|v| v.is_finite()));
    assert!(t[t.len() - 1] < t[0], "{} -> {}", t[0], t[t.len() - 1]);
    for f in ["checkpoint.safetensors", "config.toml", "reid_metrics.txt"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
}

#[test]
fn zero_frame_sequence_gives_empty_result_file() {
    let dir = trained_toy();
    let config = dir.path().join("empty.toml");
    let toy = fs::read_to_string(toy_config()).unwrap();
    fs::write(
        &config,
        format!("{toy}\n[[track.sequences]]\nname = \"empty\"\nkind = \"lanes\"\nidentities = [0]\nframes = 0\n"),
    )
    .unwrap();
    succeed(&["track", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(fs::read_to_string(dir.path().join("results/empty.txt")).unwrap(), "");
    assert!(!fs::read_to_string(dir.path().join("results/crossing.txt"))
        .unwrap()
        .is_empty());
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, res) = (dir.path().join("gt"), dir.path().join("results"));
    fs::create_dir_all(&gt).unwrap();
    fs::create_dir_all(&res).unwrap();
    let mut gt_rows = String::new();
    let mut res_rows = String::new();
    for f in 1..=10 {
        for id in 1..=3 {
            let x = 40 * id + f;
            gt_rows.push_str(&format!("{f},{id},{x},10,20,48,1,1,1\n"));
            res_rows.push_str(&format!("{f},{id},{x},10,20,48,0.9,-1,-1,-1\n"));
        }
    }
    fs::write(gt.join("walk.txt"), gt_rows).unwrap();
    fs::write(res.join("walk.txt"), res_rows).unwrap();
    let o = succeed(&["eval"], dir.path());
    let metrics = fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert!(metrics.contains("walk.mota=1\n"), "{metrics}");
    assert!(metrics.contains("walk.idf1=1\n"), "{metrics}");
    assert!(metrics.contains("walk.id_switches=0\n"), "{metrics}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("walk"));
}

#[test]
fn demo_writes_six_part_masks_per_target() {
    let dir = trained_toy();
    succeed(&["demo", "--config", toy_config().to_str().unwrap()], dir.path());
    let names: Vec<String> = fs::read_dir(dir.path().join("demo"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    for id in 0..2 {
        let parts = names
            .iter()
            .filter(|n| n.starts_with(&format!("id{id}_part")) && n.ends_with(".png"))
            .count();
        assert_eq!(parts, 6, "target {id}: {names:?}");
        assert!(names.contains(&format!("id{id}_global.png")));
    }
    assert!(names.contains(&"distance_fused.png".to_string()));
    let frame = image::open(dir.path().join("demo/id0_part0.png")).unwrap();
    assert!(frame.width() > 0 && frame.height() > 0);
}

#[test]
fn missing_checkpoint_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.safetensors");
    let o = finetrack(
        &[
            "track",
            "--config",
            toy_config().to_str().unwrap(),
            "--checkpoint",
            missing.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nowhere.safetensors"), "{err}");
}

#[test]
fn malformed_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nparts = \"six\"\n").unwrap();
    let o = finetrack(&["train", "--config", bad.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());

    fs::create_dir_all(dir.path().join("gt")).unwrap();
    fs::create_dir_all(dir.path().join("results")).unwrap();
    fs::write(dir.path().join("gt/a.txt"), "1,1,0,0,10,10,1,1,1\n").unwrap();
    fs::write(dir.path().join("results/a.txt"), "1,one,0,0,10,10\n").unwrap();
    let o = finetrack(&["eval"], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("a.txt"), "{err}");
}

#[test]
fn flags_override_config_and_resolved_config_is_written() {
    let dir = tempfile::tempdir().unwrap();
    succeed(
        &["train", "--config", toy_config().to_str().unwrap(), "--seed", "77"],
        dir.path(),
    );
    let written: toml::Value = toml::from_str(&fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(written["seed"].as_integer(), Some(77));
    assert_eq!(written["model"]["unified_channels"].as_integer(), Some(12));
    // A different seed trains a different model.
    let other = trained_toy();
    assert_ne!(
        fs::read(dir.path().join("loss_log.jsonl")).unwrap(),
        fs::read(other.path().join("loss_log.jsonl")).unwrap()
    );
}
