//! Drives the `cardioseg` binary on small configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const TINY: &str = r#"
seed = 11

[phantom]
shape = [24, 24, 24]
train_count = 2
test_count = 1

[transfer.optimizer]
epochs = 2

[segmentation]
scales = [1.0]

[segmentation.encoder]
stem_width = 4
stage_widths = [6]

[segmentation.aspp]
rates = [1, 2, 3]
branch_width = 4
head_widths = [6, 5]

[segmentation.schedule]
joint_epochs = 1
finetune_epochs = 1

[segmentation.augmentation]
crop = [24, 24]
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn cardioseg(config: &Path, output: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cardioseg"))
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(output)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree_hashes(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let hash = hex::encode(Sha256::digest(std::fs::read(&p).unwrap()));
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), hash));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_upstream_stage_names_the_command_to_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = cardioseg(&cfg, &tmp.path().join("run"), &["analyze"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("cardioseg ingest"), "{}", stderr(&o));
}

#[test]
fn phantom_generation_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[phantom]\nshape = [24, 24, 24]\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = cardioseg(&cfg, out, &["phantom"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ha = tree_hashes(&a.join("phantom"));
    assert_eq!(ha, tree_hashes(&b.join("phantom")));
    // 10 + 10 volumes, each with a label sidecar.
    let volumes = ha.iter().filter(|(p, _)| p.to_string_lossy().ends_with(".nii")).count();
    assert_eq!(volumes, 40);
}

#[test]
fn changed_settings_make_downstream_stages_stale() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), TINY);
    assert!(cardioseg(&cfg, &out, &["phantom"]).status.success());
    let o = cardioseg(&cfg, &out, &["--seed", "12", "ingest"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("stale"), "{}", stderr(&o));
}

#[test]
fn config_prints_a_round_trippable_document() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = cardioseg(&cfg, &tmp.path().join("run"), &["config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let printed = cardioseg_cli::PipelineConfig::from_toml(&text).unwrap();
    let mut original = cardioseg_cli::PipelineConfig::from_toml(TINY).unwrap();
    original.output = tmp.path().join("run");
    assert_eq!(printed, original);
    assert!(text.contains(&format!("# sha256 {}", original.hash())));
}

#[test]
fn bad_config_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[segmentation]\nscales = []\n");
    let o = cardioseg(&cfg, &tmp.path().join("run"), &["phantom"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let cfg = write_config(tmp.path(), "[segmentaton]\n");
    assert_eq!(cardioseg(&cfg, &tmp.path().join("run"), &["phantom"]).status.code(), Some(2));
}

#[test]
fn tiny_run_all_then_a_missing_score_map_blocks_the_vote() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), TINY);
    let o = cardioseg(&cfg, &out, &["run-all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("config sha256"));

    let csv = cardioseg(&cfg, &out, &["report", "--format", "csv"]);
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert!(csv.starts_with("variant,cases,myocardium_dice_mean"), "{csv}");
    assert_eq!(csv.lines().count(), 6);
    let json = cardioseg(&cfg, &out, &["report", "--format", "json"]);
    let report: cardioseg::metrics::MetricsReport = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(report.rows.len(), 5);

    let rerun = cardioseg(&cfg, &out, &["run-all"]);
    let stdout = String::from_utf8(rerun.stdout).unwrap();
    assert!(stdout.lines().all(|l| l.ends_with("up to date")), "{stdout}");

    std::fs::remove_file(out.join("predict/test-00/transferred-zx.safetensors")).unwrap();
    let o = cardioseg(&cfg, &out, &["ensemble", "--force"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("(zx, transferred)"), "{}", stderr(&o));
}
