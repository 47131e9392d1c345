use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn autoddpm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autoddpm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const TINY: &str = r#"
seed = 1
data_dir = "data"
model_dir = "model"
denoiser = "analytic"

[data]
n_train = 6
n_val = 2
n_test_healthy = 2
n_test_anomalous = 3
class_weights = [1.0, 1.0, 1.0]

[data.phantom]
height = 16
width = 16

[arch]
base_channels = 8
channel_mults = [1, 2]
blocks_per_level = 1
groups = 4
time_dim = 16
time_hidden = 32

[train]
epochs = 1
batch_size = 4

[pipeline]
t_mask = 30
t_stitch = 10
n_resample = 1

[experiment]
noise_levels = [10, 30]
eval_seeds = 2
panels = 1
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn usage_errors_exit_1() {
    let dir = workspace();
    assert_eq!(code(&autoddpm(&[], dir.path())), 1);
    assert_eq!(code(&autoddpm(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&autoddpm(&["--help"], dir.path())), 0);
    fs::write(dir.path().join("bad.toml"), "unknown_key = 3\n").unwrap();
    let o = autoddpm(&["generate-data", "--config", "bad.toml"], dir.path());
    assert_eq!(code(&o), 1, "{}", text(&o));
    fs::write(dir.path().join("bad.toml"), "[pipeline]\nt_stitch = 500\n").unwrap();
    assert_eq!(code(&autoddpm(&["generate-data", "--config", "bad.toml"], dir.path())), 1);
}

#[test]
fn generate_data_is_idempotent_and_guarded() {
    let dir = workspace();
    let o = autoddpm(&["generate-data", "--config", "tiny.toml"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let manifest = dir.path().join("data/manifest.json");
    let first = fs::read(&manifest).unwrap();
    let o = autoddpm(&["generate-data", "--config", "tiny.toml"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(text(&o).contains("up to date"));
    // A different seed changes the data section.
    let o = autoddpm(&["generate-data", "--config", "tiny.toml", "--seed", "2"], dir.path());
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("--force"));
    fs::write(dir.path().join("data/keep.txt"), "mine").unwrap();
    let o = autoddpm(&["generate-data", "--config", "tiny.toml", "--seed", "2", "--force"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_ne!(fs::read(&manifest).unwrap(), first);
    assert!(dir.path().join("data/keep.txt").exists());
}

#[test]
fn train_resumes_and_matches_a_single_run() {
    let dir = workspace();
    assert_eq!(code(&autoddpm(&["generate-data", "--config", "tiny.toml"], dir.path())), 0);
    let twice = TINY.replace("epochs = 1", "epochs = 2");
    fs::write(dir.path().join("two.toml"), &twice).unwrap();
    let o = autoddpm(&["train", "--config", "tiny.toml", "--out", "split"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = autoddpm(&["train", "--config", "two.toml", "--out", "split"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("epochs 1..2"), "{}", text(&o));
    let o = autoddpm(&["train", "--config", "two.toml", "--out", "whole"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
    for f in ["checkpoint.ckpt", "loss.csv"] {
        assert_eq!(
            fs::read(dir.path().join("split").join(f)).unwrap(),
            fs::read(dir.path().join("whole").join(f)).unwrap(),
            "{f}"
        );
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("whole/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs_done"], 2);
    // Changing the optimizer under an existing checkpoint needs --force.
    let changed = twice.replace("batch_size = 4", "batch_size = 2");
    fs::write(dir.path().join("changed.toml"), changed).unwrap();
    assert_eq!(code(&autoddpm(&["train", "--config", "changed.toml", "--out", "whole"], dir.path())), 1);
    let o = autoddpm(&["train", "--config", "changed.toml", "--out", "whole", "--force"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o));
}

#[test]
fn detect_writes_outputs_and_reports_bad_input() {
    let dir = workspace();
    assert_eq!(code(&autoddpm(&["generate-data", "--config", "tiny.toml"], dir.path())), 0);
    let o = autoddpm(
        &["detect", "--config", "tiny.toml", "--input", "data/test-a-00000.img", "--out", "det"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    for f in ["final_map.img", "final_map.png", "mask.mask", "metadata.json", "run_config.toml"] {
        assert!(dir.path().join("det").join(f).is_file(), "{f}");
    }
    fs::write(dir.path().join("junk.img"), b"not an image").unwrap();
    let o = autoddpm(&["detect", "--config", "tiny.toml", "--input", "junk.img", "--out", "det2"], dir.path());
    assert_eq!(code(&o), 2, "{}", text(&o));
    let o = autoddpm(&["detect", "--config", "tiny.toml", "--input", "absent.img"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = workspace();
    assert_eq!(code(&autoddpm(&["generate-data", "--config", "tiny.toml"], dir.path())), 0);
    fs::write(dir.path().join("unet.toml"), TINY.replace("\"analytic\"", "\"unet\"")).unwrap();
    let o = autoddpm(&["noise-paradox", "--config", "unet.toml", "--out", "np"], dir.path());
    assert_eq!(code(&o), 2, "{}", text(&o));
}

#[test]
fn experiments_exit_0_or_3_and_rerun_identically() {
    let dir = workspace();
    assert_eq!(code(&autoddpm(&["generate-data", "--config", "tiny.toml"], dir.path())), 0);
    for cmd in ["noise-paradox", "size-strata", "ablate"] {
        let o = autoddpm(&[cmd, "--config", "tiny.toml", "--out", "a", "--workers", "1"], dir.path());
        let c = code(&o);
        assert!(c == 0 || c == 3, "{cmd}: {}", text(&o));
        assert_eq!(text(&o).lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), 2);
        assert_eq!(c == 3, text(&o).contains("FAIL"));
        let o = autoddpm(&[cmd, "--config", "a/run_config.toml", "--out", "b", "--workers", "2"], dir.path());
        assert_eq!(code(&o), c, "{}", text(&o));
        for f in ["records.csv", "table.csv", "trends.csv"] {
            assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
        }
    }
}

#[test]
fn experiment_without_dataset_is_a_data_error() {
    let dir = workspace();
    let o = autoddpm(&["ablate", "--config", "tiny.toml", "--out", "x"], dir.path());
    assert_eq!(code(&o), 2, "{}", text(&o));
}
