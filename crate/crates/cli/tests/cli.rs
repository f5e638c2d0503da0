//! End-to-end CLI smoke tests against a tiny synthetic dataset.

use std::path::Path;
use std::process::Command;

fn synth() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparseshape-synth"))
}

fn sparseshape() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparseshape"))
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut config = sparseshape_core::trainer::TrainConfig::desk_scale();
    config.dataset = dir.join("data");
    config.out_dir = dir.join("run");
    config.seed = 1;
    config.pretrain_steps = 40;
    config.pretrain_batch = 256;
    config.pretrain_pool = 4000;
    config.pretrain_eikonal_points = 32;
    config.joint_steps = 6;
    config.rays_per_batch = 16;
    config.budget = sparseshape_core::trainer::BudgetConfig {
        coarse: 6,
        fine: 4,
        background: 4,
        rounds: 2,
    };
    config.validation_interval = 0;
    config.checkpoint_interval = 0;
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn full_pipeline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");

    let out = synth()
        .args([data.to_str().unwrap(), "--views", "4", "--size", "24"])
        .output()
        .unwrap();
    assert!(out.status.success(), "synth: {}", String::from_utf8_lossy(&out.stderr));

    let out = sparseshape().args(["validate", data.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "validate: {}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));

    let config = write_tiny_config(dir.path());
    let run_dir = dir.path().join("run");
    let run = |args: &[&str]| {
        let out = sparseshape()
            .args(args)
            .args(["--config", config.to_str().unwrap(), "--out", run_dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).to_string()
    };

    run(&["pretrain"]);
    assert!(run_dir.join("ckpt/pretrain.ckpt").exists());
    run(&["train", "--views", "3"]);
    assert!(run_dir.join("ckpt/latest.ckpt").exists());
    assert!(run_dir.join("losses.csv").exists());
    assert!(run_dir.join("config.toml").exists());

    run(&["render", "--camera", "cam_000", "--outputs", "rgb,depth,normal"]);
    assert!(run_dir.join("renders/view_cam_000_rgb.png").exists());
    assert!(run_dir.join("renders/view_cam_000_depth.bin").exists());
    assert!(run_dir.join("renders/view_cam_000_normal.png").exists());

    // Idempotency: rerunning the command reproduces identical bytes.
    let first = std::fs::read(run_dir.join("renders/view_cam_000_rgb.png")).unwrap();
    run(&["render", "--camera", "cam_000", "--outputs", "rgb"]);
    let second = std::fs::read(run_dir.join("renders/view_cam_000_rgb.png")).unwrap();
    assert_eq!(first, second, "re-rendering must be byte-identical");

    run(&["extract", "--grid", "24"]);
    assert!(run_dir.join("mesh/mesh.obj").exists());

    let eval_out = run(&["eval"]);
    assert!(run_dir.join("metrics.json").exists());
    assert!(eval_out.contains("psnr"), "eval printed: {eval_out}");

    run(&["edit", "--omit", "sphere_0", "--camera", "cam_001"]);
    assert!(run_dir.join("renders/edited_cam_001_rgb.png").exists());

    // The lock file is released after every command.
    assert!(!run_dir.join(".lock").exists());
}

#[test]
fn train_without_pretrain_checkpoint_fails_clearly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth()
        .args([data.to_str().unwrap(), "--views", "3", "--size", "16"])
        .output()
        .unwrap();
    let config = write_tiny_config(dir.path());
    let out = sparseshape()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("run2").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("no-prior") || msg.contains("pretrain"), "stderr: {msg}");
}

#[test]
fn validate_rejects_broken_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth()
        .args([data.to_str().unwrap(), "--views", "3", "--size", "16"])
        .output()
        .unwrap();
    std::fs::remove_file(data.join("images/cam_000.png")).unwrap();
    let out = sparseshape().args(["validate", data.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("missing file"));
}

#[test]
fn stale_lock_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth()
        .args([data.to_str().unwrap(), "--views", "3", "--size", "16"])
        .output()
        .unwrap();
    let config = write_tiny_config(dir.path());
    let run_dir = dir.path().join("run");
    std::fs::create_dir_all(&run_dir).unwrap();
    std::fs::write(run_dir.join(".lock"), b"").unwrap();
    let out = sparseshape()
        .args([
            "pretrain",
            "--config",
            config.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}
