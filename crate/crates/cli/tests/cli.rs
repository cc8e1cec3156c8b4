//! End-to-end CLI runs on a micro configuration: generate -> train -> evaluate
//! -> plot, plus the utility subcommands and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cospec")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn cospec")
}

fn write_micro_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("micro.toml");
    let toml = r#"
seed = 5
cosets = 4
interval_ratio = 16
samples_per_coset = 100
num_satellites = 3
snr_grid_db = [0.0]
loss_rates = [0.02]
num_signals = [2, 3]
train_scenes = 6
val_scenes = 2
test_scenes = 3
compressor_epochs = 2
embedding_dim = 46
encoder_hidden = 24
decoder_hidden = 24
heads = 2

[schedule]
epochs = 2
batch_size = 8
peak_lr = 0.001
warmup_epochs = 5

[glss]
dense1_out = 12
gat1_out = 6
gat2_out = 6
"#;
    std::fs::write(&path, toml).unwrap();
    path
}

#[test]
fn full_workflow_on_micro_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_micro_config(dir);
    let cfg = cfg.to_str().unwrap();

    let out = run(dir, &["--config", cfg, "generate", "--split", "all", "--raw-scenes", "1"]);
    assert!(out.status.success(), "generate: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/dataset/train.f32").exists());
    assert!(dir.join("out/dataset/train.json").exists());
    assert!(dir.join("out/scenes/scene00000.f32").exists());

    for (cmd, ckpt) in [("train-cae", "out/cae"), ("train-ae", "out/ae")] {
        let out = run(dir, &["--config", cfg, cmd, "--data", "out/dataset/train"]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.join(ckpt).join("manifest.json").exists());
        assert!(dir.join(ckpt).join("train_log.csv").exists());
    }

    for (cmd, ckpt) in [("train-glss", "out/glss"), ("train-dcs", "out/dcs")] {
        let out = run(
            dir,
            &["--config", cfg, cmd, "--data", "out/dataset/train", "--cae", "out/cae"],
        );
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.join(ckpt).join("manifest.json").exists());
    }

    let out = run(
        dir,
        &[
            "--config", cfg, "evaluate", "--cae", "out/cae", "--ae", "out/ae", "--glss",
            "out/glss", "--dcs", "out/dcs", "--visual",
        ],
    );
    assert!(out.status.success(), "evaluate: {}", String::from_utf8_lossy(&out.stderr));
    let results = dir.join("out/results.csv");
    assert!(results.exists());
    assert!(dir.join("out/recovery_visual.svg").exists());
    let text = std::fs::read_to_string(&results).unwrap();
    assert!(text.starts_with("model,snr_db,loss_rate,num_signals,metric,value,seed"));
    assert!(text.contains("cae+glss"));

    // Determinism: a second evaluate produces byte-identical CSV.
    let before = std::fs::read(&results).unwrap();
    let out = run(
        dir,
        &[
            "--config", cfg, "evaluate", "--cae", "out/cae", "--ae", "out/ae", "--glss",
            "out/glss", "--dcs", "out/dcs",
        ],
    );
    assert!(out.status.success());
    assert_eq!(before, std::fs::read(&results).unwrap());

    let out = run(dir, &["--config", cfg, "plot", "--table", "out/results.csv"]);
    assert!(out.status.success(), "plot: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/recovery_mse.svg").exists());
    assert!(dir.join("out/sensing_accuracy.svg").exists());
}

#[test]
fn doppler_flops_and_packet_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_micro_config(dir);
    let cfg = cfg.to_str().unwrap();

    let out = run(
        dir,
        &["--config", cfg, "analyze-doppler", "--shifts", "6", "--duration", "2048"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean |off-diagonal|"));
    assert!(dir.join("out/doppler_pearson.csv").exists());
    assert!(dir.join("out/doppler_pearson.svg").exists());

    let out = run(dir, &["--config", cfg, "flops"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("MFLOPs"));
    assert!(stdout.contains("K= 3"));

    let out = run(dir, &["dump-packets", "--m", "92", "--rate", "0.5", "--seed", "3"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    // 92 floats = 368 bytes -> 2 packets, each line starts with the sync byte.
    assert_eq!(stdout.matches("packet").count(), 3); // 2 dumps + summary line
    assert!(stdout.contains("47"));
    assert!(stdout.contains("2 packets"));
}

#[test]
fn ablate_micro_axis_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_micro_config(dir);
    let cfg = cfg.to_str().unwrap();
    let out = run(dir, &["--config", cfg, "ablate", "--axis", "sampling_mode"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.join("out/ablate_sampling_mode.csv");
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.contains("mode=nyquist"));
    assert!(text.contains("mode=subnyquist"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Config error -> 2.
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "embedding_dim = 999999\n").unwrap();
    let out = run(dir, &["--config", bad.to_str().unwrap(), "flops"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Unknown profile -> config error -> 2.
    let out = run(dir, &["--profile", "bogus", "flops"]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown ablation axis -> 2.
    let cfg = write_micro_config(dir);
    let out = run(dir, &["--config", cfg.to_str().unwrap(), "ablate", "--axis", "nope"]);
    assert_eq!(out.status.code(), Some(2));

    // Missing dataset file -> generic failure 1.
    let out = run(
        dir,
        &["--config", cfg.to_str().unwrap(), "train-cae", "--data", "missing/base"],
    );
    assert_eq!(out.status.code(), Some(1));
}
