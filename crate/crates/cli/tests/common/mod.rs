#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small enough to train in a couple of seconds.
pub const TINY_CONFIG: &str = r#"
seed = 11
scenario = "S2"
out_dir = "out"

[data]
kind = "synth"
subjects = 5
genuine_per_subject = 6
forged_per_subject = 4
train_subjects = 3
references = 3

[data.generator]
base_length = [60, 80]

[ae]
preset = "japanese-t4"
units_per_direction = 4
max_epochs = 3
batch_size = 16

[siamese]
leg_units = 8
max_epochs = 4
batch_size = 64
"#;

pub fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, TINY_CONFIG).unwrap();
    p
}

pub fn sigver(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sigver"));
    cmd.args(args).env_remove("SIGVER_SEED").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("run sigver")
}

pub fn ok(args: &[&str]) -> Output {
    let out = sigver(args, &[]);
    assert!(
        out.status.success(),
        "sigver {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
