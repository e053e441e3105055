use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seeds = [0]

[env]
kind = "matrix_game"
payoffs = [[0.0, 1.0, -1.0], [1.0, 0.0, 0.5]]

[dataset]
composition = "100%[r,e]"
episodes = 30

[ardnem]
epochs = 40
hidden = 8
members = 2

[policy]
epochs = 40
eval_every = 20
eval_episodes = 4
"#;

fn sit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sit")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CONFIG);
    let out = dir.path().join("run");
    let o = sit(&["train", "--config", &cfg, "--method", "sit_no_gat", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = sit(&["report", "--in", out.to_str().unwrap(), "--plots"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("sit_no_gat"));
    assert!(out.join("plots/priority_hist.csv").is_file());
}

#[test]
fn gen_data_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CONFIG);
    let out = dir.path().join("data");
    let o = sit(&["gen-data", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let data = sit_core::trajstore::load_dataset(out.join("dataset.jsonl")).unwrap();
    assert_eq!(data.num_episodes(), 30);
}

#[test]
fn sweep_then_report_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CONFIG);
    let out = dir.path().join("sweep");
    let out = out.to_str().unwrap();
    let o = sit(&["sweep", "--config", &cfg, "--param", "eta", "--values", "0.5,2", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = sit(&["report", "--in", out]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    let unknown = write_config(dir.path(), "u.toml", &format!("typo = 3\n{CONFIG}"));
    let bad_value = write_config(dir.path(), "b.toml", &CONFIG.replace("episodes = 30", "episodes = 0"));
    let good = write_config(dir.path(), "g.toml", CONFIG);
    for args in [
        vec!["train", "--config", &unknown, "--out", out],
        vec!["train", "--config", &bad_value, "--out", out],
        vec!["train", "--config", &good, "--method", "dqn", "--out", out],
        vec!["sweep", "--config", &good, "--param", "gamma", "--values", "1", "--out", out],
        vec!["train", "--config", "/nonexistent.toml", "--out", out],
    ] {
        assert_eq!(sit(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn divergence_exits_with_3_and_leaves_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let text = CONFIG.replace("eval_episodes = 4", "eval_episodes = 4\nactor_lr = 1e300");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("run");
    let o = sit(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let report = sit_harness::RunReport::load(&out).unwrap();
    assert!(report.diverged());
    assert!(report.seeds[0].eval_mean.is_none());
}
