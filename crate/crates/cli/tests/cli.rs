use std::path::Path;
use std::process::{Command, Output};

fn blindinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindinv"))
        .args(args)
        .env("BLINDINV_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, extra: &str) -> String {
    let body = format!(
        r#"{{
  "scenario": "deblur",
  "seed": 7,
  "output": "{out}",
  "checkpoint": "{ckpt}",
  "dataset_size": 48,
  "latent_dim": 8,
  "gan_epochs": 1,
  "gan_batch": 16,
  "n": 2,
  "epochs": 2,
  "surrogate_steps": 3,
  "latent_steps": 3{extra}
}}"#,
        out = dir.join("out").display(),
        ckpt = dir.join("gan.bin").display(),
    );
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_runs_end_to_end_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", "");
    let out = tmp.path().join("out");

    let o = blindinv(&["train-gan", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("gan.bin").exists());

    let o = blindinv(&["observe", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("observations").is_dir());

    let o = blindinv(&["solve", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = blindinv(&["--json", "baseline", "wiener", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let methods: Vec<&str> = summary["methods"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["solve", "wiener"]);

    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scenario,item,method,psnr,mse,l1,final_loss,seed,runtime_ms"));
    assert_eq!(lines.count(), 4);
    assert!(out.join("images").read_dir().unwrap().count() > 0);

    let o = blindinv(&["evaluate", &out.to_string_lossy()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("metrics.csv")).unwrap(), csv);

    std::fs::remove_dir_all(&out).unwrap();
    assert!(blindinv(&["solve", &cfg]).status.success());
    assert!(blindinv(&["baseline", "wiener", &cfg]).status.success());
    assert_eq!(std::fs::read_to_string(out.join("metrics.csv")).unwrap(), csv);
}

#[test]
fn parallel_trials_match_sequential() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", ",\n  \"trials\": 2");
    assert!(blindinv(&["train-gan", &cfg]).status.success());
    let out = tmp.path().join("out");
    assert!(blindinv(&["solve", &cfg]).status.success());
    let sequential = std::fs::read(out.join("metrics.csv")).unwrap();
    std::fs::remove_dir_all(&out).unwrap();
    let o = blindinv(&["--parallel", "solve", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("metrics.csv")).unwrap(), sequential);
    assert!(out.join("trial_1").join("solve").is_dir());
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("deblur", "superres");
    std::fs::write(&cfg, text).unwrap();
    let o = blindinv(&["solve", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("superres"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", ",\n  \"aplha\": 0.1");
    let o = blindinv(&["solve", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("aplha"), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_is_an_io_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", "");
    let o = blindinv(&["solve", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("gan.bin"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = blindinv(&["observe", "/nonexistent/exp.json"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(blindinv(&["baseline", "magic", "x.json"]).status.code(), Some(2));
    assert_eq!(blindinv(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(blindinv(&["solve"]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let o = blindinv(&["gradcheck", "--trials", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().count() >= 30);
    assert!(stdout.lines().all(|l| l.starts_with("ok")));
}
