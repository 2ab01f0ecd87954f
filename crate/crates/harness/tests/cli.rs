use std::fs;
use std::path::Path;
use std::process::Command;

fn dendrofet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dendrofet")).args(args).output().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn hysteresis_run_is_reproducible_from_its_config() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = dendrofet(&["--experiment", "hysteresis", "--out", a.to_str().unwrap(), "--set", "hysteresis.cycles=1", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = a.join("config.toml");
    let out = dendrofet(&["--experiment", "hysteresis", "--out", b.to_str().unwrap(), "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["config_sha256"], mb["config_sha256"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["seed"], 5);
    let files: Vec<&str> = ma["outputs"].as_array().unwrap().iter().map(|o| o["file"].as_str().unwrap()).collect();
    assert!(files.contains(&"hysteresis.csv") && files.contains(&"config.toml"), "{files:?}");
}

#[test]
fn non_empty_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    let dir = tmp.path().to_str().unwrap();
    let args = ["--experiment", "hysteresis", "--out", dir, "--set", "hysteresis.cycles=1"];
    let out = dendrofet(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(dendrofet(&forced).status.success());
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    // Bad flag value.
    assert_eq!(dendrofet(&["--experiment", "nonsense"]).status.code(), Some(1));
    assert_eq!(dendrofet(&["--experiment", "hysteresis", "--threads", "0", "--out", &out_dir("t")]).status.code(), Some(1));
    assert_eq!(dendrofet(&["--experiment", "scaling-preset", "--out", &out_dir("p")]).status.code(), Some(1));
    // Bad configuration.
    let out = dendrofet(&["--experiment", "hysteresis", "--out", &out_dir("c"), "--set", "t_Fe=5nm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t_FE"));
    // Missing dataset.
    let out = dendrofet(&["--experiment", "train", "--out", &out_dir("d"), "--set", &format!("data.dir=\"{}\"", out_dir("none"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        let dir = tmp.path().join(format!("t{threads}"));
        let out = dendrofet(&["--experiment", "sweep-grid", "--out", dir.to_str().unwrap(), "--set", "sweep.step=2", "--threads", threads]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        manifest(&dir)["outputs"].clone()
    };
    assert_eq!(run("1"), run("3"));
}
