use std::process::{Command, Output};

fn stgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stgp")).args(args).output().unwrap()
}

#[test]
fn race_then_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let race = stgp(&["race", "--variant", "nominal", "--duration", "1", "--out", out]);
    assert!(race.status.success(), "{}", String::from_utf8_lossy(&race.stderr));
    assert!(dir.path().join("summary.json").is_file());

    let log = dir.path().join("log.csv");
    let replay = stgp(&["replay", log.to_str().unwrap(), "--variant", "stgp", "--out", out]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("replay.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "stgp");
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"seed": 1, "no_such_key": true}"#).unwrap();
    let run = stgp(&["race", "--config", config.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));

    let log = dir.path().join("log.csv");
    std::fs::write(&log, "# schema_version=99\nstep,time\n").unwrap();
    let run = stgp(&["replay", log.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("schema"));
}
