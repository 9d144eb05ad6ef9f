//! Command-line contract: exit codes, usage errors, self-test, manifests.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swigan"))
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(
        text.contains("Usage") || text.contains("usage"),
        "no usage text:\n{text}"
    );
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["selftest", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_passes_and_exits_0() {
    let out = bin().arg("selftest").output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[PASS]"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn failed_precondition_exits_1_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["data", "inspect"])
        .arg(dir.path().join("missing"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.cfg");
    std::fs::write(&spec, "grid_h=8\nnot_a_key=1\n").unwrap();
    let out = bin()
        .args(["data", "synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn synth_writes_dataset_scenario_communes_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("synth.cfg");
    std::fs::write(
        &spec,
        "grid_h=8\ngrid_w=8\nn_months=30\nn_covariates=2\ntrain_months=24\nval_months=2\nscenario_months=6\ncommune_rows=2\ncommune_cols=2\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    let st = bin()
        .args(["data", "synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&data)
        .args(["--seed", "7"])
        .status()
        .unwrap();
    assert!(st.success());
    assert!(data.join("swi.grd").exists());
    assert!(data.join("cov00.grd").exists());
    assert!(data.join("scenario").join("cov01.grd").exists());
    assert!(data.join("communes.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "data synth");
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);

    // inspect emits the CSV header and split boundaries
    let out = bin().args(["data", "inspect"]).arg(&data).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("variable,n_months,grid_h,grid_w,mean,std,min,max"));
    assert!(text.contains("train_end,24"));
}
