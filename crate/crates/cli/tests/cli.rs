use std::path::Path;
use std::process::{Command, Output};

fn multifocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multifocal")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = multifocal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn corpus(dir: &Path) -> String {
    let data = s(&dir.join("data"));
    ok(&[
        "--seed", "4", "synth", "--out", &data, "--types", "3", "--outlier-types", "1", "--grains", "6", "--planes", "5",
    ]);
    data
}

#[test]
fn version_names_formats() {
    let v = ok(&["--version"]);
    assert!(v.contains("feature catalog 1"), "{v}");
    assert!(v.contains("model format 1"), "{v}");
}

#[test]
fn help_lists_defaults() {
    let h = ok(&["--help"]);
    for key in ["\"balloon\"", "\"n_trees\": 500", "\"fraction\": 0.02", "\"repeats\": 10", "absolute_gradient"] {
        assert!(h.contains(key), "missing {key} in help");
    }
}

#[test]
fn usage_errors_exit_2() {
    let out = multifocal(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(multifocal(&["--threads", "0", "focus", "--stack", "x"]).status.code(), Some(2));
    assert_eq!(multifocal(&["train", "--features", "f.csv"]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1() {
    let out = multifocal(&["focus", "--stack", "/no/such/stack"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[file_not_found]"));
}

#[test]
fn stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let stack = s(&dir.path().join("data/type_b/stack_002"));
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("data/type_b/stack_002/truth.json")).unwrap())
            .unwrap();
    let best = ok(&["focus", "--stack", &stack]);
    assert_eq!(best.trim(), truth["sharp_plane"].to_string());

    let seg = s(&dir.path().join("seg"));
    assert!(ok(&["segment", "--input", &stack, "--out", &seg]).contains("1 grain"));
    let grain = s(&dir.path().join("seg/grain_0.png"));
    let mask = s(&dir.path().join("seg/mask_0.png"));
    let single = s(&dir.path().join("single.csv"));
    ok(&["extract", "--grain", &grain, "--mask", &mask, "--out", &single]);

    let all = dir.path().join("all.csv");
    ok(&["extract", "--data", &data, "--out", &s(&all)]);
    let text = std::fs::read_to_string(&all).unwrap();
    let inliers = dir.path().join("in.csv");
    let outliers = dir.path().join("out.csv");
    let header = text.lines().next().unwrap();
    let keep = |want_outlier: bool| {
        let mut v = vec![header.to_string()];
        v.extend(
            text.lines()
                .skip(1)
                .filter(|l| (l.split(',').nth(1) == Some("type_d")) == want_outlier)
                .map(String::from),
        );
        v.join("\n") + "\n"
    };
    std::fs::write(&inliers, keep(false)).unwrap();
    std::fs::write(&outliers, keep(true)).unwrap();

    let sel = s(&dir.path().join("sel.json"));
    assert_eq!(ok(&["select", "--features", &s(&inliers), "--count", "7", "--out", &sel]).lines().count(), 7);

    let rf = s(&dir.path().join("rf.json"));
    ok(&["--seed", "2", "train", "--features", &s(&inliers), "--model", "rf", "--trees", "40", "--out", &rf]);
    let rf_again = s(&dir.path().join("rf2.json"));
    ok(&["--seed", "2", "train", "--features", &s(&inliers), "--model", "rf", "--trees", "40", "--out", &rf_again]);
    assert_eq!(std::fs::read(&rf).unwrap(), std::fs::read(&rf_again).unwrap());

    let pred = dir.path().join("pred.csv");
    ok(&["classify", "--model", &rf, "--features", &s(&inliers), "--out", &s(&pred)]);
    assert_eq!(std::fs::read_to_string(&pred).unwrap().lines().count(), 19);

    let profiles = s(&dir.path().join("profiles.json"));
    ok(&["auth", "--model", &rf, "--features", &s(&inliers), "--profiles", &profiles, "--build-profiles"]);
    let decisions = dir.path().join("decisions.csv");
    ok(&[
        "auth", "--model", &rf, "--features", &s(&outliers), "--profiles", &profiles, "--condition", "theta22", "--out",
        &s(&decisions),
    ]);
    let d = std::fs::read_to_string(&decisions).unwrap();
    assert!(d.starts_with("id,verdict,winner,Vp1,Vp2,threshold\n"));
    assert_eq!(d.lines().count(), 7);

    let broken = dir.path().join("broken.csv");
    let cut: Vec<String> = std::fs::read_to_string(&inliers)
        .unwrap()
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(5);
            f.join(",")
        })
        .collect();
    std::fs::write(&broken, cut.join("\n")).unwrap();
    let out = multifocal(&["classify", "--model", &rf, "--features", &s(&broken)]);
    assert_eq!(out.status.code(), Some(1));
    let column = header.split(',').nth(5).unwrap();
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schema_mismatch") && err.contains(column), "{err}");
}

#[test]
fn params_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let params = dir.path().join("params.json");
    std::fs::write(
        &params,
        r#"{"experiment": {"p_range": [2], "repeats": 1, "classifiers": ["dt"], "feature_fractions": []}}"#,
    )
    .unwrap();
    let out = s(&dir.path().join("rep"));
    ok(&["--params", &s(&params), "experiment", "--data", &data, "--out", &out, "--repeats", "2"]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["repeats"], 2);
    assert_eq!(summary["config"]["p_range"], serde_json::json!([2]));
    assert_eq!(summary["config"]["classifiers"], serde_json::json!(["dt"]));
    assert!(summary["echo"]["params"].as_str().unwrap().ends_with("params.json"));
    assert!(summary["echo"].get("threads").is_none());

    std::fs::write(&params, r#"{"experiment": {"bogus": 1}}"#).unwrap();
    let bad = multifocal(&["--params", &s(&params), "experiment", "--data", &data, "--out", &out]);
    assert_eq!(bad.status.code(), Some(1));
}
