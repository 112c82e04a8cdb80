use std::path::Path;
use std::process::{Command, Output};

use spinetree::theory::spine_yield;
use spinetree::{AcceptanceModel, TreeShape};

fn spinetree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinetree")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = spinetree(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn small_corpus(dir: &Path, preset: &str) -> String {
    let path = dir.join(format!("{preset}.json"));
    ok(&["corpus-gen", "--preset", preset, "--prompts", "6", "--max-tokens", "128", "--out", path.to_str().unwrap()]);
    path.to_str().unwrap().to_string()
}

#[test]
fn ar_engine_has_unit_tau() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path(), "rep09");
    let out = tmp.path().join("ar");
    ok(&["decode", "--corpus", &corpus, "--engine", "ar", "--out", out.to_str().unwrap()]);
    let r = report(&out);
    let s = &r["settings"][0];
    assert_eq!(s["tau"]["mean"], 1.0);
    assert_eq!(s["tau"]["iqr"], 0.0);
    assert_eq!(s["speedup_proxy"], 1.0);
    assert!(s["synergy_ratio"].is_null());
    let csv = std::fs::read_to_string(out.join("per_prompt.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(5) == Some("1")));
}

#[test]
fn spine_beats_transitions_on_repetitive_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rep09");
    ok(&["decode", "--corpus", "rep09", "--engine", "spine", "--baselines", "--out", out.to_str().unwrap()]);
    let s = &report(&out)["settings"][0];
    let tau = s["tau"]["mean"].as_f64().unwrap();
    assert!(tau > s["baselines"]["tr"].as_f64().unwrap());
    assert!(s["synergy_ratio"].as_f64().unwrap() > 1.0);
    assert!(s["heterogeneity"]["ratio"].as_str().unwrap().parse::<f64>().unwrap() > 2.0);
    let header = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(header.contains("QUARTILE.INC"));
}

#[test]
fn corpus_file_matches_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.json");
    ok(&["corpus-gen", "--preset", "rep05", "--out", path.to_str().unwrap()]);
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(file["prompts"].as_array().unwrap().len(), 20);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["decode", "--corpus", "rep05", "--out", a.to_str().unwrap()]);
    ok(&["decode", "--corpus", path.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(std::fs::read(a.join("report.json")).unwrap(), std::fs::read(b.join("report.json")).unwrap());
}

#[test]
fn several_corpora_report_cross_setting_cv() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_corpus(tmp.path(), "rep09");
    let b = small_corpus(tmp.path(), "rep00");
    let out = tmp.path().join("multi");
    ok(&["decode", "--corpus", &a, "--corpus", &b, "--out", out.to_str().unwrap()]);
    let r = report(&out);
    assert_eq!(r["settings"].as_array().unwrap().len(), 2);
    assert!(r["cross_setting_cv"].as_f64().unwrap() > 0.0);
    let text = std::fs::read_to_string(out.join("generated.txt")).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn config_file_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path(), "rep09");
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"tree_node_budget": 30, "ablation": {"disable_bigram": true}}"#).unwrap();
    let out = tmp.path().join("o");
    ok(&["decode", "--corpus", &corpus, "--config", cfg.to_str().unwrap(), "--max-depth", "4", "--out", out.to_str().unwrap()]);
    let c = &report(&out)["config"];
    assert_eq!(c["tree_node_budget"], 30);
    assert_eq!(c["max_tree_depth"], 4);
    assert_eq!(c["ablation"]["disable_bigram"], true);

    std::fs::write(&cfg, r#"{"tree_budget": 30}"#).unwrap();
    let bad = spinetree(&["decode", "--corpus", &corpus, "--config", cfg.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = spinetree(&["decode", "--corpus", &corpus, "--spine-branch-ratio", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = spinetree(&["decode", "--corpus", &corpus, "--engine", "eagle"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn ablate_writes_full_plus_five_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path(), "rep09");
    let out = tmp.path().join("abl");
    ok(&["ablate", "--corpus", &corpus, "--out", out.to_str().unwrap()]);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 7);
    assert!(rows[1].starts_with("full,full,"));
    assert!(rows[1].ends_with(",0.00"));
    for flag in spinetree::Ablation::FLAGS {
        assert!(rows.iter().any(|r| r.starts_with(flag)), "{flag}");
    }
}

#[test]
fn theory_yield_matches_library() {
    let csv = ok(&["theory", "yield", "--ps", "0.5", "--pt", "0.1", "--m", "3", "--w", "2,1,1", "--D", "6"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    let y = spine_yield(AcceptanceModel::new(0.5, 0.1).unwrap(), &TreeShape::tight(vec![2, 1, 1], 6)).unwrap();
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cols[8], format!("{:.6}", y.total));
    assert_eq!(cols[6], format!("{:.6}", y.synergy));
}

#[test]
fn theory_allocate_and_dominance() {
    let csv = ok(&["theory", "allocate", "--ps", "0.5", "--pt", "0.5", "--bt", "6", "--m", "3"]);
    let rounded: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(rounded, ["3", "2", "1"]);

    let csv = ok(&["theory", "dominance", "--grid", "default"]);
    assert_eq!(csv.lines().count(), 37);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",false")));

    let csv = ok(&["theory", "dominance", "--ratios", "2,4", "--pt", "0.1", "--budgets", "10"]);
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn theory_rejects_out_of_range() {
    for args in [
        &["theory", "yield", "--ps", "1.5", "--pt", "0.1", "--w", "1"][..],
        &["theory", "yield", "--ps", "0.5", "--pt", "0.1", "--m", "2", "--w", "1"][..],
        &["theory", "allocate", "--ps", "0.1", "--pt", "0.5", "--bt", "6", "--m", "3"][..],
        &["theory", "dominance", "--ratios", "2"][..],
    ] {
        assert_eq!(spinetree(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn verify_bound_from_settings_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("s.json");
    std::fs::write(
        &path,
        r#"[{"id": "a", "p_s": 0.6, "p_t": 0.1, "m": 3, "budget": 12},
            {"id": "b", "p_s": 0.9, "p_t": 0.05, "m": 5, "budget": 30, "depth": 4}]"#,
    )
    .unwrap();
    let csv = ok(&["theory", "verify-bound", "--settings", path.to_str().unwrap(), "--trials", "200000"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "setting,p_s,p_t,m,B,tau_bound,tau_meas,stderr,tau_iso,ratio");
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let c: Vec<f64> = l.split(',').skip(5).map(|x| x.parse().unwrap()).collect();
        assert!(c[0] <= c[1] + 4.0 * c[2], "{l}");
    }
}
