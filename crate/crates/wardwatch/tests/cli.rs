use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;
use wardwatch::cli::main_with;
use wardwatch::formats::read_snapshots;
use wardwatch::model::Model;
use wardwatch_core::metrics::evaluate;
use wardwatch_core::Label;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("wardwatch").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let r = run(args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    r.stdout
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic data with a train/test split in `dir`.
fn prepared(dir: &Path) -> (PathBuf, PathBuf) {
    let d = p(dir);
    ok(&["--out", d, "--seed", "3", "synth", "--n", "600", "--prevalence", "0.1"]);
    ok(&[
        "--out",
        d,
        "--seed",
        "3",
        "prep",
        "--events",
        p(&dir.join("events.csv")),
        "--encounters",
        p(&dir.join("encounters.csv")),
        "--test-fraction",
        "0.3",
    ]);
    (dir.join("train.csv"), dir.join("test.csv"))
}

#[test]
fn synth_writes_both_files_deterministically() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        ok(&["--out", p(dir.path()), "synth", "--n", "1000", "--prevalence", "0.026", "--seed", "7"]);
    }
    for name in ["events.csv", "encounters.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between identical runs");
    }
    let encounters = fs::read_to_string(a.path().join("encounters.csv")).unwrap();
    assert_eq!(encounters.lines().filter(|l| l.contains(",true,")).count(), 26);
}

#[test]
fn invalid_prevalence_exits_nonzero_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let r = run(&["--out", p(dir.path()), "synth", "--prevalence", "1.5"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("prevalence"), "{}", r.stderr);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&["frobnicate"]).code, 1);
    assert_eq!(run(&["train"]).code, 1);
    let help = run(&["--help"]);
    assert_eq!(help.code, 0);
    for cmd in ["synth", "prep", "train", "eval", "timeline", "--seed", "--out"] {
        assert!(help.stdout.contains(cmd), "help lacks {cmd}");
    }
    let train_help = ok(&["train", "--help"]);
    for flag in ["--model", "--search", "--cv", "--pews-table", "--rounds"] {
        assert!(train_help.contains(flag), "train help lacks {flag}");
    }
}

const ENCOUNTERS_HEADER: &str = "encounter_id,patient_id,age_years,transferred,transfer_time\n";
const EVENTS_HEADER: &str = "encounter_id,patient_id,time,vital,value\n";

/// Three transfers and four non-transfer stays, all on 2024-01-01.
fn small_files(dir: &Path) -> (PathBuf, PathBuf) {
    let mut enc = String::from(ENCOUNTERS_HEADER);
    let mut ev = String::from(EVENTS_HEADER);
    for i in 0..7 {
        let transferred = i < 3;
        enc.push_str(&format!(
            "e{i},p{i},{}.5,{},{}\n",
            i + 1,
            transferred,
            if transferred { "2024-01-01T20:00:00Z" } else { "" }
        ));
        for h in [4, 8, 12, 14, 16, 20] {
            ev.push_str(&format!("e{i},p{i},2024-01-01T{h:02}:00:00Z,HR,{}\n", 100 + i * 5));
            if h % 8 == 0 {
                ev.push_str(&format!("e{i},p{i},2024-01-01T{h:02}:00:00Z,RR,30\n"));
            }
        }
    }
    let e = dir.join("encounters.csv");
    let v = dir.join("events.csv");
    fs::write(&e, enc).unwrap();
    fs::write(&v, ev).unwrap();
    (e, v)
}

#[test]
fn prep_balances_and_leaves_missing_cells_empty() {
    let dir = TempDir::new().unwrap();
    let (enc, ev) = small_files(dir.path());
    let out = ok(&["--out", p(dir.path()), "prep", "--events", p(&ev), "--encounters", p(&enc)]);
    assert!(out.contains("3 transfer, 3 no transfer"), "{out}");
    let text = fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    // No blood pressure, oxygen or temperature was ever recorded.
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 13);
        for idx in [1, 3, 4, 5, 7, 8, 9] {
            assert_eq!(cells[idx], "", "{row}");
        }
        assert!(!cells[0].is_empty() && !cells[6].is_empty());
    }
}

#[test]
fn malformed_rows_cite_their_line() {
    let dir = TempDir::new().unwrap();
    let (enc, ev) = small_files(dir.path());
    let text = fs::read_to_string(&ev).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    assert!(lines.len() > 42);
    lines[41] = "e1,p1,yesterday noon,HR,100".into();
    fs::write(&ev, lines.join("\n") + "\n").unwrap();
    let r = run(&["--out", p(dir.path()), "prep", "--events", p(&ev), "--encounters", p(&enc)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 42"), "{}", r.stderr);
    assert!(r.stderr.contains("yesterday noon"), "{}", r.stderr);

    lines[41] = "e1,p1,2024-01-01T09:00:00Z,BP,100".into();
    fs::write(&ev, lines.join("\n") + "\n").unwrap();
    let r = run(&["--out", p(dir.path()), "prep", "--events", p(&ev), "--encounters", p(&enc)]);
    assert!(r.code != 0 && r.stderr.contains("line 42"), "{}", r.stderr);
}

#[test]
fn train_writes_each_model_kind() {
    let dir = TempDir::new().unwrap();
    let (train, _) = prepared(dir.path());
    let d = p(dir.path());

    ok(&["--out", d, "train", "--data", p(&train), "--model", "ensemble", "--name", "ens.json"]);
    let ens: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ens.json")).unwrap()).unwrap();
    assert_eq!(ens["model"], "ensemble");
    assert_eq!(ens["ada"]["model"], "ada");
    assert_eq!(ens["gbt"]["model"], "gbt");
    assert_eq!(ens["ada"]["stumps"].as_array().unwrap().len(), 100);
    assert_eq!(ens["gbt"]["trees"].as_array().unwrap().len(), 16);
    assert_eq!(ens["gbt"]["params"]["max_depth"], 3);

    ok(&["--out", d, "train", "--data", p(&train), "--model", "pews", "--name", "pews.json"]);
    let pews: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("pews.json")).unwrap()).unwrap();
    assert!(pews["cutoff"].is_u64());

    let out = ok(&[
        "--out", d, "train", "--data", p(&train), "--model", "gbt", "--search", "trials=4", "--folds", "3",
        "--name", "tuned.json",
    ]);
    assert!(out.contains("search: 4 trials"), "{out}");
    let tuned: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("tuned.json")).unwrap()).unwrap();
    assert_eq!(tuned["search"]["trials"], 4);
    // The recorded params are the searched ones, not the defaults.
    assert_ne!(tuned["params"]["learning_rate"], 0.3);

    let out = ok(&["--out", d, "train", "--data", p(&train), "--model", "ada", "--rounds", "20", "--cv", "--folds", "5"]);
    assert!(out.contains("5-fold CV mean AUROC"), "{out}");
}

#[test]
fn train_rejects_single_class_data() {
    let dir = TempDir::new().unwrap();
    let (train, _) = prepared(dir.path());
    let text = fs::read_to_string(&train).unwrap();
    let neg: Vec<&str> = text.lines().filter(|l| !l.contains(",1,")).collect();
    let only_neg = dir.path().join("neg.csv");
    fs::write(&only_neg, neg.join("\n") + "\n").unwrap();
    for model in ["ada", "gbt", "ensemble", "pews"] {
        let r = run(&["--out", p(dir.path()), "train", "--data", p(&only_neg), "--model", model]);
        assert_eq!(r.code, 2, "{model}: {}", r.stderr);
    }
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn eval_on_training_data_reports_unit_interval_fields() {
    let dir = TempDir::new().unwrap();
    let (train, _) = prepared(dir.path());
    for model in ["ada", "gbt", "ensemble", "pews"] {
        let sub = dir.path().join(model);
        ok(&["--out", p(&sub), "train", "--data", p(&train), "--model", model, "--rounds", "30"]);
        ok(&["--out", p(&sub), "eval", "--model", p(&sub.join("model.json")), "--data", p(&train)]);
        let r = report(&sub);
        for key in ["accuracy", "sensitivity", "specificity", "auroc"] {
            let v = r[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{model} {key} = {v}");
        }
        let roc = fs::read_to_string(sub.join("roc.csv")).unwrap();
        assert!(roc.starts_with("fpr,tpr,threshold\n0,0,inf\n"), "{roc}");
        assert!(roc.lines().last().unwrap().starts_with("1,1,"), "{roc}");
    }
}

fn pairwise_auroc(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if li.is_positive() && !lj.is_positive() {
                den += 1.0;
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    num / den
}

#[test]
fn pews_eval_uses_raw_scores_and_the_cutoff() {
    let dir = TempDir::new().unwrap();
    let (train, test) = prepared(dir.path());
    let d = p(dir.path());
    ok(&["--out", d, "train", "--data", p(&train), "--model", "pews"]);
    ok(&["--out", d, "eval", "--model", p(&dir.path().join("model.json")), "--data", p(&test)]);
    let model = Model::load(&dir.path().join("model.json")).unwrap();
    let Model::Pews(base) = &model else { panic!("not a pews model") };
    let data = read_snapshots(&test).unwrap();
    let scores: Vec<f64> = data.iter().map(|s| f64::from(base.score(&s.features))).collect();
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    let r = report(dir.path());
    assert!((r["auroc"].as_f64().unwrap() - pairwise_auroc(&scores, &labels)).abs() < 1e-12);
    assert_eq!(r["threshold"].as_f64().unwrap(), f64::from(base.cutoff));
    let tp = data.iter().filter(|s| s.label.is_positive() && base.score(&s.features) >= base.cutoff).count();
    assert_eq!(r["tp"].as_u64().unwrap() as usize, tp);
}

#[test]
fn saved_models_evaluate_like_in_memory_ones() {
    let dir = TempDir::new().unwrap();
    let (train, test) = prepared(dir.path());
    let d = p(dir.path());
    ok(&["--out", d, "train", "--data", p(&train), "--model", "ensemble"]);
    ok(&["--out", d, "eval", "--model", p(&dir.path().join("model.json")), "--data", p(&test)]);
    let on_disk = report(dir.path());

    let data = read_snapshots(&train).unwrap();
    let ada = wardwatch_core::ada::fit(&data, 100, &Default::default()).unwrap();
    let gbt = wardwatch_core::gbt::fit(&data, &Default::default()).unwrap();
    let ens = wardwatch_core::ensemble::EnsembleModel::new(ada, gbt, 0.5).unwrap();
    let test = read_snapshots(&test).unwrap();
    let scores: Vec<f64> = test.iter().map(|s| ens.predict_proba(&s.features)).collect();
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    let in_memory = serde_json::to_value(evaluate(&scores, &labels, 0.5).unwrap()).unwrap();
    assert_eq!(on_disk, in_memory);
}

#[test]
fn missing_model_file_fails() {
    let dir = TempDir::new().unwrap();
    let (_, test) = prepared(dir.path());
    let r = run(&["--out", p(dir.path()), "eval", "--model", p(&dir.path().join("none.json")), "--data", p(&test)]);
    assert_ne!(r.code, 0);
    assert!(r.stderr.contains("none.json"));
}

fn timeline_rows(dir: &Path) -> Vec<(String, f64)> {
    fs::read_to_string(dir.join("timeline.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[1].to_string(), c[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn timeline_rows_follow_events_in_the_window() {
    let dir = TempDir::new().unwrap();
    let (train, _) = prepared(dir.path());
    let d = p(dir.path());
    ok(&["--out", d, "train", "--data", p(&train), "--model", "gbt"]);
    let model = dir.path().join("model.json");

    // Five HR events inside [T-8h, T-2h] = [04:00, 10:00], one outside.
    let enc = dir.path().join("one_enc.csv");
    let ev = dir.path().join("one_ev.csv");
    fs::write(&enc, format!("{ENCOUNTERS_HEADER}x,px,6,true,2024-03-01T12:00:00Z\n")).unwrap();
    let mut events = String::from(EVENTS_HEADER);
    for (h, v) in [(1, 90), (4, 95), (5, 110), (7, 130), (9, 150), (10, 170)] {
        events.push_str(&format!("x,px,2024-03-01T{h:02}:00:00Z,HR,{v}\n"));
    }
    fs::write(&ev, events).unwrap();
    let args = |extra: &[&'static str]| {
        let mut a = vec!["--out".to_string(), d.to_string(), "timeline".into(), "--model".into(), p(&model).into()];
        a.extend(["--events".into(), p(&ev).into(), "--encounters".into(), p(&enc).into()]);
        a.extend(extra.iter().map(|s| s.to_string()));
        a
    };
    let a = args(&[]);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let rows = timeline_rows(dir.path());
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[0].0 <= w[1].0));
    assert!(rows.iter().all(|r| r.1 > 0.0 && r.1 < 1.0));

    let a = args(&["--end", "2024-03-02T00:00:00Z"]);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(timeline_rows(dir.path()).is_empty());
    let text = fs::read_to_string(dir.path().join("timeline.csv")).unwrap();
    assert_eq!(text, "encounter_id,time,probability\n");
}

#[test]
fn constant_vitals_give_constant_probabilities() {
    let dir = TempDir::new().unwrap();
    let (train, _) = prepared(dir.path());
    let d = p(dir.path());
    ok(&["--out", d, "train", "--data", p(&train), "--model", "ensemble"]);
    let enc = dir.path().join("c_enc.csv");
    let ev = dir.path().join("c_ev.csv");
    fs::write(&enc, format!("{ENCOUNTERS_HEADER}c,pc,3,false,\n")).unwrap();
    let mut events = String::from(EVENTS_HEADER);
    for h in 0..8 {
        for (vital, v) in [("HR", 120), ("RR", 30), ("sBP", 95), ("dBP", 60), ("O2", 97)] {
            events.push_str(&format!("c,pc,2024-03-01T{h:02}:30:00Z,{vital},{v}\n"));
        }
    }
    fs::write(&ev, events).unwrap();
    ok(&[
        "--out", d, "timeline", "--model", p(&dir.path().join("model.json")), "--events", p(&ev),
        "--encounters", p(&enc), "--encounter", "c",
    ]);
    let rows = timeline_rows(dir.path());
    // Window [01:30, 07:30]: seven measurement times, five vitals each.
    assert_eq!(rows.len(), 35);
    assert!(rows.iter().all(|r| r.1 == rows[0].1));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_wardwatch");
    let dir = TempDir::new().unwrap();
    let out = Command::new(bin).args(["--out", p(dir.path()), "synth", "--prevalence", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("transfer_prevalence"));
    let out = Command::new(bin).args(["eval", "--model", "/nonexistent/m.json", "--data", "x.csv"]).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    let out = Command::new(bin).args(["--out", p(dir.path()), "synth", "--n", "50", "--prevalence", "0.2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("events.csv").exists());
}
