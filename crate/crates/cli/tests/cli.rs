use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadrisk"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn report(dir: &Path, name: &str) -> toml::Table {
    std::fs::read_to_string(dir.join(name)).unwrap().parse().unwrap()
}

const SMALL: [&str; 6] = ["--hidden", "32", "--embed-dim", "16", "--lr", "0.005"];

#[test]
fn full_pipeline_runs_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let t0 = Instant::now();
    ok(d, &["--seed", "3", "synth", "--n-nodes", "100"]);
    let out = run(d, &["align"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("align: matched"));
    ok(d, &["snapshot"]);
    let mut train = vec!["--seed", "3", "train", "--epochs", "5"];
    train.extend(SMALL);
    ok(d, &train);
    ok(d, &["evaluate", "--road-type-table", d.join("rt.csv").to_str().unwrap()]);
    ok(d, &["causal", "--precip-bins", d.join("bins.csv").to_str().unwrap()]);
    let mut ablate = vec!["ablate", "--epochs", "2", "--groups", "visual,weather"];
    ablate.extend(SMALL);
    ok(d, &ablate);
    assert!(t0.elapsed() < Duration::from_secs(120));

    let eval = report(d, "eval_report.toml");
    assert!(eval["auroc"].as_float().is_some());
    assert_eq!(eval["config"]["split"]["test"].as_str(), Some("2021"));
    let rt = std::fs::read_to_string(d.join("rt.csv")).unwrap();
    assert!(rt.starts_with("road_type,n,positives,auroc,mae\n"));
    let causal = report(d, "causal_report.toml");
    assert!(causal["year"]["2021"]["att"].as_float().unwrap().is_finite());
    let ab = report(d, "ablate_report.toml");
    assert!(ab["dropped"]["visual"]["auroc_delta"].as_float().is_some());
    assert!(std::fs::read_to_string(d.join("bins.csv")).unwrap().starts_with("precip_mm_lo,edge_months,accidents\n"));
}

#[test]
fn untrained_model_on_noise_is_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--signal", "none", "--n-nodes", "150"]);
    ok(d, &["align"]);
    ok(d, &["snapshot"]);
    let mut train = vec!["train", "--init-only", "--mode", "none"];
    train.extend(SMALL);
    ok(d, &train);
    ok(d, &["evaluate"]);
    let auroc = report(d, "eval_report.toml")["auroc"].as_float().unwrap();
    assert!((auroc - 0.5).abs() <= 0.05, "auroc {auroc}");
}

#[test]
fn matching_recovers_planted_effect_from_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["--seed", "11", "synth", "--planted-att", "0.25", "--frame-units", "2000"]);
    ok(d, &["causal", "--frame", d.join("frame.csv").to_str().unwrap(), "--estimator", "matching"]);
    let r = report(d, "causal_report.toml");
    let (att, se) = (r["att"].as_float().unwrap(), r["se"].as_float().unwrap());
    assert!((att - 0.25).abs() <= 3.0 * se, "att {att} se {se}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(run(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(d, &["causal", "--frame", "x.csv", "--estimator", "bogus"]).status.code(), Some(1));
    let missing = run(d, &["align"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("io: align: "));
    let frame = d.join("nan.csv");
    std::fs::write(&frame, "t,y,x0\n1,NaN,0.5\n0,1.0,0.2\n").unwrap();
    let numeric = run(d, &["causal", "--frame", frame.to_str().unwrap()]);
    assert_eq!(numeric.status.code(), Some(3), "{}", String::from_utf8_lossy(&numeric.stderr));
    assert!(String::from_utf8_lossy(&numeric.stderr).starts_with("causal: causal: "));
}

#[test]
fn reports_are_deterministic() {
    let outputs: Vec<_> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let d = tmp.path();
            ok(d, &["--seed", "5", "synth", "--n-nodes", "80"]);
            ok(d, &["align"]);
            ok(d, &["snapshot"]);
            let mut train = vec!["--seed", "5", "train", "--epochs", "3"];
            train.extend(SMALL);
            ok(d, &train);
            ok(d, &["evaluate"]);
            let strip = |name: &str| {
                let mut t = report(d, name);
                t.remove("config");
                t
            };
            (strip("train_report.toml"), strip("eval_report.toml"), std::fs::read_to_string(d.join("model.txt")).unwrap())
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_file_is_applied_and_overridden() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "seed = 9\n[synth]\nn_nodes = 60\n").unwrap();
    ok(d, &["--config", cfg.to_str().unwrap(), "synth", "--n-nodes", "70"]);
    let r = report(d, "synth_report.toml");
    assert_eq!(r["nodes"].as_integer(), Some(70));
    assert_eq!(r["config"]["seed"].as_integer(), Some(9));
    std::fs::write(&cfg, "sede = 9\n").unwrap();
    assert_eq!(run(d, &["--config", cfg.to_str().unwrap(), "synth"]).status.code(), Some(1));
}
