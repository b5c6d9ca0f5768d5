use std::fs;
use std::path::{Path, PathBuf};

use gittins_sched::jobmodel::ModelFile;
use gittins_sched::scenarios;
use gittins_sched_cli::{main_with_args, ScenarioConfig, EXIT_INVALID, EXIT_OK, EXIT_VERIFY_FAILED};
use proptest::prelude::*;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn config(model: &str, policies: &str, horizon: f64, seeds: &str) -> String {
    format!(
        r#"{{
            "name": "test",
            "model": {model},
            "policies": {policies},
            "horizon": {horizon},
            "warmup": {},
            "seeds": {seeds},
            "r_grid": {{"points": 40}},
            "output_dir": "out"
        }}"#,
        horizon / 20.0
    )
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "gittins-sched".to_string(),
        cmd.to_string(),
        "--config".into(),
        cfg.display().to_string(),
        "--out".into(),
        out.display().to_string(),
        "--quiet".into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    main_with_args(args)
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn rank_known_sizes_equals_remaining_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(r#"{"builtin": "known_sizes"}"#, r#"["gittins"]"#, 100.0, "[1]"));
    let out = dir.path().join("o");
    assert_eq!(run("rank", &cfg, &out, &[]), EXIT_OK);
    let header = csv::Reader::from_path(out.join("ranks.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["state_id", "preemptible", "holding_cost", "rank", "index"]
    );
    for row in rows(&out.join("ranks.csv")) {
        let remaining: f64 = row[0].trim_start_matches("rem=").parse().unwrap();
        let rank: f64 = row[3].parse().unwrap();
        assert!((rank - remaining).abs() < 1e-9, "{row:?}");
    }
}

#[test]
fn rank_cmu_index_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(r#"{"builtin": "multiclass"}"#, r#"["gittins"]"#, 100.0, "[1]"));
    let out = dir.path().join("o");
    assert_eq!(run("rank", &cfg, &out, &[]), EXIT_OK);
    for (row, (c, mu)) in rows(&out.join("ranks.csv")).iter().zip(scenarios::CMU_CLASSES) {
        let index: f64 = row[4].parse().unwrap();
        assert!((index - c * mu).abs() <= 1e-9 * c * mu);
    }
}

#[test]
fn invalid_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = r#"{"states": [{"id": "a", "sojourn": {"kind": "exponential", "value": 1.0},
        "kernel": [{"to": "a", "p": 1.0}], "preemptible": true, "holding_cost": 1.0}],
        "batches": [{"p": 1.0, "initial": ["a"]}]}"#;
    fs::write(dir.path().join("model.json"), model).unwrap();
    let cfg = write_config(
        dir.path(),
        &config(r#"{"file": "model.json"}"#, r#"["gittins"]"#, 100.0, "[1]").replace(
            "\"policies\"",
            "\"arrival_rate\": 0.5, \"policies\"",
        ),
    );
    assert_eq!(run("rank", &cfg, &dir.path().join("o"), &[]), EXIT_INVALID);
}

#[test]
fn bad_grid_and_missing_config_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let body = config(r#"{"builtin": "mm1"}"#, r#"["gittins"]"#, 100.0, "[1]")
        .replace(r#"{"points": 40}"#, r#"{"min": 0.0, "max": 10.0, "points": 40}"#);
    let cfg = write_config(dir.path(), &body);
    assert_eq!(run("verify", &cfg, &dir.path().join("o"), &[]), EXIT_INVALID);
    assert_eq!(main_with_args(["gittins-sched", "rank"]), EXIT_INVALID);
    assert_eq!(main_with_args(["gittins-sched", "frobnicate"]), EXIT_INVALID);
    assert_eq!(
        run("simulate", &dir.path().join("absent.json"), &dir.path().join("o"), &[]),
        EXIT_INVALID
    );
}

#[test]
fn simulate_rows_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &config(r#"{"builtin": "klimov"}"#, r#"["gittins", "fcfs", "las"]"#, 3000.0, "[1, 2, 3, 4, 5]"),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("simulate", &cfg, &a, &[]), EXIT_OK);
    assert_eq!(run("simulate", &cfg, &b, &[]), EXIT_OK);
    let metrics = rows(&a.join("metrics.csv"));
    assert_eq!(metrics.len(), 15);
    let header = csv::Reader::from_path(a.join("metrics.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        [
            "policy", "scenario", "seed", "mean_H", "ci_H", "mean_HP", "mean_HNP", "mean_N", "mean_T",
            "integral_HP", "rel_err_integral"
        ]
    );
    let header = csv::Reader::from_path(a.join("rwork.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), ["policy", "r", "mean_WP", "ci", "mean_WNP"]);
    for f in ["metrics.csv", "rwork.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // A seed offset changes the seeds and therefore the numbers.
    let c = dir.path().join("c");
    assert_eq!(run("simulate", &cfg, &c, &["--seed-offset", "10"]), EXIT_OK);
    let shifted = rows(&c.join("metrics.csv"));
    assert_eq!(&shifted[0][2], "11");
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn single_run_and_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let body = config(r#"{"builtin": "mm1"}"#, r#"["gittins"]"#, 200.0, "[7]")
        .replace("\"output_dir\"", "\"event_log\": true, \"output_dir\"");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("o");
    assert_eq!(run("simulate", &cfg, &out, &[]), EXIT_OK);
    assert_eq!(rows(&out.join("metrics.csv")).len(), 1);
    let log = fs::read_to_string(out.join("events_gittins_7.ndjson")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["kind"], "arrival");
}

#[test]
fn compare_known_sizes_gittins_equals_srpt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &config(r#"{"builtin": "known_sizes"}"#, r#"["gittins", "srpt"]"#, 5000.0, "[1, 2]"),
    );
    let out = dir.path().join("o");
    assert_eq!(run("compare", &cfg, &out, &[]), EXIT_OK);
    let cmp = rows(&out.join("comparison.csv"));
    assert_eq!(cmp[0][1], cmp[1][1], "identical sample paths give identical E[H]");
}

#[test]
fn compare_gittins_beats_antigittins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &config(r#"{"builtin": "hyperexponential"}"#, r#"["gittins", "antigittins"]"#, 20000.0, "[1, 2]"),
    );
    let out = dir.path().join("o");
    assert_eq!(run("compare", &cfg, &out, &[]), EXIT_OK);
    let cmp = rows(&out.join("comparison.csv"));
    assert_eq!(&cmp[1][6], "yes");
}

#[test]
fn compare_needs_two_policies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(r#"{"builtin": "mm1"}"#, r#"["gittins"]"#, 100.0, "[1]"));
    assert_eq!(run("compare", &cfg, &dir.path().join("o"), &[]), EXIT_INVALID);
}

#[test]
fn verify_passes_on_mm1_and_klimov() {
    for model in ["mm1", "klimov"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(
            dir.path(),
            &config(&format!(r#"{{"builtin": "{model}"}}"#), r#"["las"]"#, 100000.0, "[3]"),
        );
        let out = dir.path().join("o");
        assert_eq!(run("verify", &cfg, &out, &[]), EXIT_OK, "{model}");
        let checks = rows(&out.join("verify.csv"));
        assert!(checks.iter().any(|c| &c[0] == "recycle_at_zero"));
        assert!(checks.iter().any(|c| &c[0] == "fixture.cost_to_go"));
    }
}

#[test]
fn verify_failure_exits_1() {
    // A horizon too short for Little's law and the integral identity to
    // settle fails the statistical checks.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &config(r#"{"builtin": "hyperexponential"}"#, r#"["gittins"]"#, 1.0, "[1]")
            .replace("\"policies\"", "\"arrival_rate\": 5.0, \"policies\""),
    );
    assert_eq!(run("verify", &cfg, &dir.path().join("o"), &[]), EXIT_VERIFY_FAILED);
}

#[test]
fn inline_model_from_library() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenarios::klimov();
    let model = serde_json::to_string(&ModelFile::from_chain(&s.chain, Some(s.batch_rate))).unwrap();
    let cfg = write_config(dir.path(), &config(&model, r#"["gittins"]"#, 100.0, "[1]"));
    assert_eq!(run("rank", &cfg, &dir.path().join("o"), &[]), EXIT_OK);
}

fn arb_config() -> impl Strategy<Value = ScenarioConfig> {
    (
        prop::sample::select(scenarios::NAMES.to_vec()),
        prop::option::of(0.01f64..5.0),
        prop::collection::vec(prop::sample::select(gittins_sched::policies::PolicyKind::ALL.to_vec()), 1..5),
        1.0f64..1e7,
        0.0f64..1.0,
        prop::collection::vec(any::<u64>(), 1..6),
        prop::option::of((1e-6f64..1.0, 1.0f64..1e3)),
        2usize..500,
        any::<bool>(),
    )
        .prop_map(|(model, rate, policies, horizon, frac, seeds, bounds, points, log)| {
            let text = format!(
                r#"{{"name": "p", "model": {{"builtin": "{model}"}}, "policies": ["gittins"],
                     "horizon": 2.0, "warmup": 1.0, "seeds": [1], "output_dir": "x"}}"#
            );
            let mut c = ScenarioConfig::from_json(&text).unwrap();
            c.arrival_rate = rate;
            c.policies = policies;
            c.horizon = horizon;
            c.warmup = horizon * frac;
            c.seeds = seeds;
            c.r_grid.min = bounds.map(|b| b.0);
            c.r_grid.max = bounds.map(|b| b.1);
            c.r_grid.points = points;
            c.event_log = log;
            c
        })
}

proptest! {
    #[test]
    fn config_round_trip(c in arb_config()) {
        let once = ScenarioConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(&once, &c);
        let twice = ScenarioConfig::from_json(&once.to_json()).unwrap();
        prop_assert_eq!(twice, once);
    }
}
