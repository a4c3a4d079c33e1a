use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_midastouch"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn midastouch")
}

fn summary(out: &Output) -> serde_json::Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout
        .lines()
        .last()
        .unwrap_or_else(|| panic!("no summary; stderr: {}", stderr(out)));
    serde_json::from_str(line).expect("summary is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bundled_scenario_settles_and_writes_receipts() {
    let dir = TempDir::new().unwrap();
    let receipts = dir.path().join("receipts.jsonl");
    let out = run(&[
        "scenario",
        path_str(&scenario("token_deploy.toml")),
        "--receipts",
        path_str(&receipts),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let s = summary(&out);
    assert_eq!(s["validators"], 3);
    assert_eq!(s["receipts"], 1);
    assert_eq!(s["audit_clean"], true);
    assert_eq!(s["stalled"], false);
    let log = std::fs::read_to_string(&receipts).unwrap();
    assert_eq!(log.lines().count(), 1);
    let record: serde_json::Value = serde_json::from_str(log.trim_end()).unwrap();
    let fixture: serde_json::Value =
        serde_json::from_slice(&std::fs::read(scenario("../docs/fixtures/receipt.json")).unwrap())
            .unwrap();
    let (id, entry) = fixture["events"]
        .as_object()
        .unwrap()
        .iter()
        .next()
        .unwrap();
    assert_eq!(entry, "t:ordi");
    assert_eq!(record["events"][id]["success"], true);
    assert_eq!(record["events"][id]["return_value"], "ordi");
}

#[test]
fn stalled_and_empty_scenarios_exit_cleanly() {
    let out = run(&["scenario", path_str(&scenario("stalled_registration.toml"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(summary(&out)["stalled"], true);
    assert!(stderr(&out).contains("did not complete"));

    let out = run(&["scenario", path_str(&scenario("empty.toml"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(summary(&out)["empty"], true);
}

#[test]
fn run_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "committee_size = 5\nblocks = 30\n\n[sim]\nseed = 9\n",
    )
    .unwrap();
    let go = |tag: &str| {
        let report = dir.path().join(format!("report-{tag}.json"));
        let receipts = dir.path().join(format!("receipts-{tag}.jsonl"));
        let out = run(&[
            "run",
            "--config",
            path_str(&config),
            "--epsilon",
            "2",
            "--fee-rate",
            "0.1",
            "--report",
            path_str(&report),
            "--receipts",
            path_str(&receipts),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let s = summary(&out);
        assert_eq!(s["seed"], 9);
        assert_eq!(s["validators"], 5);
        (
            std::fs::read(report).unwrap(),
            std::fs::read(receipts).unwrap(),
            out.stdout,
        )
    };
    let a = go("a");
    let b = go("b");
    assert!(!a.1.is_empty());
    assert_eq!(a, b);

    let other = run(&["run", "--config", path_str(&config), "--seed", "10"]);
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(
        summary(&other)["config_digest"],
        serde_json::from_slice::<serde_json::Value>(&a.2).unwrap()["config_digest"]
    );
}

#[test]
fn fault_plan_gets_the_equivocator_slashed() {
    let out = run(&[
        "run",
        "--committee-size",
        "7",
        "--fault-plan",
        "1:equivocating",
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let s = summary(&out);
    assert_eq!(s["slashes"], 1);
    assert_eq!(s["audit_clean"], true);
}

#[test]
fn experiments_write_csv() {
    let dir = TempDir::new().unwrap();
    let csv = |name: &str, args: &[&str]| {
        let path = dir.path().join(name);
        let mut full = vec!["experiment"];
        full.extend_from_slice(args);
        full.extend_from_slice(&["--out", path_str(&path)]);
        let out = run(&full);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        std::fs::read_to_string(path).unwrap()
    };
    let a = csv("scal-a.csv", &["scalability"]);
    let b = csv("scal-b.csv", &["scalability"]);
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 20);

    let gas = csv("gas.csv", &["gas"]);
    assert_eq!(gas.lines().count(), 1 + 7);

    let eps = csv("eps.csv", &["epsilon", "--epsilon", "5", "--seeds", "1"]);
    assert_eq!(eps.lines().count(), 1 + 1);
}

#[test]
fn bad_arguments_fail() {
    for args in [
        &["run", "--fee-rate", "2"][..],
        &["run", "--fault-plan", "x:silent"],
        &["experiment", "bogus", "--out", "/dev/null"],
        &["scenario"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
    for args in [
        &["run", "--committee-size", "4", "--fault-plan", "9:silent"][..],
        &["run", "--config", "/nonexistent/run.toml"],
        &["scenario", "/nonexistent/scenario.toml"],
        &[
            "experiment",
            "gas",
            "--out",
            "/dev/null",
            "--fault-plan",
            "0:silent",
        ],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn invariant_violation_exits_with_dedicated_code() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(scenario("token_deploy.toml")).unwrap();
    let strict = dir.path().join("strict.toml");
    // No lag allowed: the receipt cannot be mined in the block that triggers the epoch.
    std::fs::write(
        &strict,
        text.replace(
            "[config.committee]",
            "[config.bridge]\nreceipt_lag = 0\n\n[config.committee]",
        ),
    )
    .unwrap();
    let out = run(&["scenario", path_str(&strict)]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("invariant violated"));
    assert_eq!(summary(&out)["audit_clean"], false);
}
