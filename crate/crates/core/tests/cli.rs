use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loiterplan::model::{Point, Target, TargetId};
use loiterplan::tsp::{christofides, rotate_tour_to_nearest, MetricGraph};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loiterplan"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_scenario(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn ten_targets() -> Vec<Value> {
    [
        (120.0, -40.0),
        (80.0, 60.0),
        (-50.0, 90.0),
        (-100.0, -20.0),
        (30.0, -120.0),
        (140.0, 10.0),
        (-60.0, -90.0),
        (10.0, 150.0),
        (60.0, 100.0),
        (-130.0, 40.0),
    ]
    .iter()
    .enumerate()
    .map(|(i, (x, y))| json!({"id": i + 1, "position": {"x": x, "y": y}}))
    .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn ids_of(v: &Value) -> Vec<u64> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn allocate_ten_targets_three_vehicles() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        &json!({"version": 1, "depot": {"x": 0, "y": 0}, "fleet_size": 3, "seed": 4, "targets": ten_targets()}),
    );
    let out = tmp.path().join("out");
    let o = run(&["allocate", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut covered = Vec::new();
    let mut total = 0.0;
    for v in 0..3 {
        let file = read_json(&out.join(format!("vehicle-{v}.json")));
        assert_eq!(file["vehicle_id"], v);
        for site in file["sites"].as_array().unwrap() {
            covered.extend(ids_of(&site["covers"]));
        }
        total += file["cost"].as_f64().unwrap();
    }
    assert!(!out.join("vehicle-3.json").exists());
    covered.sort();
    assert_eq!(covered, (1..=10).collect::<Vec<u64>>());

    let csv = std::fs::read_to_string(out.join("tour_costs.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("vehicle,sites,targets,cost"));
    assert_eq!(lines.count(), 3);
    let summary = read_json(&out.join("allocation.json"));
    assert!((summary["team_cost"].as_f64().unwrap() - total).abs() < 1e-9);
    assert!(!out.join("dynamic.json").exists());
}

#[test]
fn allocate_single_vehicle_is_one_christofides_tour() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        &json!({"version": 1, "depot": {"x": 5, "y": -5}, "fleet_size": 1, "targets": ten_targets()}),
    );
    let out = tmp.path().join("out");
    assert!(run(&["allocate", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());
    let file = read_json(&out.join("vehicle-0.json"));

    let targets: Vec<Target> = ten_targets()
        .iter()
        .map(|t| {
            let p = Point::new(t["position"]["x"].as_f64().unwrap(), t["position"]["y"].as_f64().unwrap());
            Target::new(t["id"].as_u64().unwrap(), p, 3.0)
        })
        .collect();
    let tour = christofides(&MetricGraph::from_targets(&targets).unwrap()).unwrap();
    let pos = |id: TargetId| Ok(targets.iter().find(|t| t.id == id).unwrap().position);
    let expected: Vec<u64> = rotate_tour_to_nearest(&tour.cycle, Point::new(5.0, -5.0), pos)
        .unwrap()
        .iter()
        .map(|id| id.0)
        .collect();
    assert_eq!(ids_of(&file["sequence"]), expected);
}

#[test]
fn allocate_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let events = json!([
        {"time": 20, "added": [{"id": 50, "position": {"x": 200, "y": 200}}], "removed": [4]},
        {"time": 45, "added": [{"id": 51, "position": {"x": -10, "y": 5}}, {"id": 52, "position": {"x": -12, "y": 6}}]}
    ]);
    let scenario = write_scenario(
        tmp.path(),
        &json!({"version": 1, "depot": {"x": 0, "y": 0}, "fleet_size": 3, "seed": 9, "targets": ten_targets(), "events": events}),
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["allocate", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let dynamic = read_json(&a.join("dynamic.json"));
    let mut seen = BTreeSet::new();
    for it in dynamic["iterations"].as_array().unwrap() {
        for tour in it["tours"].as_array().unwrap() {
            for site in tour["sites"].as_array().unwrap() {
                for id in ids_of(&site["covers"]) {
                    assert!(seen.insert(id), "target {id} scanned twice");
                }
            }
        }
    }
    let removed: BTreeSet<u64> = ids_of(&dynamic["removed"]).into_iter().collect();
    let all: BTreeSet<u64> = (1..=10).chain(50..=52).collect();
    assert_eq!(seen.union(&removed).copied().collect::<BTreeSet<u64>>(), all);
    assert!(seen.is_disjoint(&removed));
}

#[test]
fn seed_flag_overrides_scenario_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        &json!({"version": 1, "depot": {"x": 0, "y": 0}, "fleet_size": 3, "seed": 1, "targets": ten_targets()}),
    );
    let s = scenario.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&["allocate", "--scenario", s, "--out", a.to_str().unwrap(), "--seed", "77"]).status.success());
    assert!(run(&["allocate", "--scenario", s, "--out", b.to_str().unwrap(), "--seed", "77"]).status.success());
    assert_eq!(read_json(&a.join("allocation.json"))["seed"], 77);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn malformed_scenarios_fail_with_context() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"version\": 1,\n  \"depot\": {\"x\": 0, \"y\": 0},\n  \"fleet_size\": 1,\n  \"targets\": [}\n").unwrap();
    let o = run(&["allocate", "--scenario", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error:") && err.contains("line 5"), "{err}");

    let dup = write_scenario(
        tmp.path(),
        &json!({"version": 1, "depot": {"x": 0, "y": 0}, "fleet_size": 1,
                "targets": [{"id": 3, "position": {"x": 1, "y": 1}}, {"id": 3, "position": {"x": 2, "y": 2}}]}),
    );
    let o = run(&["allocate", "--scenario", dup.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate target id 3"));

    let missing = tmp.path().join("nope.json");
    assert!(!run(&["trajectory", "--scenario", missing.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());
}

#[test]
fn trajectory_writes_csv_overlay_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        &json!({"version": 1, "depot": {"x": 0, "y": 0}, "fleet_size": 2,
                "targets": [{"id": 1, "position": {"x": 40, "y": 10}},
                            {"id": 2, "position": {"x": -30, "y": 25}},
                            {"id": 3, "position": {"x": -45, "y": -20}}],
                "config": {"entries": 4}}),
    );
    let out = tmp.path().join("out");
    let o = run(&["trajectory", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("failures.json").exists());

    let summary = read_json(&out.join("trajectory_summary.json"));
    let mut legs = 0;
    for v in summary.as_array().unwrap() {
        let id = v["vehicle_id"].as_u64().unwrap();
        let csv = std::fs::read_to_string(out.join(format!("trajectory-{id}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("time,x,y,vx,vy,phase"));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows[0][..5], ["0", "0", "0", "0", "0"]);
        assert_eq!(rows.last().unwrap()[5], "loiter");
        let last_time: f64 = rows.last().unwrap()[0].parse().unwrap();
        assert!((last_time - v["total_time"].as_f64().unwrap()).abs() < 1e-9);
        let n_legs = v["legs"].as_array().unwrap().len();
        legs += n_legs;
        // rim entry can save up to r on the first leg and 2r on each later one
        let slack = 3.0 + 6.0 * (n_legs - 1) as f64;
        assert!(v["total_length"].as_f64().unwrap() >= v["tour_cost"].as_f64().unwrap() - slack);
    }
    assert_eq!(legs, 3);

    let overlay = std::fs::read_to_string(out.join("overlay.csv")).unwrap();
    assert!(overlay.starts_with("vehicle,layer,index,x,y\n"));
    let tour_rows = overlay.lines().filter(|l| l.split(',').nth(1) == Some("tour")).count();
    assert_eq!(tour_rows, 3 + 2);
    assert!(overlay.lines().any(|l| l.split(',').nth(1) == Some("flight")));
}

#[test]
fn trajectory_failure_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        tmp.path(),
        &json!({"version": 1, "depot": {"x": 0, "y": 0}, "fleet_size": 2,
                "targets": [{"id": 1, "position": {"x": 30, "y": 0}},
                            {"id": 2, "position": {"x": -1e6, "y": 0}, "loiter_radius": 0.01}],
                "config": {"entries": 2, "segments": 10}}),
    );
    let out = tmp.path().join("out");
    let o = run(&["trajectory", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let failures = read_json(&out.join("failures.json"));
    let failed: Vec<u64> = failures.as_array().unwrap().iter().map(|f| f["vehicle_id"].as_u64().unwrap()).collect();
    assert_eq!(failed.len(), 1);
    let ok = 1 - failed[0];
    assert!(out.join(format!("trajectory-{ok}.csv")).exists());
    assert!(!out.join(format!("trajectory-{}.csv", failed[0])).exists());
    assert!(out.join("overlay.csv").exists());
}

#[test]
fn study_with_config_file_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("cost.json");
    std::fs::write(&config, r#"{"kind": "cost-vs-fleet", "targets": [12], "fleet": [1, 3, 6], "seed": 5}"#).unwrap();
    let out = tmp.path().join("out");
    let o = run(&[
        "study",
        "cost-vs-fleet",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "40",
        "--threads",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = read_json(&out.join("cost-vs-fleet-5.json"));
    assert_eq!(agg["config"]["trials"], 40);
    let means: Vec<f64> = agg["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["per_vehicle_cost"]["mean"].as_f64().unwrap())
        .collect();
    assert_eq!(means.len(), 3);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    for m in [1, 3, 6] {
        assert!(out.join(format!("cost-vs-fleet-12-{m}-5.csv")).exists());
    }

    let o = run(&["study", "dynamic-ratio", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind"));

    std::fs::write(&config, r#"{"trails": 3}"#).unwrap();
    let o = run(&["study", "cost-vs-fleet", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("trails"));
}

#[test]
fn holonomic_and_dynamic_studies_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["study", "holonomic-ratio", "--out", out.to_str().unwrap(), "--trials", "6", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = read_json(&out.join("holonomic-ratio-3.json"));
    assert!(agg["results"]["ratio"]["min"].as_f64().unwrap() >= 1.0);
    assert!(agg["results"]["ratio"]["max"].as_f64().unwrap() <= 3.5);

    let config = tmp.path().join("dyn.json");
    std::fs::write(&config, r#"{"kind": "dynamic-ratio", "targets": [20], "fleet": [2], "arrivals": [0, 6]}"#).unwrap();
    let o = run(&[
        "study",
        "dynamic-ratio",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = read_json(&out.join("dynamic-ratio-0.json"));
    let results = agg["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    assert!(results[0]["rho"]["min"].as_f64().unwrap() > 1.0);
    assert!(results[1]["histogram"]["edges"].as_array().unwrap().len() >= 2);
}
