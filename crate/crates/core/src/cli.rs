//! Command-line front end.
//!
//! ```text
//! loiterplan allocate   --scenario s.json --out dir [--seed N] [--merge-radius R]
//! loiterplan trajectory --scenario s.json --out dir [--entries K] [--segments N]
//! loiterplan study <cost-vs-fleet|holonomic-ratio|dynamic-ratio> --out dir [--config c.json] [--trials N]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::allocation::{assign_static, default_merge_radius, run_scenario};
use crate::error::{Error, Result};
use crate::model::{tour_cost, Allocation, Point, TargetId};
use crate::scenario::{parse_scenario, Scenario};
use crate::simharness::{run_study, ExperimentConfig, StudyKind};
use crate::trajectory::tour_trajectory;

#[derive(Debug, Parser)]
#[command(name = "loiterplan", version, about = "Loiter-aware multi-vehicle tour planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster and tour the scenario's targets; replays its events if any.
    Allocate(ScenarioArgs),
    /// Allocate, then generate flight trajectories for every vehicle.
    Trajectory(ScenarioArgs),
    /// Run a Monte Carlo study.
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub entries: Option<usize>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long = "merge-radius")]
    pub merge_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// cost-vs-fleet, holonomic-ratio or dynamic-ratio
    pub kind: StudyKind,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file overriding the study defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub entries: Option<usize>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long = "merge-radius")]
    pub merge_radius: Option<f64>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::invalid(format!("serializing output: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario> {
    let mut s = parse_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(k) = args.entries {
        s.config.entries = k;
    }
    if let Some(n) = args.segments {
        s.config.segments = n;
    }
    if let Some(r) = args.merge_radius {
        s.config.merge_radius = Some(r);
    }
    s.validate()?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    Ok(s)
}

#[derive(Serialize)]
struct SiteRecord {
    id: TargetId,
    position: Point,
    loiter_radius: f64,
    covers: Vec<TargetId>,
}

#[derive(Serialize)]
struct TourRecord {
    vehicle_id: usize,
    start: Point,
    cost: f64,
    sequence: Vec<TargetId>,
    sites: Vec<SiteRecord>,
}

fn tour_records(alloc: &Allocation, starts: &[Point]) -> Result<Vec<TourRecord>> {
    alloc
        .tours
        .iter()
        .zip(starts)
        .map(|(tour, start)| {
            let sites = tour
                .sequence
                .iter()
                .map(|id| {
                    let t = alloc.sites.get(*id)?;
                    Ok(SiteRecord {
                        id: *id,
                        position: t.position,
                        loiter_radius: t.loiter_radius,
                        covers: alloc.covers.get(id).cloned().unwrap_or_else(|| vec![*id]),
                    })
                })
                .collect::<Result<_>>()?;
            Ok(TourRecord {
                vehicle_id: tour.vehicle_id,
                start: *start,
                cost: crate::model::tour_cost_from(*start, tour, &alloc.sites)?,
                sequence: tour.sequence.clone(),
                sites,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct AllocationFile {
    seed: u64,
    fleet_size: usize,
    depot: Point,
    merge_radius: f64,
    team_cost: f64,
    tours: Vec<TourRecord>,
}

#[derive(Serialize)]
struct IterationRecord {
    iteration: usize,
    start_time: f64,
    end_time: f64,
    cost: f64,
    tours: Vec<TourRecord>,
}

#[derive(Serialize)]
struct DynamicFile {
    cruise_speed: f64,
    total_cost: f64,
    iterations: Vec<IterationRecord>,
    visited: Vec<TargetId>,
    removed: Vec<TargetId>,
}

fn static_allocation(s: &Scenario) -> Result<(Allocation, f64)> {
    let radius = s
        .config
        .merge_radius
        .unwrap_or_else(|| default_merge_radius(s.targets.iter()));
    let alloc = assign_static(&s.targets, s.fleet_size, &s.depot, s.seed, Some(radius))?;
    alloc.check_coverage(s.targets.ids())?;
    Ok((alloc, radius))
}

/// Writes `allocation.json`, `vehicle-<i>.json` and `tour_costs.csv`; with
/// events also `dynamic.json` and `dynamic_costs.csv`.
pub fn cmd_allocate(args: &ScenarioArgs) -> Result<Vec<PathBuf>> {
    let s = load_scenario(args)?;
    let out = &args.out;
    let mut written = Vec::new();
    let (alloc, radius) = static_allocation(&s)?;
    let starts = vec![s.depot.position; s.fleet_size];
    let records = tour_records(&alloc, &starts)?;

    let mut csv = String::from("vehicle,sites,targets,cost\n");
    for r in &records {
        let covered: usize = r.sites.iter().map(|x| x.covers.len()).sum();
        let _ = writeln!(csv, "{},{},{},{}", r.vehicle_id, r.sites.len(), covered, r.cost);
        let path = out.join(format!("vehicle-{}.json", r.vehicle_id));
        write_file(&path, &json(r)?)?;
        written.push(path);
    }
    let path = out.join("tour_costs.csv");
    write_file(&path, &csv)?;
    written.push(path);

    let file = AllocationFile {
        seed: s.seed,
        fleet_size: s.fleet_size,
        depot: s.depot.position,
        merge_radius: radius,
        team_cost: records.iter().map(|r| r.cost).sum(),
        tours: records,
    };
    let path = out.join("allocation.json");
    write_file(&path, &json(&file)?)?;
    written.push(path);

    if !s.events.is_empty() {
        let cruise = s.cruise_speed()?;
        let run = run_scenario(&s.targets, &s.events, s.fleet_size, &s.depot, s.seed, Some(radius), cruise)?;
        run.check_coverage(&s.all_target_ids())?;
        let mut csv = String::from("iteration,vehicle,start_x,start_y,sites,targets,cost\n");
        let mut iterations = Vec::new();
        for (i, it) in run.iterations.iter().enumerate() {
            let tours = tour_records(&it.allocation, &it.starts)?;
            for t in &tours {
                let covered: usize = t.sites.iter().map(|x| x.covers.len()).sum();
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    i, t.vehicle_id, t.start.x, t.start.y, t.sites.len(), covered, t.cost
                );
            }
            iterations.push(IterationRecord {
                iteration: i,
                start_time: it.start_time,
                end_time: it.end_time,
                cost: tours.iter().map(|t| t.cost).sum(),
                tours,
            });
        }
        let file = DynamicFile {
            cruise_speed: cruise,
            total_cost: iterations.iter().map(|i| i.cost).sum(),
            iterations,
            visited: run.visited.iter().copied().collect(),
            removed: run.removed.iter().copied().collect(),
        };
        for (name, body) in [("dynamic.json", json(&file)?), ("dynamic_costs.csv", csv)] {
            let path = out.join(name);
            write_file(&path, &body)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Serialize)]
struct TrajectorySummary {
    vehicle_id: usize,
    tour_cost: f64,
    total_time: f64,
    total_length: f64,
    legs: Vec<crate::trajectory::Leg>,
}

#[derive(Serialize)]
struct Failure {
    vehicle_id: usize,
    error: String,
}

/// Outcome of the trajectory command; failures leave the other vehicles'
/// files in place.
#[derive(Debug)]
pub struct TrajectoryOutcome {
    pub written: Vec<PathBuf>,
    pub failed_vehicles: Vec<usize>,
}

/// Writes `trajectory-<i>.csv` per vehicle, `overlay.csv` with each tour
/// polyline next to its flight path, and `trajectory_summary.json`. Vehicles whose
/// trajectory fails are listed in `failures.json`.
pub fn cmd_trajectory(args: &ScenarioArgs) -> Result<TrajectoryOutcome> {
    let s = load_scenario(args)?;
    let out = &args.out;
    let (alloc, _) = static_allocation(&s)?;
    let mut written = Vec::new();
    let mut overlay = String::from("vehicle,layer,index,x,y\n");
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for tour in &alloc.tours {
        let v = tour.vehicle_id;
        let mut polyline = vec![s.depot.position];
        for id in &tour.sequence {
            polyline.push(alloc.sites.get(*id)?.position);
        }
        for (i, p) in polyline.iter().enumerate() {
            let _ = writeln!(overlay, "{v},tour,{i},{},{}", p.x, p.y);
        }
        match tour_trajectory(tour, &s.depot, &alloc.sites, &s.quad, s.config.entries, s.config.segments) {
            Ok(tt) => {
                for (i, smp) in tt.trajectory.samples.iter().enumerate() {
                    let p = smp.state.position;
                    let _ = writeln!(overlay, "{v},flight,{i},{},{}", p.x, p.y);
                }
                let path = out.join(format!("trajectory-{v}.csv"));
                let mut buf = Vec::new();
                tt.trajectory.write_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
                std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
                written.push(path);
                summaries.push(TrajectorySummary {
                    vehicle_id: v,
                    tour_cost: tour_cost(tour, &s.depot, &alloc.sites)?,
                    total_time: tt.trajectory.total_time(),
                    total_length: tt.trajectory.total_length(),
                    legs: tt.legs,
                });
            }
            Err(e) => failures.push(Failure {
                vehicle_id: v,
                error: e.to_string(),
            }),
        }
    }
    let path = out.join("overlay.csv");
    write_file(&path, &overlay)?;
    written.push(path);
    let path = out.join("trajectory_summary.json");
    write_file(&path, &json(&summaries)?)?;
    written.push(path);
    let failures_path = out.join("failures.json");
    if failures.is_empty() {
        // a stale manifest from an earlier run would misreport this one
        if failures_path.exists() {
            std::fs::remove_file(&failures_path).map_err(|e| Error::io(&failures_path, e))?;
        }
    } else {
        write_file(&failures_path, &json(&failures)?)?;
        written.push(failures_path);
    }
    Ok(TrajectoryOutcome {
        written,
        failed_vehicles: failures.iter().map(|f| f.vehicle_id).collect(),
    })
}

/// Study defaults for `kind`, overlaid with the keys of an optional config
/// file and then the command-line flags.
pub fn study_config(args: &StudyArgs) -> Result<ExperimentConfig> {
    let defaults = ExperimentConfig::for_kind(args.kind);
    let mut cfg = match &args.config {
        None => defaults,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parse_err = |e: serde_json::Error| Error::Parse {
                path: path.clone(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            };
            let overrides: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text).map_err(parse_err)?;
            let mut merged = match serde_json::to_value(&defaults) {
                Ok(serde_json::Value::Object(m)) => m,
                _ => unreachable!("config serializes to an object"),
            };
            for (k, v) in overrides {
                merged.insert(k, v);
            }
            let cfg: ExperimentConfig = serde_json::from_value(serde_json::Value::Object(merged))
                .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
            if cfg.kind != args.kind {
                return Err(Error::schema(
                    "kind",
                    format!("config is for {} but {} was requested", cfg.kind.as_str(), args.kind.as_str()),
                ));
            }
            cfg
        }
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.threads {
        cfg.threads = Some(v);
    }
    if let Some(v) = args.entries {
        cfg.entries = v;
    }
    if let Some(v) = args.segments {
        cfg.segments = v;
    }
    if let Some(v) = args.merge_radius {
        cfg.merge_radius = Some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_study(args: &StudyArgs) -> Result<Vec<PathBuf>> {
    let cfg = study_config(args)?;
    let outputs = run_study(&cfg, &args.out)?;
    let mut written = outputs.csv_files;
    written.push(outputs.aggregate);
    Ok(written)
}

/// Runs a parsed command line, printing written files to stdout and errors
/// to stderr.
pub fn run(cli: Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Allocate(a) => cmd_allocate(a).map(|w| (w, Vec::new())),
        Command::Trajectory(a) => cmd_trajectory(a).map(|o| (o.written, o.failed_vehicles)),
        Command::Study(a) => cmd_study(a).map(|w| (w, Vec::new())),
    };
    match result {
        Ok((written, failed)) => {
            for p in written {
                println!("{}", p.display());
            }
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: trajectory generation failed for vehicles {failed:?}; see failures.json");
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
