//! Seeded Monte Carlo studies: per-vehicle cost against fleet size,
//! quadcopter against holonomic transition time, and the static/dynamic
//! replanning cost ratio.
//!
//! Trial `i` at target count `n` draws from ChaCha stream `(n << 32) | i` of
//! the master seed, so every fleet size and arrival count at a given `n`
//! sees the same target field, and results do not depend on scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{assign_static_detailed, procedure1_cost, procedure2_iterations};
use crate::dynamics::{v_max, PlanarState, QuadParams};
use crate::error::{Error, Result};
use crate::model::{team_cost, Depot, Point, Target, TargetSet, DEFAULT_LOITER_RADIUS};
use crate::trajectory::{holonomic_transition_time, transition_to_target, DEFAULT_ENTRIES, DEFAULT_SEGMENTS};
use crate::tsp::MatchingKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    CostVsFleet,
    HolonomicRatio,
    DynamicRatio,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::CostVsFleet => "cost-vs-fleet",
            StudyKind::HolonomicRatio => "holonomic-ratio",
            StudyKind::DynamicRatio => "dynamic-ratio",
        }
    }
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cost-vs-fleet" => Ok(StudyKind::CostVsFleet),
            "holonomic-ratio" => Ok(StudyKind::HolonomicRatio),
            "dynamic-ratio" => Ok(StudyKind::DynamicRatio),
            other => Err(Error::invalid(format!(
                "unknown study `{other}` (expected cost-vs-fleet, holonomic-ratio or dynamic-ratio)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Region {
    fn default() -> Self {
        Region {
            x_min: -1000.0,
            x_max: 1000.0,
            y_min: -1000.0,
            y_max: 1000.0,
        }
    }
}

impl Region {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Point {
        Point::new(
            rng.random_range(self.x_min..self.x_max),
            rng.random_range(self.y_min..self.y_max),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: StudyKind,
    /// Target counts.
    pub targets: Vec<usize>,
    /// Fleet sizes.
    pub fleet: Vec<usize>,
    /// Arrival counts for the dynamic study.
    pub arrivals: Vec<usize>,
    pub region: Region,
    pub trials: usize,
    pub seed: u64,
    pub loiter_radius: f64,
    /// `None` uses twice the loiter radius.
    pub merge_radius: Option<f64>,
    pub quad: QuadParams,
    /// Center distance range of holonomic-study transitions.
    pub min_distance: f64,
    pub max_distance: f64,
    pub distance_bin: f64,
    pub entries: usize,
    pub segments: usize,
    /// Histogram bin width for the cost ratio.
    pub ratio_bin: f64,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_kind(StudyKind::CostVsFleet)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults for each study.
    pub fn for_kind(kind: StudyKind) -> Self {
        let base = ExperimentConfig {
            kind,
            targets: vec![10, 20, 40],
            fleet: vec![2, 4, 8],
            arrivals: vec![],
            region: Region::default(),
            trials: 200,
            seed: 0,
            loiter_radius: DEFAULT_LOITER_RADIUS,
            merge_radius: None,
            quad: QuadParams::default(),
            min_distance: 10.0,
            max_distance: 100.0,
            distance_bin: 10.0,
            entries: DEFAULT_ENTRIES,
            segments: DEFAULT_SEGMENTS,
            ratio_bin: 0.05,
            threads: None,
        };
        match kind {
            StudyKind::CostVsFleet => base,
            StudyKind::HolonomicRatio => ExperimentConfig {
                targets: vec![1],
                fleet: vec![1],
                ..base
            },
            StudyKind::DynamicRatio => ExperimentConfig {
                targets: vec![40],
                fleet: vec![4],
                arrivals: vec![8, 16, 32],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        let r = &self.region;
        if !(r.x_min < r.x_max && r.y_min < r.y_max) || ![r.x_min, r.x_max, r.y_min, r.y_max].iter().all(|v| v.is_finite()) {
            return bad(format!("region is not well formed: {r:?}"));
        }
        if !(self.loiter_radius > 0.0) || !self.loiter_radius.is_finite() {
            return bad(format!("loiter radius must be positive, got {}", self.loiter_radius));
        }
        if self.merge_radius.is_some_and(|m| !(m >= 0.0)) {
            return bad("merge radius must be >= 0".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        self.quad.validate()?;
        match self.kind {
            StudyKind::CostVsFleet | StudyKind::DynamicRatio => {
                if self.targets.is_empty() || self.fleet.is_empty() {
                    return bad("targets and fleet lists must be nonempty".into());
                }
                for &n in &self.targets {
                    for &m in &self.fleet {
                        if m == 0 || m > n {
                            return bad(format!("fleet size {m} is invalid for {n} targets"));
                        }
                    }
                }
                if self.targets.iter().any(|&n| n > u32::MAX as usize) {
                    return bad("target count too large".into());
                }
                if self.kind == StudyKind::DynamicRatio {
                    if self.arrivals.is_empty() {
                        return bad("arrivals list must be nonempty".into());
                    }
                    if !(self.ratio_bin > 0.0) {
                        return bad("ratio bin width must be positive".into());
                    }
                }
            }
            StudyKind::HolonomicRatio => {
                if !(0.0 < self.min_distance && self.min_distance < self.max_distance) {
                    return bad("holonomic distances must satisfy 0 < min < max".into());
                }
                if self.min_distance <= self.loiter_radius {
                    return bad("min distance must exceed the loiter radius".into());
                }
                if !(self.distance_bin > 0.0) {
                    return bad("distance bin width must be positive".into());
                }
                if self.quad.drag_coeff <= 0.0 {
                    return bad("holonomic baseline needs a finite straight-flight speed (drag > 0)".into());
                }
                if self.entries < 2 {
                    return bad("at least 2 entry points required".into());
                }
            }
        }
        Ok(())
    }

    fn depot(&self) -> Depot {
        Depot::new(Point::ORIGIN)
    }
}

/// RNG for trial `trial` at target count `n`.
pub fn trial_rng(seed: u64, n: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | trial as u64);
    rng
}

fn sample_targets(rng: &mut ChaCha8Rng, region: &Region, first_id: u64, count: usize, radius: f64) -> Vec<Target> {
    (0..count)
        .map(|i| Target::new(first_id + i as u64, region.sample(rng), radius))
        .collect()
}

fn run_trials<T: Send>(threads: Option<usize>, trials: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    let work = || (0..trials).into_par_iter().map(&f).collect::<Vec<T>>();
    match threads {
        None => Ok(work()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(work))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Summary> {
        let mut count = 0;
        let (mut sum, mut min, mut max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            count += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        (count > 0).then(|| Summary {
            count,
            mean: sum / count as f64,
            min,
            max,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostTrial {
    pub trial: usize,
    pub n: usize,
    pub m: usize,
    pub team_cost: f64,
    pub per_vehicle_cost: f64,
    pub min_tour_cost: f64,
    pub max_tour_cost: f64,
    pub sites: usize,
    pub exact_matching: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostGroup {
    pub n: usize,
    pub m: usize,
    pub per_vehicle: Summary,
    pub trials: Vec<CostTrial>,
}

fn cost_trial(cfg: &ExperimentConfig, n: usize, m: usize, trial: usize) -> Result<CostTrial> {
    let mut rng = trial_rng(cfg.seed, n, trial);
    let kmeans_seed = rng.random::<u64>();
    let targets = TargetSet::new(sample_targets(&mut rng, &cfg.region, 0, n, cfg.loiter_radius))?;
    let depot = cfg.depot();
    let (alloc, _, matchings) = assign_static_detailed(&targets, m, &depot, kmeans_seed, cfg.merge_radius)?;
    let tour_costs: Vec<f64> = alloc
        .tours
        .iter()
        .map(|t| crate::model::tour_cost(t, &depot, &alloc.sites))
        .collect::<Result<_>>()?;
    let team = team_cost(&alloc, &depot, &alloc.sites)?;
    Ok(CostTrial {
        trial,
        n,
        m,
        team_cost: team,
        per_vehicle_cost: team / m as f64,
        min_tour_cost: tour_costs.iter().copied().fold(f64::INFINITY, f64::min),
        max_tour_cost: tour_costs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        sites: alloc.sites.len(),
        exact_matching: matchings.iter().all(|k| *k != MatchingKind::Greedy),
    })
}

/// Mean geometric tour cost per vehicle for every (n, m) pair.
pub fn run_cost_study(cfg: &ExperimentConfig) -> Result<Vec<CostGroup>> {
    cfg.validate()?;
    let mut groups = Vec::new();
    for &n in &cfg.targets {
        for &m in &cfg.fleet {
            let trials = run_trials(cfg.threads, cfg.trials, |i| cost_trial(cfg, n, m, i))?
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let per_vehicle = Summary::of(trials.iter().map(|t| t.per_vehicle_cost)).expect("trials >= 1");
            groups.push(CostGroup { n, m, per_vehicle, trials });
        }
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolonomicTrial {
    pub trial: usize,
    pub distance: f64,
    pub quad_time: Option<f64>,
    pub holonomic_time: Option<f64>,
    pub ratio: Option<f64>,
    pub entry_index: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: f64,
    pub ratio: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolonomicStudy {
    pub holonomic_speed: f64,
    pub ratio: Option<Summary>,
    pub bins: Vec<DistanceBin>,
    pub failures: usize,
    pub trials: Vec<HolonomicTrial>,
}

/// Baseline speed of the holonomic vehicle: the fastest sustainable straight
/// flight, which bounds the quadcopter's speed everywhere.
pub fn holonomic_speed(p: &QuadParams) -> f64 {
    p.straight_speed_bound()
}

fn holonomic_trial(cfg: &ExperimentConfig, trial: usize) -> HolonomicTrial {
    let mut rng = trial_rng(cfg.seed, 1, trial);
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let bearing = rng.random_range(0.0..std::f64::consts::TAU);
    let distance = rng.random_range(cfg.min_distance..cfg.max_distance);
    let mut rec = HolonomicTrial {
        trial,
        distance,
        quad_time: None,
        holonomic_time: None,
        ratio: None,
        entry_index: None,
        error: None,
    };
    // leaving a loiter circle of the same radius at loiter speed
    let speed = match v_max(&cfg.quad, cfg.loiter_radius) {
        Ok(v) => v,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let start = PlanarState::new(Point::ORIGIN, Point::new(heading.cos(), heading.sin()) * speed);
    let target = Target::new(1, Point::new(bearing.cos(), bearing.sin()) * distance, cfg.loiter_radius);
    match transition_to_target(&start, &target, &cfg.quad, cfg.entries, cfg.segments) {
        Ok(choice) => {
            let h = holonomic_transition_time(start.position, choice.best.entry, holonomic_speed(&cfg.quad));
            rec.quad_time = Some(choice.best.time);
            rec.holonomic_time = Some(h);
            rec.ratio = Some(choice.best.time / h);
            rec.entry_index = Some(choice.best.index);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Quadcopter transfer time against a straight-line holonomic vehicle, from
/// a loiter exit to the best entry of a circle at a random distance.
pub fn run_holonomic_study(cfg: &ExperimentConfig) -> Result<HolonomicStudy> {
    cfg.validate()?;
    let trials = run_trials(cfg.threads, cfg.trials, |i| holonomic_trial(cfg, i))?;
    let ok = || trials.iter().filter_map(|t| t.ratio.map(|r| (t.distance, r)));
    let mut bins = Vec::new();
    let mut lo = cfg.min_distance;
    while lo < cfg.max_distance {
        let hi = (lo + cfg.distance_bin).min(cfg.max_distance);
        let last = hi >= cfg.max_distance;
        bins.push(DistanceBin {
            lo,
            hi,
            ratio: Summary::of(ok().filter(|(d, _)| *d >= lo && (*d < hi || last)).map(|(_, r)| r)),
        });
        lo = hi;
    }
    Ok(HolonomicStudy {
        holonomic_speed: holonomic_speed(&cfg.quad),
        ratio: Summary::of(ok().map(|(_, r)| r)),
        bins,
        failures: trials.iter().filter(|t| t.ratio.is_none()).count(),
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicTrial {
    pub trial: usize,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub procedure1: f64,
    pub procedure2: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins of width `width` aligned to multiples of it, covering all values.
    pub fn build(values: &[f64], width: f64) -> Histogram {
        let Some(s) = Summary::of(values.iter().copied()) else {
            return Histogram {
                edges: vec![],
                counts: vec![],
            };
        };
        let first = (s.min / width).floor() as i64;
        let mut last = (s.max / width).floor() as i64 + 1;
        if last <= first {
            last = first + 1;
        }
        let edges: Vec<f64> = (first..=last).map(|k| k as f64 * width).collect();
        let mut counts = vec![0; edges.len() - 1];
        for v in values {
            let k = (((v / width).floor() as i64) - first).clamp(0, counts.len() as i64 - 1);
            counts[k as usize] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicGroup {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub rho: Summary,
    pub procedure1: Summary,
    pub procedure2: Summary,
    pub histogram: Histogram,
    pub trials: Vec<DynamicTrial>,
}

fn dynamic_trial(cfg: &ExperimentConfig, n: usize, m: usize, r: usize, trial: usize) -> Result<DynamicTrial> {
    let mut rng = trial_rng(cfg.seed, n, trial);
    let kmeans_seed = rng.random::<u64>();
    let initial = TargetSet::new(sample_targets(&mut rng, &cfg.region, 0, n, cfg.loiter_radius))?;
    let arrivals = sample_targets(&mut rng, &cfg.region, n as u64, r, cfg.loiter_radius);
    let depot = cfg.depot();
    let p1 = procedure1_cost(&initial, &arrivals, m, &depot, kmeans_seed, cfg.merge_radius)?.total();
    let p2 = procedure2_iterations(&initial, &arrivals, m, &depot, kmeans_seed, cfg.merge_radius)?
        .iter()
        .try_fold(0.0, |acc, it| Ok::<f64, Error>(acc + it.cost()?))?;
    Ok(DynamicTrial {
        trial,
        n,
        m,
        r,
        procedure1: p1,
        procedure2: p2,
        rho: p1 / p2,
    })
}

/// Ratio of return-to-depot replanning cost to absorb-and-continue cost.
pub fn run_dynamic_study(cfg: &ExperimentConfig) -> Result<Vec<DynamicGroup>> {
    cfg.validate()?;
    let mut groups = Vec::new();
    for &n in &cfg.targets {
        for &m in &cfg.fleet {
            for &r in &cfg.arrivals {
                let trials = run_trials(cfg.threads, cfg.trials, |i| dynamic_trial(cfg, n, m, r, i))?
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                let rhos: Vec<f64> = trials.iter().map(|t| t.rho).collect();
                groups.push(DynamicGroup {
                    n,
                    m,
                    r,
                    rho: Summary::of(rhos.iter().copied()).expect("trials >= 1"),
                    procedure1: Summary::of(trials.iter().map(|t| t.procedure1)).expect("trials >= 1"),
                    procedure2: Summary::of(trials.iter().map(|t| t.procedure2)).expect("trials >= 1"),
                    histogram: Histogram::build(&rhos, cfg.ratio_bin),
                    trials,
                });
            }
        }
    }
    Ok(groups)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-trial CSV text for one (n, m) file of the cost study.
pub fn cost_csv(group: &CostGroup) -> String {
    let mut s = String::from("trial,n,m,team_cost,per_vehicle_cost,min_tour_cost,max_tour_cost,sites,exact_matching\n");
    for t in &group.trials {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            t.trial, t.n, t.m, t.team_cost, t.per_vehicle_cost, t.min_tour_cost, t.max_tour_cost, t.sites, t.exact_matching
        );
    }
    s
}

pub fn holonomic_csv(study: &HolonomicStudy) -> String {
    let mut s = String::from("trial,distance,quad_time,holonomic_time,ratio,entry_index,error\n");
    for t in &study.trials {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            t.trial,
            t.distance,
            opt(t.quad_time),
            opt(t.holonomic_time),
            opt(t.ratio),
            t.entry_index.map(|i| i.to_string()).unwrap_or_default(),
            t.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        );
    }
    s
}

/// Per-trial CSV for one (n, m) file of the dynamic study; all arrival
/// counts share the file.
pub fn dynamic_csv(groups: &[&DynamicGroup]) -> String {
    let mut s = String::from("trial,n,m,r,procedure1,procedure2,rho\n");
    for g in groups {
        for t in &g.trials {
            let _ = writeln!(s, "{},{},{},{},{},{},{}", t.trial, t.n, t.m, t.r, t.procedure1, t.procedure2, t.rho);
        }
    }
    s
}

pub fn csv_name(kind: StudyKind, n: usize, m: usize, seed: u64) -> String {
    format!("{}-{n}-{m}-{seed}.csv", kind.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyOutputs {
    pub csv_files: Vec<PathBuf>,
    pub aggregate: PathBuf,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct GroupAggregate<S: Serialize> {
    #[serde(flatten)]
    group: S,
    csv: String,
}

#[derive(Serialize)]
struct CostAggregate {
    n: usize,
    m: usize,
    per_vehicle_cost: Summary,
    greedy_matching_trials: usize,
}

#[derive(Serialize)]
struct DynamicAggregate<'a> {
    n: usize,
    m: usize,
    r: usize,
    rho: Summary,
    procedure1: Summary,
    procedure2: Summary,
    histogram: &'a Histogram,
}

#[derive(Serialize)]
struct HolonomicAggregate<'a> {
    holonomic_speed: f64,
    ratio: Option<Summary>,
    bins: &'a [DistanceBin],
    failures: usize,
}

#[derive(Serialize)]
struct Aggregate<'a, G: Serialize> {
    study: &'static str,
    config: &'a ExperimentConfig,
    results: G,
}

/// Runs the configured study and writes per-trial CSVs plus
/// `<kind>-<seed>.json` with the aggregates and the echoed config.
pub fn run_study(cfg: &ExperimentConfig, out_dir: &Path) -> Result<StudyOutputs> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut csv_files = Vec::new();
    let aggregate = out_dir.join(format!("{}-{}.json", cfg.kind.as_str(), cfg.seed));
    let json = match cfg.kind {
        StudyKind::CostVsFleet => {
            let groups = run_cost_study(cfg)?;
            let mut results = Vec::new();
            for g in &groups {
                let name = csv_name(cfg.kind, g.n, g.m, cfg.seed);
                write(&out_dir.join(&name), &cost_csv(g))?;
                csv_files.push(out_dir.join(&name));
                results.push(GroupAggregate {
                    group: CostAggregate {
                        n: g.n,
                        m: g.m,
                        per_vehicle_cost: g.per_vehicle,
                        greedy_matching_trials: g.trials.iter().filter(|t| !t.exact_matching).count(),
                    },
                    csv: name,
                });
            }
            to_json(&Aggregate {
                study: cfg.kind.as_str(),
                config: cfg,
                results,
            })?
        }
        StudyKind::HolonomicRatio => {
            let study = run_holonomic_study(cfg)?;
            let name = csv_name(cfg.kind, 1, 1, cfg.seed);
            write(&out_dir.join(&name), &holonomic_csv(&study))?;
            csv_files.push(out_dir.join(&name));
            to_json(&Aggregate {
                study: cfg.kind.as_str(),
                config: cfg,
                results: GroupAggregate {
                    group: HolonomicAggregate {
                        holonomic_speed: study.holonomic_speed,
                        ratio: study.ratio,
                        bins: &study.bins,
                        failures: study.failures,
                    },
                    csv: name,
                },
            })?
        }
        StudyKind::DynamicRatio => {
            let groups = run_dynamic_study(cfg)?;
            let mut results = Vec::new();
            for &n in &cfg.targets {
                for &m in &cfg.fleet {
                    let mine: Vec<&DynamicGroup> = groups.iter().filter(|g| g.n == n && g.m == m).collect();
                    let name = csv_name(cfg.kind, n, m, cfg.seed);
                    write(&out_dir.join(&name), &dynamic_csv(&mine))?;
                    csv_files.push(out_dir.join(&name));
                    for g in mine {
                        results.push(GroupAggregate {
                            group: DynamicAggregate {
                                n,
                                m,
                                r: g.r,
                                rho: g.rho,
                                procedure1: g.procedure1,
                                procedure2: g.procedure2,
                                histogram: &g.histogram,
                            },
                            csv: name.clone(),
                        });
                    }
                }
            }
            to_json(&Aggregate {
                study: cfg.kind.as_str(),
                config: cfg,
                results,
            })?
        }
    };
    write(&aggregate, &json)?;
    Ok(StudyOutputs { csv_files, aggregate })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::invalid(format!("serializing aggregate: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_edges_cover_values() {
        let h = Histogram::build(&[1.01, 1.02, 1.26, 0.99], 0.05);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        assert!(h.edges[0] <= 0.99 && *h.edges.last().unwrap() > 1.26);
    }

    #[test]
    fn trial_streams_differ() {
        let a: u64 = trial_rng(1, 40, 0).random();
        let b: u64 = trial_rng(1, 40, 1).random();
        let c: u64 = trial_rng(1, 20, 0).random();
        assert!(a != b && a != c);
        assert_eq!(a, trial_rng(1, 40, 0).random::<u64>());
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::for_kind(StudyKind::CostVsFleet);
        c.validate().unwrap();
        c.fleet = vec![50];
        assert!(c.validate().is_err());
        let mut h = ExperimentConfig::for_kind(StudyKind::HolonomicRatio);
        h.validate().unwrap();
        h.quad.drag_coeff = 0.0;
        assert!(h.validate().is_err());
    }
}
