//! Experiment harness: runs planner cells over a generated corpus, writes a
//! CSV of records and per-cell aggregates with plot-ready series.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planners::{
    self, plan_single_optimal, Algorithm, HeuristicKind, Plan, PlannerError, PlannerOptions,
};
use crate::scene::{self, generate, Fleet, GenMode, GenParams, Instance, SceneError};
use crate::world::World;

/// Exit geometry used for every fleet size in a suite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitRule {
    /// Single-lane exit shared by all robots.
    #[default]
    Narrow,
    /// Exit widened with the fleet so every robot has its own slot.
    Scaled,
}

impl ExitRule {
    pub fn fleet(self, k: usize) -> Fleet {
        match self {
            ExitRule::Narrow => Fleet::narrow(k),
            ExitRule::Scaled => Fleet::scaled(k),
        }
    }
}

fn default_mcts_iterations() -> usize {
    PlannerOptions::default().mcts_iterations
}

fn default_exploration_c() -> f64 {
    PlannerOptions::default().exploration_c
}

fn default_dp_cap() -> usize {
    PlannerOptions::default().dp_cap
}

fn default_single_cap() -> usize {
    PlannerOptions::default().single_cap
}

/// Suite description (TOML field names match one to one).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub modes: Vec<GenMode>,
    pub n_values: Vec<usize>,
    pub seeds_per_cell: u64,
    #[serde(default)]
    pub first_seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub k_values: Vec<usize>,
    /// Lookahead variants to run (on, off or both).
    pub lookahead: Vec<bool>,
    /// Wall-clock budget per A* run, seconds.
    pub time_budget: f64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub exit: ExitRule,
    /// Read instances from `<corpus_dir>/<mode>/<n>/<seed>.inst` when
    /// present instead of generating them.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    #[serde(default = "default_mcts_iterations")]
    pub mcts_iterations: usize,
    #[serde(default = "default_exploration_c")]
    pub exploration_c: f64,
    #[serde(default = "default_dp_cap")]
    pub dp_cap: usize,
    /// Largest n for which the single-robot optimum (and the ratio) is
    /// computed.
    #[serde(default = "default_single_cap")]
    pub single_cap: usize,
    #[serde(default)]
    pub heuristic: HeuristicKind,
    #[serde(default)]
    pub full_resim: bool,
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        let config: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: String| Err(BenchError::Config(m));
        if self.seeds_per_cell == 0 {
            return fail("seeds_per_cell must be at least 1".into());
        }
        for (name, empty) in [
            ("modes", self.modes.is_empty()),
            ("n_values", self.n_values.is_empty()),
            ("algorithms", self.algorithms.is_empty()),
            ("k_values", self.k_values.is_empty()),
            ("lookahead", self.lookahead.is_empty()),
        ] {
            if empty {
                return fail(format!("{name} must not be empty"));
            }
        }
        if self.k_values.contains(&0) {
            return fail("k_values must be positive".into());
        }
        if !(self.time_budget > 0.0 && self.time_budget.is_finite()) {
            return fail("time_budget must be a positive number of seconds".into());
        }
        for &n in &self.n_values {
            if n == 0 || n > crate::world::MAX_OBJECTS {
                return fail(format!(
                    "n = {n} is outside 1..={}",
                    crate::world::MAX_OBJECTS
                ));
            }
            if self.algorithms.contains(&Algorithm::Dp) && n > self.dp_cap {
                return fail(format!("n = {n} exceeds the dp cap {}", self.dp_cap));
            }
            if self.algorithms.contains(&Algorithm::Single) && n > self.single_cap {
                return fail(format!(
                    "n = {n} exceeds the single-robot cap {}",
                    self.single_cap
                ));
            }
        }
        Ok(())
    }

    pub fn planner_options(&self, lookahead: bool) -> PlannerOptions {
        PlannerOptions {
            lookahead,
            time_budget: Some(Duration::from_secs_f64(self.time_budget)),
            mcts_iterations: self.mcts_iterations,
            exploration_c: self.exploration_c,
            dp_cap: self.dp_cap,
            single_cap: self.single_cap,
            heuristic: self.heuristic,
            full_resim: self.full_resim,
            ..PlannerOptions::default()
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        self.first_seed..self.first_seed + self.seeds_per_cell
    }

    /// The instance of one corpus cell with `k` robots.
    pub fn instance(
        &self,
        mode: GenMode,
        n: usize,
        seed: u64,
        k: usize,
    ) -> Result<Instance, BenchError> {
        if let Some(dir) = &self.corpus_dir {
            let path = scene::corpus_path(dir, mode, n, seed);
            if path.exists() {
                let inst = scene::load(&path)?;
                let fleet = self.exit.fleet(k);
                return Ok(Instance {
                    robot_count: k,
                    exit_width: fleet.exit_width,
                    ..inst
                });
            }
        }
        // Objects are placed clear of the widest exit of the suite so that
        // every fleet size sees the same layout.
        let widest = self.k_values.iter().copied().max().unwrap_or(k);
        let base = generate(&GenParams::new(mode, n), &self.exit.fleet(widest), seed)?;
        let fleet = self.exit.fleet(k);
        Ok(Instance {
            robot_count: k,
            exit_width: fleet.exit_width,
            ..base
        })
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Outcome of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    /// Budget exhausted; the record carries the incumbent, if any.
    Timeout,
    Failed,
}

/// One (instance, algorithm, k, lookahead) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub instance_id: String,
    pub mode: GenMode,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub lookahead: bool,
    pub status: CellStatus,
    pub makespan: Option<f64>,
    pub single_opt_t: Option<f64>,
    pub ratio: Option<f64>,
    pub compute_time: f64,
    pub nodes_expanded: u64,
    pub truncated_epochs: u64,
    /// Closest approach of two robots in the trace.
    pub min_separation: Option<f64>,
    /// Whether every object has exactly one pick and one unload event.
    pub conserved: Option<bool>,
    pub note: String,
}

impl BenchRecord {
    fn key(&self) -> (GenMode, usize, usize, u64, Algorithm, bool) {
        (
            self.mode,
            self.n,
            self.k,
            self.seed,
            self.algorithm,
            self.lookahead,
        )
    }
}

pub fn instance_id(mode: GenMode, n: usize, seed: u64) -> String {
    format!("{mode}-n{n}-s{seed}")
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    mode: GenMode,
    n: usize,
    seed: u64,
    k: usize,
    algorithm: Algorithm,
    lookahead: bool,
}

fn cells(config: &BenchConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &mode in &config.modes {
        for &n in &config.n_values {
            for seed in config.seeds() {
                for &k in &config.k_values {
                    for &algorithm in &config.algorithms {
                        for &lookahead in &config.lookahead {
                            out.push(Cell {
                                mode,
                                n,
                                seed,
                                k,
                                algorithm,
                                lookahead,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

fn record_from_plan(
    cell: &Cell,
    status: CellStatus,
    plan: &Plan,
    world: &World,
    t: Option<f64>,
    note: String,
) -> BenchRecord {
    BenchRecord {
        instance_id: instance_id(cell.mode, cell.n, cell.seed),
        mode: cell.mode,
        n: cell.n,
        k: cell.k,
        seed: cell.seed,
        algorithm: cell.algorithm,
        lookahead: cell.lookahead,
        status,
        makespan: Some(plan.makespan),
        single_opt_t: t,
        ratio: t.map(|t| plan.makespan / t),
        compute_time: plan.compute_time,
        nodes_expanded: plan.nodes_expanded,
        truncated_epochs: plan.truncated_epochs,
        min_separation: plan
            .trace
            .min_separation
            .is_finite()
            .then_some(plan.trace.min_separation),
        conserved: Some(plan.trace.check_conservation(world.ids()).is_ok()),
        note,
    }
}

fn run_cell(
    config: &BenchConfig,
    cell: &Cell,
    singles: &HashMap<(GenMode, usize, u64, usize), Option<f64>>,
) -> BenchRecord {
    let failed = |note: String| BenchRecord {
        instance_id: instance_id(cell.mode, cell.n, cell.seed),
        mode: cell.mode,
        n: cell.n,
        k: cell.k,
        seed: cell.seed,
        algorithm: cell.algorithm,
        lookahead: cell.lookahead,
        status: CellStatus::Failed,
        makespan: None,
        single_opt_t: None,
        ratio: None,
        compute_time: 0.0,
        nodes_expanded: 0,
        truncated_epochs: 0,
        min_separation: None,
        conserved: None,
        note,
    };
    let inst = match config.instance(cell.mode, cell.n, cell.seed, cell.k) {
        Ok(inst) => inst,
        Err(e) => return failed(e.to_string()),
    };
    let world = World::new(&inst);
    let t = singles
        .get(&(cell.mode, cell.n, cell.seed, cell.k))
        .copied()
        .flatten();
    let opts = config.planner_options(cell.lookahead);
    match planners::run(&world, cell.algorithm, &opts) {
        Ok(plan) => record_from_plan(cell, CellStatus::Ok, &plan, &world, t, String::new()),
        Err(PlannerError::BudgetExhausted {
            incumbent: Some(plan),
        }) => record_from_plan(
            cell,
            CellStatus::Timeout,
            &plan,
            &world,
            t,
            "budget exhausted; incumbent reported".into(),
        ),
        Err(PlannerError::BudgetExhausted { incumbent: None }) => BenchRecord {
            status: CellStatus::Timeout,
            compute_time: config.time_budget,
            ..failed("budget exhausted without incumbent".into())
        },
        Err(e) => BenchRecord {
            single_opt_t: t,
            ..failed(e.to_string())
        },
    }
}

/// Sorts records by cell key (mode, n, k, seed, algorithm, lookahead).
pub fn sort_canonical(records: &mut [BenchRecord]) {
    records.sort_by_key(BenchRecord::key);
}

/// Runs every cell on `jobs` worker threads (0 = all cores), calling
/// `progress` as cells finish. Records come back in canonical order;
/// failures are recorded, never fatal. Files are not written.
pub fn run_cells_with(
    config: &BenchConfig,
    jobs: usize,
    progress: &(dyn Fn(&BenchRecord) + Sync),
) -> Result<Vec<BenchRecord>, BenchError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start workers: {e}")))?;
    pool.install(|| {
        let mut instances: Vec<(GenMode, usize, u64, usize)> = Vec::new();
        for &mode in &config.modes {
            for &n in &config.n_values {
                for seed in config.seeds() {
                    for &k in &config.k_values {
                        instances.push((mode, n, seed, k));
                    }
                }
            }
        }
        let singles: HashMap<_, _> = instances
            .into_par_iter()
            .map(|key @ (mode, n, seed, k)| {
                let t = (n <= config.single_cap)
                    .then(|| config.instance(mode, n, seed, k).ok())
                    .flatten()
                    .and_then(|inst| {
                        plan_single_optimal(&World::new(&inst), &config.planner_options(true)).ok()
                    })
                    .map(|(t, _)| t);
                (key, t)
            })
            .collect();
        let mut records: Vec<BenchRecord> = cells(config)
            .into_par_iter()
            .map(|cell| {
                let r = run_cell(config, &cell, &singles);
                progress(&r);
                r
            })
            .collect();
        sort_canonical(&mut records);
        Ok(records)
    })
}

/// Runs the suite and writes `results.csv`, `aggregate.csv` and the plot
/// series into the output directory.
pub fn run_suite_with(
    config: &BenchConfig,
    jobs: usize,
    progress: &(dyn Fn(&BenchRecord) + Sync),
) -> Result<Vec<BenchRecord>, BenchError> {
    let records = run_cells_with(config, jobs, progress)?;
    fs::create_dir_all(&config.output_dir)?;
    write_csv(&records, &config.output_dir.join("results.csv"))?;
    let rows = aggregate(&records);
    write_aggregate_csv(&rows, &config.output_dir.join("aggregate.csv"))?;
    write_plot_data(&rows, &config.output_dir.join("plots"))?;
    Ok(records)
}

pub fn run_suite(config: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    run_suite_with(config, 0, &|_| {})
}

pub fn write_csv(records: &[BenchRecord], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Per-cell summary over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: GenMode,
    pub n: usize,
    pub k: usize,
    pub algorithm: Algorithm,
    pub lookahead: bool,
    /// Records with a makespan.
    pub count: usize,
    pub timeouts: usize,
    pub failures: usize,
    pub makespan_mean: f64,
    pub makespan_std: f64,
    pub ratio_mean: Option<f64>,
    pub ratio_std: Option<f64>,
    pub compute_time_mean: f64,
    pub compute_time_std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by (mode, n, k, algorithm, lookahead).
pub fn aggregate(records: &[BenchRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(GenMode, usize, usize, Algorithm, bool), Vec<&BenchRecord>> =
        BTreeMap::new();
    for r in records {
        groups
            .entry((r.mode, r.n, r.k, r.algorithm, r.lookahead))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((mode, n, k, algorithm, lookahead), rs)| {
            let makespans: Vec<f64> = rs.iter().filter_map(|r| r.makespan).collect();
            let ratios: Vec<f64> = rs.iter().filter_map(|r| r.ratio).collect();
            let times: Vec<f64> = rs
                .iter()
                .filter(|r| r.makespan.is_some())
                .map(|r| r.compute_time)
                .collect();
            let (makespan_mean, makespan_std) = mean_std(&makespans);
            let (compute_time_mean, compute_time_std) = mean_std(&times);
            let ratio = (!ratios.is_empty()).then(|| mean_std(&ratios));
            AggregateRow {
                mode,
                n,
                k,
                algorithm,
                lookahead,
                count: makespans.len(),
                timeouts: rs
                    .iter()
                    .filter(|r| r.status == CellStatus::Timeout)
                    .count(),
                failures: rs.iter().filter(|r| r.status == CellStatus::Failed).count(),
                makespan_mean,
                makespan_std,
                ratio_mean: ratio.map(|r| r.0),
                ratio_std: ratio.map(|r| r.1),
                compute_time_mean,
                compute_time_std,
            }
        })
        .collect()
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes, per (mode, k, algorithm, lookahead), a ratio-vs-n and a
/// compute-time-vs-n series: two whitespace-separated columns under a
/// comment header. Returns the files written.
pub fn write_plot_data(rows: &[AggregateRow], dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(dir)?;
    let mut series: BTreeMap<(GenMode, usize, Algorithm, bool), Vec<&AggregateRow>> =
        BTreeMap::new();
    for r in rows {
        series
            .entry((r.mode, r.k, r.algorithm, r.lookahead))
            .or_default()
            .push(r);
    }
    let mut written = Vec::new();
    for ((mode, k, algorithm, lookahead), rs) in series {
        let la = if lookahead { "on" } else { "off" };
        let grouping = format!("mode={mode} k={k} algorithm={algorithm} lookahead={la}");
        let stem = format!("{mode}_k{k}_{algorithm}_lookahead-{la}");

        let mut text = format!("# ratio vs n; {grouping}\n# n ratio_mean\n");
        for r in rs.iter().filter(|r| r.ratio_mean.is_some()) {
            text.push_str(&format!("{} {}\n", r.n, r.ratio_mean.unwrap_or(f64::NAN)));
        }
        let path = dir.join(format!("ratio_{stem}.dat"));
        fs::write(&path, text)?;
        written.push(path);

        let mut text =
            format!("# compute_time vs n; {grouping}\n# log_scale: y\n# n compute_time_mean\n");
        for r in rs.iter().filter(|r| r.count > 0) {
            text.push_str(&format!("{} {}\n", r.n, r.compute_time_mean));
        }
        let path = dir.join(format!("compute_time_{stem}.dat"));
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> BenchConfig {
        BenchConfig {
            modes: vec![GenMode::Scattered],
            n_values: vec![3],
            seeds_per_cell: 2,
            first_seed: 0,
            algorithms: vec![Algorithm::Greedy, Algorithm::Dp],
            k_values: vec![2],
            lookahead: vec![true],
            time_budget: 30.0,
            output_dir: dir.to_path_buf(),
            exit: ExitRule::Narrow,
            corpus_dir: None,
            mcts_iterations: 50,
            exploration_c: 0.1,
            dp_cap: 20,
            single_cap: 12,
            heuristic: HeuristicKind::Strengthened,
            full_resim: false,
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = tiny(Path::new("out"));
        let text = c.to_toml_string();
        assert_eq!(BenchConfig::from_toml_str(&text).unwrap(), c);
        assert!(text.contains("seeds_per_cell"));
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = tiny(Path::new("out"));
        c.seeds_per_cell = 0;
        assert!(c.validate().is_err());
        let mut c = tiny(Path::new("out"));
        c.n_values = vec![25];
        assert!(c.validate().is_err(), "dp cap");
        assert!(BenchConfig::from_toml_str("modes = [\"scattered\"]\nbogus = 1").is_err());
    }

    #[test]
    fn single_value_has_zero_spread() {
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn suite_writes_sorted_records_that_reparse_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        let records = run_suite_with(&c, 1, &|_| {}).unwrap();
        assert_eq!(records.len(), 4);
        let mut sorted = records.clone();
        sort_canonical(&mut sorted);
        assert_eq!(sorted, records);
        for r in &records {
            assert_eq!(r.status, CellStatus::Ok, "{r:?}");
            assert!(r.ratio.unwrap() >= 1.0 / r.k as f64 - 1e-6);
            assert!(r.compute_time >= 0.0);
        }
        assert_eq!(read_csv(&dir.path().join("results.csv")).unwrap(), records);
        let rows = aggregate(&records);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.count == 2));
        let plot = fs::read_to_string(
            dir.path()
                .join("plots/ratio_scattered_k2_greedy_lookahead-on.dat"),
        )
        .unwrap();
        assert!(plot.starts_with("# ratio vs n; mode=scattered k=2 algorithm=greedy lookahead=on"));
        let data: Vec<&str> = plot.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].split_whitespace().count(), 2);
    }

    #[test]
    fn same_layout_for_every_fleet_size() {
        let c = BenchConfig {
            exit: ExitRule::Scaled,
            k_values: vec![1, 3, 5],
            ..tiny(Path::new("out"))
        };
        let a = c.instance(GenMode::Scattered, 6, 1, 1).unwrap();
        let b = c.instance(GenMode::Scattered, 6, 1, 5).unwrap();
        assert_eq!(a.objects, b.objects);
        assert!(a.exit_width < b.exit_width);
        assert!(scene::validate(&b).is_valid());
        assert!(scene::validate(&a).is_valid());
    }
}
