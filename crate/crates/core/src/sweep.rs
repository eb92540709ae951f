//! Grid sweeps: every combination of overridden keys, times every seed,
//! each cell in its own output directory, with a per-cell aggregate.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::train::{run_experiment, TrainLog};

/// One swept key with its candidate values, parsed from `key=v1,v2,...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (key, vals) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("grid axis `{s}` is not `key=v1,v2,...`")))?;
        let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!("grid axis `{key}` has no values")));
        }
        Ok(Axis { key: key.trim().to_string(), values })
    }
}

/// Seeds from `0-9`, `3` or `0,4,7`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("bad seed list `{s}`"));
    if let Some((a, b)) = s.split_once('-') {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

/// Cartesian product of the axes, first axis varying slowest.
pub fn grid_cells(axes: &[Axis]) -> Vec<Cell> {
    let mut cells = vec![Cell { name: String::new(), overrides: Vec::new() }];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for c in &cells {
            for v in &axis.values {
                let mut o = c.overrides.clone();
                o.push((axis.key.clone(), v.clone()));
                next.push(Cell { name: String::new(), overrides: o });
            }
        }
        cells = next;
    }
    for c in &mut cells {
        c.name = if c.overrides.is_empty() {
            "base".into()
        } else {
            c.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("__").replace(['/', ' '], "_")
        };
    }
    cells
}

#[derive(Clone, Debug)]
pub struct SweepRun {
    pub cell: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub log: TrainLog,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
    pub runs: Vec<SweepRun>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

impl SweepResult {
    /// `cell,<keys...>,n_seeds,n_overflow,final_mean,final_std,value_at_50k_mean,value_at_50k_std`
    /// with sample standard deviations across seeds.
    pub fn aggregate_csv(&self) -> String {
        let keys: Vec<&str> = self.cells.first().map_or(Vec::new(), |c| c.overrides.iter().map(|(k, _)| k.as_str()).collect());
        let mut out = String::from("cell");
        for k in &keys {
            out.push(',');
            out.push_str(k);
        }
        out.push_str(",n_seeds,n_overflow,final_mean,final_std,value_at_50k_mean,value_at_50k_std\n");
        for (i, cell) in self.cells.iter().enumerate() {
            let runs: Vec<&SweepRun> = self.runs.iter().filter(|r| r.cell == i).collect();
            let finals: Vec<f64> = runs.iter().map(|r| r.log.final_value()).collect();
            let heads: Vec<f64> = runs.iter().map(|r| r.log.headline_value()).collect();
            let (fm, fs) = mean_std(&finals);
            let (hm, hs) = mean_std(&heads);
            let overflow = runs.iter().filter(|r| r.log.overflowed()).count();
            out.push_str(&cell.name);
            for (_, v) in &cell.overrides {
                out.push(',');
                out.push_str(v);
            }
            out.push_str(&format!(",{},{overflow},{fm:?},{fs:?},{hm:?},{hs:?}\n", runs.len()));
        }
        out
    }
}

/// Builds every cell's config up front so a bad override fails before any run.
pub fn cell_configs(base: &TrainConfig, cells: &[Cell], seeds: &[u64], root: &Path) -> Result<Vec<(usize, u64, TrainConfig)>> {
    let mut jobs = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        for &seed in seeds {
            let mut cfg = base.clone();
            for (k, v) in &cell.overrides {
                cfg.set(k, v).map_err(|msg| Error::ConfigConstraint(format!("grid override {k}={v}: {msg}")))?;
            }
            cfg.seed = seed;
            cfg.output_dir = root.join(&cell.name).join(format!("seed_{seed}"));
            cfg.validate()?;
            jobs.push((i, seed, cfg));
        }
    }
    Ok(jobs)
}

/// Runs the sweep with `workers` threads and writes per-run outputs plus
/// `aggregate.csv` under `root`.
pub fn run_sweep(base: &TrainConfig, axes: &[Axis], seeds: &[u64], root: &Path, workers: usize) -> Result<SweepResult> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    let cells = grid_cells(axes);
    let jobs = cell_configs(base, &cells, seeds, root)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRun>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(jobs.len()) {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some((cell, seed, cfg)) = jobs.get(j) else { break };
                let out = run_experiment(cfg).and_then(|log| {
                    log.write(&cfg.output_dir)?;
                    std::fs::write(cfg.output_dir.join("config.txt"), cfg.serialize())?;
                    Ok(SweepRun { cell: *cell, seed: *seed, dir: cfg.output_dir.clone(), log })
                });
                results.lock().expect("no poisoned workers")[j] = Some(out);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let result = SweepResult { cells, runs };
    std::fs::create_dir_all(root)?;
    std::fs::write(root.join("aggregate.csv"), result.aggregate_csv())?;
    Ok(result)
}
