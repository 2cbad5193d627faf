use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{prefixed, INIT_STREAM, TRAIN_STREAM};
use super::{Checkpoint, DataSource, RunConfig};
use crate::attention::{SelectionMode, Strategy};
use crate::checks::{injected_fault, registered_checks, run_check, CheckOutcome};
use crate::data::{generate_synthetic, write_idx, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::recall_at_k;
use crate::model::Model;
use crate::rng::derive_seed;
use crate::training::{train, EpochRecord};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: [&str; 3] = ["epoch", "loss", "recall_at_1"];
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const RECALL_FILE: &str = "recall.csv";
pub const IMAGES_FILE: &str = "images.idx3-ubyte";
pub const LABELS_FILE: &str = "labels.idx1-ubyte";
/// Dictionary sizes accepted by `ablate`.
pub const ABLATION_BRANCHES: [usize; 5] = [1, 2, 4, 8, 16];

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub checkpoint: Checkpoint,
}

impl TrainOutcome {
    pub fn final_recall(&self) -> f64 {
        self.log.last().map_or(0.0, |r| r.recall_at_1)
    }
}

/// Trains one model and writes `metrics.csv`, `checkpoint.bin` and the
/// resolved `config.json` into `out`. Relative IDX paths resolve against
/// `base`; the stored config carries the resolved paths.
pub fn run_train(config: &RunConfig, base: &Path, out: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let mut config = config.clone();
    if let DataSource::Idx { images, labels } = &mut config.data {
        *images = base.join(&*images);
        *labels = base.join(&*labels);
    }
    let (train_set, val_set) = config.datasets(base)?;
    let first = &train_set.samples[0].image;
    let (height, width) = (first.height, first.width);
    let mut model = Model::init(&config.model, height, width, derive_seed(config.seed, INIT_STREAM))?;

    create_dir(out)?;
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = csv::Writer::from_path(&metrics_path).map_err(|e| csv_error(&metrics_path, e))?;
    metrics.write_record(METRICS_HEADER).map_err(|e| csv_error(&metrics_path, e))?;
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let log = train(&mut model, &train_set, &val_set, &config.train, derive_seed(config.seed, TRAIN_STREAM), |r| {
        metrics
            .write_record([r.epoch.to_string(), r.loss.to_string(), r.recall_at_1.to_string()])
            .map_err(|e| csv_error(&metrics_path, e))?;
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))
    })?;

    let checkpoint = Checkpoint { config, image_height: height, image_width: width, model };
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, checkpoint.config.to_json() + "\n").map_err(|e| Error::io(&config_path, e))?;
    Ok(TrainOutcome { log, checkpoint })
}

/// Which items `evaluate` embeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSet {
    /// Validation classes of the run's split.
    Validation,
    /// Every item of the dataset.
    All,
}

/// Recall@K of a checkpoint on the data described by `config`.
pub fn run_evaluate(
    checkpoint: &Checkpoint,
    config: &RunConfig,
    base: &Path,
    set: EvalSet,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let data = match set {
        EvalSet::Validation => config.datasets(base)?.1,
        EvalSet::All => config.data.load(base)?,
    };
    if let Some(s) = data.samples.first() {
        if (s.image.height, s.image.width) != (checkpoint.image_height, checkpoint.image_width) {
            return Err(Error::config(
                "data",
                format!(
                    "images are {}×{}, checkpoint was trained on {}×{}",
                    s.image.height, s.image.width, checkpoint.image_height, checkpoint.image_width
                ),
            ));
        }
    }
    recall_at_k(&checkpoint.model.index(&data)?, ks)
}

pub fn write_recall_csv(path: &Path, recall: &BTreeMap<usize, f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["k", "recall"]).map_err(|e| csv_error(path, e))?;
    for (k, r) in recall {
        w.write_record([k.to_string(), r.to_string()]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The values swept by `ablate`; an empty list keeps the base config's value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationAxes {
    pub modes: Vec<SelectionMode>,
    pub strategies: Vec<Strategy>,
    pub branches: Vec<usize>,
}

/// One point of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub mode: SelectionMode,
    pub strategy: Strategy,
    pub branches: usize,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}-{}-n{}", self.mode.name(), self.strategy.name(), self.branches)
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.model.attention.mode = self.mode;
        c.model.attention.strategy = self.strategy;
        c.model.attention.branches = self.branches;
        c
    }
}

/// Final Recall@1 of every seed of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub seeds: Vec<u64>,
    pub recalls: Vec<f64>,
}

impl CellSummary {
    pub fn median(&self) -> f64 {
        median(&self.recalls)
    }

    pub fn min(&self) -> f64 {
        self.recalls.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.recalls.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Cartesian product of the axes, in mode, strategy, N order.
pub fn ablation_cells(base: &RunConfig, axes: &AblationAxes) -> Result<Vec<Cell>> {
    for &n in &axes.branches {
        if !ABLATION_BRANCHES.contains(&n) {
            return Err(Error::config("ablate.n", format!("{n} is not one of {ABLATION_BRANCHES:?}")));
        }
    }
    let a = &base.model.attention;
    let modes = if axes.modes.is_empty() { vec![a.mode] } else { axes.modes.clone() };
    let strategies = if axes.strategies.is_empty() { vec![a.strategy] } else { axes.strategies.clone() };
    let branches = if axes.branches.is_empty() { vec![a.branches] } else { axes.branches.clone() };
    let mut cells = Vec::new();
    for &mode in &modes {
        for &strategy in &strategies {
            for &n in &branches {
                cells.push(Cell { mode, strategy, branches: n });
            }
        }
    }
    Ok(cells)
}

/// Trains every cell for `seeds` consecutive seeds starting at the base
/// config's seed. Run `s` of a cell is identical to `train` with that seed.
/// Writes `runs.csv` and `summary.csv` into `out`.
pub fn run_ablate(
    base: &RunConfig,
    base_dir: &Path,
    axes: &AblationAxes,
    seeds: usize,
    out: &Path,
    threads: Option<usize>,
) -> Result<Vec<CellSummary>> {
    if seeds == 0 {
        return Err(Error::config("ablate.seeds", "must be at least 1"));
    }
    let cells = ablation_cells(base, axes)?;
    for cell in &cells {
        let config = cell.apply(base);
        config.validate()?;
        config.model.attention.validate().map_err(|e| prefixed(e, "model.attention"))?;
    }
    create_dir(out)?;
    let jobs: Vec<(usize, u64, PathBuf)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, cell)| {
            (0..seeds as u64).map(move |k| {
                let seed = base.seed + k;
                (i, seed, out.join(cell.name()).join(format!("seed-{seed}")))
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("DIABLO_THREADS", e.to_string()))?;
    let results: Vec<Result<f64>> = pool.install(|| {
        jobs.par_iter()
            .map(|(i, seed, dir)| {
                let config = RunConfig { seed: *seed, ..cells[*i].apply(base) };
                run_train(&config, base_dir, dir).map(|o| o.final_recall())
            })
            .collect()
    });

    let mut summaries: Vec<CellSummary> =
        cells.iter().map(|c| CellSummary { cell: c.clone(), seeds: Vec::new(), recalls: Vec::new() }).collect();
    for ((i, seed, _), r) in jobs.iter().zip(results) {
        summaries[*i].seeds.push(*seed);
        summaries[*i].recalls.push(r?);
    }

    let runs_path = out.join("runs.csv");
    let mut runs = csv::Writer::from_path(&runs_path).map_err(|e| csv_error(&runs_path, e))?;
    runs.write_record(["mode", "strategy", "n", "seed", "recall_at_1"]).map_err(|e| csv_error(&runs_path, e))?;
    let summary_path = out.join("summary.csv");
    let mut summary = csv::Writer::from_path(&summary_path).map_err(|e| csv_error(&summary_path, e))?;
    summary
        .write_record(["mode", "strategy", "n", "runs", "median_recall_at_1", "min_recall_at_1", "max_recall_at_1"])
        .map_err(|e| csv_error(&summary_path, e))?;
    for s in &summaries {
        let c = &s.cell;
        for (seed, r) in s.seeds.iter().zip(&s.recalls) {
            runs.write_record([
                c.mode.name().to_string(),
                c.strategy.name().to_string(),
                c.branches.to_string(),
                seed.to_string(),
                r.to_string(),
            ])
            .map_err(|e| csv_error(&runs_path, e))?;
        }
        summary
            .write_record([
                c.mode.name().to_string(),
                c.strategy.name().to_string(),
                c.branches.to_string(),
                s.recalls.len().to_string(),
                s.median().to_string(),
                s.min().to_string(),
                s.max().to_string(),
            ])
            .map_err(|e| csv_error(&summary_path, e))?;
    }
    runs.flush().map_err(|e| Error::io(&runs_path, e))?;
    summary.flush().map_err(|e| Error::io(&summary_path, e))?;
    Ok(summaries)
}

/// Runs every registered gradient check over `seeds`, plus the deliberately
/// broken one when `inject_fault` is set.
pub fn run_gradcheck(seeds: &[u64], inject_fault: bool, threads: Option<usize>) -> Result<Vec<CheckOutcome>> {
    if seeds.is_empty() {
        return Err(Error::config("gradcheck.seeds", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("DIABLO_THREADS", e.to_string()))?;
    let mut checks = registered_checks();
    if inject_fault {
        checks.push(injected_fault());
    }
    Ok(pool.install(|| checks.par_iter().map(|c| run_check(c, seeds)).collect()))
}

/// Writes a synthetic dataset as an IDX image/label pair and returns their paths.
pub fn run_gen_data(spec: &SyntheticSpec, out: &Path) -> Result<(PathBuf, PathBuf)> {
    spec.validate().map_err(|e| prefixed(e, "data.synthetic"))?;
    let data = generate_synthetic(spec)?;
    create_dir(out)?;
    let (images, labels) = (out.join(IMAGES_FILE), out.join(LABELS_FILE));
    write_idx(&data, &images, &labels)?;
    Ok((images, labels))
}

/// Parallelism cap from `DIABLO_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("DIABLO_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::config("DIABLO_THREADS", e.to_string())),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config("DIABLO_THREADS", format!("`{v}` is not a positive integer"))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn table_shaped_grids() {
        let base = RunConfig::default();
        let both = AblationAxes {
            modes: vec![SelectionMode::Feature, SelectionMode::Dimension],
            strategies: vec![Strategy::Pre, Strategy::Post],
            branches: vec![],
        };
        let cells = ablation_cells(&base, &both).unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| c.branches == 8));
        let sizes = AblationAxes { branches: vec![2, 4, 8, 16], ..AblationAxes::default() };
        let cells = ablation_cells(&base, &sizes).unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| c.mode == SelectionMode::Dimension && c.strategy == Strategy::Pre));
        let bad = AblationAxes { branches: vec![3], ..AblationAxes::default() };
        assert!(matches!(ablation_cells(&base, &bad), Err(Error::Config { ref path, .. }) if path == "ablate.n"));
    }
}
