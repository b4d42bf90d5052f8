//! Output directory layout, CSV writers and the file-backed training observer.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hjb_core::trainer::{IterationRecord, MetricsRecord, Observer, TrainState};
use hjb_core::ErrorReport;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, ModelConfig};
use crate::error::{CliError, CliResult};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS: &str = "metrics.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

pub const TRAIN_LOG_HEADER: [&str; 9] = [
    "iteration",
    "lr",
    "loss_total",
    "loss_bsde",
    "loss_hjb",
    "loss_obj",
    "loss_term_val",
    "loss_term_grad",
    "wallclock_s",
];

pub const METRICS_HEADER: [&str; 10] =
    ["iteration", "j_mean", "j_stderr", "re", "re0", "re_per_trajectory", "re_noise", "re0_noise", "trajectories", "points"];

pub fn checkpoint_name(iteration: u64) -> String {
    format!("checkpoint_{iteration}.json")
}

/// Creates `dir` and writes `resolved_config.json` into it.
pub fn prepare_dir(dir: &Path, config: &ExperimentConfig) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(RESOLVED_CONFIG);
    std::fs::write(&path, config.to_json() + "\n").map_err(|e| CliError::io(&path, e))
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub struct CsvFile {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvFile {
    pub fn create(path: PathBuf, header: &[&str]) -> CliResult<Self> {
        let mut writer = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        writer.write_record(header).map_err(|e| CliError::io(&path, e))?;
        writer.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(Self { path, writer })
    }

    /// Appends one row and flushes it to disk.
    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| CliError::io(&self.path, e))?;
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn metrics_row(iteration: u64, j_mean: f64, j_stderr: f64, errors: Option<&ErrorReport>) -> Vec<String> {
    let mut row = vec![iteration.to_string(), num(j_mean), num(j_stderr)];
    match errors {
        Some(e) => row.extend([
            num(e.re),
            num(e.re0),
            num(e.re_per_trajectory),
            num(e.re_noise),
            num(e.re0_noise),
            e.trajectories.to_string(),
            e.points.to_string(),
        ]),
        None => row.extend(std::iter::repeat_n(String::new(), 7)),
    }
    row
}

/// Streams training events to `train_log.csv`, `metrics.csv` and checkpoint files.
pub struct FileObserver {
    dir: PathBuf,
    model: ModelConfig,
    train_log: CsvFile,
    metrics: CsvFile,
    started: Instant,
    pub last_metrics: Option<MetricsRecord>,
}

impl FileObserver {
    pub fn create(dir: &Path, model: &ModelConfig) -> CliResult<Self> {
        Ok(Self {
            dir: dir.to_path_buf(),
            model: model.clone(),
            train_log: CsvFile::create(dir.join(TRAIN_LOG), &TRAIN_LOG_HEADER)?,
            metrics: CsvFile::create(dir.join(METRICS), &METRICS_HEADER)?,
            started: Instant::now(),
            last_metrics: None,
        })
    }

    pub fn save_checkpoint(&self, state: &TrainState) -> CliResult<PathBuf> {
        let path = self.dir.join(checkpoint_name(state.next_iteration));
        Checkpoint::from_state(&self.model, state).save(&path)?;
        Ok(path)
    }
}

fn to_core(e: CliError) -> hjb_core::Error {
    hjb_core::Error::Observer(e.message)
}

impl Observer for FileObserver {
    fn on_iteration(&mut self, r: &IterationRecord) -> hjb_core::Result<()> {
        let l = &r.loss;
        let row = [
            r.iteration.to_string(),
            num(r.lr),
            num(l.total),
            opt(l.bsde),
            opt(l.hjb),
            opt(l.objective),
            opt(l.terminal_value),
            opt(l.terminal_grad),
            format!("{:.3}", r.wallclock_s),
        ];
        self.train_log.row(row).map_err(to_core)
    }

    fn on_metrics(&mut self, r: &MetricsRecord) -> hjb_core::Result<()> {
        self.last_metrics = Some(*r);
        self.metrics.row(metrics_row(r.iteration, r.j_mean, r.j_stderr, r.errors.as_ref())).map_err(to_core)
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> hjb_core::Result<()> {
        self.save_checkpoint(state).map(|_| ()).map_err(to_core)
    }

    fn elapsed_seconds(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }
}

/// Worker cap from `HJB_THREADS`; unset or 0 means the available parallelism.
pub fn worker_count() -> usize {
    let auto = || std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("HJB_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(0) | None => auto(),
        Some(n) => n,
    }
}

/// Maps `f` over `jobs` on at most `workers` threads; results keep job order.
pub fn parallel_map<T, R, F>(jobs: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        return jobs.into_iter().map(f).collect();
    }
    let queue = std::sync::Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>().into_iter());
    let mut results: Vec<(usize, R)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let next = queue.lock().expect("job queue").next();
                        match next {
                            Some((k, job)) => out.push((k, f(job))),
                            None => break out,
                        }
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    results.sort_by_key(|(k, _)| *k);
    results.into_iter().map(|(_, r)| r).collect()
}
