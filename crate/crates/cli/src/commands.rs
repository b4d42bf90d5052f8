use std::path::{Path, PathBuf};

use hjb_core::histogram::VisitHistogram;
use hjb_core::oracle::{cole_hopf_value, evaluation_rollout};
use hjb_core::problem::{sample_initial, ControlProblem};
use hjb_core::sampler::{fingerprint, rollout};
use hjb_core::trainer::{evaluate_hook, resume, MetricsRecord, TrainState};
use hjb_core::{DriftPolicy, Matrix, Purpose, Stream, TimeGrid, ValueModel};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, PolicyName};
use crate::error::{CliError, CliResult};
use crate::output::{self, num, parallel_map, worker_count, CsvFile, FileObserver};

/// Trains `config` into `dir`, optionally continuing from `resume_from`.
/// A final checkpoint is always written, and a final metrics row unless the
/// last iteration was already evaluated.
pub fn train_into(config: &ExperimentConfig, dir: &Path, resume_from: Option<&Path>) -> CliResult<(TrainState, MetricsRecord)> {
    output::prepare_dir(dir, config)?;
    let problem = config.build_problem()?;
    let tc = config.train_config();
    let mut state = match resume_from {
        Some(p) => Checkpoint::load(p)?.to_state()?,
        None => TrainState::fresh(&config.architecture(), config.d(), tc.seed)?,
    };
    let mut observer = FileObserver::create(dir, &config.model)?;
    resume(&mut state, &tc, problem.as_ref(), &mut observer)?;
    let metrics = match observer.last_metrics {
        Some(m) if m.iteration == state.next_iteration => m,
        _ => {
            let m = evaluate_hook(&state.model, problem.as_ref(), tc.grid, &tc.eval, tc.seed, state.next_iteration)?;
            hjb_core::trainer::Observer::on_metrics(&mut observer, &m)?;
            m
        }
    };
    observer.save_checkpoint(&state)?;
    Ok((state, metrics))
}

pub fn cmd_train(config: &Path, out: &Path, seed: Option<u64>, resume_from: Option<&Path>) -> CliResult<()> {
    let mut raw = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        raw.train.seed = s;
    }
    train_into(&raw.resolve()?, out, resume_from).map(|_| ())
}

fn load_model(checkpoint: &Path, config: &ExperimentConfig) -> CliResult<(ValueModel, u64)> {
    let state = Checkpoint::load(checkpoint)?.to_state()?;
    if state.model.d != config.d() {
        return Err(CliError::config(format!(
            "problem.d: config has {} but the checkpoint was trained with {}",
            config.d(),
            state.model.d
        )));
    }
    Ok((state.model, state.next_iteration))
}

fn resolved_with_out(config: &Path, out: &Path) -> CliResult<ExperimentConfig> {
    let config = ExperimentConfig::load(config)?.resolve()?;
    output::prepare_dir(out, &config)?;
    Ok(config)
}

pub fn cmd_eval(checkpoint: &Path, config: &Path, out: &Path, dump_trajectories: bool) -> CliResult<()> {
    let config = resolved_with_out(config, out)?;
    let (model, epoch) = load_model(checkpoint, &config)?;
    let problem = config.build_problem()?;
    let tc = config.train_config();
    let m = evaluate_hook(&model, problem.as_ref(), tc.grid, &tc.eval, tc.seed, epoch)?;
    let mut csv = CsvFile::create(out.join(output::METRICS), &output::METRICS_HEADER)?;
    csv.row(output::metrics_row(m.iteration, m.j_mean, m.j_stderr, m.errors.as_ref()))?;
    if dump_trajectories {
        let batch = evaluation_rollout(&model, problem.as_ref(), tc.grid, config.eval.n_rollouts, tc.seed, epoch)?;
        let d = config.d();
        let mut header = vec!["trajectory".to_string(), "step".into(), "s".into()];
        header.extend((0..d).map(|j| format!("z{j}")));
        header.extend((0..d).map(|j| format!("u{j}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut csv = CsvFile::create(out.join("trajectories.csv"), &header)?;
        for r in 0..batch.len() {
            for i in 0..=tc.grid.steps {
                let u = if i < tc.grid.steps { batch.u[i].row(r) } else { batch.terminal_control.row(r) };
                let mut row = vec![r.to_string(), i.to_string(), num(tc.grid.s(i))];
                row.extend(batch.state(r, i).iter().map(|v| num(*v)));
                row.extend(u.iter().map(|v| num(*v)));
                csv.row(row)?;
            }
        }
    }
    Ok(())
}

/// Reads `s,z_1,...,z_d` rows (no header).
fn read_points(path: &Path, d: usize) -> CliResult<Vec<(f64, Vec<f64>)>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut points = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let vals: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| CliError::config(format!("{}:{}: {e}", path.display(), line + 1)))?;
        if vals.len() != d + 1 {
            return Err(CliError::config(format!("{}:{}: expected {} columns, got {}", path.display(), line + 1, d + 1, vals.len())));
        }
        points.push((vals[0], vals[1..].to_vec()));
    }
    Ok(points)
}

pub fn z_hash(z: &[f64]) -> String {
    format!("{:016x}", fingerprint(z))
}

/// Oracle values at the points in `points`, or by default at `eval.n_traj`
/// initial states drawn at the configured start time.
pub fn cmd_oracle(config: &Path, out: &Path, points: Option<&Path>, samples: Option<usize>) -> CliResult<()> {
    let config = resolved_with_out(config, out)?;
    let problem = config.build_problem()?;
    let d = config.d();
    let pts = match points {
        Some(p) => read_points(p, d)?,
        None => {
            let z = sample_initial(problem.as_ref(), &Stream::new(config.train.seed, Purpose::EvaluationInitial, 0), config.eval.n_traj.max(1));
            (0..z.rows()).map(|r| (config.problem.t, z.row(r).to_vec())).collect()
        }
    };
    let n = samples.unwrap_or(config.eval.oracle_samples);
    let stream = Stream::new(config.train.seed, Purpose::Oracle, 0);
    let jobs: Vec<(usize, (f64, Vec<f64>))> = pts.into_iter().enumerate().collect();
    let problem_ref: &(dyn ControlProblem + Sync) = problem.as_ref();
    let results = parallel_map(jobs, worker_count(), |(k, (s, z))| {
        cole_hopf_value(problem_ref, s, &z, n, &stream, k as u64).map(|e| (s, z, e))
    });
    let mut csv = CsvFile::create(out.join("oracle.csv"), &["s", "z_hash", "value", "stderr", "n_samples"])?;
    for r in results {
        let (s, z, e) = r?;
        csv.row([num(s), z_hash(&z), num(e.value), num(e.stderr), e.n_samples.to_string()])?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct HistogramMeta {
    axes: [usize; 2],
    lo: [f64; 2],
    hi: [f64; 2],
    bins: usize,
    policy: PolicyName,
    rollouts: usize,
    epoch: u64,
    slices: Vec<SliceMeta>,
}

#[derive(Debug, Serialize)]
struct SliceMeta {
    file: String,
    requested_s: f64,
    s: f64,
    step: usize,
    total: u64,
}

pub struct HistogramArgs<'a> {
    pub checkpoint: &'a Path,
    pub config: &'a Path,
    pub axes: [usize; 2],
    pub slices: &'a [f64],
    pub bins: usize,
    pub out: &'a Path,
    pub policy: PolicyName,
    pub range: [f64; 2],
    pub rollouts: Option<usize>,
}

/// Visit counts of evaluation rollouts projected on `axes`. The rows of each
/// grid follow the first axis, from `range[0]` upward.
pub fn cmd_histogram(a: &HistogramArgs<'_>) -> CliResult<()> {
    let config = resolved_with_out(a.config, a.out)?;
    let (model, epoch) = load_model(a.checkpoint, &config)?;
    let d = config.d();
    if a.axes.iter().any(|&i| i >= d) {
        return Err(CliError::config(format!("--axes: indices must be below {d}")));
    }
    if a.bins == 0 {
        return Err(CliError::config("--bins: must be at least 1"));
    }
    let problem = config.build_problem()?;
    let grid = config.grid();
    let n = a.rollouts.unwrap_or(config.eval.n_rollouts);
    let seed = config.train.seed;
    let policy = match a.policy {
        PolicyName::PmpFeedback => DriftPolicy::PmpFeedback,
        PolicyName::ZeroDrift => DriftPolicy::ZeroDrift,
    };
    let z0 = sample_initial(problem.as_ref(), &Stream::new(seed, Purpose::EvaluationInitial, epoch), n);
    let batch = rollout(&model, problem.as_ref(), grid, &z0, &Stream::new(seed, Purpose::Evaluation, epoch), 0, policy)?;
    let lo = [a.range[0]; 2];
    let hi = [a.range[1]; 2];
    let mut h = VisitHistogram::new((a.axes[0], a.axes[1]), lo, hi, a.bins, &grid, a.slices)?;
    h.accumulate(&batch)?;
    let mut slices = Vec::new();
    for k in 0..a.slices.len() {
        let file = format!("hist_slice_{k}.csv");
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(a.out.join(&file)).map_err(|e| CliError::io(a.out, e))?;
        for row in h.grid(k) {
            w.write_record(row.iter().map(u64::to_string)).map_err(|e| CliError::io(a.out, e))?;
        }
        w.flush().map_err(|e| CliError::io(a.out, e))?;
        slices.push(SliceMeta { file, requested_s: a.slices[k], s: h.times[k], step: h.steps[k], total: h.total(k) });
    }
    let meta = HistogramMeta { axes: a.axes, lo, hi, bins: a.bins, policy: a.policy, rollouts: n, epoch, slices };
    let path = a.out.join("hist_meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::runtime(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

/// Max-coordinate deviation of the mean final state of `n` evaluation rollouts from `target`.
pub fn final_state_deviation(
    model: &ValueModel,
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    n: usize,
    seed: u64,
    epoch: u64,
    target: &[f64],
) -> CliResult<f64> {
    let batch = evaluation_rollout(model, problem, grid, n, seed, epoch)?;
    Ok(mean_deviation(batch.terminal(), target))
}

pub fn mean_deviation(z: &Matrix, target: &[f64]) -> f64 {
    let n = z.rows() as f64;
    (0..z.cols())
        .map(|j| {
            let mean = (0..z.rows()).map(|r| z.get(r, j)).sum::<f64>() / n;
            (mean - target[j]).abs()
        })
        .fold(0.0, f64::max)
}

pub const ARMS: [PolicyName; 2] = [PolicyName::PmpFeedback, PolicyName::ZeroDrift];

pub fn arm_name(p: PolicyName) -> &'static str {
    match p {
        PolicyName::PmpFeedback => "pmp_feedback",
        PolicyName::ZeroDrift => "zero_drift",
    }
}

/// The config of one comparison run: repeat `r` trains with seed `train.seed + r`
/// in both arms, so the arms share initial states and Brownian increments.
pub fn arm_config(base: &ExperimentConfig, arm: PolicyName, repeat: u64) -> ExperimentConfig {
    let mut c = base.clone();
    c.train.drift_policy = arm;
    c.train.seed = base.train.seed.wrapping_add(repeat);
    c
}

pub fn arm_dir(out: &Path, arm: PolicyName, repeat: u64) -> PathBuf {
    out.join(arm_name(arm)).join(format!("repeat_{repeat}"))
}

struct ArmResult {
    arm: PolicyName,
    repeat: u64,
    seed: u64,
    final_metrics: MetricsRecord,
    deviation: f64,
    curve: Vec<(u64, f64)>,
}

fn read_curve(path: &Path) -> CliResult<Vec<(u64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut curve = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let it = rec[0].parse().map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let j = rec[1].parse().map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        curve.push((it, j));
    }
    Ok(curve)
}

pub fn cmd_compare_sampling(config: &Path, out: &Path, repeats: u64) -> CliResult<()> {
    if repeats == 0 {
        return Err(CliError::config("--repeats: must be at least 1"));
    }
    let base = resolved_with_out(config, out)?;
    let jobs: Vec<(PolicyName, u64)> = (0..repeats).flat_map(|r| ARMS.map(|a| (a, r))).collect();
    let results = parallel_map(jobs, worker_count(), |(arm, repeat)| -> CliResult<ArmResult> {
        let c = arm_config(&base, arm, repeat);
        let dir = arm_dir(out, arm, repeat);
        let (state, final_metrics) = train_into(&c, &dir, None)?;
        let problem = c.build_problem()?;
        let deviation =
            final_state_deviation(&state.model, problem.as_ref(), c.grid(), c.eval.n_rollouts, c.train.seed, state.next_iteration, c.target())?;
        let curve = read_curve(&dir.join(output::METRICS))?;
        Ok(ArmResult { arm, repeat, seed: c.train.seed, final_metrics, deviation, curve })
    });
    let results: Vec<ArmResult> = results.into_iter().collect::<CliResult<_>>()?;

    let mut summary =
        CsvFile::create(out.join("compare_summary.csv"), &["arm", "repeat", "seed", "iteration", "j_mean", "j_stderr", "max_deviation"])?;
    for r in &results {
        let m = &r.final_metrics;
        summary.row([
            arm_name(r.arm).to_string(),
            r.repeat.to_string(),
            r.seed.to_string(),
            m.iteration.to_string(),
            num(m.j_mean),
            num(m.j_stderr),
            num(r.deviation),
        ])?;
    }

    // Curves are averaged over repeats at every iteration all runs logged.
    let iterations: Vec<u64> = results[0].curve.iter().map(|(k, _)| *k).collect();
    let mut curves = CsvFile::create(out.join("compare_j_curves.csv"), &["iteration", "pmp_feedback_j_mean", "zero_drift_j_mean"])?;
    for (idx, it) in iterations.iter().enumerate() {
        let mut row = vec![it.to_string()];
        for arm in ARMS {
            let vals: Vec<f64> = results.iter().filter(|r| r.arm == arm).map(|r| r.curve[idx].1).collect();
            row.push(num(vals.iter().sum::<f64>() / vals.len() as f64));
        }
        curves.row(row)?;
    }
    Ok(())
}

/// Scaling table row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub dimension: usize,
    pub width: usize,
    pub param_count: usize,
    pub achieved_distance: f64,
    pub within_tolerance: bool,
}

/// Config for dimension `d` and width `w`. A constant target is extended to `d` entries.
pub fn scaling_config(base: &ExperimentConfig, d: usize, width: usize) -> CliResult<ExperimentConfig> {
    let mut c = base.clone();
    c.problem.d = Some(d);
    c.problem.target = match &base.problem.target {
        Some(t) if !t.is_empty() && t.iter().all(|v| *v == t[0]) => Some(vec![t[0]; d]),
        _ => None,
    };
    c.model.width = width;
    c.model.quad_rank = None;
    c.resolve()
}

/// Doubles the width from `scaling.start_width` until the trained policy's mean
/// final state lies within `scaling.tolerance` of the target or the width
/// exceeds `scaling.max_width`. Returns every attempt.
pub fn scale_dimension(base: &ExperimentConfig, d: usize, out: &Path) -> CliResult<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    let mut width = base.scaling.start_width;
    while width <= base.scaling.max_width {
        let c = scaling_config(base, d, width)?;
        let (state, _) = train_into(&c, &out.join(format!("d{d}_w{width}")), None)?;
        let problem = c.build_problem()?;
        let dist = final_state_deviation(&state.model, problem.as_ref(), c.grid(), c.eval.n_rollouts, c.train.seed, state.next_iteration, c.target())?;
        let ok = dist <= base.scaling.tolerance;
        rows.push(ScalingRow { dimension: d, width, param_count: state.model.theta.len(), achieved_distance: dist, within_tolerance: ok });
        if ok {
            break;
        }
        width = width.saturating_mul(2);
    }
    Ok(rows)
}

pub fn cmd_scaling(config: &Path, dims: &[usize], out: &Path) -> CliResult<()> {
    if dims.is_empty() {
        return Err(CliError::config("--dims: at least one dimension required"));
    }
    let base = resolved_with_out(config, out)?;
    for &d in dims {
        scaling_config(&base, d, base.scaling.start_width)?;
    }
    let tables = parallel_map(dims.to_vec(), worker_count(), |d| scale_dimension(&base, d, out));
    let mut csv = CsvFile::create(
        out.join("scaling_table.csv"),
        &["dimension", "width", "param_count", "achieved_distance", "within_tolerance"],
    )?;
    for t in tables {
        for r in t? {
            csv.row([
                r.dimension.to_string(),
                r.width.to_string(),
                r.param_count.to_string(),
                num(r.achieved_distance),
                r.within_tolerance.to_string(),
            ])?;
        }
    }
    Ok(())
}
