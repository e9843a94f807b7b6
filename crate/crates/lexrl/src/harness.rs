//! Experiment protocols: convergence detection, the episodes-to-convergence
//! scaling study, the GridNav safety study, and metrics persistence.
//!
//! Runs are embarrassingly parallel: a work queue dispatches (config, seed)
//! pairs to workers, each owning its learner and RNG; results land in a
//! preallocated slot per job, so the output is a pure function of the master
//! seed and config regardless of the thread count.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lexoracle::{evaluate_policy_exact, Policy};
use crate::momdp::{build_gridnav, generate_random_momdp, GridNavConfig, Momdp, RandomMomdpConfig};
use crate::policy_based::{policy_distribution, run_pblrl, ObjectiveKind, PblrlConfig};
use crate::util::{derive_seed, g17, sample_categorical, seeded_rng};
use crate::value_based::{run_vblrl, UpdateRule, VblrlConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("momdps_per_cell must be at least 1")]
    EmptyCell,
}

/// One finished episode's metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Undiscounted return per objective.
    pub returns: Vec<f64>,
    pub length: usize,
    /// Global step index at episode end.
    pub global_step: usize,
}

/// Per-episode training metrics for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsSeries {
    pub episodes: Vec<EpisodeRecord>,
    /// Max Q-table sup-norm change within each episode, when tracked.
    pub q_sup_deltas: Option<Vec<f64>>,
}

impl MetricsSeries {
    pub fn push(&mut self, rec: EpisodeRecord) {
        debug_assert!(self
            .episodes
            .last()
            .map_or(true, |last| rec.episode > last.episode));
        self.episodes.push(rec);
    }
}

/// First episode at which the running mean return (averaged across
/// objectives) stabilises: the earliest e ≥ window such that the running
/// mean's relative swing (max−min)/max(1,|mean|) over the last `window`
/// episodes is below `rel_threshold`. Defaults: window 50, threshold 0.05.
pub fn detect_convergence(
    series: &MetricsSeries,
    window: usize,
    rel_threshold: f64,
) -> Option<usize> {
    assert!(window >= 2, "window must be at least 2");
    let n = series.episodes.len();
    if n == 0 {
        return None;
    }
    let mut running = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (e, rec) in series.episodes.iter().enumerate() {
        let mean_ret: f64 = rec.returns.iter().sum::<f64>() / rec.returns.len() as f64;
        acc += mean_ret;
        running.push(acc / (e + 1) as f64);
    }
    for e in window..n {
        let slice = &running[e + 1 - window..=e];
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &v in slice {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        let mean = sum / window as f64;
        if (hi - lo) / mean.abs().max(1.0) < rel_threshold {
            return Some(e);
        }
    }
    None
}

/// A trainable algorithm plus its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    ValueBased(VblrlConfig),
    PolicyBased(PblrlConfig),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ValueBased(cfg) => match cfg.update_rule {
                UpdateRule::LexQ => "lexq-vb",
                UpdateRule::Sarsa => "sarsa-vb",
                UpdateRule::ExpectedSarsa => "esarsa-vb",
                UpdateRule::LexDoubleQ => "doubleq-vb",
            },
            Algorithm::PolicyBased(cfg) => match cfg.objective {
                ObjectiveKind::A2c => "la2c",
                ObjectiveKind::PpoKl { .. } => "lppo",
            },
        }
    }

    fn with_seed(&self, seed: u64) -> Algorithm {
        match self {
            Algorithm::ValueBased(cfg) => {
                let mut c = cfg.clone();
                c.seed = seed;
                Algorithm::ValueBased(c)
            }
            Algorithm::PolicyBased(cfg) => {
                let mut c = cfg.clone();
                c.seed = seed;
                Algorithm::PolicyBased(c)
            }
        }
    }

    /// Trains on `momdp` and returns the learned (deterministic greedy or
    /// stochastic softmax) policy plus the episode series.
    pub fn train(&self, momdp: &Momdp) -> Result<(Policy, MetricsSeries), String> {
        match self {
            Algorithm::ValueBased(cfg) => {
                let mut rng = seeded_rng(cfg.seed);
                let out = run_vblrl(momdp, cfg, &mut rng).map_err(|e| e.to_string())?;
                let det = out
                    .greedy_sets
                    .iter()
                    .map(|set| *set.first().expect("greedy set never empty"))
                    .collect();
                Ok((Policy::Deterministic(det), out.series))
            }
            Algorithm::PolicyBased(cfg) => {
                let mut rng = seeded_rng(cfg.seed);
                let out = run_pblrl(momdp, cfg, &mut rng).map_err(|e| e.to_string())?;
                let dist = (0..momdp.num_states)
                    .map(|s| policy_distribution(&out.params, s))
                    .collect();
                Ok((Policy::Stochastic(dist), out.series))
            }
        }
    }
}

/// Stable short digest of a canonical config description.
pub fn stable_digest(description: &str) -> String {
    let hash = Sha256::digest(description.as_bytes());
    let mut out = String::with_capacity(16);
    for byte in &hash[..8] {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// The episodes-to-convergence scaling study over the objective count.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingExperimentConfig {
    pub states: usize,
    pub actions: usize,
    /// Objective counts m to sweep.
    pub objective_counts: Vec<usize>,
    pub momdps_per_cell: usize,
    pub algorithm: Algorithm,
    /// Convergence detector parameters.
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    pub seed: u64,
    pub threads: usize,
}

impl ScalingExperimentConfig {
    pub fn new(states: usize, algorithm: Algorithm, seed: u64) -> Self {
        Self {
            states,
            actions: 4,
            objective_counts: vec![1, 2, 4],
            momdps_per_cell: 30,
            algorithm,
            convergence_window: 50,
            convergence_threshold: 0.05,
            seed,
            threads: 1,
        }
    }

    fn digest(&self) -> String {
        // Thread count only affects scheduling, never results, so it stays
        // out of the digest.
        let mut canonical = self.clone();
        canonical.threads = 0;
        stable_digest(&format!("{canonical:?}"))
    }
}

/// One run's results; the final J vector is always recomputed exactly from
/// the learned policy, never read from training estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: String,
    pub env: String,
    pub seed: u64,
    pub config_digest: String,
    pub num_objectives: usize,
    pub states: usize,
    pub actions: usize,
    pub episodes_to_convergence: Option<usize>,
    pub wall_seconds: f64,
    pub final_j: Vec<f64>,
    /// Set when the run failed; such records carry no J vector.
    pub error: Option<String>,
}

/// Runs `worker` over `jobs` on `threads` workers. Results are placed by
/// job index, so the output order is thread-count independent.
fn parallel_map<J, R, F>(jobs: Vec<J>, threads: usize, worker: F) -> Vec<R>
where
    J: Send,
    R: Send,
    F: Fn(J) -> R + Sync,
{
    let threads = threads.max(1);
    let queue: Mutex<VecDeque<(usize, J)>> = Mutex::new(jobs.into_iter().enumerate().collect());
    let slots: Vec<Mutex<Option<R>>> = {
        let n = queue.lock().unwrap().len();
        (0..n).map(|_| Mutex::new(None)).collect()
    };
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop_front();
                let Some((idx, job)) = job else { break };
                let result = worker(job);
                *slots[idx].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

/// Figure-1-style sweep: for each objective count m, train on
/// `momdps_per_cell` freshly generated random MOMDPs and record episodes to
/// convergence. Deterministic given the master seed; per-run failures are
/// recorded, never abort the sweep.
pub fn run_scaling_experiment(
    config: &ScalingExperimentConfig,
) -> Result<Vec<(RunRecord, MetricsSeries)>, HarnessError> {
    if config.momdps_per_cell == 0 {
        return Err(HarnessError::EmptyCell);
    }
    let digest = config.digest();
    let mut jobs = Vec::new();
    for (cell, &m) in config.objective_counts.iter().enumerate() {
        for k in 0..config.momdps_per_cell {
            let job_index = (cell * config.momdps_per_cell + k) as u64;
            jobs.push((m, job_index));
        }
    }
    let results = parallel_map(jobs, config.threads, |(m, job_index)| {
        let env_seed = derive_seed(config.seed, 2 * job_index);
        let train_seed = derive_seed(config.seed, 2 * job_index + 1);
        let momdp = generate_random_momdp(&RandomMomdpConfig::new(
            config.states,
            config.actions,
            m,
            env_seed,
        ));
        let env = format!("random-{}x{}-m{}", config.states, config.actions, m);
        let started = Instant::now();
        let trained = config.algorithm.with_seed(train_seed).train(&momdp);
        let wall_seconds = started.elapsed().as_secs_f64();
        let mut record = RunRecord {
            algorithm: config.algorithm.name().to_string(),
            env,
            seed: train_seed,
            config_digest: digest.clone(),
            num_objectives: m,
            states: config.states,
            actions: config.actions,
            episodes_to_convergence: None,
            wall_seconds,
            final_j: Vec::new(),
            error: None,
        };
        match trained {
            Ok((policy, series)) => {
                record.episodes_to_convergence = detect_convergence(
                    &series,
                    config.convergence_window,
                    config.convergence_threshold,
                );
                match evaluate_policy_exact(&momdp, &policy) {
                    Ok(j) => record.final_j = j,
                    Err(e) => record.error = Some(e.to_string()),
                }
                (record, series)
            }
            Err(message) => {
                record.error = Some(message);
                (record, MetricsSeries::default())
            }
        }
    });
    Ok(results)
}

/// Restricts a MOMDP to a subset of its objectives (for single-objective
/// baselines).
pub fn project_objectives(momdp: &Momdp, objectives: &[usize]) -> Momdp {
    let mut out = momdp.clone();
    out.num_objectives = objectives.len();
    out.reward_mean = objectives.iter().map(|&i| momdp.reward_mean[i].clone()).collect();
    out.reward_noise_sigma = objectives.iter().map(|&i| momdp.reward_noise_sigma[i]).collect();
    out.discounts = objectives.iter().map(|&i| momdp.discounts[i]).collect();
    out
}

/// One entry in the safety suite: an algorithm, optionally trained on the
/// reward objective alone (the unconstrained comparator).
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub algorithm: Algorithm,
    pub reward_only: bool,
}

impl SafetySpec {
    pub fn name(&self) -> String {
        if self.reward_only {
            format!("{}-baseline", self.algorithm.name())
        } else {
            self.algorithm.name().to_string()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SafetyRunResult {
    pub record: RunRecord,
    pub series: MetricsSeries,
    /// Mean per-episode safety cost over the evaluation episodes.
    pub eval_mean_cost: f64,
    /// Mean per-episode reward return over the evaluation episodes.
    pub eval_mean_reward: f64,
}

/// Mean undiscounted return per objective of `policy` over fresh rollouts.
pub fn evaluate_policy_monte_carlo<R: Rng>(
    momdp: &Momdp,
    policy: &Policy,
    episodes: usize,
    rng: &mut R,
) -> Vec<f64> {
    let m = momdp.num_objectives;
    let horizon = momdp.episode_horizon.unwrap_or(1000);
    let mut totals = vec![0.0; m];
    for _ in 0..episodes {
        let mut s = momdp.sample_initial(rng);
        for _ in 0..horizon {
            let a = match policy {
                Policy::Deterministic(actions) => actions[s],
                Policy::Stochastic(dist) => sample_categorical(&dist[s], rng),
            };
            let rec = momdp.sample_transition(s, a, rng).expect("valid indices");
            for (acc, &r) in totals.iter_mut().zip(&rec.rewards) {
                *acc += r;
            }
            if rec.terminal {
                break;
            }
            s = rec.next_state;
        }
    }
    totals.iter().map(|&x| x / episodes as f64).collect()
}

/// GridNav safety study: trains each algorithm with objective order
/// (−cost, reward) — except reward-only baselines — across `seeds`
/// replications, then evaluates every final policy over `eval_episodes`
/// fresh episodes, recording mean cost and mean reward.
pub fn run_safety_experiment(
    grid: &GridNavConfig,
    specs: &[SafetySpec],
    seeds: usize,
    eval_episodes: usize,
    threads: usize,
) -> Result<Vec<SafetyRunResult>, HarnessError> {
    let momdp = build_gridnav(grid).expect("gridnav layout");
    let reward_only = project_objectives(&momdp, &[1]);
    let env = format!("gridnav-{}", grid.grid_side);

    let mut jobs = Vec::new();
    for spec_idx in 0..specs.len() {
        for rep in 0..seeds {
            jobs.push((spec_idx, rep));
        }
    }
    let results = parallel_map(jobs, threads, |(spec_idx, rep)| {
        let spec = &specs[spec_idx];
        let digest = stable_digest(&format!("{grid:?}/{spec:?}"));
        let train_env = if spec.reward_only { &reward_only } else { &momdp };
        let train_seed = derive_seed(
            grid.seed ^ 0x5afe_5afe,
            (spec_idx * seeds + rep) as u64,
        );
        let started = Instant::now();
        let trained = spec.algorithm.with_seed(train_seed).train(train_env);
        let wall_seconds = started.elapsed().as_secs_f64();
        let mut record = RunRecord {
            algorithm: spec.name(),
            env: env.clone(),
            seed: train_seed,
            config_digest: digest,
            num_objectives: train_env.num_objectives,
            states: momdp.num_states,
            actions: momdp.num_actions,
            episodes_to_convergence: None,
            wall_seconds,
            final_j: Vec::new(),
            error: None,
        };
        match trained {
            Ok((policy, series)) => {
                record.episodes_to_convergence = detect_convergence(&series, 50, 0.05);
                match evaluate_policy_exact(train_env, &policy) {
                    Ok(j) => record.final_j = j,
                    Err(e) => record.error = Some(e.to_string()),
                }
                // Evaluation always observes both objectives on the full
                // environment, baseline included.
                let mut eval_rng = seeded_rng(derive_seed(train_seed, u64::MAX));
                let means = evaluate_policy_monte_carlo(&momdp, &policy, eval_episodes, &mut eval_rng);
                SafetyRunResult {
                    record,
                    series,
                    eval_mean_cost: -means[0],
                    eval_mean_reward: means[1],
                }
            }
            Err(message) => {
                record.error = Some(message);
                SafetyRunResult {
                    record,
                    series: MetricsSeries::default(),
                    eval_mean_cost: f64::NAN,
                    eval_mean_reward: f64::NAN,
                }
            }
        }
    });
    Ok(results)
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), source }
}

/// Writes `runs.csv` plus one `series_<digest>_<seed>.csv` per provided
/// series into `dir`, overwriting existing files. Returns the written paths.
pub fn write_metrics_csv(
    records: &[RunRecord],
    series: &[(String, u64, MetricsSeries)],
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::new();

    let max_m = records.iter().map(|r| r.num_objectives).max().unwrap_or(0);
    let mut out = String::new();
    out.push_str("algorithm,env,seed,config_digest,m,states,actions,episodes_to_convergence,wall_seconds");
    for i in 1..=max_m {
        let _ = write!(out, ",j_{i}");
    }
    out.push('\n');
    for r in records {
        let episodes = r
            .episodes_to_convergence
            .map_or_else(|| "none".to_string(), |e| e.to_string());
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.algorithm,
            r.env,
            r.seed,
            r.config_digest,
            r.num_objectives,
            r.states,
            r.actions,
            episodes,
            g17(r.wall_seconds)
        );
        for i in 0..max_m {
            out.push(',');
            if let Some(&j) = r.final_j.get(i) {
                out.push_str(&g17(j));
            }
        }
        out.push('\n');
    }
    let runs_path = dir.join("runs.csv");
    std::fs::write(&runs_path, &out).map_err(|e| io_err(&runs_path, e))?;
    paths.push(runs_path);

    for (digest, seed, s) in series {
        let m = s.episodes.first().map_or(0, |e| e.returns.len());
        let mut out = String::from("episode,length");
        for i in 1..=m {
            let _ = write!(out, ",ret_{i}");
        }
        out.push_str(",global_step\n");
        for rec in &s.episodes {
            let _ = write!(out, "{},{}", rec.episode, rec.length);
            for &ret in &rec.returns {
                out.push(',');
                out.push_str(&g17(ret));
            }
            let _ = writeln!(out, ",{}", rec.global_step);
        }
        let path = dir.join(format!("series_{digest}_{seed}.csv"));
        std::fs::write(&path, &out).map_err(|e| io_err(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads `runs.csv` back into records (the inverse of `write_metrics_csv`
/// for successful runs).
pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let csv_err = |line: usize, message: String| HarnessError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| csv_err(1, "empty file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 9 {
        return Err(csv_err(1, format!("expected at least 9 columns, got {}", columns.len())));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(csv_err(lineno, format!(
                "expected {} fields, got {}",
                columns.len(),
                fields.len()
            )));
        }
        let parse_u = |k: usize| -> Result<u64, HarnessError> {
            fields[k]
                .parse()
                .map_err(|_| csv_err(lineno, format!("bad integer in {}: {:?}", columns[k], fields[k])))
        };
        let parse_f = |k: usize| -> Result<f64, HarnessError> {
            fields[k]
                .parse()
                .map_err(|_| csv_err(lineno, format!("bad float in {}: {:?}", columns[k], fields[k])))
        };
        let episodes = match fields[7] {
            "none" => None,
            other => Some(other.parse().map_err(|_| {
                csv_err(lineno, format!("bad episodes_to_convergence: {other:?}"))
            })?),
        };
        let m = parse_u(4)? as usize;
        let mut final_j = Vec::with_capacity(m);
        for k in 0..m {
            final_j.push(parse_f(9 + k)?);
        }
        records.push(RunRecord {
            algorithm: fields[0].to_string(),
            env: fields[1].to_string(),
            seed: parse_u(2)?,
            config_digest: fields[3].to_string(),
            num_objectives: m,
            states: parse_u(5)? as usize,
            actions: parse_u(6)? as usize,
            episodes_to_convergence: episodes,
            wall_seconds: parse_f(8)?,
            final_j,
            error: None,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn series_from(returns: &[f64]) -> MetricsSeries {
        let mut s = MetricsSeries::default();
        for (e, &r) in returns.iter().enumerate() {
            s.push(EpisodeRecord {
                episode: e,
                returns: vec![r],
                length: 10,
                global_step: (e + 1) * 10,
            });
        }
        s
    }

    #[test]
    fn constant_series_converges_at_window() {
        let s = series_from(&vec![3.0; 200]);
        assert_eq!(detect_convergence(&s, 50, 0.05), Some(50));
    }

    #[test]
    fn linear_ramp_never_converges() {
        // Running mean of a geometric ramp keeps a large relative swing.
        let returns: Vec<f64> = (0..300).map(|e| 1.002f64.powi(e as i32 * 5)).collect();
        let s = series_from(&returns);
        assert_eq!(detect_convergence(&s, 50, 0.0005), None);
    }

    #[test]
    fn noisy_plateau_detected_reliably() {
        let mut rng = seeded_rng(31);
        let trials = 1000;
        let (window, threshold) = (50usize, 0.05);
        let mut hits = 0;
        for _ in 0..trials {
            let returns: Vec<f64> = (0..300)
                .map(|_| 10.0 + (rng.random::<f64>() * 0.2 - 0.1))
                .collect();
            let s = series_from(&returns);
            if let Some(e) = detect_convergence(&s, window, threshold) {
                if e <= 2 * window {
                    hits += 1;
                }
            }
        }
        assert!(hits >= 990, "hits = {hits}/1000");
    }

    #[test]
    fn appending_never_moves_detection_earlier() {
        let mut rng = seeded_rng(32);
        for _ in 0..50 {
            let n = 120 + (rng.random::<f64>() * 100.0) as usize;
            let returns: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 5.0).collect();
            let s = series_from(&returns);
            let full = detect_convergence(&s, 20, 0.3);
            let prefix = series_from(&returns[..n - 30]);
            if let Some(e) = detect_convergence(&prefix, 20, 0.3) {
                assert_eq!(full, Some(e));
            }
        }
    }

    fn tiny_scaling_config(threads: usize) -> ScalingExperimentConfig {
        let mut vb = VblrlConfig::new(UpdateRule::LexQ, 4000, 0);
        vb.convergence_window = 0;
        let mut cfg = ScalingExperimentConfig::new(6, Algorithm::ValueBased(vb), 99);
        cfg.actions = 2;
        cfg.objective_counts = vec![1, 2];
        cfg.momdps_per_cell = 3;
        cfg.convergence_window = 5;
        cfg.threads = threads;
        cfg
    }

    #[test]
    fn scaling_sweep_is_deterministic_and_thread_independent() {
        let a = run_scaling_experiment(&tiny_scaling_config(1)).unwrap();
        let b = run_scaling_experiment(&tiny_scaling_config(1)).unwrap();
        let c = run_scaling_experiment(&tiny_scaling_config(3)).unwrap();
        let strip = |v: &[(RunRecord, MetricsSeries)]| -> Vec<(RunRecord, MetricsSeries)> {
            v.iter()
                .map(|(r, s)| {
                    let mut r = r.clone();
                    r.wall_seconds = 0.0;
                    (r, s.clone())
                })
                .collect()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(strip(&a), strip(&c));
        assert_eq!(a.len(), 6);
        for (r, _) in &a {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert_eq!(r.final_j.len(), r.num_objectives);
        }
    }

    #[test]
    fn empty_cell_rejected() {
        let mut cfg = tiny_scaling_config(1);
        cfg.momdps_per_cell = 0;
        assert!(matches!(
            run_scaling_experiment(&cfg),
            Err(HarnessError::EmptyCell)
        ));
    }

    #[test]
    fn projection_keeps_selected_objective() {
        let momdp = build_gridnav(&GridNavConfig::default()).unwrap();
        let proj = project_objectives(&momdp, &[1]);
        assert_eq!(proj.num_objectives, 1);
        assert_eq!(proj.reward_mean[0], momdp.reward_mean[1]);
        assert_eq!(proj.discounts[0], momdp.discounts[1]);
        assert!(proj.validate().is_empty());
    }

    #[test]
    fn degenerate_safe_gridnav_reaches_zero_cost() {
        // No unsafe cells and no slip: every algorithm attains zero cost.
        let grid = GridNavConfig {
            grid_side: 4,
            unsafe_density: 0.0,
            slip_prob: 0.0,
            step_limit: 60,
            ..GridNavConfig::default()
        };
        let mut vb = VblrlConfig::new(UpdateRule::LexQ, 30_000, 0);
        vb.convergence_window = 0;
        let specs = vec![
            SafetySpec { algorithm: Algorithm::ValueBased(vb.clone()), reward_only: false },
            SafetySpec { algorithm: Algorithm::ValueBased(vb), reward_only: true },
        ];
        let results = run_safety_experiment(&grid, &specs, 2, 30, 1).unwrap();
        assert_eq!(results.len(), 4);
        for r in &results {
            assert!(r.record.error.is_none(), "{:?}", r.record.error);
            assert_eq!(r.eval_mean_cost, 0.0, "algorithm {}", r.record.algorithm);
            assert!(r.eval_mean_reward > 0.0, "goal never reached by {}", r.record.algorithm);
        }
    }

    fn sample_record(m: usize) -> RunRecord {
        RunRecord {
            algorithm: "lexq-vb".into(),
            env: "random-6x2-m2".into(),
            seed: 1234,
            config_digest: "00ff00ff00ff00ff".into(),
            num_objectives: m,
            states: 6,
            actions: 2,
            episodes_to_convergence: Some(77),
            wall_seconds: 0.125,
            final_j: (0..m).map(|i| 0.1 + i as f64 / 3.0).collect(),
            error: None,
        }
    }

    #[test]
    fn empty_records_give_header_only_runs_csv() {
        let dir = std::env::temp_dir().join("lexrl_csv_empty");
        let paths = write_metrics_csv(&[], &[], &dir).unwrap();
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("algorithm,env,seed"));
    }

    #[test]
    fn series_csv_schema() {
        let dir = std::env::temp_dir().join("lexrl_csv_series");
        let mut s = MetricsSeries::default();
        for e in 0..3 {
            s.push(EpisodeRecord {
                episode: e,
                returns: vec![e as f64, -1.0],
                length: 4,
                global_step: 4 * (e + 1),
            });
        }
        let paths = write_metrics_csv(&[sample_record(2)], &[("abcd".into(), 7, s)], &dir).unwrap();
        let text = std::fs::read_to_string(&paths[1]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "episode,length,ret_1,ret_2,global_step");
        assert_eq!(lines.len(), 4);
        assert!(paths[1].ends_with("series_abcd_7.csv"));
    }

    #[test]
    fn runs_csv_round_trip_is_exact() {
        let dir = std::env::temp_dir().join("lexrl_csv_roundtrip");
        let mut records = vec![sample_record(2), sample_record(1)];
        records[1].wall_seconds = 1.0 / 3.0;
        records[1].final_j = vec![std::f64::consts::PI];
        records[1].episodes_to_convergence = None;
        let paths = write_metrics_csv(&records, &[], &dir).unwrap();
        let back = read_runs_csv(&paths[0]).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn digest_is_stable_and_input_sensitive() {
        let a = stable_digest("config-a");
        assert_eq!(a, stable_digest("config-a"));
        assert_ne!(a, stable_digest("config-b"));
        assert_eq!(a.len(), 16);
    }
}
