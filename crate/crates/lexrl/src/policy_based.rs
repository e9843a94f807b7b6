//! Policy-based lexicographic RL: softmax policies with analytic gradients,
//! linear TD(0) critics, A2C and KL-penalised PPO objectives, Lagrange
//! multiplier dynamics, and the multi-timescale learning-rate chain.
//!
//! Objectives are optimised synchronously at separate timescales: the
//! critics move fastest, then each objective's policy rate β^i and
//! multiplier rate η^i in decreasing order. Collecting the per-objective
//! θ updates collapses them into one linear combination with coefficients
//! c^i_t = β^i_t + λ_i Σ_{j>i} β^j_t.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::harness::{EpisodeRecord, MetricsSeries};
use crate::momdp::{Momdp, MomdpError, TransitionRecord};
use crate::util::sample_categorical;

#[derive(Debug, Error)]
pub enum PblrlError {
    #[error("invalid feature map: {0}")]
    InvalidFeatures(String),
    #[error("PPO KL coefficient kappa must exceed 1, got {0}")]
    InvalidKappa(f64),
    #[error("snapshot policy has zero probability mass on a taken action")]
    DegenerateSnapshot,
    #[error("non-finite gradient at step {step}")]
    NumericFailure { step: usize },
    #[error("max_steps must be positive")]
    ZeroMaxSteps,
    #[error(transparent)]
    Momdp(#[from] MomdpError),
}

/// State features φ. The default is one-hot over states, making θ tabular
/// logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `rows[s]` is φ(s).
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMap {
    pub fn one_hot(num_states: usize) -> Self {
        let rows = (0..num_states)
            .map(|s| {
                let mut v = vec![0.0; num_states];
                v[s] = 1.0;
                v
            })
            .collect();
        Self { rows }
    }

    pub fn num_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// The linear-critic regime requires independent features and forbids a
    /// constant (bias-like) feature column.
    pub fn validate(&self) -> Result<(), PblrlError> {
        let c = self.num_features();
        if c == 0 || self.rows.is_empty() {
            return Err(PblrlError::InvalidFeatures("empty feature map".into()));
        }
        if c > self.rows.len() {
            return Err(PblrlError::InvalidFeatures(format!(
                "more features ({c}) than states ({})",
                self.rows.len()
            )));
        }
        if self.rows.len() > 1 {
            for f in 0..c {
                let first = self.rows[0][f];
                if self.rows.iter().all(|row| row[f] == first) {
                    return Err(PblrlError::InvalidFeatures(format!(
                        "feature {f} is constant across states"
                    )));
                }
            }
        }
        if matrix_rank(&self.rows) < c {
            return Err(PblrlError::InvalidFeatures(
                "feature columns are linearly dependent".into(),
            ));
        }
        Ok(())
    }
}

fn matrix_rank(rows: &[Vec<f64>]) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let (nr, nc) = (m.len(), m[0].len());
    let mut rank = 0;
    for col in 0..nc {
        let pivot = (rank..nr).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()));
        let Some(p) = pivot else { break };
        if m[p][col].abs() < 1e-12 {
            continue;
        }
        m.swap(rank, p);
        for r in 0..nr {
            if r != rank {
                let f = m[r][col] / m[rank][col];
                if f != 0.0 {
                    for k in 0..nc {
                        m[r][k] -= f * m[rank][k];
                    }
                }
            }
        }
        rank += 1;
        if rank == nr {
            break;
        }
    }
    rank
}

/// Softmax policy parameters θ over state features, projected onto the box
/// [−theta_max, theta_max] after every update.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicyParams {
    /// `theta[f][a]`: one weight per (feature, action).
    pub theta: Vec<Vec<f64>>,
    pub features: FeatureMap,
    pub theta_max: f64,
}

impl SoftmaxPolicyParams {
    pub fn zeros(features: FeatureMap, num_actions: usize, theta_max: f64) -> Result<Self, PblrlError> {
        features.validate()?;
        let theta = vec![vec![0.0; num_actions]; features.num_features()];
        Ok(Self { theta, features, theta_max })
    }

    pub fn num_actions(&self) -> usize {
        self.theta[0].len()
    }

    fn logits(&self, s: usize) -> Vec<f64> {
        let phi = &self.features.rows[s];
        let na = self.num_actions();
        let mut logits = vec![0.0; na];
        for (f, &x) in phi.iter().enumerate() {
            if x != 0.0 {
                for (a, l) in logits.iter_mut().enumerate() {
                    *l += x * self.theta[f][a];
                }
            }
        }
        logits
    }
}

/// π(·|s;θ): log-sum-exp stabilised softmax of the state's logits.
pub fn policy_distribution(params: &SoftmaxPolicyParams, s: usize) -> Vec<f64> {
    let logits = params.logits(s);
    let mx = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= z;
    }
    exps
}

/// Linear state-value critics V_i(s) = ⟨w_i, φ(s)⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCritics {
    /// `w[i]` is the weight vector for objective i.
    pub w: Vec<Vec<f64>>,
}

impl LinearCritics {
    pub fn zeros(num_objectives: usize, num_features: usize) -> Self {
        Self { w: vec![vec![0.0; num_features]; num_objectives] }
    }

    pub fn value(&self, features: &FeatureMap, i: usize, s: usize) -> f64 {
        self.w[i]
            .iter()
            .zip(&features.rows[s])
            .map(|(&wi, &x)| wi * x)
            .sum()
    }
}

/// TD(0) critic update for objective i. Returns the TD error
/// δ^i = r_i + γ_i V_i(s') − V_i(s), the advantage estimate.
pub fn critic_td0_update(
    critics: &mut LinearCritics,
    features: &FeatureMap,
    rec: &TransitionRecord,
    i: usize,
    gamma: f64,
    alpha: f64,
) -> f64 {
    let v_next = if rec.terminal {
        0.0
    } else {
        critics.value(features, i, rec.next_state)
    };
    let delta = rec.rewards[i] + gamma * v_next - critics.value(features, i, rec.state);
    for (wf, &x) in critics.w[i].iter_mut().zip(&features.rows[rec.state]) {
        *wf += alpha * delta * x;
    }
    delta
}

/// Nonnegative Lagrange multipliers; λ_m exists but is never used.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub lambda: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(num_objectives: usize) -> Self {
        Self { lambda: vec![0.0; num_objectives] }
    }
}

/// The multi-timescale learning-rate chain. Rates decay as
/// base/(1+t)^e with exponents strictly increasing along the chain
/// (α, η^0, β^1, η^1, …, β^m, η^m), all in (0.5, 1]; the tolerance τ_t
/// decays like (1+t)^{−1}, faster than every β.
#[derive(Debug, Clone, PartialEq)]
pub struct TimescaleChain {
    pub num_objectives: usize,
    pub alpha_base: f64,
    pub beta_base: f64,
    pub eta_base: f64,
    pub tau0: f64,
}

impl TimescaleChain {
    pub fn new(num_objectives: usize) -> Self {
        Self {
            num_objectives,
            alpha_base: 0.5,
            beta_base: 20.0,
            eta_base: 0.05,
            tau0: 0.1,
        }
    }

    /// Exponent at chain position k ∈ {0, …, 2m+1}.
    pub fn exponent(&self, k: usize) -> f64 {
        0.55 + 0.40 * k as f64 / (2 * self.num_objectives + 1) as f64
    }

    /// Critic rate α_t (chain position 0).
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_base / (1.0 + t as f64).powf(self.exponent(0))
    }

    /// Policy rate β^i_t for objective index i (0-based; chain position
    /// 2(i+1)).
    pub fn beta(&self, i: usize, t: usize) -> f64 {
        self.beta_base / (1.0 + t as f64).powf(self.exponent(2 * (i + 1)))
    }

    /// Multiplier rate η^k_t for k converged objectives (chain position
    /// 2k+1).
    pub fn eta(&self, k: usize, t: usize) -> f64 {
        self.eta_base / (1.0 + t as f64).powf(self.exponent(2 * k + 1))
    }

    /// Constraint slack τ_t = τ0·(1+t)^{−1} = o(β^m_t).
    pub fn tau(&self, t: usize) -> f64 {
        self.tau0 / (1.0 + t as f64)
    }
}

/// Update-direction coefficients c^i_t = β^i_t + λ_i Σ_{j>i} β^j_t
/// (0-based objective index; the trailing sum is empty for the last one).
pub fn timescale_coefficients(t: usize, multipliers: &Multipliers, chain: &TimescaleChain) -> Vec<f64> {
    let m = chain.num_objectives;
    (0..m)
        .map(|i| {
            let tail: f64 = (i + 1..m).map(|j| chain.beta(j, t)).sum();
            chain.beta(i, t) + multipliers.lambda[i] * tail
        })
        .collect()
}

/// λ_j ← max(0, λ_j + η_t (k̂_j − τ_t − K̂_j)) for every converged
/// objective j; unconverged multipliers are untouched.
pub fn lambda_update(
    multipliers: &mut Multipliers,
    tracker: &ObjectiveTracker,
    current_estimates: &[f64],
    eta_t: f64,
    tau_t: f64,
) {
    for j in 0..tracker.num_converged() {
        let k_hat = tracker.frozen_target(j).expect("converged objective has a frozen target");
        let next = multipliers.lambda[j] + eta_t * (k_hat - tau_t - current_estimates[j]);
        multipliers.lambda[j] = next.max(0.0);
    }
}

/// θ ← clamp(θ + g, ±theta_max), with g the already-rate-weighted combined
/// gradient.
pub fn theta_update(
    params: &mut SoftmaxPolicyParams,
    gradient: &[Vec<f64>],
    step: usize,
) -> Result<(), PblrlError> {
    for (row_t, row_g) in params.theta.iter_mut().zip(gradient) {
        for (t, &g) in row_t.iter_mut().zip(row_g) {
            if !g.is_finite() {
                return Err(PblrlError::NumericFailure { step });
            }
            *t = (*t + g).clamp(-params.theta_max, params.theta_max);
        }
    }
    Ok(())
}

/// One training sample: the per-objective TD errors observed at (s, a).
#[derive(Debug, Clone)]
pub struct BatchSample {
    pub state: usize,
    pub action: usize,
    pub deltas: Vec<f64>,
}

fn zero_grad(params: &SoftmaxPolicyParams) -> Vec<Vec<f64>> {
    vec![vec![0.0; params.num_actions()]; params.theta.len()]
}

/// Batch-mean gradient of the advantage actor-critic surrogate
/// E[log π(a|s;θ)·δ^i]: the analytic softmax score φ(s) ⊗ (1_a − π(·|s))
/// weighted by δ^i.
pub fn a2c_objective_grad(
    params: &SoftmaxPolicyParams,
    batch: &[BatchSample],
    i: usize,
) -> Vec<Vec<f64>> {
    let mut grad = zero_grad(params);
    let scale = 1.0 / batch.len() as f64;
    for sample in batch {
        let pi = policy_distribution(params, sample.state);
        let delta = sample.deltas[i];
        if delta == 0.0 {
            continue;
        }
        let phi = &params.features.rows[sample.state];
        for (f, &x) in phi.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (a, g) in grad[f].iter_mut().enumerate() {
                let indicator = if a == sample.action { 1.0 } else { 0.0 };
                *g += scale * delta * x * (indicator - pi[a]);
            }
        }
    }
    grad
}

/// Batch-mean gradient of the KL-penalised PPO surrogate
/// E[(π/π_old)·δ^i − κ·KL(π_θ(s) ‖ π_old(s))], with the KL computed exactly
/// over the finite action set. At θ = θ_old this reduces to the A2C
/// gradient.
pub fn ppo_objective_grad(
    params: &SoftmaxPolicyParams,
    params_old: &SoftmaxPolicyParams,
    batch: &[BatchSample],
    i: usize,
    kappa: f64,
) -> Result<Vec<Vec<f64>>, PblrlError> {
    let mut grad = zero_grad(params);
    let scale = 1.0 / batch.len() as f64;
    for sample in batch {
        let pi = policy_distribution(params, sample.state);
        let pi_old = policy_distribution(params_old, sample.state);
        if pi_old[sample.action] < 1e-300 {
            return Err(PblrlError::DegenerateSnapshot);
        }
        let delta = sample.deltas[i];
        let ratio = pi[sample.action] / pi_old[sample.action];
        let log_ratio: Vec<f64> = pi
            .iter()
            .zip(&pi_old)
            .map(|(&p, &po)| p.max(1e-300).ln() - po.max(1e-300).ln())
            .collect();
        let mean_log_ratio: f64 = pi.iter().zip(&log_ratio).map(|(&p, &lr)| p * lr).sum();
        let phi = &params.features.rows[sample.state];
        for (f, &x) in phi.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (a, g) in grad[f].iter_mut().enumerate() {
                let indicator = if a == sample.action { 1.0 } else { 0.0 };
                // d/dθ of the ratio term: δ·ratio·∇log π(a|s).
                let ratio_term = delta * ratio * (indicator - pi[a]);
                // d/dθ of KL(π ‖ π_old): π(a)(log_ratio(a) − E_π[log_ratio]).
                let kl_term = pi[a] * (log_ratio[a] - mean_log_ratio);
                *g += scale * x * (ratio_term - kappa * kl_term);
            }
        }
    }
    Ok(grad)
}

/// Tracks per-objective convergence of the performance estimates K̂_i.
/// Only the frontier objective (lowest unconverged index) is tested; on a
/// convergence event its target k̂_i freezes at the window mean and the
/// multiplier rate advances to η^i.
#[derive(Debug, Clone)]
pub struct ObjectiveTracker {
    window: usize,
    threshold: f64,
    samples: Vec<VecDeque<f64>>,
    frozen: Vec<Option<f64>>,
    converged: Vec<bool>,
}

impl ObjectiveTracker {
    pub fn new(num_objectives: usize, window: usize, threshold: f64) -> Self {
        Self {
            window,
            threshold,
            samples: vec![VecDeque::new(); num_objectives],
            frozen: vec![None; num_objectives],
            converged: vec![false; num_objectives],
        }
    }

    /// Number of converged objectives; also the active η rate index and the
    /// frontier objective's index.
    pub fn num_converged(&self) -> usize {
        self.converged.iter().take_while(|&&c| c).count()
    }

    pub fn is_converged(&self, i: usize) -> bool {
        self.converged[i]
    }

    pub fn frozen_target(&self, i: usize) -> Option<f64> {
        self.frozen[i]
    }

    /// Feeds a fresh K̂_i estimate for the frontier objective. Returns true
    /// on the convergence event.
    pub fn track(&mut self, i: usize, estimate: f64) -> bool {
        debug_assert_eq!(i, self.num_converged(), "only the frontier objective is tested");
        if self.converged[i] {
            return false;
        }
        let window = &mut self.samples[i];
        window.push_back(estimate);
        if window.len() > self.window {
            window.pop_front();
        }
        if window.len() < self.window {
            return false;
        }
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &v in window.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        let mean = sum / window.len() as f64;
        if (hi - lo) / mean.abs().max(1.0) < self.threshold {
            self.converged[i] = true;
            self.frozen[i] = Some(mean);
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    A2c,
    /// KL-penalised PPO; the penalty coefficient must exceed 1.
    PpoKl { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PblrlConfig {
    pub objective: ObjectiveKind,
    pub batch_size: usize,
    pub chain: TimescaleChain,
    pub theta_max: f64,
    /// Tracker window (in episodes) and relative swing threshold.
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    /// Episodes averaged into the K̂_i return estimator.
    pub return_window: usize,
    /// Gradient steps per batch with a frozen snapshot (PPO only; A2C
    /// always takes one).
    pub ppo_inner_steps: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl PblrlConfig {
    pub fn new(objective: ObjectiveKind, num_objectives: usize, max_steps: usize, seed: u64) -> Self {
        Self {
            objective,
            batch_size: 32,
            chain: TimescaleChain::new(num_objectives),
            theta_max: 100.0,
            convergence_window: 100,
            convergence_threshold: 0.01,
            return_window: 20,
            ppo_inner_steps: 4,
            max_steps,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PblrlError> {
        if let ObjectiveKind::PpoKl { kappa } = self.objective {
            if kappa <= 1.0 {
                return Err(PblrlError::InvalidKappa(kappa));
            }
        }
        if self.max_steps == 0 {
            return Err(PblrlError::ZeroMaxSteps);
        }
        Ok(())
    }
}

/// One row of the multiplier/coefficient trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub objective: usize,
    pub lambda: f64,
    pub coefficient: f64,
    pub beta: f64,
    pub eta_index: usize,
}

#[derive(Debug, Clone)]
pub struct PblrlOutcome {
    pub params: SoftmaxPolicyParams,
    pub critics: LinearCritics,
    pub multipliers: Multipliers,
    pub series: MetricsSeries,
    pub trace: Vec<TraceRow>,
    pub steps: usize,
}

/// Runs the policy-based lexicographic RL loop: per-step softmax action and
/// TD(0) critic updates, per-batch policy and multiplier updates combined
/// through the timescale coefficients, with K̂_i estimated as the windowed
/// mean per-episode discounted return.
pub fn run_pblrl<R: Rng>(
    momdp: &Momdp,
    config: &PblrlConfig,
    rng: &mut R,
) -> Result<PblrlOutcome, PblrlError> {
    config.validate()?;
    let m = momdp.num_objectives;
    let features = FeatureMap::one_hot(momdp.num_states);
    let mut params =
        SoftmaxPolicyParams::zeros(features.clone(), momdp.num_actions, config.theta_max)?;
    let mut critics = LinearCritics::zeros(m, features.num_features());
    let mut multipliers = Multipliers::zeros(m);
    let mut tracker = ObjectiveTracker::new(m, config.convergence_window, config.convergence_threshold);
    let mut series = MetricsSeries::default();
    let mut trace = Vec::new();

    // Windowed per-episode discounted returns per objective.
    let mut return_windows: Vec<VecDeque<f64>> = vec![VecDeque::new(); m];
    let estimate = |windows: &[VecDeque<f64>], i: usize| -> Option<f64> {
        let w = &windows[i];
        (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64)
    };

    let mut batch: Vec<BatchSample> = Vec::with_capacity(config.batch_size);
    let mut s = momdp.sample_initial(rng);
    let mut episode = 0usize;
    let mut episode_len = 0usize;
    let mut undiscounted = vec![0.0; m];
    let mut discounted = vec![0.0; m];
    let mut discount_pow = vec![1.0; m];
    let mut t = 0usize;

    while t < config.max_steps {
        let dist = policy_distribution(&params, s);
        let a = sample_categorical(&dist, rng);
        let mut rec = momdp.sample_transition(s, a, rng).map_err(PblrlError::from)?;
        rec.step_index = t;

        let alpha = config.chain.alpha(t);
        let deltas: Vec<f64> = (0..m)
            .map(|i| critic_td0_update(&mut critics, &features, &rec, i, momdp.discounts[i], alpha))
            .collect();
        batch.push(BatchSample { state: s, action: a, deltas });

        for i in 0..m {
            undiscounted[i] += rec.rewards[i];
            discounted[i] += discount_pow[i] * rec.rewards[i];
            discount_pow[i] *= momdp.discounts[i];
        }
        episode_len += 1;
        t += 1;

        if batch.len() >= config.batch_size {
            let coefficients = timescale_coefficients(t, &multipliers, &config.chain);
            let inner_steps = match config.objective {
                ObjectiveKind::A2c => 1,
                ObjectiveKind::PpoKl { .. } => config.ppo_inner_steps.max(1),
            };
            let snapshot = params.clone();
            for _ in 0..inner_steps {
                let mut combined = zero_grad(&params);
                for i in 0..m {
                    let grad = match config.objective {
                        ObjectiveKind::A2c => a2c_objective_grad(&params, &batch, i),
                        ObjectiveKind::PpoKl { kappa } => {
                            ppo_objective_grad(&params, &snapshot, &batch, i, kappa)?
                        }
                    };
                    for (row_c, row_g) in combined.iter_mut().zip(&grad) {
                        for (c, &g) in row_c.iter_mut().zip(row_g) {
                            *c += coefficients[i] * g;
                        }
                    }
                }
                theta_update(&mut params, &combined, t)?;
            }

            let active = tracker.num_converged();
            let estimates: Vec<f64> = (0..m)
                .map(|i| estimate(&return_windows, i).unwrap_or(0.0))
                .collect();
            lambda_update(
                &mut multipliers,
                &tracker,
                &estimates,
                config.chain.eta(active, t),
                config.chain.tau(t),
            );
            for (i, &c) in coefficients.iter().enumerate() {
                trace.push(TraceRow {
                    t,
                    objective: i,
                    lambda: multipliers.lambda[i],
                    coefficient: c,
                    beta: config.chain.beta(i, t),
                    eta_index: active,
                });
            }
            batch.clear();
        }

        let horizon_hit = momdp.episode_horizon.is_some_and(|h| episode_len >= h);
        if rec.terminal || horizon_hit {
            series.push(EpisodeRecord {
                episode,
                returns: undiscounted.clone(),
                length: episode_len,
                global_step: t,
            });
            for i in 0..m {
                let w = &mut return_windows[i];
                w.push_back(discounted[i]);
                if w.len() > config.return_window {
                    w.pop_front();
                }
            }
            let frontier = tracker.num_converged();
            if frontier < m {
                if let Some(est) = estimate(&return_windows, frontier) {
                    tracker.track(frontier, est);
                }
            }
            episode += 1;
            episode_len = 0;
            undiscounted = vec![0.0; m];
            discounted = vec![0.0; m];
            discount_pow = vec![1.0; m];
            s = momdp.sample_initial(rng);
        } else {
            s = rec.next_state;
        }
    }

    Ok(PblrlOutcome {
        params,
        critics,
        multipliers,
        series,
        trace,
        steps: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexoracle::{policy_values, Policy};
    use crate::momdp::{generate_random_momdp, RandomMomdpConfig};
    use crate::seeded_rng;

    fn tabular_params(num_states: usize, num_actions: usize) -> SoftmaxPolicyParams {
        SoftmaxPolicyParams::zeros(FeatureMap::one_hot(num_states), num_actions, 100.0).unwrap()
    }

    fn random_params<R: Rng>(ns: usize, na: usize, rng: &mut R) -> SoftmaxPolicyParams {
        let mut p = tabular_params(ns, na);
        for row in &mut p.theta {
            for v in row.iter_mut() {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }
        }
        p
    }

    #[test]
    fn softmax_basics() {
        let p = tabular_params(1, 3);
        let d = policy_distribution(&p, 0);
        assert!(d.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));

        let mut p = tabular_params(1, 2);
        p.theta[0] = vec![2.0f64.ln(), 0.0];
        let d = policy_distribution(&p, 0);
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-12);

        let mut p = tabular_params(1, 2);
        p.theta_max = 2000.0;
        p.theta[0] = vec![1000.0, 0.0];
        let d = policy_distribution(&p, 0);
        assert!(d[0] > 1.0 - 1e-12 && d[0].is_finite());
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_validation() {
        assert!(FeatureMap::one_hot(4).validate().is_ok());
        // A constant (bias) column is rejected.
        let biased = FeatureMap { rows: vec![vec![1.0, 0.0], vec![1.0, 1.0]] };
        assert!(biased.validate().is_err());
        // Dependent columns are rejected.
        let dependent = FeatureMap {
            rows: vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![0.5, 1.0]],
        };
        assert!(dependent.validate().is_err());
    }

    #[test]
    fn critic_td0_arithmetic() {
        let features = FeatureMap::one_hot(2);
        let mut critics = LinearCritics::zeros(1, 2);
        let rec = TransitionRecord {
            state: 0,
            action: 0,
            next_state: 1,
            rewards: vec![1.0],
            terminal: false,
            step_index: 0,
        };
        let delta = critic_td0_update(&mut critics, &features, &rec, 0, 0.9, 0.25);
        assert!((delta - 1.0).abs() < 1e-12);
        assert!((critics.w[0][0] - 0.25).abs() < 1e-12);
        assert_eq!(critics.w[0][1], 0.0);
    }

    #[test]
    fn critic_td0_terminal_bootstrap() {
        let features = FeatureMap::one_hot(2);
        let mut critics = LinearCritics::zeros(1, 2);
        critics.w[0] = vec![1.5, 9.0];
        let rec = TransitionRecord {
            state: 0,
            action: 0,
            next_state: 1,
            rewards: vec![2.0],
            terminal: true,
            step_index: 0,
        };
        let delta = critic_td0_update(&mut critics, &features, &rec, 0, 0.9, 0.0);
        assert!((delta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn td_error_centres_at_zero_for_exact_values() {
        let mut cfg = RandomMomdpConfig::new(5, 2, 1, 3);
        cfg.reward_noise_sigma = 0.0;
        let momdp = generate_random_momdp(&cfg);
        let dist: Vec<Vec<f64>> = vec![vec![0.5, 0.5]; 5];
        let v = policy_values(&momdp, &Policy::Stochastic(dist.clone()), 0).unwrap();

        let features = FeatureMap::one_hot(5);
        let mut critics = LinearCritics::zeros(1, 5);
        critics.w[0] = v;
        let mut rng = seeded_rng(4);
        let mut s = momdp.sample_initial(&mut rng);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let a = crate::util::sample_categorical(&dist[s], &mut rng);
            let rec = momdp.sample_transition(s, a, &mut rng).unwrap();
            // alpha = 0: measure delta without moving the critic.
            let d = critic_td0_update(&mut critics, &features, &rec, 0, momdp.discounts[0], 0.0);
            sum += d;
            sumsq += d * d;
            s = rec.next_state;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se + 1e-9, "mean={mean}, se={se}");
    }

    /// Scalar A2C surrogate for finite differences.
    fn a2c_scalar(params: &SoftmaxPolicyParams, batch: &[BatchSample], i: usize) -> f64 {
        batch
            .iter()
            .map(|smp| {
                let pi = policy_distribution(params, smp.state);
                pi[smp.action].ln() * smp.deltas[i]
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    /// Scalar PPO surrogate for finite differences.
    fn ppo_scalar(
        params: &SoftmaxPolicyParams,
        old: &SoftmaxPolicyParams,
        batch: &[BatchSample],
        i: usize,
        kappa: f64,
    ) -> f64 {
        batch
            .iter()
            .map(|smp| {
                let pi = policy_distribution(params, smp.state);
                let pi_old = policy_distribution(old, smp.state);
                let ratio = pi[smp.action] / pi_old[smp.action];
                let kl: f64 = pi
                    .iter()
                    .zip(&pi_old)
                    .map(|(&p, &po)| if p > 0.0 { p * (p.ln() - po.ln()) } else { 0.0 })
                    .sum();
                ratio * smp.deltas[i] - kappa * kl
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    fn finite_diff<F: Fn(&SoftmaxPolicyParams) -> f64>(
        params: &SoftmaxPolicyParams,
        f: F,
    ) -> Vec<Vec<f64>> {
        let h = 1e-6;
        let mut grad = vec![vec![0.0; params.num_actions()]; params.theta.len()];
        let mut probe = params.clone();
        for fi in 0..params.theta.len() {
            for a in 0..params.num_actions() {
                probe.theta[fi][a] = params.theta[fi][a] + h;
                let up = f(&probe);
                probe.theta[fi][a] = params.theta[fi][a] - h;
                let down = f(&probe);
                probe.theta[fi][a] = params.theta[fi][a];
                grad[fi][a] = (up - down) / (2.0 * h);
            }
        }
        grad
    }

    fn grad_close(a: &[Vec<f64>], b: &[Vec<f64>], rel: f64) {
        let norm: f64 = b.iter().flatten().map(|&x| x * x).sum::<f64>().sqrt().max(1e-8);
        for (ra, rb) in a.iter().zip(b) {
            for (&x, &y) in ra.iter().zip(rb) {
                assert!((x - y).abs() / norm < rel, "{x} vs {y} (norm {norm})");
            }
        }
    }

    fn random_batch<R: Rng>(ns: usize, na: usize, len: usize, rng: &mut R) -> Vec<BatchSample> {
        (0..len)
            .map(|_| BatchSample {
                state: rng.random_range(0..ns),
                action: rng.random_range(0..na),
                deltas: vec![rng.random::<f64>() * 4.0 - 2.0],
            })
            .collect()
    }

    #[test]
    fn a2c_gradient_closed_form_and_zero() {
        let params = tabular_params(2, 3);
        let zero_batch = vec![BatchSample { state: 0, action: 1, deltas: vec![0.0] }];
        let g = a2c_objective_grad(&params, &zero_batch, 0);
        assert!(g.iter().flatten().all(|&x| x == 0.0));

        let batch = vec![BatchSample { state: 0, action: 1, deltas: vec![1.0] }];
        let g = a2c_objective_grad(&params, &batch, 0);
        assert!((g[0][1] - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert!((g[0][0] + 1.0 / 3.0).abs() < 1e-12);
        assert!((g[0][2] + 1.0 / 3.0).abs() < 1e-12);
        assert!(g[1].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn a2c_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(11);
        for _ in 0..20 {
            let params = random_params(3, 3, &mut rng);
            let batch = random_batch(3, 3, 8, &mut rng);
            let g = a2c_objective_grad(&params, &batch, 0);
            let fd = finite_diff(&params, |p| a2c_scalar(p, &batch, 0));
            grad_close(&g, &fd, 1e-5);
        }
    }

    #[test]
    fn ppo_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(12);
        for _ in 0..20 {
            let params = random_params(3, 3, &mut rng);
            let old = random_params(3, 3, &mut rng);
            let batch = random_batch(3, 3, 8, &mut rng);
            let kappa = 1.5;
            let g = ppo_objective_grad(&params, &old, &batch, 0, kappa).unwrap();
            let fd = finite_diff(&params, |p| ppo_scalar(p, &old, &batch, 0, kappa));
            grad_close(&g, &fd, 1e-5);
        }
    }

    #[test]
    fn ppo_equals_a2c_at_snapshot() {
        let mut rng = seeded_rng(13);
        let params = random_params(4, 3, &mut rng);
        let batch = random_batch(4, 3, 16, &mut rng);
        let ga = a2c_objective_grad(&params, &batch, 0);
        let gp = ppo_objective_grad(&params, &params, &batch, 0, 1.5).unwrap();
        for (ra, rp) in ga.iter().zip(&gp) {
            for (&x, &y) in ra.iter().zip(rp) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ppo_penalty_only_step_decreases_kl() {
        let mut rng = seeded_rng(14);
        let old = random_params(2, 3, &mut rng);
        let mut params = random_params(2, 3, &mut rng);
        let batch = vec![
            BatchSample { state: 0, action: 0, deltas: vec![0.0] },
            BatchSample { state: 1, action: 1, deltas: vec![0.0] },
        ];
        let kl = |p: &SoftmaxPolicyParams| -> f64 {
            -ppo_scalar(p, &old, &batch, 0, 1.0)
        };
        let before = kl(&params);
        let g = ppo_objective_grad(&params, &old, &batch, 0, 1.0).unwrap();
        for (row_t, row_g) in params.theta.iter_mut().zip(&g) {
            for (t, &gg) in row_t.iter_mut().zip(row_g) {
                *t += 0.1 * gg;
            }
        }
        assert!(kl(&params) < before, "KL should shrink under the penalty gradient");
    }

    #[test]
    fn coefficient_arithmetic() {
        // Direct check of c^i = β^i + λ_i Σ_{j>i} β^j with hand-set rates.
        let chain = TimescaleChain {
            num_objectives: 2,
            alpha_base: 1.0,
            beta_base: 1.0,
            eta_base: 1.0,
            tau0: 0.1,
        };
        let t = 1000;
        let b1 = chain.beta(0, t);
        let b2 = chain.beta(1, t);
        let mut lam = Multipliers::zeros(2);
        lam.lambda[0] = 2.0;
        let c = timescale_coefficients(t, &lam, &chain);
        assert!((c[0] - (b1 + 2.0 * b2)).abs() < 1e-15);
        assert!((c[1] - b2).abs() < 1e-15);

        let zero = Multipliers::zeros(2);
        let c0 = timescale_coefficients(t, &zero, &chain);
        assert_eq!(c0, vec![b1, b2]);

        let single = TimescaleChain::new(1);
        let c1 = timescale_coefficients(t, &Multipliers::zeros(1), &single);
        assert_eq!(c1, vec![single.beta(0, t)]);
    }

    #[test]
    fn lambda_update_arithmetic() {
        let mut tracker = ObjectiveTracker::new(2, 1, 1e9);
        // Converge objective 0 immediately with frozen target -3.
        tracker.track(0, -3.0);
        assert!(tracker.is_converged(0));
        assert_eq!(tracker.frozen_target(0), Some(-3.0));

        let mut lam = Multipliers::zeros(2);
        lam.lambda[0] = 0.5;
        lambda_update(&mut lam, &tracker, &[-2.0, 0.0], 0.1, 0.01);
        assert!((lam.lambda[0] - 0.399).abs() < 1e-12);

        // Constraint satisfied: stays at 0.
        let mut lam = Multipliers::zeros(2);
        lambda_update(&mut lam, &tracker, &[-2.9, 0.0], 0.1, 0.05);
        assert_eq!(lam.lambda[0], 0.0);

        // Persistent violation drives lambda up monotonically.
        let mut lam = Multipliers::zeros(2);
        let mut prev = 0.0;
        for _ in 0..10 {
            lambda_update(&mut lam, &tracker, &[-5.0, 0.0], 0.1, 0.01);
            assert!(lam.lambda[0] > prev);
            prev = lam.lambda[0];
        }
    }

    #[test]
    fn theta_update_projection() {
        let mut p = tabular_params(1, 2);
        let zero = vec![vec![0.0, 0.0]];
        let before = p.clone();
        theta_update(&mut p, &zero, 0).unwrap();
        assert_eq!(p, before);

        p.theta[0][0] = 100.0;
        theta_update(&mut p, &[vec![5.0, 0.25]], 0).unwrap();
        assert_eq!(p.theta[0][0], 100.0);
        assert_eq!(p.theta[0][1], 0.25);

        let bad = vec![vec![f64::NAN, 0.0]];
        assert!(theta_update(&mut p, &bad, 7).is_err());
    }

    #[test]
    fn tracker_constant_stream_converges_at_window() {
        let mut tr = ObjectiveTracker::new(1, 10, 0.01);
        for k in 0..9 {
            assert!(!tr.track(0, 5.0), "too early at sample {k}");
        }
        assert!(tr.track(0, 5.0));
        assert_eq!(tr.num_converged(), 1);
    }

    #[test]
    fn tracker_ramp_never_converges() {
        let mut tr = ObjectiveTracker::new(1, 10, 0.01);
        let mut v = 1.0;
        for _ in 0..500 {
            assert!(!tr.track(0, v));
            v *= 1.06; // ~50% swing per 10-sample window
        }
    }

    #[test]
    fn tracker_noisy_plateau_detection_rate() {
        let mut rng = seeded_rng(15);
        let trials = 1000;
        let mut detected = 0;
        for _ in 0..trials {
            let mut tr = ObjectiveTracker::new(1, 100, 0.01);
            let mut fired = false;
            for _ in 0..300 {
                let v = 10.0 + (rng.random::<f64>() * 0.02 - 0.01);
                if tr.track(0, v) {
                    fired = true;
                    break;
                }
            }
            if fired {
                detected += 1;
            }
        }
        assert!(detected >= 990, "detected {detected}/1000");
    }

    #[test]
    fn chain_exponents_and_ratio_monotonicity() {
        for m in 1..=4usize {
            let chain = TimescaleChain::new(m);
            for k in 0..2 * m + 1 {
                assert!(chain.exponent(k) < chain.exponent(k + 1));
            }
            assert!(chain.exponent(0) > 0.5);
            assert!(chain.exponent(2 * m + 1) <= 1.0);
        }
        let chain = TimescaleChain::new(2);
        let ts = [100usize, 10_000, 1_000_000];
        for w in ts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            for i in 0..2 {
                assert!(chain.beta(i, t1) / chain.alpha(t1) < chain.beta(i, t0) / chain.alpha(t0));
                assert!(chain.eta(i + 1, t1) / chain.beta(i, t1) < chain.eta(i + 1, t0) / chain.beta(i, t0));
                assert!(chain.beta(i, t1) / chain.eta(i, t1) < chain.beta(i, t0) / chain.eta(i, t0));
            }
            // tau decays faster than the slowest beta.
            assert!(chain.tau(t1) / chain.beta(1, t1) < chain.tau(t0) / chain.beta(1, t0));
        }
    }

    #[test]
    fn sequential_updates_equal_combined_coefficients() {
        let mut rng = seeded_rng(16);
        let chain = TimescaleChain::new(3);
        let t = 500;
        let lam = Multipliers { lambda: vec![0.7, 1.3, 0.0] };
        let grads: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| {
                (0..2)
                    .map(|_| (0..2).map(|_| rng.random::<f64>() - 0.5).collect())
                    .collect()
            })
            .collect();

        // Sequential: for each i, θ += β^i (∇K_i + Σ_{j<i} λ_j ∇K_j).
        let mut seq = vec![vec![0.0; 2]; 2];
        for i in 0..3 {
            let b = chain.beta(i, t);
            for f in 0..2 {
                for a in 0..2 {
                    let mut dir = grads[i][f][a];
                    for j in 0..i {
                        dir += lam.lambda[j] * grads[j][f][a];
                    }
                    seq[f][a] += b * dir;
                }
            }
        }

        // Combined: θ += Σ_i c^i ∇K_i.
        let c = timescale_coefficients(t, &lam, &chain);
        let mut comb = vec![vec![0.0; 2]; 2];
        for i in 0..3 {
            for f in 0..2 {
                for a in 0..2 {
                    comb[f][a] += c[i] * grads[i][f][a];
                }
            }
        }
        for f in 0..2 {
            for a in 0..2 {
                assert!((seq[f][a] - comb[f][a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kappa_validation() {
        let cfg = PblrlConfig::new(ObjectiveKind::PpoKl { kappa: 0.5 }, 2, 100, 1);
        assert!(matches!(cfg.validate(), Err(PblrlError::InvalidKappa(_))));
        let cfg = PblrlConfig::new(ObjectiveKind::PpoKl { kappa: 1.5 }, 2, 100, 1);
        assert!(cfg.validate().is_ok());
    }

    fn tie_momdp() -> Momdp {
        Momdp {
            num_states: 1,
            num_actions: 2,
            num_objectives: 2,
            transition: vec![vec![vec![1.0], vec![1.0]]],
            reward_mean: vec![
                vec![vec![vec![1.0], vec![1.0]]],
                vec![vec![vec![0.0], vec![1.0]]],
            ],
            reward_noise_sigma: vec![0.0; 2],
            discounts: vec![0.5; 2],
            initial: vec![1.0],
            terminal: vec![false],
            episode_horizon: Some(100),
            r_max: 1.0,
        }
    }

    #[test]
    fn la2c_solves_tie_instance() {
        let momdp = tie_momdp();
        let config = PblrlConfig::new(ObjectiveKind::A2c, 2, 200_000, 3);
        let mut rng = seeded_rng(config.seed);
        let out = run_pblrl(&momdp, &config, &mut rng).unwrap();
        let dist = policy_distribution(&out.params, 0);
        assert!(dist[1] >= 0.9, "p(a2) = {}", dist[1]);
    }

    #[test]
    fn single_objective_reduces_to_plain_a2c() {
        let mut cfg = RandomMomdpConfig::new(4, 2, 1, 21);
        cfg.reward_noise_sigma = 0.1;
        let momdp = generate_random_momdp(&cfg);
        let config = PblrlConfig::new(ObjectiveKind::A2c, 1, 10_000, 5);
        let mut rng = seeded_rng(config.seed);
        let out = run_pblrl(&momdp, &config, &mut rng).unwrap();

        // Reference: plain advantage actor-critic with rate β^1 and the
        // same rng consumption pattern.
        let mut rng = seeded_rng(config.seed);
        let features = FeatureMap::one_hot(4);
        let mut params = tabular_params(4, 2);
        let mut critics = LinearCritics::zeros(1, 4);
        let mut batch: Vec<BatchSample> = Vec::new();
        let mut s = momdp.sample_initial(&mut rng);
        let mut episode_len = 0usize;
        for t in 0..config.max_steps {
            let dist = policy_distribution(&params, s);
            let a = crate::util::sample_categorical(&dist, &mut rng);
            let rec = momdp.sample_transition(s, a, &mut rng).unwrap();
            let alpha = config.chain.alpha(t);
            let d = critic_td0_update(&mut critics, &features, &rec, 0, momdp.discounts[0], alpha);
            batch.push(BatchSample { state: s, action: a, deltas: vec![d] });
            episode_len += 1;
            if batch.len() >= config.batch_size {
                let g = a2c_objective_grad(&params, &batch, 0);
                let b = config.chain.beta(0, t + 1);
                let weighted: Vec<Vec<f64>> = g
                    .iter()
                    .map(|row| row.iter().map(|&x| b * x).collect())
                    .collect();
                theta_update(&mut params, &weighted, t + 1).unwrap();
                batch.clear();
            }
            if rec.terminal || momdp.episode_horizon.is_some_and(|h| episode_len >= h) {
                episode_len = 0;
                s = momdp.sample_initial(&mut rng);
            } else {
                s = rec.next_state;
            }
        }
        assert_eq!(out.params.theta, params.theta);
        assert_eq!(out.critics.w, critics.w);
    }
}
