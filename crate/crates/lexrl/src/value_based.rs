//! Value-based lexicographic RL: the tolerance-filtered bandit and the
//! Lexicographic Q-Learning / SARSA / Expected SARSA / Double Q-Learning
//! update rules.
//!
//! The bandit keeps, per state, the nested action sets
//! Δ^τ_{s,1} ⊇ … ⊇ Δ^τ_{s,m}, where level i keeps the actions within
//! tolerance of the restricted max on objective i. In the limit the bandit
//! picks from Δ^τ_{s,m} with probability one.

use rand::Rng;
use thiserror::Error;

use crate::harness::{EpisodeRecord, MetricsSeries};
use crate::momdp::{Momdp, MomdpError, TransitionRecord};
use crate::util::sample_categorical;

/// Floor applied to the proportional tolerance so it stays positive when the
/// restricted max is 0.
pub const TOLERANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum VblrlError {
    #[error("max_steps must be positive")]
    ZeroMaxSteps,
    #[error(transparent)]
    Momdp(#[from] MomdpError),
}

/// m state×action value tables.
#[derive(Debug, Clone, PartialEq)]
pub struct QTables {
    pub tables: Vec<Vec<Vec<f64>>>,
}

impl QTables {
    pub fn new(num_objectives: usize, num_states: usize, num_actions: usize, init: f64) -> Self {
        Self {
            tables: vec![vec![vec![init; num_actions]; num_states]; num_objectives],
        }
    }

    pub fn num_objectives(&self) -> usize {
        self.tables.len()
    }
}

/// Paired tables for the Double-Q rule; the bandit consumes the average.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleQTables {
    pub a: QTables,
    pub b: QTables,
}

impl DoubleQTables {
    pub fn new(num_objectives: usize, num_states: usize, num_actions: usize, init: f64) -> Self {
        Self {
            a: QTables::new(num_objectives, num_states, num_actions, init),
            b: QTables::new(num_objectives, num_states, num_actions, init),
        }
    }

    /// Effective table Q_i = 0.5 (Q^A_i + Q^B_i).
    pub fn effective(&self) -> QTables {
        let mut eff = self.a.clone();
        for (ta, tb) in eff.tables.iter_mut().zip(&self.b.tables) {
            for (ra, rb) in ta.iter_mut().zip(tb) {
                for (va, vb) in ra.iter_mut().zip(rb) {
                    *va = 0.5 * (*va + *vb);
                }
            }
        }
        eff
    }
}

/// Per-level action-selection tolerance τ(s, i, t, Q).
#[derive(Debug, Clone, PartialEq)]
pub enum ToleranceSpec {
    Constant(f64),
    /// σ·|restricted max| with a small positive floor.
    Proportional { sigma_frac: f64 },
    /// τ0·(1+t)^{−p}. The limit is positive only for p = 0, so decaying
    /// tolerances fall outside the fixed-tolerance convergence regime.
    Decaying { tau0: f64, power: f64 },
}

impl ToleranceSpec {
    /// Evaluates the tolerance for one level, given the restricted max of
    /// the level's Q-values and the step index.
    pub fn evaluate(&self, restricted_max: f64, t: usize) -> f64 {
        match *self {
            ToleranceSpec::Constant(tau0) => tau0,
            ToleranceSpec::Proportional { sigma_frac } => {
                (sigma_frac * restricted_max.abs()).max(TOLERANCE_FLOOR)
            }
            ToleranceSpec::Decaying { tau0, power } => tau0 * (1.0 + t as f64).powf(-power),
        }
    }
}

/// Per-(s,a) step-size schedule α_t.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSizeSchedule {
    /// Constant α. Violates the square-summability condition; supported
    /// because the reference experiments use it.
    Constant(f64),
    /// a0/(1+n)^p with p ∈ (0.5, 1], n the (s,a) visit count.
    VisitPower { a0: f64, power: f64 },
}

impl StepSizeSchedule {
    pub fn value(&self, visits: u64) -> f64 {
        match *self {
            StepSizeSchedule::Constant(c) => c,
            StepSizeSchedule::VisitPower { a0, power } => {
                a0 / (1.0 + visits as f64).powf(power)
            }
        }
    }
}

/// Per-state exploration schedule ε_{s,t}.
#[derive(Debug, Clone, PartialEq)]
pub enum ExplorationSchedule {
    Constant(f64),
    /// ε0/(1+n_s)^p with p ∈ (0,1], n_s the state visit count; decays to 0
    /// but is not summable, as the bandit requires.
    VisitPower { eps0: f64, power: f64 },
}

impl ExplorationSchedule {
    pub fn value(&self, state_visits: u64) -> f64 {
        match *self {
            ExplorationSchedule::Constant(e) => e,
            ExplorationSchedule::VisitPower { eps0, power } => {
                eps0 / (1.0 + state_visits as f64).powf(power)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    LexQ,
    Sarsa,
    ExpectedSarsa,
    LexDoubleQ,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VblrlConfig {
    pub update_rule: UpdateRule,
    /// τ_B, used for action selection.
    pub bandit_tolerance: ToleranceSpec,
    /// τ_Q, used in the Lex-Q and Double-Q bootstrap restriction. Defaults
    /// to the bandit tolerance.
    pub update_tolerance: ToleranceSpec,
    pub step_size: StepSizeSchedule,
    pub exploration: ExplorationSchedule,
    pub max_steps: usize,
    pub q_init: f64,
    /// Stop once the per-episode Q sup-norm change stayed below
    /// `q_delta_threshold` for this many consecutive episodes; 0 disables.
    pub convergence_window: usize,
    pub q_delta_threshold: f64,
    pub seed: u64,
}

impl VblrlConfig {
    pub fn new(update_rule: UpdateRule, max_steps: usize, seed: u64) -> Self {
        Self {
            update_rule,
            bandit_tolerance: ToleranceSpec::Constant(0.01),
            update_tolerance: ToleranceSpec::Constant(0.01),
            step_size: StepSizeSchedule::VisitPower { a0: 0.5, power: 0.6 },
            exploration: ExplorationSchedule::VisitPower { eps0: 1.0, power: 0.5 },
            max_steps,
            q_init: 0.0,
            convergence_window: 0,
            q_delta_threshold: 1e-4,
            seed,
        }
    }
}

/// Nested tolerance-filtered action sets Δ^τ_{s,1..m} for explicit per-level
/// tolerances. `sets[i]` keeps the actions surviving filtering by objectives
/// 0..=i.
pub fn lex_filter(q: &QTables, s: usize, tolerances: &[f64]) -> Vec<Vec<usize>> {
    let num_actions = q.tables[0][s].len();
    let mut delta: Vec<usize> = (0..num_actions).collect();
    let mut levels = Vec::with_capacity(tolerances.len());
    for (i, &tol) in tolerances.iter().enumerate() {
        let row = &q.tables[i][s];
        let mx = delta.iter().map(|&a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        delta.retain(|&a| row[a] >= mx - tol);
        levels.push(delta.clone());
    }
    levels
}

/// Like [`lex_filter`] but with tolerances produced per level from a
/// [`ToleranceSpec`] (the proportional kind depends on the restricted max of
/// the level being filtered). Returns the levels and the tolerances used.
pub fn lex_filter_spec(
    q: &QTables,
    s: usize,
    spec: &ToleranceSpec,
    t: usize,
) -> (Vec<Vec<usize>>, Vec<f64>) {
    let num_actions = q.tables[0][s].len();
    let m = q.num_objectives();
    let mut delta: Vec<usize> = (0..num_actions).collect();
    let mut levels = Vec::with_capacity(m);
    let mut tols = Vec::with_capacity(m);
    for i in 0..m {
        let row = &q.tables[i][s];
        let mx = delta.iter().map(|&a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        let tol = spec.evaluate(mx, t);
        delta.retain(|&a| row[a] >= mx - tol);
        levels.push(delta.clone());
        tols.push(tol);
    }
    (levels, tols)
}

/// The lexicographic ε-greedy action distribution:
/// P(a) = ε/|A| + (1−ε)·1[a ∈ Δ_m]/|Δ_m|. This is also the expectation
/// target for Expected SARSA.
pub fn bandit_action_distribution(
    q: &QTables,
    s: usize,
    epsilon: f64,
    tolerances: &[f64],
) -> Vec<f64> {
    let num_actions = q.tables[0][s].len();
    let levels = lex_filter(q, s, tolerances);
    let final_set = levels.last().expect("at least one objective");
    let mut dist = vec![epsilon / num_actions as f64; num_actions];
    for &a in final_set {
        dist[a] += (1.0 - epsilon) / final_set.len() as f64;
    }
    dist
}

/// Samples an action from the lexicographic ε-greedy distribution, with ε
/// and the per-level tolerances taken from the schedules.
pub fn lex_epsilon_greedy<R: Rng>(
    q: &QTables,
    s: usize,
    state_visits: u64,
    exploration: &ExplorationSchedule,
    tolerance_spec: &ToleranceSpec,
    t: usize,
    rng: &mut R,
) -> usize {
    let epsilon = exploration.value(state_visits);
    let (_, tols) = lex_filter_spec(q, s, tolerance_spec, t);
    let dist = bandit_action_distribution(q, s, epsilon, &tols);
    sample_categorical(&dist, rng)
}

/// The restricted bootstrap set for objective `i` at the successor state:
/// actions surviving filtering by the higher-priority objectives 0..i−1,
/// or all actions for i = 0.
fn restricted_set(q: &QTables, s: usize, i: usize, spec: &ToleranceSpec, t: usize) -> Vec<usize> {
    if i == 0 {
        (0..q.tables[0][s].len()).collect()
    } else {
        let (levels, _) = lex_filter_spec(q, s, spec, t);
        levels[i - 1].clone()
    }
}

/// Lexicographic Q-Learning:
/// Q_i(s,a) ← (1−α)Q_i(s,a) + α(r_i + γ_i·max_{a'∈Δ^τ_{s',i}} Q_i(s',a')).
pub fn lex_q_update(
    q: &mut QTables,
    rec: &TransitionRecord,
    i: usize,
    gamma: f64,
    alpha: f64,
    update_tolerance: &ToleranceSpec,
    t: usize,
) {
    let boot = if rec.terminal {
        0.0
    } else {
        let set = restricted_set(q, rec.next_state, i, update_tolerance, t);
        set.iter()
            .map(|&a| q.tables[i][rec.next_state][a])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let target = rec.rewards[i] + gamma * boot;
    let cell = &mut q.tables[i][rec.state][rec.action];
    *cell = (1.0 - alpha) * *cell + alpha * target;
}

/// SARSA: Q_i(s,a) ← (1−α)Q_i(s,a) + α(r_i + γ_i Q_i(s',a')), with a' the
/// action actually selected at s'.
pub fn sarsa_update(
    q: &mut QTables,
    rec: &TransitionRecord,
    next_action: usize,
    i: usize,
    gamma: f64,
    alpha: f64,
) {
    let boot = if rec.terminal {
        0.0
    } else {
        q.tables[i][rec.next_state][next_action]
    };
    let target = rec.rewards[i] + gamma * boot;
    let cell = &mut q.tables[i][rec.state][rec.action];
    *cell = (1.0 - alpha) * *cell + alpha * target;
}

/// Expected SARSA: the bootstrap is the analytic expectation of Q_i(s',·)
/// under the bandit's ε-greedy distribution at s'.
pub fn expected_sarsa_update(
    q: &mut QTables,
    rec: &TransitionRecord,
    i: usize,
    gamma: f64,
    alpha: f64,
    epsilon: f64,
    bandit_tolerance: &ToleranceSpec,
    t: usize,
) {
    let boot = if rec.terminal {
        0.0
    } else {
        let (_, tols) = lex_filter_spec(q, rec.next_state, bandit_tolerance, t);
        let dist = bandit_action_distribution(q, rec.next_state, epsilon, &tols);
        dist.iter()
            .zip(&q.tables[i][rec.next_state])
            .map(|(&p, &v)| p * v)
            .sum()
    };
    let target = rec.rewards[i] + gamma * boot;
    let cell = &mut q.tables[i][rec.state][rec.action];
    *cell = (1.0 - alpha) * *cell + alpha * target;
}

/// Lexicographic Double Q-Learning. With probability 0.5 updates Q^A_i
/// toward r + γ Q^B_i(s', argmax_{a'∈Δ^τ_{s',i}} Q^A_i(s',a')), else the
/// A/B-swapped update. Δ is computed from the effective averaged tables.
/// Returns which branch was taken (true = A updated).
pub fn lex_double_q_update<R: Rng>(
    dq: &mut DoubleQTables,
    rec: &TransitionRecord,
    i: usize,
    gamma: f64,
    alpha: f64,
    update_tolerance: &ToleranceSpec,
    t: usize,
    rng: &mut R,
) -> bool {
    let update_a = rng.random_bool(0.5);
    let boot = if rec.terminal {
        0.0
    } else {
        let eff = dq.effective();
        let set = restricted_set(&eff, rec.next_state, i, update_tolerance, t);
        let (selector, evaluator) = if update_a {
            (&dq.a, &dq.b)
        } else {
            (&dq.b, &dq.a)
        };
        let best = set
            .iter()
            .copied()
            .max_by(|&x, &y| {
                selector.tables[i][rec.next_state][x]
                    .total_cmp(&selector.tables[i][rec.next_state][y])
                    .then(y.cmp(&x)) // lowest index wins ties
            })
            .expect("restricted set is nonempty");
        evaluator.tables[i][rec.next_state][best]
    };
    let target = rec.rewards[i] + gamma * boot;
    let table = if update_a { &mut dq.a } else { &mut dq.b };
    let cell = &mut table.tables[i][rec.state][rec.action];
    *cell = (1.0 - alpha) * *cell + alpha * target;
    update_a
}

/// Result of a value-based training run.
#[derive(Debug, Clone)]
pub struct VblrlOutcome {
    /// Final effective Q tables (averaged pair for Double-Q).
    pub q: QTables,
    /// Δ^τ_{s,m} per state, evaluated with the bandit tolerance at the
    /// final step.
    pub greedy_sets: Vec<Vec<usize>>,
    pub series: MetricsSeries,
    pub steps: usize,
}

/// Runs the value-based lexicographic RL loop: bandit action, environment
/// step, per-objective Q update, reset on terminal or horizon.
pub fn run_vblrl<R: Rng>(
    momdp: &Momdp,
    config: &VblrlConfig,
    rng: &mut R,
) -> Result<VblrlOutcome, VblrlError> {
    if config.max_steps == 0 {
        return Err(VblrlError::ZeroMaxSteps);
    }
    let n = momdp.num_states;
    let na = momdp.num_actions;
    let m = momdp.num_objectives;

    let mut single = QTables::new(m, n, na, config.q_init);
    let mut double = DoubleQTables::new(m, n, na, config.q_init);
    let is_double = config.update_rule == UpdateRule::LexDoubleQ;

    let mut sa_visits = vec![vec![0u64; na]; n];
    let mut state_visits = vec![0u64; n];
    let mut series = MetricsSeries::default();
    let mut q_deltas: Vec<f64> = Vec::new();

    let mut s = momdp.sample_initial(rng);
    let mut episode = 0usize;
    let mut episode_len = 0usize;
    let mut episode_return = vec![0.0; m];
    let mut episode_q_delta = 0.0f64;
    let mut pending_action: Option<usize> = None;
    let mut below_threshold_streak = 0usize;
    let mut t = 0usize;

    let select = |q: &QTables, s: usize, visits: u64, t: usize, rng: &mut R| -> usize {
        lex_epsilon_greedy(
            q,
            s,
            visits,
            &config.exploration,
            &config.bandit_tolerance,
            t,
            rng,
        )
    };

    while t < config.max_steps {
        let eff = if is_double { double.effective() } else { single.clone() };
        let a = match pending_action.take() {
            Some(a) => a,
            None => select(&eff, s, state_visits[s], t, rng),
        };
        state_visits[s] += 1;
        let mut rec = momdp.sample_transition(s, a, rng).map_err(VblrlError::from)?;
        rec.step_index = t;
        let alpha = config.step_size.value(sa_visits[s][a]);
        sa_visits[s][a] += 1;

        // SARSA commits to the successor action before any update.
        let next_action = if config.update_rule == UpdateRule::Sarsa && !rec.terminal {
            let a_next = select(&eff, rec.next_state, state_visits[rec.next_state], t + 1, rng);
            pending_action = Some(a_next);
            a_next
        } else {
            0
        };

        let before_snapshot = |q: &QTables, i: usize| q.tables[i][s][a];
        for i in 0..m {
            let gamma = momdp.discounts[i];
            let old = if is_double {
                0.5 * (double.a.tables[i][s][a] + double.b.tables[i][s][a])
            } else {
                before_snapshot(&single, i)
            };
            match config.update_rule {
                UpdateRule::LexQ => {
                    lex_q_update(&mut single, &rec, i, gamma, alpha, &config.update_tolerance, t)
                }
                UpdateRule::Sarsa => sarsa_update(&mut single, &rec, next_action, i, gamma, alpha),
                UpdateRule::ExpectedSarsa => {
                    let eps_next = config.exploration.value(state_visits[rec.next_state]);
                    expected_sarsa_update(
                        &mut single,
                        &rec,
                        i,
                        gamma,
                        alpha,
                        eps_next,
                        &config.bandit_tolerance,
                        t,
                    )
                }
                UpdateRule::LexDoubleQ => {
                    lex_double_q_update(
                        &mut double,
                        &rec,
                        i,
                        gamma,
                        alpha,
                        &config.update_tolerance,
                        t,
                        rng,
                    );
                }
            }
            let new = if is_double {
                0.5 * (double.a.tables[i][s][a] + double.b.tables[i][s][a])
            } else {
                single.tables[i][s][a]
            };
            episode_q_delta = episode_q_delta.max((new - old).abs());
        }

        for (acc, &r) in episode_return.iter_mut().zip(&rec.rewards) {
            *acc += r;
        }
        episode_len += 1;
        t += 1;

        let horizon_hit = momdp
            .episode_horizon
            .is_some_and(|h| episode_len >= h);
        if rec.terminal || horizon_hit {
            series.push(EpisodeRecord {
                episode,
                returns: episode_return.clone(),
                length: episode_len,
                global_step: t,
            });
            q_deltas.push(episode_q_delta);
            if config.convergence_window > 0 {
                if episode_q_delta < config.q_delta_threshold {
                    below_threshold_streak += 1;
                    if below_threshold_streak >= config.convergence_window {
                        break;
                    }
                } else {
                    below_threshold_streak = 0;
                }
            }
            episode += 1;
            episode_len = 0;
            episode_return = vec![0.0; m];
            episode_q_delta = 0.0;
            pending_action = None;
            s = momdp.sample_initial(rng);
        } else {
            s = rec.next_state;
        }
    }

    let q = if is_double { double.effective() } else { single };
    let greedy_sets: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            let (levels, _) = lex_filter_spec(&q, s, &config.bandit_tolerance, t);
            levels.last().unwrap().clone()
        })
        .collect();
    series.q_sup_deltas = Some(q_deltas);
    Ok(VblrlOutcome { q, greedy_sets, series, steps: t })
}
