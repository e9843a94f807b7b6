//! Finite multi-objective MDPs: data model, sampling, a seeded random
//! generator, and the GridNav safety environment.
//!
//! A MOMDP is a tuple ⟨S, A, T, I, R, γ⟩ with m reward channels and m
//! discount factors. A state is terminal if it self-loops with probability 1
//! and pays zero mean reward on every objective.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::util::{g17, sample_categorical};

/// Transition-row sums must match 1 to within this.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MomdpError {
    #[error("index out of range: state {state}, action {action} (|S|={num_states}, |A|={num_actions})")]
    IndexOutOfRange {
        state: usize,
        action: usize,
        num_states: usize,
        num_actions: usize,
    },
    #[error("no safe GridNav layout found after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("momdp parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A single invariant violation reported by [`Momdp::validate`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("transition row ({state},{action}) sums to {sum}, expected 1")]
    RowSum { state: usize, action: usize, sum: f64 },
    #[error("negative transition probability at ({state},{action},{next_state})")]
    NegativeProbability { state: usize, action: usize, next_state: usize },
    #[error("terminal state {state} is not absorbing (terminal means T(s,a)=s with probability 1)")]
    TerminalNotAbsorbing { state: usize },
    #[error("terminal state {state} has nonzero mean reward on objective {objective} (terminal means R(s,a,s)=0)")]
    TerminalReward { state: usize, objective: usize },
    #[error("discount {value} for objective {objective} outside [0,1)")]
    DiscountOutOfRange { objective: usize, value: f64 },
    #[error("reward mean at ({objective},{state},{action},{next_state}) is {value}, outside ±{r_max} or non-finite")]
    RewardOutOfBounds {
        objective: usize,
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
        r_max: f64,
    },
    #[error("initial distribution sums to {sum}, expected 1")]
    InitialNotDistribution { sum: f64 },
    #[error("negative entry in initial distribution at state {state}")]
    NegativeInitial { state: usize },
    #[error("negative reward noise sigma for objective {objective}")]
    NegativeSigma { objective: usize },
    #[error("inconsistent dimensions: {0}")]
    Dimensions(String),
}

/// One environment step, as consumed by every learner.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    /// Sampled rewards, observation noise included. Length m.
    pub rewards: Vec<f64>,
    pub terminal: bool,
    pub step_index: usize,
}

/// A finite multi-objective MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Momdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_objectives: usize,
    /// `transition[s][a]` is a probability vector over next states.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward_mean[i][s][a][s']` is the mean reward on objective i.
    pub reward_mean: Vec<Vec<Vec<Vec<f64>>>>,
    /// Gaussian observation-noise std per objective, applied at sampling time.
    pub reward_noise_sigma: Vec<f64>,
    /// Per-objective discount factors, all strictly below 1.
    pub discounts: Vec<f64>,
    /// Initial state distribution I.
    pub initial: Vec<f64>,
    pub terminal: Vec<bool>,
    /// Forced reset after this many steps when set.
    pub episode_horizon: Option<usize>,
    /// Declared bound on |reward_mean| entries.
    pub r_max: f64,
}

impl Momdp {
    /// Samples s' ~ T(s,a) and the noisy reward vector.
    ///
    /// Terminal states absorb: the same state and exact zero rewards are
    /// returned without consuming randomness.
    pub fn sample_transition<R: Rng>(
        &self,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> Result<TransitionRecord, MomdpError> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(MomdpError::IndexOutOfRange {
                state: s,
                action: a,
                num_states: self.num_states,
                num_actions: self.num_actions,
            });
        }
        if self.terminal[s] {
            return Ok(TransitionRecord {
                state: s,
                action: a,
                next_state: s,
                rewards: vec![0.0; self.num_objectives],
                terminal: true,
                step_index: 0,
            });
        }
        let next = sample_categorical(&self.transition[s][a], rng);
        let rewards = (0..self.num_objectives)
            .map(|i| {
                let mean = self.reward_mean[i][s][a][next];
                let sigma = self.reward_noise_sigma[i];
                if sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + sigma * z
                } else {
                    mean
                }
            })
            .collect();
        Ok(TransitionRecord {
            state: s,
            action: a,
            next_state: next,
            rewards,
            terminal: self.terminal[next],
            step_index: 0,
        })
    }

    /// Samples a start state from I.
    pub fn sample_initial<R: Rng>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial, rng)
    }

    /// Checks every structural invariant; an empty list means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.num_states;
        let m = self.num_objectives;
        if self.transition.len() != n
            || self.reward_mean.len() != m
            || self.discounts.len() != m
            || self.reward_noise_sigma.len() != m
            || self.initial.len() != n
            || self.terminal.len() != n
        {
            out.push(Violation::Dimensions(format!(
                "expected |S|={n}, m={m}; got transition={}, reward_mean={}, discounts={}, sigma={}, initial={}, terminal={}",
                self.transition.len(),
                self.reward_mean.len(),
                self.discounts.len(),
                self.reward_noise_sigma.len(),
                self.initial.len(),
                self.terminal.len()
            )));
            return out;
        }
        for (s, rows) in self.transition.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                let mut sum = 0.0;
                for (sp, &p) in row.iter().enumerate() {
                    if p < 0.0 {
                        out.push(Violation::NegativeProbability {
                            state: s,
                            action: a,
                            next_state: sp,
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    out.push(Violation::RowSum { state: s, action: a, sum });
                }
            }
        }
        for s in 0..n {
            if self.terminal[s] {
                for a in 0..self.num_actions {
                    if (self.transition[s][a][s] - 1.0).abs() > ROW_SUM_TOL {
                        out.push(Violation::TerminalNotAbsorbing { state: s });
                        break;
                    }
                }
                for (i, table) in self.reward_mean.iter().enumerate() {
                    if table[s].iter().any(|row| row[s] != 0.0) {
                        out.push(Violation::TerminalReward { state: s, objective: i });
                    }
                }
            }
        }
        for (i, &g) in self.discounts.iter().enumerate() {
            if !(0.0..1.0).contains(&g) {
                out.push(Violation::DiscountOutOfRange { objective: i, value: g });
            }
        }
        for (i, &sig) in self.reward_noise_sigma.iter().enumerate() {
            if !(sig >= 0.0) {
                out.push(Violation::NegativeSigma { objective: i });
            }
        }
        for (i, table) in self.reward_mean.iter().enumerate() {
            for (s, rows) in table.iter().enumerate() {
                for (a, row) in rows.iter().enumerate() {
                    for (sp, &v) in row.iter().enumerate() {
                        if !v.is_finite() || v.abs() > self.r_max {
                            out.push(Violation::RewardOutOfBounds {
                                objective: i,
                                state: s,
                                action: a,
                                next_state: sp,
                                value: v,
                                r_max: self.r_max,
                            });
                        }
                    }
                }
            }
        }
        let isum: f64 = self.initial.iter().sum();
        if (isum - 1.0).abs() > ROW_SUM_TOL {
            out.push(Violation::InitialNotDistribution { sum: isum });
        }
        for (s, &p) in self.initial.iter().enumerate() {
            if p < 0.0 {
                out.push(Violation::NegativeInitial { state: s });
            }
        }
        out
    }

    /// Serialises to the `momdp v1` text format (17-significant-digit floats;
    /// round-trip is value-exact).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "momdp v1 {} {} {}",
            self.num_states, self.num_actions, self.num_objectives
        );
        for (s, rows) in self.transition.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                let _ = write!(out, "T {s} {a}");
                for &p in row {
                    let _ = write!(out, " {}", g17(p));
                }
                out.push('\n');
            }
        }
        for (i, table) in self.reward_mean.iter().enumerate() {
            for (s, rows) in table.iter().enumerate() {
                for (a, row) in rows.iter().enumerate() {
                    for (sp, &v) in row.iter().enumerate() {
                        if v != 0.0 {
                            let _ = writeln!(out, "R {i} {s} {a} {sp} {}", g17(v));
                        }
                    }
                }
            }
        }
        for (i, &gm) in self.discounts.iter().enumerate() {
            let _ = writeln!(out, "G {i} {}", g17(gm));
        }
        let _ = write!(out, "I");
        for &p in &self.initial {
            let _ = write!(out, " {}", g17(p));
        }
        out.push('\n');
        if self.terminal.iter().any(|&t| t) {
            let _ = write!(out, "TERM");
            for (s, &t) in self.terminal.iter().enumerate() {
                if t {
                    let _ = write!(out, " {s}");
                }
            }
            out.push('\n');
        }
        if let Some(h) = self.episode_horizon {
            let _ = writeln!(out, "H {h}");
        }
        let _ = write!(out, "SIGMA");
        for &s in &self.reward_noise_sigma {
            let _ = write!(out, " {}", g17(s));
        }
        out.push('\n');
        let _ = writeln!(out, "RMAX {}", g17(self.r_max));
        out
    }

    /// Parses the `momdp v1` text format.
    pub fn from_text(text: &str) -> Result<Self, MomdpError> {
        let err = |line: usize, message: &str| MomdpError::Parse {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty document"))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 5 || head[0] != "momdp" || head[1] != "v1" {
            return Err(err(1, "expected header `momdp v1 |S| |A| m`"));
        }
        let ns: usize = head[2].parse().map_err(|_| err(1, "bad |S|"))?;
        let na: usize = head[3].parse().map_err(|_| err(1, "bad |A|"))?;
        let m: usize = head[4].parse().map_err(|_| err(1, "bad m"))?;
        let mut momdp = Momdp {
            num_states: ns,
            num_actions: na,
            num_objectives: m,
            transition: vec![vec![vec![0.0; ns]; na]; ns],
            reward_mean: vec![vec![vec![vec![0.0; ns]; na]; ns]; m],
            reward_noise_sigma: vec![0.0; m],
            discounts: vec![0.0; m],
            initial: vec![0.0; ns],
            terminal: vec![false; ns],
            episode_horizon: None,
            r_max: 0.0,
        };
        for (idx, raw) in lines {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let parse_usize = |tok: &str| -> Result<usize, MomdpError> {
                tok.parse().map_err(|_| err(lineno, "bad integer"))
            };
            let parse_f64 = |tok: &str| -> Result<f64, MomdpError> {
                tok.parse().map_err(|_| err(lineno, "bad float"))
            };
            match tokens[0] {
                "T" => {
                    if tokens.len() != 3 + ns {
                        return Err(err(lineno, "T line has wrong arity"));
                    }
                    let s = parse_usize(tokens[1])?;
                    let a = parse_usize(tokens[2])?;
                    if s >= ns || a >= na {
                        return Err(err(lineno, "T indices out of range"));
                    }
                    for (sp, tok) in tokens[3..].iter().enumerate() {
                        momdp.transition[s][a][sp] = parse_f64(tok)?;
                    }
                }
                "R" => {
                    if tokens.len() != 6 {
                        return Err(err(lineno, "R line has wrong arity"));
                    }
                    let i = parse_usize(tokens[1])?;
                    let s = parse_usize(tokens[2])?;
                    let a = parse_usize(tokens[3])?;
                    let sp = parse_usize(tokens[4])?;
                    if i >= m || s >= ns || a >= na || sp >= ns {
                        return Err(err(lineno, "R indices out of range"));
                    }
                    momdp.reward_mean[i][s][a][sp] = parse_f64(tokens[5])?;
                }
                "G" => {
                    if tokens.len() != 3 {
                        return Err(err(lineno, "G line has wrong arity"));
                    }
                    let i = parse_usize(tokens[1])?;
                    if i >= m {
                        return Err(err(lineno, "G objective out of range"));
                    }
                    momdp.discounts[i] = parse_f64(tokens[2])?;
                }
                "I" => {
                    if tokens.len() != 1 + ns {
                        return Err(err(lineno, "I line has wrong arity"));
                    }
                    for (s, tok) in tokens[1..].iter().enumerate() {
                        momdp.initial[s] = parse_f64(tok)?;
                    }
                }
                "TERM" => {
                    for tok in &tokens[1..] {
                        let s = parse_usize(tok)?;
                        if s >= ns {
                            return Err(err(lineno, "TERM state out of range"));
                        }
                        momdp.terminal[s] = true;
                    }
                }
                "H" => {
                    if tokens.len() != 2 {
                        return Err(err(lineno, "H line has wrong arity"));
                    }
                    momdp.episode_horizon = Some(parse_usize(tokens[1])?);
                }
                "SIGMA" => {
                    if tokens.len() != 1 + m {
                        return Err(err(lineno, "SIGMA line has wrong arity"));
                    }
                    for (i, tok) in tokens[1..].iter().enumerate() {
                        momdp.reward_noise_sigma[i] = parse_f64(tok)?;
                    }
                }
                "RMAX" => {
                    if tokens.len() != 2 {
                        return Err(err(lineno, "RMAX line has wrong arity"));
                    }
                    momdp.r_max = parse_f64(tokens[1])?;
                }
                other => {
                    return Err(MomdpError::Parse {
                        line: lineno,
                        message: format!("unknown record `{other}`"),
                    });
                }
            }
        }
        Ok(momdp)
    }
}

/// Configuration for the seeded random-MOMDP generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMomdpConfig {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_objectives: usize,
    pub seed: u64,
    /// Fraction of successor states supported per (s,a) row, in (0,1].
    pub density: f64,
    pub reward_noise_sigma: f64,
    pub discount: f64,
    pub horizon: usize,
}

impl RandomMomdpConfig {
    pub fn new(num_states: usize, num_actions: usize, num_objectives: usize, seed: u64) -> Self {
        Self {
            num_states,
            num_actions,
            num_objectives,
            seed,
            density: 0.25,
            reward_noise_sigma: 0.2,
            discount: 0.9,
            horizon: 100,
        }
    }
}

/// Generates a random MOMDP, deterministically in the seed.
///
/// Each (s,a) row is supported on ⌈density·|S|⌉ distinct successors with
/// Dirichlet(1) probabilities; reward means are uniform in [0,1) for every
/// (objective, s, a, s'); there are no terminal states, so episodes are the
/// fixed horizon followed by a reset from I.
pub fn generate_random_momdp(config: &RandomMomdpConfig) -> Momdp {
    let ns = config.num_states;
    let na = config.num_actions;
    let m = config.num_objectives;
    let support = ((config.density * ns as f64).ceil() as usize).clamp(1, ns);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut transition = vec![vec![vec![0.0; ns]; na]; ns];
    for row_states in transition.iter_mut() {
        for row in row_states.iter_mut() {
            let succ = rand::seq::index::sample(&mut rng, ns, support);
            // Dirichlet(1) over the support: normalised Exp(1) draws.
            let mut weights: Vec<f64> = (0..support)
                .map(|_| {
                    let u: f64 = rng.random();
                    -(1.0 - u).ln()
                })
                .collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            // Rebalance rounding so the row sums to exactly 1.
            let partial: f64 = weights[..support - 1].iter().sum();
            weights[support - 1] = 1.0 - partial;
            for (k, sp) in succ.into_iter().enumerate() {
                row[sp] = weights[k];
            }
        }
    }

    let mut reward_mean = vec![vec![vec![vec![0.0; ns]; na]; ns]; m];
    for table in reward_mean.iter_mut() {
        for rows in table.iter_mut() {
            for row in rows.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.random::<f64>();
                }
            }
        }
    }

    Momdp {
        num_states: ns,
        num_actions: na,
        num_objectives: m,
        transition,
        reward_mean,
        reward_noise_sigma: vec![config.reward_noise_sigma; m],
        discounts: vec![config.discount; m],
        initial: vec![1.0 / ns as f64; ns],
        terminal: vec![false; ns],
        episode_horizon: Some(config.horizon),
        r_max: 1.0,
    }
}

/// Configuration for the GridNav safety environment.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNavConfig {
    pub grid_side: usize,
    pub unsafe_density: f64,
    pub slip_prob: f64,
    pub goal_reward: f64,
    pub unsafe_cost: f64,
    pub step_limit: usize,
    pub seed: u64,
}

impl Default for GridNavConfig {
    fn default() -> Self {
        Self {
            grid_side: 12,
            unsafe_density: 0.25,
            slip_prob: 0.1,
            goal_reward: 100.0,
            unsafe_cost: 1.0,
            step_limit: 200,
            seed: 0,
        }
    }
}

/// GridNav discount on both objectives. The environment is episodic via the
/// goal terminal, so any discount below 1 works; 0.99 keeps long paths
/// visible to the learners.
pub const GRIDNAV_DISCOUNT: f64 = 0.99;

const DIRS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Builds the two-objective GridNav MOMDP.
///
/// States are grid cells; the goal cell (opposite corner from the start) is
/// terminal. Objective 0 is the negated safety cost (entering an unsafe cell
/// pays −unsafe_cost), objective 1 pays goal_reward on entering the goal, so
/// lexicographic maximisation means: minimise cost and, subject to that,
/// reach the goal. The intended move applies with probability 1−slip_prob; a
/// uniformly random direction applies otherwise. Off-grid moves stay put.
///
/// Layouts with no cost-free start→goal path are resampled, up to 1000 times.
pub fn build_gridnav(config: &GridNavConfig) -> Result<Momdp, MomdpError> {
    let side = config.grid_side;
    let ns = side * side;
    let start = 0;
    let goal = ns - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    const MAX_ATTEMPTS: usize = 1000;
    let mut unsafe_cells = None;
    for _ in 0..MAX_ATTEMPTS {
        let cells: Vec<bool> = (0..ns)
            .map(|s| s != start && s != goal && rng.random::<f64>() < config.unsafe_density)
            .collect();
        if safe_path_exists(&cells, side, start, goal) {
            unsafe_cells = Some(cells);
            break;
        }
    }
    let unsafe_cells =
        unsafe_cells.ok_or(MomdpError::GenerationFailed { attempts: MAX_ATTEMPTS })?;

    let step = |s: usize, dir: usize| -> usize {
        let (r, c) = ((s / side) as isize, (s % side) as isize);
        let (dr, dc) = DIRS[dir];
        let (nr, nc) = (r + dr, c + dc);
        if nr < 0 || nr >= side as isize || nc < 0 || nc >= side as isize {
            s
        } else {
            (nr * side as isize + nc) as usize
        }
    };

    let mut transition = vec![vec![vec![0.0; ns]; 4]; ns];
    let mut reward_mean = vec![vec![vec![vec![0.0; ns]; 4]; ns]; 2];
    for s in 0..ns {
        for a in 0..4 {
            if s == goal {
                transition[s][a][s] = 1.0;
                continue;
            }
            for dir in 0..4 {
                let p = config.slip_prob / 4.0
                    + if dir == a { 1.0 - config.slip_prob } else { 0.0 };
                transition[s][a][step(s, dir)] += p;
            }
            for sp in 0..ns {
                if transition[s][a][sp] > 0.0 {
                    if unsafe_cells[sp] {
                        reward_mean[0][s][a][sp] = -config.unsafe_cost;
                    }
                    if sp == goal {
                        reward_mean[1][s][a][sp] = config.goal_reward;
                    }
                }
            }
        }
    }

    let mut initial = vec![0.0; ns];
    initial[start] = 1.0;
    let mut terminal = vec![false; ns];
    terminal[goal] = true;

    Ok(Momdp {
        num_states: ns,
        num_actions: 4,
        num_objectives: 2,
        transition,
        reward_mean,
        reward_noise_sigma: vec![0.0; 2],
        discounts: vec![GRIDNAV_DISCOUNT; 2],
        initial,
        terminal,
        episode_horizon: Some(config.step_limit),
        r_max: config.goal_reward.abs().max(config.unsafe_cost.abs()),
    })
}

fn safe_path_exists(unsafe_cells: &[bool], side: usize, start: usize, goal: usize) -> bool {
    let mut seen = vec![false; unsafe_cells.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(s) = queue.pop_front() {
        if s == goal {
            return true;
        }
        let (r, c) = ((s / side) as isize, (s % side) as isize);
        for (dr, dc) in DIRS {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nr >= side as isize || nc < 0 || nc >= side as isize {
                continue;
            }
            let n = (nr * side as isize + nc) as usize;
            if !seen[n] && !unsafe_cells[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    /// Deterministic 2-state chain: T(0,a)=1 w.p. 1, then state 1 terminal.
    fn two_state_chain() -> Momdp {
        Momdp {
            num_states: 2,
            num_actions: 1,
            num_objectives: 1,
            transition: vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            reward_mean: vec![vec![vec![vec![0.0, 0.5]], vec![vec![0.0, 0.0]]]],
            reward_noise_sigma: vec![0.0],
            discounts: vec![0.9],
            initial: vec![1.0, 0.0],
            terminal: vec![false, true],
            episode_horizon: None,
            r_max: 1.0,
        }
    }

    #[test]
    fn terminal_state_absorbs_with_zero_reward() {
        let m = two_state_chain();
        let mut rng = seeded_rng(1);
        let rec = m.sample_transition(1, 0, &mut rng).unwrap();
        assert_eq!(rec.next_state, 1);
        assert_eq!(rec.rewards, vec![0.0]);
        assert!(rec.terminal);
    }

    #[test]
    fn deterministic_chain_gives_exact_means() {
        let m = two_state_chain();
        let mut rng = seeded_rng(2);
        let rec = m.sample_transition(0, 0, &mut rng).unwrap();
        assert_eq!(rec.next_state, 1);
        assert_eq!(rec.rewards, vec![0.5]);
        assert!(rec.terminal);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let m = two_state_chain();
        let mut rng = seeded_rng(3);
        assert!(m.sample_transition(2, 0, &mut rng).is_err());
        assert!(m.sample_transition(0, 1, &mut rng).is_err());
    }

    #[test]
    fn transition_frequencies_match_row() {
        let mut m = two_state_chain();
        m.terminal = vec![false, false];
        m.transition = vec![
            vec![vec![0.3, 0.7]],
            vec![vec![1.0, 0.0]],
        ];
        m.reward_mean = vec![vec![vec![vec![0.0, 0.0]], vec![vec![0.0, 0.0]]]];
        let mut rng = seeded_rng(4);
        let n = 1_000_000;
        let mut hits = 0u64;
        for _ in 0..n {
            if m.sample_transition(0, 0, &mut rng).unwrap().next_state == 1 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.7).abs() < 0.005, "freq={freq}");
    }

    #[test]
    fn initial_point_mass_and_uniform() {
        let mut m = two_state_chain();
        m.initial = vec![0.0, 1.0];
        let mut rng = seeded_rng(5);
        assert_eq!(m.sample_initial(&mut rng), 1);

        let cfg = RandomMomdpConfig::new(4, 1, 1, 11);
        let m4 = generate_random_momdp(&cfg);
        let mut counts = [0u64; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[m4.sample_initial(&mut rng)] += 1;
        }
        for &c in &counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.25).abs() < 0.01, "f={f}");
        }
    }

    #[test]
    fn initial_zero_mass_never_sampled() {
        let mut m = two_state_chain();
        m.initial = vec![1.0, 0.0];
        let mut rng = seeded_rng(6);
        for _ in 0..100_000 {
            assert_eq!(m.sample_initial(&mut rng), 0);
        }
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        let cfg = RandomMomdpConfig::new(256, 4, 3, 17);
        let a = generate_random_momdp(&cfg);
        let b = generate_random_momdp(&cfg);
        assert_eq!(a, b);
        assert!(a.validate().is_empty());
        for s in 0..a.num_states {
            for act in 0..a.num_actions {
                let sum: f64 = a.transition[s][act].iter().sum();
                assert!((sum - 1.0).abs() <= ROW_SUM_TOL);
            }
        }
    }

    #[test]
    fn minimal_density_gives_point_mass_rows() {
        let mut cfg = RandomMomdpConfig::new(8, 2, 1, 3);
        cfg.density = 1.0 / 8.0;
        let m = generate_random_momdp(&cfg);
        for s in 0..8 {
            for a in 0..2 {
                let nonzero = m.transition[s][a].iter().filter(|&&p| p > 0.0).count();
                assert_eq!(nonzero, 1);
                assert!(m.transition[s][a].iter().any(|&p| p == 1.0));
            }
        }
    }

    #[test]
    fn validate_flags_edits() {
        let cfg = RandomMomdpConfig::new(5, 2, 2, 9);
        let mut m = generate_random_momdp(&cfg);
        assert!(m.validate().is_empty());
        m.transition[1][0][0] -= 0.1;
        let v = m.validate();
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::RowSum { state: 1, action: 0, .. })), "{v:?}");
    }

    #[test]
    fn validate_flags_terminal_reward() {
        let mut m = two_state_chain();
        m.reward_mean[0][1][0][1] = 0.3;
        let v = m.validate();
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::TerminalReward { state: 1, objective: 0 })), "{v:?}");
    }

    #[test]
    fn gridnav_slip_arithmetic() {
        let cfg = GridNavConfig { slip_prob: 0.1, seed: 2, ..Default::default() };
        let m = build_gridnav(&cfg).unwrap();
        // Interior cell, intended move right: lands right with 0.9 + 0.1/4.
        let side = cfg.grid_side;
        let s = side + 1; // (1,1)
        assert!((m.transition[s][3][s + 1] - 0.925).abs() < 1e-12);
        assert!(m.validate().is_empty());
    }

    #[test]
    fn gridnav_goal_entry_and_unsafe_cost() {
        let cfg = GridNavConfig { slip_prob: 0.0, seed: 5, ..Default::default() };
        let m = build_gridnav(&cfg).unwrap();
        let side = cfg.grid_side;
        let goal = side * side - 1;
        let adj = goal - 1; // left of goal
        let mut rng = seeded_rng(8);
        let rec = m.sample_transition(adj, 3, &mut rng).unwrap();
        assert_eq!(rec.next_state, goal);
        assert!(rec.terminal);
        assert_eq!(rec.rewards, vec![0.0, cfg.goal_reward]);

        // Any transition into an unsafe cell pays (-1, 0).
        let unsafe_cell = (0..side * side)
            .find(|&sp| m.reward_mean[0].iter().any(|rows| rows.iter().any(|row| row[sp] != 0.0)))
            .expect("default density should yield at least one unsafe cell");
        assert!(m.reward_mean[0]
            .iter()
            .flatten()
            .all(|row| row[unsafe_cell] == 0.0 || row[unsafe_cell] == -1.0));
    }

    #[test]
    fn gridnav_slip_distribution_matches_mixture() {
        let cfg = GridNavConfig { slip_prob: 0.1, seed: 3, ..Default::default() };
        let m = build_gridnav(&cfg).unwrap();
        let side = cfg.grid_side;
        let s = 2 * side + 2;
        let a = 1; // down
        let mut rng = seeded_rng(10);
        let n = 100_000;
        let mut counts = vec![0u64; m.num_states];
        for _ in 0..n {
            counts[m.sample_transition(s, a, &mut rng).unwrap().next_state] += 1;
        }
        let tv: f64 = (0..m.num_states)
            .map(|sp| (counts[sp] as f64 / n as f64 - m.transition[s][a][sp]).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "tv={tv}");
    }

    #[test]
    fn text_round_trip_is_exact() {
        let cfg = RandomMomdpConfig::new(6, 3, 2, 21);
        let m = generate_random_momdp(&cfg);
        let text = m.to_text();
        let back = Momdp::from_text(&text).unwrap();
        assert_eq!(m, back);

        let g = build_gridnav(&GridNavConfig::default()).unwrap();
        let back = Momdp::from_text(&g.to_text()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "momdp v1 2 1 1\nT 0 0 0.5 0.5\nX nonsense\n";
        match Momdp::from_text(bad) {
            Err(MomdpError::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error at line 3, got {other:?}"),
        }
    }
}
