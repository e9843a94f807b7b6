//! Exact ground truth for lexicographic optimality.
//!
//! Lexicographic value iteration runs ordinary value iteration per objective
//! with the Bellman max restricted to the nested action sets
//! Δ_{s,1} ⊇ … ⊇ Δ_{s,m} carried over from the higher-priority objectives.
//! A brute-force policy enumerator provides an independent oracle for tiny
//! instances.

use thiserror::Error;

use crate::momdp::Momdp;

/// Bellman residual threshold for "exact" backups; far below every test
/// tolerance in the crate.
pub const EXACT_TOL: f64 = 1e-12;

/// Differences below this count as exact ties and are excluded from the gap.
pub const TIE_EXCLUSION: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("tolerance must be positive, got {0}")]
    NonPositiveTolerance(f64),
    #[error("linear policy-evaluation residual {residual} above tolerance for objective {objective}")]
    SolverFailure { objective: usize, residual: f64 },
    #[error("instance too large for enumeration: |A|^|S| = {size} exceeds {limit}")]
    InstanceTooLarge { size: f64, limit: f64 },
    #[error("empty restricted action set at state {state}")]
    EmptyActionSet { state: usize },
    #[error("all action pairs are exactly tied on all objectives; no positive gap exists")]
    NoGap,
}

/// A stationary policy over a finite MOMDP.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// One action per state.
    Deterministic(Vec<usize>),
    /// One probability vector over actions per state.
    Stochastic(Vec<Vec<f64>>),
}

impl Policy {
    pub fn action_prob(&self, s: usize, a: usize) -> f64 {
        match self {
            Policy::Deterministic(acts) => {
                if acts[s] == a {
                    1.0
                } else {
                    0.0
                }
            }
            Policy::Stochastic(dist) => dist[s][a],
        }
    }
}

/// Output of [`lex_value_iteration`].
#[derive(Debug, Clone)]
pub struct LexSolution {
    /// `q_tables[i][s][a]` is q_i^l, the exact Q-value for objective i with
    /// the max restricted to the level-i action sets.
    pub q_tables: Vec<Vec<Vec<f64>>>,
    /// `action_sets[i][s]` is Δ_{s,i+1} (sorted); level i+1 is always a
    /// subset of level i.
    pub action_sets: Vec<Vec<Vec<usize>>>,
    /// Lowest-index member of Δ_{s,m} per state.
    pub policy: Vec<usize>,
    /// Exact J_i of `policy`.
    pub j_vector: Vec<f64>,
    /// Smallest positive q-value gap across objectives, states, and action
    /// pairs; `None` when every pair is exactly tied everywhere.
    pub min_gap: Option<f64>,
}

/// Solves Ax = b with Gaussian elimination and partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / diag;
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Exact state values v_π^i for one objective: solves (I − γ_i P_π) v = r_π
/// on the noise-free reward means.
pub fn policy_values(momdp: &Momdp, policy: &Policy, objective: usize) -> Result<Vec<f64>, OracleError> {
    let n = momdp.num_states;
    let gamma = momdp.discounts[objective];
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s][s] = 1.0;
        for act in 0..momdp.num_actions {
            let pa = policy.action_prob(s, act);
            if pa == 0.0 {
                continue;
            }
            for sp in 0..n {
                let t = momdp.transition[s][act][sp];
                if t == 0.0 {
                    continue;
                }
                a[s][sp] -= gamma * pa * t;
                b[s] += pa * t * momdp.reward_mean[objective][s][act][sp];
            }
        }
    }
    let v = solve_linear(a.clone(), b.clone());
    // Residual check against the original system.
    let mut residual = 0.0f64;
    for s in 0..n {
        let mut lhs = 0.0;
        for sp in 0..n {
            lhs += a[s][sp] * v[sp];
        }
        residual = residual.max((lhs - b[s]).abs());
    }
    let scale = b.iter().fold(1.0f64, |acc, &x| acc.max(x.abs()));
    if residual > 1e-8 * scale {
        return Err(OracleError::SolverFailure { objective, residual });
    }
    Ok(v)
}

/// Exact J vector of a policy: J_i = Σ_s I(s) v_π^i(s).
pub fn evaluate_policy_exact(momdp: &Momdp, policy: &Policy) -> Result<Vec<f64>, OracleError> {
    (0..momdp.num_objectives)
        .map(|i| {
            let v = policy_values(momdp, policy, i)?;
            Ok(momdp
                .initial
                .iter()
                .zip(&v)
                .map(|(&p, &vs)| p * vs)
                .sum())
        })
        .collect()
}

/// Value iteration for one objective with the Bellman max restricted to the
/// given per-state action sets. Q(s,a) is defined for all a; only the backup
/// target at successor states is restricted.
pub fn value_iteration_restricted(
    momdp: &Momdp,
    objective: usize,
    action_sets: &[Vec<usize>],
    tol: f64,
) -> Result<Vec<Vec<f64>>, OracleError> {
    if tol <= 0.0 {
        return Err(OracleError::NonPositiveTolerance(tol));
    }
    for (s, set) in action_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(OracleError::EmptyActionSet { state: s });
        }
    }
    let n = momdp.num_states;
    let na = momdp.num_actions;
    let gamma = momdp.discounts[objective];
    let mut q = vec![vec![0.0; na]; n];
    loop {
        let restricted_max: Vec<f64> = (0..n)
            .map(|s| {
                action_sets[s]
                    .iter()
                    .map(|&a| q[s][a])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let mut delta = 0.0f64;
        let mut next = vec![vec![0.0; na]; n];
        for s in 0..n {
            for a in 0..na {
                let mut acc = 0.0;
                for sp in 0..n {
                    let t = momdp.transition[s][a][sp];
                    if t != 0.0 {
                        acc += t * (momdp.reward_mean[objective][s][a][sp]
                            + gamma * restricted_max[sp]);
                    }
                }
                next[s][a] = acc;
                delta = delta.max((acc - q[s][a]).abs());
            }
        }
        q = next;
        if delta < tol {
            return Ok(q);
        }
    }
}

/// Lexicographic value iteration: per objective, run restricted value
/// iteration, then shrink the action sets to the actions within `tie_tol`
/// of the level max.
pub fn lex_value_iteration(momdp: &Momdp, tie_tol: f64) -> Result<LexSolution, OracleError> {
    if tie_tol <= 0.0 {
        return Err(OracleError::NonPositiveTolerance(tie_tol));
    }
    let n = momdp.num_states;
    let full: Vec<Vec<usize>> = vec![(0..momdp.num_actions).collect(); n];
    let mut sets = full;
    let mut q_tables = Vec::with_capacity(momdp.num_objectives);
    let mut action_sets = Vec::with_capacity(momdp.num_objectives);
    for i in 0..momdp.num_objectives {
        let q = value_iteration_restricted(momdp, i, &sets, EXACT_TOL)?;
        let mut next_sets = Vec::with_capacity(n);
        for s in 0..n {
            let level_max = sets[s]
                .iter()
                .map(|&a| q[s][a])
                .fold(f64::NEG_INFINITY, f64::max);
            let kept: Vec<usize> = sets[s]
                .iter()
                .copied()
                .filter(|&a| q[s][a] >= level_max - tie_tol)
                .collect();
            next_sets.push(kept);
        }
        q_tables.push(q);
        action_sets.push(next_sets.clone());
        sets = next_sets;
    }
    let policy: Vec<usize> = (0..n).map(|s| sets[s][0]).collect();
    let j_vector = evaluate_policy_exact(momdp, &Policy::Deterministic(policy.clone()))?;
    let min_gap = min_gap_of_tables(&q_tables);
    Ok(LexSolution {
        q_tables,
        action_sets,
        policy,
        j_vector,
        min_gap,
    })
}

fn min_gap_of_tables(q_tables: &[Vec<Vec<f64>>]) -> Option<f64> {
    let mut gap = f64::INFINITY;
    for table in q_tables {
        for row in table {
            for (k, &qa) in row.iter().enumerate() {
                for &qb in &row[k + 1..] {
                    let d = (qa - qb).abs();
                    if d > TIE_EXCLUSION && d < gap {
                        gap = d;
                    }
                }
            }
        }
    }
    gap.is_finite().then_some(gap)
}

/// The smallest positive q-value gap of a converged solution. Exact ties are
/// excluded; an instance tied everywhere has no admissible tolerance and is
/// an error.
pub fn min_action_gap(sol: &LexSolution) -> Result<f64, OracleError> {
    sol.min_gap.ok_or(OracleError::NoGap)
}

/// Guard for [`brute_force_lex_optimal`].
pub const ENUMERATION_LIMIT: f64 = 1e6;

/// Evaluates every deterministic stationary policy exactly and filters
/// lexicographically: survivors within `tie_tol` of the level-i max proceed
/// to level i+1.
pub fn brute_force_lex_optimal(
    momdp: &Momdp,
    tie_tol: f64,
) -> Result<(Vec<usize>, Vec<f64>), OracleError> {
    if tie_tol <= 0.0 {
        return Err(OracleError::NonPositiveTolerance(tie_tol));
    }
    let n = momdp.num_states;
    let na = momdp.num_actions;
    let size = (na as f64).powi(n as i32);
    if size > ENUMERATION_LIMIT {
        return Err(OracleError::InstanceTooLarge { size, limit: ENUMERATION_LIMIT });
    }
    let count = size as usize;
    let mut policies: Vec<Vec<usize>> = Vec::with_capacity(count);
    for mut code in 0..count {
        let mut actions = vec![0usize; n];
        for slot in actions.iter_mut() {
            *slot = code % na;
            code /= na;
        }
        policies.push(actions);
    }
    let j: Vec<Vec<f64>> = policies
        .iter()
        .map(|p| evaluate_policy_exact(momdp, &Policy::Deterministic(p.clone())))
        .collect::<Result<_, _>>()?;
    let mut survivors: Vec<usize> = (0..count).collect();
    for i in 0..momdp.num_objectives {
        let level_max = survivors
            .iter()
            .map(|&k| j[k][i])
            .fold(f64::NEG_INFINITY, f64::max);
        survivors.retain(|&k| j[k][i] >= level_max - tie_tol);
    }
    let winner = survivors[0];
    Ok((policies[winner].clone(), j[winner].clone()))
}
