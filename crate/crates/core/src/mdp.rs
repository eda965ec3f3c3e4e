//! Finite tabular MDPs plus the solvers everything else builds on: soft
//! (entropy-regularized) value iteration, hard-max value iteration,
//! occupancy measures, demonstrations, and seeded rollouts.
//!
//! Conventions used throughout the crate:
//!
//! * A policy is a row-stochastic matrix `π(a|s)`.
//! * The occupancy measure of a policy from an initial distribution `p0` is
//!   the normalized discounted visitation
//!   `ρ^π(s,a) = (1-γ) π(a|s) Σ_τ γ^τ P(S_τ = s)`.
//!   It sums to one over all `(s,a)` and is recovered from the unique fixed
//!   point of the flow equation `d = (1-γ) p0 + γ P_π^T d` via
//!   `ρ(s,a) = d(s) π(a|s)`.
//! * The expected discounted reward of a policy is
//!   `ν = (1/(1-γ)) Σ_{s,a} ρ(s,a) R(s,a)`.
//! * A soft-optimal policy satisfies `π(a|s) = exp(Q(s,a) - V(s))` where
//!   `V(s) = log Σ_a exp(Q(s,a))` and `Q = R + γ T V`.
//! * [`tv_distance`] reports `Σ |p - q|` **without** the conventional 1/2
//!   factor. Every bound in [`crate::analysis`] uses the same convention, so
//!   the factor stays consistent across the crate.
//!
//! Absorbing states are ordinary states whose transition rows are self-loops;
//! no special termination handling exists anywhere in the solvers.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

// ─── Core types ─────────────────────────────────────────────────────────────

/// A finite Markov decision process `(S, A, T, γ, p0)` with an optional
/// environment reward table used for evaluation.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Transition kernel, indexed `(s, a, s')`.
    transition: Array3<f64>,
    discount: f64,
    initial_dist: Array1<f64>,
    env_reward: Option<Array2<f64>>,
}

impl TabularMdp {
    /// Validates and builds an MDP. Transition rows and the initial
    /// distribution must be probability vectors (tolerance 1e-9 on the sum);
    /// the discount must lie in `[0, 1)`.
    pub fn new(
        transition: Array3<f64>,
        discount: f64,
        initial_dist: Array1<f64>,
        env_reward: Option<Array2<f64>>,
    ) -> Result<Self> {
        let (n_states, n_actions, n_next) = transition.dim();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("MDP needs at least one state and action"));
        }
        if n_next != n_states {
            return Err(Error::invalid(format!(
                "transition tensor is {n_states}x{n_actions}x{n_next}, expected last axis {n_states}"
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid(format!(
                "discount {discount} outside [0, 1)"
            )));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(
                    transition.slice(ndarray::s![s, a, ..]),
                    &format!("transition row (s={s}, a={a})"),
                )?;
            }
        }
        if initial_dist.len() != n_states {
            return Err(Error::invalid(format!(
                "initial distribution has {} entries, expected {n_states}",
                initial_dist.len()
            )));
        }
        check_distribution(initial_dist.view(), "initial distribution")?;
        if let Some(r) = &env_reward {
            if r.dim() != (n_states, n_actions) {
                return Err(Error::invalid(format!(
                    "environment reward is {:?}, expected ({n_states}, {n_actions})",
                    r.dim()
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("environment reward has non-finite entries"));
            }
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            transition,
            discount,
            initial_dist,
            env_reward,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    /// Probability of moving to `next` when taking `action` in `state`.
    pub fn transition_prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transition[[state, action, next]]
    }

    pub fn env_reward(&self) -> Option<&Array2<f64>> {
        self.env_reward.as_ref()
    }

    /// Replaces the evaluation reward table.
    pub fn with_env_reward(mut self, reward: Array2<f64>) -> Result<Self> {
        if reward.dim() != (self.n_states, self.n_actions) {
            return Err(Error::invalid("environment reward shape mismatch"));
        }
        self.env_reward = Some(reward);
        Ok(self)
    }
}

fn check_distribution(row: ArrayView1<'_, f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &p in row.iter() {
        if !p.is_finite() || p < -1e-12 {
            return Err(Error::invalid(format!("{what} has entry {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Row-stochastic policy `π(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    probs: Array2<f64>,
}

impl StochasticPolicy {
    pub fn from_probs(probs: Array2<f64>) -> Result<Self> {
        let (n_states, _) = probs.dim();
        for s in 0..n_states {
            check_distribution(probs.row(s), &format!("policy row {s}"))?;
        }
        Ok(StochasticPolicy { probs })
    }

    /// Uniform policy over every action.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StochasticPolicy {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::invalid(format!("action {a} out of range")));
            }
            probs[[s, a]] = 1.0;
        }
        Ok(StochasticPolicy { probs })
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[[state, action]]
    }

    pub fn row(&self, state: usize) -> ArrayView1<'_, f64> {
        self.probs.row(state)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }
}

/// A finite trajectory `(s_0, a_0), ..., (s_{H-1}, a_{H-1})` together with
/// the truncation horizon it was sampled under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    steps: Vec<(usize, usize)>,
    truncation_len: usize,
}

impl Demonstration {
    pub fn new(steps: Vec<(usize, usize)>, truncation_len: usize) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("demonstration must contain at least one step"));
        }
        if steps.len() > truncation_len {
            return Err(Error::invalid(format!(
                "demonstration has {} steps, beyond its truncation length {truncation_len}",
                steps.len()
            )));
        }
        Ok(Demonstration {
            steps,
            truncation_len,
        })
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn truncation_len(&self) -> usize {
        self.truncation_len
    }

    pub fn start_state(&self) -> usize {
        self.steps[0].0
    }
}

/// Normalized discounted state-action visitation; sums to one for policy
/// occupancies and to `1 - γ^H` for an `H`-step demonstration.
#[derive(Debug, Clone)]
pub struct OccupancyMeasure {
    table: Array2<f64>,
    discount: f64,
}

impl OccupancyMeasure {
    pub fn new(table: Array2<f64>, discount: f64) -> Self {
        OccupancyMeasure { table, discount }
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn total_mass(&self) -> f64 {
        self.table.sum()
    }
}

// ─── Sparse dynamics ────────────────────────────────────────────────────────

/// Transition kernel with zero-probability arcs stripped, indexed by
/// `s * n_actions + a`. Grid-style environments have a handful of successors
/// per pair, which makes every sweep below linear in the number of arcs.
#[derive(Debug, Clone)]
pub(crate) struct SparseDynamics {
    n_states: usize,
    n_actions: usize,
    arcs: Vec<Vec<(usize, f64)>>,
}

impl SparseDynamics {
    pub(crate) fn new(mdp: &TabularMdp) -> Self {
        let (n_states, n_actions) = (mdp.n_states, mdp.n_actions);
        let mut arcs = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = mdp.transition.slice(ndarray::s![s, a, ..]);
                let entries: Vec<(usize, f64)> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(next, &p)| (next, p))
                    .collect();
                arcs.push(entries);
            }
        }
        SparseDynamics {
            n_states,
            n_actions,
            arcs,
        }
    }

    #[inline]
    pub(crate) fn successors(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.arcs[state * self.n_actions + action]
    }

    /// `Σ_{s'} T(s'|s,a) v(s')`.
    #[inline]
    pub(crate) fn expect_next(&self, state: usize, action: usize, v: &Array1<f64>) -> f64 {
        self.successors(state, action)
            .iter()
            .map(|&(next, p)| p * v[next])
            .sum()
    }

    pub(crate) fn n_states(&self) -> usize {
        self.n_states
    }

    pub(crate) fn n_actions(&self) -> usize {
        self.n_actions
    }
}

// ─── Soft and hard value iteration ──────────────────────────────────────────

/// Converged output of [`soft_value_iteration`].
#[derive(Debug, Clone)]
pub struct SoftSolution {
    pub values: Array1<f64>,
    pub q_values: Array2<f64>,
    pub policy: StochasticPolicy,
    pub iterations: usize,
    pub residual: f64,
}

fn logsumexp(row: ArrayView1<'_, f64>) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&q| (q - m).exp()).sum::<f64>().ln()
}

fn check_reward_table(mdp: &TabularMdp, reward: &Array2<f64>) -> Result<()> {
    if reward.dim() != (mdp.n_states, mdp.n_actions) {
        return Err(Error::invalid(format!(
            "reward table is {:?}, expected ({}, {})",
            reward.dim(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    if reward.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("reward table has non-finite entries"));
    }
    Ok(())
}

/// One application of the soft Bellman operator:
/// `(B v)(s) = log Σ_a exp(R(s,a) + γ Σ_{s'} T(s'|s,a) v(s'))`.
///
/// The operator is a γ-contraction in the sup norm, which is what makes
/// [`soft_value_iteration`] geometrically convergent from any start.
pub fn soft_bellman_backup(mdp: &TabularMdp, reward: &Array2<f64>, values: &Array1<f64>) -> Array1<f64> {
    let sparse = SparseDynamics::new(mdp);
    soft_backup_with(&sparse, mdp.discount, reward, values).0
}

fn soft_backup_with(
    sparse: &SparseDynamics,
    discount: f64,
    reward: &Array2<f64>,
    values: &Array1<f64>,
) -> (Array1<f64>, Array2<f64>) {
    let (n_states, n_actions) = (sparse.n_states(), sparse.n_actions());
    let mut q = Array2::zeros((n_states, n_actions));
    let mut v = Array1::zeros(n_states);
    for s in 0..n_states {
        for a in 0..n_actions {
            q[[s, a]] = reward[[s, a]] + discount * sparse.expect_next(s, a, values);
        }
        v[s] = logsumexp(q.row(s));
    }
    (v, q)
}

/// Entropy-regularized value iteration from `V ≡ 0`, stopping when the sup
/// norm of successive value changes drops below `tol`. Returns the converged
/// values together with the soft-greedy policy `π(a|s) = exp(Q(s,a) - V(s))`.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    reward: &Array2<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<SoftSolution> {
    SoftPlanner::new(mdp).solve(reward, tol, max_iters, None)
}

/// Reusable soft-value-iteration workspace. Carrying it across calls lets a
/// caller that solves a slowly-moving sequence of reward tables warm-start
/// from the previous values; the fixed point is unique, so warm starts change
/// only the iteration count, never the answer beyond solver tolerance.
#[derive(Debug)]
pub struct SoftPlanner {
    sparse: SparseDynamics,
    discount: f64,
}

impl SoftPlanner {
    pub fn new(mdp: &TabularMdp) -> Self {
        SoftPlanner {
            sparse: SparseDynamics::new(mdp),
            discount: mdp.discount,
        }
    }

    pub fn solve(
        &self,
        reward: &Array2<f64>,
        tol: f64,
        max_iters: usize,
        warm_start: Option<&Array1<f64>>,
    ) -> Result<SoftSolution> {
        if !(tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if reward.dim() != (self.sparse.n_states(), self.sparse.n_actions()) {
            return Err(Error::invalid("reward table shape mismatch"));
        }
        if reward.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("reward table has non-finite entries"));
        }
        let n_states = self.sparse.n_states();
        let mut values = match warm_start {
            Some(v0) if v0.len() == n_states => v0.clone(),
            Some(_) => return Err(Error::invalid("warm-start values have wrong length")),
            None => Array1::zeros(n_states),
        };
        let mut residual = f64::INFINITY;
        for iter in 1..=max_iters {
            let (next, _) = soft_backup_with(&self.sparse, self.discount, reward, &values);
            residual = max_abs_diff(&next, &values);
            values = next;
            if !residual.is_finite() {
                return Err(Error::invalid("soft value iteration diverged to non-finite values"));
            }
            if residual < tol {
                // One more backup so Q, V and π are mutually consistent.
                let (v, q) = soft_backup_with(&self.sparse, self.discount, reward, &values);
                let mut probs = Array2::zeros(q.dim());
                for s in 0..n_states {
                    for a in 0..self.sparse.n_actions() {
                        probs[[s, a]] = (q[[s, a]] - v[s]).exp();
                    }
                }
                return Ok(SoftSolution {
                    values: v,
                    q_values: q,
                    policy: StochasticPolicy::from_probs(probs)?,
                    iterations: iter,
                    residual,
                });
            }
        }
        Err(Error::NoConvergence {
            what: "soft value iteration",
            iterations: max_iters,
            residual,
            tolerance: tol,
        })
    }
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Hard-max value iteration returning a deterministic policy (as a one-hot
/// [`StochasticPolicy`]). Value ties are broken toward the lowest action
/// index so the result is reproducible across runs.
pub fn optimal_policy(mdp: &TabularMdp, reward: &Array2<f64>, tol: f64) -> Result<StochasticPolicy> {
    check_reward_table(mdp, reward)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let sparse = SparseDynamics::new(mdp);
    let (n_states, n_actions) = (mdp.n_states, mdp.n_actions);
    let max_iters = iteration_cap(mdp.discount, tol);
    let mut values = Array1::zeros(n_states);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let mut next = Array1::zeros(n_states);
        for s in 0..n_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_actions {
                let q = reward[[s, a]] + mdp.discount * sparse.expect_next(s, a, &values);
                if q > best {
                    best = q;
                }
            }
            next[s] = best;
        }
        residual = max_abs_diff(&next, &values);
        values = next;
        if residual < tol {
            let mut actions = vec![0usize; n_states];
            for s in 0..n_states {
                let mut best = f64::NEG_INFINITY;
                let mut best_action = 0;
                for a in 0..n_actions {
                    let q = reward[[s, a]] + mdp.discount * sparse.expect_next(s, a, &values);
                    if q > best {
                        best = q;
                        best_action = a;
                    }
                }
                actions[s] = best_action;
            }
            return StochasticPolicy::deterministic(&actions, n_actions);
        }
    }
    Err(Error::NoConvergence {
        what: "value iteration",
        iterations: max_iters,
        residual,
        tolerance: tol,
    })
}

/// Iteration budget for a γ-contraction asked to reach `tol`: ten times the
/// count a clean geometric decay would need, with a floor for tiny discounts.
pub(crate) fn iteration_cap(discount: f64, tol: f64) -> usize {
    if discount <= f64::EPSILON {
        return 10;
    }
    let per_decade = tol.ln() / discount.ln();
    (10.0 * per_decade.ceil()).max(10.0) as usize
}

// ─── Occupancy measures ─────────────────────────────────────────────────────

/// Repeated-solve workspace for occupancy measures of one `(mdp, policy)`
/// pair: the policy-mixed kernel `P_π(s'|s) = Σ_a π(a|s) T(s'|s,a)` is built
/// once and reused for any number of initial distributions.
#[derive(Debug)]
pub struct OccupancySolver {
    /// Outgoing arcs `(s', weight)` per source state.
    mixed_arcs: Vec<Vec<(usize, f64)>>,
    policy: StochasticPolicy,
    discount: f64,
    tol: f64,
}

impl OccupancySolver {
    pub fn new(mdp: &TabularMdp, policy: &StochasticPolicy, tol: f64) -> Result<Self> {
        if policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions {
            return Err(Error::invalid("policy shape does not match the MDP"));
        }
        if !(tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        let sparse = SparseDynamics::new(mdp);
        let mut mixed_arcs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mdp.n_states];
        for s in 0..mdp.n_states {
            let mut weights: Vec<(usize, f64)> = Vec::new();
            for a in 0..mdp.n_actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for &(next, p) in sparse.successors(s, a) {
                    match weights.iter_mut().find(|(n, _)| *n == next) {
                        Some((_, w)) => *w += pa * p,
                        None => weights.push((next, pa * p)),
                    }
                }
            }
            mixed_arcs[s] = weights;
        }
        Ok(OccupancySolver {
            mixed_arcs,
            policy: policy.clone(),
            discount: mdp.discount,
            tol,
        })
    }

    /// Discounted state-visitation vector `d = (1-γ) p0 + γ P_π^T d`, found
    /// by fixed-point iteration from `d = (1-γ) p0`.
    pub fn state_visitation(&self, initial_dist: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let n_states = self.mixed_arcs.len();
        if initial_dist.len() != n_states {
            return Err(Error::invalid("initial distribution has wrong length"));
        }
        check_distribution(initial_dist, "initial distribution")?;
        let base: Array1<f64> = initial_dist.mapv(|p| p * (1.0 - self.discount)).to_owned();
        let mut d = base.clone();
        let cap = iteration_cap(self.discount, self.tol);
        let mut residual = f64::INFINITY;
        for _ in 0..cap {
            let mut next = base.clone();
            for (s, arcs) in self.mixed_arcs.iter().enumerate() {
                let mass = d[s];
                if mass == 0.0 {
                    continue;
                }
                for &(succ, w) in arcs {
                    next[succ] += self.discount * w * mass;
                }
            }
            residual = d
                .iter()
                .zip(next.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
            d = next;
            if residual < self.tol {
                return Ok(d);
            }
        }
        Err(Error::NoConvergence {
            what: "occupancy fixed point",
            iterations: cap,
            residual,
            tolerance: self.tol,
        })
    }

    /// Full occupancy table `ρ(s,a) = d(s) π(a|s)`.
    pub fn occupancy(&self, initial_dist: ArrayView1<'_, f64>) -> Result<OccupancyMeasure> {
        let d = self.state_visitation(initial_dist)?;
        let (n_states, n_actions) = (self.policy.n_states(), self.policy.n_actions());
        let mut table = Array2::zeros((n_states, n_actions));
        for s in 0..n_states {
            for a in 0..n_actions {
                table[[s, a]] = d[s] * self.policy.prob(s, a);
            }
        }
        Ok(OccupancyMeasure::new(table, self.discount))
    }

    /// Occupancy for the point initial distribution `δ_{start}`.
    pub fn occupancy_from_state(&self, start: usize) -> Result<OccupancyMeasure> {
        let n_states = self.mixed_arcs.len();
        if start >= n_states {
            return Err(Error::invalid(format!("start state {start} out of range")));
        }
        let mut p0 = Array1::zeros(n_states);
        p0[start] = 1.0;
        self.occupancy(p0.view())
    }
}

/// Occupancy measure of `policy` on `mdp` from `initial_dist`, computed by
/// fixed-point iteration on the flow equation (see module docs).
pub fn occupancy_measure(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    initial_dist: ArrayView1<'_, f64>,
    tol: f64,
) -> Result<OccupancyMeasure> {
    OccupancySolver::new(mdp, policy, tol)?.occupancy(initial_dist)
}

/// Empirical occupancy of one demonstration:
/// `ρ^ξ(s,a) = (1-γ) Σ_τ γ^τ 1{s_τ = s, a_τ = a}`, total mass `1 - γ^H`.
pub fn demo_occupancy(mdp: &TabularMdp, demo: &Demonstration) -> Result<OccupancyMeasure> {
    let mut table = Array2::zeros((mdp.n_states, mdp.n_actions));
    let gamma = mdp.discount;
    let mut weight = 1.0 - gamma;
    for &(s, a) in demo.steps() {
        if s >= mdp.n_states || a >= mdp.n_actions {
            return Err(Error::invalid(format!(
                "demonstration step ({s}, {a}) outside the MDP"
            )));
        }
        table[[s, a]] += weight;
        weight *= gamma;
    }
    Ok(OccupancyMeasure::new(table, gamma))
}

/// Arithmetic mean of the per-demonstration occupancies.
pub fn demo_occupancy_mean(mdp: &TabularMdp, demos: &[Demonstration]) -> Result<OccupancyMeasure> {
    if demos.is_empty() {
        return Err(Error::invalid("cannot average an empty demonstration set"));
    }
    let mut table = Array2::zeros((mdp.n_states, mdp.n_actions));
    for demo in demos {
        table += demo_occupancy(mdp, demo)?.table();
    }
    table /= demos.len() as f64;
    Ok(OccupancyMeasure::new(table, mdp.discount))
}

/// Expected discounted reward `ν = (1/(1-γ)) Σ ρ(s,a) R(s,a)`.
pub fn expected_reward(occupancy: &OccupancyMeasure, reward: &Array2<f64>) -> Result<f64> {
    if occupancy.table().dim() != reward.dim() {
        return Err(Error::invalid("occupancy and reward shapes differ"));
    }
    let dot: f64 = occupancy
        .table()
        .iter()
        .zip(reward.iter())
        .map(|(r, w)| r * w)
        .sum();
    Ok(dot / (1.0 - occupancy.discount()))
}

/// `Σ |p - q|` over two occupancy tables (twice the conventional
/// total-variation distance; see module docs).
pub fn tv_distance(a: &OccupancyMeasure, b: &OccupancyMeasure) -> Result<f64> {
    if a.table().dim() != b.table().dim() {
        return Err(Error::invalid("occupancy shapes differ"));
    }
    Ok(a.table()
        .iter()
        .zip(b.table().iter())
        .map(|(x, y)| (x - y).abs())
        .sum())
}

/// `Σ |p - q|` over two probability vectors (same convention as
/// [`tv_distance`]).
pub fn tv_distance_vec(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    p.iter().zip(q.iter()).map(|(x, y)| (x - y).abs()).sum()
}

// ─── Sampling ───────────────────────────────────────────────────────────────

/// Samples an index from a probability row by inverse-CDF walk. The row is
/// assumed normalized; accumulated float slack falls to the last positive
/// entry.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: ArrayView1<'_, f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Rolls out `policy` for exactly `horizon` steps from `start`, sampling
/// actions from the policy rows and successors from the transition kernel.
/// With the same generator state the trajectory is identical run to run.
pub fn rollout<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    start: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Demonstration> {
    if start >= mdp.n_states {
        return Err(Error::invalid(format!("start state {start} out of range")));
    }
    if policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions {
        return Err(Error::invalid("policy shape does not match the MDP"));
    }
    if horizon == 0 {
        return Err(Error::invalid("rollout horizon must be positive"));
    }
    let mut steps = Vec::with_capacity(horizon);
    let mut state = start;
    for _ in 0..horizon {
        let action = sample_index(policy.row(state), rng);
        steps.push((state, action));
        state = sample_index(mdp.transition.slice(ndarray::s![state, action, ..]), rng);
    }
    Demonstration::new(steps, horizon)
}

// ─── Tests ──────────────────────────────────────────────────────────────────
