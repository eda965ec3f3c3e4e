//! The three demonstration-selection strategies and the interactive
//! teaching loop.
//!
//! All teachers hand the student realizable demonstrations: rollouts of the
//! expert policy, never synthetic trajectories. They differ in what they
//! observe about the student:
//!
//! * **Omniscient** — reads the student's parameters directly and picks the
//!   pool candidate minimizing
//!   `η_t² ‖μ^{π_t,s} - μ^ξ‖² - 2 η_t ⟨λ_t - λ*, μ^{π_t,s} - μ^ξ⟩`,
//!   the exact decrease of `‖λ_{t+1} - λ*‖²` the projected update will
//!   produce (up to projection).
//! * **Blackbox** — periodically probes the student with `k` test rollouts
//!   per initial state to estimate its occupancies, then picks the candidate
//!   maximizing the absolute expected-reward discrepancy
//!   `|Σ (ρ̂^{π_t,s} - ρ^ξ) · R^E|`. Between probes both the estimate and the
//!   candidate pool are frozen, which makes selections constant across each
//!   probe block.
//! * **Agnostic** — ignores the student entirely: samples a start from the
//!   initial distribution and rolls the expert policy out fresh.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::learner::{learner_step_with, LearnerState, StepInfo};
use crate::mdp::{
    demo_occupancy, rollout, sample_index, Demonstration, OccupancyMeasure, OccupancySolver,
    SoftPlanner, StochasticPolicy, TabularMdp,
};
use crate::reward::{feature_expectation_demo, feature_expectation_from_occupancy};

/// Candidate demonstrations per supported initial state: `K` expert rollouts
/// from each state with `P0(s) > 0`, deduplicated by exact step sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    per_state: BTreeMap<usize, Vec<Demonstration>>,
    horizon: usize,
}

impl CandidatePool {
    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_state.keys().copied()
    }

    pub fn candidates(&self, state: usize) -> &[Demonstration] {
        self.per_state.get(&state).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn total_candidates(&self) -> usize {
        self.per_state.values().map(Vec::len).sum()
    }

    /// Builds a pool directly from per-state demonstration lists. Intended
    /// for tests that need exact control over the candidates.
    pub fn from_parts(per_state: BTreeMap<usize, Vec<Demonstration>>, horizon: usize) -> Result<Self> {
        if per_state.is_empty() || per_state.values().any(Vec::is_empty) {
            return Err(Error::invalid("candidate pool must be non-empty per state"));
        }
        Ok(CandidatePool { per_state, horizon })
    }
}

/// Samples `k` expert rollouts of length `horizon` from every supported
/// initial state and deduplicates them. Deterministic experts on
/// deterministic dynamics collapse to one candidate per state.
pub fn build_candidate_pool<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    expert_policy: &StochasticPolicy,
    k: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<CandidatePool> {
    if k == 0 {
        return Err(Error::invalid("pool size must be positive"));
    }
    if horizon == 0 {
        return Err(Error::invalid("pool horizon must be positive"));
    }
    let mut per_state = BTreeMap::new();
    for s in 0..mdp.n_states() {
        if mdp.initial_dist()[s] <= 0.0 {
            continue;
        }
        let mut candidates: Vec<Demonstration> = Vec::with_capacity(k);
        for _ in 0..k {
            let demo = rollout(mdp, expert_policy, s, horizon, rng)?;
            if !candidates.contains(&demo) {
                candidates.push(demo);
            }
        }
        per_state.insert(s, candidates);
    }
    if per_state.is_empty() {
        return Err(Error::invalid("initial distribution has empty support"));
    }
    Ok(CandidatePool {
        per_state,
        horizon,
    })
}

/// Teacher strategy plus its strategy-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum TeacherKind {
    /// Observes the student's parameters; steers toward `lambda_star`.
    Omniscient { lambda_star: Array1<f64> },
    /// Probes the student every `probe_interval` steps with `probe_rollouts`
    /// test rollouts per initial state.
    Blackbox {
        probe_interval: usize,
        probe_rollouts: usize,
    },
    /// Start state from the initial distribution, fresh expert rollout.
    Agnostic,
}

impl TeacherKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            TeacherKind::Omniscient { lambda_star } => {
                if lambda_star.is_empty() || lambda_star.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("lambda_star must be non-empty and finite"));
                }
            }
            TeacherKind::Blackbox {
                probe_interval,
                probe_rollouts,
            } => {
                if *probe_interval == 0 || *probe_rollouts == 0 {
                    return Err(Error::invalid("probe interval and rollout count must be ≥ 1"));
                }
            }
            TeacherKind::Agnostic => {}
        }
        Ok(())
    }
}

/// Estimated student occupancies from probe rollouts.
#[derive(Debug, Clone)]
pub struct ProbeEstimate {
    per_state: BTreeMap<usize, OccupancyMeasure>,
    pub rollouts: usize,
    /// Teaching step at which the probe ran.
    pub probe_step: usize,
}

impl ProbeEstimate {
    pub fn estimate(&self, state: usize) -> Option<&OccupancyMeasure> {
        self.per_state.get(&state)
    }
}

/// Estimates the student's occupancy from every supported initial state by
/// averaging the empirical occupancies of `k` truncated rollouts.
pub fn probe_learner<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    learner_policy: &StochasticPolicy,
    k: usize,
    horizon: usize,
    probe_step: usize,
    rng: &mut R,
) -> Result<ProbeEstimate> {
    if k == 0 {
        return Err(Error::invalid("probe rollout count must be positive"));
    }
    let mut per_state = BTreeMap::new();
    for s in 0..mdp.n_states() {
        if mdp.initial_dist()[s] <= 0.0 {
            continue;
        }
        let mut table = Array2::<f64>::zeros((mdp.n_states(), mdp.n_actions()));
        for _ in 0..k {
            let demo = rollout(mdp, learner_policy, s, horizon, rng)?;
            table += demo_occupancy(mdp, &demo)?.table();
        }
        table.mapv_inplace(|x| x / k as f64);
        per_state.insert(s, OccupancyMeasure::new(table, mdp.discount()));
    }
    Ok(ProbeEstimate {
        per_state,
        rollouts: k,
        probe_step,
    })
}

/// A selected demonstration with its start state and the teacher's internal
/// objective value at selection time.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub start_state: usize,
    pub demo: Demonstration,
    /// Selection objective (omniscient and blackbox); agnostic selections
    /// have none.
    pub objective: Option<f64>,
}

/// Omniscient selection objective for one candidate: the change in squared
/// parameter distance `‖λ_{t+1} - λ*‖² - ‖λ_t - λ*‖²` the projected update
/// would produce if the projection stays inactive.
pub fn omni_objective(
    eta: f64,
    lambda_gap: ArrayView1<'_, f64>,
    mu_diff: ArrayView1<'_, f64>,
) -> f64 {
    let norm_sq: f64 = mu_diff.iter().map(|x| x * x).sum();
    let inner: f64 = lambda_gap.iter().zip(mu_diff.iter()).map(|(a, b)| a * b).sum();
    eta * eta * norm_sq - 2.0 * eta * inner
}

/// Picks the pool candidate minimizing [`omni_objective`] for the student's
/// current parameters and step size. Ties break toward the lowest start
/// state, then pool order.
pub fn omni_select(
    state: &LearnerState,
    pool: &CandidatePool,
    lambda_star: ArrayView1<'_, f64>,
    mdp: &TabularMdp,
) -> Result<Selection> {
    let solver = OccupancySolver::new(mdp, state.policy(), state.solver_config().occupancy_tol)?;
    omni_select_with(state, pool, lambda_star, mdp, &solver)
}

pub(crate) fn omni_select_with(
    state: &LearnerState,
    pool: &CandidatePool,
    lambda_star: ArrayView1<'_, f64>,
    mdp: &TabularMdp,
    solver: &OccupancySolver,
) -> Result<Selection> {
    if lambda_star.len() != state.model().param_dim() {
        return Err(Error::invalid("lambda_star length does not match the model"));
    }
    let eta = state.current_rate();
    let lambda_gap = &state.lambda().to_owned() - &lambda_star;
    let mut best: Option<(f64, usize, usize)> = None;
    for s in pool.states() {
        let occ = solver.occupancy_from_state(s)?;
        let mu_pi = feature_expectation_from_occupancy(&occ, state.model(), state.lambda())?;
        for (idx, demo) in pool.candidates(s).iter().enumerate() {
            let mu_xi = feature_expectation_demo(
                demo,
                state.model(),
                state.lambda(),
                mdp.discount(),
            )?;
            let diff = &mu_pi - &mu_xi;
            let value = omni_objective(eta, lambda_gap.view(), diff.view());
            // Strict `<` keeps the first candidate in (state, pool-order)
            // iteration on exact ties.
            if best.map_or(true, |(b, _, _)| value < b) {
                best = Some((value, s, idx));
            }
        }
    }
    let (value, s, idx) = best.ok_or_else(|| Error::invalid("candidate pool is empty"))?;
    Ok(Selection {
        start_state: s,
        demo: pool.candidates(s)[idx].clone(),
        objective: Some(value),
    })
}

/// Blackbox selection objective for one candidate: absolute discrepancy in
/// expected environment reward between the estimated student occupancy and
/// the candidate's occupancy.
pub fn bbox_objective(
    estimate: &OccupancyMeasure,
    demo_occ: &OccupancyMeasure,
    env_reward: &Array2<f64>,
) -> f64 {
    let mut total = 0.0;
    for ((s, a), &mass) in estimate.table().indexed_iter() {
        total += (mass - demo_occ.table()[[s, a]]) * env_reward[[s, a]];
    }
    total.abs()
}

/// Picks the pool candidate maximizing [`bbox_objective`] under the probe
/// estimate. Ties break toward the lowest start state, then pool order.
pub fn bbox_select(
    estimate: &ProbeEstimate,
    pool: &CandidatePool,
    mdp: &TabularMdp,
    env_reward: &Array2<f64>,
) -> Result<Selection> {
    let mut best: Option<(f64, usize, usize)> = None;
    for s in pool.states() {
        let rho_hat = estimate
            .estimate(s)
            .ok_or_else(|| Error::invalid(format!("probe estimate missing state {s}")))?;
        for (idx, demo) in pool.candidates(s).iter().enumerate() {
            let demo_occ = demo_occupancy(mdp, demo)?;
            let value = bbox_objective(rho_hat, &demo_occ, env_reward);
            // Strict `>` keeps the first candidate on exact ties.
            if best.map_or(true, |(b, _, _)| value > b) {
                best = Some((value, s, idx));
            }
        }
    }
    let (value, s, idx) = best.ok_or_else(|| Error::invalid("candidate pool is empty"))?;
    Ok(Selection {
        start_state: s,
        demo: pool.candidates(s)[idx].clone(),
        objective: Some(value),
    })
}

/// Samples a start state from the initial distribution and returns a fresh
/// expert rollout from it — no dependence on the student.
pub fn agnostic_select<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    expert_policy: &StochasticPolicy,
    horizon: usize,
    rng: &mut R,
) -> Result<Selection> {
    let start = sample_index(mdp.initial_dist().view(), rng);
    let demo = rollout(mdp, expert_policy, start, horizon, rng)?;
    Ok(Selection {
        start_state: start,
        demo,
        objective: None,
    })
}

/// What happened at one teaching step, as recorded in the run log.
#[derive(Debug, Clone)]
pub struct TeachingStep {
    /// 1-based step index.
    pub t: usize,
    pub selection: Selection,
    /// Whether the blackbox teacher re-probed at this step.
    pub probed: bool,
    /// Step-size and gradient of the student update this step triggered.
    pub update: StepInfo,
}

/// Per-step audit data for selection-equivalence checks: everything needed
/// to re-evaluate the teacher's argmax independently.
#[derive(Debug, Clone)]
pub struct AuditRecord {
    pub t: usize,
    /// Pool in force at this step.
    pub pool: CandidatePool,
    /// Student parameters before the update.
    pub lambda_before: Array1<f64>,
    /// Step size the selection used.
    pub eta: f64,
    /// Probe estimate in force (blackbox only).
    pub estimate: Option<ProbeEstimate>,
}

/// Configuration of the teaching interaction.
#[derive(Debug, Clone)]
pub struct TeachingConfig {
    /// Candidates sampled per initial state.
    pub pool_size: usize,
    /// Demonstration and probe truncation horizon.
    pub horizon: usize,
    /// Number of teaching steps.
    pub steps: usize,
    /// Capture per-step [`AuditRecord`]s in the run log.
    pub record_audit: bool,
}

impl TeachingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 || self.horizon == 0 || self.steps == 0 {
            return Err(Error::invalid("pool size, horizon, and steps must be ≥ 1"));
        }
        Ok(())
    }
}

/// Full record of a teaching run.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub steps: Vec<TeachingStep>,
    pub audits: Vec<AuditRecord>,
}

/// Runs the interactive teaching loop for `cfg.steps` steps and returns the
/// run log; the student is updated in place.
///
/// Per step `t = 1..T`: the teacher selects `(s_0, ξ_t)` according to its
/// kind, and the student performs one projected gradient update on `ξ_t`.
/// The omniscient and agnostic teachers draw a fresh candidate pool every
/// step; the blackbox teacher re-probes and re-draws its pool only at steps
/// with `t ≡ 1 (mod B)` (every step for `B = 1`) and reuses both between
/// probes, so its selections are constant across each length-`B` block.
/// `on_step` runs after each student update (for metrics collection).
pub fn teaching_loop<R, F>(
    mdp: &TabularMdp,
    expert_policy: &StochasticPolicy,
    teacher: &TeacherKind,
    learner: &mut LearnerState,
    cfg: &TeachingConfig,
    rng: &mut R,
    mut on_step: F,
) -> Result<RunLog>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &LearnerState, &TeachingStep) -> Result<()>,
{
    teacher.validate()?;
    cfg.validate()?;
    if let TeacherKind::Omniscient { lambda_star } = teacher {
        if lambda_star.len() != learner.model().param_dim() {
            return Err(Error::invalid("lambda_star length does not match the model"));
        }
    }

    let planner = SoftPlanner::new(mdp);
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut audits = Vec::new();
    // Blackbox state, both refreshed only at probe steps.
    let mut probe: Option<ProbeEstimate> = None;
    let mut frozen_pool: Option<CandidatePool> = None;

    for t in 1..=cfg.steps {
        let mut probed = false;
        let selection = match teacher {
            TeacherKind::Omniscient { lambda_star } => {
                let pool =
                    build_candidate_pool(mdp, expert_policy, cfg.pool_size, cfg.horizon, rng)?;
                let solver = OccupancySolver::new(
                    mdp,
                    learner.policy(),
                    learner.solver_config().occupancy_tol,
                )?;
                let selection =
                    omni_select_with(learner, &pool, lambda_star.view(), mdp, &solver)?;
                if cfg.record_audit {
                    audits.push(AuditRecord {
                        t,
                        pool,
                        lambda_before: learner.lambda().to_owned(),
                        eta: learner.current_rate(),
                        estimate: None,
                    });
                }
                selection
            }
            TeacherKind::Blackbox {
                probe_interval,
                probe_rollouts,
            } => {
                if *probe_interval == 1 || t % probe_interval == 1 {
                    probe = Some(probe_learner(
                        mdp,
                        learner.policy(),
                        *probe_rollouts,
                        cfg.horizon,
                        t,
                        rng,
                    )?);
                    frozen_pool = Some(build_candidate_pool(
                        mdp,
                        expert_policy,
                        cfg.pool_size,
                        cfg.horizon,
                        rng,
                    )?);
                    probed = true;
                }
                let estimate = probe
                    .as_ref()
                    .expect("first step always probes (t % B == 1 at t = 1)");
                let pool = frozen_pool.as_ref().expect("pool refreshed with probe");
                let env_reward = mdp.env_reward().ok_or_else(|| {
                    Error::invalid("blackbox teaching requires an environment reward")
                })?;
                let selection = bbox_select(estimate, pool, mdp, env_reward)?;
                if cfg.record_audit {
                    audits.push(AuditRecord {
                        t,
                        pool: pool.clone(),
                        lambda_before: learner.lambda().to_owned(),
                        eta: learner.current_rate(),
                        estimate: Some(estimate.clone()),
                    });
                }
                selection
            }
            TeacherKind::Agnostic => {
                agnostic_select(mdp, expert_policy, cfg.horizon, rng)?
            }
        };

        let solver =
            OccupancySolver::new(mdp, learner.policy(), learner.solver_config().occupancy_tol)?;
        let update = learner_step_with(learner, mdp, &solver, &planner, &selection.demo)?;
        let step = TeachingStep {
            t,
            selection,
            probed,
            update,
        };
        on_step(t, learner, &step)?;
        steps.push(step);
    }
    Ok(RunLog { steps, audits })
}

// ─── Tests ──────────────────────────────────────────────────────────────────
