//! Bound verification and per-step metrics: the policy-smoothness bound,
//! the demonstration-richness decomposition, the occupancy total-variation
//! bound, and the row of quantities logged after every teaching step.

use ndarray::{Array1, Array2, ArrayView1};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::learner::LearnerState;
use crate::mdp::{
    expected_reward, occupancy_measure, tv_distance, tv_distance_vec, OccupancyMeasure,
    StochasticPolicy, TabularMdp,
};
use crate::reward::norm2;
use crate::teacher::TeachingStep;

/// Closed-form bound on the expected-reward gap of the soft policies of two
/// parameter vectors: `remax · √(8 m dist / (1-γ)⁵)`, where `m` is the
/// reward family's smoothness constant (`√d` for the linear family),
/// `remax = max |R^E|`, and `dist = ‖λ - λ′‖₂`.
pub fn smoothness_bound(m: f64, gamma: f64, remax: f64, dist: f64) -> f64 {
    remax * (8.0 * m / (1.0 - gamma).powi(5) * dist).sqrt()
}

/// Converts a target expected-reward accuracy `ε` into the parameter-space
/// accuracy `ε′ = (1-γ)⁵ ε² / (32 m remax²)` the teacher must steer to. For
/// logging — the premises behind the conversion are not checked here.
pub fn parameter_accuracy_for(eps: f64, m: f64, gamma: f64, remax: f64) -> f64 {
    (1.0 - gamma).powi(5) * eps * eps / (32.0 * m * remax * remax)
}

/// Worst allowed demonstration-direction residual for a target parameter
/// accuracy: `Δmax = ε′² β̄² / (4 η_max (4 (1-β̄) z + 1))`. For logging.
pub fn max_richness_residual(eps_prime: f64, beta_bar: f64, eta_max: f64, z: f64) -> f64 {
    eps_prime * eps_prime * beta_bar * beta_bar
        / (4.0 * eta_max * (4.0 * (1.0 - beta_bar) * z + 1.0))
}

/// Decomposition of a demonstration's feature expectation against the ideal
/// steering direction: `μ^ξ = μ^π - β (λ - λ*) + δ`.
#[derive(Debug, Clone)]
pub struct RichnessDecomposition {
    /// Projection coefficient, clamped to `[0, 1/η]`.
    pub beta: f64,
    pub delta: Array1<f64>,
    pub delta_norm: f64,
    /// Set when `λ = λ*`, where the direction is undefined and `beta` is 0
    /// by convention.
    pub degenerate: bool,
    /// Set when the unclamped projection fell outside `[0, 1/η]` — a sign
    /// the candidate pool points away from the target.
    pub clamped: bool,
}

/// Decomposes `μ^ξ - μ^π` into its component along `-(λ - λ*)` and the
/// residual: `β = clamp(⟨μ^π - μ^ξ, λ - λ*⟩ / ‖λ - λ*‖², 0, 1/η)` and
/// `δ = μ^ξ - μ^π + β (λ - λ*)`. When the clamp is inactive the
/// reconstruction `μ^ξ = μ^π - β (λ - λ*) + δ` is exact by construction.
pub fn richness_decompose(
    mu_pi: ArrayView1<'_, f64>,
    mu_xi: ArrayView1<'_, f64>,
    lambda: ArrayView1<'_, f64>,
    lambda_star: ArrayView1<'_, f64>,
    eta: f64,
) -> Result<RichnessDecomposition> {
    if mu_pi.len() != mu_xi.len() || lambda.len() != lambda_star.len() || mu_pi.len() != lambda.len()
    {
        return Err(Error::invalid("richness inputs must share one dimension"));
    }
    if !(eta > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let gap = &lambda.to_owned() - &lambda_star;
    let gap_sq: f64 = gap.iter().map(|x| x * x).sum();
    let diff = &mu_pi.to_owned() - &mu_xi;
    if gap_sq == 0.0 {
        let delta = -&diff;
        let delta_norm = norm2(delta.view());
        return Ok(RichnessDecomposition {
            beta: 0.0,
            delta,
            delta_norm,
            degenerate: true,
            clamped: false,
        });
    }
    let raw = diff.iter().zip(gap.iter()).map(|(a, b)| a * b).sum::<f64>() / gap_sq;
    let beta = raw.clamp(0.0, 1.0 / eta);
    let mut delta = -&diff;
    delta.scaled_add(beta, &gap);
    let delta_norm = norm2(delta.view());
    Ok(RichnessDecomposition {
        beta,
        delta,
        delta_norm,
        degenerate: false,
        clamped: raw != beta,
    })
}

/// Both sides of the occupancy total-variation bound
/// `D_TV(ρ^π, ρ^π′) ≤ (2/(1-γ)) max_s D_TV(π(·|s), π′(·|s))`, evaluated
/// exactly.
pub fn policy_tv_bound_check(
    mdp: &TabularMdp,
    pi_a: &StochasticPolicy,
    pi_b: &StochasticPolicy,
    tol: f64,
) -> Result<(f64, f64, bool)> {
    let occ_a = occupancy_measure(mdp, pi_a, mdp.initial_dist().view(), tol)?;
    let occ_b = occupancy_measure(mdp, pi_b, mdp.initial_dist().view(), tol)?;
    let lhs = tv_distance(&occ_a, &occ_b)?;
    let mut max_row = 0.0f64;
    for s in 0..mdp.n_states() {
        max_row = max_row.max(tv_distance_vec(pi_a.row(s), pi_b.row(s)));
    }
    let rhs = 2.0 / (1.0 - mdp.discount()) * max_row;
    Ok((lhs, rhs, lhs <= rhs + 1e-9))
}

/// One row of per-step metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Teaching step the row describes; 0 is the pre-teaching snapshot.
    pub t: usize,
    /// `‖λ_t - λ*‖₂`; absent when no target parameter is configured.
    pub lambda_dist: Option<f64>,
    /// `|ν^{expert} - ν^{student}|` from the full initial distribution.
    pub nu_gap_all: f64,
    /// Same gap with the initial distribution restricted to each task.
    pub nu_gap_by_task: BTreeMap<String, f64>,
    /// `D_TV(ρ^{expert}, ρ^{student})` from the full initial distribution.
    pub tv_dist: f64,
    /// Start state of the demonstration taught at this step.
    pub sel_state: Option<usize>,
    /// Task label of that start state (when the environment has tasks).
    pub sel_task: Option<String>,
    /// Teacher selection objective (omniscient/blackbox).
    pub objective: Option<f64>,
    /// Whether the teacher probed the student at this step.
    pub probed: bool,
}

/// Precomputed expert-side quantities shared by every metrics row of a run:
/// expert occupancies and expected rewards, overall and per task.
#[derive(Debug, Clone)]
pub struct MetricsContext {
    env_reward: Array2<f64>,
    expert_occupancy: OccupancyMeasure,
    nu_expert_all: f64,
    /// Task label → (restricted initial distribution, expert ν under it).
    per_task: BTreeMap<String, (Array1<f64>, f64)>,
    lambda_star: Option<Array1<f64>>,
    /// State → task label, for selection labeling.
    state_task: BTreeMap<usize, String>,
    tol: f64,
}

impl MetricsContext {
    /// `task_of`: task label per state (`None` for task-less states like the
    /// terminal). States sharing a label form one task group; the group's
    /// initial distribution is the MDP's, restricted to the group's states
    /// and renormalized.
    pub fn new(
        mdp: &TabularMdp,
        expert_policy: &StochasticPolicy,
        lambda_star: Option<Array1<f64>>,
        task_of: impl Fn(usize) -> Option<String>,
        tol: f64,
    ) -> Result<Self> {
        let env_reward = mdp
            .env_reward()
            .ok_or_else(|| Error::invalid("metrics require an environment reward"))?
            .clone();
        let expert_occupancy =
            occupancy_measure(mdp, expert_policy, mdp.initial_dist().view(), tol)?;
        let nu_expert_all = expected_reward(&expert_occupancy, &env_reward)?;

        let mut state_task = BTreeMap::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for s in 0..mdp.n_states() {
            if let Some(label) = task_of(s) {
                groups.entry(label.clone()).or_default().push(s);
                state_task.insert(s, label);
            }
        }
        let mut per_task = BTreeMap::new();
        for (label, states) in groups {
            let mut dist = Array1::<f64>::zeros(mdp.n_states());
            for &s in &states {
                dist[s] = mdp.initial_dist()[s];
            }
            let mass = dist.sum();
            if mass <= 0.0 {
                continue; // Task has no initial states; no per-task gap.
            }
            dist.mapv_inplace(|x| x / mass);
            let occ = occupancy_measure(mdp, expert_policy, dist.view(), tol)?;
            let nu = expected_reward(&occ, &env_reward)?;
            per_task.insert(label, (dist, nu));
        }
        Ok(MetricsContext {
            env_reward,
            expert_occupancy,
            nu_expert_all,
            per_task,
            lambda_star,
            state_task,
            tol,
        })
    }

    pub fn lambda_star(&self) -> Option<ArrayView1<'_, f64>> {
        self.lambda_star.as_ref().map(|l| l.view())
    }

    pub fn nu_expert(&self) -> f64 {
        self.nu_expert_all
    }

    pub fn task_labels(&self) -> impl Iterator<Item = &str> {
        self.per_task.keys().map(String::as_str)
    }

    pub fn task_of_state(&self, state: usize) -> Option<&str> {
        self.state_task.get(&state).map(String::as_str)
    }
}

/// Computes the metrics row for the student's current state. `step` is the
/// teaching step just applied (`None` for the `t = 0` snapshot).
pub fn metrics_row(
    mdp: &TabularMdp,
    ctx: &MetricsContext,
    learner: &LearnerState,
    t: usize,
    step: Option<&TeachingStep>,
) -> Result<MetricsRow> {
    let lambda_dist = ctx.lambda_star.as_ref().map(|target| {
        let gap = &learner.lambda().to_owned() - target;
        norm2(gap.view())
    });
    let student_occ =
        occupancy_measure(mdp, learner.policy(), mdp.initial_dist().view(), ctx.tol)?;
    let nu_student = expected_reward(&student_occ, &ctx.env_reward)?;
    let nu_gap_all = (ctx.nu_expert_all - nu_student).abs();
    let tv_dist = tv_distance(&ctx.expert_occupancy, &student_occ)?;

    let mut nu_gap_by_task = BTreeMap::new();
    for (label, (dist, nu_expert)) in &ctx.per_task {
        let occ = occupancy_measure(mdp, learner.policy(), dist.view(), ctx.tol)?;
        let nu = expected_reward(&occ, &ctx.env_reward)?;
        nu_gap_by_task.insert(label.clone(), (nu_expert - nu).abs());
    }

    Ok(MetricsRow {
        t,
        lambda_dist,
        nu_gap_all,
        nu_gap_by_task,
        tv_dist,
        sel_state: step.map(|s| s.selection.start_state),
        sel_task: step.and_then(|s| {
            ctx.task_of_state(s.selection.start_state)
                .map(str::to_owned)
        }),
        objective: step.and_then(|s| s.selection.objective),
        probed: step.is_some_and(|s| s.probed),
    })
}

// ─── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{LearnerState, LearningSchedule, SolverConfig};
    use crate::mdp::soft_value_iteration;
    use crate::reward::{ParameterBall, RewardModel, RewardVariant};
    use crate::testutil::{random_features, random_mdp, random_policy, random_reward};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smoothness_bound_matches_hand_computed_value() {
        // m = √8, γ = 0.5, remax = 10, dist = 0.01 → 26.91 ± 0.01.
        let bound = smoothness_bound(8f64.sqrt(), 0.5, 10.0, 0.01);
        assert!((bound - 26.91).abs() < 0.01, "bound {bound}");
        assert_eq!(smoothness_bound(2.0, 0.9, 5.0, 0.0), 0.0);
        // Monotone in dist and in m.
        assert!(smoothness_bound(2.0, 0.9, 5.0, 0.2) > smoothness_bound(2.0, 0.9, 5.0, 0.1));
        assert!(smoothness_bound(3.0, 0.9, 5.0, 0.1) > smoothness_bound(2.0, 0.9, 5.0, 0.1));
    }

    #[test]
    fn reward_gap_of_soft_policies_respects_the_smoothness_bound() {
        // 200 random parameter pairs on one random MDP with linear learner
        // rewards: the expected-reward gap never exceeds the bound.
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let n_states = 5;
        let n_actions = 3;
        let gamma = 0.8;
        let mdp = random_mdp(&mut rng, n_states, n_actions, gamma);
        let env_reward = random_reward(&mut rng, n_states, n_actions);
        let remax = env_reward.iter().fold(0.0f64, |m, &r| m.max(r.abs()));
        let dim = 3;
        let features = random_features(&mut rng, n_states, n_actions, dim);
        let model = RewardModel::new(RewardVariant::Linear, features);
        let m = (dim as f64).sqrt();

        let nu_of = |lambda: ArrayView1<'_, f64>| {
            let reward = model.reward_table(lambda).unwrap();
            let sol = soft_value_iteration(&mdp, &reward, 1e-10, 100_000).unwrap();
            let occ =
                occupancy_measure(&mdp, &sol.policy, mdp.initial_dist().view(), 1e-10).unwrap();
            expected_reward(&occ, &env_reward).unwrap()
        };

        for trial in 0..200 {
            let lambda = Array1::from_iter((0..dim).map(|_| rng.random_range(-2.0..2.0)));
            let mut other = lambda.clone();
            for x in other.iter_mut() {
                *x += rng.random_range(-0.5..0.5);
            }
            let dist = norm2((&lambda - &other).view());
            let gap = (nu_of(lambda.view()) - nu_of(other.view())).abs();
            let bound = smoothness_bound(m, gamma, remax, dist);
            assert!(gap <= bound + 1e-9, "trial {trial}: gap {gap} > bound {bound}");
        }
    }

    #[test]
    fn linear_reward_change_is_bounded_by_feature_norm_times_distance() {
        // max_{s,a} |R_λ - R_λ′| ≤ √d ‖λ - λ′‖ for features with ‖φ‖ ≤ √d.
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let dim = 4;
        let features = random_features(&mut rng, 5, 2, dim);
        let model = RewardModel::new(RewardVariant::Linear, features);
        for _ in 0..100 {
            let a = Array1::from_iter((0..dim).map(|_| rng.random_range(-2.0..2.0)));
            let b = Array1::from_iter((0..dim).map(|_| rng.random_range(-2.0..2.0)));
            let ra = model.reward_table(a.view()).unwrap();
            let rb = model.reward_table(b.view()).unwrap();
            let max_gap = ra
                .iter()
                .zip(rb.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            let dist = norm2((&a - &b).view());
            assert!(max_gap <= (dim as f64).sqrt() * dist + 1e-12);
        }
    }

    #[test]
    fn richness_decomposition_reconstructs_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        for _ in 0..50 {
            let dim = 4;
            let mu_pi = Array1::from_iter((0..dim).map(|_| rng.random_range(-1.0..1.0)));
            let mu_xi = Array1::from_iter((0..dim).map(|_| rng.random_range(-1.0..1.0)));
            let lambda = Array1::from_iter((0..dim).map(|_| rng.random_range(-1.0..1.0)));
            let star = Array1::from_iter((0..dim).map(|_| rng.random_range(-1.0..1.0)));
            let eta = 0.2;
            let d = richness_decompose(
                mu_pi.view(),
                mu_xi.view(),
                lambda.view(),
                star.view(),
                eta,
            )
            .unwrap();
            assert!((0.0..=1.0 / eta + 1e-12).contains(&d.beta));
            if !d.clamped {
                // μ^ξ = μ^π - β (λ - λ*) + δ must hold to 1e-12.
                let gap = &lambda - &star;
                let mut recon = mu_pi.clone();
                recon.scaled_add(-d.beta, &gap);
                recon += &d.delta;
                let err = norm2((&recon - &mu_xi).view());
                assert!(err < 1e-12, "reconstruction error {err}");
            }
        }
    }

    #[test]
    fn richness_recognizes_the_ideal_and_matching_demonstrations() {
        let mu_pi = array![0.5, -0.2, 0.1];
        let lambda = array![1.0, 0.0, -1.0];
        let star = array![0.0, 0.0, 0.0];
        let eta = 0.2;
        // μ^ξ = μ^π - (1/η)(λ - λ*): the strongest admissible pull, β = 1/η,
        // δ = 0.
        let gap = &lambda - &star;
        let mut ideal = mu_pi.clone();
        ideal.scaled_add(-1.0 / eta, &gap);
        let d =
            richness_decompose(mu_pi.view(), ideal.view(), lambda.view(), star.view(), eta)
                .unwrap();
        assert!((d.beta - 1.0 / eta).abs() < 1e-12);
        assert!(d.delta_norm < 1e-12);
        assert!(!d.degenerate);

        // μ^ξ = μ^π → β = 0, δ = 0.
        let d =
            richness_decompose(mu_pi.view(), mu_pi.view(), lambda.view(), star.view(), eta)
                .unwrap();
        assert_eq!(d.beta, 0.0);
        assert!(d.delta_norm < 1e-12);

        // λ = λ* is degenerate.
        let d = richness_decompose(mu_pi.view(), ideal.view(), star.view(), star.view(), eta)
            .unwrap();
        assert!(d.degenerate);
        assert_eq!(d.beta, 0.0);
    }

    #[test]
    fn occupancy_tv_bound_holds_on_random_policy_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        for trial in 0..200 {
            let n_states = rng.random_range(3..6);
            let n_actions = rng.random_range(2..4);
            let gamma = rng.random_range(0.1..0.95);
            let mdp = random_mdp(&mut rng, n_states, n_actions, gamma);
            let pi_a = random_policy(&mut rng, n_states, n_actions);
            let pi_b = random_policy(&mut rng, n_states, n_actions);
            let (lhs, rhs, holds) = policy_tv_bound_check(&mdp, &pi_a, &pi_b, 1e-10).unwrap();
            assert!(holds, "trial {trial}: lhs {lhs} > rhs {rhs}");
        }
    }

    #[test]
    fn identical_policies_have_zero_tv_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(94);
        let mdp = random_mdp(&mut rng, 4, 2, 0.9);
        let pi = random_policy(&mut rng, 4, 2);
        let (lhs, rhs, holds) = policy_tv_bound_check(&mdp, &pi, &pi, 1e-10).unwrap();
        assert!(lhs < 1e-9);
        assert_eq!(rhs, 0.0);
        assert!(holds);
    }

    #[test]
    fn theorem_constant_helpers_match_their_formulas() {
        let eps_prime = parameter_accuracy_for(0.5, 8f64.sqrt(), 0.9, 10.0);
        let expected = (0.1f64).powi(5) * 0.25 / (32.0 * 8f64.sqrt() * 100.0);
        assert!((eps_prime - expected).abs() < 1e-18);

        let dmax = max_richness_residual(1e-3, 0.5, 0.2, 100.0);
        let expected = 1e-6 * 0.25 / (4.0 * 0.2 * (4.0 * 0.5 * 100.0 + 1.0));
        assert!((dmax - expected).abs() < 1e-15);
    }

    #[test]
    fn metrics_rows_report_zero_gaps_for_a_perfect_student() {
        // Student policy = expert policy → ν-gaps and TV distance all zero;
        // λ_t = λ* → zero parameter distance.
        let mut rng = ChaCha8Rng::seed_from_u64(95);
        let base = random_mdp(&mut rng, 4, 2, 0.8);
        let dim = 3;
        let features = random_features(&mut rng, 4, 2, dim);
        let model = RewardModel::new(RewardVariant::Linear, features);
        let lambda = array![0.4, -0.2, 0.6];
        let env_reward = model.reward_table(lambda.view()).unwrap();
        let mdp = base.with_env_reward(env_reward).unwrap();

        let learner = LearnerState::new(
            &mdp,
            model,
            lambda.clone(),
            ParameterBall::new(100.0).unwrap(),
            LearningSchedule::Constant { value: 0.2 },
            SolverConfig::default(),
        )
        .unwrap();
        // Expert = the student's own soft policy, so every gap vanishes.
        let expert = learner.policy().clone();
        let task_of = |s: usize| if s < 2 { Some("A".to_owned()) } else { Some("B".to_owned()) };
        let ctx = MetricsContext::new(&mdp, &expert, Some(lambda.clone()), task_of, 1e-10).unwrap();
        let row = metrics_row(&mdp, &ctx, &learner, 0, None).unwrap();
        assert_eq!(row.t, 0);
        assert!(row.lambda_dist.unwrap() < 1e-12);
        assert!(row.nu_gap_all < 1e-8);
        assert!(row.tv_dist < 1e-8);
        for gap in row.nu_gap_by_task.values() {
            assert!(*gap < 1e-8);
        }
        assert_eq!(row.sel_state, None);
        assert_eq!(row.sel_task, None);
        assert!(!row.probed);
    }

    #[test]
    fn metrics_gaps_match_independent_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(96);
        let base = random_mdp(&mut rng, 5, 2, 0.85);
        let env_reward = random_reward(&mut rng, 5, 2);
        let mdp = base.with_env_reward(env_reward.clone()).unwrap();
        let expert = random_policy(&mut rng, 5, 2);
        let features = random_features(&mut rng, 5, 2, 3);
        let model = RewardModel::new(RewardVariant::Linear, features);
        let learner = LearnerState::new(
            &mdp,
            model,
            array![0.3, -0.3, 0.2],
            ParameterBall::new(100.0).unwrap(),
            LearningSchedule::Constant { value: 0.2 },
            SolverConfig::default(),
        )
        .unwrap();
        let ctx = MetricsContext::new(&mdp, &expert, None, |_| None, 1e-10).unwrap();
        let row = metrics_row(&mdp, &ctx, &learner, 3, None).unwrap();
        assert_eq!(row.lambda_dist, None);
        assert!(row.nu_gap_by_task.is_empty());

        // Recompose the overall gap by hand.
        let occ_e = occupancy_measure(&mdp, &expert, mdp.initial_dist().view(), 1e-10).unwrap();
        let occ_l =
            occupancy_measure(&mdp, learner.policy(), mdp.initial_dist().view(), 1e-10).unwrap();
        let nu_e = expected_reward(&occ_e, &env_reward).unwrap();
        let nu_l = expected_reward(&occ_l, &env_reward).unwrap();
        assert!((row.nu_gap_all - (nu_e - nu_l).abs()).abs() < 1e-10);
        assert!((row.tv_dist - tv_distance(&occ_e, &occ_l).unwrap()).abs() < 1e-10);
    }
}
