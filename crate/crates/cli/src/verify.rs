//! The `verify` subcommand: self-contained property checks over freshly
//! sampled instances. `quick` runs reduced sweeps; `full` runs the complete
//! sweeps plus the Monte-Carlo and feature-matching checks.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use demoteach_core::analysis::{policy_tv_bound_check, smoothness_bound};
use demoteach_core::car::{
    generate_environment, teacher_policy, CarMdpConfig, TaskId, TeacherRewardKind,
    LINEAR_WEIGHTS,
};
use demoteach_core::learner::{
    apply_gradient, compute_lambda_star, demo_fit_objective, nll_loss_and_gradient,
    FitConfig, LambdaStarConfig, LearnerState, LearningSchedule, SolverConfig,
};
use demoteach_core::mdp::{
    demo_occupancy, occupancy_measure, rollout, soft_value_iteration, Demonstration,
    OccupancyMeasure, StochasticPolicy, TabularMdp,
};
use demoteach_core::reward::{norm2_pub as _, ParameterBall, RewardModel, RewardVariant};
use demoteach_core::teacher::{
    bbox_select, omni_select, teaching_loop, TeacherKind, TeachingConfig,
};

/// Verification depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    Quick,
    Full,
}

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn pass(name: &'static str, detail: impl Into<String>) -> Self {
        CheckReport {
            name,
            passed: true,
            detail: detail.into(),
        }
    }

    fn fail(name: &'static str, detail: impl Into<String>) -> Self {
        CheckReport {
            name,
            passed: false,
            detail: detail.into(),
        }
    }
}

// ─── Small random instances ─────────────────────────────────────────────────

fn random_dist<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> TabularMdp {
    let mut transition = Array3::<f64>::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            for (s2, p) in random_dist(rng, n_states).into_iter().enumerate() {
                transition[[s, a, s2]] = p;
            }
        }
    }
    let initial = Array1::from_vec(random_dist(rng, n_states));
    TabularMdp::new(transition, gamma, initial, None).expect("random MDP is valid")
}

fn random_policy<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
) -> StochasticPolicy {
    let mut probs = Array2::<f64>::zeros((n_states, n_actions));
    for s in 0..n_states {
        for (a, p) in random_dist(rng, n_actions).into_iter().enumerate() {
            probs[[s, a]] = p;
        }
    }
    StochasticPolicy::from_probs(probs).expect("random policy is valid")
}

fn random_model<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    dim: usize,
    variant: RewardVariant,
) -> RewardModel {
    let features = Array3::from_shape_fn((n_states, n_actions, dim), |_| {
        rng.random_range(0.0..1.0)
    });
    RewardModel::new(
        variant,
        demoteach_core::reward::FeatureMap::new(features).expect("features valid"),
    )
}

fn norm2(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ─── Checks ─────────────────────────────────────────────────────────────────

fn check_occupancy_normalization(level: VerifyLevel) -> CheckReport {
    let name = "occupancy-normalization";
    let trials = if level == VerifyLevel::Quick { 20 } else { 100 };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..trials {
        let n_states = rng.random_range(2..8);
        let n_actions = rng.random_range(2..4);
        let gamma = rng.random_range(0.05..0.95);
        let mdp = random_mdp(&mut rng, n_states, n_actions, gamma);
        let policy = random_policy(&mut rng, n_states, n_actions);
        let occ = match occupancy_measure(&mdp, &policy, mdp.initial_dist().view(), 1e-12) {
            Ok(occ) => occ,
            Err(err) => return CheckReport::fail(name, format!("trial {trial}: {err}")),
        };
        let mass = occ.total_mass();
        if (mass - 1.0).abs() > 1e-8 {
            return CheckReport::fail(
                name,
                format!("trial {trial}: occupancy mass {mass} differs from 1"),
            );
        }
    }
    CheckReport::pass(name, format!("{trials} random (MDP, policy) pairs"))
}

fn check_gradient_fd(level: VerifyLevel, corrupt: bool) -> CheckReport {
    let name = "gradient-finite-difference";
    let instances = if level == VerifyLevel::Quick { 5 } else { 25 };
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let solver = SolverConfig {
        soft_tol: 1e-12,
        occupancy_tol: 1e-12,
    };
    let h = 1e-5;
    for trial in 0..instances {
        for variant in [RewardVariant::Linear, RewardVariant::Quadratic] {
            let n_states = rng.random_range(2..7);
            let n_actions = rng.random_range(2..4);
            let gamma = rng.random_range(0.1..0.9);
            let mdp = random_mdp(&mut rng, n_states, n_actions, gamma);
            let model = random_model(&mut rng, n_states, n_actions, 3, variant);
            let policy = random_policy(&mut rng, n_states, n_actions);
            let demo = rollout(&mdp, &policy, 0, 6, &mut rng).expect("rollout");
            let lambda = Array1::from_iter(
                (0..model.param_dim()).map(|_| rng.random_range(-1.0..1.0)),
            );

            let (_, mut grad) =
                match nll_loss_and_gradient(&mdp, &model, &demo, lambda.view(), solver) {
                    Ok(pair) => pair,
                    Err(err) => return CheckReport::fail(name, format!("trial {trial}: {err}")),
                };
            if corrupt {
                // Negative-control fault injection: a deliberately wrong
                // gradient must make this check fail.
                grad[0] += 1e-3;
            }
            let mut fd = Array1::<f64>::zeros(grad.len());
            for i in 0..grad.len() {
                let mut plus = lambda.clone();
                plus[i] += h;
                let mut minus = lambda.clone();
                minus[i] -= h;
                let up = demo_fit_objective(&mdp, &model, &demo, plus.view(), solver)
                    .expect("objective");
                let down = demo_fit_objective(&mdp, &model, &demo, minus.view(), solver)
                    .expect("objective");
                fd[i] = (up - down) / (2.0 * h);
            }
            let rel = norm2(&(&grad - &fd)) / norm2(&fd).max(1e-12);
            if rel > 1e-4 {
                return CheckReport::fail(
                    name,
                    format!("trial {trial} ({variant:?}): relative error {rel:.2e} > 1e-4"),
                );
            }
        }
    }
    CheckReport::pass(
        name,
        format!("{instances} random MDPs x 2 reward families, rel err ≤ 1e-4"),
    )
}

fn check_smoothness_bound(level: VerifyLevel) -> CheckReport {
    let name = "policy-smoothness-bound";
    let trials = if level == VerifyLevel::Quick { 20 } else { 200 };
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let n_states = 5;
    let n_actions = 3;
    let gamma = 0.8;
    let dim = 3;
    let mdp = random_mdp(&mut rng, n_states, n_actions, gamma);
    let env_reward =
        Array2::from_shape_fn((n_states, n_actions), |_| rng.random_range(-1.0..1.0));
    let remax = env_reward.iter().fold(0.0f64, |m, &r| m.max(r.abs()));
    let model = random_model(&mut rng, n_states, n_actions, dim, RewardVariant::Linear);
    let m = (dim as f64).sqrt();

    let nu_of = |lambda: &Array1<f64>| {
        let reward = model.reward_table(lambda.view()).expect("reward");
        let sol = soft_value_iteration(&mdp, &reward, 1e-10, 100_000).expect("soft VI");
        let occ = occupancy_measure(&mdp, &sol.policy, mdp.initial_dist().view(), 1e-10)
            .expect("occupancy");
        occ.table()
            .indexed_iter()
            .map(|((s, a), &rho)| rho * env_reward[[s, a]])
            .sum::<f64>()
            / (1.0 - gamma)
    };

    for trial in 0..trials {
        let lambda = Array1::from_iter((0..dim).map(|_| rng.random_range(-2.0..2.0)));
        let mut other = lambda.clone();
        for x in other.iter_mut() {
            *x += rng.random_range(-0.5..0.5);
        }
        let dist = norm2(&(&lambda - &other));
        let gap = (nu_of(&lambda) - nu_of(&other)).abs();
        let bound = smoothness_bound(m, gamma, remax, dist);
        if gap > bound + 1e-9 {
            return CheckReport::fail(
                name,
                format!("trial {trial}: gap {gap:.6} exceeds bound {bound:.6}"),
            );
        }
    }
    CheckReport::pass(name, format!("{trials} parameter pairs within the bound"))
}

fn check_tv_bound(level: VerifyLevel) -> CheckReport {
    let name = "occupancy-tv-bound";
    let trials = if level == VerifyLevel::Quick { 20 } else { 200 };
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for trial in 0..trials {
        let n_states = rng.random_range(3..6);
        let n_actions = rng.random_range(2..4);
        let gamma = rng.random_range(0.1..0.95);
        let mdp = random_mdp(&mut rng, n_states, n_actions, gamma);
        let pi_a = random_policy(&mut rng, n_states, n_actions);
        let pi_b = random_policy(&mut rng, n_states, n_actions);
        match policy_tv_bound_check(&mdp, &pi_a, &pi_b, 1e-10) {
            Ok((lhs, rhs, holds)) if holds => {
                let _ = (lhs, rhs);
            }
            Ok((lhs, rhs, _)) => {
                return CheckReport::fail(
                    name,
                    format!("trial {trial}: {lhs:.6} > {rhs:.6}"),
                )
            }
            Err(err) => return CheckReport::fail(name, format!("trial {trial}: {err}")),
        }
    }
    CheckReport::pass(name, format!("{trials} policy pairs within the bound"))
}

fn check_selection_brute_force() -> CheckReport {
    let name = "selection-brute-force";
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let config = CarMdpConfig {
        tasks: vec![TaskId::T0, TaskId::T1],
        lanes_per_task: 1,
        rows: 5,
        cols: 2,
        reward: TeacherRewardKind::Linear,
        ..CarMdpConfig::default()
    };
    let env = match generate_environment(&config, &mut rng) {
        Ok(env) => env,
        Err(err) => return CheckReport::fail(name, err.to_string()),
    };
    let expert = match teacher_policy(&env.mdp, 1e-10) {
        Ok(p) => p,
        Err(err) => return CheckReport::fail(name, err.to_string()),
    };
    let model = RewardModel::new(RewardVariant::Linear, env.features.clone());
    let lambda_star = Array1::from_vec(LINEAR_WEIGHTS.to_vec());
    let solver = SolverConfig::default();
    let schedule = LearningSchedule::Constant { value: 0.2 };
    let ball = ParameterBall::new(100.0).expect("radius");
    let cfg = TeachingConfig {
        pool_size: 3,
        horizon: 10,
        steps: 10,
        record_audit: true,
    };

    // Omniscient run: replay each audited step with a freshly constructed
    // student at the recorded parameters and compare selections.
    let mut learner = LearnerState::new(
        &env.mdp,
        model.clone(),
        Array1::zeros(model.param_dim()),
        ball,
        schedule,
        solver,
    )
    .expect("learner");
    let teacher = TeacherKind::Omniscient {
        lambda_star: lambda_star.clone(),
    };
    let log = match teaching_loop(
        &env.mdp,
        &expert,
        &teacher,
        &mut learner,
        &cfg,
        &mut rng,
        |_, _, _| Ok(()),
    ) {
        Ok(log) => log,
        Err(err) => return CheckReport::fail(name, err.to_string()),
    };
    for (step, audit) in log.steps.iter().zip(&log.audits) {
        let replay_state = LearnerState::new(
            &env.mdp,
            model.clone(),
            audit.lambda_before.clone(),
            ball,
            schedule,
            solver,
        )
        .expect("replay state");
        let replay = match omni_select(&replay_state, &audit.pool, lambda_star.view(), &env.mdp)
        {
            Ok(sel) => sel,
            Err(err) => return CheckReport::fail(name, err.to_string()),
        };
        if replay.start_state != step.selection.start_state
            || replay.demo != step.selection.demo
        {
            return CheckReport::fail(
                name,
                format!("omniscient selection diverges at step {}", step.t),
            );
        }
    }

    // Blackbox run: replay from the recorded probe estimate and pool.
    let mut learner = LearnerState::new(
        &env.mdp,
        model.clone(),
        Array1::zeros(model.param_dim()),
        ball,
        schedule,
        solver,
    )
    .expect("learner");
    let teacher = TeacherKind::Blackbox {
        probe_interval: 3,
        probe_rollouts: 3,
    };
    let log = match teaching_loop(
        &env.mdp,
        &expert,
        &teacher,
        &mut learner,
        &cfg,
        &mut rng,
        |_, _, _| Ok(()),
    ) {
        Ok(log) => log,
        Err(err) => return CheckReport::fail(name, err.to_string()),
    };
    let env_reward = env.mdp.env_reward().expect("car env has a reward");
    for (step, audit) in log.steps.iter().zip(&log.audits) {
        let estimate = audit.estimate.as_ref().expect("blackbox audit estimate");
        let replay = match bbox_select(estimate, &audit.pool, &env.mdp, env_reward) {
            Ok(sel) => sel,
            Err(err) => return CheckReport::fail(name, err.to_string()),
        };
        if replay.start_state != step.selection.start_state
            || replay.demo != step.selection.demo
        {
            return CheckReport::fail(
                name,
                format!("blackbox selection diverges at step {}", step.t),
            );
        }
    }
    CheckReport::pass(name, "10-step omniscient and blackbox replays agree")
}

fn check_synthetic_contraction() -> CheckReport {
    let name = "synthetic-contraction";
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mdp = random_mdp(&mut rng, 4, 2, 0.8);
    let model = random_model(&mut rng, 4, 2, 3, RewardVariant::Linear);
    let lambda_star = Array1::from_vec(vec![0.6, -0.4, 0.2]);
    let eta = 0.2;
    let beta = 2.0;
    let mut state = LearnerState::new(
        &mdp,
        model,
        Array1::from_vec(vec![2.0, 1.0, -1.5]),
        ParameterBall::new(100.0).expect("radius"),
        LearningSchedule::Constant { value: eta },
        SolverConfig::default(),
    )
    .expect("state");
    let initial = norm2(&(&state.lambda().to_owned() - &lambda_star));
    let factor = 1.0 - eta * beta;
    for t in 1..=100usize {
        let gradient = (&state.lambda().to_owned() - &lambda_star) * beta;
        if let Err(err) = apply_gradient(&mut state, &mdp, gradient) {
            return CheckReport::fail(name, err.to_string());
        }
        let dist = norm2(&(&state.lambda().to_owned() - &lambda_star));
        let bound = factor.powi(t as i32) * initial + 1e-9;
        if dist > bound {
            return CheckReport::fail(
                name,
                format!("step {t}: distance {dist:.3e} above {bound:.3e}"),
            );
        }
    }
    CheckReport::pass(name, "100 zero-residual steps contract geometrically")
}

fn check_occupancy_monte_carlo() -> CheckReport {
    let name = "occupancy-monte-carlo";
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let n_rollouts = 100_000;
    for trial in 0..3 {
        let n_states = rng.random_range(2..5);
        let n_actions = 2;
        let gamma = rng.random_range(0.3..0.8);
        let mdp = random_mdp(&mut rng, n_states, n_actions, gamma);
        let policy = random_policy(&mut rng, n_states, n_actions);
        let exact = occupancy_measure(&mdp, &policy, mdp.initial_dist().view(), 1e-12)
            .expect("occupancy");
        // Truncation long enough that the missing tail mass is negligible
        // next to Monte-Carlo noise.
        let horizon = ((-12.0) / gamma.ln()).ceil() as usize;
        let tail = gamma.powi(horizon as i32);

        let mut sums = Array2::<f64>::zeros((n_states, n_actions));
        let mut sq_sums = Array2::<f64>::zeros((n_states, n_actions));
        for _ in 0..n_rollouts {
            let start = sample_from(mdp.initial_dist().view(), &mut rng);
            let demo = rollout(&mdp, &policy, start, horizon, &mut rng).expect("rollout");
            let occ = demo_occupancy(&mdp, &demo).expect("demo occupancy");
            for ((s, a), &v) in occ.table().indexed_iter() {
                sums[[s, a]] += v;
                sq_sums[[s, a]] += v * v;
            }
        }
        let n = n_rollouts as f64;
        for ((s, a), &total) in sums.indexed_iter() {
            let mean = total / n;
            let var = (sq_sums[[s, a]] / n - mean * mean).max(0.0) * n / (n - 1.0);
            let se = (var / n).sqrt();
            let diff = (mean - exact.table()[[s, a]]).abs();
            if diff > 3.0 * se + tail {
                return CheckReport::fail(
                    name,
                    format!(
                        "trial {trial} entry ({s},{a}): |{mean:.6} - {:.6}| = {diff:.2e} \
                         beyond 3·SE ({se:.2e}) + tail ({tail:.2e})",
                        exact.table()[[s, a]]
                    ),
                );
            }
        }
    }
    CheckReport::pass(name, "3 instances x 100k rollouts within 3 SE")
}

fn sample_from<R: Rng + ?Sized>(probs: ndarray::ArrayView1<'_, f64>, rng: &mut R) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn check_feature_matching() -> CheckReport {
    let name = "feature-matching";
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let config = CarMdpConfig {
        tasks: vec![TaskId::T0],
        lanes_per_task: 1,
        rows: 10,
        cols: 2,
        reward: TeacherRewardKind::Linear,
        ..CarMdpConfig::default()
    };
    let env = match generate_environment(&config, &mut rng) {
        Ok(env) => env,
        Err(err) => return CheckReport::fail(name, err.to_string()),
    };
    let expert = match teacher_policy(&env.mdp, 1e-10) {
        Ok(p) => p,
        Err(err) => return CheckReport::fail(name, err.to_string()),
    };
    let model = RewardModel::new(RewardVariant::Linear, env.features.clone());
    let cfg = LambdaStarConfig {
        fit: FitConfig {
            grad_tol: 5e-4,
            ..FitConfig::default()
        },
        ..LambdaStarConfig::default()
    };
    match compute_lambda_star(&env.mdp, &model, &expert, &cfg, &mut rng) {
        Ok(result) if result.residual < 1e-3 => CheckReport::pass(
            name,
            format!(
                "feature-matching residual {:.2e} after {} iterations",
                result.residual, result.iterations
            ),
        ),
        Ok(result) => CheckReport::fail(
            name,
            format!("residual {:.2e} not below 1e-3", result.residual),
        ),
        Err(err) => CheckReport::fail(name, err.to_string()),
    }
}

/// Runs the suite. `corrupt_gradient` injects a deliberate gradient error —
/// the negative control that must turn the suite red.
pub fn run_checks(level: VerifyLevel, corrupt_gradient: bool) -> Vec<CheckReport> {
    let mut reports = vec![
        check_occupancy_normalization(level),
        check_gradient_fd(level, corrupt_gradient),
        check_smoothness_bound(level),
        check_tv_bound(level),
        check_selection_brute_force(),
        check_synthetic_contraction(),
    ];
    if level == VerifyLevel::Full {
        reports.push(check_occupancy_monte_carlo());
        reports.push(check_feature_matching());
    }
    reports
}

// ─── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes_clean() {
        let reports = run_checks(VerifyLevel::Quick, false);
        for report in &reports {
            assert!(report.passed, "{}: {}", report.name, report.detail);
        }
        assert_eq!(reports.len(), 6);
    }

    #[test]
    fn corrupted_gradient_turns_exactly_that_check_red() {
        let reports = run_checks(VerifyLevel::Quick, true);
        let failing: Vec<_> = reports.iter().filter(|r| !r.passed).collect();
        assert_eq!(failing.len(), 1);
        assert_eq!(failing[0].name, "gradient-finite-difference");
    }
}
