//! Config-driven experiment execution: environment preparation, target and
//! warm-up parameter fits, per-seed teaching runs, and the output files.

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

use demoteach_core::analysis::{metrics_row, MetricsContext, MetricsRow};
use demoteach_core::car::{generate_environment, teacher_policy};
use demoteach_core::io::{load_environment, EnvironmentDoc};
use demoteach_core::learner::{
    compute_lambda_star, fit_to_demos, lambda_init_for, sample_demo_budget,
    sample_demonstrations, FitConfig, LambdaStarConfig, LambdaStarResult, LearnerState,
    SolverConfig,
};
use demoteach_core::mdp::{StochasticPolicy, TabularMdp};
use demoteach_core::reward::{ParameterBall, RewardModel};
use demoteach_core::teacher::{teaching_loop, TeacherKind, TeachingConfig};

use crate::config::{EnvironmentSpec, ExperimentConfig, TeacherSpec, WarmupSpec};
use crate::export;

/// MDP, expert, learner feature map, and task labels, ready to run.
pub struct PreparedEnvironment {
    pub mdp: TabularMdp,
    pub model: RewardModel,
    pub expert: StochasticPolicy,
    /// Task label per state (`None` for label-less states).
    pub task_labels: Vec<Option<String>>,
}

/// Builds the environment an experiment runs in. Car environments are
/// generated from their own seed; file environments are loaded and must
/// carry an environment reward (the expert is its optimal policy).
pub fn prepare_environment(cfg: &ExperimentConfig) -> Result<PreparedEnvironment> {
    let (mdp, features, task_labels) = match &cfg.environment {
        EnvironmentSpec::Car { config, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let env = generate_environment(config, &mut rng)?;
            let labels = (0..env.n_states())
                .map(|s| env.task_of(s).map(|t| t.to_string()))
                .collect();
            (env.mdp, env.features, labels)
        }
        EnvironmentSpec::File { path } => {
            let doc = load_environment(path)
                .with_context(|| format!("loading environment {}", path.display()))?;
            let mdp = doc.mdp()?;
            let features = doc.feature_map()?;
            let labels = doc
                .task_labels()
                .map(<[Option<String>]>::to_vec)
                .unwrap_or_else(|| vec![None; mdp.n_states()]);
            (mdp, features, labels)
        }
    };
    if mdp.env_reward().is_none() {
        bail!("the environment carries no reward to teach from");
    }
    let expert = teacher_policy(&mdp, cfg.solver_tol)?;
    let model = RewardModel::new(cfg.learner.variant, features);
    Ok(PreparedEnvironment {
        mdp,
        model,
        expert,
        task_labels,
    })
}

/// Computes the feature-matching target when the config enables it. Seeded
/// independently of run seeds so every seed (and every teacher variant under
/// the same target settings) steers toward the same parameters.
pub fn compute_target(
    cfg: &ExperimentConfig,
    env: &PreparedEnvironment,
) -> Result<Option<LambdaStarResult>> {
    let Some(spec) = cfg.lambda_star.as_ref().filter(|s| s.enabled) else {
        return Ok(None);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let star_cfg = LambdaStarConfig {
        eps_tilde: spec.eps_tilde,
        delta: spec.delta,
        fit: FitConfig {
            grad_tol: spec.grad_tol,
            max_iters: spec.max_iters,
            ..FitConfig::default()
        },
    };
    let result = compute_lambda_star(&env.mdp, &env.model, &env.expert, &star_cfg, &mut rng)?;
    Ok(Some(result))
}

/// Fits the student's initial parameters to expert demonstrations drawn only
/// from the warm-up tasks' start states.
fn warmup_lambda(
    env: &PreparedEnvironment,
    warmup: &WarmupSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Array1<f64>> {
    let n = env.mdp.n_states();
    let mut dist = Array1::<f64>::zeros(n);
    for s in 0..n {
        let labeled = env.task_labels[s]
            .as_ref()
            .is_some_and(|l| warmup.tasks.contains(l));
        if labeled && env.mdp.initial_dist()[s] > 0.0 {
            dist[s] = 1.0;
        }
    }
    let mass = dist.sum();
    if mass <= 0.0 {
        bail!(
            "no start states match the warm-up tasks {:?}",
            warmup.tasks
        );
    }
    dist.mapv_inplace(|x| x / mass);

    let budget = sample_demo_budget(
        env.model.features().dim(),
        0.5,
        0.1,
        env.mdp.discount(),
    )?;
    let count = warmup.demos.unwrap_or(budget.demos);
    let horizon = warmup.horizon.unwrap_or(budget.horizon);
    let demos = sample_demonstrations(&env.mdp, &env.expert, dist.view(), count, horizon, rng)?;
    let init = lambda_init_for(&env.model, rng);
    let fit_cfg = FitConfig {
        grad_tol: warmup.grad_tol,
        max_iters: warmup.max_iters,
        ..FitConfig::default()
    };
    let fit = fit_to_demos(&env.mdp, &env.model, &demos, init, &fit_cfg)?;
    Ok(fit.lambda)
}

/// One completed seed: the metrics log and the student's final parameters.
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub final_lambda: Array1<f64>,
    pub wall_ms: u128,
}

/// Runs one seed end to end: warm-up (or default) initialization, the
/// teaching loop, and a metrics row per step (row 0 is the pre-teaching
/// snapshot).
pub fn run_seed(
    cfg: &ExperimentConfig,
    env: &PreparedEnvironment,
    ctx: &MetricsContext,
    lambda_star: Option<&Array1<f64>>,
    seed: u64,
) -> Result<SeedRun> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let lambda1 = match &cfg.learner.warmup {
        Some(warmup) => warmup_lambda(env, warmup, &mut rng)?,
        None => lambda_init_for(&env.model, &mut rng),
    };
    let solver = SolverConfig {
        soft_tol: cfg.solver_tol,
        occupancy_tol: cfg.solver_tol,
    };
    let mut learner = LearnerState::new(
        &env.mdp,
        env.model.clone(),
        lambda1,
        ParameterBall::new(cfg.learner.projection_radius)?,
        cfg.learner.schedule,
        solver,
    )?;

    let teacher = match &cfg.teacher {
        TeacherSpec::Omniscient => TeacherKind::Omniscient {
            lambda_star: lambda_star
                .ok_or_else(|| anyhow!("omniscient teacher requires lambda_star"))?
                .clone(),
        },
        TeacherSpec::Blackbox {
            probe_interval,
            probe_rollouts,
        } => TeacherKind::Blackbox {
            probe_interval: *probe_interval,
            probe_rollouts: *probe_rollouts,
        },
        TeacherSpec::Agnostic => TeacherKind::Agnostic,
    };

    let mut rows = vec![metrics_row(&env.mdp, ctx, &learner, 0, None)?];
    let teach_cfg = TeachingConfig {
        pool_size: cfg.pool_size,
        horizon: cfg.horizon,
        steps: cfg.steps,
        record_audit: false,
    };
    teaching_loop(
        &env.mdp,
        &env.expert,
        &teacher,
        &mut learner,
        &teach_cfg,
        &mut rng,
        |t, state, step| {
            rows.push(metrics_row(&env.mdp, ctx, state, t, Some(step))?);
            Ok(())
        },
    )?;

    Ok(SeedRun {
        seed,
        rows,
        final_lambda: learner.lambda().to_owned(),
        wall_ms: started.elapsed().as_millis(),
    })
}

/// Builds the metrics context shared by every seed of an experiment.
pub fn metrics_context(
    cfg: &ExperimentConfig,
    env: &PreparedEnvironment,
    lambda_star: Option<&Array1<f64>>,
) -> Result<MetricsContext> {
    let labels = env.task_labels.clone();
    Ok(MetricsContext::new(
        &env.mdp,
        &env.expert,
        lambda_star.cloned(),
        move |s| labels[s].clone(),
        cfg.solver_tol,
    )?)
}

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum SeedRecord {
    Ok {
        seed: u64,
        csv: String,
        wall_ms: u128,
        final_lambda: Vec<f64>,
    },
    Error {
        seed: u64,
        reason: String,
    },
}

#[derive(Debug, Serialize)]
struct TargetRecord {
    lambda: Vec<f64>,
    residual: f64,
    iterations: usize,
    demos: usize,
    horizon: usize,
}

#[derive(Debug, Serialize)]
struct RunDocument<'a> {
    config_hash: String,
    config: &'a ExperimentConfig,
    lambda_star: Option<TargetRecord>,
    seeds: Vec<SeedRecord>,
    total_wall_ms: u128,
}

/// Outcome summary returned to the CLI.
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub ok_seeds: Vec<u64>,
    pub failed_seeds: Vec<(u64, String)>,
    pub lambda_star_residual: Option<f64>,
}

/// Sorted task ids that carry start states — the per-task CSV columns.
pub fn task_ids(ctx: &MetricsContext) -> Vec<String> {
    ctx.task_labels().map(str::to_owned).collect()
}

/// Runs every seed of an experiment and writes `seed_<n>.csv` per seed,
/// `aggregate.csv` across seeds, and `run.json`. A failing seed is recorded
/// and skipped; the remaining seeds still run.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_override: Option<&Path>,
    seeds_override: Option<&[u64]>,
) -> Result<RunSummary> {
    let started = Instant::now();
    let out_dir = out_override.unwrap_or(cfg.output_dir.as_path()).to_owned();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let env = prepare_environment(cfg)?;
    let target = compute_target(cfg, &env)?;
    let lambda_star = target.as_ref().map(|t| t.lambda.clone());
    let ctx = metrics_context(cfg, &env, lambda_star.as_ref())?;
    let ids = task_ids(&ctx);

    let seeds: Vec<u64> = seeds_override.unwrap_or(&cfg.seeds).to_vec();
    let mut records = Vec::new();
    let mut completed: Vec<(u64, Vec<MetricsRow>)> = Vec::new();
    let mut ok_seeds = Vec::new();
    let mut failed_seeds = Vec::new();
    for &seed in &seeds {
        match run_seed(cfg, &env, &ctx, lambda_star.as_ref(), seed) {
            Ok(run) => {
                let csv_name = format!("seed_{seed}.csv");
                export::write_rows(out_dir.join(&csv_name), &ids, &run.rows)?;
                records.push(SeedRecord::Ok {
                    seed,
                    csv: csv_name,
                    wall_ms: run.wall_ms,
                    final_lambda: run.final_lambda.to_vec(),
                });
                completed.push((seed, run.rows));
                ok_seeds.push(seed);
            }
            Err(err) => {
                records.push(SeedRecord::Error {
                    seed,
                    reason: format!("{err:#}"),
                });
                failed_seeds.push((seed, format!("{err:#}")));
            }
        }
    }

    if !completed.is_empty() {
        let rows_only: Vec<Vec<MetricsRow>> =
            completed.iter().map(|(_, rows)| rows.clone()).collect();
        let aggs = export::aggregate(&rows_only)?;
        export::write_aggregate(out_dir.join("aggregate.csv"), &ids, &aggs)?;
    }

    let doc = RunDocument {
        config_hash: cfg.hash(),
        config: cfg,
        lambda_star: target.as_ref().map(|t| TargetRecord {
            lambda: t.lambda.to_vec(),
            residual: t.residual,
            iterations: t.iterations,
            demos: t.budget.demos,
            horizon: t.budget.horizon,
        }),
        seeds: records,
        total_wall_ms: started.elapsed().as_millis(),
    };
    std::fs::write(
        out_dir.join("run.json"),
        serde_json::to_string_pretty(&doc).context("serializing run.json")?,
    )?;

    Ok(RunSummary {
        out_dir,
        config_hash: cfg.hash(),
        ok_seeds,
        failed_seeds,
        lambda_star_residual: target.as_ref().map(|t| t.residual),
    })
}

/// Generates the configured car environment and writes it as an environment
/// document. `seed_override` replaces the config's generation seed.
pub fn generate_environment_file(
    cfg: &ExperimentConfig,
    out_path: &Path,
    seed_override: Option<u64>,
) -> Result<EnvironmentDoc> {
    let EnvironmentSpec::Car { config, seed } = &cfg.environment else {
        bail!("gen-env needs an environment of kind \"car\" in the config");
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed_override.unwrap_or(*seed));
    let env = generate_environment(config, &mut rng)?;
    let doc = EnvironmentDoc::from_car(&env)?;
    demoteach_core::io::save_environment(out_path, &doc)
        .with_context(|| format!("writing {}", out_path.display()))?;
    Ok(doc)
}

// ─── Tests ──────────────────────────────────────────────────────────────────
