//! Experiment configuration: the JSON schema the `run`, `lambda-star`, and
//! `gen-env` subcommands consume, plus validation and canonical hashing.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use demoteach_core::car::CarMdpConfig;
use demoteach_core::learner::LearningSchedule;
use demoteach_core::reward::RewardVariant;

/// Where the MDP comes from: generated on the fly or loaded from a file
/// written by `gen-env`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    /// Generate a driving gridworld from `config`, seeded by `seed` so every
    /// run of the experiment sees the same hazards.
    Car {
        #[serde(flatten)]
        config: CarMdpConfig,
        #[serde(default)]
        seed: u64,
    },
    /// Load an environment document (JSON) from `path`.
    File { path: PathBuf },
}

/// Student construction: reward family, update schedule, projection radius,
/// and optional warm-up on a subset of tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub variant: RewardVariant,
    #[serde(default = "default_schedule")]
    pub schedule: LearningSchedule,
    #[serde(default = "default_projection_radius")]
    pub projection_radius: f64,
    /// When present, the initial parameters are fitted to expert
    /// demonstrations drawn only from these tasks' start states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<WarmupSpec>,
}

/// Warm-up fit settings. Demo count and length default to the
/// feature-matching budget for the environment's discount.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupSpec {
    /// Task labels (e.g. `"T0"`) whose start states supply warm-up demos.
    pub tasks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demos: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Fit stopping tolerance on the mean gradient norm. Loose by default:
    /// warm-up only needs a reasonable starting point, not convergence.
    #[serde(default = "default_warmup_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_warmup_max_iters")]
    pub max_iters: usize,
}

/// Which demonstration-selection strategy teaches the student.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherSpec {
    /// Sees the student's parameters; requires `lambda_star`.
    Omniscient,
    /// Sees only probe rollouts of the student's policy, refreshed every
    /// `probe_interval` steps with `probe_rollouts` rollouts per start state.
    Blackbox {
        #[serde(default = "default_probe_interval")]
        probe_interval: usize,
        #[serde(default = "default_probe_rollouts")]
        probe_rollouts: usize,
    },
    /// Ignores the student entirely.
    Agnostic,
}

/// Settings for the feature-matching target parameters. Computed once per
/// experiment with its own seed, shared by every run seed, so runs differing
/// only in teacher or seed steer toward the same target.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaStarSpec {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_eps_tilde")]
    pub eps_tilde: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_star_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_star_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for LambdaStarSpec {
    fn default() -> Self {
        LambdaStarSpec {
            enabled: true,
            eps_tilde: default_eps_tilde(),
            delta: default_delta(),
            grad_tol: default_star_grad_tol(),
            max_iters: default_star_max_iters(),
            seed: 0,
        }
    }
}

/// The full experiment description consumed by `run`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub learner: LearnerSpec,
    pub teacher: TeacherSpec,
    /// Teaching steps T per seed.
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// Expert rollouts per start state in the teacher's candidate pool.
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    /// Demonstration and probe-rollout truncation length.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Soft-policy and occupancy solver tolerance for teaching and metrics.
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_star: Option<LambdaStarSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_schedule() -> LearningSchedule {
    LearningSchedule::Constant { value: 0.2 }
}

fn default_projection_radius() -> f64 {
    100.0
}

fn default_warmup_grad_tol() -> f64 {
    1e-3
}

fn default_warmup_max_iters() -> usize {
    5000
}

fn default_probe_interval() -> usize {
    5
}

fn default_probe_rollouts() -> usize {
    5
}

fn default_true() -> bool {
    true
}

fn default_eps_tilde() -> f64 {
    0.5
}

fn default_delta() -> f64 {
    0.1
}

fn default_star_grad_tol() -> f64 {
    1e-5
}

fn default_star_max_iters() -> usize {
    30_000
}

fn default_pool_size() -> usize {
    10
}

fn default_horizon() -> usize {
    30
}

fn default_solver_tol() -> f64 {
    1e-10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            bail!("steps must be ≥ 1");
        }
        if self.seeds.is_empty() {
            bail!("seeds must be non-empty");
        }
        if self.pool_size == 0 || self.horizon == 0 {
            bail!("pool_size and horizon must be ≥ 1");
        }
        if !(self.solver_tol > 0.0) {
            bail!("solver_tol must be positive");
        }
        if let EnvironmentSpec::Car { config, .. } = &self.environment {
            config.validate()?;
        }
        self.learner.schedule.validate()?;
        if !(self.learner.projection_radius > 0.0) {
            bail!("projection_radius must be positive");
        }
        if let Some(warmup) = &self.learner.warmup {
            if warmup.tasks.is_empty() {
                bail!("warmup.tasks must be non-empty when warmup is configured");
            }
            if !(warmup.grad_tol > 0.0) || warmup.max_iters == 0 {
                bail!("warmup.grad_tol must be positive and warmup.max_iters ≥ 1");
            }
        }
        if let TeacherSpec::Blackbox {
            probe_interval,
            probe_rollouts,
        } = &self.teacher
        {
            if *probe_interval == 0 || *probe_rollouts == 0 {
                bail!("blackbox probe_interval and probe_rollouts must be ≥ 1");
            }
        }
        let star_enabled = self.lambda_star.as_ref().is_some_and(|s| s.enabled);
        if matches!(self.teacher, TeacherSpec::Omniscient) && !star_enabled {
            bail!("the omniscient teacher requires lambda_star to be enabled");
        }
        if let Some(star) = &self.lambda_star {
            if star.enabled {
                if !(star.eps_tilde > 0.0) {
                    bail!("lambda_star.eps_tilde must be positive");
                }
                if !(star.delta > 0.0 && star.delta < 1.0) {
                    bail!("lambda_star.delta must lie in (0, 1)");
                }
                if star.enabled && self.learner.variant != RewardVariant::Linear {
                    bail!(
                        "lambda_star is defined for the linear reward family; \
                         disable it for other variants"
                    );
                }
            }
        }
        Ok(())
    }

    /// First 12 hex characters of the SHA-256 of the canonical JSON form —
    /// the identity under which run outputs are recorded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect::<String>()[..12].to_string()
    }
}

/// Human-readable schema for `--print-schema`.
pub const CONFIG_SCHEMA: &str = r#"Experiment config (JSON object):

{
  "environment":                  where the MDP comes from
    {"kind": "car",               generated driving gridworld
     "tasks": ["T0", ...],        lane types T0..T8
     "lanes_per_task": 2,         lanes generated per task
     "rows": 10, "cols": 2,       lane geometry            (default 10 x 2)
     "gamma": 0.9,                discount                 (default 0.9)
     "reward": "linear",          teacher reward: "linear" | "nonlinear"
     "hazards": {"t0_car": 0.01,  per-cell hazard probabilities (all optional)
                 "t1_car": 0.25, "t2_stone": 0.5, "t3_car": 0.15,
                 "t3_stone": 0.3, "t4_grass": 0.5, "t5_grass": 0.3,
                 "t5_car": 0.15, "t6_grass": 0.3, "t6_ped": 0.15,
                 "t8_police": 0.3},
     "seed": 0}                   generation seed          (default 0)
    or
    {"kind": "file", "path": "env.json"}   document written by gen-env

  "learner":
    {"variant": "linear" | "quadratic",
     "schedule": {"kind": "constant", "value": 0.2}        (default)
                 | {"kind": "inverse_sqrt", "value": c},   rate c/sqrt(t)
     "projection_radius": 100.0,  parameter 2-norm cap     (default 100)
     "warmup":                    optional initial-parameter fit
       {"tasks": ["T0","T1"],     start states the warm-up demos come from
        "demos": 325,             demo count    (default: budget for gamma)
        "horizon": 24,            demo length   (default: budget for gamma)
        "grad_tol": 1e-3,         fit stop      (default 1e-3)
        "max_iters": 5000}}                     (default 5000)

  "teacher":
    {"kind": "omniscient"}                      needs lambda_star enabled
    | {"kind": "blackbox",
       "probe_interval": 5,       steps between probes     (default 5)
       "probe_rollouts": 5}       rollouts per start state (default 5)
    | {"kind": "agnostic"}

  "steps": 200,                   teaching steps per seed
  "seeds": [1, 2, 3],             one deterministic run per seed
  "pool_size": 10,                candidates per start state (default 10)
  "horizon": 30,                  demo/probe length           (default 30)
  "solver_tol": 1e-10,            solver tolerance            (default 1e-10)

  "lambda_star":                  optional target parameters (linear only)
    {"enabled": true,
     "eps_tilde": 0.5,            budget accuracy          (default 0.5)
     "delta": 0.1,                budget failure prob.     (default 0.1)
     "grad_tol": 1e-5,            fit stop                 (default 1e-5)
     "max_iters": 30000,                                   (default 30000)
     "seed": 0},                  demo-sampling seed       (default 0)

  "output_dir": "runs"            where run/export files land (default)
}

Outputs per run: seed_<n>.csv (one row per step; byte-identical across
reruns), aggregate.csv (mean/sd across seeds), run.json (config hash,
lambda_star diagnostics, per-seed status and timing).

CSV columns: t, lambda_dist, nu_gap_all, nu_gap_task_<id>..., tv_dist,
sel_state, sel_task, objective, probed (0/1). Row t=0 is the pre-teaching
snapshot with empty selection cells.
"#;

// ─── Tests ──────────────────────────────────────────────────────────────────
