//! The car-driving gridworld: lanes of nine task types, an 8-feature map,
//! two teacher reward functions, and the expert policy.
//!
//! Each lane is a `rows × cols` grid (10 × 2 by default). The agent starts
//! at the bottom-left cell of a lane, always advances one row per step, and
//! steers with `left`/`straight`/`right`; steering off the outer columns
//! randomizes the column uniformly. The top row leads into a single shared
//! absorbing terminal state with zero features and zero reward.
//!
//! State indexing: `lane · rows · cols + row · cols + col`, terminal last.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mdp::{optimal_policy, StochasticPolicy, TabularMdp};
use crate::reward::FeatureMap;

/// Number of cell features: stone, grass, car, ped, HOV, police, car-in-
/// front, ped-in-front.
pub const N_FEATURES: usize = 8;

/// Feature vector indices.
pub const F_STONE: usize = 0;
pub const F_GRASS: usize = 1;
pub const F_CAR: usize = 2;
pub const F_PED: usize = 3;
pub const F_HOV: usize = 4;
pub const F_POLICE: usize = 5;
pub const F_CAR_IN_F: usize = 6;
pub const F_PED_IN_F: usize = 7;

/// Weights of the linear teacher reward, indexed like the feature vector.
pub const LINEAR_WEIGHTS: [f64; N_FEATURES] = [-1.0, -0.5, -5.0, -10.0, -1.0, 0.0, -2.0, -5.0];

/// Lane task types.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum TaskId {
    T0,
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
}

impl TaskId {
    pub const ALL: [TaskId; 9] = [
        TaskId::T0,
        TaskId::T1,
        TaskId::T2,
        TaskId::T3,
        TaskId::T4,
        TaskId::T5,
        TaskId::T6,
        TaskId::T7,
        TaskId::T8,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.index())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .iter()
            .copied()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task id {s:?} (expected T0..T8)")))
    }
}

/// What a grid cell contains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CellContents {
    pub stone: bool,
    pub grass: bool,
    pub car: bool,
    pub ped: bool,
    pub hov: bool,
    pub police: bool,
}

/// One generated lane.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LaneGrid {
    pub task: TaskId,
    pub lane_index: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major: `cells[row * cols + col]`; row 0 is the start row.
    pub cells: Vec<CellContents>,
}

impl LaneGrid {
    pub fn cell(&self, row: usize, col: usize) -> CellContents {
        self.cells[row * self.cols + col]
    }
}

/// Which teacher reward is attached to the generated MDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherRewardKind {
    Linear,
    Nonlinear,
}

/// Per-cell hazard probabilities used during generation. Fields are named
/// `<task>_<hazard>`; all hazards except T0's car apply to the rightmost
/// column only, except T8's police which applies to every column (see
/// [`CarMdpConfig`] docs).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct HazardRates {
    pub t0_car: f64,
    pub t1_car: f64,
    pub t2_stone: f64,
    pub t3_car: f64,
    pub t3_stone: f64,
    pub t4_grass: f64,
    pub t5_grass: f64,
    pub t5_car: f64,
    pub t6_grass: f64,
    pub t6_ped: f64,
    pub t8_police: f64,
}

impl Default for HazardRates {
    fn default() -> Self {
        HazardRates {
            t0_car: 0.01,
            t1_car: 0.25,
            t2_stone: 0.5,
            t3_car: 0.15,
            t3_stone: 0.3,
            t4_grass: 0.5,
            t5_grass: 0.3,
            t5_car: 0.15,
            t6_grass: 0.3,
            t6_ped: 0.15,
            t8_police: 0.3,
        }
    }
}

impl HazardRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t0_car,
            self.t1_car,
            self.t2_stone,
            self.t3_car,
            self.t3_stone,
            self.t4_grass,
            self.t5_grass,
            self.t5_car,
            self.t6_grass,
            self.t6_ped,
            self.t8_police,
        ];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("hazard probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Configuration of the generated environment.
///
/// Task semantics (hazards beyond T0's lane-wide cars sit on the rightmost
/// column): T0 sparse cars anywhere; T1 cars; T2 stones; T3 cars + stones;
/// T4 grass; T5 grass + cars; T6 grass + pedestrians; T7 all HOV; T8 all
/// HOV with police cells on **both** columns. Police appearing off the HOV
/// column is what keeps the nonlinear teacher reward outside the span of
/// the linear features — with police restricted to HOV cells the interaction
/// penalty would collapse into a plain per-feature weight.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CarMdpConfig {
    pub tasks: Vec<TaskId>,
    pub lanes_per_task: usize,
    #[serde(default = "default_rows")]
    pub rows: usize,
    #[serde(default = "default_cols")]
    pub cols: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub reward: TeacherRewardKind,
    #[serde(default)]
    pub hazards: HazardRates,
}

fn default_rows() -> usize {
    10
}

fn default_cols() -> usize {
    2
}

fn default_gamma() -> f64 {
    0.9
}

impl Default for CarMdpConfig {
    fn default() -> Self {
        CarMdpConfig {
            tasks: vec![
                TaskId::T0,
                TaskId::T1,
                TaskId::T2,
                TaskId::T3,
                TaskId::T4,
                TaskId::T5,
                TaskId::T6,
                TaskId::T7,
            ],
            lanes_per_task: 1,
            rows: default_rows(),
            cols: default_cols(),
            gamma: default_gamma(),
            reward: TeacherRewardKind::Linear,
            hazards: HazardRates::default(),
        }
    }
}

impl CarMdpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::invalid("task list must be non-empty"));
        }
        if self.lanes_per_task == 0 {
            return Err(Error::invalid("lanes_per_task must be ≥ 1"));
        }
        if self.rows < 2 || self.cols < 1 {
            return Err(Error::invalid("lanes need at least 2 rows and 1 column"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1)"));
        }
        self.hazards.validate()
    }
}

/// A generated environment: the MDP (environment reward attached), the
/// feature map, and the lane metadata tying states back to tasks.
#[derive(Debug, Clone)]
pub struct CarEnvironment {
    pub mdp: TabularMdp,
    pub features: FeatureMap,
    pub lanes: Vec<LaneGrid>,
    /// Task of each state; `None` for the terminal state.
    state_task: Vec<Option<TaskId>>,
    config: CarMdpConfig,
}

impl CarEnvironment {
    pub fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    pub fn terminal_state(&self) -> usize {
        self.mdp.n_states() - 1
    }

    pub fn config(&self) -> &CarMdpConfig {
        &self.config
    }

    pub fn task_of(&self, state: usize) -> Option<TaskId> {
        self.state_task.get(state).copied().flatten()
    }

    /// Initial states (bottom-left cells) of every lane of `task`, in lane
    /// order.
    pub fn initial_states_of(&self, task: TaskId) -> Vec<usize> {
        let span = self.config.rows * self.config.cols;
        self.lanes
            .iter()
            .enumerate()
            .filter(|(_, lane)| lane.task == task)
            .map(|(i, _)| i * span)
            .collect()
    }

    /// All (task, initial state) pairs in lane order.
    pub fn initial_states(&self) -> Vec<(TaskId, usize)> {
        let span = self.config.rows * self.config.cols;
        self.lanes
            .iter()
            .enumerate()
            .map(|(i, lane)| (lane.task, i * span))
            .collect()
    }

    pub fn state_index(&self, lane: usize, row: usize, col: usize) -> usize {
        lane * self.config.rows * self.config.cols + row * self.config.cols + col
    }

    /// `(lane, row, col)` of a non-terminal state.
    pub fn cell_of(&self, state: usize) -> Option<(usize, usize, usize)> {
        if state >= self.terminal_state() {
            return None;
        }
        let span = self.config.rows * self.config.cols;
        let lane = state / span;
        let rest = state % span;
        Some((lane, rest / self.config.cols, rest % self.config.cols))
    }
}

/// Feature vector of one lane cell: the six content indicators plus the
/// car/pedestrian look-ahead into the cell one row up (zero on the top row).
pub fn state_features(lane: &LaneGrid, row: usize, col: usize) -> Array1<f64> {
    let cell = lane.cell(row, col);
    let mut phi = Array1::zeros(N_FEATURES);
    phi[F_STONE] = cell.stone as u8 as f64;
    phi[F_GRASS] = cell.grass as u8 as f64;
    phi[F_CAR] = cell.car as u8 as f64;
    phi[F_PED] = cell.ped as u8 as f64;
    phi[F_HOV] = cell.hov as u8 as f64;
    phi[F_POLICE] = cell.police as u8 as f64;
    if row + 1 < lane.rows {
        let front = lane.cell(row + 1, col);
        phi[F_CAR_IN_F] = front.car as u8 as f64;
        phi[F_PED_IN_F] = front.ped as u8 as f64;
    }
    phi
}

/// Linear teacher reward `⟨w, φ⟩` with the fixed weights
/// [`LINEAR_WEIGHTS`].
pub fn linear_teacher_reward(phi: ArrayView1<'_, f64>) -> f64 {
    phi.iter().zip(LINEAR_WEIGHTS.iter()).map(|(p, w)| p * w).sum()
}

/// Nonlinear teacher reward: as the linear one but preferring HOV (+1
/// instead of -1), with an extra -5 when HOV and police co-occur.
pub fn nonlinear_teacher_reward(phi: ArrayView1<'_, f64>) -> f64 {
    let mut value = linear_teacher_reward(phi);
    if phi[F_HOV] > 0.5 {
        value += 2.0; // -1 → +1
        if phi[F_POLICE] > 0.5 {
            value -= 5.0;
        }
    }
    value
}

fn sample_lane<R: Rng + ?Sized>(
    task: TaskId,
    lane_index: usize,
    rows: usize,
    cols: usize,
    rates: &HazardRates,
    rng: &mut R,
) -> LaneGrid {
    let right = cols - 1;
    let mut cells = vec![CellContents::default(); rows * cols];
    for row in 0..rows {
        for col in 0..cols {
            let cell = &mut cells[row * cols + col];
            match task {
                TaskId::T0 => {
                    cell.car = rng.random::<f64>() < rates.t0_car;
                }
                TaskId::T1 => {
                    if col == right {
                        cell.car = rng.random::<f64>() < rates.t1_car;
                    }
                }
                TaskId::T2 => {
                    if col == right {
                        cell.stone = rng.random::<f64>() < rates.t2_stone;
                    }
                }
                TaskId::T3 => {
                    if col == right {
                        cell.car = rng.random::<f64>() < rates.t3_car;
                        cell.stone = rng.random::<f64>() < rates.t3_stone;
                    }
                }
                TaskId::T4 => {
                    if col == right {
                        cell.grass = rng.random::<f64>() < rates.t4_grass;
                    }
                }
                TaskId::T5 => {
                    if col == right {
                        cell.grass = rng.random::<f64>() < rates.t5_grass;
                        cell.car = rng.random::<f64>() < rates.t5_car;
                    }
                }
                TaskId::T6 => {
                    if col == right {
                        cell.grass = rng.random::<f64>() < rates.t6_grass;
                        cell.ped = rng.random::<f64>() < rates.t6_ped;
                    }
                }
                TaskId::T7 => {
                    cell.hov = col == right;
                }
                TaskId::T8 => {
                    cell.hov = col == right;
                    cell.police = rng.random::<f64>() < rates.t8_police;
                }
            }
        }
    }
    LaneGrid {
        task,
        lane_index,
        rows,
        cols,
        cells,
    }
}

/// Assembles the environment for an explicit list of lanes. Exposed so
/// hand-crafted layouts can be tested; [`generate_environment`] is the
/// random entry point.
pub fn environment_from_lanes(lanes: Vec<LaneGrid>, config: CarMdpConfig) -> Result<CarEnvironment> {
    if lanes.is_empty() {
        return Err(Error::invalid("need at least one lane"));
    }
    let rows = config.rows;
    let cols = config.cols;
    let gamma = config.gamma;
    let reward = config.reward;
    if lanes.iter().any(|l| l.rows != rows || l.cols != cols) {
        return Err(Error::invalid("all lanes must share the configured geometry"));
    }
    let span = rows * cols;
    let n_states = lanes.len() * span + 1;
    let terminal = n_states - 1;
    let n_actions = 3;

    let mut transition = Array3::<f64>::zeros((n_states, n_actions, n_states));
    let mut features = Array2::<f64>::zeros((n_states, N_FEATURES));
    let mut state_task = vec![None; n_states];
    let mut p0 = Array1::<f64>::zeros(n_states);

    for (lane_idx, lane) in lanes.iter().enumerate() {
        for row in 0..rows {
            for col in 0..cols {
                let s = lane_idx * span + row * cols + col;
                state_task[s] = Some(lane.task);
                features
                    .row_mut(s)
                    .assign(&state_features(lane, row, col));
                if row + 1 == rows {
                    // Top row: all actions lead to the terminal state.
                    for a in 0..n_actions {
                        transition[[s, a, terminal]] = 1.0;
                    }
                    continue;
                }
                let next_row_base = lane_idx * span + (row + 1) * cols;
                // Action `straight` keeps the column.
                transition[[s, 1, next_row_base + col]] = 1.0;
                // Action `left`: one column left, or a uniformly random
                // column when already leftmost.
                if col > 0 {
                    transition[[s, 0, next_row_base + col - 1]] = 1.0;
                } else {
                    for c in 0..cols {
                        transition[[s, 0, next_row_base + c]] += 1.0 / cols as f64;
                    }
                }
                // Action `right`, mirrored.
                if col + 1 < cols {
                    transition[[s, 2, next_row_base + col + 1]] = 1.0;
                } else {
                    for c in 0..cols {
                        transition[[s, 2, next_row_base + c]] += 1.0 / cols as f64;
                    }
                }
            }
        }
        p0[lane_idx * span] = 1.0 / lanes.len() as f64;
    }
    for a in 0..n_actions {
        transition[[terminal, a, terminal]] = 1.0;
    }

    let reward_of = |phi: ArrayView1<'_, f64>| match reward {
        TeacherRewardKind::Linear => linear_teacher_reward(phi),
        TeacherRewardKind::Nonlinear => nonlinear_teacher_reward(phi),
    };
    let mut env_reward = Array2::<f64>::zeros((n_states, n_actions));
    for s in 0..n_states {
        let value = reward_of(features.row(s));
        for a in 0..n_actions {
            env_reward[[s, a]] = value;
        }
    }

    let mdp = TabularMdp::new(transition, gamma, p0, Some(env_reward))?;
    let feature_map = FeatureMap::from_state_features(&features, n_actions)?;
    Ok(CarEnvironment {
        mdp,
        features: feature_map,
        lanes,
        state_task,
        config,
    })
}

/// Samples lane layouts per the config's hazard rates and assembles the
/// environment. Pure function of `(cfg, rng)`.
pub fn generate_environment<R: Rng + ?Sized>(
    cfg: &CarMdpConfig,
    rng: &mut R,
) -> Result<CarEnvironment> {
    cfg.validate()?;
    let mut lanes = Vec::with_capacity(cfg.tasks.len() * cfg.lanes_per_task);
    for &task in &cfg.tasks {
        for _ in 0..cfg.lanes_per_task {
            let lane_index = lanes.len();
            lanes.push(sample_lane(
                task,
                lane_index,
                cfg.rows,
                cfg.cols,
                &cfg.hazards,
                rng,
            ));
        }
    }
    environment_from_lanes(lanes, cfg.clone())
}

/// Hard-optimal expert policy for the attached environment reward
/// (deterministic, ties to the lowest action index).
pub fn teacher_policy(mdp: &TabularMdp, tol: f64) -> Result<StochasticPolicy> {
    let reward = mdp
        .env_reward()
        .ok_or_else(|| Error::invalid("teacher policy requires an environment reward"))?;
    optimal_policy(mdp, reward, tol)
}

// ─── Tests ──────────────────────────────────────────────────────────────────
