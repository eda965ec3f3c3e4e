//! Environment files: a JSON document bundling an MDP (sparse transition
//! rows), the learner's feature map, and optional per-state task labels, so
//! generated gridworlds can be saved, inspected, and reloaded byte-exactly.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::car::CarEnvironment;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::reward::FeatureMap;

/// One transition row: the sparse distribution over successor states for a
/// `(state, action)` pair. Pairs are `(next_state, probability)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransitionRow {
    pub state: usize,
    pub action: usize,
    pub next: Vec<(usize, f64)>,
}

/// Serializable snapshot of an environment. Feature vectors are stored per
/// `(state, action)` pair; JSON numbers round-trip `f64` values exactly, so
/// save → load reproduces the arrays bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnvironmentDoc {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
    pub transitions: Vec<TransitionRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_reward: Option<Vec<Vec<f64>>>,
    /// `features[s][a]` is the feature vector of `(s, a)`.
    pub features: Vec<Vec<Vec<f64>>>,
    /// Task label per state; `None` for label-less states (e.g. terminal).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_labels: Option<Vec<Option<String>>>,
}

fn default_format_version() -> u32 {
    1
}

impl EnvironmentDoc {
    /// Snapshots an MDP and its feature map. `task_labels`, when present,
    /// must have one entry per state.
    pub fn new(
        mdp: &TabularMdp,
        features: &FeatureMap,
        task_labels: Option<Vec<Option<String>>>,
    ) -> Result<Self> {
        if features.n_states() != mdp.n_states() || features.n_actions() != mdp.n_actions() {
            return Err(Error::invalid(format!(
                "feature map is {}x{}, MDP is {}x{}",
                features.n_states(),
                features.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        if let Some(labels) = &task_labels {
            if labels.len() != mdp.n_states() {
                return Err(Error::invalid(format!(
                    "{} task labels for {} states",
                    labels.len(),
                    mdp.n_states()
                )));
            }
        }
        let mut transitions = Vec::with_capacity(mdp.n_states() * mdp.n_actions());
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let next: Vec<(usize, f64)> = (0..mdp.n_states())
                    .filter_map(|s2| {
                        let p = mdp.transition_prob(s, a, s2);
                        (p > 0.0).then_some((s2, p))
                    })
                    .collect();
                transitions.push(TransitionRow { state: s, action: a, next });
            }
        }
        let feature_rows = (0..mdp.n_states())
            .map(|s| {
                (0..mdp.n_actions())
                    .map(|a| features.vector(s, a).to_vec())
                    .collect()
            })
            .collect();
        Ok(EnvironmentDoc {
            format_version: default_format_version(),
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            gamma: mdp.discount(),
            initial_dist: mdp.initial_dist().to_vec(),
            transitions,
            env_reward: mdp
                .env_reward()
                .map(|r| r.rows().into_iter().map(|row| row.to_vec()).collect()),
            features: feature_rows,
            task_labels,
        })
    }

    /// Snapshots a generated driving environment, labeling each state with
    /// its task.
    pub fn from_car(env: &CarEnvironment) -> Result<Self> {
        let labels = (0..env.n_states())
            .map(|s| env.task_of(s).map(|t| t.to_string()))
            .collect();
        EnvironmentDoc::new(&env.mdp, &env.features, Some(labels))
    }

    /// Rebuilds the MDP, re-validating every distribution.
    pub fn mdp(&self) -> Result<TabularMdp> {
        let (n, k) = (self.n_states, self.n_actions);
        let mut transition = Array3::<f64>::zeros((n, k, n));
        for row in &self.transitions {
            if row.state >= n || row.action >= k {
                return Err(Error::invalid(format!(
                    "transition row ({}, {}) outside {n} states / {k} actions",
                    row.state, row.action
                )));
            }
            for &(next, p) in &row.next {
                if next >= n {
                    return Err(Error::invalid(format!(
                        "successor {next} outside {n} states"
                    )));
                }
                transition[[row.state, row.action, next]] += p;
            }
        }
        let initial = Array1::from_vec(self.initial_dist.clone());
        let env_reward = match &self.env_reward {
            None => None,
            Some(rows) => Some(to_array2(rows, n, k, "environment reward")?),
        };
        TabularMdp::new(transition, self.gamma, initial, env_reward)
    }

    /// Rebuilds the feature map.
    pub fn feature_map(&self) -> Result<FeatureMap> {
        if self.features.len() != self.n_states {
            return Err(Error::invalid(format!(
                "{} feature rows for {} states",
                self.features.len(),
                self.n_states
            )));
        }
        let dim = self
            .features
            .first()
            .and_then(|row| row.first())
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("feature map is empty"))?;
        let mut tensor = Array3::<f64>::zeros((self.n_states, self.n_actions, dim));
        for (s, row) in self.features.iter().enumerate() {
            if row.len() != self.n_actions {
                return Err(Error::invalid(format!(
                    "state {s} has {} feature vectors for {} actions",
                    row.len(),
                    self.n_actions
                )));
            }
            for (a, vec) in row.iter().enumerate() {
                if vec.len() != dim {
                    return Err(Error::invalid(format!(
                        "feature vector ({s}, {a}) has length {}, expected {dim}",
                        vec.len()
                    )));
                }
                for (i, &x) in vec.iter().enumerate() {
                    tensor[[s, a, i]] = x;
                }
            }
        }
        FeatureMap::new(tensor)
    }

    pub fn task_labels(&self) -> Option<&[Option<String>]> {
        self.task_labels.as_deref()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Writes an environment document as pretty-printed JSON.
pub fn save_environment(path: impl AsRef<Path>, doc: &EnvironmentDoc) -> Result<()> {
    std::fs::write(path, doc.to_json()?)?;
    Ok(())
}

/// Reads an environment document. The MDP itself is only validated when
/// [`EnvironmentDoc::mdp`] is called.
pub fn load_environment(path: impl AsRef<Path>) -> Result<EnvironmentDoc> {
    let text = std::fs::read_to_string(path)?;
    EnvironmentDoc::from_json(&text)
}

fn to_array2(rows: &[Vec<f64>], n_states: usize, n_actions: usize, what: &str) -> Result<Array2<f64>> {
    if rows.len() != n_states || rows.iter().any(|r| r.len() != n_actions) {
        return Err(Error::invalid(format!(
            "{what} must be {n_states} rows of {n_actions} entries"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((n_states, n_actions), flat)
        .map_err(|e| Error::invalid(format!("{what}: {e}")))
}

// ─── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::car::{generate_environment, CarMdpConfig, TaskId, TeacherRewardKind};
    use crate::testutil::{random_features, random_mdp, random_reward};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_mdp_round_trips_bit_exactly_through_json() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let mdp = random_mdp(&mut rng, 6, 3, 0.85)
            .with_env_reward(random_reward(&mut rng, 6, 3))
            .unwrap();
        let features = random_features(&mut rng, 6, 3, 4);

        let doc = EnvironmentDoc::new(&mdp, &features, None).unwrap();
        let text = doc.to_json().unwrap();
        let back = EnvironmentDoc::from_json(&text).unwrap();
        assert_eq!(doc, back);

        let mdp2 = back.mdp().unwrap();
        assert_eq!(mdp.transition(), mdp2.transition());
        assert_eq!(mdp.initial_dist(), mdp2.initial_dist());
        assert_eq!(mdp.env_reward(), mdp2.env_reward());
        assert_eq!(mdp.discount(), mdp2.discount());

        let features2 = back.feature_map().unwrap();
        for s in 0..6 {
            for a in 0..3 {
                assert_eq!(features.vector(s, a), features2.vector(s, a));
            }
        }
    }

    #[test]
    fn car_environment_survives_a_file_round_trip_with_task_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let config = CarMdpConfig {
            tasks: vec![TaskId::T0, TaskId::T8],
            lanes_per_task: 1,
            rows: 4,
            cols: 2,
            reward: TeacherRewardKind::Nonlinear,
            ..CarMdpConfig::default()
        };
        let env = generate_environment(&config, &mut rng).unwrap();
        let doc = EnvironmentDoc::from_car(&env).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        save_environment(&path, &doc).unwrap();
        let back = load_environment(&path).unwrap();
        assert_eq!(doc, back);

        let labels = back.task_labels().unwrap();
        assert_eq!(labels.len(), env.n_states());
        assert_eq!(labels[0].as_deref(), Some("T0"));
        assert_eq!(labels[env.terminal_state()], None);
        for (s, label) in labels.iter().enumerate() {
            assert_eq!(label.as_deref(), env.task_of(s).map(|t| t.to_string()).as_deref());
        }

        // The rebuilt MDP reproduces the original kernel and reward.
        let mdp2 = back.mdp().unwrap();
        assert_eq!(env.mdp.transition(), mdp2.transition());
        assert_eq!(env.mdp.env_reward(), mdp2.env_reward());
    }

    #[test]
    fn sparse_rows_omit_zero_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let config = CarMdpConfig {
            tasks: vec![TaskId::T0],
            lanes_per_task: 1,
            rows: 3,
            cols: 2,
            ..CarMdpConfig::default()
        };
        let env = generate_environment(&config, &mut rng).unwrap();
        let doc = EnvironmentDoc::from_car(&env).unwrap();
        for row in &doc.transitions {
            assert!(row.next.iter().all(|&(_, p)| p > 0.0));
            // Interior moves are deterministic or two-way splits; never more
            // than `cols` successors here.
            assert!(row.next.len() <= 2);
        }
    }

    #[test]
    fn corrupt_documents_are_rejected() {
        assert!(matches!(
            EnvironmentDoc::from_json("{\"not\": \"an env\"}"),
            Err(Error::Serialization(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mdp = random_mdp(&mut rng, 3, 2, 0.9);
        let features = random_features(&mut rng, 3, 2, 2);
        let good = EnvironmentDoc::new(&mdp, &features, None).unwrap();

        // Breaking a transition row's normalization fails MDP validation.
        let mut bad = good.clone();
        bad.transitions[0].next[0].1 += 0.5;
        assert!(bad.mdp().is_err());

        // A successor index past the state count is caught before validation.
        let mut bad = good.clone();
        bad.transitions[0].next[0].0 = 99;
        assert!(bad.mdp().is_err());

        // Task-label count must match the state count.
        assert!(EnvironmentDoc::new(&mdp, &features, Some(vec![None; 2])).is_err());

        // Ragged feature rows are rejected on reconstruction.
        let mut bad = good;
        bad.features[1].pop();
        assert!(bad.feature_map().is_err());
    }
}
