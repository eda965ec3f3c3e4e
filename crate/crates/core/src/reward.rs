//! Feature maps and the student's parametric reward models.
//!
//! Two reward families are supported, both differentiable in the parameter
//! vector `λ`:
//!
//! * linear: `R_λ(s,a) = ⟨λ, φ(s,a)⟩`, gradient `φ(s,a)`;
//! * quadratic: `R_λ(s,a) = ⟨λ₁, φ(s,a)⟩ + ⟨λ₂, φ(s,a)⟩²` with
//!   `λ = (λ₁, λ₂)` stacked flat, gradient `(φ, 2⟨λ₂,φ⟩ φ)`.
//!
//! Feature expectations contract an occupancy measure against the reward
//! gradient: `μ = Σ_{s,a} ρ(s,a) ∇_λ R_λ(s,a)`. For a demonstration the same
//! quantity is accumulated directly from its discounted steps.

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::mdp::{
    Demonstration, OccupancyMeasure, OccupancySolver, StochasticPolicy, TabularMdp,
};

/// Per state-action feature vectors, indexed `(s, a, k)`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    features: Array3<f64>,
}

impl FeatureMap {
    pub fn new(features: Array3<f64>) -> Result<Self> {
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("feature map has non-finite entries"));
        }
        let (s, a, d) = features.dim();
        if s == 0 || a == 0 || d == 0 {
            return Err(Error::invalid("feature map has an empty axis"));
        }
        Ok(FeatureMap { features })
    }

    /// Builds a map from per-state vectors, replicated across actions.
    pub fn from_state_features(per_state: &Array2<f64>, n_actions: usize) -> Result<Self> {
        let (n_states, dim) = per_state.dim();
        let mut features = Array3::zeros((n_states, n_actions, dim));
        for s in 0..n_states {
            for a in 0..n_actions {
                features
                    .slice_mut(ndarray::s![s, a, ..])
                    .assign(&per_state.row(s));
            }
        }
        FeatureMap::new(features)
    }

    pub fn dim(&self) -> usize {
        self.features.len_of(Axis(2))
    }

    pub fn n_states(&self) -> usize {
        self.features.len_of(Axis(0))
    }

    pub fn n_actions(&self) -> usize {
        self.features.len_of(Axis(1))
    }

    pub fn vector(&self, state: usize, action: usize) -> ArrayView1<'_, f64> {
        self.features.slice(ndarray::s![state, action, ..])
    }
}

/// Which parametric family the student fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    Linear,
    Quadratic,
}

/// A reward family over a fixed feature map. Parameters are passed to each
/// call rather than stored, so one model serves every λ the student visits.
#[derive(Debug, Clone)]
pub struct RewardModel {
    variant: RewardVariant,
    features: FeatureMap,
}

impl RewardModel {
    pub fn new(variant: RewardVariant, features: FeatureMap) -> Self {
        RewardModel { variant, features }
    }

    pub fn variant(&self) -> RewardVariant {
        self.variant
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    /// Length of the parameter vector: `d` for linear, `2d` for quadratic.
    pub fn param_dim(&self) -> usize {
        match self.variant {
            RewardVariant::Linear => self.features.dim(),
            RewardVariant::Quadratic => 2 * self.features.dim(),
        }
    }

    pub(crate) fn check_lambda(&self, lambda: ArrayView1<'_, f64>) -> Result<()> {
        if lambda.len() != self.param_dim() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, model expects {}",
                lambda.len(),
                self.param_dim()
            )));
        }
        if lambda.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("parameter vector has non-finite entries"));
        }
        Ok(())
    }

    fn value_unchecked(&self, state: usize, action: usize, lambda: ArrayView1<'_, f64>) -> f64 {
        let phi = self.features.vector(state, action);
        match self.variant {
            RewardVariant::Linear => phi.dot(&lambda),
            RewardVariant::Quadratic => {
                let d = self.features.dim();
                let lin = phi.dot(&lambda.slice(ndarray::s![..d]));
                let quad = phi.dot(&lambda.slice(ndarray::s![d..]));
                lin + quad * quad
            }
        }
    }

    /// `R_λ(s, a)`.
    pub fn reward_value(&self, state: usize, action: usize, lambda: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_lambda(lambda)?;
        self.check_index(state, action)?;
        Ok(self.value_unchecked(state, action, lambda))
    }

    /// `∇_λ R_λ(s, a)`.
    pub fn reward_gradient(
        &self,
        state: usize,
        action: usize,
        lambda: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        self.check_lambda(lambda)?;
        self.check_index(state, action)?;
        let phi = self.features.vector(state, action);
        Ok(match self.variant {
            RewardVariant::Linear => phi.to_owned(),
            RewardVariant::Quadratic => {
                let d = self.features.dim();
                let quad = phi.dot(&lambda.slice(ndarray::s![d..]));
                let mut grad = Array1::zeros(2 * d);
                grad.slice_mut(ndarray::s![..d]).assign(&phi);
                let mut upper = grad.slice_mut(ndarray::s![d..]);
                upper.assign(&phi);
                upper *= 2.0 * quad;
                grad
            }
        })
    }

    /// Dense table `R_λ(s, a)` for the solvers.
    pub fn reward_table(&self, lambda: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        self.check_lambda(lambda)?;
        let (n_states, n_actions) = (self.features.n_states(), self.features.n_actions());
        let mut table = Array2::zeros((n_states, n_actions));
        for s in 0..n_states {
            for a in 0..n_actions {
                table[[s, a]] = self.value_unchecked(s, a, lambda);
            }
        }
        Ok(table)
    }

    fn check_index(&self, state: usize, action: usize) -> Result<()> {
        if state >= self.features.n_states() || action >= self.features.n_actions() {
            return Err(Error::invalid(format!(
                "state-action ({state}, {action}) outside the feature map"
            )));
        }
        Ok(())
    }
}

// ─── Feature expectations ───────────────────────────────────────────────────

/// `μ = Σ_{s,a} ρ(s,a) ∇_λ R_λ(s,a)` for an arbitrary occupancy table.
pub fn feature_expectation_from_occupancy(
    occupancy: &OccupancyMeasure,
    model: &RewardModel,
    lambda: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    model.check_lambda(lambda)?;
    let table = occupancy.table();
    if table.dim() != (model.features.n_states(), model.features.n_actions()) {
        return Err(Error::invalid("occupancy does not match the feature map"));
    }
    let d = model.features.dim();
    let mut mu = Array1::zeros(model.param_dim());
    for ((s, a), &mass) in table.indexed_iter() {
        if mass == 0.0 {
            continue;
        }
        let phi = model.features.vector(s, a);
        match model.variant {
            RewardVariant::Linear => mu.scaled_add(mass, &phi),
            RewardVariant::Quadratic => {
                let quad = phi.dot(&lambda.slice(ndarray::s![d..]));
                mu.slice_mut(ndarray::s![..d]).scaled_add(mass, &phi);
                mu.slice_mut(ndarray::s![d..]).scaled_add(2.0 * quad * mass, &phi);
            }
        }
    }
    Ok(mu)
}

/// Feature expectation of `policy` started from the single state `start`:
/// the occupancy uses the point initial distribution `δ_start`.
pub fn feature_expectation_policy(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    start: usize,
    model: &RewardModel,
    lambda: ArrayView1<'_, f64>,
    tol: f64,
) -> Result<Array1<f64>> {
    let solver = OccupancySolver::new(mdp, policy, tol)?;
    let occ = solver.occupancy_from_state(start)?;
    feature_expectation_from_occupancy(&occ, model, lambda)
}

/// Feature expectation of one demonstration, accumulated directly from its
/// discounted steps: `μ^ξ = (1-γ) Σ_τ γ^τ ∇_λ R_λ(s_τ, a_τ)`.
pub fn feature_expectation_demo(
    demo: &Demonstration,
    model: &RewardModel,
    lambda: ArrayView1<'_, f64>,
    discount: f64,
) -> Result<Array1<f64>> {
    model.check_lambda(lambda)?;
    let d = model.features.dim();
    let mut mu = Array1::zeros(model.param_dim());
    let mut weight = 1.0 - discount;
    for &(s, a) in demo.steps() {
        if s >= model.features.n_states() || a >= model.features.n_actions() {
            return Err(Error::invalid("demonstration step outside the feature map"));
        }
        let phi = model.features.vector(s, a);
        match model.variant {
            RewardVariant::Linear => mu.scaled_add(weight, &phi),
            RewardVariant::Quadratic => {
                let quad = phi.dot(&lambda.slice(ndarray::s![d..]));
                mu.slice_mut(ndarray::s![..d]).scaled_add(weight, &phi);
                mu.slice_mut(ndarray::s![d..])
                    .scaled_add(2.0 * quad * weight, &phi);
            }
        }
        weight *= discount;
    }
    Ok(mu)
}

/// Mean demonstration feature expectation over a collection.
pub fn feature_expectation_demos(
    demos: &[Demonstration],
    model: &RewardModel,
    lambda: ArrayView1<'_, f64>,
    discount: f64,
) -> Result<Array1<f64>> {
    if demos.is_empty() {
        return Err(Error::invalid("cannot average an empty demonstration set"));
    }
    let mut mu = Array1::zeros(model.param_dim());
    for demo in demos {
        mu += &feature_expectation_demo(demo, model, lambda, discount)?;
    }
    mu /= demos.len() as f64;
    Ok(mu)
}

// ─── Parameter ball ─────────────────────────────────────────────────────────

/// Euclidean ball `Ω = {λ : ‖λ‖₂ ≤ z}` the student's parameters are kept in.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParameterBall {
    radius: f64,
}

impl ParameterBall {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("ball radius {radius} must be positive")));
        }
        Ok(ParameterBall { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, lambda: ArrayView1<'_, f64>) -> bool {
        norm2(lambda) <= self.radius + 1e-12
    }

    /// Euclidean projection onto the ball: identity inside, radial rescale
    /// outside. Idempotent and norm non-increasing.
    pub fn project(&self, lambda: ArrayView1<'_, f64>) -> Array1<f64> {
        project_to_ball(lambda, self.radius)
    }
}

/// Euclidean projection of `v` onto the ball of the given radius.
pub fn project_to_ball(v: ArrayView1<'_, f64>, radius: f64) -> Array1<f64> {
    let norm = norm2(v);
    if norm <= radius || norm == 0.0 {
        v.to_owned()
    } else {
        v.mapv(|x| x * radius / norm)
    }
}

pub(crate) fn norm2(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ─── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{demo_occupancy, occupancy_measure};
    use crate::testutil::{random_features, random_mdp, random_policy};
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_feature_map() -> FeatureMap {
        // Single state, single action, φ = (1, 2).
        let mut f = Array3::zeros((1, 1, 2));
        f[[0, 0, 0]] = 1.0;
        f[[0, 0, 1]] = 2.0;
        FeatureMap::new(f).unwrap()
    }

    #[test]
    fn quadratic_value_and_gradient_match_hand_computation() {
        let model = RewardModel::new(RewardVariant::Quadratic, two_feature_map());
        let lambda = array![0.0, 0.0, 1.0, 1.0];
        // ⟨λ₁,φ⟩ = 0, ⟨λ₂,φ⟩ = 3, so R = 9 and ∇ = (φ, 2·3·φ).
        assert_eq!(model.reward_value(0, 0, lambda.view()).unwrap(), 9.0);
        let grad = model.reward_gradient(0, 0, lambda.view()).unwrap();
        assert_eq!(grad, array![1.0, 2.0, 6.0, 12.0]);
    }

    #[test]
    fn linear_gradient_is_the_feature_vector() {
        let model = RewardModel::new(RewardVariant::Linear, two_feature_map());
        for lambda in [array![0.0, 0.0], array![3.0, -1.5]] {
            let grad = model.reward_gradient(0, 0, lambda.view()).unwrap();
            assert_eq!(grad, array![1.0, 2.0]);
        }
        assert_eq!(
            model.reward_value(0, 0, array![3.0, -1.5].view()).unwrap(),
            0.0
        );
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let features = random_features(&mut rng, 3, 2, 4);
        let model = RewardModel::new(RewardVariant::Quadratic, features);
        let lambda = Array1::from_iter((0..8).map(|_| rng.random_range(-1.0..1.0)));
        let h = 1e-6;
        for s in 0..3 {
            for a in 0..2 {
                let grad = model.reward_gradient(s, a, lambda.view()).unwrap();
                for k in 0..8 {
                    let mut hi = lambda.clone();
                    hi[k] += h;
                    let mut lo = lambda.clone();
                    lo[k] -= h;
                    let fd = (model.reward_value(s, a, hi.view()).unwrap()
                        - model.reward_value(s, a, lo.view()).unwrap())
                        / (2.0 * h);
                    assert!((fd - grad[k]).abs() < 1e-6, "entry {k}: {fd} vs {}", grad[k]);
                }
            }
        }
    }

    #[test]
    fn projection_matches_hand_example_and_properties() {
        let projected = project_to_ball(array![3.0, 4.0].view(), 1.0);
        assert!((projected[0] - 0.6).abs() < 1e-12);
        assert!((projected[1] - 0.8).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..200 {
            let dim = rng.random_range(1..6);
            let radius = rng.random_range(0.1..5.0);
            let v = Array1::from_iter((0..dim).map(|_| rng.random_range(-10.0..10.0)));
            let ball = ParameterBall::new(radius).unwrap();
            let p = ball.project(v.view());
            assert!(norm2(p.view()) <= radius + 1e-9);
            // Idempotent.
            let pp = ball.project(p.view());
            assert!(norm2((&pp - &p).view()) < 1e-12);
            // Identity inside the ball.
            if norm2(v.view()) <= radius {
                assert_eq!(p, v);
            }
        }
    }

    #[test]
    fn demo_feature_expectation_matches_occupancy_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for variant in [RewardVariant::Linear, RewardVariant::Quadratic] {
            let mdp = random_mdp(&mut rng, 5, 3, 0.8);
            let policy = random_policy(&mut rng, 5, 3);
            let features = random_features(&mut rng, 5, 3, 4);
            let model = RewardModel::new(variant, features);
            let lambda =
                Array1::from_iter((0..model.param_dim()).map(|_| rng.random_range(-1.0..1.0)));
            let demo = crate::mdp::rollout(&mdp, &policy, 1, 25, &mut rng).unwrap();
            let direct =
                feature_expectation_demo(&demo, &model, lambda.view(), mdp.discount()).unwrap();
            let occ = demo_occupancy(&mdp, &demo).unwrap();
            let via_occ = feature_expectation_from_occupancy(&occ, &model, lambda.view()).unwrap();
            let diff = &direct - &via_occ;
            assert!(norm2(diff.view()) < 1e-10);
        }
    }

    #[test]
    fn policy_feature_expectation_matches_manual_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mdp = random_mdp(&mut rng, 4, 2, 0.75);
        let policy = random_policy(&mut rng, 4, 2);
        let features = random_features(&mut rng, 4, 2, 3);
        let model = RewardModel::new(RewardVariant::Linear, features);
        let lambda = array![0.5, -0.25, 1.0];
        let mu =
            feature_expectation_policy(&mdp, &policy, 2, &model, lambda.view(), 1e-12).unwrap();

        let mut p0 = Array1::zeros(4);
        p0[2] = 1.0;
        let occ = occupancy_measure(&mdp, &policy, p0.view(), 1e-12).unwrap();
        let manual = feature_expectation_from_occupancy(&occ, &model, lambda.view()).unwrap();
        assert!(norm2((&mu - &manual).view()) < 1e-10);
    }

    #[test]
    fn linear_rewards_are_sqrt_dim_smooth_for_bounded_features() {
        // With features in [0,1]^d the linear family satisfies
        // max_{s,a} |R_λ - R_λ'| ≤ √d ‖λ - λ'‖₂.
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..50 {
            let d = rng.random_range(1..6);
            let features = random_features(&mut rng, 4, 2, d);
            let model = RewardModel::new(RewardVariant::Linear, features);
            let a = Array1::from_iter((0..d).map(|_| rng.random_range(-2.0..2.0)));
            let b = Array1::from_iter((0..d).map(|_| rng.random_range(-2.0..2.0)));
            let bound = (d as f64).sqrt() * norm2((&a - &b).view());
            for s in 0..4 {
                for act in 0..2 {
                    let gap = (model.reward_value(s, act, a.view()).unwrap()
                        - model.reward_value(s, act, b.view()).unwrap())
                        .abs();
                    assert!(gap <= bound + 1e-10);
                }
            }
        }
    }

    #[test]
    fn parameter_length_is_validated() {
        let model = RewardModel::new(RewardVariant::Quadratic, two_feature_map());
        assert!(model.reward_value(0, 0, array![1.0, 2.0].view()).is_err());
        assert!(model
            .reward_gradient(0, 0, array![1.0, f64::NAN, 0.0, 0.0].view())
            .is_err());
        assert!(ParameterBall::new(0.0).is_err());
    }
}
