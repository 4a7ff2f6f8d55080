//! Long-term budget constrainer: per-client dual variables kept inside the
//! ℓ1-ball `{λ ≥ 0, ‖λ‖₁ ≤ Λ}` and updated by entropic mirror descent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Result};

/// Direction convention linking spend, dual updates and action scores.
///
/// `AsPrinted` scores `β(a) = μ(a) − ⟨fair − ε(a), λ⟩` and descends along
/// `spent − fair`, so λ shrinks after overspending and acts as a bonus on
/// expensive actions. `Pacing` flips both signs: `β(a) = μ(a) + ⟨fair − ε(a), λ⟩`
/// with `λ ← λ·exp(+η (spent − fair))`, so λ grows after overspending and
/// penalizes actions costlier than the fair share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualSign {
    AsPrinted,
    #[default]
    Pacing,
}

impl DualSign {
    /// Score of one action given its mean reward and `⟨fair − cost, λ⟩`.
    pub fn score(self, mean: f64, penalty: f64) -> f64 {
        match self {
            DualSign::AsPrinted => mean - penalty,
            DualSign::Pacing => mean + penalty,
        }
    }

    fn exponent_sign(self) -> f64 {
        match self {
            DualSign::AsPrinted => -1.0,
            DualSign::Pacing => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// Fixed η for every round.
    Constant(f64),
    /// `η_t = Λ / √t`.
    RadiusOverSqrtRound,
}

impl StepSchedule {
    /// The default `1/√T` constant step.
    pub fn inverse_sqrt_horizon(horizon: usize) -> Self {
        StepSchedule::Constant(1.0 / (horizon.max(1) as f64).sqrt())
    }
}

/// `spent − fair`, one entry per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualGradient(Vec<f64>);

impl DualGradient {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return domain("dual gradient entries must be finite");
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn dual_gradient(fair_share: &[f64], spent: &[f64]) -> Result<DualGradient> {
    if fair_share.len() != spent.len() {
        return precondition(format!(
            "fair share has {} entries, spend has {}",
            fair_share.len(),
            spent.len()
        ));
    }
    DualGradient::new(spent.iter().zip(fair_share).map(|(s, f)| s - f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    lambda: Vec<f64>,
    radius: f64,
    schedule: StepSchedule,
    sign: DualSign,
}

impl DualState {
    pub fn new(lambda: Vec<f64>, radius: f64, schedule: StepSchedule) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return domain(format!("dual radius must be positive, got {radius}"));
        }
        if lambda.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return domain("dual variables must be finite and non-negative");
        }
        let l1: f64 = lambda.iter().sum();
        if l1 > radius + 1e-9 {
            return domain(format!("‖λ‖₁ = {l1} exceeds radius {radius}"));
        }
        if let StepSchedule::Constant(eta) = schedule {
            if !(eta >= 0.0 && eta.is_finite()) {
                return domain(format!("step size must be non-negative, got {eta}"));
            }
        }
        Ok(Self {
            lambda,
            radius,
            schedule,
            sign: DualSign::default(),
        })
    }

    /// Every client starts at `Λ / (2U)`.
    pub fn interior(clients: usize, radius: f64, schedule: StepSchedule) -> Result<Self> {
        if clients == 0 {
            return precondition("at least one client is required");
        }
        Self::new(vec![radius / (2.0 * clients as f64); clients], radius, schedule)
    }

    /// A uniformly random direction with a uniformly random ℓ1 mass in `(0, Λ)`.
    pub fn random<R: Rng + ?Sized>(
        clients: usize,
        radius: f64,
        schedule: StepSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        if clients == 0 {
            return precondition("at least one client is required");
        }
        let raw: Vec<f64> = (0..clients).map(|_| rng.random_range(1e-6..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let mass = radius * rng.random_range(1e-6..1.0);
        Self::new(raw.iter().map(|v| v / sum * mass).collect(), radius, schedule)
    }

    pub fn with_sign(mut self, sign: DualSign) -> Self {
        self.sign = sign;
        self
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn sign(&self) -> DualSign {
        self.sign
    }

    pub fn l1(&self) -> f64 {
        self.lambda.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.lambda.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn step_size(&self, round: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant(eta) => eta,
            StepSchedule::RadiusOverSqrtRound => self.radius / (round.max(1) as f64).sqrt(),
        }
    }

    /// Multiplicative update followed by the entropic projection onto the
    /// ℓ1-ball, which for this geometry is a radial rescale.
    pub fn omd_update(&mut self, grad: &DualGradient, round: usize) -> Result<()> {
        if grad.0.len() != self.lambda.len() {
            return precondition(format!(
                "gradient has {} entries, state has {}",
                grad.0.len(),
                self.lambda.len()
            ));
        }
        let eta = self.step_size(round) * self.sign.exponent_sign();
        let mut next: Vec<f64> = self
            .lambda
            .iter()
            .zip(&grad.0)
            // Zero is a fixed point of the multiplicative step; skipping it avoids 0 * inf.
            .map(|(l, g)| if *l == 0.0 { 0.0 } else { l * (eta * g).exp() })
            .collect();

        if next.iter().any(|v| !v.is_finite()) {
            // Overflowed: redo the step in log space and normalize to the radius.
            let logs: Vec<f64> = self
                .lambda
                .iter()
                .zip(&grad.0)
                .map(|(l, g)| l.ln() + eta * g)
                .collect();
            let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logs.iter().map(|v| (v - m).exp()).sum();
            next = logs
                .iter()
                .map(|v| {
                    if *v == f64::NEG_INFINITY {
                        0.0
                    } else {
                        self.radius * (v - m).exp() / z
                    }
                })
                .collect();
        } else {
            let l1: f64 = next.iter().sum();
            if l1 > self.radius * (1.0 + 1e-12) {
                let scale = self.radius / l1;
                next.iter_mut().for_each(|v| *v *= scale);
            }
        }
        self.lambda = next;
        Ok(())
    }

    /// `⟨fair − cost, λ⟩`.
    pub fn penalty(&self, fair_share: &[f64], cost: &[f64]) -> Result<f64> {
        if fair_share.len() != self.lambda.len() || cost.len() != self.lambda.len() {
            return precondition(format!(
                "penalty needs {} entries, got fair {} and cost {}",
                self.lambda.len(),
                fair_share.len(),
                cost.len()
            ));
        }
        Ok(fair_share
            .iter()
            .zip(cost)
            .zip(&self.lambda)
            .map(|((f, c), l)| (f - c) * l)
            .sum())
    }

    /// Penalty when every client pays the same `cost` against the same `fair` share.
    pub fn shared_penalty(&self, fair: f64, cost: f64) -> f64 {
        (fair - cost) * self.l1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(lambda: Vec<f64>, radius: f64, eta: f64) -> DualState {
        DualState::new(lambda, radius, StepSchedule::Constant(eta)).unwrap()
    }

    #[test]
    fn gradient_is_spend_minus_fair_share() {
        assert_eq!(dual_gradient(&[0.1], &[0.1]).unwrap().values(), &[0.0]);
        let g = dual_gradient(&[0.1], &[0.142857]).unwrap();
        assert!((g.values()[0] - 0.042857).abs() < 1e-12);
        let g = dual_gradient(&[0.1, 0.1], &[0.0, 0.2]).unwrap();
        assert!((g.values()[0] + 0.1).abs() < 1e-15);
        assert!((g.values()[1] - 0.1).abs() < 1e-15);
        assert!(dual_gradient(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn zero_step_leaves_lambda_untouched() {
        let mut s = state(vec![0.3, 0.7, 1.1], 5.0, 0.0);
        let before = s.lambda().to_vec();
        s.omd_update(&DualGradient::new(vec![3.0, -2.0, 0.5]).unwrap(), 4)
            .unwrap();
        assert_eq!(s.lambda(), before.as_slice());
    }

    #[test]
    fn underflowed_coordinate_stays_zero() {
        let mut s = state(vec![0.0, 0.5], 1.0, 2.0);
        s.omd_update(&DualGradient::new(vec![450.0, -1.0]).unwrap(), 1).unwrap();
        assert_eq!(s.lambda()[0], 0.0);
        s.omd_update(&DualGradient::new(vec![1e4, 1e4]).unwrap(), 2).unwrap();
        assert_eq!(s.lambda()[0], 0.0);
        assert!(s.lambda()[1].is_finite() && s.l1() <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut s = state(vec![1.0, 1.0], 3.0, 0.7);
        s.omd_update(&DualGradient::new(vec![0.0, 0.0]).unwrap(), 1)
            .unwrap();
        assert_eq!(s.lambda(), &[1.0, 1.0]);
    }

    #[test]
    fn overflowing_ball_is_rescaled_radially() {
        for sign in [DualSign::AsPrinted, DualSign::Pacing] {
            let eta = 0.5;
            let mut s = state(vec![1.0, 1.0], 3.0, eta).with_sign(sign);
            // Doubles both components before projection: ‖λ‖₁ = 4 > 3.
            let g = 2f64.ln() / eta * sign.exponent_sign();
            s.omd_update(&DualGradient::new(vec![g, g]).unwrap(), 1).unwrap();
            assert!((s.lambda()[0] - 1.5).abs() < 1e-12);
            assert!((s.lambda()[1] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn update_direction_follows_sign() {
        let g = DualGradient::new(vec![0.5, -0.5]).unwrap();
        let mut printed = state(vec![0.1, 0.1], 10.0, 0.3).with_sign(DualSign::AsPrinted);
        printed.omd_update(&g, 1).unwrap();
        assert!(printed.lambda()[0] < 0.1 && printed.lambda()[1] > 0.1);

        let mut pacing = state(vec![0.1, 0.1], 10.0, 0.3).with_sign(DualSign::Pacing);
        pacing.omd_update(&g, 1).unwrap();
        assert!(pacing.lambda()[0] > 0.1 && pacing.lambda()[1] < 0.1);
    }

    #[test]
    fn huge_gradients_stay_on_the_ball() {
        let mut s = state(vec![0.5, 0.25], 1.0, 1.0);
        s.omd_update(&DualGradient::new(vec![2000.0, 1990.0]).unwrap(), 1)
            .unwrap();
        assert!(s.lambda().iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((s.l1() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn penalty_values() {
        let s = state(vec![0.5], 1.0, 0.1);
        assert!((s.penalty(&[0.1], &[0.12]).unwrap() + 0.01).abs() < 1e-15);
        let z = state(vec![0.0, 0.0], 1.0, 0.1);
        assert_eq!(z.penalty(&[0.1, 0.3], &[0.7, 0.2]).unwrap(), 0.0);
        let s = state(vec![1.0, 2.0], 5.0, 0.1);
        assert!(s.penalty(&[0.1, 0.1], &[0.2, 0.05]).unwrap().abs() < 1e-15);
        assert!(s.penalty(&[0.1], &[0.2, 0.05]).is_err());
    }

    #[test]
    fn schedules() {
        let s = DualState::interior(4, 8.0, StepSchedule::inverse_sqrt_horizon(100)).unwrap();
        assert_eq!(s.lambda(), &[1.0; 4]);
        assert!((s.step_size(50) - 0.1).abs() < 1e-15);
        let s = DualState::interior(4, 8.0, StepSchedule::RadiusOverSqrtRound).unwrap();
        assert!((s.step_size(16) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_states_rejected() {
        assert!(DualState::new(vec![2.0, 2.0], 3.0, StepSchedule::Constant(0.1)).is_err());
        assert!(DualState::new(vec![-1.0], 3.0, StepSchedule::Constant(0.1)).is_err());
        assert!(DualState::new(vec![1.0], 0.0, StepSchedule::Constant(0.1)).is_err());
    }
}
