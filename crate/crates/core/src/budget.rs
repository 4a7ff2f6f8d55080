//! Privacy budgets, the action-to-budget grid, ledger bookkeeping and noise
//! calibration for the Laplace and Gaussian mechanisms.
//!
//! The ledger composes budgets naively (per-round epsilons and deltas add).
//! [`RdpAccountant`] is a separate reporting path for Gaussian runs that tracks
//! Rényi divergence at a fixed order grid and converts back to `(ε, δ)`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Error, Result};

/// Slack allowed when comparing accumulated epsilons against their caps.
pub const LEDGER_TOLERANCE: f64 = 1e-12;

/// Rényi orders tracked by [`RdpAccountant::default`].
pub const DEFAULT_RDP_ORDERS: [f64; 9] = [1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 16.0, 32.0, 64.0];

/// An `(ε, δ)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub const ZERO: PrivacyBudget = PrivacyBudget {
        epsilon: 0.0,
        delta: 0.0,
    };

    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return domain(format!("epsilon must be finite and non-negative, got {epsilon}"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return domain(format!("delta must lie in [0, 1], got {delta}"));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn is_zero(&self) -> bool {
        self.epsilon == 0.0 && self.delta == 0.0
    }
}

impl std::ops::Add for PrivacyBudget {
    type Output = PrivacyBudget;

    fn add(self, rhs: Self) -> Self {
        PrivacyBudget {
            epsilon: self.epsilon + rhs.epsilon,
            delta: self.delta + rhs.delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMechanism {
    #[serde(alias = "lm")]
    Laplace,
    #[serde(alias = "gm")]
    Gaussian,
}

impl NoiseMechanism {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseMechanism::Laplace => "laplace",
            NoiseMechanism::Gaussian => "gaussian",
        }
    }

    /// Draws one zero-mean noise value. `scale` is the Laplace scale `b` or the
    /// Gaussian standard deviation `σ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> f64 {
        match self {
            NoiseMechanism::Laplace => sample_laplace(rng, scale),
            NoiseMechanism::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }
        }
    }
}

impl std::str::FromStr for NoiseMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" | "lm" => Ok(NoiseMechanism::Laplace),
            "gaussian" | "gm" => Ok(NoiseMechanism::Gaussian),
            other => Err(Error::Config(format!("unknown noise mechanism '{other}'"))),
        }
    }
}

/// Laplace(0, b) as a signed unit exponential.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if rng.random::<bool>() {
        scale * e
    } else {
        -scale * e
    }
}

/// Discrete per-round budget levels. Action `a` (1-based) spends `grid[a - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBudgetMap {
    grid: Vec<f64>,
    delta_per_round: f64,
}

impl ActionBudgetMap {
    /// Spreads `actions` levels uniformly over `[ε_total / T, ε_total / T_min]`.
    ///
    /// Gaussian runs split `δ_total` evenly over the horizon; Laplace runs use
    /// `δ = 0` per round.
    pub fn uniform(
        epsilon_total: f64,
        delta_total: f64,
        horizon: usize,
        min_horizon: usize,
        actions: usize,
        mechanism: NoiseMechanism,
    ) -> Result<Self> {
        if actions == 0 {
            return precondition("action count must be positive");
        }
        if horizon == 0 || min_horizon == 0 {
            return precondition("horizons must be positive");
        }
        if min_horizon > horizon {
            return precondition(format!(
                "T_min ({min_horizon}) must not exceed T ({horizon})"
            ));
        }
        if !(epsilon_total > 0.0 && epsilon_total.is_finite()) {
            return domain(format!("epsilon_total must be positive, got {epsilon_total}"));
        }
        let lo = epsilon_total / horizon as f64;
        let hi = epsilon_total / min_horizon as f64;
        let grid = if actions == 1 {
            vec![lo]
        } else {
            let step = (hi - lo) / (actions - 1) as f64;
            (0..actions)
                .map(|i| if i + 1 == actions { hi } else { lo + step * i as f64 })
                .collect()
        };
        let delta_per_round = match mechanism {
            NoiseMechanism::Laplace => 0.0,
            NoiseMechanism::Gaussian => delta_total / horizon as f64,
        };
        Self::from_grid(grid, delta_per_round)
    }

    /// Builds a map from an explicit strictly increasing grid of positive epsilons.
    pub fn from_grid(grid: Vec<f64>, delta_per_round: f64) -> Result<Self> {
        if grid.is_empty() {
            return precondition("budget grid must not be empty");
        }
        if grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return domain("budget grid entries must be positive and finite");
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return precondition("budget grid must be strictly increasing");
        }
        if !(0.0..=1.0).contains(&delta_per_round) {
            return domain(format!("per-round delta must lie in [0, 1], got {delta_per_round}"));
        }
        Ok(Self {
            grid,
            delta_per_round,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn delta_per_round(&self) -> f64 {
        self.delta_per_round
    }

    pub fn cheapest(&self) -> f64 {
        self.grid[0]
    }

    /// Epsilon cost of 1-based action `a`.
    pub fn cost(&self, action: usize) -> Result<f64> {
        if action == 0 || action > self.grid.len() {
            return precondition(format!(
                "action {action} outside 1..={}",
                self.grid.len()
            ));
        }
        Ok(self.grid[action - 1])
    }

    pub fn action_to_budget(&self, action: usize) -> Result<PrivacyBudget> {
        Ok(PrivacyBudget {
            epsilon: self.cost(action)?,
            delta: self.delta_per_round,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientBudget {
    pub total: PrivacyBudget,
    pub consumed: PrivacyBudget,
    pub active: bool,
}

impl ClientBudget {
    pub fn remaining_epsilon(&self) -> f64 {
        self.total.epsilon - self.consumed.epsilon
    }

    pub fn remaining_delta(&self) -> f64 {
        self.total.delta - self.consumed.delta
    }
}

/// Per-client budget consumption under sequential composition.
///
/// A client stays active while its remaining epsilon covers `min_cost`, the
/// price of the cheapest action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    clients: Vec<ClientBudget>,
    min_cost: f64,
}

impl BudgetLedger {
    pub fn uniform(clients: usize, total: PrivacyBudget, min_cost: f64) -> Result<Self> {
        if !(min_cost >= 0.0 && min_cost.is_finite()) {
            return domain(format!("minimum cost must be non-negative, got {min_cost}"));
        }
        let mut client = ClientBudget {
            total,
            consumed: PrivacyBudget::ZERO,
            active: true,
        };
        client.active = client.remaining_epsilon() + LEDGER_TOLERANCE >= min_cost;
        Ok(Self {
            clients: vec![client; clients],
            min_cost,
        })
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn clients(&self) -> &[ClientBudget] {
        &self.clients
    }

    pub fn client(&self, u: usize) -> Option<&ClientBudget> {
        self.clients.get(u)
    }

    pub fn min_cost(&self) -> f64 {
        self.min_cost
    }

    pub fn is_active(&self, u: usize) -> bool {
        self.clients.get(u).is_some_and(|c| c.active)
    }

    pub fn any_active(&self) -> bool {
        self.clients.iter().any(|c| c.active)
    }

    pub fn active_clients(&self) -> impl Iterator<Item = usize> + '_ {
        self.clients
            .iter()
            .enumerate()
            .filter(|(_, c)| c.active)
            .map(|(u, _)| u)
    }

    /// Smallest remaining epsilon among active clients, if any.
    pub fn min_remaining_active(&self) -> Option<f64> {
        self.clients
            .iter()
            .filter(|c| c.active)
            .map(ClientBudget::remaining_epsilon)
            .min_by(f64::total_cmp)
    }

    /// Whether a per-round cost fits every active client's remaining budget.
    pub fn affordable(&self, cost: PrivacyBudget) -> bool {
        self.clients.iter().filter(|c| c.active).all(|c| {
            c.consumed.epsilon + cost.epsilon <= c.total.epsilon + LEDGER_TOLERANCE
                && c.consumed.delta + cost.delta <= c.total.delta + LEDGER_TOLERANCE
        })
    }

    pub fn charge(&mut self, u: usize, cost: PrivacyBudget) -> Result<()> {
        let min_cost = self.min_cost;
        let Some(client) = self.clients.get_mut(u) else {
            return precondition(format!("unknown client {u}"));
        };
        if cost.is_zero() {
            return Ok(());
        }
        if !client.active {
            return Err(Error::BudgetExhausted {
                client: u,
                message: "client is inactive".into(),
            });
        }
        if cost.epsilon < 0.0 || cost.delta < 0.0 {
            return domain("charges must be non-negative");
        }
        let consumed = client.consumed + cost;
        if consumed.epsilon > client.total.epsilon + LEDGER_TOLERANCE
            || consumed.delta > client.total.delta + LEDGER_TOLERANCE
        {
            return Err(Error::BudgetExhausted {
                client: u,
                message: format!(
                    "charge ({}, {}) exceeds remaining ({}, {})",
                    cost.epsilon,
                    cost.delta,
                    client.remaining_epsilon(),
                    client.remaining_delta()
                ),
            });
        }
        client.consumed = consumed;
        client.active = client.remaining_epsilon() + LEDGER_TOLERANCE >= min_cost;
        Ok(())
    }

    /// Charges every active client the same cost and returns per-client spend
    /// (zero for clients that were already inactive).
    pub fn charge_active(&mut self, cost: PrivacyBudget) -> Result<Vec<f64>> {
        let mut spent = vec![0.0; self.clients.len()];
        for u in 0..self.clients.len() {
            if self.clients[u].active {
                self.charge(u, cost)?;
                spent[u] = cost.epsilon;
            }
        }
        Ok(spent)
    }

    pub fn total_consumed_epsilon(&self) -> f64 {
        self.clients.iter().map(|c| c.consumed.epsilon).sum()
    }

    /// Writes `client_id,total_eps,consumed_eps,total_delta,consumed_delta,active`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "client_id",
            "total_eps",
            "consumed_eps",
            "total_delta",
            "consumed_delta",
            "active",
        ])?;
        for (u, c) in self.clients.iter().enumerate() {
            w.write_record([
                u.to_string(),
                c.total.epsilon.to_string(),
                c.consumed.epsilon.to_string(),
                c.total.delta.to_string(),
                c.consumed.delta.to_string(),
                c.active.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Laplace scale `b = Δ₁ / ε`.
pub fn laplace_scale(sensitivity_l1: f64, epsilon: f64) -> Result<f64> {
    if !(sensitivity_l1 > 0.0) || !(epsilon > 0.0) {
        return domain(format!(
            "laplace_scale needs positive inputs, got sensitivity {sensitivity_l1}, epsilon {epsilon}"
        ));
    }
    Ok(sensitivity_l1 / epsilon)
}

/// Classic Gaussian mechanism calibration `σ = Δ₂ √(2 ln(1.25/δ)) / ε`.
pub fn gaussian_sigma(sensitivity_l2: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(sensitivity_l2 > 0.0) || !(epsilon > 0.0) {
        return domain(format!(
            "gaussian_sigma needs positive sensitivity and epsilon, got {sensitivity_l2}, {epsilon}"
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(sensitivity_l2 * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// RDP of one Gaussian release at `order`: `order / (2 z²)` for noise multiplier `z`.
pub fn rdp_of_gaussian(noise_multiplier: f64, order: f64) -> Result<f64> {
    if !(order > 1.0) {
        return domain(format!("Rényi order must exceed 1, got {order}"));
    }
    if !(noise_multiplier > 0.0) {
        return domain(format!("noise multiplier must be positive, got {noise_multiplier}"));
    }
    Ok(order / (2.0 * noise_multiplier * noise_multiplier))
}

/// Converts accumulated `(order, rdp)` pairs to the tightest `ε` at `delta`:
/// `min over orders of rdp + ln(1/δ) / (order − 1)`.
pub fn rdp_to_dp(accumulated: &[(f64, f64)], delta: f64) -> Result<f64> {
    if accumulated.is_empty() {
        return precondition("RDP order grid must not be empty");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    let log_inv_delta = -delta.ln();
    let mut best = f64::INFINITY;
    for &(order, value) in accumulated {
        if !(order > 1.0) {
            return precondition(format!("Rényi order must exceed 1, got {order}"));
        }
        best = best.min(value + log_inv_delta / (order - 1.0));
    }
    Ok(best)
}

/// Additive RDP bookkeeping for a sequence of Gaussian releases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpAccountant {
    orders: Vec<f64>,
    rdp: Vec<f64>,
    releases: usize,
}

impl Default for RdpAccountant {
    fn default() -> Self {
        Self::with_orders(DEFAULT_RDP_ORDERS.to_vec()).expect("default orders are valid")
    }
}

impl RdpAccountant {
    pub fn with_orders(orders: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return precondition("RDP order grid must not be empty");
        }
        if let Some(bad) = orders.iter().find(|o| !(**o > 1.0)) {
            return domain(format!("Rényi order must exceed 1, got {bad}"));
        }
        let rdp = vec![0.0; orders.len()];
        Ok(Self {
            orders,
            rdp,
            releases: 0,
        })
    }

    pub fn compose_gaussian(&mut self, noise_multiplier: f64) -> Result<()> {
        for (order, acc) in self.orders.iter().zip(self.rdp.iter_mut()) {
            *acc += rdp_of_gaussian(noise_multiplier, *order)?;
        }
        self.releases += 1;
        Ok(())
    }

    pub fn releases(&self) -> usize {
        self.releases
    }

    pub fn accumulated(&self) -> Vec<(f64, f64)> {
        self.orders.iter().copied().zip(self.rdp.iter().copied()).collect()
    }

    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        rdp_to_dp(&self.accumulated(), delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_map() -> ActionBudgetMap {
        ActionBudgetMap::uniform(10.0, (-5.0f64).exp(), 100, 70, 5, NoiseMechanism::Laplace)
            .unwrap()
    }

    #[test]
    fn grid_endpoints_and_midpoint() {
        let map = default_map();
        assert!((map.action_to_budget(1).unwrap().epsilon - 0.1).abs() < 1e-15);
        assert!((map.action_to_budget(5).unwrap().epsilon - 10.0 / 70.0).abs() < 1e-15);
        let mid = 0.1 + 2.0 * (10.0 / 70.0 - 0.1) / 4.0;
        assert!((map.action_to_budget(3).unwrap().epsilon - mid).abs() < 1e-15);
        assert!((mid - 0.121428).abs() < 1e-6);
        assert_eq!(map.delta_per_round(), 0.0);
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let map = default_map();
        assert!(matches!(map.action_to_budget(0), Err(Error::Precondition(_))));
        assert!(matches!(map.action_to_budget(6), Err(Error::Precondition(_))));
    }

    #[test]
    fn gaussian_grid_splits_delta_over_horizon() {
        let map =
            ActionBudgetMap::uniform(10.0, 1e-3, 100, 70, 5, NoiseMechanism::Gaussian).unwrap();
        assert!((map.delta_per_round() - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn charges_accumulate() {
        let total = PrivacyBudget::new(0.64, 0.0).unwrap();
        let mut ledger = BudgetLedger::uniform(1, total, 0.1).unwrap();
        for eps in [0.1, 0.1, 0.12] {
            ledger.charge(0, PrivacyBudget { epsilon: eps, delta: 0.0 }).unwrap();
        }
        let c = ledger.client(0).unwrap();
        assert!((c.consumed.epsilon - 0.32).abs() < 1e-12);
        assert!((c.remaining_epsilon() - 0.32).abs() < 1e-12);
        assert!(c.active);
    }

    #[test]
    fn exhaustion_deactivates_client() {
        let total = PrivacyBudget::new(0.25, 0.0).unwrap();
        let mut ledger = BudgetLedger::uniform(1, total, 0.1).unwrap();
        ledger.charge(0, PrivacyBudget { epsilon: 0.2, delta: 0.0 }).unwrap();
        assert!(!ledger.is_active(0));
        let err = ledger.charge(0, PrivacyBudget { epsilon: 0.01, delta: 0.0 });
        assert!(matches!(err, Err(Error::BudgetExhausted { client: 0, .. })));
    }

    #[test]
    fn overdraw_is_rejected() {
        let total = PrivacyBudget::new(0.3, 0.0).unwrap();
        let mut ledger = BudgetLedger::uniform(1, total, 0.1).unwrap();
        let before = ledger.clone();
        let err = ledger.charge(0, PrivacyBudget { epsilon: 0.31, delta: 0.0 });
        assert!(matches!(err, Err(Error::BudgetExhausted { .. })));
        assert_eq!(ledger, before);
    }

    #[test]
    fn zero_charge_is_identity() {
        let total = PrivacyBudget::new(1.0, 0.0).unwrap();
        let mut ledger = BudgetLedger::uniform(2, total, 0.1).unwrap();
        let before = ledger.clone();
        ledger.charge(1, PrivacyBudget::ZERO).unwrap();
        assert_eq!(ledger, before);
    }

    #[test]
    fn uniform_spend_survives_float_drift() {
        let total = PrivacyBudget::new(10.0, 0.0).unwrap();
        let mut ledger = BudgetLedger::uniform(1, total, 0.1).unwrap();
        for _ in 0..100 {
            ledger.charge(0, PrivacyBudget { epsilon: 0.1, delta: 0.0 }).unwrap();
        }
        assert!(!ledger.is_active(0));
    }

    #[test]
    fn calibration_values() {
        assert_eq!(laplace_scale(1.0, 0.1).unwrap(), 10.0);
        assert_eq!(laplace_scale(0.5, 0.5).unwrap(), 1.0);
        assert!((laplace_scale(2.0, 0.142857).unwrap() - 14.000014).abs() < 1e-5);
        assert!(laplace_scale(0.0, 1.0).is_err());
        assert!(laplace_scale(1.0, -1.0).is_err());

        let s = gaussian_sigma(1.0, 1.0, 1e-5).unwrap();
        assert!((s - 4.844805262605).abs() < 1e-9);
        assert!((gaussian_sigma(1.0, 2.0, 1e-5).unwrap() - s / 2.0).abs() < 1e-12);
        assert!((gaussian_sigma(2.0, 1.0, 1e-5).unwrap() - 2.0 * s).abs() < 1e-12);
        assert!(gaussian_sigma(1.0, 1.0, 1.0).is_err());
        assert!(gaussian_sigma(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn rdp_values() {
        assert_eq!(rdp_of_gaussian(4.0, 8.0).unwrap(), 0.25);
        assert_eq!(rdp_of_gaussian(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(rdp_of_gaussian(2.0, 32.0).unwrap(), 4.0);
        assert!(rdp_of_gaussian(1.0, 1.0).is_err());
    }

    #[test]
    fn rdp_conversion() {
        let delta = (-5.0f64).exp();
        assert!((rdp_to_dp(&[(2.0, 0.5)], delta).unwrap() - 5.5).abs() < 1e-12);
        assert!((rdp_to_dp(&[(2.0, 0.5), (11.0, 2.0)], delta).unwrap() - 2.5).abs() < 1e-12);
        assert!(rdp_to_dp(&[], delta).is_err());

        let mut acct = RdpAccountant::with_orders(vec![8.0]).unwrap();
        for _ in 0..100 {
            acct.compose_gaussian(4.0).unwrap();
        }
        assert!((acct.epsilon(delta).unwrap() - (25.0 + 5.0 / 7.0)).abs() < 1e-9);
    }

    #[test]
    fn noise_scale_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let b = 3.0;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = NoiseMechanism::Laplace.sample(&mut rng, b);
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let sd = (sq / n as f64 - mean * mean).sqrt();
        assert!((sd / (b * 2f64.sqrt()) - 1.0).abs() < 0.02, "sd {sd}");
    }

    #[test]
    fn ledger_csv_has_header_and_rows() {
        let total = PrivacyBudget::new(1.0, 0.01).unwrap();
        let ledger = BudgetLedger::uniform(2, total, 0.1).unwrap();
        let mut buf = Vec::new();
        ledger.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "client_id,total_eps,consumed_eps,total_delta,consumed_delta,active"
        );
        assert_eq!(lines[1], "0,1,0,0.01,0,true");
        assert_eq!(lines.len(), 3);
    }
}
