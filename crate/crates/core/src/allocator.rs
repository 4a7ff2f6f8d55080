//! Budget allocator: a contextual bandit over discrete per-round budget levels.
//!
//! Rounds `1..=A·T0` sweep every action `T0` times, rounds `A·T0+1..=(A+1)·T0`
//! pick actions uniformly at random, and the LP over the random-stage contexts
//! fixes the dual radius `Λ`. Afterwards each round scores the actions with the
//! predicted reward plus the dual penalty and samples from the resulting
//! inverse-gap distribution.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::{ActionBudgetMap, BudgetLedger};
use crate::constrainer::{DualSign, DualState};
use crate::context::ContextVector;
use crate::error::{domain, precondition, Error, Result};
use crate::gpr::{GprInput, GprModel};
use crate::lp::{solve_lp, LpInstance, LpSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    InitialArmSweep,
    InitialRandom,
    ExploreExploit,
    Exhausted,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::InitialArmSweep => "sweep",
            Phase::InitialRandom => "random",
            Phase::ExploreExploit => "explore_exploit",
            Phase::Exhausted => "exhausted",
        }
    }

    pub fn is_initial(&self) -> bool {
        matches!(self, Phase::InitialArmSweep | Phase::InitialRandom)
    }
}

/// `γ = 2 √(A T / ((U + 2) ln T))`.
pub fn default_gamma(actions: usize, horizon: usize, clients: usize) -> f64 {
    let t = horizon.max(2) as f64;
    2.0 * (actions as f64 * t / ((clients as f64 + 2.0) * t.ln())).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocatorConfig {
    pub actions: usize,
    /// Rounds each action is played during the sweep; also the random-stage length.
    pub t0: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Reassign probability of unaffordable actions to the best affordable one.
    pub mask_unaffordable: bool,
    pub sign: DualSign,
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.actions == 0 || self.t0 == 0 {
            return precondition("actions and T0 must be positive");
        }
        if (self.actions + 1) * self.t0 >= self.horizon {
            return precondition(format!(
                "initial stage of {} rounds does not fit in horizon {}",
                (self.actions + 1) * self.t0,
                self.horizon
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return domain(format!("gamma must be positive, got {}", self.gamma));
        }
        Ok(())
    }

    pub fn sweep_end(&self) -> usize {
        self.actions * self.t0
    }

    pub fn initial_end(&self) -> usize {
        (self.actions + 1) * self.t0
    }

    pub fn phase_of(&self, round: usize) -> Phase {
        if round <= self.sweep_end() {
            Phase::InitialArmSweep
        } else if round <= self.initial_end() {
            Phase::InitialRandom
        } else {
            Phase::ExploreExploit
        }
    }
}

/// Sampling distribution over actions (0-based entries for 1-based actions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    probabilities: Vec<f64>,
    /// 1-based action with the highest score.
    argmax: usize,
}

impl ActionDistribution {
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn argmax(&self) -> usize {
        self.argmax
    }

    fn point_mass(actions: usize, action: usize) -> Self {
        let mut probabilities = vec![0.0; actions];
        probabilities[action - 1] = 1.0;
        Self {
            probabilities,
            argmax: action,
        }
    }

    /// Moves all mass of infeasible actions onto the best feasible action.
    pub fn mask(&mut self, feasible: &[bool], beta: &[f64]) -> Result<()> {
        if feasible.len() != self.probabilities.len() || beta.len() != feasible.len() {
            return precondition("mask and score lengths must match the action count");
        }
        let Some(best) = argmax_where(beta, feasible) else {
            return Err(Error::Infeasible("no affordable action".into()));
        };
        let mut moved = 0.0;
        for (p, ok) in self.probabilities.iter_mut().zip(feasible) {
            if !ok {
                moved += *p;
                *p = 0.0;
            }
        }
        self.probabilities[best] += moved;
        Ok(())
    }

    /// Inverse-CDF draw; returns a 1-based action.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if *p > 0.0 {
                last_positive = i;
            }
            acc += p;
            if u < acc {
                return i + 1;
            }
        }
        last_positive + 1
    }
}

/// Index of the largest entry among `allowed`, ties to the lowest index.
fn argmax_where(values: &[f64], allowed: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if !allowed[i] {
            continue;
        }
        match best {
            Some(b) if *v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// `β(a) = μ(a) ∓ penalty(a)` depending on the dual sign convention.
pub fn scores(means: &[f64], penalties: &[f64], sign: DualSign) -> Result<Vec<f64>> {
    if means.len() != penalties.len() {
        return precondition(format!(
            "{} means but {} penalties",
            means.len(),
            penalties.len()
        ));
    }
    Ok(means
        .iter()
        .zip(penalties)
        .map(|(m, p)| sign.score(*m, *p))
        .collect())
}

/// `p(a) = 1 / (A + γ (β_max − β(a)))` off the argmax; the argmax takes the rest.
pub fn action_distribution(beta: &[f64], gamma: f64) -> Result<ActionDistribution> {
    if beta.is_empty() {
        return precondition("at least one action score is required");
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return domain(format!("gamma must be positive, got {gamma}"));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return domain("action scores must be finite");
    }
    let a = beta.len() as f64;
    let best = argmax_where(beta, &vec![true; beta.len()]).expect("non-empty");
    let mut probabilities: Vec<f64> = beta
        .iter()
        .map(|b| 1.0 / (a + gamma * (beta[best] - b)))
        .collect();
    probabilities[best] = 0.0;
    let rest: f64 = probabilities.iter().sum();
    probabilities[best] = 1.0 - rest;
    Ok(ActionDistribution {
        probabilities,
        argmax: best + 1,
    })
}

/// `M(T0) = √(A·E + 4 ln(T U) / T0)`.
pub fn m_bound(actions: usize, error: f64, horizon: usize, clients: usize, t0: usize) -> f64 {
    (actions as f64 * error + 4.0 * ((horizon * clients) as f64).ln() / t0 as f64).sqrt()
}

/// Mean squared residual of the posterior mean over the random-stage records,
/// and the matching `M(T0)`.
pub fn error_term(
    model: &GprModel,
    records: &[(GprInput, f64)],
    actions: usize,
    horizon: usize,
    clients: usize,
) -> Result<(f64, f64)> {
    if records.is_empty() {
        return precondition("error term needs at least one random-stage record");
    }
    let mut sq = 0.0;
    for (z, r) in records {
        let mu = model.predict_mean(z)?;
        sq += (mu - r) * (mu - r);
    }
    let e = sq / records.len() as f64;
    Ok((e, m_bound(actions, e, horizon, clients, records.len())))
}

/// `Λ = T / ε_min (OPT + M)`, floored at `1e-6`.
pub fn estimate_lambda(opt_hat: f64, m: f64, horizon: usize, eps_min_total: f64) -> Result<f64> {
    if !(eps_min_total > 0.0) {
        return domain(format!("minimum total epsilon must be positive, got {eps_min_total}"));
    }
    Ok((horizon as f64 / eps_min_total * (opt_hat + m)).max(1e-6))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialEstimate {
    pub error: f64,
    pub m: f64,
    pub cap: f64,
    pub opt_hat: f64,
    pub radius: f64,
    pub lp: LpSolution,
}

/// What the allocator decided for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub round: usize,
    pub phase: Phase,
    pub action: usize,
    /// Action scores; only present once the initial stage is over.
    pub scores: Option<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Allocator {
    config: AllocatorConfig,
    phase: Phase,
    radius: Option<f64>,
    rng: ChaCha8Rng,
}

impl Allocator {
    pub fn new(config: AllocatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            phase: Phase::InitialArmSweep,
            radius: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &AllocatorConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    /// Sweep action `⌈round / T0⌉`, then uniform random draws.
    pub fn initial_action(&mut self, round: usize) -> Result<usize> {
        match self.config.phase_of(round) {
            _ if round == 0 => precondition("rounds are 1-based"),
            Phase::InitialArmSweep => Ok(round.div_ceil(self.config.t0)),
            Phase::InitialRandom => Ok(self.rng.random_range(1..=self.config.actions)),
            _ => Err(Error::Phase(format!(
                "round {round} is past the initial stage ({} rounds)",
                self.config.initial_end()
            ))),
        }
    }

    /// Solves the initial-stage LP over `random_stage` records and fixes `Λ`.
    pub fn finish_initial_stage(
        &mut self,
        model: &GprModel,
        random_stage: &[(GprInput, f64)],
        costs: &[f64],
        eps_min_total: f64,
        clients: usize,
    ) -> Result<InitialEstimate> {
        let cfg = self.config;
        if costs.len() != cfg.actions {
            return precondition("cost vector length must equal the action count");
        }
        let (error, m) = error_term(model, random_stage, cfg.actions, cfg.horizon, clients)?;
        let mut rewards = vec![Vec::with_capacity(random_stage.len()); cfg.actions];
        for (z, _) in random_stage {
            let means = model.predict_means(&z.context, z.round, cfg.actions)?;
            for (row, mu) in rewards.iter_mut().zip(means) {
                row.push(mu);
            }
        }
        let cap = eps_min_total / cfg.horizon as f64 + 2.0 * m;
        let lp = solve_lp(&LpInstance::new(rewards, costs.to_vec(), cap)?)?;
        let radius = estimate_lambda(lp.value, m, cfg.horizon, eps_min_total)?;
        let admissible = ((cfg.actions + 2) * cfg.t0) as f64;
        let regret_floor = cfg.horizon as f64 * m;
        if eps_min_total <= admissible.max(regret_floor) {
            warn!(
                "total budget {eps_min_total} does not exceed max((A+2)T0, T M) = {}; \
                 regret guarantee does not apply",
                admissible.max(regret_floor)
            );
        }
        self.radius = Some(radius);
        Ok(InitialEstimate {
            error,
            m,
            cap,
            opt_hat: lp.value,
            radius,
            lp,
        })
    }

    pub fn fix_radius(&mut self, radius: f64) {
        self.radius = Some(radius);
    }

    /// Chooses the action for `round`. Returns `None` once every client is out
    /// of budget.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        round: usize,
        model: &GprModel,
        duals: Option<&DualState>,
        ledger: &BudgetLedger,
        map: &ActionBudgetMap,
        fair_share: f64,
        context: &ContextVector,
    ) -> Result<Option<Decision>> {
        if !ledger.any_active() {
            self.phase = Phase::Exhausted;
            return Ok(None);
        }
        let actions = self.config.actions;
        if map.len() != actions {
            return precondition("budget map and allocator disagree on the action count");
        }
        let feasible: Vec<bool> = (1..=actions)
            .map(|a| map.action_to_budget(a).map(|b| ledger.affordable(b)))
            .collect::<Result<_>>()?;
        if !feasible.iter().any(|f| *f) {
            self.phase = Phase::Exhausted;
            return Ok(None);
        }

        self.phase = self.config.phase_of(round);
        if self.phase.is_initial() {
            let phase = self.phase;
            let mut action = self.initial_action(round)?;
            if self.config.mask_unaffordable && !feasible[action - 1] {
                action = (1..action).rev().find(|a| feasible[a - 1]).unwrap_or(1);
            }
            let probabilities = match phase {
                Phase::InitialArmSweep => ActionDistribution::point_mass(actions, action).probabilities,
                _ => vec![1.0 / actions as f64; actions],
            };
            return Ok(Some(Decision {
                round,
                phase,
                action,
                scores: None,
                probabilities,
            }));
        }

        let duals = duals.ok_or_else(|| {
            Error::Phase("dual state is required after the initial stage".into())
        })?;
        if self.radius.is_none() {
            return Err(Error::Phase("initial stage has not fixed the dual radius".into()));
        }
        let means = model.predict_means(context, round, actions)?;
        let fair = vec![fair_share; ledger.len()];
        let penalties: Vec<f64> = (1..=actions)
            .map(|a| {
                let c = map.cost(a)?;
                let cost: Vec<f64> = ledger
                    .clients()
                    .iter()
                    .map(|cl| if cl.active { c } else { 0.0 })
                    .collect();
                duals.penalty(&fair, &cost)
            })
            .collect::<Result<_>>()?;
        let beta = scores(&means, &penalties, duals.sign())?;
        let mut dist = action_distribution(&beta, self.config.gamma)?;
        if self.config.mask_unaffordable {
            dist.mask(&feasible, &beta)?;
        }
        let action = dist.sample(&mut self.rng);
        Ok(Some(Decision {
            round,
            phase: Phase::ExploreExploit,
            action,
            scores: Some(beta),
            probabilities: dist.probabilities,
        }))
    }
}
