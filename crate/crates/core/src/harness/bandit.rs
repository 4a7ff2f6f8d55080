//! Known-reward contextual bandit for checking the allocator against the
//! offline static-policy optimum.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::allocator::{default_gamma, Allocator, AllocatorConfig, Phase};
use crate::budget::{ActionBudgetMap, BudgetLedger, PrivacyBudget};
use crate::constrainer::{dual_gradient, DualSign, DualState, StepSchedule};
use crate::context::ContextVector;
use crate::error::{precondition, Error, Result};
use crate::gpr::{FactorUpdate, GprInput, GprModel, KernelForm, KernelParams};
use crate::lp::{solve_lp, LpInstance};
use crate::sim::derive_seed;

/// Linear expected reward `w_a · x` with contexts uniform on `[0, 1]^d` and
/// additive Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBanditEnv {
    pub weights: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub noise_std: f64,
}

impl SyntheticBanditEnv {
    pub fn new(weights: Vec<Vec<f64>>, costs: Vec<f64>, noise_std: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != costs.len() {
            return precondition("need one weight vector per action cost");
        }
        let d = weights[0].len();
        if d == 0 || weights.iter().any(|w| w.len() != d) {
            return precondition("weight vectors must share a positive dimension");
        }
        if costs.windows(2).any(|w| w[1] <= w[0]) || costs[0] <= 0.0 {
            return precondition("costs must be positive and strictly increasing");
        }
        if !(noise_std >= 0.0) {
            return precondition("noise std must be non-negative");
        }
        Ok(Self {
            weights,
            costs,
            noise_std,
        })
    }

    /// Random weights that grow with the square root of the action's cost, so
    /// pricier actions tend to pay more but the best one depends on context.
    pub fn random(costs: Vec<f64>, dim: usize, noise_std: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let top = *costs.last().ok_or_else(|| Error::Precondition("no actions".into()))?;
        let weights = costs
            .iter()
            .map(|c| {
                let scale = (c / top).sqrt();
                (0..dim).map(|_| scale * rng.random_range(0.5..1.0)).collect()
            })
            .collect();
        Self::new(weights, costs, noise_std)
    }

    pub fn actions(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random::<f64>()).collect()
    }

    /// `E[r | a, x]` for a 1-based action.
    pub fn expected_reward(&self, action: usize, x: &[f64]) -> f64 {
        self.weights[action - 1].iter().zip(x).map(|(w, v)| w * v).sum()
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, action: usize, x: &[f64], rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.expected_reward(action, x) + self.noise_std * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub horizon: usize,
    pub t0: usize,
    pub dim: usize,
    pub costs: Vec<f64>,
    /// Average per-round spend allowed; the total budget is `horizon · cap`.
    pub cap: f64,
    pub noise_std: f64,
    pub seeds: usize,
    pub seed: u64,
    pub gamma: Option<f64>,
    pub alpha: f64,
    pub length_scale: f64,
    pub kernel_noise_std: Option<f64>,
    pub kernel_form: KernelForm,
    pub eta: Option<f64>,
    pub dual_sign: DualSign,
    pub output: Option<std::path::PathBuf>,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            horizon: 2000,
            t0: 20,
            dim: 2,
            costs: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            cap: 1.0,
            noise_std: 0.1,
            seeds: 5,
            seed: 0,
            gamma: None,
            alpha: 0.0,
            length_scale: 0.2,
            kernel_noise_std: None,
            kernel_form: KernelForm::AsPrinted,
            eta: None,
            dual_sign: DualSign::Pacing,
            output: None,
        }
    }
}

impl BanditConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.costs.len();
        if a == 0 || self.t0 == 0 || (a + 1) * self.t0 >= self.horizon {
            return Err(Error::Config(format!(
                "(actions + 1) * t0 must be below horizon {}",
                self.horizon
            )));
        }
        if self.dim == 0 || self.seeds == 0 {
            return Err(Error::Config("dim and seeds must be positive".into()));
        }
        if !(self.cap >= self.costs[0]) {
            return Err(Error::Config("cap must cover the cheapest action".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> KernelParams {
        KernelParams {
            alpha: self.alpha,
            length_scale: self.length_scale,
            noise_std: self.kernel_noise_std.unwrap_or(self.noise_std.max(1e-3)),
            form: self.kernel_form,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditSeedReport {
    pub seed: u64,
    /// Per-round value of the offline LP optimum.
    pub opt_value: f64,
    pub rounds_played: usize,
    pub cumulative_reward: f64,
    pub uniform_cumulative_reward: f64,
    pub cumulative_regret: f64,
    pub first_half_regret: f64,
    pub second_half_regret: f64,
    /// Mean spend over the final quarter divided by the cap.
    pub late_spend_ratio: f64,
    /// Most frequent action over the final quarter.
    pub late_modal_action: usize,
    pub total_spent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditReport {
    pub seeds: Vec<BanditSeedReport>,
}

impl BanditReport {
    pub fn wins_over_uniform(&self) -> usize {
        self.seeds
            .iter()
            .filter(|s| s.cumulative_reward > s.uniform_cumulative_reward)
            .count()
    }

    pub fn regret_decreasing(&self) -> usize {
        self.seeds
            .iter()
            .filter(|s| s.second_half_regret < s.first_half_regret)
            .count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.seeds {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Offline optimum of the static randomized policy on `contexts` under an
/// average-cost cap.
pub fn offline_opt(env: &SyntheticBanditEnv, contexts: &[Vec<f64>], cap: f64) -> Result<f64> {
    let rewards = (1..=env.actions())
        .map(|a| contexts.iter().map(|x| env.expected_reward(a, x)).collect())
        .collect();
    Ok(solve_lp(&LpInstance::new(rewards, env.costs.clone(), cap)?)?.value)
}

/// Uniform draws over the actions the ledger can still afford.
pub fn run_uniform(env: &SyntheticBanditEnv, contexts: &[Vec<f64>], cap: f64, seed: u64) -> Result<f64> {
    let horizon = contexts.len();
    let total = PrivacyBudget::new(cap * horizon as f64, 0.0)?;
    let mut ledger = BudgetLedger::uniform(1, total, env.costs[0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reward = 0.0;
    for x in contexts {
        let feasible: Vec<usize> = (1..=env.actions())
            .filter(|a| ledger.affordable(cost_of(env, *a)))
            .collect();
        if feasible.is_empty() || !ledger.any_active() {
            break;
        }
        let a = feasible[rng.random_range(0..feasible.len())];
        ledger.charge(0, cost_of(env, a))?;
        reward += env.expected_reward(a, x);
    }
    Ok(reward)
}

fn cost_of(env: &SyntheticBanditEnv, action: usize) -> PrivacyBudget {
    PrivacyBudget {
        epsilon: env.costs[action - 1],
        delta: 0.0,
    }
}

/// Runs the allocator for one seed. Returns the report and the chosen actions.
pub fn run_allocator(
    env: &SyntheticBanditEnv,
    cfg: &BanditConfig,
    contexts: &[Vec<f64>],
    seed: u64,
) -> Result<(BanditSeedReport, Vec<usize>)> {
    let horizon = contexts.len();
    let actions = env.actions();
    let cap = cfg.cap;
    let map = ActionBudgetMap::from_grid(env.costs.clone(), 0.0)?;
    let eps_total = cap * horizon as f64;
    let mut ledger = BudgetLedger::uniform(1, PrivacyBudget::new(eps_total, 0.0)?, map.cheapest())?;
    let alloc_cfg = AllocatorConfig {
        actions,
        t0: cfg.t0,
        horizon,
        gamma: cfg.gamma.unwrap_or_else(|| default_gamma(actions, horizon, 1)),
        mask_unaffordable: true,
        sign: cfg.dual_sign,
    };
    let mut alloc = Allocator::new(alloc_cfg, derive_seed(seed, &[1]))?;
    let mut gpr = GprModel::new(cfg.kernel(), env.dim())?.with_update(FactorUpdate::Extend);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
    let schedule = cfg
        .eta
        .map(StepSchedule::Constant)
        .unwrap_or_else(|| StepSchedule::inverse_sqrt_horizon(horizon));
    let mut duals: Option<DualState> = None;
    let mut random_stage = Vec::new();
    let mut chosen = Vec::with_capacity(horizon);
    let mut expected = Vec::with_capacity(horizon);

    for (idx, x) in contexts.iter().enumerate() {
        let round = idx + 1;
        let ctx = ContextVector::new(x.clone());
        let Some(decision) = alloc.step(round, &gpr, duals.as_ref(), &ledger, &map, cap, &ctx)?
        else {
            break;
        };
        let a = decision.action;
        ledger.charge(0, map.action_to_budget(a)?)?;
        let r = env.sample_reward(a, x, &mut noise_rng);
        chosen.push(a);
        expected.push(env.expected_reward(a, x));
        let input = GprInput::for_action(a, actions, ctx, round);
        if decision.phase == Phase::InitialRandom {
            random_stage.push((input.clone(), r));
        }
        gpr.append(input, r)?;
        if round == alloc_cfg.initial_end() {
            let est = alloc.finish_initial_stage(&gpr, &random_stage, &env.costs, eps_total, 1)?;
            duals = Some(DualState::interior(1, est.radius, schedule)?.with_sign(cfg.dual_sign));
        } else if decision.phase == Phase::ExploreExploit {
            let spent = [map.cost(a)?];
            duals
                .as_mut()
                .expect("duals exist after the initial stage")
                .omd_update(&dual_gradient(&[cap], &spent)?, round)?;
        }
    }

    let opt_value = offline_opt(env, contexts, cap)?;
    let half = horizon / 2;
    let regret_at = |t: usize| opt_value - expected.get(t).copied().unwrap_or(0.0);
    let first: f64 = (0..half).map(regret_at).sum::<f64>() / half as f64;
    let second: f64 = (half..horizon).map(regret_at).sum::<f64>() / (horizon - half) as f64;
    let quarter = horizon - horizon / 4;
    let late: Vec<usize> = chosen.iter().skip(quarter).copied().collect();
    let late_spend = late.iter().map(|a| env.costs[a - 1]).fold(0.0, |s, c| s + c);
    let mut counts = vec![0usize; actions];
    late.iter().for_each(|a| counts[a - 1] += 1);
    let late_modal_action = counts
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(&x.0)))
        .map(|(i, _)| i + 1)
        .unwrap_or(0);
    let cumulative_reward: f64 = expected.iter().sum();
    let report = BanditSeedReport {
        seed,
        opt_value,
        rounds_played: chosen.len(),
        cumulative_reward,
        uniform_cumulative_reward: run_uniform(env, contexts, cap, derive_seed(seed, &[3]))?,
        cumulative_regret: opt_value * horizon as f64 - cumulative_reward,
        first_half_regret: first,
        second_half_regret: second,
        late_spend_ratio: late_spend / ((horizon - quarter) as f64 * cap),
        late_modal_action,
        total_spent: ledger.total_consumed_epsilon(),
    };
    Ok((report, chosen))
}

/// Draws the environment's contexts for one seed.
pub fn contexts_for(env: &SyntheticBanditEnv, horizon: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4]));
    (0..horizon).map(|_| env.sample_context(&mut rng)).collect()
}

/// Runs `cfg.seeds` seeds, each with its own random environment.
pub fn bench_bandit(cfg: &BanditConfig) -> Result<BanditReport> {
    cfg.validate()?;
    let mut seeds = Vec::with_capacity(cfg.seeds);
    for i in 0..cfg.seeds as u64 {
        let seed = cfg.seed + i;
        let env = SyntheticBanditEnv::random(cfg.costs.clone(), cfg.dim, cfg.noise_std, derive_seed(seed, &[5]))?;
        let contexts = contexts_for(&env, cfg.horizon, seed);
        seeds.push(run_allocator(&env, cfg, &contexts, seed)?.0);
    }
    Ok(BanditReport { seeds })
}
