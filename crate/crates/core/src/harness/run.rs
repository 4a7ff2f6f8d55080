//! One full training run: data preparation, the allocation loop and CSV output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::allocator::{Allocator, AllocatorConfig, InitialEstimate, Phase};
use crate::baselines::Scheduler;
use crate::budget::{
    gaussian_sigma, ActionBudgetMap, BudgetLedger, NoiseMechanism, PrivacyBudget, RdpAccountant,
};
use crate::constrainer::{dual_gradient, DualState};
use crate::context::reduce;
use crate::error::{Error, Result};
use crate::gpr::{GprInput, GprModel};
use crate::harness::config::{DualInit, Policy, RunConfig};
use crate::sim::dataset::{synthetic_low_rank, DatasetFormat, RatingDataset};
use crate::sim::{derive_seed, FedSim};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub round: usize,
    pub rmse: f64,
    pub f1: f64,
    pub reward: f64,
    /// Grid action, or 0 when a baseline chose the budget directly.
    pub action: usize,
    /// Epsilon charged to each participating client this round.
    pub eps_spent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub round: usize,
    pub phase: String,
    pub action: usize,
    pub scores: Option<Vec<f64>>,
    pub probabilities: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub lambda_l1: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub policy: String,
    pub mechanism: String,
    pub seed: u64,
    pub eps_total: f64,
    pub horizon: usize,
    pub rounds_executed: usize,
    pub initial_rmse: f64,
    pub final_rmse: f64,
    pub final_f1: f64,
    /// Largest per-client epsilon consumed.
    pub eps_spent: f64,
    /// Epsilon at `delta_total` from RDP composition; Gaussian runs only.
    pub rdp_epsilon: Option<f64>,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: Summary,
    pub metrics: Vec<MetricRow>,
    pub decisions: Vec<DecisionRow>,
    pub ledger: BudgetLedger,
    /// Per-client epsilon charged in each executed round, in round order.
    pub charges: Vec<Vec<f64>>,
    pub gpr: Option<GprModel>,
    pub estimate: Option<InitialEstimate>,
    /// Largest post-clip upload norm over the clip bound seen in any round.
    pub max_clip_ratio: f64,
}

/// Loads or generates the configured dataset.
pub fn load_dataset(cfg: &RunConfig) -> Result<RatingDataset> {
    match cfg.dataset_format {
        DatasetFormat::Synthetic => synthetic_low_rank(&cfg.synthetic(), derive_seed(cfg.seed, &[0])),
        format => {
            let path = cfg
                .dataset_path
                .as_ref()
                .ok_or_else(|| Error::Config("dataset_path is required".into()))?;
            RatingDataset::load(path, format)
        }
    }
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    run_on(cfg, &data)
}

/// Runs `cfg` on an already loaded dataset.
pub fn run_on(cfg: &RunConfig, data: &RatingDataset) -> Result<RunResult> {
    cfg.validate()?;
    let mut sim = FedSim::new(data, cfg.sim(), cfg.horizon, cfg.seed)?;
    let clients = sim.clients();
    let map = ActionBudgetMap::uniform(
        cfg.eps_total,
        cfg.delta_total,
        cfg.horizon,
        cfg.min_horizon,
        cfg.actions,
        cfg.mechanism,
    )?;
    let total = PrivacyBudget::new(
        cfg.eps_total,
        match cfg.mechanism {
            NoiseMechanism::Laplace => 0.0,
            NoiseMechanism::Gaussian => cfg.delta_total,
        },
    )?;
    let min_cost = if cfg.policy == Policy::Bgtplanner {
        map.cheapest()
    } else {
        0.0
    };
    let mut ledger = BudgetLedger::uniform(clients, total, min_cost)?;
    let mut rdp = RdpAccountant::default();
    let mut state = LoopState::default();
    info!(
        "run policy={} mechanism={} seed={} clients={clients}",
        cfg.policy.name(),
        cfg.mechanism.name(),
        cfg.seed
    );

    let (gpr, estimate) = if cfg.policy == Policy::Bgtplanner {
        let (g, e) = bgt_loop(cfg, &mut sim, &map, &mut ledger, &mut rdp, &mut state)?;
        (Some(g), e)
    } else {
        baseline_loop(cfg, &mut sim, &map, &mut ledger, &mut rdp, &mut state)?;
        (None, None)
    };

    let eps_spent = ledger
        .clients()
        .iter()
        .map(|c| c.consumed.epsilon)
        .fold(0.0, f64::max);
    let rdp_epsilon = match cfg.mechanism {
        NoiseMechanism::Gaussian if rdp.releases() > 0 => Some(rdp.epsilon(cfg.delta_total)?),
        _ => None,
    };
    let summary = Summary {
        policy: cfg.policy.name().to_string(),
        mechanism: cfg.mechanism.name().to_string(),
        seed: cfg.seed,
        eps_total: cfg.eps_total,
        horizon: cfg.horizon,
        rounds_executed: state.metrics.len(),
        initial_rmse: sim.initial_rmse(),
        final_rmse: sim.last_rmse(),
        final_f1: sim.last_f1(),
        eps_spent,
        rdp_epsilon,
        radius: estimate.as_ref().map(|e| e.radius),
    };
    Ok(RunResult {
        summary,
        metrics: state.metrics,
        decisions: state.decisions,
        ledger,
        charges: state.charges,
        gpr,
        estimate,
        max_clip_ratio: state.max_clip_ratio,
    })
}

#[derive(Default)]
struct LoopState {
    metrics: Vec<MetricRow>,
    decisions: Vec<DecisionRow>,
    charges: Vec<Vec<f64>>,
    max_clip_ratio: f64,
}

/// Executes one simulated round and records its metric row and charges.
#[allow(clippy::too_many_arguments)]
fn play_round(
    cfg: &RunConfig,
    sim: &mut FedSim,
    ledger: &mut BudgetLedger,
    rdp: &mut RdpAccountant,
    state: &mut LoopState,
    round: usize,
    action: usize,
    budget: Option<PrivacyBudget>,
) -> Result<(f64, Vec<f64>)> {
    let privacy = budget.map(|b| (cfg.mechanism, b));
    let outcome = sim.run_round(round, ledger, privacy)?;
    if let (Some(b), NoiseMechanism::Gaussian) = (budget, cfg.mechanism) {
        let sigma = gaussian_sigma(cfg.clip_l2, b.epsilon, b.delta)?;
        rdp.compose_gaussian(sigma / cfg.clip_l2)?;
    }
    let spent: Vec<f64> = outcome.charged.iter().map(|c| c.epsilon).collect();
    state.max_clip_ratio = state.max_clip_ratio.max(outcome.max_clip_ratio);
    state.metrics.push(MetricRow {
        round,
        rmse: outcome.rmse,
        f1: outcome.f1,
        reward: outcome.reward,
        action,
        eps_spent: budget.map_or(0.0, |b| b.epsilon),
    });
    state.charges.push(spent.clone());
    debug!("round {round}: action {action} rmse {:.5}", outcome.rmse);
    Ok((outcome.reward, spent))
}

fn bgt_loop(
    cfg: &RunConfig,
    sim: &mut FedSim,
    map: &ActionBudgetMap,
    ledger: &mut BudgetLedger,
    rdp: &mut RdpAccountant,
    state: &mut LoopState,
) -> Result<(GprModel, Option<InitialEstimate>)> {
    let clients = sim.clients();
    let alloc_cfg = AllocatorConfig {
        actions: cfg.actions,
        t0: cfg.t0,
        horizon: cfg.horizon,
        gamma: cfg.gamma_for(clients),
        mask_unaffordable: cfg.mask_unaffordable,
        sign: cfg.dual_sign,
    };
    let mut alloc = Allocator::new(alloc_cfg, derive_seed(cfg.seed, &[6]))?;
    let mut gpr = GprModel::new(cfg.kernel(), cfg.context_dim)?.with_update(cfg.factor_update);
    let fair = cfg.eps_total / cfg.horizon as f64;
    let fair_vec = vec![fair; clients];
    let mut duals: Option<DualState> = None;
    let mut estimate = None;
    let mut random_stage = Vec::with_capacity(cfg.t0);

    for round in 1..=cfg.horizon {
        let context = reduce(&sim.interaction_matrix(round), cfg.context_dim, cfg.normalize_context)?;
        let Some(decision) =
            alloc.step(round, &gpr, duals.as_ref(), ledger, map, fair, &context)?
        else {
            info!("all clients exhausted before round {round}");
            break;
        };
        let budget = map.action_to_budget(decision.action)?;
        let (reward, spent) = play_round(
            cfg,
            sim,
            ledger,
            rdp,
            state,
            round,
            decision.action,
            Some(budget),
        )?;
        let input = GprInput::for_action(decision.action, cfg.actions, context, round);
        if decision.phase == Phase::InitialRandom {
            random_stage.push((input.clone(), reward));
        }
        gpr.append(input, reward)?;

        if round == alloc_cfg.initial_end() {
            let est = alloc.finish_initial_stage(&gpr, &random_stage, map.grid(), cfg.eps_total, clients)?;
            let schedule = cfg.step_schedule();
            let d = match cfg.dual_init {
                DualInit::Interior => DualState::interior(clients, est.radius, schedule)?,
                DualInit::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[7]));
                    DualState::random(clients, est.radius, schedule, &mut rng)?
                }
            };
            info!(
                "initial stage done: E={:.3e} M={:.4} OPT={:.4e} radius={:.4}",
                est.error, est.m, est.opt_hat, est.radius
            );
            duals = Some(d.with_sign(cfg.dual_sign));
            estimate = Some(est);
        } else if decision.phase == Phase::ExploreExploit {
            let d = duals.as_mut().expect("duals exist after the initial stage");
            d.omd_update(&dual_gradient(&fair_vec, &spent)?, round)?;
        }

        let dual_stats = duals.as_ref().filter(|_| !decision.phase.is_initial());
        state.decisions.push(DecisionRow {
            round,
            phase: decision.phase.name().to_string(),
            action: decision.action,
            scores: decision.scores,
            probabilities: Some(decision.probabilities),
            radius: alloc.radius(),
            lambda_l1: dual_stats.map(|d| d.l1()),
            lambda_min: dual_stats.map(|d| d.min()),
            lambda_max: dual_stats.map(|d| d.max()),
        });
    }
    Ok((gpr, estimate))
}

fn baseline_loop(
    cfg: &RunConfig,
    sim: &mut FedSim,
    map: &ActionBudgetMap,
    ledger: &mut BudgetLedger,
    rdp: &mut RdpAccountant,
    state: &mut LoopState,
) -> Result<()> {
    let mut scheduler = Scheduler::new(cfg.schedule_policy(), cfg.eps_total, cfg.horizon)?;
    let mut losses = Vec::with_capacity(cfg.horizon);
    for round in 1..=cfg.horizon {
        let remaining = ledger.min_remaining_active().unwrap_or(0.0);
        let budget = match scheduler.next(round, &losses, remaining)? {
            None => None,
            Some(eps) => {
                let b = PrivacyBudget::new(eps, map.delta_per_round())?;
                if eps <= 0.0 || !ledger.affordable(b) {
                    info!("{} schedule ran out of budget at round {round}", cfg.policy.name());
                    break;
                }
                Some(b)
            }
        };
        play_round(cfg, sim, ledger, rdp, state, round, 0, budget)?;
        losses.push(sim.last_rmse());
        state.decisions.push(DecisionRow {
            round,
            phase: "baseline".into(),
            action: 0,
            scores: None,
            probabilities: None,
            radius: None,
            lambda_l1: None,
            lambda_min: None,
            lambda_max: None,
        });
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunResult {
    /// Writes `metrics.csv`, `decisions.csv`, `ledger.csv`, `summary.csv` and,
    /// for planner runs, `gpr_history.csv` into `dir`.
    pub fn write(&self, dir: &Path, actions: usize) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
        for row in &self.metrics {
            w.serialize(row)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("decisions.csv"))?;
        let mut header: Vec<String> = vec!["round".into(), "phase".into(), "action".into()];
        header.extend((1..=actions).map(|a| format!("beta_{a}")));
        header.extend((1..=actions).map(|a| format!("p_{a}")));
        header.extend(["radius", "lambda_l1", "lambda_min", "lambda_max"].map(String::from));
        w.write_record(&header)?;
        for d in &self.decisions {
            let mut rec = vec![d.round.to_string(), d.phase.clone(), d.action.to_string()];
            for list in [&d.scores, &d.probabilities] {
                match list {
                    Some(v) => rec.extend(v.iter().map(f64::to_string)),
                    None => rec.extend(std::iter::repeat_n(String::new(), actions)),
                }
            }
            rec.extend([opt(d.radius), opt(d.lambda_l1), opt(d.lambda_min), opt(d.lambda_max)]);
            w.write_record(&rec)?;
        }
        w.flush()?;

        self.ledger
            .write_csv(BufWriter::new(File::create(dir.join("ledger.csv"))?))?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.serialize(&self.summary)?;
        w.flush()?;

        if let Some(gpr) = &self.gpr {
            let mut out = BufWriter::new(File::create(dir.join("gpr_history.csv"))?);
            gpr.write_history_csv(&mut out, actions)?;
            out.flush()?;
        }
        Ok(())
    }
}
