use bgt_core::allocator::{default_gamma, Allocator, AllocatorConfig, Phase};
use bgt_core::budget::{ActionBudgetMap, BudgetLedger, NoiseMechanism, PrivacyBudget};
use bgt_core::constrainer::{DualSign, DualState, StepSchedule};
use bgt_core::context::ContextVector;
use bgt_core::gpr::{GprModel, KernelParams};

fn config() -> AllocatorConfig {
    AllocatorConfig {
        actions: 5,
        t0: 2,
        horizon: 40,
        gamma: default_gamma(5, 40, 3),
        mask_unaffordable: true,
        sign: DualSign::Pacing,
    }
}

fn map() -> ActionBudgetMap {
    ActionBudgetMap::uniform(4.0, 0.0, 40, 20, 5, NoiseMechanism::Laplace).unwrap()
}

#[test]
fn explore_rounds_only_pick_affordable_actions() {
    let map = map();
    // Remaining 0.13 covers the two cheapest levels (0.1, 0.125) but not 0.15 and up.
    let mut ledger = BudgetLedger::uniform(3, PrivacyBudget::new(4.0, 0.0).unwrap(), map.cheapest()).unwrap();
    for u in 0..3 {
        ledger.charge(u, PrivacyBudget::new(3.87, 0.0).unwrap()).unwrap();
    }
    let model = GprModel::new(KernelParams::default(), 2).unwrap();
    let duals = DualState::interior(3, 1.0, StepSchedule::Constant(0.1)).unwrap();
    let mut alloc = Allocator::new(config(), 9).unwrap();
    alloc.fix_radius(1.0);
    let ctx = ContextVector::new(vec![0.3, 0.1]);
    for round in 13..40 {
        let d = alloc
            .step(round, &model, Some(&duals), &ledger, &map, 0.1, &ctx)
            .unwrap()
            .unwrap();
        assert_eq!(d.phase, Phase::ExploreExploit);
        assert!(d.action <= 2, "round {round} picked unaffordable action {}", d.action);
        assert!(d.probabilities[2..].iter().all(|p| *p == 0.0));
        assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn exhausted_ledger_stops_the_allocator() {
    let map = map();
    let mut ledger = BudgetLedger::uniform(2, PrivacyBudget::new(0.15, 0.0).unwrap(), map.cheapest()).unwrap();
    for u in 0..2 {
        ledger.charge(u, PrivacyBudget::new(0.1, 0.0).unwrap()).unwrap();
    }
    let model = GprModel::new(KernelParams::default(), 2).unwrap();
    let mut alloc = Allocator::new(config(), 1).unwrap();
    let out = alloc
        .step(1, &model, None, &ledger, &map, 0.1, &ContextVector::zeros(2))
        .unwrap();
    assert!(out.is_none());
    assert_eq!(alloc.phase(), Phase::Exhausted);
}

#[test]
fn sweep_falls_back_to_an_affordable_level() {
    let map = map();
    let mut ledger = BudgetLedger::uniform(2, PrivacyBudget::new(1.0, 0.0).unwrap(), map.cheapest()).unwrap();
    for u in 0..2 {
        ledger.charge(u, PrivacyBudget::new(0.87, 0.0).unwrap()).unwrap();
    }
    let model = GprModel::new(KernelParams::default(), 2).unwrap();
    let mut alloc = Allocator::new(config(), 1).unwrap();
    // Rounds 9-10 sweep action 5 (0.2), which no longer fits.
    let d = alloc
        .step(9, &model, None, &ledger, &map, 0.1, &ContextVector::zeros(2))
        .unwrap()
        .unwrap();
    assert_eq!(d.phase, Phase::InitialArmSweep);
    assert_eq!(d.action, 2);
}

#[test]
fn explore_requires_duals_and_radius() {
    let map = map();
    let ledger = BudgetLedger::uniform(2, PrivacyBudget::new(4.0, 0.0).unwrap(), map.cheapest()).unwrap();
    let model = GprModel::new(KernelParams::default(), 2).unwrap();
    let ctx = ContextVector::zeros(2);
    let mut alloc = Allocator::new(config(), 1).unwrap();
    assert!(alloc.step(20, &model, None, &ledger, &map, 0.1, &ctx).is_err());
    let duals = DualState::interior(2, 1.0, StepSchedule::Constant(0.1)).unwrap();
    assert!(alloc.step(20, &model, Some(&duals), &ledger, &map, 0.1, &ctx).is_err());
}
