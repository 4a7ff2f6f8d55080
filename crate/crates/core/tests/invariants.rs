use bgt_core::allocator::action_distribution;
use bgt_core::budget::{ActionBudgetMap, BudgetLedger, NoiseMechanism, PrivacyBudget};
use bgt_core::constrainer::{DualGradient, DualSign, DualState, StepSchedule};
use bgt_core::sim::model::{clip, ClientUpload, ClipNorm};
use proptest::prelude::*;

proptest! {
    #[test]
    fn ledger_never_overspends(
        total in 0.5f64..20.0,
        charges in prop::collection::vec((0usize..4, 0.0f64..3.0), 1..60),
    ) {
        let budget = PrivacyBudget::new(total, 0.0).unwrap();
        let mut ledger = BudgetLedger::uniform(4, budget, 0.1).unwrap();
        let mut spent = [0.0f64; 4];
        for (u, eps) in charges {
            let cost = PrivacyBudget::new(eps, 0.0).unwrap();
            if ledger.charge(u, cost).is_ok() {
                spent[u] += eps;
            }
        }
        for (u, c) in ledger.clients().iter().enumerate() {
            prop_assert!(c.consumed.epsilon <= total + 1e-12);
            prop_assert!((c.consumed.epsilon - spent[u]).abs() <= 1e-12);
            prop_assert_eq!(c.active, c.remaining_epsilon() + 1e-12 >= 0.1);
        }
    }

    #[test]
    fn distribution_is_a_distribution(
        beta in prop::collection::vec(-5.0f64..5.0, 1..10),
        gamma in 1e-6f64..1e4,
    ) {
        let d = action_distribution(&beta, gamma).unwrap();
        let p = d.probabilities();
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = p[d.argmax() - 1];
        for (i, b) in beta.iter().enumerate() {
            prop_assert!(*b <= beta[d.argmax() - 1]);
            if i + 1 != d.argmax() {
                prop_assert!(p[i] <= 1.0 / beta.len() as f64 + 1e-15);
            }
        }
        prop_assert!(best >= 1.0 / beta.len() as f64 - 1e-12);
    }

    #[test]
    fn masked_distribution_avoids_infeasible(
        beta in prop::collection::vec(-5.0f64..5.0, 2..8),
        bits in prop::collection::vec(any::<bool>(), 8),
        gamma in 0.1f64..100.0,
    ) {
        let mut feasible: Vec<bool> = bits[..beta.len()].to_vec();
        feasible[0] = true;
        let mut d = action_distribution(&beta, gamma).unwrap();
        d.mask(&feasible, &beta).unwrap();
        for (p, ok) in d.probabilities().iter().zip(&feasible) {
            if !ok {
                prop_assert_eq!(*p, 0.0);
            }
        }
        prop_assert!((d.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duals_stay_in_ball(
        radius in 1e-3f64..1e3,
        eta in 0.0f64..5.0,
        grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..20),
        pacing in any::<bool>(),
    ) {
        let sign = if pacing { DualSign::Pacing } else { DualSign::AsPrinted };
        let mut s = DualState::interior(3, radius, StepSchedule::Constant(eta)).unwrap().with_sign(sign);
        for (t, g) in grads.into_iter().enumerate() {
            s.omd_update(&DualGradient::new(g).unwrap(), t + 1).unwrap();
            prop_assert!(s.lambda().iter().all(|v| *v >= 0.0 && v.is_finite()));
            prop_assert!(s.l1() <= radius * (1.0 + 1e-12));
        }
    }

    #[test]
    fn budget_grid_spans_the_range(
        eps in 0.1f64..100.0,
        horizon in 2usize..500,
        frac in 0.1f64..1.0,
        actions in 1usize..10,
    ) {
        let min_h = ((horizon as f64 * frac) as usize).max(1);
        let map = ActionBudgetMap::uniform(eps, 0.01, horizon, min_h, actions, NoiseMechanism::Laplace);
        if min_h == horizon && actions > 1 {
            prop_assert!(map.is_err());
            return Ok(());
        }
        let map = map.unwrap();
        let g = map.grid();
        prop_assert_eq!(g[0], eps / horizon as f64);
        if actions > 1 {
            prop_assert_eq!(*g.last().unwrap(), eps / min_h as f64);
        }
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(map.delta_per_round(), 0.0);
    }

    #[test]
    fn clipping_respects_bound(
        grads in prop::collection::vec(-10.0f64..10.0, 4..40),
        bound in 1e-3f64..5.0,
        l1 in any::<bool>(),
    ) {
        let k = 4;
        let items = grads.len() / k;
        let mut up = ClientUpload {
            client: 0,
            items: (0..items).collect(),
            item_grads: grads[..items * k].to_vec(),
            item_bias_grads: vec![0.3; items],
            global_grad: -0.2,
        };
        let c = if l1 { ClipNorm::L1(bound) } else { ClipNorm::L2(bound) };
        let before = up.norm(c);
        let reported = clip(&mut up, c).unwrap();
        prop_assert_eq!(reported, before);
        prop_assert!(up.norm(c) <= bound * (1.0 + 1e-12));
        if before <= bound {
            prop_assert!((up.norm(c) - before).abs() < 1e-12);
        }
    }
}
