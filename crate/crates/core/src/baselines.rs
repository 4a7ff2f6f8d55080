//! Fixed and heuristic per-round budget schedules used as comparison points.

use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Result};

/// Which quantity the geometric rate shrinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthForm {
    /// `ε_t = ε_max − (ε_max − ε_min)·rate^(t−1)`
    #[default]
    Gap,
    /// `ε_t = min(ε_max, ε_min / rate^(t−1))`
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulePolicy {
    NoNoise,
    Uniform,
    IncreasingGeometric {
        eps_min: f64,
        eps_max: f64,
        rate: f64,
        /// Scale the whole schedule once so it sums to the total budget.
        rescale: bool,
        growth: GrowthForm,
    },
    LossTrend {
        window: usize,
        multiplier: f64,
    },
}

impl SchedulePolicy {
    pub fn increasing_default() -> Self {
        SchedulePolicy::IncreasingGeometric {
            eps_min: 1.0,
            eps_max: 10.0,
            rate: 0.9,
            rescale: true,
            growth: GrowthForm::Gap,
        }
    }

    pub fn loss_trend_default() -> Self {
        SchedulePolicy::LossTrend {
            window: 5,
            multiplier: 1.1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchedulePolicy::NoNoise => "no_noise",
            SchedulePolicy::Uniform => "uniform",
            SchedulePolicy::IncreasingGeometric { .. } => "increasing",
            SchedulePolicy::LossTrend { .. } => "loss_trend",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SchedulePolicy::IncreasingGeometric {
                eps_min,
                eps_max,
                rate,
                ..
            } => {
                if !(eps_min > 0.0 && eps_min <= eps_max && eps_max.is_finite()) {
                    return domain(format!(
                        "need 0 < eps_min <= eps_max, got {eps_min} and {eps_max}"
                    ));
                }
                if !(rate > 0.0 && rate < 1.0) {
                    return domain(format!("rate must lie in (0, 1), got {rate}"));
                }
            }
            SchedulePolicy::LossTrend { window, multiplier } => {
                if window == 0 {
                    return domain("loss window must be at least one round");
                }
                if !(multiplier >= 1.0 && multiplier.is_finite()) {
                    return domain(format!("multiplier must be at least 1, got {multiplier}"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Pre-rescale geometric value for round `t` (1-based).
pub fn geometric_epsilon(eps_min: f64, eps_max: f64, rate: f64, growth: GrowthForm, t: usize) -> f64 {
    let decay = rate.powi(t as i32 - 1);
    match growth {
        GrowthForm::Gap => eps_max - (eps_max - eps_min) * decay,
        GrowthForm::Budget => (eps_min / decay).min(eps_max),
    }
}

/// Stateful per-round schedule. `None` from [`Scheduler::next`] means the
/// round runs without noise and without a charge.
#[derive(Debug, Clone)]
pub struct Scheduler {
    policy: SchedulePolicy,
    total: f64,
    horizon: usize,
    scale: f64,
    current: f64,
    last_trigger: usize,
}

impl Scheduler {
    pub fn new(policy: SchedulePolicy, eps_total: f64, horizon: usize) -> Result<Self> {
        policy.validate()?;
        if horizon == 0 {
            return precondition("horizon must be at least 1");
        }
        if !(eps_total > 0.0 && eps_total.is_finite()) {
            return domain(format!("total epsilon must be positive, got {eps_total}"));
        }
        let scale = match policy {
            SchedulePolicy::IncreasingGeometric {
                eps_min,
                eps_max,
                rate,
                rescale: true,
                growth,
            } => {
                let sum: f64 = (1..=horizon)
                    .map(|t| geometric_epsilon(eps_min, eps_max, rate, growth, t))
                    .sum();
                eps_total / sum
            }
            _ => 1.0,
        };
        Ok(Self {
            policy,
            total: eps_total,
            horizon,
            scale,
            current: eps_total / horizon as f64,
            last_trigger: 0,
        })
    }

    pub fn policy(&self) -> &SchedulePolicy {
        &self.policy
    }

    /// Epsilon for `round`, given the test losses of every finished round and
    /// the smallest remaining budget among active clients.
    pub fn next(&mut self, round: usize, losses: &[f64], remaining: f64) -> Result<Option<f64>> {
        if round == 0 {
            return precondition("rounds are 1-based");
        }
        let base = self.total / self.horizon as f64;
        Ok(match self.policy {
            SchedulePolicy::NoNoise => None,
            SchedulePolicy::Uniform => Some(base),
            SchedulePolicy::IncreasingGeometric {
                eps_min,
                eps_max,
                rate,
                growth,
                ..
            } => Some(self.scale * geometric_epsilon(eps_min, eps_max, rate, growth, round)),
            SchedulePolicy::LossTrend { window, multiplier } => {
                let n = losses.len();
                if n > window && n >= self.last_trigger + window {
                    let before = losses[n - window - 1];
                    let best = losses[n - window..].iter().copied().fold(f64::INFINITY, f64::min);
                    if best >= before {
                        self.current *= multiplier;
                        self.last_trigger = n;
                    }
                }
                // Leave enough for one more base-sized round when possible.
                let cap = if remaining >= 2.0 * base {
                    remaining - base
                } else {
                    remaining.min(base)
                };
                Some(self.current.min(cap))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_a_division() {
        let mut s = Scheduler::new(SchedulePolicy::Uniform, 10.0, 100).unwrap();
        assert_eq!(s.next(1, &[], 10.0).unwrap(), Some(0.1));
        assert_eq!(s.next(57, &[], 1.0).unwrap(), Some(0.1));
        let mut none = Scheduler::new(SchedulePolicy::NoNoise, 10.0, 100).unwrap();
        assert_eq!(none.next(1, &[], 10.0).unwrap(), None);
    }

    #[test]
    fn geometric_first_round_and_monotone() {
        assert_eq!(geometric_epsilon(1.0, 10.0, 0.9, GrowthForm::Gap, 1), 1.0);
        assert_eq!(geometric_epsilon(1.0, 10.0, 0.9, GrowthForm::Budget, 1), 1.0);
        for form in [GrowthForm::Gap, GrowthForm::Budget] {
            let mut prev = 0.0;
            for t in 1..=200 {
                let e = geometric_epsilon(1.0, 10.0, 0.9, form, t);
                assert!(e >= prev);
                assert!(e <= 10.0);
                prev = e;
            }
        }
    }

    #[test]
    fn rescaled_geometric_sums_to_total() {
        let mut s = Scheduler::new(SchedulePolicy::increasing_default(), 10.0, 100).unwrap();
        let total: f64 = (1..=100).map(|t| s.next(t, &[], 10.0).unwrap().unwrap()).sum();
        assert!((total - 10.0).abs() < 1e-9);
    }

    #[test]
    fn loss_trend_constant_when_improving() {
        let mut s = Scheduler::new(SchedulePolicy::loss_trend_default(), 10.0, 100).unwrap();
        let mut losses = Vec::new();
        for t in 1..=100 {
            assert_eq!(s.next(t, &losses, 10.0).unwrap(), Some(0.1));
            losses.push(1.0 - 0.001 * t as f64);
        }
    }

    #[test]
    fn loss_trend_grows_on_plateau_and_respects_cap() {
        let mut s = Scheduler::new(SchedulePolicy::loss_trend_default(), 10.0, 100).unwrap();
        let flat = vec![0.5; 6];
        let e = s.next(7, &flat, 10.0).unwrap().unwrap();
        assert!((e - 0.11).abs() < 1e-12);
        // No second trigger until another full window has passed.
        assert!((s.next(8, &[0.5; 7], 10.0).unwrap().unwrap() - 0.11).abs() < 1e-12);
        assert!((s.next(9, &[0.5; 11], 0.15).unwrap().unwrap() - 0.1).abs() < 1e-12);
        assert!((s.next(10, &[0.5; 11], 0.05).unwrap().unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn invalid_policies() {
        let bad = SchedulePolicy::IncreasingGeometric {
            eps_min: 2.0,
            eps_max: 1.0,
            rate: 0.9,
            rescale: true,
            growth: GrowthForm::Gap,
        };
        assert!(bad.validate().is_err());
        let bad_rate = SchedulePolicy::IncreasingGeometric {
            eps_min: 1.0,
            eps_max: 10.0,
            rate: 1.0,
            rescale: false,
            growth: GrowthForm::Gap,
        };
        assert!(Scheduler::new(bad_rate, 10.0, 100).is_err());
        assert!(SchedulePolicy::LossTrend { window: 0, multiplier: 1.1 }.validate().is_err());
    }
}
