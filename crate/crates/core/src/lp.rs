//! The initial-stage linear program: choose a per-round mixture over actions
//! maximizing predicted reward subject to one average-cost cap.
//!
//! Each column of the solution is a point of the probability simplex and the
//! columns only interact through the cost cap, so the problem has a single
//! coupling multiplier `θ`. [`solve_lp`] bisects on `θ` and splits mass on the
//! columns whose best response flips inside the final bracket. [`simplex`]
//! holds a small dense two-phase solver used as an independent cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Error, Result};

const BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpInstance {
    /// `rewards[a][t]`, one row per action, one column per round.
    rewards: Vec<Vec<f64>>,
    costs: Vec<f64>,
    cap: f64,
}

impl LpInstance {
    pub fn new(rewards: Vec<Vec<f64>>, costs: Vec<f64>, cap: f64) -> Result<Self> {
        if costs.is_empty() {
            return precondition("LP needs at least one action");
        }
        if rewards.len() != costs.len() {
            return precondition(format!(
                "{} reward rows for {} actions",
                rewards.len(),
                costs.len()
            ));
        }
        let rounds = rewards[0].len();
        if rounds == 0 || rewards.iter().any(|r| r.len() != rounds) {
            return precondition("reward rows must share a positive round count");
        }
        if rewards.iter().flatten().any(|r| !r.is_finite()) {
            return domain("LP rewards must be finite");
        }
        if costs.iter().any(|c| !c.is_finite()) || costs.windows(2).any(|w| w[1] <= w[0]) {
            return precondition("LP costs must be finite and strictly increasing");
        }
        if !cap.is_finite() {
            return domain("LP cap must be finite");
        }
        Ok(Self {
            rewards,
            costs,
            cap,
        })
    }

    pub fn actions(&self) -> usize {
        self.costs.len()
    }

    pub fn rounds(&self) -> usize {
        self.rewards[0].len()
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// Objective value of an `A × T0` mixture.
    pub fn value_of(&self, mix: &[Vec<f64>]) -> f64 {
        let t0 = self.rounds() as f64;
        self.rewards
            .iter()
            .zip(mix)
            .map(|(r, o)| r.iter().zip(o).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            / t0
    }

    /// Average cost of an `A × T0` mixture.
    pub fn cost_of(&self, mix: &[Vec<f64>]) -> f64 {
        let t0 = self.rounds() as f64;
        self.costs
            .iter()
            .zip(mix)
            .map(|(c, o)| c * o.iter().sum::<f64>())
            .sum::<f64>()
            / t0
    }

    /// Best action per column for `r − θ C`, ties to the cheaper action.
    fn best_response(&self, theta: f64) -> Vec<usize> {
        (0..self.rounds())
            .map(|t| {
                let mut best = 0;
                let mut best_val = self.rewards[0][t] - theta * self.costs[0];
                for a in 1..self.actions() {
                    let v = self.rewards[a][t] - theta * self.costs[a];
                    if v > best_val {
                        best = a;
                        best_val = v;
                    }
                }
                best
            })
            .collect()
    }

    fn average_cost(&self, choice: &[usize]) -> f64 {
        choice.iter().map(|&a| self.costs[a]).sum::<f64>() / choice.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub value: f64,
    /// `mix[a][t]`, each column sums to one.
    pub mix: Vec<Vec<f64>>,
    /// Multiplier of the cost cap at the optimum (zero when slack).
    pub multiplier: f64,
}

pub fn solve_lp(inst: &LpInstance) -> Result<LpSolution> {
    let (actions, rounds) = (inst.actions(), inst.rounds());
    if inst.cap < inst.costs[0] - 1e-12 {
        return Err(Error::Infeasible(format!(
            "cost cap {} is below the cheapest action cost {}",
            inst.cap, inst.costs[0]
        )));
    }

    let pure = |choice: &[usize]| {
        let mut mix = vec![vec![0.0; rounds]; actions];
        for (t, &a) in choice.iter().enumerate() {
            mix[a][t] = 1.0;
        }
        mix
    };

    let greedy = inst.best_response(0.0);
    if inst.average_cost(&greedy) <= inst.cap + 1e-12 {
        let mix = pure(&greedy);
        return Ok(LpSolution {
            value: inst.value_of(&mix),
            mix,
            multiplier: 0.0,
        });
    }

    // At θ ≥ hi every column prefers the cheapest action.
    let mut hi = 0.0f64;
    for t in 0..rounds {
        for a in 1..actions {
            let ratio = (inst.rewards[a][t] - inst.rewards[0][t]) / (inst.costs[a] - inst.costs[0]);
            hi = hi.max(ratio);
        }
    }
    hi += 1.0;
    let mut lo = 0.0f64;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inst.average_cost(&inst.best_response(mid)) > inst.cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let expensive = inst.best_response(lo);
    let cheap = inst.best_response(hi);
    let mut mix = pure(&cheap);
    let mut slack = (inst.cap - inst.average_cost(&cheap)) * rounds as f64;
    for t in 0..rounds {
        let (from, to) = (cheap[t], expensive[t]);
        if from == to || slack <= 0.0 {
            continue;
        }
        let gap = inst.costs[to] - inst.costs[from];
        let shift = (slack / gap).min(1.0);
        mix[from][t] = 1.0 - shift;
        mix[to][t] = shift;
        slack -= shift * gap;
    }
    Ok(LpSolution {
        value: inst.value_of(&mix),
        mix,
        multiplier: 0.5 * (lo + hi),
    })
}

pub mod simplex {
    //! Dense two-phase simplex with Bland's rule, for small problems.

    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Relation {
        Le,
        Eq,
        Ge,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct Constraint {
        pub coeffs: Vec<f64>,
        pub relation: Relation,
        pub rhs: f64,
    }

    const EPS: f64 = 1e-10;
    const MAX_PIVOTS: usize = 50_000;

    struct Tableau {
        rows: Vec<Vec<f64>>,
        basis: Vec<usize>,
        width: usize,
    }

    impl Tableau {
        fn pivot(&mut self, r: usize, c: usize) {
            let p = self.rows[r][c];
            for v in self.rows[r].iter_mut() {
                *v /= p;
            }
            let pivot_row = self.rows[r].clone();
            for (i, row) in self.rows.iter_mut().enumerate() {
                if i == r {
                    continue;
                }
                let f = row[c];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
            self.basis[r] = c;
        }

        fn rhs(&self, i: usize) -> f64 {
            self.rows[i][self.width]
        }

        /// Maximizes `cost · x` over the allowed columns.
        fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
            for _ in 0..MAX_PIVOTS {
                let entering = (0..self.width).find(|&j| {
                    allowed[j] && {
                        let z: f64 = self
                            .rows
                            .iter()
                            .zip(&self.basis)
                            .map(|(row, &b)| cost[b] * row[j])
                            .sum();
                        cost[j] - z > EPS
                    }
                });
                let Some(j) = entering else {
                    return Ok(());
                };
                let mut leave: Option<(usize, f64)> = None;
                for i in 0..self.rows.len() {
                    let a = self.rows[i][j];
                    if a > EPS {
                        let ratio = self.rhs(i) / a;
                        let better = match leave {
                            None => true,
                            Some((li, lr)) => {
                                ratio < lr - EPS
                                    || (ratio <= lr + EPS && self.basis[i] < self.basis[li])
                            }
                        };
                        if better {
                            leave = Some((i, ratio));
                        }
                    }
                }
                let Some((i, _)) = leave else {
                    return Err(Error::Numerical("linear program is unbounded".into()));
                };
                self.pivot(i, j);
            }
            Err(Error::Numerical("simplex pivot limit reached".into()))
        }
    }

    /// Maximizes `objective · x` subject to `constraints` and `x ≥ 0`.
    pub fn maximize(objective: &[f64], constraints: &[Constraint]) -> Result<(f64, Vec<f64>)> {
        let n = objective.len();
        if constraints.iter().any(|c| c.coeffs.len() != n) {
            return precondition("constraint width differs from objective");
        }
        let rows: Vec<(Vec<f64>, Relation, f64)> = constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let flipped = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();

        let slack_count = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let art_count = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let width = n + slack_count + art_count;
        let mut tab = Tableau {
            rows: Vec::with_capacity(rows.len()),
            basis: Vec::with_capacity(rows.len()),
            width,
        };
        let mut is_art = vec![false; width];
        let (mut s, mut a) = (n, n + slack_count);
        for (coeffs, rel, rhs) in &rows {
            let mut row = vec![0.0; width + 1];
            row[..n].copy_from_slice(coeffs);
            row[width] = *rhs;
            match rel {
                Relation::Le => {
                    row[s] = 1.0;
                    tab.basis.push(s);
                    s += 1;
                }
                Relation::Ge => {
                    row[s] = -1.0;
                    s += 1;
                    row[a] = 1.0;
                    is_art[a] = true;
                    tab.basis.push(a);
                    a += 1;
                }
                Relation::Eq => {
                    row[a] = 1.0;
                    is_art[a] = true;
                    tab.basis.push(a);
                    a += 1;
                }
            }
            tab.rows.push(row);
        }

        if art_count > 0 {
            let phase1: Vec<f64> = is_art.iter().map(|&x| if x { -1.0 } else { 0.0 }).collect();
            tab.optimize(&phase1, &vec![true; width])?;
            let infeasibility: f64 = (0..tab.rows.len())
                .filter(|&i| is_art[tab.basis[i]])
                .map(|i| tab.rhs(i))
                .sum();
            if infeasibility > 1e-8 {
                return Err(Error::Infeasible(format!(
                    "phase one ended with residual {infeasibility}"
                )));
            }
            for i in 0..tab.rows.len() {
                if is_art[tab.basis[i]] {
                    if let Some(j) = (0..width).find(|&j| !is_art[j] && tab.rows[i][j].abs() > 1e-9)
                    {
                        tab.pivot(i, j);
                    }
                }
            }
        }

        let mut cost = vec![0.0; width];
        cost[..n].copy_from_slice(objective);
        let allowed: Vec<bool> = is_art.iter().map(|x| !x).collect();
        tab.optimize(&cost, &allowed)?;

        let mut x = vec![0.0; n];
        for (i, &b) in tab.basis.iter().enumerate() {
            if b < n {
                x[b] = tab.rhs(i);
            }
        }
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok((value, x))
    }

    /// Solves an [`LpInstance`] through the generic dense simplex.
    pub fn solve_instance(inst: &LpInstance) -> Result<LpSolution> {
        let (actions, rounds) = (inst.actions(), inst.rounds());
        let var = |a: usize, t: usize| a * rounds + t;
        let t0 = rounds as f64;
        let mut objective = vec![0.0; actions * rounds];
        for a in 0..actions {
            for t in 0..rounds {
                objective[var(a, t)] = inst.rewards()[a][t] / t0;
            }
        }
        let mut constraints = Vec::with_capacity(rounds + 1);
        for t in 0..rounds {
            let mut coeffs = vec![0.0; actions * rounds];
            for a in 0..actions {
                coeffs[var(a, t)] = 1.0;
            }
            constraints.push(Constraint {
                coeffs,
                relation: Relation::Eq,
                rhs: 1.0,
            });
        }
        let mut coeffs = vec![0.0; actions * rounds];
        for a in 0..actions {
            for t in 0..rounds {
                coeffs[var(a, t)] = inst.costs()[a] / t0;
            }
        }
        constraints.push(Constraint {
            coeffs,
            relation: Relation::Le,
            rhs: inst.cap(),
        });
        let (value, x) = maximize(&objective, &constraints)?;
        let mix = (0..actions)
            .map(|a| (0..rounds).map(|t| x[var(a, t)]).collect())
            .collect();
        Ok(LpSolution {
            value,
            mix,
            multiplier: f64::NAN,
        })
    }
}
