//! Gaussian process reward predictor over `(action, context, round)` inputs.
//!
//! The covariance is a product of a distance kernel on `z = [a, x]` and an
//! Ornstein-Uhlenbeck style temporal decay `(1 - α)^{|Δt| / 2}`. Because the
//! temporal term only depends on the pair of rounds, the Gram matrix over the
//! history never changes when time advances, so the Cholesky factor can be
//! grown one row per observation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::context::ContextVector;
use crate::error::{domain, precondition, Error, Result};

/// Diagonal jitter added after a failed factorization.
pub const CHOLESKY_JITTER: f64 = 1e-9;

/// How the distance term enters the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelForm {
    /// `exp(-‖Δz‖ / (2 s²))`, unsquared Euclidean norm.
    #[default]
    AsPrinted,
    /// `exp(-‖Δz‖² / (2 s²))`, the classic squared exponential.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorUpdate {
    /// Grow the factor by one row per observation, O(n²).
    #[default]
    Extend,
    /// Refactorize the whole Gram matrix on every append, O(n³).
    Rebuild,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Temporal decay weight in `[0, 1)`.
    pub alpha: f64,
    /// Length scale `s > 0`.
    pub length_scale: f64,
    /// Observation noise standard deviation `σ_μ > 0`.
    pub noise_std: f64,
    pub form: KernelForm,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            length_scale: 0.2,
            noise_std: 0.05,
            form: KernelForm::AsPrinted,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return domain(format!("kernel alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return domain(format!("length scale must be positive, got {}", self.length_scale));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return domain(format!("noise std must be positive, got {}", self.noise_std));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprInput {
    /// Action embedded on the unit interval.
    pub action: f64,
    pub context: ContextVector,
    pub round: usize,
}

impl GprInput {
    /// Embeds 1-based `action` out of `actions` as `action / actions`.
    pub fn for_action(action: usize, actions: usize, context: ContextVector, round: usize) -> Self {
        Self {
            action: action as f64 / actions as f64,
            context,
            round,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GprPosterior {
    pub mean: f64,
    pub variance: f64,
}

pub fn kernel(params: &KernelParams, a: &GprInput, b: &GprInput) -> Result<f64> {
    if a.context.dim() != b.context.dim() {
        return precondition(format!(
            "context dimensions differ: {} vs {}",
            a.context.dim(),
            b.context.dim()
        ));
    }
    Ok(kernel_value(params, a, b))
}

fn kernel_value(params: &KernelParams, a: &GprInput, b: &GprInput) -> f64 {
    let da = a.action - b.action;
    let sq: f64 = da * da
        + a.context
            .values()
            .iter()
            .zip(b.context.values())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    let dist_term = match params.form {
        KernelForm::AsPrinted => sq.sqrt(),
        KernelForm::Squared => sq,
    };
    let lag = a.round.abs_diff(b.round) as f64;
    let temporal = if lag == 0.0 {
        1.0
    } else {
        (1.0 - params.alpha).powf(lag / 2.0)
    };
    temporal * (-dist_term / (2.0 * params.length_scale * params.length_scale)).exp()
}

/// Zero-mean GP conditioned on the observed `(input, reward)` history.
#[derive(Debug, Clone)]
pub struct GprModel {
    params: KernelParams,
    dim: usize,
    update: FactorUpdate,
    inputs: Vec<GprInput>,
    rewards: Vec<f64>,
    // Lower Cholesky factor of K + (σ² + jitter) I, rows packed back to back.
    chol: Vec<f64>,
    // (K + σ² I)^{-1} r
    weights: Vec<f64>,
    jitter: f64,
}

impl GprModel {
    pub fn new(params: KernelParams, context_dim: usize) -> Result<Self> {
        params.validate()?;
        if context_dim == 0 {
            return precondition("context dimension must be at least 1");
        }
        Ok(Self {
            params,
            dim: context_dim,
            update: FactorUpdate::default(),
            inputs: Vec::new(),
            rewards: Vec::new(),
            chol: Vec::new(),
            weights: Vec::new(),
            jitter: 0.0,
        })
    }

    pub fn with_update(mut self, update: FactorUpdate) -> Self {
        self.update = update;
        self
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn context_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[GprInput] {
        &self.inputs
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check_dim(&self, input: &GprInput) -> Result<()> {
        if input.context.dim() != self.dim {
            return precondition(format!(
                "context has dimension {}, model expects {}",
                input.context.dim(),
                self.dim
            ));
        }
        Ok(())
    }

    fn diag(&self) -> f64 {
        1.0 + self.params.noise_std * self.params.noise_std + self.jitter
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.chol[start..start + i + 1]
    }

    pub fn append(&mut self, input: GprInput, reward: f64) -> Result<()> {
        self.check_dim(&input)?;
        if !reward.is_finite() {
            return domain(format!("reward must be finite, got {reward}"));
        }
        self.inputs.push(input);
        self.rewards.push(reward);
        let update = self.update;
        match update {
            FactorUpdate::Extend if self.try_extend() => {}
            _ => self.refactor()?,
        }
        self.solve_weights();
        Ok(())
    }

    /// Appends one row to the factor for the newest input. Returns false when
    /// the new pivot is not positive.
    fn try_extend(&mut self) -> bool {
        let n = self.inputs.len() - 1;
        let newest = &self.inputs[n];
        let k: Vec<f64> = self.inputs[..n]
            .iter()
            .map(|x| kernel_value(&self.params, x, newest))
            .collect();
        let c = self.forward(&k);
        let pivot = self.diag() - c.iter().map(|v| v * v).sum::<f64>();
        if !(pivot > 0.0 && pivot.is_finite()) {
            return false;
        }
        self.chol.extend_from_slice(&c);
        self.chol.push(pivot.sqrt());
        true
    }

    /// Full factorization of the current history; retries once with jitter.
    pub fn refactor(&mut self) -> Result<()> {
        if let Some(l) = self.cholesky(self.jitter) {
            self.chol = l;
            return Ok(());
        }
        let jitter = self.jitter + CHOLESKY_JITTER;
        match self.cholesky(jitter) {
            Some(l) => {
                self.jitter = jitter;
                self.chol = l;
                Ok(())
            }
            None => Err(Error::Numerical(format!(
                "Cholesky of the {n}x{n} Gram matrix failed after jitter",
                n = self.inputs.len()
            ))),
        }
    }

    fn cholesky(&self, jitter: f64) -> Option<Vec<f64>> {
        let n = self.inputs.len();
        let diag = 1.0 + self.params.noise_std * self.params.noise_std + jitter;
        let mut l = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            let ri = i * (i + 1) / 2;
            for j in 0..=i {
                let rj = j * (j + 1) / 2;
                let mut s = if i == j {
                    diag
                } else {
                    kernel_value(&self.params, &self.inputs[i], &self.inputs[j])
                };
                for m in 0..j {
                    s -= l[ri + m] * l[rj + m];
                }
                if i == j {
                    if !(s > 0.0 && s.is_finite()) {
                        return None;
                    }
                    l[ri + i] = s.sqrt();
                } else {
                    l[ri + j] = s / l[rj + j];
                }
            }
        }
        Some(l)
    }

    /// Solves `L x = b`.
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(b.len());
        for (i, bi) in b.iter().enumerate() {
            let row = self.row(i);
            let s: f64 = row[..i].iter().zip(&x).map(|(l, v)| l * v).sum();
            x.push((bi - s) / row[i]);
        }
        x
    }

    /// Solves `Lᵀ x = b` in place, walking rows of the packed factor.
    fn backward(&self, mut b: Vec<f64>) -> Vec<f64> {
        for i in (0..b.len()).rev() {
            let row = self.row(i);
            b[i] /= row[i];
            let xi = b[i];
            for (bj, l) in b[..i].iter_mut().zip(&row[..i]) {
                *bj -= l * xi;
            }
        }
        b
    }

    fn solve_weights(&mut self) {
        let w = self.forward(&self.rewards);
        self.weights = self.backward(w);
    }

    fn kernel_vector(&self, query: &GprInput) -> Vec<f64> {
        self.inputs
            .iter()
            .map(|x| kernel_value(&self.params, x, query))
            .collect()
    }

    pub fn predict(&self, query: &GprInput) -> Result<GprPosterior> {
        self.check_dim(query)?;
        let prior = kernel_value(&self.params, query, query);
        if self.is_empty() {
            return Ok(GprPosterior {
                mean: 0.0,
                variance: prior,
            });
        }
        let k = self.kernel_vector(query);
        let mean = k.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        let v = self.forward(&k);
        let explained: f64 = v.iter().map(|x| x * x).sum();
        Ok(GprPosterior {
            mean,
            variance: (prior - explained).max(0.0),
        })
    }

    /// Posterior mean only, O(n) per query.
    pub fn predict_mean(&self, query: &GprInput) -> Result<f64> {
        self.check_dim(query)?;
        Ok(self
            .inputs
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * kernel_value(&self.params, x, query))
            .sum())
    }

    pub fn predict_all_actions(
        &self,
        context: &ContextVector,
        round: usize,
        actions: usize,
    ) -> Result<Vec<GprPosterior>> {
        if actions == 0 {
            return precondition("action count must be positive");
        }
        (1..=actions)
            .map(|a| self.predict(&GprInput::for_action(a, actions, context.clone(), round)))
            .collect()
    }

    pub fn predict_means(
        &self,
        context: &ContextVector,
        round: usize,
        actions: usize,
    ) -> Result<Vec<f64>> {
        if actions == 0 {
            return precondition("action count must be positive");
        }
        (1..=actions)
            .map(|a| self.predict_mean(&GprInput::for_action(a, actions, context.clone(), round)))
            .collect()
    }

    /// Writes `round,action,x1..xd,reward`; `action` is the embedded value
    /// scaled back by `actions`.
    pub fn write_history_csv<W: Write>(&self, out: W, actions: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["round".to_string(), "action".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        header.push("reward".into());
        w.write_record(&header)?;
        for (input, r) in self.inputs.iter().zip(&self.rewards) {
            let mut rec = vec![
                input.round.to_string(),
                ((input.action * actions as f64).round() as usize).to_string(),
            ];
            rec.extend(input.context.values().iter().map(f64::to_string));
            rec.push(r.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(action: f64, ctx: &[f64], round: usize) -> GprInput {
        GprInput {
            action,
            context: ContextVector::new(ctx.to_vec()),
            round,
        }
    }

    fn params(noise_std: f64) -> KernelParams {
        KernelParams {
            noise_std,
            ..KernelParams::default()
        }
    }

    #[test]
    fn kernel_closed_forms() {
        let p = KernelParams::default();
        let a = input(0.2, &[0.1, 0.3], 4);
        assert_eq!(kernel(&p, &a, &a).unwrap(), 1.0);

        let b = input(0.2, &[0.1, 0.3], 6);
        assert!((kernel(&p, &a, &b).unwrap() - 0.999).abs() < 1e-15);

        let c = input(0.2, &[0.1 + 0.4, 0.3], 4);
        assert!((kernel(&p, &a, &c).unwrap() - (-5.0f64).exp()).abs() < 1e-12);

        let sq = KernelParams {
            form: KernelForm::Squared,
            ..p
        };
        assert!((kernel(&sq, &a, &c).unwrap() - (-2.0f64).exp()).abs() < 1e-12);

        let bad = input(0.2, &[0.1], 4);
        assert!(kernel(&p, &a, &bad).is_err());
    }

    #[test]
    fn empty_model_returns_prior() {
        let m = GprModel::new(params(0.1), 2).unwrap();
        let post = m.predict(&input(0.4, &[0.5, 0.5], 3)).unwrap();
        assert_eq!(post.mean, 0.0);
        assert_eq!(post.variance, 1.0);
        let all = m.predict_all_actions(&ContextVector::zeros(2), 1, 5).unwrap();
        assert_eq!(all.len(), 5);
        assert!(all.iter().all(|p| p.mean == 0.0 && p.variance == 1.0));
    }

    #[test]
    fn scalar_posterior() {
        let mut m = GprModel::new(params(0.1), 1).unwrap();
        let z = input(0.2, &[0.3], 1);
        m.append(z.clone(), 1.0).unwrap();
        let post = m.predict(&z).unwrap();
        assert!((post.mean - 1.0 / 1.01).abs() < 1e-12);
        assert!((post.variance - (1.0 - 1.0 / 1.01)).abs() < 1e-12);
    }

    #[test]
    fn duplicate_inputs_stay_factorizable() {
        let mut m = GprModel::new(params(1e-2), 1).unwrap();
        let z = input(0.2, &[0.3], 1);
        m.append(z.clone(), 1.0).unwrap();
        m.append(z.clone(), -1.0).unwrap();
        let post = m.predict(&z).unwrap();
        assert!(post.mean.abs() < 1e-9);
        assert!(post.variance >= 0.0);
    }

    #[test]
    fn extend_matches_rebuild() {
        let mut inc = GprModel::new(params(0.05), 3).unwrap();
        let mut full = GprModel::new(params(0.05), 3)
            .unwrap()
            .with_update(FactorUpdate::Rebuild);
        for t in 0..40usize {
            let f = t as f64;
            let z = input(
                ((t % 5) + 1) as f64 / 5.0,
                &[(f * 0.37).sin().abs(), (f * 0.11).cos().abs(), 0.5],
                t + 1,
            );
            let r = (f * 0.3).sin() * 0.1;
            inc.append(z.clone(), r).unwrap();
            full.append(z, r).unwrap();
        }
        let q = input(0.6, &[0.2, 0.4, 0.5], 41);
        let a = inc.predict(&q).unwrap();
        let b = full.predict(&q).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-10);
        assert!((a.variance - b.variance).abs() < 1e-10);
        assert!((inc.predict_mean(&q).unwrap() - a.mean).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut m = GprModel::new(params(0.1), 2).unwrap();
        assert!(m.append(input(0.2, &[0.1], 1), 0.0).is_err());
        assert!(m.predict(&input(0.2, &[0.1, 0.2, 0.3], 1)).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let mut m = GprModel::new(params(0.1), 2).unwrap();
        m.append(GprInput::for_action(3, 5, ContextVector::new(vec![0.5, 0.25]), 7), 0.125)
            .unwrap();
        let mut buf = Vec::new();
        m.write_history_csv(&mut buf, 5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "round,action,x1,x2,reward\n7,3,0.5,0.25,0.125\n");
    }
}
