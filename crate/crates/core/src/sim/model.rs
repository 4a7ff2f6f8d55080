//! Matrix-factorization recommender split into server-side item parameters and
//! client-side user embeddings, plus the client upload path.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::budget::{gaussian_sigma, laplace_scale, NoiseMechanism, PrivacyBudget};
use crate::error::{domain, precondition, Error, Result};
use crate::sim::dataset::Rating;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    k: usize,
    users: usize,
    items: usize,
    item_emb: Vec<f64>,
    item_bias: Vec<f64>,
    global_bias: f64,
    user_emb: Vec<f64>,
}

impl MfModel {
    /// Embeddings drawn from `N(0, init_std²)`, item biases zero, global bias 0.5.
    pub fn init<R: Rng + ?Sized>(
        users: usize,
        items: usize,
        k: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return precondition("embedding dimension must be positive");
        }
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::Domain(format!("bad init std {init_std}: {e}")))?;
        let item_emb = (0..items * k).map(|_| normal.sample(rng)).collect();
        let user_emb = (0..users * k).map(|_| normal.sample(rng)).collect();
        Ok(Self {
            k,
            users,
            items,
            item_emb,
            item_bias: vec![0.0; items],
            global_bias: 0.5,
            user_emb,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn item_embedding(&self, i: usize) -> &[f64] {
        &self.item_emb[i * self.k..(i + 1) * self.k]
    }

    pub fn item_embedding_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.item_emb[i * self.k..(i + 1) * self.k]
    }

    pub fn user_embedding(&self, u: usize) -> &[f64] {
        &self.user_emb[u * self.k..(u + 1) * self.k]
    }

    pub fn user_embedding_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.user_emb[u * self.k..(u + 1) * self.k]
    }

    pub fn item_bias(&self, i: usize) -> f64 {
        self.item_bias[i]
    }

    pub fn set_item_bias(&mut self, i: usize, b: f64) {
        self.item_bias[i] = b;
    }

    pub fn global_bias(&self) -> f64 {
        self.global_bias
    }

    pub fn set_global_bias(&mut self, b: f64) {
        self.global_bias = b;
    }

    fn raw_score(&self, u: usize, i: usize) -> f64 {
        let dot: f64 = self
            .user_embedding(u)
            .iter()
            .zip(self.item_embedding(i))
            .map(|(a, b)| a * b)
            .sum();
        dot + self.item_bias[i] + self.global_bias
    }

    /// `clamp(ν_u·ι_i + b_i + ω, 0, 1)`.
    pub fn predict(&self, u: usize, i: usize) -> f64 {
        self.raw_score(u, i).clamp(0.0, 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.global_bias.is_finite()
            && self.item_emb.iter().all(|v| v.is_finite())
            && self.item_bias.iter().all(|v| v.is_finite())
            && self.user_emb.iter().all(|v| v.is_finite())
    }
}

/// What a client sends to the server. There is deliberately no field for user
/// embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpload {
    pub client: usize,
    /// Sorted item ids covered by the upload, pseudo items included.
    pub items: Vec<usize>,
    /// `items.len() × k`, row-major.
    pub item_grads: Vec<f64>,
    pub item_bias_grads: Vec<f64>,
    pub global_grad: f64,
}

impl ClientUpload {
    fn coords(&self) -> impl Iterator<Item = &f64> {
        self.item_grads
            .iter()
            .chain(&self.item_bias_grads)
            .chain(std::iter::once(&self.global_grad))
    }

    fn coords_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.item_grads
            .iter_mut()
            .chain(self.item_bias_grads.iter_mut())
            .chain(std::iter::once(&mut self.global_grad))
    }

    pub fn dimension(&self) -> usize {
        self.item_grads.len() + self.item_bias_grads.len() + 1
    }

    pub fn l1_norm(&self) -> f64 {
        self.coords().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coords().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm(&self, clip: ClipNorm) -> f64 {
        match clip {
            ClipNorm::L1(_) => self.l1_norm(),
            ClipNorm::L2(_) => self.l2_norm(),
        }
    }

    pub fn item_grad(&self, pos: usize) -> &[f64] {
        let k = self.item_grads.len() / self.items.len().max(1);
        &self.item_grads[pos * k..(pos + 1) * k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClipNorm {
    L1(f64),
    L2(f64),
}

impl ClipNorm {
    /// ℓ1 clipping for Laplace noise, ℓ2 for Gaussian.
    pub fn for_mechanism(mechanism: NoiseMechanism, l1: f64, l2: f64) -> Self {
        match mechanism {
            NoiseMechanism::Laplace => ClipNorm::L1(l1),
            NoiseMechanism::Gaussian => ClipNorm::L2(l2),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            ClipNorm::L1(b) | ClipNorm::L2(b) => *b,
        }
    }
}

/// Scales `upload` down to the clip bound; returns the pre-clip norm.
pub fn clip(upload: &mut ClientUpload, clip: ClipNorm) -> Result<f64> {
    let bound = clip.bound();
    if !(bound > 0.0 && bound.is_finite()) {
        return domain(format!("clip bound must be positive, got {bound}"));
    }
    let norm = upload.norm(clip);
    if norm > bound {
        let f = bound / norm;
        upload.coords_mut().for_each(|v| *v *= f);
    }
    Ok(norm)
}

/// One SGD gradient of the mean squared error over the client's ratings.
///
/// The user-embedding step is applied to `model` in place and never leaves the
/// client. Pseudo items are labelled with the client's own prediction, so their
/// residual and gradient are zero; they only widen the uploaded item set.
/// Returns `None` when the client holds no ratings.
pub fn local_update(
    model: &mut MfModel,
    client: usize,
    ratings: &[Rating],
    pseudo_items: &[usize],
    learning_rate: f64,
) -> Option<ClientUpload> {
    if ratings.is_empty() {
        return None;
    }
    let k = model.k;
    let n = ratings.len() as f64;
    let mut slots: BTreeMap<usize, usize> = BTreeMap::new();
    for r in ratings {
        slots.insert(r.item, 0);
    }
    for &i in pseudo_items {
        slots.insert(i, 0);
    }
    let items: Vec<usize> = slots.keys().copied().collect();
    for (pos, slot) in slots.values_mut().enumerate() {
        *slot = pos;
    }
    let mut item_grads = vec![0.0; items.len() * k];
    let mut item_bias_grads = vec![0.0; items.len()];
    let mut global_grad = 0.0;
    let mut user_grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();

    for r in ratings {
        // Straight-through: the clamp is treated as identity for gradients.
        let g = 2.0 * (model.predict(r.user, r.item) - r.value) / n;
        let pos = slots[&r.item];
        let nu = model.user_embedding(r.user);
        let iota = model.item_embedding(r.item);
        for c in 0..k {
            item_grads[pos * k + c] += g * nu[c];
        }
        let ug = user_grads.entry(r.user).or_insert_with(|| vec![0.0; k]);
        for c in 0..k {
            ug[c] += g * iota[c];
        }
        item_bias_grads[pos] += g;
        global_grad += g;
    }
    for (u, g) in user_grads {
        for (v, d) in model.user_embedding_mut(u).iter_mut().zip(g) {
            *v -= learning_rate * d;
        }
    }
    Some(ClientUpload {
        client,
        items,
        item_grads,
        item_bias_grads,
        global_grad,
    })
}

/// Adds i.i.d. per-coordinate noise calibrated to `budget` and the clip bound.
pub fn add_noise<R: Rng + ?Sized>(
    upload: &mut ClientUpload,
    mechanism: NoiseMechanism,
    budget: PrivacyBudget,
    clip: ClipNorm,
    rng: &mut R,
) -> Result<()> {
    let scale = match (mechanism, clip) {
        (NoiseMechanism::Laplace, ClipNorm::L1(s)) => laplace_scale(s, budget.epsilon)?,
        (NoiseMechanism::Gaussian, ClipNorm::L2(s)) => {
            gaussian_sigma(s, budget.epsilon, budget.delta)?
        }
        _ => {
            return Err(Error::Config(format!(
                "{} noise cannot be paired with {clip:?} clipping",
                mechanism.name()
            )))
        }
    };
    for v in upload.coords_mut() {
        *v += mechanism.sample(rng, scale);
    }
    Ok(())
}

/// Averages uploaded gradients and takes one descent step. Item parameters are
/// averaged over the clients whose upload covers the item; the global bias
/// over all uploads. Returns the number of contributing clients.
pub fn aggregate(model: &mut MfModel, uploads: &[ClientUpload], learning_rate: f64) -> usize {
    if uploads.is_empty() {
        return 0;
    }
    let k = model.k;
    let mut sums = vec![0.0; model.items * k];
    let mut bias_sums = vec![0.0; model.items];
    let mut counts = vec![0usize; model.items];
    let mut global = 0.0;
    for up in uploads {
        for (pos, &i) in up.items.iter().enumerate() {
            counts[i] += 1;
            bias_sums[i] += up.item_bias_grads[pos];
            for c in 0..k {
                sums[i * k + c] += up.item_grads[pos * k + c];
            }
        }
        global += up.global_grad;
    }
    for i in 0..model.items {
        if counts[i] == 0 {
            continue;
        }
        let m = counts[i] as f64;
        for c in 0..k {
            model.item_emb[i * k + c] -= learning_rate * sums[i * k + c] / m;
        }
        model.item_bias[i] -= learning_rate * bias_sums[i] / m;
    }
    model.global_bias -= learning_rate * global / uploads.len() as f64;
    uploads.len()
}
