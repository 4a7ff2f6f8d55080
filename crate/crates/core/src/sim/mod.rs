//! Federated recommender simulation: clients hold ratings and user
//! embeddings, upload clipped and noised item gradients, and the server
//! aggregates and evaluates on the test split every round.

pub mod dataset;
pub mod metrics;
pub mod model;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::{BudgetLedger, NoiseMechanism, PrivacyBudget};
use crate::context::InteractionMatrix;
use crate::error::{precondition, Error, Result};
use dataset::{split_dataset, ArrivalSchedule, Rating, RatingDataset};
use model::{add_noise, aggregate, clip, local_update, ClipNorm, MfModel};

/// SplitMix64 finalizer over the run seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut z = seed;
    for p in path {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(*p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub init_std: f64,
    pub clip_l1: f64,
    pub clip_l2: f64,
    pub pseudo_items: usize,
    pub threshold: f64,
    pub train_ratio: f64,
    /// Group users into this many clients; `None` makes every user a client.
    pub clients: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            learning_rate: 0.1,
            init_std: 0.3,
            clip_l1: 0.1,
            clip_l2: 0.1,
            pseudo_items: 0,
            threshold: 0.5,
            train_ratio: 0.8,
            clients: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: usize,
    /// `rmse` of the previous round minus `rmse` of this one.
    pub reward: f64,
    pub rmse: f64,
    pub f1: f64,
    /// Charge applied to each client this round (zero for non-participants).
    pub charged: Vec<PrivacyBudget>,
    /// Uploaded client × item sets, pseudo items included.
    pub uploads: InteractionMatrix,
    pub contributors: usize,
    /// Largest post-clip norm divided by the clip bound, over all uploads.
    pub max_clip_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct FedSim {
    config: SimConfig,
    train: RatingDataset,
    test: RatingDataset,
    schedule: ArrivalSchedule,
    client_of: Vec<usize>,
    clients: usize,
    /// Training record indices owned by each client.
    client_records: Vec<Vec<usize>>,
    model: MfModel,
    initial_rmse: f64,
    last_rmse: f64,
    last_f1: f64,
    seed: u64,
}

impl FedSim {
    pub fn new(data: &RatingDataset, config: SimConfig, horizon: usize, seed: u64) -> Result<Self> {
        if config.embedding_dim == 0 {
            return precondition("embedding dimension must be positive");
        }
        if !(config.learning_rate > 0.0) || !(config.init_std >= 0.0) {
            return precondition("learning rate must be positive and init std non-negative");
        }
        let (train, test) = split_dataset(data, config.train_ratio, derive_seed(seed, &[1]))?;
        if test.is_empty() {
            return precondition("test split is empty");
        }
        let schedule = ArrivalSchedule::new(train.len(), horizon, derive_seed(seed, &[2]))?;
        let users = data.users();
        let (client_of, clients) = match config.clients {
            None => ((0..users).collect(), users),
            Some(0) => return precondition("client count must be positive"),
            Some(c) if c > users => {
                return precondition(format!("{c} clients for only {users} users"))
            }
            Some(c) => {
                let mut order: Vec<usize> = (0..users).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3])));
                let mut map = vec![0; users];
                for (pos, u) in order.into_iter().enumerate() {
                    map[u] = pos % c;
                }
                (map, c)
            }
        };
        let mut client_records = vec![Vec::new(); clients];
        for (idx, r) in train.records().iter().enumerate() {
            client_records[client_of[r.user]].push(idx);
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4]));
        let model = MfModel::init(
            users,
            data.items(),
            config.embedding_dim,
            config.init_std,
            &mut init_rng,
        )?;
        let mut sim = Self {
            config,
            train,
            test,
            schedule,
            client_of,
            clients,
            client_records,
            model,
            initial_rmse: 0.0,
            last_rmse: 0.0,
            last_f1: 0.0,
            seed,
        };
        let (rmse, f1) = sim.evaluate()?;
        sim.initial_rmse = rmse;
        sim.last_rmse = rmse;
        sim.last_f1 = f1;
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn client_of(&self, user: usize) -> usize {
        self.client_of[user]
    }

    pub fn items(&self) -> usize {
        self.train.items()
    }

    pub fn model(&self) -> &MfModel {
        &self.model
    }

    pub fn train(&self) -> &RatingDataset {
        &self.train
    }

    pub fn test(&self) -> &RatingDataset {
        &self.test
    }

    pub fn schedule(&self) -> &ArrivalSchedule {
        &self.schedule
    }

    pub fn initial_rmse(&self) -> f64 {
        self.initial_rmse
    }

    pub fn last_rmse(&self) -> f64 {
        self.last_rmse
    }

    pub fn last_f1(&self) -> f64 {
        self.last_f1
    }

    /// Client × item matrix of training records available in `round`.
    pub fn interaction_matrix(&self, round: usize) -> InteractionMatrix {
        let mut m = InteractionMatrix::new(self.clients, self.train.items());
        for (idx, r) in self.train.records().iter().enumerate() {
            if self.schedule.is_available(idx, round) {
                m.insert(self.client_of[r.user], r.item)
                    .expect("indices validated by the dataset");
            }
        }
        m
    }

    fn local_ratings(&self, client: usize, round: usize) -> Vec<Rating> {
        self.client_records[client]
            .iter()
            .filter(|idx| self.schedule.is_available(**idx, round))
            .map(|idx| self.train.records()[*idx])
            .collect()
    }

    /// RMSE and F1 of clamped predictions on the test split.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        if self.test.is_empty() {
            return precondition("test split is empty");
        }
        let (preds, truths): (Vec<f64>, Vec<f64>) = self
            .test
            .records()
            .iter()
            .map(|r| (self.model.predict(r.user, r.item), r.value))
            .unzip();
        Ok((
            metrics::rmse(&preds, &truths),
            metrics::f1(&preds, &truths, self.config.threshold),
        ))
    }

    /// One training round for every active client. With `privacy` set each
    /// participant is charged that budget and noises its upload; without it
    /// the round is plain federated SGD and the ledger is untouched.
    pub fn run_round(
        &mut self,
        round: usize,
        ledger: &mut BudgetLedger,
        privacy: Option<(NoiseMechanism, PrivacyBudget)>,
    ) -> Result<RoundOutcome> {
        if ledger.len() != self.clients {
            return precondition(format!(
                "ledger tracks {} clients, simulation has {}",
                ledger.len(),
                self.clients
            ));
        }
        let participants: Vec<usize> = ledger.active_clients().collect();
        if participants.is_empty() {
            return Err(Error::BudgetExhausted {
                client: 0,
                message: "no active clients".into(),
            });
        }
        let mut charged = vec![PrivacyBudget::ZERO; self.clients];
        let clip_norm = privacy.map(|(mech, budget)| {
            (
                mech,
                budget,
                ClipNorm::for_mechanism(mech, self.config.clip_l1, self.config.clip_l2),
            )
        });
        if let Some((_, budget, _)) = clip_norm {
            if !(budget.epsilon > 0.0) {
                return Err(Error::Domain("per-round epsilon must be positive".into()));
            }
            ledger.charge_active(budget)?;
            for &u in &participants {
                charged[u] = budget;
            }
        }

        let items = self.train.items();
        let lr = self.config.learning_rate;
        let mut uploads_matrix = InteractionMatrix::new(self.clients, items);
        let mut uploads = Vec::with_capacity(participants.len());
        let mut max_clip_ratio: f64 = 0.0;
        for &c in &participants {
            let ratings = self.local_ratings(c, round);
            if ratings.is_empty() {
                continue;
            }
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[5, round as u64, c as u64]));
            let pseudo = if self.config.pseudo_items > 0 {
                let mut own = vec![false; items];
                ratings.iter().for_each(|r| own[r.item] = true);
                let free: Vec<usize> = (0..items).filter(|i| !own[*i]).collect();
                let take = self.config.pseudo_items.min(free.len());
                free.choose_multiple(&mut rng, take).copied().collect()
            } else {
                Vec::new()
            };
            let Some(mut up) = local_update(&mut self.model, c, &ratings, &pseudo, lr) else {
                continue;
            };
            if let Some((mech, budget, norm)) = clip_norm {
                clip(&mut up, norm)?;
                max_clip_ratio = max_clip_ratio.max(up.norm(norm) / norm.bound());
                add_noise(&mut up, mech, budget, norm, &mut rng)?;
            }
            for &i in &up.items {
                uploads_matrix.insert(c, i)?;
            }
            uploads.push(up);
        }
        let contributors = aggregate(&mut self.model, &uploads, lr);
        if !self.model.is_finite() {
            return Err(Error::Numerical(format!(
                "model parameters diverged in round {round}"
            )));
        }
        let (rmse, f1) = self.evaluate()?;
        let reward = if contributors == 0 { 0.0 } else { self.last_rmse - rmse };
        self.last_rmse = rmse;
        self.last_f1 = f1;
        Ok(RoundOutcome {
            round,
            reward,
            rmse,
            f1,
            charged,
            uploads: uploads_matrix,
            contributors,
            max_clip_ratio,
        })
    }
}
