//! Run configuration: a flat TOML table whose every key has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocator::default_gamma;
use crate::baselines::{GrowthForm, SchedulePolicy};
use crate::budget::NoiseMechanism;
use crate::constrainer::{DualSign, StepSchedule};
use crate::error::{Error, Result};
use crate::gpr::{FactorUpdate, KernelForm, KernelParams};
use crate::sim::dataset::{DatasetFormat, SyntheticSpec};
use crate::sim::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[serde(alias = "bgt")]
    Bgtplanner,
    #[serde(alias = "fedsgd")]
    NoNoise,
    Uniform,
    #[serde(alias = "adpml")]
    Increasing,
    #[serde(alias = "adap")]
    LossTrend,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Bgtplanner => "bgtplanner",
            Policy::NoNoise => "no_noise",
            Policy::Uniform => "uniform",
            Policy::Increasing => "increasing",
            Policy::LossTrend => "loss_trend",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSchedule {
    /// Constant `1/√T`, or `eta` when given.
    Constant,
    /// `Λ/√t`.
    RadiusOverSqrtRound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualInit {
    /// Every entry at `Λ / (2U)`.
    Interior,
    /// Seeded uniform point inside the ball.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_format: DatasetFormat,
    pub dataset_path: Option<PathBuf>,
    pub synthetic_users: usize,
    pub synthetic_items: usize,
    pub synthetic_rank: usize,
    pub synthetic_density: f64,
    pub synthetic_noise: f64,
    pub synthetic_bias_std: f64,

    pub policy: Policy,
    pub mechanism: NoiseMechanism,
    pub eps_total: f64,
    pub delta_total: f64,
    pub horizon: usize,
    pub min_horizon: usize,
    pub t0: usize,
    pub actions: usize,
    pub context_dim: usize,
    pub normalize_context: bool,

    pub gamma: Option<f64>,
    pub alpha: f64,
    pub length_scale: f64,
    pub noise_std: f64,
    pub kernel_form: KernelForm,
    pub factor_update: FactorUpdate,
    pub eta_schedule: EtaSchedule,
    pub eta: Option<f64>,
    pub dual_sign: DualSign,
    pub dual_init: DualInit,
    pub mask_unaffordable: bool,

    pub geo_eps_min: f64,
    pub geo_eps_max: f64,
    pub geo_rate: f64,
    pub geo_rescale: bool,
    pub geo_growth: GrowthForm,
    pub loss_window: usize,
    pub loss_multiplier: f64,

    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub init_std: f64,
    pub clip_l1: f64,
    pub clip_l2: f64,
    pub pseudo_items: usize,
    pub clients: Option<usize>,
    pub train_ratio: f64,
    pub threshold: f64,

    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let sim = SimConfig::default();
        let kernel = KernelParams::default();
        Self {
            dataset_format: DatasetFormat::Synthetic,
            dataset_path: None,
            synthetic_users: synth.users,
            synthetic_items: synth.items,
            synthetic_rank: synth.rank,
            synthetic_density: synth.density,
            synthetic_noise: synth.noise_std,
            synthetic_bias_std: synth.bias_std,
            policy: Policy::Bgtplanner,
            mechanism: NoiseMechanism::Laplace,
            eps_total: 10.0,
            delta_total: (-5f64).exp(),
            horizon: 100,
            min_horizon: 70,
            t0: 5,
            actions: 5,
            context_dim: 4,
            normalize_context: true,
            gamma: None,
            alpha: kernel.alpha,
            length_scale: kernel.length_scale,
            noise_std: kernel.noise_std,
            kernel_form: kernel.form,
            factor_update: FactorUpdate::Extend,
            eta_schedule: EtaSchedule::Constant,
            eta: None,
            dual_sign: DualSign::Pacing,
            dual_init: DualInit::Interior,
            mask_unaffordable: true,
            geo_eps_min: 1.0,
            geo_eps_max: 10.0,
            geo_rate: 0.9,
            geo_rescale: true,
            geo_growth: GrowthForm::Gap,
            loss_window: 5,
            loss_multiplier: 1.1,
            embedding_dim: sim.embedding_dim,
            learning_rate: sim.learning_rate,
            init_std: sim.init_std,
            clip_l1: sim.clip_l1,
            clip_l2: sim.clip_l2,
            pseudo_items: sim.pseudo_items,
            clients: sim.clients,
            train_ratio: sim.train_ratio,
            threshold: sim.threshold,
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative `dataset_path` is taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(p), Some(dir)) = (cfg.dataset_path.as_ref(), path.parent()) {
            if p.is_relative() {
                cfg.dataset_path = Some(dir.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.min_horizon == 0 {
            return bad("horizon and min_horizon must be positive");
        }
        if self.min_horizon > self.horizon {
            return bad(format!(
                "min_horizon {} exceeds horizon {}",
                self.min_horizon, self.horizon
            ));
        }
        if self.actions == 0 || self.t0 == 0 {
            return bad("actions and t0 must be positive");
        }
        if (self.actions + 1) * self.t0 >= self.horizon {
            return bad(format!(
                "(actions + 1) * t0 = {} must be below horizon {}",
                (self.actions + 1) * self.t0,
                self.horizon
            ));
        }
        if self.context_dim == 0 {
            return bad("context_dim must be at least 1");
        }
        if !(self.eps_total > 0.0 && self.eps_total.is_finite()) {
            return bad("eps_total must be positive");
        }
        if self.mechanism == NoiseMechanism::Gaussian && !(self.delta_total > 0.0 && self.delta_total < 1.0) {
            return bad("gaussian runs need delta_total in (0, 1)");
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma must be positive");
            }
        }
        if let Some(e) = self.eta {
            if !(e >= 0.0 && e.is_finite()) {
                return bad("eta must be non-negative");
            }
        }
        self.kernel().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.policy != Policy::Bgtplanner && self.policy != Policy::NoNoise {
            self.schedule_policy()
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.embedding_dim == 0 || !(self.learning_rate > 0.0) {
            return bad("embedding_dim and learning_rate must be positive");
        }
        if !(self.clip_l1 > 0.0 && self.clip_l2 > 0.0) {
            return bad("clip norms must be positive");
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio must lie in (0, 1)");
        }
        match (self.dataset_format, &self.dataset_path) {
            (DatasetFormat::Synthetic, _) => {}
            (_, None) => return bad("dataset_path is required for file datasets"),
            _ => {}
        }
        Ok(())
    }

    pub fn kernel(&self) -> KernelParams {
        KernelParams {
            alpha: self.alpha,
            length_scale: self.length_scale,
            noise_std: self.noise_std,
            form: self.kernel_form,
        }
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            users: self.synthetic_users,
            items: self.synthetic_items,
            rank: self.synthetic_rank,
            density: self.synthetic_density,
            noise_std: self.synthetic_noise,
            bias_std: self.synthetic_bias_std,
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            embedding_dim: self.embedding_dim,
            learning_rate: self.learning_rate,
            init_std: self.init_std,
            clip_l1: self.clip_l1,
            clip_l2: self.clip_l2,
            pseudo_items: self.pseudo_items,
            threshold: self.threshold,
            train_ratio: self.train_ratio,
            clients: self.clients,
        }
    }

    pub fn gamma_for(&self, clients: usize) -> f64 {
        self.gamma
            .unwrap_or_else(|| default_gamma(self.actions, self.horizon, clients))
    }

    pub fn step_schedule(&self) -> StepSchedule {
        match (self.eta_schedule, self.eta) {
            (EtaSchedule::RadiusOverSqrtRound, _) => StepSchedule::RadiusOverSqrtRound,
            (EtaSchedule::Constant, Some(e)) => StepSchedule::Constant(e),
            (EtaSchedule::Constant, None) => StepSchedule::inverse_sqrt_horizon(self.horizon),
        }
    }

    pub fn schedule_policy(&self) -> SchedulePolicy {
        match self.policy {
            Policy::Bgtplanner | Policy::Uniform => SchedulePolicy::Uniform,
            Policy::NoNoise => SchedulePolicy::NoNoise,
            Policy::Increasing => SchedulePolicy::IncreasingGeometric {
                eps_min: self.geo_eps_min,
                eps_max: self.geo_eps_max,
                rate: self.geo_rate,
                rescale: self.geo_rescale,
                growth: self.geo_growth,
            },
            Policy::LossTrend => SchedulePolicy::LossTrend {
                window: self.loss_window,
                multiplier: self.loss_multiplier,
            },
        }
    }
}
