//! Experiment configuration: a sectioned TOML file whose keys mirror the
//! stage configs, the six-variant algorithm matrix, and the content hashes
//! that key stage caching.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{AdaptationConfig, InitMode};
use crate::collect::PpoConfig;
use crate::env::{EnvFamily, FamilyConfig, FamilyId};
use crate::error::{Error, Result};
use crate::pdvf::PdvfConfig;
use crate::repr::ReprConfig;
use crate::store::hex;

/// The algorithm matrix: environment representation × value form ×
/// mutual-information refinement. Each variant fixes all three axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Dynamics-prediction encoder, quadratic value, closed-form jump.
    Pdvf,
    /// Contrastive encoder, quadratic value, closed-form jump.
    PdvfCer,
    /// Dynamics-prediction encoder, nonlinear value, gradient ascent.
    PdvfNaga,
    /// Contrastive encoder, nonlinear value, gradient ascent, no MI terms.
    PandrNoMi,
    /// Contrastive encoder with MI refinement, quadratic value.
    PandrQa,
    /// The full method: contrastive + MI refinement + nonlinear value + GA.
    Pandr,
}

/// How the environment encoder is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvRepr {
    DynamicsPrediction,
    ContextContrast,
}

/// How the value function is represented and optimized online.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    QuadraticClosedForm,
    NonlinearGa,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        let key: String =
            s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        match key.as_str() {
            "pdvf" => Ok(Variant::Pdvf),
            "pdvfcer" | "pdvfwithcer" => Ok(Variant::PdvfCer),
            "pdvfnaga" | "pdvfwithnaga" => Ok(Variant::PdvfNaga),
            "pandrnomi" | "pandrwithoutmi" => Ok(Variant::PandrNoMi),
            "pandrqa" | "pandrwithqa" => Ok(Variant::PandrQa),
            "pandr" => Ok(Variant::Pandr),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?}; expected one of PDVF, PDVF_CER, PDVF_NAGA, \
                 PAnDR_noMI, PAnDR_QA, PAnDR"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pdvf => "PDVF",
            Variant::PdvfCer => "PDVF_CER",
            Variant::PdvfNaga => "PDVF_NAGA",
            Variant::PandrNoMi => "PAnDR_noMI",
            Variant::PandrQa => "PAnDR_QA",
            Variant::Pandr => "PAnDR",
        }
    }

    pub fn env_repr(self) -> EnvRepr {
        match self {
            Variant::Pdvf | Variant::PdvfNaga => EnvRepr::DynamicsPrediction,
            _ => EnvRepr::ContextContrast,
        }
    }

    pub fn value_kind(self) -> ValueKind {
        match self {
            Variant::Pdvf | Variant::PdvfCer | Variant::PandrQa => ValueKind::QuadraticClosedForm,
            _ => ValueKind::NonlinearGa,
        }
    }

    pub fn uses_mi(self) -> bool {
        matches!(self, Variant::PandrQa | Variant::Pandr)
    }

    pub fn all() -> [Variant; 6] {
        [
            Variant::Pdvf,
            Variant::PdvfCer,
            Variant::PdvfNaga,
            Variant::PandrNoMi,
            Variant::PandrQa,
            Variant::Pandr,
        ]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: String,
    pub seeds: Vec<u64>,
    pub variant: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "pandr".into(),
            seeds: (0..7).collect(),
            variant: "PAnDR".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySection {
    pub id: String,
    /// Training environments; when `train_variations` is empty the default
    /// grid is thinned evenly to this count.
    pub n_train: usize,
    /// Test environments kept from the default grid (0 = all of them).
    pub n_test: usize,
    pub horizon: usize,
    pub dt: f64,
    pub discount: f64,
    pub action_bound: f64,
    pub action_cost: f64,
    pub start_half_width: f64,
    pub wind_magnitude: f64,
    pub field_cutoff: f64,
    /// Explicit variation grids; empty means "derive from the defaults".
    pub train_variations: Vec<f64>,
    pub test_variations: Vec<f64>,
}

impl Default for FamilySection {
    fn default() -> Self {
        let d = FamilyConfig::defaults(FamilyId::PointWind);
        FamilySection {
            id: "point_wind".into(),
            n_train: 4,
            n_test: 0,
            horizon: d.horizon,
            dt: d.dt,
            discount: d.discount,
            action_bound: d.action_bound,
            action_cost: d.action_cost,
            start_half_width: d.start_half_width,
            wind_magnitude: d.wind_magnitude,
            field_cutoff: d.field_cutoff,
            train_variations: Vec::new(),
            test_variations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSection {
    pub episodes_per_cell: usize,
    pub ppo_total_steps: usize,
    pub ppo_rollout_steps: usize,
    pub ppo_epochs: usize,
    pub ppo_minibatch: usize,
    pub ppo_clip: f64,
    pub ppo_lr: f64,
    pub gae_lambda: f64,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub eval_episodes: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        let p = PpoConfig::default();
        CollectSection {
            episodes_per_cell: 50,
            ppo_total_steps: p.total_steps,
            ppo_rollout_steps: p.rollout_steps,
            ppo_epochs: p.epochs,
            ppo_minibatch: p.minibatch,
            ppo_clip: p.clip,
            ppo_lr: p.lr,
            gae_lambda: p.gae_lambda,
            hidden: p.hidden,
            log_std_init: p.log_std_init,
            eval_episodes: p.eval_episodes,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReprSection {
    pub d: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub n_ctx: usize,
    pub n_bhv: usize,
    pub steps: usize,
    pub lr_env: f64,
    pub lr_policy: f64,
    pub lr_psi1: f64,
    pub lr_psi2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub momentum: f64,
    pub mi_batch: usize,
    pub mle_iters: usize,
    pub rec_batch: usize,
    pub cell_batch: usize,
    pub pretrain_steps: usize,
}

impl Default for ReprSection {
    fn default() -> Self {
        let r = ReprConfig::default();
        ReprSection {
            d: r.d,
            hidden: r.hidden,
            head_hidden: r.head_hidden,
            n_ctx: r.n_ctx,
            n_bhv: r.n_bhv,
            steps: r.steps,
            lr_env: r.lr_env,
            lr_policy: r.lr_policy,
            lr_psi1: r.lr_psi1,
            lr_psi2: r.lr_psi2,
            alpha: r.alpha,
            beta: r.beta,
            momentum: r.momentum,
            mi_batch: r.mi_batch,
            mle_iters: r.mle_iters,
            rec_batch: r.rec_batch,
            cell_batch: r.cell_batch,
            pretrain_steps: r.pretrain_steps,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdvfSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Context-window size for per-draw z_e inference during value training.
    pub ctx_window: usize,
    /// Behavior-pair count for per-draw z_π inference during value training.
    pub bhv_window: usize,
    /// Run the leave-one-cell-out pass and emit its rows (16 extra
    /// trainings on a 4×4 grid — enable deliberately).
    pub loco: bool,
    /// Training steps per LOCO fold.
    pub loco_steps: usize,
}

impl Default for PdvfSection {
    fn default() -> Self {
        let p = PdvfConfig::default();
        PdvfSection {
            steps: p.steps,
            batch: p.batch,
            lr: p.lr,
            hidden: p.hidden,
            ctx_window: p.ctx_window,
            bhv_window: p.bhv_window,
            loco: false,
            loco_steps: 600,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub probe_steps: usize,
    pub ga_steps: usize,
    pub eta: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// "random" or "from_probe_policy".
    pub init_mode: String,
}

impl Default for AdaptSection {
    fn default() -> Self {
        let a = AdaptationConfig::default();
        AdaptSection {
            probe_steps: a.probe_steps,
            ga_steps: a.ga_steps,
            eta: a.eta,
            eval_every: a.eval_every,
            eval_episodes: a.eval_episodes,
            init_mode: "random".into(),
        }
    }
}

/// The whole experiment file. Every key has a default, so `{}` is a valid
/// config and partial files override only what they name.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub family: FamilySection,
    pub collect: CollectSection,
    pub representation: ReprSection,
    pub pdvf: PdvfSection,
    pub adaptation: AdaptSection,
}

/// Thins `values` to `n` evenly spaced picks (first and last kept).
fn thin_evenly(values: &[f64], n: usize) -> Vec<f64> {
    if n == 0 || n >= values.len() {
        return values.to_vec();
    }
    if n == 1 {
        return vec![values[values.len() / 2]];
    }
    (0..n)
        .map(|j| {
            let idx = (j as f64 * (values.len() - 1) as f64 / (n - 1) as f64).round() as usize;
            values[idx]
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The full default file — doubles as the key reference in `--help`.
    pub fn default_toml() -> String {
        ExperimentConfig::default().to_toml()
    }

    pub fn validate(&self) -> Result<()> {
        self.variant()?;
        self.init_mode()?;
        FamilyId::parse(&self.family.id)?;
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.adaptation.probe_steps < self.representation.n_ctx {
            return Err(Error::Config(format!(
                "probe_steps {} is smaller than the context window n_ctx {}",
                self.adaptation.probe_steps, self.representation.n_ctx
            )));
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::parse(&self.experiment.variant)
    }

    pub fn init_mode(&self) -> Result<InitMode> {
        match self.adaptation.init_mode.as_str() {
            "random" => Ok(InitMode::Random),
            "from_probe_policy" => Ok(InitMode::FromProbePolicy),
            other => Err(Error::Config(format!(
                "unknown init_mode {other:?}; expected random or from_probe_policy"
            ))),
        }
    }

    pub fn build_family(&self) -> Result<EnvFamily> {
        let id = FamilyId::parse(&self.family.id)?;
        let mut cfg = FamilyConfig::defaults(id);
        cfg.horizon = self.family.horizon;
        cfg.dt = self.family.dt;
        cfg.discount = self.family.discount;
        cfg.action_bound = self.family.action_bound;
        cfg.action_cost = self.family.action_cost;
        cfg.start_half_width = self.family.start_half_width;
        cfg.wind_magnitude = self.family.wind_magnitude;
        cfg.field_cutoff = self.family.field_cutoff;
        if !self.family.train_variations.is_empty() {
            cfg.train_variations = self.family.train_variations.clone();
        } else {
            cfg.train_variations = thin_evenly(&cfg.train_variations, self.family.n_train);
        }
        if !self.family.test_variations.is_empty() {
            cfg.test_variations = self.family.test_variations.clone();
        } else {
            cfg.test_variations = thin_evenly(&cfg.test_variations, self.family.n_test);
        }
        EnvFamily::new(cfg)
    }

    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            total_steps: self.collect.ppo_total_steps,
            rollout_steps: self.collect.ppo_rollout_steps,
            epochs: self.collect.ppo_epochs,
            minibatch: self.collect.ppo_minibatch,
            clip: self.collect.ppo_clip,
            lr: self.collect.ppo_lr,
            gae_lambda: self.collect.gae_lambda,
            hidden: self.collect.hidden.clone(),
            log_std_init: self.collect.log_std_init,
            eval_episodes: self.collect.eval_episodes,
        }
    }

    /// Representation config with the MI weights the variant calls for:
    /// refinement off means α = β = 0 and nothing else changes.
    pub fn repr_config(&self, use_mi: bool) -> ReprConfig {
        let r = &self.representation;
        ReprConfig {
            d: r.d,
            hidden: r.hidden,
            head_hidden: r.head_hidden,
            n_ctx: r.n_ctx,
            n_bhv: r.n_bhv,
            steps: r.steps,
            lr_env: r.lr_env,
            lr_policy: r.lr_policy,
            lr_psi1: r.lr_psi1,
            lr_psi2: r.lr_psi2,
            alpha: if use_mi { r.alpha } else { 0.0 },
            beta: if use_mi { r.beta } else { 0.0 },
            momentum: r.momentum,
            mi_batch: r.mi_batch,
            mle_iters: r.mle_iters,
            rec_batch: r.rec_batch,
            cell_batch: r.cell_batch,
            pretrain_steps: r.pretrain_steps,
        }
    }

    pub fn pdvf_config(&self) -> PdvfConfig {
        PdvfConfig {
            steps: self.pdvf.steps,
            batch: self.pdvf.batch,
            lr: self.pdvf.lr,
            hidden: self.pdvf.hidden.clone(),
            ctx_window: self.pdvf.ctx_window,
            bhv_window: self.pdvf.bhv_window,
        }
    }

    pub fn loco_config(&self) -> PdvfConfig {
        PdvfConfig { steps: self.pdvf.loco_steps, ..self.pdvf_config() }
    }

    pub fn adaptation_config(&self, init_scale: f64) -> Result<AdaptationConfig> {
        Ok(AdaptationConfig {
            probe_steps: self.adaptation.probe_steps,
            ga_steps: self.adaptation.ga_steps,
            eta: self.adaptation.eta,
            eval_every: self.adaptation.eval_every,
            eval_episodes: self.adaptation.eval_episodes,
            init_mode: self.init_mode()?,
            init_scale,
        })
    }

    /// Hash of the whole effective config (identifies a run).
    pub fn config_hash(&self) -> String {
        short_hash(&self.to_toml())
    }

    /// Cache key for the collection stage: family + collection settings +
    /// seed. Representation and later settings do not touch it.
    pub fn collect_key(&self, seed: u64) -> String {
        let text = format!(
            "collect\n{}\n{}\nseed {seed}\n",
            toml::to_string_pretty(&self.family).unwrap(),
            toml::to_string_pretty(&self.collect).unwrap(),
        );
        short_hash(&text)
    }

    /// Cache key for encoder training on top of a given store.
    pub fn encoder_key(&self, seed: u64, store_hash: &str, env_repr: EnvRepr, use_mi: bool) -> String {
        let text = format!(
            "encoders\nstore {store_hash}\nrecipe {:?}\nmi {use_mi}\n{}\nseed {seed}\n",
            env_repr,
            toml::to_string_pretty(&self.representation).unwrap(),
        );
        short_hash(&text)
    }

    /// Cache key for value-function training on top of given encoders.
    pub fn pdvf_key(&self, seed: u64, encoder_key: &str, kind: ValueKind) -> String {
        let text = format!(
            "pdvf\nencoders {encoder_key}\nkind {kind:?}\n{}\nseed {seed}\n",
            toml::to_string_pretty(&self.pdvf).unwrap(),
        );
        short_hash(&text)
    }
}

/// First 12 hex characters of SHA-256 — enough to key cache directories.
pub fn short_hash(text: &str) -> String {
    let mut h = hex(&Sha256::digest(text.as_bytes()));
    h.truncate(12);
    h
}
