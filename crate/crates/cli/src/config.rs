//! TOML experiment configuration. Every key has a default, unknown keys are
//! rejected, and validation errors name the offending key.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use obsdrop::cartpole::{Cartpole, CartpoleParams};
use obsdrop::dream::DreamConfig;
use obsdrop::dropout::OutputMode;
use obsdrop::es::{EpisodeSeeding, EsConfig};
use obsdrop::gridworld::{GridConfig, GridWorld};
use obsdrop::stability::{BalanceConfig, PhysicalLinearization, TransferConfig};
use obsdrop::tasks::{CartpoleTask, GridModelKind, GridTask};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    #[default]
    Cartpole,
    Gridworld,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Cartpole => "cartpole",
            EnvKind::Gridworld => "gridworld",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GridModelChoice {
    Fc,
    #[default]
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    #[default]
    Absolute,
    Delta,
}

impl From<ModeChoice> for OutputMode {
    fn from(m: ModeChoice) -> Self {
        match m {
            ModeChoice::Absolute => OutputMode::Absolute,
            ModeChoice::Delta => OutputMode::Delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SeedingChoice {
    #[default]
    PerCandidate,
    PerPair,
    PerGeneration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleSection {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub force_scale: f64,
    pub dt: f64,
    pub x_limit: f64,
    pub episode_steps: usize,
    pub init_std: f64,
    pub policy_hidden: usize,
    pub model_hidden: usize,
}

impl Default for CartpoleSection {
    fn default() -> Self {
        let p = CartpoleParams::default();
        Self {
            cart_mass: p.cart_mass,
            pole_mass: p.pole_mass,
            pole_length: p.pole_length,
            gravity: p.gravity,
            force_scale: p.force_scale,
            dt: p.dt,
            x_limit: p.x_limit,
            episode_steps: p.episode_steps,
            init_std: p.init_std,
            policy_hidden: 10,
            model_hidden: 30,
        }
    }
}

impl CartpoleSection {
    pub fn params(&self) -> CartpoleParams {
        CartpoleParams {
            cart_mass: self.cart_mass,
            pole_mass: self.pole_mass,
            pole_length: self.pole_length,
            gravity: self.gravity,
            force_scale: self.force_scale,
            dt: self.dt,
            x_limit: self.x_limit,
            episode_steps: self.episode_steps,
            init_std: self.init_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub width: usize,
    pub apples: usize,
    pub fires: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub model: GridModelChoice,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridConfig::default();
        Self {
            width: g.width,
            apples: g.n_apples,
            fires: g.n_fires,
            min_steps: g.min_steps,
            max_steps: g.max_steps,
            model: GridModelChoice::Conv,
        }
    }
}

impl GridSection {
    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            width: self.width,
            n_apples: self.apples,
            n_fires: self.fires,
            min_steps: self.min_steps,
            max_steps: self.max_steps,
            ..GridConfig::default()
        }
    }

    pub fn kind(&self) -> GridModelKind {
        match self.model {
            GridModelChoice::Fc => GridModelKind::FullyConnected,
            GridModelChoice::Conv => GridModelKind::Convolutional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutSection {
    pub peek_probability: f64,
    pub output_mode: ModeChoice,
    /// Bound on model outputs; 0 disables clamping.
    pub clamp: f64,
}

impl Default for DropoutSection {
    fn default() -> Self {
        Self {
            peek_probability: 1.0,
            output_mode: ModeChoice::Absolute,
            clamp: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsSection {
    pub population_size: usize,
    pub rollouts_per_candidate: usize,
    pub generations: usize,
    pub sigma_init: f64,
    pub sigma_decay: f64,
    pub sigma_min: f64,
    pub learning_rate: f64,
    pub learning_rate_decay: f64,
    pub learning_rate_min: f64,
    pub weight_decay: f64,
    pub antithetic: bool,
    pub rank_shaping: bool,
    pub seeding: SeedingChoice,
}

impl Default for EsSection {
    fn default() -> Self {
        let e = EsConfig::default();
        Self {
            population_size: e.population_size,
            rollouts_per_candidate: e.rollouts_per_candidate,
            generations: e.generations,
            sigma_init: e.sigma_init,
            sigma_decay: e.sigma_decay,
            sigma_min: e.sigma_min,
            learning_rate: e.learning_rate,
            learning_rate_decay: e.learning_rate_decay,
            learning_rate_min: e.learning_rate_min,
            weight_decay: e.weight_decay,
            antithetic: e.antithetic,
            rank_shaping: e.rank_shaping,
            seeding: SeedingChoice::PerCandidate,
        }
    }
}

impl EsSection {
    pub fn es_config(&self) -> EsConfig {
        EsConfig {
            population_size: self.population_size,
            rollouts_per_candidate: self.rollouts_per_candidate,
            generations: self.generations,
            sigma_init: self.sigma_init,
            sigma_decay: self.sigma_decay,
            sigma_min: self.sigma_min,
            learning_rate: self.learning_rate,
            learning_rate_decay: self.learning_rate_decay,
            learning_rate_min: self.learning_rate_min,
            weight_decay: self.weight_decay,
            antithetic: self.antithetic,
            rank_shaping: self.rank_shaping,
            seeding: match self.seeding {
                SeedingChoice::PerCandidate => EpisodeSeeding::PerCandidate,
                SeedingChoice::PerPair => EpisodeSeeding::PerPair,
                SeedingChoice::PerGeneration => EpisodeSeeding::PerGeneration,
            },
            ..EsConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Evaluate the search mean every this many generations (0 = never).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Stop once a periodic evaluation reaches this score (0 = never).
    pub target_score: f64,
    /// Keep a checkpoint every this many generations (0 = final only).
    pub checkpoint_every: usize,
    /// Record the search distribution every this many generations.
    pub snapshot_every: usize,
    pub final_eval_episodes: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            eval_every: 50,
            eval_episodes: 16,
            target_score: 0.0,
            checkpoint_every: 0,
            snapshot_every: 50,
            final_eval_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub peek_probabilities: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            peek_probabilities: vec![0.05, 0.1, 0.3, 1.0],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DreamSection {
    pub horizon: usize,
    pub init_from_real: bool,
    pub terminate_on_predicted_exit: bool,
    pub rollouts: usize,
    pub transfer_episodes: usize,
    /// Hidden width of supervised baseline models.
    pub baseline_hidden: usize,
    pub baseline_transitions: usize,
    pub baseline_generations: usize,
    pub baseline_batch: usize,
}

impl Default for DreamSection {
    fn default() -> Self {
        let d = DreamConfig::default();
        Self {
            horizon: d.horizon,
            init_from_real: d.init_from_real,
            terminate_on_predicted_exit: d.terminate_on_predicted_exit,
            rollouts: 4,
            transfer_episodes: 100,
            baseline_hidden: 30,
            baseline_transitions: 20_000,
            baseline_generations: 2000,
            baseline_batch: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    /// Peek probability for evaluating joint checkpoints; 1 = no dropout.
    pub peek_probability: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 100,
            peek_probability: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub samples: usize,
    pub gain_scale: f64,
    pub max_trials: usize,
    pub g: f64,
    pub length: f64,
    pub cart_mass: f64,
    /// Transferred gains re-checked on the nonlinear simulator.
    pub balance_checks: usize,
    pub theta0: f64,
    pub pole_mass_ratio: f64,
    pub duration: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        let t = TransferConfig::default();
        let p = PhysicalLinearization::default();
        let b = BalanceConfig::default();
        Self {
            samples: t.samples,
            gain_scale: t.gain_scale,
            max_trials: t.max_trials,
            g: p.g,
            length: p.length,
            cart_mass: p.cart_mass,
            balance_checks: 200,
            theta0: 0.05,
            pole_mass_ratio: b.pole_mass_ratio,
            duration: b.duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrSection {
    pub samples: usize,
    pub thresholded: bool,
}

impl Default for CorrSection {
    fn default() -> Self {
        Self {
            samples: 1000,
            thresholded: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub name: String,
    pub env: EnvKind,
    pub seed: u64,
    /// Worker threads; 0 = all logical cores.
    pub threads: usize,
    pub out: String,
    pub cartpole: CartpoleSection,
    pub gridworld: GridSection,
    pub dropout: DropoutSection,
    pub es: EsSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub dream: DreamSection,
    pub eval: EvalSection,
    pub stability: StabilitySection,
    pub corr: CorrSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            env: EnvKind::Cartpole,
            seed: 0,
            threads: 0,
            out: "runs".into(),
            cartpole: CartpoleSection::default(),
            gridworld: GridSection::default(),
            dropout: DropoutSection::default(),
            es: EsSection::default(),
            train: TrainSection::default(),
            sweep: SweepSection::default(),
            dream: DreamSection::default(),
            eval: EvalSection::default(),
            stability: StabilitySection::default(),
            corr: CorrSection::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let probability = |key: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(invalid(key, format!("must lie in [0, 1], got {p}")))
            }
        };
        let positive = |key: &str, n: usize| {
            if n >= 1 {
                Ok(())
            } else {
                Err(invalid(key, "must be at least 1"))
            }
        };
        self.cartpole
            .params()
            .validate()
            .map_err(|m| invalid(&format!("cartpole.{}", m.split_whitespace().next().unwrap_or("")), m))?;
        positive("cartpole.policy_hidden", self.cartpole.policy_hidden)?;
        positive("cartpole.model_hidden", self.cartpole.model_hidden)?;
        self.gridworld
            .grid_config()
            .validate()
            .map_err(|e| invalid("gridworld", e.to_string()))?;
        if self.gridworld.min_steps == 0 || self.gridworld.min_steps > self.gridworld.max_steps {
            return Err(invalid("gridworld.min_steps", "must satisfy 1 <= min_steps <= max_steps"));
        }
        probability("dropout.peek_probability", self.dropout.peek_probability)?;
        if !(self.dropout.clamp >= 0.0) {
            return Err(invalid("dropout.clamp", "must be non-negative (0 disables)"));
        }
        self.es.es_config().validate().map_err(|e| {
            let msg = e.to_string();
            let key = [
                "population_size",
                "rollouts_per_candidate",
                "sigma_init",
                "learning_rate_decay",
                "learning_rate",
                "sigma_decay",
                "weight_decay",
            ]
            .into_iter()
            .find(|k| msg.contains(k))
            .unwrap_or("");
            invalid(&format!("es.{key}"), msg)
        })?;
        positive("train.eval_episodes", self.train.eval_episodes)?;
        positive("train.final_eval_episodes", self.train.final_eval_episodes)?;
        for (i, &p) in self.sweep.peek_probabilities.iter().enumerate() {
            probability(&format!("sweep.peek_probabilities[{i}]"), p)?;
        }
        positive("dream.horizon", self.dream.horizon)?;
        positive("dream.rollouts", self.dream.rollouts)?;
        positive("dream.transfer_episodes", self.dream.transfer_episodes)?;
        positive("dream.baseline_hidden", self.dream.baseline_hidden)?;
        positive("dream.baseline_transitions", self.dream.baseline_transitions)?;
        positive("dream.baseline_batch", self.dream.baseline_batch)?;
        positive("eval.episodes", self.eval.episodes)?;
        probability("eval.peek_probability", self.eval.peek_probability)?;
        positive("stability.samples", self.stability.samples)?;
        positive("stability.max_trials", self.stability.max_trials)?;
        if !(self.stability.gain_scale >= 0.0 && self.stability.gain_scale.is_finite()) {
            return Err(invalid("stability.gain_scale", "must be finite and non-negative"));
        }
        self.physical()
            .validate()
            .map_err(|m| invalid(&format!("stability.{}", m.split_whitespace().next().unwrap_or("")), m))?;
        if !(self.stability.theta0.abs() <= 0.1) {
            return Err(invalid("stability.theta0", "initial perturbation must satisfy |theta0| <= 0.1"));
        }
        positive("corr.samples", self.corr.samples)?;
        Ok(())
    }

    pub fn cartpole_env(&self) -> Cartpole {
        Cartpole::new(self.cartpole.params())
    }

    pub fn grid_env(&self) -> GridWorld {
        GridWorld::new(self.gridworld.grid_config()).expect("validated")
    }

    pub fn dropout_config(&self, p: f64) -> obsdrop::DropoutConfig {
        let mut d = obsdrop::DropoutConfig::new(p).with_mode(self.dropout.output_mode.into());
        if self.dropout.clamp > 0.0 {
            d = d.with_clamp(self.dropout.clamp);
        }
        d
    }

    pub fn cartpole_task(&self, p: f64) -> CartpoleTask {
        CartpoleTask::new(
            self.cartpole_env(),
            self.cartpole.policy_hidden,
            self.cartpole.model_hidden,
            self.dropout_config(p),
            self.es.rollouts_per_candidate,
        )
    }

    pub fn grid_task(&self, p: f64) -> GridTask {
        let mut t = GridTask::new(self.grid_env(), self.gridworld.kind(), p, self.es.rollouts_per_candidate);
        t.dropout = self.dropout_config(p);
        t
    }

    pub fn dream_config(&self) -> DreamConfig {
        DreamConfig {
            horizon: self.dream.horizon,
            init_from_real: self.dream.init_from_real,
            terminate_on_predicted_exit: self.dream.terminate_on_predicted_exit,
            output_mode: self.dropout.output_mode.into(),
            clamp: (self.dropout.clamp > 0.0).then_some(self.dropout.clamp),
        }
    }

    pub fn physical(&self) -> PhysicalLinearization {
        PhysicalLinearization {
            g: self.stability.g,
            length: self.stability.length,
            cart_mass: self.stability.cart_mass,
        }
    }

    pub fn transfer_config(&self) -> TransferConfig {
        TransferConfig {
            samples: self.stability.samples,
            gain_scale: self.stability.gain_scale,
            max_trials: self.stability.max_trials,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(Config::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = Config::from_toml("env = \"gridworld\"\n[es]\npopulation_size = 8\n").unwrap();
        assert_eq!(cfg.env, EnvKind::Gridworld);
        assert_eq!(cfg.es.population_size, 8);
        assert_eq!(cfg.es.sigma_init, 0.1);
        assert_eq!(cfg.gridworld.model, GridModelChoice::Conv);
    }

    #[test]
    fn errors_name_the_key() {
        let err = Config::from_toml("[dropout]\npeek_probability = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("dropout.peek_probability"), "{err}");
        let err = Config::from_toml("[es]\npopulation_size = 7\n").unwrap_err();
        assert!(err.to_string().contains("es.population_size"), "{err}");
        let err = Config::from_toml("[cartpole]\ndt = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("cartpole.dt"), "{err}");
        let err = Config::from_toml("[es]\npopsize = 8\n").unwrap_err();
        assert!(err.to_string().contains("popsize"), "{err}");
        let err = Config::from_toml("[sweep]\npeek_probabilities = [0.1, 2.0]\n").unwrap_err();
        assert!(err.to_string().contains("sweep.peek_probabilities[1]"), "{err}");
    }
}
