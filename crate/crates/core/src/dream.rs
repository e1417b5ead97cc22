//! Training policies inside a frozen world model ("dreaming"), deploying
//! them in the real environment, and the supervised forward-prediction
//! baseline.

use rand::seq::{IndexedRandom, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::cartpole::{Cartpole, CartpoleEpisode};
use crate::dropout::{raw_rollout, rollout_seeds, Environment, OutputMode, Policy, WorldModel};
use crate::es::{train, EpisodeSeeding, EsConfig, EsError, Observer, TrainSpec};
use crate::exec::{map_indexed, Execution};
use crate::nn::{MlpArchitecture, ParamVector};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tasks::{summarize, CartpoleModel, ContinuousPolicy, EvalSummary};

#[derive(Debug, Error)]
pub enum DreamError {
    #[error("not enough trace data: {0}")]
    InsufficientData(String),
    #[error("dataset shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Es(#[from] EsError),
}

/// An environment whose reward and termination can be read off an
/// observation, so they can be applied to predicted observations.
pub trait DreamEnvironment: Environment {
    fn observation_reward(&self, obs: &[f64]) -> f64;
    fn observation_exit(&self, obs: &[f64]) -> bool;
}

impl DreamEnvironment for Cartpole {
    fn observation_reward(&self, obs: &[f64]) -> f64 {
        self.params.reward_from(obs[0], obs[2])
    }

    fn observation_exit(&self, obs: &[f64]) -> bool {
        obs[0].abs() > self.params.x_limit
    }
}

/// The world a dream episode unfolds in.
pub trait DreamModel<E: Environment> {
    /// Called once with the real initial state before the first step.
    fn begin(&mut self, _env: &E, _initial: &E::State) {}
    fn predict(&mut self, obs: &[f64], action: E::Action, out: &mut [f64]);
}

/// Adapts any [`WorldModel`] for dreaming.
pub struct Learned<M>(pub M);

impl<E: Environment, M: WorldModel<E::Action>> DreamModel<E> for Learned<M> {
    fn predict(&mut self, obs: &[f64], action: E::Action, out: &mut [f64]) {
        self.0.predict(obs, action, out);
    }
}

/// The real dynamics behind a model interface: carries the true state and
/// ignores the observation it is handed.
pub struct ExactDynamics<'a, E: Environment> {
    env: &'a E,
    state: Option<E::State>,
}

impl<'a, E: Environment> ExactDynamics<'a, E> {
    pub fn new(env: &'a E) -> Self {
        Self { env, state: None }
    }
}

impl<E: Environment> DreamModel<E> for ExactDynamics<'_, E> {
    fn begin(&mut self, _env: &E, initial: &E::State) {
        self.state = Some(initial.clone());
    }

    fn predict(&mut self, _obs: &[f64], action: E::Action, out: &mut [f64]) {
        let state = self.state.as_mut().expect("begin() not called");
        self.env.step(state, action);
        self.env.observe(state, out);
    }
}

/// Model whose output never changes: every dream observation equals the first.
pub struct Frozen;

impl<E: Environment> DreamModel<E> for Frozen {
    fn predict(&mut self, obs: &[f64], _action: E::Action, out: &mut [f64]) {
        out.copy_from_slice(obs);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DreamConfig {
    pub horizon: usize,
    /// Start from the observation of a seeded real reset; otherwise every
    /// episode starts from the reset observation of seed 0.
    pub init_from_real: bool,
    pub terminate_on_predicted_exit: bool,
    pub output_mode: OutputMode,
    pub clamp: Option<f64>,
}

impl Default for DreamConfig {
    fn default() -> Self {
        Self {
            horizon: 1000,
            init_from_real: true,
            terminate_on_predicted_exit: false,
            output_mode: OutputMode::Absolute,
            clamp: Some(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DreamResult {
    pub score: f64,
    pub steps: usize,
    pub clamp_events: usize,
}

/// One episode entirely inside `model`; rewards come from predicted
/// observations.
pub fn dream_rollout<E, P, M>(env: &E, policy: &mut P, model: &mut M, config: &DreamConfig, seed: u64) -> DreamResult
where
    E: DreamEnvironment,
    P: Policy<E::Action>,
    M: DreamModel<E>,
{
    let (env_seed, _) = rollout_seeds(seed);
    let initial = env.reset(if config.init_from_real { env_seed } else { rollout_seeds(0).0 });
    let mut obs = vec![0.0; env.obs_dim()];
    env.observe(&initial, &mut obs);
    model.begin(env, &initial);

    let mut next = vec![0.0; obs.len()];
    let mut score = 0.0;
    let mut clamp_events = 0;
    let mut steps = 0;
    while steps < config.horizon {
        let action = policy.act(&obs);
        model.predict(&obs, action, &mut next);
        if config.output_mode == OutputMode::Delta {
            for (n, o) in next.iter_mut().zip(&obs) {
                *n += o;
            }
        }
        if let Some(bound) = config.clamp {
            for v in next.iter_mut() {
                if !v.is_finite() {
                    *v = 0.0;
                    clamp_events += 1;
                } else if v.abs() > bound {
                    *v = v.clamp(-bound, bound);
                    clamp_events += 1;
                }
            }
        }
        std::mem::swap(&mut obs, &mut next);
        score += env.observation_reward(&obs);
        steps += 1;
        if config.terminate_on_predicted_exit && env.observation_exit(&obs) {
            break;
        }
    }
    DreamResult {
        score,
        steps,
        clamp_events,
    }
}

/// Which world a cart-pole dream runs in.
#[derive(Debug, Clone, PartialEq)]
pub enum CartpoleDreamWorld {
    Learned { arch: MlpArchitecture, params: Vec<f64> },
    Exact,
    Frozen,
}

/// Cart-pole policy training inside a fixed world.
#[derive(Debug, Clone)]
pub struct CartpoleDream {
    pub env: Cartpole,
    pub policy: MlpArchitecture,
    pub world: CartpoleDreamWorld,
    pub config: DreamConfig,
    pub rollouts: usize,
}

impl CartpoleDream {
    pub fn episode(&self, policy_params: &[f64], seed: u64) -> DreamResult {
        let mut policy = ContinuousPolicy::new(&self.policy, policy_params);
        match &self.world {
            CartpoleDreamWorld::Learned { arch, params } => {
                let mut m = Learned(CartpoleModel::new(arch, params));
                dream_rollout(&self.env, &mut policy, &mut m, &self.config, seed)
            }
            CartpoleDreamWorld::Exact => {
                let mut m = ExactDynamics::new(&self.env);
                dream_rollout(&self.env, &mut policy, &mut m, &self.config, seed)
            }
            CartpoleDreamWorld::Frozen => dream_rollout(&self.env, &mut policy, &mut Frozen, &self.config, seed),
        }
    }

    /// Mean dream score over `rollouts` episodes.
    pub fn fitness(&self, policy_params: &[f64], seed: u64) -> f64 {
        (0..self.rollouts)
            .map(|r| self.episode(policy_params, derive_seed(seed, &[r as u64])).score)
            .sum::<f64>()
            / self.rollouts as f64
    }
}

/// Trains a fresh policy (all zeros) against the dream fitness.
pub fn dream_train(
    dream: &CartpoleDream,
    spec: &TrainSpec,
    observer: &mut Observer<'_>,
) -> Result<crate::es::TrainOutcome, EsError> {
    let init = ParamVector::zeros(dream.policy.param_count());
    train(|p, s| dream.fitness(p, s), init, spec, observer)
}

/// Plain real-environment evaluation of a policy, no dropout and no model.
pub fn transfer_eval<E, F, P>(env: &E, make_policy: F, episodes: usize, seed: u64, exec: Execution) -> EvalSummary
where
    E: Environment,
    F: Fn() -> P + Sync,
    P: Policy<E::Action>,
{
    let runs = map_indexed(episodes, exec, |i| {
        let mut policy = make_policy();
        let (total, steps, _) = raw_rollout(env, &mut policy, derive_seed(seed, &[i as u64]), env.max_steps());
        (total, steps)
    });
    let scores: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let steps = runs.iter().map(|r| r.1).sum();
    summarize(&scores, &scores, steps, steps)
}

pub fn cartpole_transfer(env: &Cartpole, arch: &MlpArchitecture, params: &[f64], episodes: usize, seed: u64, exec: Execution) -> EvalSummary {
    transfer_eval(env, || ContinuousPolicy::new(arch, params), episodes, seed, exec)
}

/// Search-distribution snapshots of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub generation: usize,
    pub mean: Vec<f64>,
    pub sigma: f64,
}

impl TrainingTrace {
    pub fn record(&mut self, generation: usize, mean: &[f64], sigma: f64) {
        self.snapshots.push(Snapshot {
            generation,
            mean: mean.to_vec(),
            sigma,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: f64,
    pub next_obs: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionDataset {
    pub transitions: Vec<Transition>,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn validate(&self, obs_dim: usize) -> Result<(), DreamError> {
        for (i, t) in self.transitions.iter().enumerate() {
            if t.obs.len() != obs_dim || t.next_obs.len() != obs_dim {
                return Err(DreamError::Shape(format!(
                    "transition {i}: expected observations of length {obs_dim}"
                )));
            }
        }
        Ok(())
    }
}

/// Rolls out policies drawn from every snapshot's search distribution
/// (round robin over snapshots) and keeps a uniform subsample of `n` real
/// transitions, so early random and late competent behaviour are mixed.
pub fn collect_transitions(
    env: &Cartpole,
    policy: &MlpArchitecture,
    trace: &TrainingTrace,
    n: usize,
    seed: u64,
) -> Result<TransitionDataset, DreamError> {
    if trace.snapshots.is_empty() {
        return Err(DreamError::InsufficientData("training trace has no snapshots".into()));
    }
    let np = policy.param_count();
    if let Some(s) = trace.snapshots.iter().find(|s| s.mean.len() < np) {
        return Err(DreamError::Shape(format!(
            "snapshot at generation {} has {} parameters, policy needs {np}",
            s.generation,
            s.mean.len()
        )));
    }
    let mut pool = Vec::new();
    let mut episode = 0u64;
    while pool.len() < n {
        let snap = &trace.snapshots[episode as usize % trace.snapshots.len()];
        let mut rng = rng_from_seed(derive_seed(seed, &[episode, 0]));
        let params: Vec<f64> = snap.mean[..np]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + snap.sigma * z
            })
            .collect();
        let mut pi = ContinuousPolicy::new(policy, &params);
        let mut state: CartpoleEpisode = env.reset(rollout_seeds(derive_seed(seed, &[episode, 1])).0);
        let mut obs = crate::cartpole::observe(&state.state).to_vec();
        loop {
            let action = pi.act(&obs).clamp(-1.0, 1.0);
            let step = env.step(&mut state, action);
            let next = crate::cartpole::observe(&state.state).to_vec();
            pool.push(Transition {
                obs: std::mem::replace(&mut obs, next.clone()),
                action,
                next_obs: next,
            });
            if step.done {
                break;
            }
        }
        episode += 1;
    }
    pool.shuffle(&mut rng_from_seed(derive_seed(seed, &[u64::MAX])));
    pool.truncate(n);
    Ok(TransitionDataset { transitions: pool })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig {
    pub es: EsConfig,
    pub batch_size: usize,
    pub output_mode: OutputMode,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            es: EsConfig {
                population_size: 64,
                rollouts_per_candidate: 1,
                generations: 2000,
                weight_decay: 0.0,
                seeding: EpisodeSeeding::PerGeneration,
                ..EsConfig::default()
            },
            batch_size: 256,
            output_mode: OutputMode::Absolute,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedFit {
    pub params: ParamVector,
    pub mse: f64,
    /// Best full-dataset MSE after each generation.
    pub best_so_far: Vec<f64>,
}

/// Mean squared one-step error of `params` over `items`.
pub fn prediction_mse(arch: &MlpArchitecture, params: &[f64], data: &[Transition], mode: OutputMode) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut model = CartpoleModel::new(arch, params);
    let mut out = vec![0.0; arch.output_dim()];
    let mut total = 0.0;
    for t in data {
        model.predict(&t.obs, t.action, &mut out);
        for k in 0..out.len() {
            let target = match mode {
                OutputMode::Absolute => t.next_obs[k],
                OutputMode::Delta => t.next_obs[k] - t.obs[k],
            };
            total += (out[k] - target).powi(2);
        }
    }
    total / (data.len() * out.len()) as f64
}

/// Fits a forward model by maximizing `-MSE` on minibatches with the
/// black-box optimizer; returns the best mean seen on the full dataset.
pub fn fit_supervised_wm(
    data: &TransitionDataset,
    arch: &MlpArchitecture,
    cfg: &SupervisedConfig,
    exec: Execution,
) -> Result<SupervisedFit, DreamError> {
    if data.is_empty() {
        return Err(DreamError::InsufficientData("empty dataset".into()));
    }
    data.validate(arch.output_dim())?;
    if arch.input_dim() != arch.output_dim() + 1 {
        return Err(DreamError::Shape(format!("model {arch} must map obs+action to obs")));
    }
    let items = &data.transitions;
    let batch = cfg.batch_size.clamp(1, items.len());
    let fitness = |p: &[f64], seed: u64| {
        let mut rng = rng_from_seed(seed);
        let chosen: Vec<Transition> = items.choose_multiple(&mut rng, batch).cloned().collect();
        -prediction_mse(arch, p, &chosen, cfg.output_mode)
    };
    let init = ParamVector::zeros(arch.param_count());
    let mut best = (prediction_mse(arch, init.as_slice(), items, cfg.output_mode), init.clone());
    let mut history = Vec::with_capacity(cfg.es.generations);
    let mut observer = |_r: &crate::es::GenerationReport, es: &crate::es::OpenEs| {
        let mse = prediction_mse(arch, es.mean(), items, cfg.output_mode);
        if mse < best.0 {
            best = (mse, ParamVector(es.mean().to_vec()));
        }
        history.push(best.0);
        std::ops::ControlFlow::Continue(())
    };
    let mut spec = TrainSpec::new(cfg.es.clone(), cfg.seed);
    spec.execution = exec;
    train(fitness, init, &spec, &mut observer)?;
    Ok(SupervisedFit {
        params: best.1,
        mse: best.0,
        best_so_far: history,
    })
}
