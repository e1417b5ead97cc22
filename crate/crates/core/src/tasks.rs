//! Concrete agents: environments wired to the dropout wrapper, policy and
//! world-model networks over slices of one joint parameter vector, and the
//! fitness functions the optimizer maximizes.

use crate::cartpole::{self, Cartpole, CartpoleEpisode, OBS_DIM};
use crate::dropout::{rollout, DropoutConfig, Environment, OutputMode, Policy, RolloutResult, WorldModel};
use crate::exec::{map_indexed, Execution};
use crate::gridworld::{self, GridAction, GridState, GridWorld};
use crate::nn::{
    Activation, Architecture, ForwardBuffer, MlpArchitecture, PlusConvArchitecture, GRID_ACTIONS,
    GRID_OBS_LEN,
};
use crate::rng::derive_seed;

impl Environment for Cartpole {
    type State = CartpoleEpisode;
    type Action = f64;

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn reset(&self, seed: u64) -> Self::State {
        Cartpole::reset(self, seed)
    }

    fn step(&self, state: &mut Self::State, action: f64) -> (f64, bool) {
        let out = Cartpole::step(self, state, action);
        (out.reward, out.done)
    }

    fn observe(&self, state: &Self::State, out: &mut [f64]) {
        out.copy_from_slice(&cartpole::observe(&state.state));
    }

    fn max_steps(&self) -> usize {
        self.params.episode_steps
    }
}

impl Environment for GridWorld {
    type State = GridState;
    type Action = GridAction;

    fn obs_dim(&self) -> usize {
        GRID_OBS_LEN
    }

    fn reset(&self, seed: u64) -> Self::State {
        GridWorld::reset(self, seed)
    }

    fn step(&self, state: &mut Self::State, action: GridAction) -> (f64, bool) {
        let out = GridWorld::step(self, state, action);
        (out.reward, out.done)
    }

    fn observe(&self, state: &Self::State, out: &mut [f64]) {
        out.copy_from_slice(&gridworld::observe(state));
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }
}

/// MLP policy with a single tanh output used as a force in `[-1, 1]`.
pub struct ContinuousPolicy<'a> {
    arch: &'a MlpArchitecture,
    params: &'a [f64],
    buf: ForwardBuffer,
}

impl<'a> ContinuousPolicy<'a> {
    pub fn new(arch: &'a MlpArchitecture, params: &'a [f64]) -> Self {
        Self {
            arch,
            params,
            buf: arch.buffer(),
        }
    }
}

impl Policy<f64> for ContinuousPolicy<'_> {
    fn act(&mut self, obs: &[f64]) -> f64 {
        self.arch.forward_into(self.params, obs, &mut self.buf)[0]
    }
}

/// MLP policy choosing the arg-max of its 5 outputs (first wins ties).
pub struct ArgmaxPolicy<'a> {
    arch: &'a MlpArchitecture,
    params: &'a [f64],
    buf: ForwardBuffer,
}

impl<'a> ArgmaxPolicy<'a> {
    pub fn new(arch: &'a MlpArchitecture, params: &'a [f64]) -> Self {
        Self {
            arch,
            params,
            buf: arch.buffer(),
        }
    }
}

impl Policy<GridAction> for ArgmaxPolicy<'_> {
    fn act(&mut self, obs: &[f64]) -> GridAction {
        let out = self.arch.forward_into(self.params, obs, &mut self.buf);
        let mut best = 0;
        for (i, &v) in out.iter().enumerate() {
            if v > out[best] {
                best = i;
            }
        }
        GridAction::from_index(best).unwrap_or(GridAction::NoOp)
    }
}

/// Cart-pole world model: MLP over `[observation, action]`.
pub struct CartpoleModel<'a> {
    arch: &'a MlpArchitecture,
    params: &'a [f64],
    buf: ForwardBuffer,
    input: Vec<f64>,
}

impl<'a> CartpoleModel<'a> {
    pub fn new(arch: &'a MlpArchitecture, params: &'a [f64]) -> Self {
        Self {
            arch,
            params,
            buf: arch.buffer(),
            input: vec![0.0; arch.input_dim()],
        }
    }
}

impl WorldModel<f64> for CartpoleModel<'_> {
    fn predict(&mut self, obs: &[f64], action: f64, out: &mut [f64]) {
        let n = obs.len();
        self.input[..n].copy_from_slice(obs);
        if self.input.len() > n {
            self.input[n] = action.clamp(-1.0, 1.0);
        }
        out.copy_from_slice(self.arch.forward_into(self.params, &self.input, &mut self.buf));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridModelKind {
    FullyConnected,
    #[default]
    Convolutional,
}

impl GridModelKind {
    pub fn architecture(self) -> Architecture {
        match self {
            GridModelKind::FullyConnected => Architecture::Mlp(fc_grid_model()),
            GridModelKind::Convolutional => Architecture::PlusConv(PlusConvArchitecture::default()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GridModelKind::FullyConnected => "fc",
            GridModelKind::Convolutional => "conv",
        }
    }
}

pub fn fc_grid_model() -> MlpArchitecture {
    MlpArchitecture::new(&[GRID_OBS_LEN + GRID_ACTIONS, 100, GRID_OBS_LEN], Activation::Identity)
        .expect("static sizes")
}

/// Grid world model (either architecture) thresholding at 0.5.
pub enum GridModel<'a> {
    FullyConnected {
        arch: &'a MlpArchitecture,
        params: &'a [f64],
        buf: ForwardBuffer,
        input: [f64; GRID_OBS_LEN + GRID_ACTIONS],
    },
    Convolutional {
        arch: &'a PlusConvArchitecture,
        params: &'a [f64],
    },
}

impl<'a> GridModel<'a> {
    pub fn fully_connected(arch: &'a MlpArchitecture, params: &'a [f64]) -> Self {
        GridModel::FullyConnected {
            arch,
            params,
            buf: arch.buffer(),
            input: [0.0; GRID_OBS_LEN + GRID_ACTIONS],
        }
    }

    pub fn convolutional(arch: &'a PlusConvArchitecture, params: &'a [f64]) -> Self {
        GridModel::Convolutional { arch, params }
    }

    /// Continuous outputs before thresholding.
    pub fn predict_raw(&mut self, obs: &[f64], action: GridAction) -> [f64; GRID_OBS_LEN] {
        match self {
            GridModel::FullyConnected {
                arch,
                params,
                buf,
                input,
            } => {
                input[..GRID_OBS_LEN].copy_from_slice(obs);
                input[GRID_OBS_LEN..].fill(0.0);
                input[GRID_OBS_LEN + action.index()] = 1.0;
                let mut out = [0.0; GRID_OBS_LEN];
                out.copy_from_slice(arch.forward_into(params, &input[..], buf));
                out
            }
            GridModel::Convolutional { arch, params } => {
                let mut out = [0.0; GRID_OBS_LEN];
                arch.forward_raw_into(params, obs, action.index(), &mut out);
                out
            }
        }
    }
}

impl WorldModel<GridAction> for GridModel<'_> {
    fn predict(&mut self, obs: &[f64], action: GridAction, out: &mut [f64]) {
        let raw = self.predict_raw(obs, action);
        for (o, r) in out.iter_mut().zip(raw) {
            *o = if r > 0.5 { 1.0 } else { 0.0 };
        }
    }
}

/// Summary of repeated real or wrapped episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub mean_score: f64,
    pub stderr: f64,
    pub mean_reward: f64,
    pub peek_fraction: f64,
    pub episodes: usize,
}

pub(crate) fn summarize(scores: &[f64], rewards: &[f64], peeks: usize, steps: usize) -> EvalSummary {
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n.max(1) as f64;
    let stderr = if n >= 2 {
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    EvalSummary {
        mean_score: mean,
        stderr,
        mean_reward: rewards.iter().sum::<f64>() / n.max(1) as f64,
        peek_fraction: if steps == 0 { 0.0 } else { peeks as f64 / steps as f64 },
        episodes: n,
    }
}

/// A jointly optimized policy + world model on one environment.
pub trait Task: Sync {
    fn architecture(&self) -> Architecture;
    fn param_count(&self) -> usize {
        self.architecture().param_count()
    }
    /// Number of leading parameters that belong to the policy.
    fn policy_param_count(&self) -> usize;
    fn rollouts_per_candidate(&self) -> usize;
    /// One wrapped episode; returns `(cumulative_reward, score, steps, peeks)`.
    fn episode(&self, params: &[f64], seed: u64) -> (f64, f64, usize, usize);

    /// Mean cumulative reward over `rollouts_per_candidate` episodes.
    fn fitness(&self, params: &[f64], seed: u64) -> f64 {
        let n = self.rollouts_per_candidate();
        (0..n)
            .map(|r| self.episode(params, derive_seed(seed, &[r as u64])).0)
            .sum::<f64>()
            / n as f64
    }

    fn evaluate(&self, params: &[f64], seed: u64, episodes: usize, exec: Execution) -> EvalSummary {
        let runs = map_indexed(episodes, exec, |i| {
            self.episode(params, derive_seed(seed, &[i as u64]))
        });
        let rewards: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let scores: Vec<f64> = runs.iter().map(|r| r.1).collect();
        let steps = runs.iter().map(|r| r.2).sum();
        let peeks = runs.iter().map(|r| r.3).sum();
        summarize(&scores, &rewards, peeks, steps)
    }
}

#[derive(Debug, Clone)]
pub struct CartpoleTask {
    pub env: Cartpole,
    pub policy: MlpArchitecture,
    pub model: MlpArchitecture,
    pub dropout: DropoutConfig,
    pub rollouts: usize,
}

impl CartpoleTask {
    /// Policy `5 -> policy_hidden -> 1 (tanh)` and model
    /// `6 -> model_hidden -> 5` fed the observation and the action.
    pub fn new(
        env: Cartpole,
        policy_hidden: usize,
        model_hidden: usize,
        dropout: DropoutConfig,
        rollouts: usize,
    ) -> Self {
        Self {
            env,
            policy: cartpole_policy(policy_hidden),
            model: cartpole_model(model_hidden),
            dropout,
            rollouts,
        }
    }

    pub fn with_defaults(peek_probability: f64, rollouts: usize) -> Self {
        Self::new(
            Cartpole::default(),
            10,
            30,
            DropoutConfig::new(peek_probability).with_clamp(10.0),
            rollouts,
        )
    }

    pub fn split<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        params.split_at(self.policy.param_count())
    }

    pub fn run(&self, params: &[f64], seed: u64, record: bool) -> RolloutResult<CartpoleEpisode, f64> {
        let (pp, mp) = self.split(params);
        let mut policy = ContinuousPolicy::new(&self.policy, pp);
        let mut model = CartpoleModel::new(&self.model, mp);
        rollout(
            &self.env,
            &mut policy,
            &mut model,
            &self.dropout,
            seed,
            self.env.params.episode_steps,
            record,
        )
    }
}

pub fn cartpole_policy(hidden: usize) -> MlpArchitecture {
    MlpArchitecture::new(&[OBS_DIM, hidden, 1], Activation::Tanh).expect("positive sizes")
}

pub fn cartpole_model(hidden: usize) -> MlpArchitecture {
    MlpArchitecture::new(&[OBS_DIM + 1, hidden, OBS_DIM], Activation::Identity).expect("positive sizes")
}

impl Task for CartpoleTask {
    fn architecture(&self) -> Architecture {
        Architecture::Joint {
            policy: Box::new(Architecture::Mlp(self.policy.clone())),
            model: Box::new(Architecture::Mlp(self.model.clone())),
        }
    }

    fn policy_param_count(&self) -> usize {
        self.policy.param_count()
    }

    fn rollouts_per_candidate(&self) -> usize {
        self.rollouts
    }

    fn episode(&self, params: &[f64], seed: u64) -> (f64, f64, usize, usize) {
        let r = self.run(params, seed, false);
        (r.cumulative_reward, r.cumulative_reward, r.steps, r.peek_count)
    }
}

#[derive(Debug, Clone)]
pub struct GridTask {
    pub env: GridWorld,
    pub policy: MlpArchitecture,
    pub kind: GridModelKind,
    pub fc: MlpArchitecture,
    pub conv: PlusConvArchitecture,
    pub dropout: DropoutConfig,
    pub rollouts: usize,
}

/// `50 -> 100 (tanh) -> 32 (tanh) -> 5`, acting by arg-max.
pub fn grid_policy() -> MlpArchitecture {
    MlpArchitecture::new(&[GRID_OBS_LEN, 100, 32, GRID_ACTIONS], Activation::Identity)
        .expect("static sizes")
}

impl GridTask {
    pub fn new(env: GridWorld, kind: GridModelKind, peek_probability: f64, rollouts: usize) -> Self {
        Self {
            env,
            policy: grid_policy(),
            kind,
            fc: fc_grid_model(),
            conv: PlusConvArchitecture::default(),
            dropout: DropoutConfig::new(peek_probability).with_mode(OutputMode::Absolute),
            rollouts,
        }
    }

    pub fn model_param_count(&self) -> usize {
        match self.kind {
            GridModelKind::FullyConnected => self.fc.param_count(),
            GridModelKind::Convolutional => self.conv.param_count(),
        }
    }

    pub fn split<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        params.split_at(self.policy.param_count())
    }

    pub fn model<'p>(&'p self, model_params: &'p [f64]) -> GridModel<'p> {
        match self.kind {
            GridModelKind::FullyConnected => GridModel::fully_connected(&self.fc, model_params),
            GridModelKind::Convolutional => GridModel::convolutional(&self.conv, model_params),
        }
    }

    pub fn run(&self, params: &[f64], seed: u64, record: bool) -> RolloutResult<GridState, GridAction> {
        let (pp, mp) = self.split(params);
        let mut policy = ArgmaxPolicy::new(&self.policy, pp);
        let mut model = self.model(mp);
        rollout(
            &self.env,
            &mut policy,
            &mut model,
            &self.dropout,
            seed,
            self.env.config.max_steps,
            record,
        )
    }
}

impl Task for GridTask {
    fn architecture(&self) -> Architecture {
        Architecture::Joint {
            policy: Box::new(Architecture::Mlp(self.policy.clone())),
            model: Box::new(self.kind.architecture()),
        }
    }

    fn policy_param_count(&self) -> usize {
        self.policy.param_count()
    }

    fn rollouts_per_candidate(&self) -> usize {
        self.rollouts
    }

    fn episode(&self, params: &[f64], seed: u64) -> (f64, f64, usize, usize) {
        let r = self.run(params, seed, false);
        (
            r.cumulative_reward,
            gridworld::normalized_score(r.cumulative_reward, r.steps),
            r.steps,
            r.peek_count,
        )
    }
}
