//! Observational dropout: the augmented MDP whose observation is the real
//! one with probability `p` and the world model's own prediction otherwise.
//!
//! The wrapper keeps `(env_state, model_obs)`. Every step the environment
//! advances for real and pays the real reward. A uniform draw `r < p`
//! "peeks": the policy sees the true observation and `model_obs` is reset to
//! it. Otherwise `model_obs` is rolled forward through the world model and
//! that prediction is what the policy sees.

use rand::Rng as _;

use crate::rng::{derive_seed, rng_from_seed, Rng};

/// An episodic environment with a flat real-valued observation.
pub trait Environment: Sync {
    type State: Clone + Send;
    type Action: Copy + Send;

    fn obs_dim(&self) -> usize;
    fn reset(&self, seed: u64) -> Self::State;
    /// Advances in place and returns `(reward, done)`.
    fn step(&self, state: &mut Self::State, action: Self::Action) -> (f64, bool);
    fn observe(&self, state: &Self::State, out: &mut [f64]);
    /// Upper bound on episode length used as the default horizon.
    fn max_steps(&self) -> usize;
}

/// Maps an observation to an action. Policies may keep scratch space.
pub trait Policy<A> {
    fn act(&mut self, obs: &[f64]) -> A;
}

/// Maps `(observation, action)` to the model's output (a next observation
/// in absolute mode, an increment in delta mode).
pub trait WorldModel<A> {
    fn predict(&mut self, obs: &[f64], action: A, out: &mut [f64]);
}

impl<A, F: FnMut(&[f64]) -> A> Policy<A> for F {
    fn act(&mut self, obs: &[f64]) -> A {
        self(obs)
    }
}

/// A world model that is never consulted; only valid at `p = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoModel;

impl<A> WorldModel<A> for NoModel {
    fn predict(&mut self, obs: &[f64], _action: A, out: &mut [f64]) {
        out.copy_from_slice(obs);
    }
}

/// Copies its input: the "frozen world" model.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityModel;

impl<A> WorldModel<A> for IdentityModel {
    fn predict(&mut self, obs: &[f64], _action: A, out: &mut [f64]) {
        out.copy_from_slice(obs);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputMode {
    #[default]
    Absolute,
    Delta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutConfig {
    pub peek_probability: f64,
    pub output_mode: OutputMode,
    /// Symmetric bound applied to every model output component; non-finite
    /// outputs are replaced by 0.
    pub clamp: Option<f64>,
}

impl DropoutConfig {
    pub fn new(peek_probability: f64) -> Self {
        Self {
            peek_probability,
            output_mode: OutputMode::Absolute,
            clamp: None,
        }
    }

    pub fn with_clamp(mut self, bound: f64) -> Self {
        self.clamp = Some(bound);
        self
    }

    pub fn with_mode(mut self, mode: OutputMode) -> Self {
        self.output_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.peek_probability) {
            return Err(format!(
                "peek_probability must lie in [0, 1], got {}",
                self.peek_probability
            ));
        }
        if let Some(c) = self.clamp {
            if !(c > 0.0) {
                return Err(format!("clamp bound must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AugmentedState<S> {
    pub env_state: S,
    pub model_obs: Vec<f64>,
    pub clamp_events: usize,
    scratch: Vec<f64>,
}

impl<S> AugmentedState<S> {
    /// What the policy sees now.
    pub fn policy_obs(&self) -> &[f64] {
        &self.model_obs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrappedStep {
    pub reward: f64,
    pub done: bool,
    pub peeked: bool,
}

/// Resets the environment and forces an initial resynchronization.
pub fn wrap_reset<E: Environment>(env: &E, seed: u64) -> AugmentedState<E::State> {
    let env_state = env.reset(seed);
    let mut model_obs = vec![0.0; env.obs_dim()];
    env.observe(&env_state, &mut model_obs);
    AugmentedState {
        env_state,
        scratch: vec![0.0; model_obs.len()],
        model_obs,
        clamp_events: 0,
    }
}

pub fn wrap_step<E, M>(
    aug: &mut AugmentedState<E::State>,
    action: E::Action,
    env: &E,
    model: &mut M,
    config: &DropoutConfig,
    rng: &mut Rng,
) -> WrappedStep
where
    E: Environment,
    M: WorldModel<E::Action>,
{
    let (reward, done) = env.step(&mut aug.env_state, action);
    let r: f64 = rng.random();
    let peeked = r < config.peek_probability;
    if peeked {
        env.observe(&aug.env_state, &mut aug.model_obs);
    } else {
        model.predict(&aug.model_obs, action, &mut aug.scratch);
        if config.output_mode == OutputMode::Delta {
            for (s, m) in aug.scratch.iter_mut().zip(&aug.model_obs) {
                *s += m;
            }
        }
        if let Some(bound) = config.clamp {
            for v in aug.scratch.iter_mut() {
                if !v.is_finite() {
                    *v = 0.0;
                    aug.clamp_events += 1;
                } else if v.abs() > bound {
                    *v = v.clamp(-bound, bound);
                    aug.clamp_events += 1;
                }
            }
        }
        std::mem::swap(&mut aug.model_obs, &mut aug.scratch);
    }
    WrappedStep {
        reward,
        done,
        peeked,
    }
}

#[derive(Debug, Clone)]
pub struct TraceStep<S, A> {
    pub step: usize,
    /// State after the transition.
    pub env_state: S,
    pub action: A,
    pub reward: f64,
    pub peeked: bool,
    pub real_obs: Vec<f64>,
    pub model_obs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RolloutResult<S, A> {
    pub cumulative_reward: f64,
    pub steps: usize,
    pub peek_count: usize,
    pub clamp_events: usize,
    pub initial_state: S,
    pub trace: Option<Vec<TraceStep<S, A>>>,
}

/// Seeds used by a rollout: one for the environment, one for peek draws.
pub fn rollout_seeds(seed: u64) -> (u64, u64) {
    (derive_seed(seed, &[0]), derive_seed(seed, &[1]))
}

/// Runs one wrapped episode until termination or `horizon` steps.
pub fn rollout<E, P, M>(
    env: &E,
    policy: &mut P,
    model: &mut M,
    config: &DropoutConfig,
    seed: u64,
    horizon: usize,
    record: bool,
) -> RolloutResult<E::State, E::Action>
where
    E: Environment,
    P: Policy<E::Action>,
    M: WorldModel<E::Action>,
{
    let (env_seed, peek_seed) = rollout_seeds(seed);
    let mut rng = rng_from_seed(peek_seed);
    let mut aug = wrap_reset(env, env_seed);
    let initial_state = aug.env_state.clone();
    let mut trace = record.then(Vec::new);
    let mut real_obs = vec![0.0; env.obs_dim()];
    let mut total = 0.0;
    let mut peeks = 0;
    let mut steps = 0;
    while steps < horizon {
        let action = policy.act(aug.policy_obs());
        let out = wrap_step(&mut aug, action, env, model, config, &mut rng);
        total += out.reward;
        peeks += usize::from(out.peeked);
        steps += 1;
        if let Some(t) = trace.as_mut() {
            env.observe(&aug.env_state, &mut real_obs);
            t.push(TraceStep {
                step: steps,
                env_state: aug.env_state.clone(),
                action,
                reward: out.reward,
                peeked: out.peeked,
                real_obs: real_obs.clone(),
                model_obs: aug.model_obs.clone(),
            });
        }
        if out.done {
            break;
        }
    }
    RolloutResult {
        cumulative_reward: total,
        steps,
        peek_count: peeks,
        clamp_events: aug.clamp_events,
        initial_state,
        trace,
    }
}

/// A plain episode without any wrapper, seeded like [`rollout`].
pub fn raw_rollout<E, P>(
    env: &E,
    policy: &mut P,
    seed: u64,
    horizon: usize,
) -> (f64, usize, Vec<Vec<f64>>)
where
    E: Environment,
    P: Policy<E::Action>,
{
    let (env_seed, _) = rollout_seeds(seed);
    let mut state = env.reset(env_seed);
    let mut obs = vec![0.0; env.obs_dim()];
    env.observe(&state, &mut obs);
    let mut seen = Vec::new();
    let mut total = 0.0;
    let mut steps = 0;
    while steps < horizon {
        let action = policy.act(&obs);
        let (reward, done) = env.step(&mut state, action);
        env.observe(&state, &mut obs);
        seen.push(obs.clone());
        total += reward;
        steps += 1;
        if done {
            break;
        }
    }
    (total, steps, seen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartpole::Cartpole;
    use crate::gridworld::{GridAction, GridConfig, GridWorld};

    #[test]
    fn reset_syncs_model_to_real_observation() {
        let env = Cartpole::default();
        let aug = wrap_reset(&env, 11);
        let mut real = vec![0.0; 5];
        env.observe(&aug.env_state, &mut real);
        assert_eq!(aug.model_obs, real);
        let again = wrap_reset(&env, 11);
        assert_eq!(again.model_obs, aug.model_obs);
    }

    #[test]
    fn never_peeking_keeps_identity_model_frozen() {
        let grid = GridWorld::new(GridConfig::default()).unwrap();
        let cfg = DropoutConfig::new(0.0);
        let mut rng = rng_from_seed(1);
        let mut aug = wrap_reset(&grid, 5);
        let first = aug.model_obs.clone();
        for _ in 0..20 {
            let out = wrap_step(&mut aug, GridAction::NoOp, &grid, &mut IdentityModel, &cfg, &mut rng);
            assert!(!out.peeked);
            assert_eq!(aug.model_obs, first);
        }
    }

    #[test]
    fn always_peeking_equals_raw_environment() {
        let env = Cartpole::default();
        let policy = |o: &[f64]| (o[3] * 3.0 - o[4]).tanh();
        for seed in 0..5 {
            let mut p1 = policy;
            let mut p2 = policy;
            let wrapped = rollout(&env, &mut p1, &mut NoModel, &DropoutConfig::new(1.0), seed, 1000, true);
            let (raw_total, raw_steps, raw_obs) = raw_rollout(&env, &mut p2, seed, 1000);
            assert_eq!(wrapped.cumulative_reward.to_bits(), raw_total.to_bits());
            assert_eq!(wrapped.steps, raw_steps);
            assert_eq!(wrapped.peek_count, raw_steps);
            let seen: Vec<Vec<f64>> = wrapped.trace.unwrap().into_iter().map(|t| t.model_obs).collect();
            assert_eq!(seen, raw_obs);
        }
    }

    #[test]
    fn peek_fraction_concentrates() {
        let grid = GridWorld::new(GridConfig::default()).unwrap();
        let cfg = DropoutConfig::new(0.5);
        let mut rng = rng_from_seed(2);
        let mut aug = wrap_reset(&grid, 0);
        let n = 100_000;
        let mut peeks = 0;
        for _ in 0..n {
            let out = wrap_step(&mut aug, GridAction::NoOp, &grid, &mut IdentityModel, &cfg, &mut rng);
            peeks += usize::from(out.peeked);
            if out.done {
                aug = wrap_reset(&grid, peeks as u64);
            }
        }
        let frac = peeks as f64 / n as f64;
        assert!((0.49..=0.51).contains(&frac), "{frac}");
    }

    struct Exploding;
    impl WorldModel<f64> for Exploding {
        fn predict(&mut self, _obs: &[f64], _a: f64, out: &mut [f64]) {
            out.copy_from_slice(&[f64::NAN, 1e9, -1e9, 0.5, f64::INFINITY]);
        }
    }

    #[test]
    fn clamps_and_counts_divergent_outputs() {
        let env = Cartpole::default();
        let cfg = DropoutConfig::new(0.0).with_clamp(10.0);
        let mut rng = rng_from_seed(0);
        let mut aug = wrap_reset(&env, 0);
        wrap_step(&mut aug, 0.0, &env, &mut Exploding, &cfg, &mut rng);
        assert_eq!(aug.model_obs, vec![0.0, 10.0, -10.0, 0.5, 0.0]);
        assert_eq!(aug.clamp_events, 4);
    }

    #[test]
    fn delta_mode_adds_to_previous_observation() {
        struct Step;
        impl WorldModel<f64> for Step {
            fn predict(&mut self, _o: &[f64], _a: f64, out: &mut [f64]) {
                out.fill(0.25);
            }
        }
        let env = Cartpole::default();
        let cfg = DropoutConfig::new(0.0).with_mode(OutputMode::Delta);
        let mut rng = rng_from_seed(0);
        let mut aug = wrap_reset(&env, 3);
        let before = aug.model_obs.clone();
        wrap_step(&mut aug, 0.0, &env, &mut Step, &cfg, &mut rng);
        for (a, b) in aug.model_obs.iter().zip(&before) {
            assert_eq!(*a, b + 0.25);
        }
    }

    #[test]
    fn rewards_ignore_model_observation() {
        struct Garbage;
        impl WorldModel<f64> for Garbage {
            fn predict(&mut self, _o: &[f64], _a: f64, out: &mut [f64]) {
                out.fill(7.0);
            }
        }
        let env = Cartpole::default();
        let actions: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.37).sin()).collect();
        let run = |p: f64| {
            let mut i = 0;
            let mut policy = |_o: &[f64]| {
                i += 1;
                actions[i - 1]
            };
            rollout(&env, &mut policy, &mut Garbage, &DropoutConfig::new(p), 4, 200, false)
                .cumulative_reward
        };
        assert_eq!(run(0.0), run(1.0));
    }

    #[test]
    fn validation() {
        assert!(DropoutConfig::new(1.5).validate().is_err());
        assert!(DropoutConfig::new(-0.1).validate().is_err());
        assert!(DropoutConfig::new(0.3).with_clamp(0.0).validate().is_err());
        assert!(DropoutConfig::new(0.3).validate().is_ok());
    }
}
