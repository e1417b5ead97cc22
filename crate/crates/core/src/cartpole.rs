//! Swing-up cart-pole with the full nonlinear equations of motion.
//!
//! Angle convention: `theta = 0` is upright, `theta = pi` hangs down. The
//! accelerations solve
//!
//! ```text
//! (M + m) xdd - m L cos(th) thdd = u - m L sin(th) thd^2
//! -m L cos(th) xdd + m L^2 thdd  = m g L sin(th)
//! ```
//!
//! and the state advances by semi-implicit Euler (velocities, then positions).

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    /// Newtons per unit of action.
    pub force_scale: f64,
    pub dt: f64,
    pub x_limit: f64,
    pub episode_steps: usize,
    /// Standard deviation of the reset perturbation on every state component.
    pub init_std: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 0.5,
            pole_mass: 0.5,
            pole_length: 0.6,
            gravity: 9.82,
            force_scale: 10.0,
            dt: 0.01,
            x_limit: 2.4,
            episode_steps: 1000,
            init_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartpoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartpoleState {
    pub fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        Self {
            x,
            x_dot,
            theta,
            theta_dot,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.x_dot.is_finite()
            && self.theta.is_finite()
            && self.theta_dot.is_finite()
    }

    pub fn mirrored(&self) -> Self {
        Self::new(-self.x, -self.x_dot, -self.theta, -self.theta_dot)
    }
}

pub const OBS_DIM: usize = 5;

/// `[x, x_dot, cos(theta), sin(theta), theta_dot]`
pub type CartpoleObs = [f64; OBS_DIM];

pub fn observe(state: &CartpoleState) -> CartpoleObs {
    [
        state.x,
        state.x_dot,
        state.theta.cos(),
        state.theta.sin(),
        state.theta_dot,
    ]
}

impl CartpoleParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_length", self.pole_length),
            ("gravity", self.gravity),
            ("force_scale", self.force_scale),
            ("dt", self.dt),
            ("x_limit", self.x_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if self.episode_steps == 0 {
            return Err("episode_steps must be at least 1".into());
        }
        if !(self.init_std >= 0.0) {
            return Err("init_std must be non-negative".into());
        }
        Ok(())
    }

    /// Near-hanging initial state, deterministic in `seed`.
    pub fn reset(&self, seed: u64) -> CartpoleState {
        let mut rng = rng_from_seed(seed);
        let mut noise = || -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            self.init_std * z
        };
        let x = noise();
        let x_dot = noise();
        let theta = PI + noise();
        let theta_dot = noise();
        CartpoleState::new(x, x_dot, theta, theta_dot)
    }

    /// Cart and pole accelerations under horizontal force `force` (N).
    pub fn accelerations(&self, s: &CartpoleState, force: f64) -> (f64, f64) {
        let (m_c, m_p, l, g) = (self.cart_mass, self.pole_mass, self.pole_length, self.gravity);
        let (sin, cos) = s.theta.sin_cos();
        // 2x2 mass matrix [[a, b], [b, d]] with right-hand side [r1, r2].
        let a = m_c + m_p;
        let b = -m_p * l * cos;
        let d = m_p * l * l;
        let r1 = force - m_p * l * sin * s.theta_dot * s.theta_dot;
        let r2 = m_p * g * l * sin;
        let det = a * d - b * b;
        let x_acc = (d * r1 - b * r2) / det;
        let theta_acc = (a * r2 - b * r1) / det;
        (x_acc, theta_acc)
    }

    /// One semi-implicit Euler step of `dt` seconds under force `force` (N).
    pub fn integrate(&self, s: &CartpoleState, force: f64, dt: f64) -> CartpoleState {
        let (x_acc, theta_acc) = self.accelerations(s, force);
        let x_dot = s.x_dot + dt * x_acc;
        let theta_dot = s.theta_dot + dt * theta_acc;
        CartpoleState::new(s.x + dt * x_dot, x_dot, s.theta + dt * theta_dot, theta_dot)
    }

    /// Per-step reward in `[0, 1]` from cart position and `cos(theta)`.
    ///
    /// Written in terms of observation components so it can be applied to
    /// predicted observations as well.
    pub fn reward_from(&self, x: f64, cos_theta: f64) -> f64 {
        if !(x.abs() < self.x_limit) {
            return 0.0;
        }
        let upright = (cos_theta.clamp(-1.0, 1.0) + 1.0) / 2.0;
        let centered = (x * PI / (2.0 * self.x_limit)).cos();
        (upright * centered).max(0.0)
    }

    pub fn reward(&self, s: &CartpoleState) -> f64 {
        self.reward_from(s.x, s.theta.cos())
    }

    /// Total mechanical energy, zero potential at the pivot height.
    pub fn energy(&self, s: &CartpoleState) -> f64 {
        let (m_c, m_p, l, g) = (self.cart_mass, self.pole_mass, self.pole_length, self.gravity);
        let cos = s.theta.cos();
        0.5 * (m_c + m_p) * s.x_dot * s.x_dot + 0.5 * m_p * l * l * s.theta_dot * s.theta_dot
            - m_p * l * cos * s.theta_dot * s.x_dot
            + m_p * g * l * cos
    }
}

/// A running episode: physical state plus elapsed step count.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartpoleEpisode {
    pub state: CartpoleState,
    pub elapsed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartpoleStep {
    pub reward: f64,
    pub done: bool,
}

/// The environment: parameters plus the step/reset/observe contract.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cartpole {
    pub params: CartpoleParams,
}

impl Cartpole {
    pub fn new(params: CartpoleParams) -> Self {
        Self { params }
    }

    pub fn reset(&self, seed: u64) -> CartpoleEpisode {
        CartpoleEpisode {
            state: self.params.reset(seed),
            elapsed: 0,
        }
    }

    /// Advances the episode with `action` clipped to `[-1, 1]`.
    ///
    /// Panics if the state becomes non-finite; callers feed finite actions.
    pub fn step(&self, ep: &mut CartpoleEpisode, action: f64) -> CartpoleStep {
        let p = &self.params;
        let action = if action.is_nan() { 0.0 } else { action.clamp(-1.0, 1.0) };
        ep.state = p.integrate(&ep.state, p.force_scale * action, p.dt);
        assert!(ep.state.is_finite(), "cart-pole state diverged: {:?}", ep.state);
        ep.elapsed += 1;
        let obs = observe(&ep.state);
        let reward = p.reward_from(obs[0], obs[2]);
        let done = ep.state.x.abs() > p.x_limit || ep.elapsed >= p.episode_steps;
        CartpoleStep { reward, done }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env() -> Cartpole {
        Cartpole::default()
    }

    #[test]
    fn reset_is_deterministic_and_near_hanging() {
        let p = CartpoleParams::default();
        assert_eq!(p.reset(17), p.reset(17));
        assert_ne!(p.reset(17), p.reset(18));
        let zero = CartpoleParams {
            init_std: 0.0,
            ..CartpoleParams::default()
        };
        assert_eq!(zero.reset(5), CartpoleState::new(0.0, 0.0, PI, 0.0));
    }

    #[test]
    fn reset_theta_mean_within_monte_carlo_bound() {
        let p = CartpoleParams::default();
        let n = 10_000;
        let mean = (0..n).map(|s| p.reset(s).theta).sum::<f64>() / n as f64;
        let bound = 3.0 * p.init_std / (n as f64).sqrt();
        assert!((mean - PI).abs() < bound, "mean {mean}");
    }

    #[test]
    fn upright_equilibrium_is_exact_fixed_point() {
        let e = env();
        let mut ep = CartpoleEpisode::default();
        let out = e.step(&mut ep, 0.0);
        assert_eq!(ep.state, CartpoleState::default());
        assert_eq!(out.reward, 1.0);
        assert!(!out.done);
    }

    #[test]
    fn hanging_equilibrium_is_fixed_to_rounding() {
        // sin(pi) is 1.2e-16 in floating point, so the hanging point drifts
        // by a few ulps instead of staying bit-identical.
        let e = env();
        let mut ep = CartpoleEpisode {
            state: CartpoleState::new(0.0, 0.0, PI, 0.0),
            elapsed: 0,
        };
        let out = e.step(&mut ep, 0.0);
        assert_eq!(ep.state.theta, PI);
        assert!(ep.state.theta_dot.abs() < 1e-12);
        assert!(ep.state.x.abs() < 1e-12 && ep.state.x_dot.abs() < 1e-12);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn observation_examples() {
        assert_eq!(observe(&CartpoleState::default()), [0.0, 0.0, 1.0, 0.0, 0.0]);
        let hanging = observe(&CartpoleState::new(0.0, 0.0, PI, 0.0));
        assert_eq!(hanging[2], -1.0);
        assert!(hanging[3].abs() < 1e-15);
    }

    #[test]
    fn reward_bounds_and_maximum() {
        let p = CartpoleParams::default();
        assert_eq!(p.reward_from(0.0, 1.0), 1.0);
        assert_eq!(p.reward_from(2.4, 1.0), 0.0);
        assert_eq!(p.reward_from(-3.0, 1.0), 0.0);
        assert!(p.reward_from(0.1, 1.0) < 1.0);
        assert!(p.reward_from(0.0, 0.99) < 1.0);
    }

    #[test]
    fn terminates_off_track_and_at_episode_end() {
        let e = env();
        let mut ep = CartpoleEpisode {
            state: CartpoleState::new(2.39, 5.0, 0.0, 0.0),
            elapsed: 0,
        };
        assert!(e.step(&mut ep, 1.0).done);
        let short = Cartpole::new(CartpoleParams {
            episode_steps: 3,
            ..CartpoleParams::default()
        });
        let mut ep = short.reset(0);
        assert!(!short.step(&mut ep, 0.0).done);
        assert!(!short.step(&mut ep, 0.0).done);
        assert!(short.step(&mut ep, 0.0).done);
    }

    /// Classic RK4 on the same continuous dynamics, used as an oracle.
    fn rk4(p: &CartpoleParams, s: &CartpoleState, h: f64) -> CartpoleState {
        let deriv = |s: &CartpoleState| {
            let (xa, ta) = p.accelerations(s, 0.0);
            [s.x_dot, xa, s.theta_dot, ta]
        };
        let add = |s: &CartpoleState, k: &[f64; 4], c: f64| {
            CartpoleState::new(
                s.x + c * k[0],
                s.x_dot + c * k[1],
                s.theta + c * k[2],
                s.theta_dot + c * k[3],
            )
        };
        let k1 = deriv(s);
        let k2 = deriv(&add(s, &k1, h / 2.0));
        let k3 = deriv(&add(s, &k2, h / 2.0));
        let k4 = deriv(&add(s, &k3, h));
        let mut out = *s;
        let f = |i: usize| h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        out.x += f(0);
        out.x_dot += f(1);
        out.theta += f(2);
        out.theta_dot += f(3);
        out
    }

    #[test]
    fn unforced_energy_drift_matches_fine_rk4() {
        let p = CartpoleParams::default();
        let start = CartpoleState::new(0.0, 0.0, PI - 0.1, 0.0);
        let e0 = p.energy(&start);

        let mut euler = start;
        for _ in 0..1000 {
            euler = p.integrate(&euler, 0.0, p.dt);
        }
        let mut fine = start;
        for _ in 0..100_000 {
            fine = rk4(&p, &fine, p.dt / 100.0);
        }
        let drift_euler = p.energy(&euler) - e0;
        let drift_oracle = p.energy(&fine) - e0;
        assert!(drift_oracle.abs() < 1e-9);
        assert!(
            (drift_euler - drift_oracle).abs() <= 0.01 * e0.abs(),
            "euler drift {drift_euler}, oracle drift {drift_oracle}, e0 {e0}"
        );
    }

    #[test]
    fn validation_rejects_nonpositive() {
        let mut p = CartpoleParams::default();
        p.pole_length = 0.0;
        assert!(p.validate().is_err());
        let mut p = CartpoleParams::default();
        p.episode_steps = 0;
        assert!(p.validate().is_err());
        assert!(CartpoleParams::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn mirrored_trajectories_are_exact(x in -1.0f64..1.0, xd in -2.0f64..2.0,
                                           th in -4.0f64..4.0, thd in -5.0f64..5.0,
                                           actions in prop::collection::vec(-1.0f64..1.0, 1..50)) {
            let e = env();
            let mut a = CartpoleEpisode { state: CartpoleState::new(x, xd, th, thd), elapsed: 0 };
            let mut b = CartpoleEpisode { state: a.state.mirrored(), elapsed: 0 };
            for u in actions {
                let ra = e.step(&mut a, u);
                let rb = e.step(&mut b, -u);
                prop_assert_eq!(a.state.mirrored(), b.state);
                prop_assert_eq!(ra, rb);
            }
        }

        #[test]
        fn reward_in_unit_interval(x in -5.0f64..5.0, th in -10.0f64..10.0) {
            let p = CartpoleParams::default();
            let r = p.reward(&CartpoleState::new(x, 0.0, th, 0.0));
            prop_assert!((0.0..=1.0).contains(&r));
        }

        #[test]
        fn observation_on_unit_circle(th in -100.0f64..100.0) {
            let o = observe(&CartpoleState::new(0.0, 0.0, th, 0.0));
            prop_assert!((o[2] * o[2] + o[3] * o[3] - 1.0).abs() < 1e-12);
        }
    }
}
