//! Random linear "world models" of the balancing cart-pole.
//!
//! Near the upright equilibrium the pole obeys `thdd = (g/L) th + u/(M L)`.
//! A world model here is any 2x2 coefficient matrix `[[a, b], [c, d]]` for
//! `(th, thd)`. Feedback `u = u1 th + u2 thd` found by random search to
//! stabilize a random model is then tried on the true linearization and on
//! the nonlinear simulator.

use std::io::Write;

use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cartpole::{CartpoleParams, CartpoleState};
use crate::exec::{map_indexed, Execution};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSystem2x2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl LinearSystem2x2 {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeedbackGains {
    pub u1: f64,
    pub u2: f64,
}

/// Physical constants of the balance problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalLinearization {
    pub g: f64,
    pub length: f64,
    pub cart_mass: f64,
}

impl Default for PhysicalLinearization {
    fn default() -> Self {
        Self {
            g: 9.8,
            length: 1.0,
            cart_mass: 1.0,
        }
    }
}

impl PhysicalLinearization {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("g", self.g), ("length", self.length), ("cart_mass", self.cart_mass)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be strictly positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Open-loop pole dynamics `[[0, 1], [g/L, 0]]`.
    pub fn open_loop(&self) -> LinearSystem2x2 {
        LinearSystem2x2::new(0.0, 1.0, self.g / self.length, 0.0)
    }

    /// The true closed loop under feedback force `u1 th + u2 thd`.
    pub fn closed_loop(&self, u: FeedbackGains) -> LinearSystem2x2 {
        let ml = self.cart_mass * self.length;
        LinearSystem2x2::new(0.0, 1.0, self.g / self.length + u.u1 / ml, u.u2 / ml)
    }
}

/// Both eigenvalues strictly in the left half-plane. Marginal cases fail.
pub fn is_hurwitz(sys: &LinearSystem2x2) -> bool {
    sys.trace() < 0.0 && sys.det() > 0.0
}

pub fn closed_loop(sys: &LinearSystem2x2, u: FeedbackGains) -> LinearSystem2x2 {
    LinearSystem2x2::new(sys.a, sys.b, sys.c + u.u1, sys.d + u.u2)
}

/// Draws gains from `N(0, gain_scale^2)` until the closed loop is Hurwitz.
/// Returns the gains and the number of draws used.
pub fn find_stabilizing_feedback(
    sys: &LinearSystem2x2,
    max_trials: usize,
    gain_scale: f64,
    seed: u64,
) -> Option<(FeedbackGains, usize)> {
    let mut rng = rng_from_seed(seed);
    for trial in 1..=max_trials {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let u = FeedbackGains {
            u1: gain_scale * z1,
            u2: gain_scale * z2,
        };
        if is_hurwitz(&closed_loop(sys, u)) {
            return Some((u, trial));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferSample {
    pub system: LinearSystem2x2,
    pub gains: Option<FeedbackGains>,
    pub random_stable: bool,
    pub true_stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub samples: Vec<TransferSample>,
    /// Samples for which random search found stabilizing gains.
    pub found: usize,
    pub transferred: usize,
    /// `transferred / found`; 0 when nothing was found.
    pub success_rate: f64,
}

impl TransferReport {
    /// `a,b,c,d,u1,u2,random_stable,true_stable`; gains are empty when the
    /// search failed.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a", "b", "c", "d", "u1", "u2", "random_stable", "true_stable"])?;
        for s in &self.samples {
            let (u1, u2) = s
                .gains
                .map(|g| (g.u1.to_string(), g.u2.to_string()))
                .unwrap_or_default();
            w.write_record([
                s.system.a.to_string(),
                s.system.b.to_string(),
                s.system.c.to_string(),
                s.system.d.to_string(),
                u1,
                u2,
                s.random_stable.to_string(),
                s.true_stable.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferConfig {
    pub samples: usize,
    pub gain_scale: f64,
    pub max_trials: usize,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            gain_scale: 5.0,
            max_trials: 1000,
            seed: 0,
        }
    }
}

/// Sample `i` uses `derive_seed(seed, [i, 0])` for the random model and
/// `derive_seed(seed, [i, 1])` for the gain search.
pub fn transfer_sample(i: usize, phys: &PhysicalLinearization, cfg: &TransferConfig) -> TransferSample {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[i as u64, 0]));
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let system = LinearSystem2x2::new(draw(), draw(), draw(), draw());
    let search_seed = derive_seed(cfg.seed, &[i as u64, 1]);
    match find_stabilizing_feedback(&system, cfg.max_trials, cfg.gain_scale, search_seed) {
        Some((u, _)) => TransferSample {
            system,
            gains: Some(u),
            random_stable: true,
            true_stable: is_hurwitz(&phys.closed_loop(u)),
        },
        None => TransferSample {
            system,
            gains: None,
            random_stable: false,
            true_stable: false,
        },
    }
}

pub fn transfer_experiment(
    phys: &PhysicalLinearization,
    cfg: &TransferConfig,
    exec: Execution,
) -> TransferReport {
    let samples = map_indexed(cfg.samples, exec, |i| transfer_sample(i, phys, cfg));
    let found = samples.iter().filter(|s| s.random_stable).count();
    let transferred = samples.iter().filter(|s| s.true_stable).count();
    TransferReport {
        success_rate: if found == 0 { 0.0 } else { transferred as f64 / found as f64 },
        samples,
        found,
        transferred,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceConfig {
    /// Pole mass as a fraction of the cart mass. The linearization holds in
    /// the light-pole limit; the exact upright stiffness is `(M + m) g / L`,
    /// so heavier poles reject gains with a thin margin.
    pub pole_mass_ratio: f64,
    pub dt: f64,
    pub duration: f64,
    pub tolerance: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            pole_mass_ratio: 1e-3,
            dt: 1e-3,
            // Weakly damped gains take minutes to settle below tolerance.
            duration: 300.0,
            tolerance: 1e-3,
        }
    }
}

/// Integrates the nonlinear cart-pole from `(theta0, theta_dot0)` near
/// upright under force `u1 th + u2 thd`. Converged iff both are below the
/// tolerance at the end.
pub fn simulate_balance(
    u: FeedbackGains,
    phys: &PhysicalLinearization,
    theta0: f64,
    theta_dot0: f64,
    cfg: &BalanceConfig,
) -> bool {
    let params = CartpoleParams {
        cart_mass: phys.cart_mass,
        pole_mass: phys.cart_mass * cfg.pole_mass_ratio,
        pole_length: phys.length,
        gravity: phys.g,
        ..CartpoleParams::default()
    };
    let mut s = CartpoleState::new(0.0, 0.0, theta0, theta_dot0);
    let steps = (cfg.duration / cfg.dt).round() as usize;
    for _ in 0..steps {
        let force = u.u1 * s.theta + u.u2 * s.theta_dot;
        s = params.integrate(&s, force, cfg.dt);
        if !s.is_finite() || s.theta.abs() > 10.0 {
            return false;
        }
    }
    s.theta.abs() < cfg.tolerance && s.theta_dot.abs() < cfg.tolerance
}

/// Gains sampled until they stabilize the true linearization.
pub fn sample_true_stabilizing(phys: &PhysicalLinearization, gain_scale: f64, seed: u64) -> FeedbackGains {
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, gain_scale).expect("finite scale");
    loop {
        let u = FeedbackGains {
            u1: normal.sample(&mut rng),
            u2: normal.sample(&mut rng),
        };
        if is_hurwitz(&phys.closed_loop(u)) {
            return u;
        }
    }
}
