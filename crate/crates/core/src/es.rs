//! Population-based REINFORCE with a Gaussian search distribution (the
//! OpenAI-ES / `estool` OpenES flavour).
//!
//! Each generation draws `population_size` candidates `mu + sigma * eps`
//! (antithetic pairs share `eps` with opposite signs), shapes their fitness
//! into centered ranks, estimates the search gradient
//! `g = sum(shaped_i * eps_i) / (N * sigma)` and moves `mu` uphill with an
//! Adam step.

use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::nn::ParamVector;
use crate::rng::{rng_from_seed, Rng, SeedScheme, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EsError {
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("expected {expected} fitness values, got {got}")]
    FitnessCount { expected: usize, got: usize },
    #[error("tell called without a pending population")]
    NoPopulation,
    #[error("evaluation of candidate {candidate} in generation {generation} failed: {message}")]
    Evaluation {
        generation: usize,
        candidate: usize,
        message: String,
    },
}

/// How evaluation seeds are shared across a generation's candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EpisodeSeeding {
    /// Every candidate gets its own episodes.
    #[default]
    PerCandidate,
    /// Both members of an antithetic pair see the same episodes.
    PerPair,
    /// All candidates of a generation see the same episodes.
    PerGeneration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsConfig {
    pub population_size: usize,
    pub rollouts_per_candidate: usize,
    pub sigma_init: f64,
    pub sigma_decay: f64,
    pub sigma_min: f64,
    pub learning_rate: f64,
    pub learning_rate_decay: f64,
    pub learning_rate_min: f64,
    /// Fitness penalty `weight_decay * mean(theta^2)` per candidate.
    pub weight_decay: f64,
    pub generations: usize,
    pub antithetic: bool,
    pub rank_shaping: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seeding: EpisodeSeeding,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            population_size: 64,
            rollouts_per_candidate: 4,
            sigma_init: 0.1,
            sigma_decay: 0.999,
            sigma_min: 0.01,
            learning_rate: 0.01,
            learning_rate_decay: 0.9999,
            learning_rate_min: 0.001,
            weight_decay: 0.005,
            generations: 1000,
            antithetic: true,
            rank_shaping: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seeding: EpisodeSeeding::PerCandidate,
        }
    }
}

impl EsConfig {
    /// Full-scale cart-pole setting.
    pub fn cartpole_full() -> Self {
        Self {
            population_size: 384,
            rollouts_per_candidate: 16,
            generations: 10_000,
            ..Self::default()
        }
    }

    /// Full-scale grid world setting.
    pub fn gridworld_full() -> Self {
        Self {
            population_size: 8,
            rollouts_per_candidate: 4,
            generations: 4000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EsError> {
        let bad = |m: String| Err(EsError::Config(m));
        if self.population_size < 2 {
            return bad(format!("population_size must be >= 2, got {}", self.population_size));
        }
        if self.antithetic && self.population_size % 2 != 0 {
            return bad(format!(
                "population_size must be even with antithetic sampling, got {}",
                self.population_size
            ));
        }
        if self.rollouts_per_candidate == 0 {
            return bad("rollouts_per_candidate must be >= 1".into());
        }
        for (name, v) in [
            ("sigma_init", self.sigma_init),
            ("learning_rate", self.learning_rate),
            ("sigma_decay", self.sigma_decay),
            ("learning_rate_decay", self.learning_rate_decay),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) || !(self.sigma_min >= 0.0) || !(self.learning_rate_min >= 0.0) {
            return bad("weight_decay, sigma_min and learning_rate_min must be non-negative".into());
        }
        Ok(())
    }
}

/// Centered ranks in `[-0.5, 0.5]`; ties share their average rank and NaN
/// ranks below everything.
pub fn centered_ranks(fitness: &[f64]) -> Vec<f64> {
    let n = fitness.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(fitness[a]).total_cmp(&key(fitness[b])));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && key(fitness[order[j + 1]]) == key(fitness[order[i]]) {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
        .into_iter()
        .map(|r| r / (n - 1) as f64 - 0.5)
        .collect()
}

fn standardized(fitness: &[f64]) -> Vec<f64> {
    let finite: Vec<f64> = fitness.iter().copied().filter(|v| v.is_finite()).collect();
    let worst = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let vals: Vec<f64> = fitness
        .iter()
        .map(|&v| if v.is_finite() { v } else { worst.min(0.0) })
        .collect();
    let (mean, std) = mean_std(&vals);
    vals.iter()
        .map(|v| if std > 0.0 { (v - mean) / std } else { 0.0 })
        .collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Optimizer state: search mean, step sizes, Adam moments and the noise of
/// the population currently out for evaluation.
#[derive(Debug, Clone)]
pub struct OpenEs {
    config: EsConfig,
    mu: Vec<f64>,
    sigma: f64,
    learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    rng: Rng,
    /// One row per independent noise draw (half the population when
    /// antithetic).
    noise: Vec<Vec<f64>>,
    frozen: Option<Vec<bool>>,
    generation: usize,
}

impl OpenEs {
    pub fn new(init: ParamVector, config: EsConfig, seed: u64) -> Result<Self, EsError> {
        config.validate()?;
        let n = init.len();
        Ok(Self {
            sigma: config.sigma_init,
            learning_rate: config.learning_rate,
            config,
            mu: init.0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            rng: rng_from_seed(seed),
            noise: Vec::new(),
            frozen: None,
            generation: 0,
        })
    }

    /// Coordinates marked `true` never move.
    pub fn with_frozen(mut self, frozen: Vec<bool>) -> Result<Self, EsError> {
        if frozen.len() != self.mu.len() {
            return Err(EsError::Config(format!(
                "freeze mask has length {}, parameters have {}",
                frozen.len(),
                self.mu.len()
            )));
        }
        self.frozen = Some(frozen);
        Ok(self)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn config(&self) -> &EsConfig {
        &self.config
    }

    fn draw(&mut self) -> Vec<f64> {
        let mut eps: Vec<f64> = (0..self.mu.len())
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        if let Some(frozen) = &self.frozen {
            for (e, &f) in eps.iter_mut().zip(frozen) {
                if f {
                    *e = 0.0;
                }
            }
        }
        eps
    }

    /// Signed noise of candidate `i`.
    fn epsilon(&self, i: usize) -> (&[f64], f64) {
        if self.config.antithetic {
            (&self.noise[i / 2], if i % 2 == 0 { 1.0 } else { -1.0 })
        } else {
            (&self.noise[i], 1.0)
        }
    }

    pub fn ask(&mut self) -> Vec<ParamVector> {
        let draws = if self.config.antithetic {
            self.config.population_size / 2
        } else {
            self.config.population_size
        };
        self.noise = (0..draws).map(|_| self.draw()).collect();
        (0..self.config.population_size)
            .map(|i| {
                let (eps, sign) = self.epsilon(i);
                ParamVector(
                    self.mu
                        .iter()
                        .zip(eps)
                        .map(|(m, e)| m + self.sigma * sign * e)
                        .collect(),
                )
            })
            .collect()
    }

    /// Fitness after the weight-decay penalty, then shaped.
    pub fn shape(&self, candidates_sq_mean: &[f64], fitness: &[f64]) -> Vec<f64> {
        let penalized: Vec<f64> = fitness
            .iter()
            .zip(candidates_sq_mean)
            .map(|(f, sq)| f - self.config.weight_decay * sq)
            .collect();
        if self.config.rank_shaping {
            centered_ranks(&penalized)
        } else {
            standardized(&penalized)
        }
    }

    /// Search-gradient estimate from shaped fitness values.
    pub fn gradient(&self, shaped: &[f64]) -> Vec<f64> {
        let n = self.config.population_size;
        let mut g = vec![0.0; self.mu.len()];
        for (i, &w) in shaped.iter().enumerate() {
            let (eps, sign) = self.epsilon(i);
            let w = w * sign;
            for (gj, e) in g.iter_mut().zip(eps) {
                *gj += w * e;
            }
        }
        let scale = 1.0 / (n as f64 * self.sigma);
        g.iter_mut().for_each(|v| *v *= scale);
        g
    }

    pub fn tell(&mut self, fitness: &[f64]) -> Result<(), EsError> {
        if self.noise.is_empty() {
            return Err(EsError::NoPopulation);
        }
        if fitness.len() != self.config.population_size {
            return Err(EsError::FitnessCount {
                expected: self.config.population_size,
                got: fitness.len(),
            });
        }
        let nan = fitness.iter().filter(|f| f.is_nan()).count();
        if nan > 0 {
            log::warn!("generation {}: {nan} NaN fitness values ranked worst", self.generation);
        }
        let sq: Vec<f64> = (0..self.config.population_size)
            .map(|i| {
                let (eps, sign) = self.epsilon(i);
                let n = self.mu.len().max(1) as f64;
                self.mu
                    .iter()
                    .zip(eps)
                    .map(|(m, e)| {
                        let x = m + self.sigma * sign * e;
                        x * x
                    })
                    .sum::<f64>()
                    / n
            })
            .collect();
        let shaped = self.shape(&sq, fitness);
        let grad = self.gradient(&shaped);

        let c = &self.config;
        self.t += 1;
        let t = self.t as i32;
        let step = self.learning_rate * (1.0 - c.adam_beta2.powi(t)).sqrt() / (1.0 - c.adam_beta1.powi(t));
        for j in 0..self.mu.len() {
            self.m[j] = c.adam_beta1 * self.m[j] + (1.0 - c.adam_beta1) * grad[j];
            self.v[j] = c.adam_beta2 * self.v[j] + (1.0 - c.adam_beta2) * grad[j] * grad[j];
            self.mu[j] += step * self.m[j] / (self.v[j].sqrt() + c.adam_epsilon);
        }
        self.sigma = (self.sigma * c.sigma_decay).max(c.sigma_min);
        self.learning_rate = (self.learning_rate * c.learning_rate_decay).max(c.learning_rate_min);
        self.noise.clear();
        self.generation += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub std: f64,
    pub evaluations: usize,
    pub seconds: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final search mean.
    pub mean: ParamVector,
    /// Highest-fitness candidate seen in any generation.
    pub best: ParamVector,
    pub best_fitness: f64,
    pub reports: Vec<GenerationReport>,
}

/// Per-generation hook: inspect progress, write checkpoints, stop early.
pub type Observer<'a> = dyn FnMut(&GenerationReport, &OpenEs) -> ControlFlow<()> + 'a;

/// Everything [`train`] needs besides the fitness function.
#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub config: EsConfig,
    pub run_seed: u64,
    pub execution: Execution,
    pub frozen: Option<Vec<bool>>,
}

impl TrainSpec {
    pub fn new(config: EsConfig, run_seed: u64) -> Self {
        Self {
            config,
            run_seed,
            execution: Execution::default(),
            frozen: None,
        }
    }
}

/// Ask/evaluate/tell loop. `fitness(params, seed)` must be a pure function
/// of its arguments; candidate seeds come from `(run_seed, generation,
/// candidate)` so results do not depend on evaluation order or threads.
pub fn train<F>(
    fitness: F,
    init: ParamVector,
    spec: &TrainSpec,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome, EsError>
where
    F: Fn(&[f64], u64) -> f64 + Sync + Send,
{
    let scheme = SeedScheme::new(spec.run_seed);
    let mut es = OpenEs::new(init.clone(), spec.config.clone(), scheme.stream(Stream::Optimizer))?;
    if let Some(mask) = &spec.frozen {
        es = es.with_frozen(mask.clone())?;
    }
    let mut best = init;
    let mut best_fitness = f64::NEG_INFINITY;
    let mut reports = Vec::with_capacity(spec.config.generations);

    for generation in 0..spec.config.generations {
        let started = Instant::now();
        let candidates = es.ask();
        let seeding = spec.config.seeding;
        let results = map_indexed(candidates.len(), spec.execution, |i| {
            let key = match seeding {
                EpisodeSeeding::PerCandidate => i,
                EpisodeSeeding::PerPair => i / 2,
                EpisodeSeeding::PerGeneration => 0,
            };
            let seed = scheme.candidate(generation as u64, key as u64);
            catch_unwind(AssertUnwindSafe(|| fitness(candidates[i].as_slice(), seed)))
        });
        let mut values = Vec::with_capacity(results.len());
        for (candidate, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => values.push(v),
                Err(payload) => {
                    let message = payload
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    return Err(EsError::Evaluation {
                        generation,
                        candidate,
                        message,
                    });
                }
            }
        }

        let finite: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        let (mean, std) = mean_std(&finite);
        let (arg_best, gen_best) = values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if gen_best > best_fitness {
            best_fitness = gen_best;
            best = candidates[arg_best].clone();
        }
        es.tell(&values)?;

        let report = GenerationReport {
            generation,
            best: gen_best,
            mean,
            std,
            evaluations: spec.config.population_size * spec.config.rollouts_per_candidate,
            seconds: started.elapsed().as_secs_f64(),
            best_so_far: best_fitness,
        };
        let flow = observer(&report, &es);
        reports.push(report);
        if flow.is_break() {
            break;
        }
    }

    Ok(TrainOutcome {
        mean: ParamVector(es.mean().to_vec()),
        best,
        best_fitness,
        reports,
    })
}

/// Observer that does nothing.
pub fn no_observer() -> impl FnMut(&GenerationReport, &OpenEs) -> ControlFlow<()> {
    |_, _| ControlFlow::Continue(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn es(n: usize, config: EsConfig) -> OpenEs {
        OpenEs::new(ParamVector(vec![0.5; n]), config, 3).unwrap()
    }

    #[test]
    fn ranks_example() {
        assert_eq!(centered_ranks(&[3.0, 1.0, 2.0]), vec![0.5, -0.5, 0.0]);
        assert_eq!(centered_ranks(&[2.0, 2.0, 2.0]), vec![0.0, 0.0, 0.0]);
        let r = centered_ranks(&[f64::NAN, 0.0, -1e300]);
        assert_eq!(r[0], -0.5);
    }

    #[test]
    fn antithetic_pairs_mirror_the_mean() {
        let mut opt = es(7, EsConfig::default());
        let pop = opt.ask();
        for k in 0..pop.len() / 2 {
            for j in 0..7 {
                let a = pop[2 * k].0[j] - 0.5;
                let b = pop[2 * k + 1].0[j] - 0.5;
                assert!((a + b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_sigma_like_candidates_equal_mean() {
        // sigma must be positive for the gradient; a tiny sigma shows the limit.
        let cfg = EsConfig {
            sigma_init: 1e-300,
            ..EsConfig::default()
        };
        let mut opt = es(4, cfg);
        for c in opt.ask() {
            assert_eq!(c.0, vec![0.5; 4]);
        }
    }

    #[test]
    fn candidate_mean_tracks_mu() {
        let cfg = EsConfig {
            population_size: 4000,
            ..EsConfig::default()
        };
        let mut opt = es(3, cfg);
        let pop = opt.ask();
        for j in 0..3 {
            let m: f64 = pop.iter().map(|c| c.0[j]).sum::<f64>() / pop.len() as f64;
            assert!((m - 0.5).abs() < 1e-12, "antithetic mean is exact");
        }
        let cfg = EsConfig {
            population_size: 4000,
            antithetic: false,
            ..EsConfig::default()
        };
        let mut opt = es(3, cfg);
        let pop = opt.ask();
        for j in 0..3 {
            let m: f64 = pop.iter().map(|c| c.0[j]).sum::<f64>() / pop.len() as f64;
            // 4 standard errors of the sample mean.
            assert!((m - 0.5).abs() < 4.0 * 0.1 / (4000f64).sqrt());
        }
    }

    #[test]
    fn equal_fitness_leaves_mu_unchanged() {
        // The weight penalty would otherwise break the tie.
        let cfg = EsConfig {
            weight_decay: 0.0,
            ..EsConfig::default()
        };
        let mut opt = es(5, cfg);
        opt.ask();
        opt.tell(&vec![1.0; 64]).unwrap();
        assert_eq!(opt.mean(), &[0.5; 5]);
    }

    #[test]
    fn tell_errors() {
        let mut opt = es(5, EsConfig::default());
        assert_eq!(opt.tell(&[0.0; 64]), Err(EsError::NoPopulation));
        opt.ask();
        assert!(matches!(opt.tell(&[0.0; 3]), Err(EsError::FitnessCount { .. })));
    }

    #[test]
    fn config_validation() {
        let odd = EsConfig {
            population_size: 7,
            ..EsConfig::default()
        };
        assert!(odd.validate().is_err());
        let no_lr = EsConfig {
            learning_rate: 0.0,
            ..EsConfig::default()
        };
        assert!(no_lr.validate().is_err());
        assert!(EsConfig::gridworld_full().validate().is_ok());
        assert!(EsConfig::cartpole_full().validate().is_ok());
    }

    #[test]
    fn frozen_coordinates_do_not_move() {
        let cfg = EsConfig {
            population_size: 16,
            generations: 20,
            ..EsConfig::default()
        };
        let mut spec = TrainSpec::new(cfg, 1);
        spec.frozen = Some(vec![true, false, true]);
        let out = train(
            |p: &[f64], _| -p.iter().map(|v| (v - 2.0).powi(2)).sum::<f64>(),
            ParamVector(vec![0.0; 3]),
            &spec,
            &mut no_observer(),
        )
        .unwrap();
        assert_eq!(out.mean.0[0], 0.0);
        assert_eq!(out.mean.0[2], 0.0);
        assert!(out.mean.0[1] > 0.0);
    }

    #[test]
    fn zero_generations_returns_initial_mean() {
        let spec = TrainSpec::new(
            EsConfig {
                generations: 0,
                ..EsConfig::default()
            },
            0,
        );
        let init = ParamVector(vec![1.0, 2.0]);
        let out = train(|_: &[f64], _| 0.0, init.clone(), &spec, &mut no_observer()).unwrap();
        assert_eq!(out.mean, init);
        assert!(out.reports.is_empty());
    }

    #[test]
    fn evaluation_panic_aborts_with_diagnostic() {
        let spec = TrainSpec::new(
            EsConfig {
                generations: 3,
                population_size: 4,
                ..EsConfig::default()
            },
            0,
        );
        let err = train(
            |p: &[f64], _| {
                if p[0] > 10.0 {
                    0.0
                } else {
                    panic!("boom")
                }
            },
            ParamVector(vec![0.0]),
            &spec,
            &mut no_observer(),
        )
        .unwrap_err();
        assert!(matches!(err, EsError::Evaluation { generation: 0, .. }));
    }

    #[test]
    fn nan_fitness_ranks_worst_without_aborting() {
        let spec = TrainSpec::new(
            EsConfig {
                generations: 30,
                population_size: 8,
                ..EsConfig::default()
            },
            5,
        );
        let out = train(
            |p: &[f64], _| if p[0] < 0.0 { f64::NAN } else { p[0] },
            ParamVector(vec![0.0]),
            &spec,
            &mut no_observer(),
        )
        .unwrap();
        assert!(out.mean.0[0] > 0.0);
    }

    #[test]
    fn sphere_converges() {
        let target: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) / 5.0).collect();
        let cfg = EsConfig {
            population_size: 32,
            sigma_init: 0.1,
            learning_rate: 0.03,
            generations: 500,
            ..EsConfig::default()
        };
        let sphere = |p: &[f64], _: u64| -> f64 {
            -p.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let out = train(sphere, ParamVector::zeros(10), &TrainSpec::new(cfg, 11), &mut no_observer()).unwrap();
        let at_mean = sphere(out.mean.as_slice(), 0);
        assert!(at_mean >= -1e-2, "fitness of the mean {at_mean}");
    }

    #[test]
    fn reports_are_reproducible_and_thread_independent() {
        let cfg = EsConfig {
            population_size: 16,
            generations: 15,
            ..EsConfig::default()
        };
        let f = |p: &[f64], seed: u64| -> f64 {
            let mut rng = rng_from_seed(seed);
            let noise: f64 = StandardNormal.sample(&mut rng);
            -p.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() + 0.01 * noise
        };
        let run = |exec| {
            let mut spec = TrainSpec::new(cfg.clone(), 77);
            spec.execution = exec;
            let out = train(f, ParamVector::zeros(6), &spec, &mut no_observer()).unwrap();
            let strip: Vec<_> = out
                .reports
                .iter()
                .map(|r| (r.best.to_bits(), r.mean.to_bits(), r.std.to_bits(), r.best_so_far.to_bits()))
                .collect();
            (strip, out.mean)
        };
        let a = run(Execution::Sequential);
        let b = run(Execution::Parallel);
        let c = crate::exec::with_threads(3, || run(Execution::Parallel));
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn early_stop_through_observer() {
        let spec = TrainSpec::new(EsConfig::default(), 0);
        let mut obs = |r: &GenerationReport, _: &OpenEs| {
            if r.generation == 4 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        };
        let out = train(|_: &[f64], _| 1.0, ParamVector::zeros(2), &spec, &mut obs).unwrap();
        assert_eq!(out.reports.len(), 5);
    }

    proptest! {
        #[test]
        fn shaping_invariant_to_monotone_transforms(vals in prop::collection::vec(-100.0f64..100.0, 2..40)) {
            let a = centered_ranks(&vals);
            let b = centered_ranks(&vals.iter().map(|v| (v / 10.0).exp() * 3.0 + 1.0).collect::<Vec<_>>());
            prop_assert_eq!(a.clone(), b);
            prop_assert!(a.iter().all(|r| (-0.5..=0.5).contains(r)));
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
        }

        #[test]
        fn pair_swap_negates_pair_contribution(f in prop::collection::vec(-5.0f64..5.0, 8), pair in 0usize..4) {
            let cfg = EsConfig { population_size: 8, ..EsConfig::default() };
            let mut opt = es(4, cfg);
            opt.ask();
            let mut shaped: Vec<f64> = f.clone();
            let base = opt.gradient(&shaped);
            shaped.swap(2 * pair, 2 * pair + 1);
            let swapped = opt.gradient(&shaped);
            // Contribution of the pair is (s_plus - s_minus) * eps / (N sigma);
            // swapping flips its sign, so base - swapped = 2 * contribution.
            let (eps, _) = opt.epsilon(2 * pair);
            let scale = 1.0 / (8.0 * opt.sigma());
            for j in 0..4 {
                let contrib = (f[2 * pair] - f[2 * pair + 1]) * eps[j] * scale;
                prop_assert!((base[j] - swapped[j] - 2.0 * contrib).abs() < 1e-9);
            }
        }

        #[test]
        fn evaluation_order_does_not_matter(perm_seed in 0u64..1000) {
            let cfg = EsConfig { population_size: 10, ..EsConfig::default() };
            let mut a = es(3, cfg.clone());
            let mut b = es(3, cfg);
            let pop = a.ask();
            b.ask();
            let fitness: Vec<f64> = pop.iter().map(|c| -c.0.iter().map(|v| v * v).sum::<f64>()).collect();
            // Evaluate in a permuted order, then restore candidate order.
            let mut order: Vec<usize> = (0..10).collect();
            let mut rng = rng_from_seed(perm_seed);
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let mut reordered = vec![0.0; 10];
            for &i in &order {
                reordered[i] = -pop[i].0.iter().map(|v| v * v).sum::<f64>();
            }
            a.tell(&fitness).unwrap();
            b.tell(&reordered).unwrap();
            prop_assert_eq!(a.mean(), b.mean());
        }
    }
}
