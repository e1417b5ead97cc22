//! Subcommand implementations. Each command writes into its own run
//! directory under `out`; directories are never reused unless resuming.

use std::fs;
use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use obsdrop::analysis::{aggregate_sweep, direction_correlation, CorrelationConfig, SUMMARY_FILE};
use obsdrop::dream::{
    cartpole_transfer, collect_transitions, dream_train, fit_supervised_wm, CartpoleDream, CartpoleDreamWorld,
    Snapshot, SupervisedConfig, TrainingTrace,
};
use obsdrop::es::{train, EsConfig, GenerationReport, OpenEs, TrainSpec};
use obsdrop::gridworld::GridAction;
use obsdrop::nn::{Architecture, ParamVector};
use obsdrop::render;
use obsdrop::rng::{derive_seed, SeedScheme, Stream};
use obsdrop::stability::{simulate_balance, transfer_experiment, BalanceConfig};
use obsdrop::tasks::{cartpole_model, cartpole_policy, GridModel, Task};
use obsdrop::Execution;

use crate::config::{Config, ConfigError, EnvKind};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    /// 1 for anything wrong with the inputs, 2 for faults while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Checkpoint { .. } | RunError::Usage(_) => 1,
            RunError::Io { .. } | RunError::Runtime(_) => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Everything a command needs besides its positional arguments.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Config,
    pub out: PathBuf,
    pub resume: bool,
    pub execution: Execution,
}

impl Context {
    pub fn new(config: Config, resume: bool) -> Self {
        Self {
            out: PathBuf::from(&config.out),
            config,
            resume,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub command: String,
    pub environment: String,
    pub peek_probability: Option<f64>,
    pub architecture: Option<String>,
    pub param_count: Option<usize>,
    pub run_seed: u64,
    pub tool_version: String,
    pub created_unix: u64,
    pub config: Config,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &Config, seed: u64) -> Self {
        Self {
            experiment: cfg.name.clone(),
            command: command.into(),
            environment: cfg.env.name().into(),
            peek_probability: None,
            architecture: None,
            param_count: None,
            run_seed: seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            config: cfg.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&dir.join(MANIFEST_FILE), &(text + "\n"))
    }

    pub fn read(dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";

/// `parent/name` if unused; with `resume` an existing directory is reused,
/// otherwise the first free `name-2`, `name-3`, ... is taken.
pub fn run_dir(parent: &Path, name: &str, resume: bool) -> Result<PathBuf, RunError> {
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let mut dir = parent.join(name);
    if !resume {
        let mut k = 2;
        while dir.exists() {
            dir = parent.join(format!("{name}-{k}"));
            k += 1;
        }
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn fmt_p(p: f64) -> String {
    format!("{p}")
}

/// Loads a parameter checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(Architecture, ParamVector), RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    ParamVector::from_checkpoint(&text).map_err(|e| RunError::Checkpoint {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn mismatch(path: &Path, expected: &Architecture, got: &Architecture) -> RunError {
    RunError::Checkpoint {
        path: path.display().to_string(),
        message: format!("architecture `{got}` does not match the configured `{expected}`"),
    }
}

struct CsvFile {
    writer: csv::Writer<fs::File>,
    path: PathBuf,
}

impl CsvFile {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self, RunError> {
        let mut writer = csv::Writer::from_path(&path).map_err(|e| RunError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        writer.write_record(header).map_err(|e| RunError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        Ok(Self { writer, path })
    }

    fn row(&mut self, fields: &[String]) -> Result<(), RunError> {
        self.writer.write_record(fields).map_err(|e| RunError::Io {
            path: self.path.display().to_string(),
            source: e.into(),
        })
    }

    fn finish(mut self) -> Result<(), RunError> {
        self.writer.flush().map_err(io_err(&self.path))
    }
}

fn summary_rows(p: f64, run_id: &str, rows: &[(&str, f64)]) -> String {
    let mut out = String::from("p,run_id,metric,value\n");
    for (metric, value) in rows {
        out.push_str(&format!("{},{run_id},{metric},{value}\n", fmt_p(p)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    Completed,
    Skipped,
}

/// One joint training run in its own directory.
pub fn train_run(ctx: &Context, parent: &Path, p: f64, seed: u64) -> Result<(PathBuf, TrainStatus), RunError> {
    let cfg = &ctx.config;
    let name = format!("train-{}-p{}-seed{seed}", cfg.env.name(), fmt_p(p));
    let dir = run_dir(parent, &name, ctx.resume)?;
    if ctx.resume && dir.join(SUMMARY_FILE).exists() {
        info!("{}: already complete, skipping", dir.display());
        return Ok((dir, TrainStatus::Skipped));
    }
    match cfg.env {
        EnvKind::Cartpole => train_task(ctx, &cfg.cartpole_task(p), p, seed, &dir)?,
        EnvKind::Gridworld => train_task(ctx, &cfg.grid_task(p), p, seed, &dir)?,
    }
    Ok((dir, TrainStatus::Completed))
}

fn train_task<T: Task>(ctx: &Context, task: &T, p: f64, seed: u64, dir: &Path) -> Result<(), RunError> {
    let cfg = &ctx.config;
    let arch = task.architecture();
    let mut manifest = RunManifest::new("train", cfg, seed);
    manifest.peek_probability = Some(p);
    manifest.architecture = Some(arch.to_string());
    manifest.param_count = Some(arch.param_count());
    manifest.write(dir)?;
    write_file(&dir.join("config.toml"), &cfg.to_toml())?;

    let es_cfg: EsConfig = cfg.es.es_config();
    let holdout = SeedScheme::new(seed).stream(Stream::Holdout);
    let mut metrics = CsvFile::create(
        dir.join(METRICS_FILE),
        &["generation", "best", "mean", "std", "evaluations", "best_so_far"],
    )?;
    let mut evals = CsvFile::create(dir.join("evals.csv"), &["generation", "mean_score", "stderr", "peek_fraction"])?;
    let mut timing = CsvFile::create(dir.join("timing.csv"), &["generation", "seconds"])?;
    let mut trace = TrainingTrace::default();
    trace.record(0, &vec![0.0; arch.param_count()], es_cfg.sigma_init);
    let mut failure: Option<RunError> = None;
    let train_cfg = cfg.train.clone();

    let mut observer = |r: &GenerationReport, es: &OpenEs| {
        let g = r.generation + 1;
        let mut step = || -> Result<ControlFlow<()>, RunError> {
            metrics.row(&[
                r.generation.to_string(),
                r.best.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.evaluations.to_string(),
                r.best_so_far.to_string(),
            ])?;
            timing.row(&[r.generation.to_string(), format!("{:.6}", r.seconds)])?;
            if train_cfg.snapshot_every > 0 && g % train_cfg.snapshot_every == 0 {
                trace.record(g, es.mean(), es.sigma());
            }
            if train_cfg.checkpoint_every > 0 && g % train_cfg.checkpoint_every == 0 {
                let text = ParamVector(es.mean().to_vec()).to_checkpoint(&arch).expect("sizes match");
                write_file(&dir.join(format!("checkpoint-g{g}.txt")), &text)?;
            }
            if train_cfg.eval_every > 0 && g % train_cfg.eval_every == 0 {
                let ev = task.evaluate(es.mean(), holdout, train_cfg.eval_episodes, ctx.execution);
                evals.row(&[
                    r.generation.to_string(),
                    ev.mean_score.to_string(),
                    ev.stderr.to_string(),
                    ev.peek_fraction.to_string(),
                ])?;
                info!("gen {g}: best {:.3} mean {:.3} eval {:.3}", r.best, r.mean, ev.mean_score);
                if train_cfg.target_score > 0.0 && ev.mean_score >= train_cfg.target_score {
                    return Ok(ControlFlow::Break(()));
                }
            }
            Ok(ControlFlow::Continue(()))
        };
        match step() {
            Ok(flow) => flow,
            Err(e) => {
                failure = Some(e);
                ControlFlow::Break(())
            }
        }
    };
    let spec = TrainSpec {
        execution: ctx.execution,
        ..TrainSpec::new(es_cfg, seed)
    };
    let init = ParamVector::zeros(arch.param_count());
    let outcome = train(|x, s| task.fitness(x, s), init, &spec, &mut observer)
        .map_err(|e| RunError::Runtime(e.to_string()))?;
    if let Some(e) = failure {
        return Err(e);
    }
    metrics.finish()?;
    evals.finish()?;
    timing.finish()?;

    let text = |v: &ParamVector| v.to_checkpoint(&arch).expect("sizes match");
    write_file(&dir.join(CHECKPOINT_FILE), &text(&outcome.mean))?;
    write_file(&dir.join("best.txt"), &text(&outcome.best))?;
    write_file(&dir.join("snapshots.txt"), &snapshots_text(&trace))?;
    let ev = task.evaluate(outcome.mean.as_slice(), holdout, cfg.train.final_eval_episodes, ctx.execution);
    let run_id = dir.file_name().map_or(String::new(), |n| n.to_string_lossy().into_owned());
    write_file(
        &dir.join(SUMMARY_FILE),
        &summary_rows(
            p,
            &run_id,
            &[
                ("final_score", ev.mean_score),
                ("final_stderr", ev.stderr),
                ("peek_fraction", ev.peek_fraction),
                ("best_fitness", outcome.best_fitness),
                ("generations", outcome.reports.len() as f64),
            ],
        ),
    )?;
    println!(
        "{}: score {:.3} ± {:.3} after {} generations",
        dir.display(),
        ev.mean_score,
        ev.stderr,
        outcome.reports.len()
    );
    Ok(())
}

/// `generation sigma v1 v2 ...`, one snapshot per line.
fn snapshots_text(trace: &TrainingTrace) -> String {
    let mut out = String::new();
    for s in &trace.snapshots {
        let vals: Vec<String> = s.mean.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{} {} {}\n", s.generation, s.sigma, vals.join(" ")));
    }
    out
}

pub fn read_snapshots(path: &Path) -> Result<TrainingTrace, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize| RunError::Checkpoint {
        path: path.display().to_string(),
        message: format!("malformed snapshot on line {}", line + 1),
    };
    let mut trace = TrainingTrace::default();
    for (i, line) in text.lines().enumerate() {
        let mut f = line.split_whitespace();
        let generation = f.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(i))?;
        let sigma = f.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(i))?;
        let mean = f.map(|t| t.parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad(i))?;
        trace.snapshots.push(Snapshot { generation, mean, sigma });
    }
    Ok(trace)
}

pub fn cmd_train(ctx: &Context) -> Result<PathBuf, RunError> {
    let cfg = &ctx.config;
    train_run(ctx, &ctx.out, cfg.dropout.peek_probability, cfg.seed).map(|(d, _)| d)
}

pub fn cmd_sweep(ctx: &Context) -> Result<PathBuf, RunError> {
    let cfg = &ctx.config;
    if cfg.sweep.peek_probabilities.is_empty() || cfg.sweep.seeds.is_empty() {
        return Err(RunError::Usage("sweep needs at least one peek probability and one seed".into()));
    }
    let dir = run_dir(&ctx.out, &format!("sweep-{}-{}", cfg.env.name(), cfg.name), ctx.resume)?;
    let mut manifest = RunManifest::new("sweep", cfg, cfg.seed);
    manifest.architecture = Some(match cfg.env {
        EnvKind::Cartpole => cfg.cartpole_task(1.0).architecture().to_string(),
        EnvKind::Gridworld => cfg.grid_task(1.0).architecture().to_string(),
    });
    manifest.write(&dir)?;
    let runs_parent = dir.join("runs");
    let mut completed = Vec::new();
    let mut failures = String::from("p,seed,error\n");
    for &p in &cfg.sweep.peek_probabilities {
        for &seed in &cfg.sweep.seeds {
            // Each run continues where a previous sweep left off.
            let sub = Context {
                resume: true,
                ..ctx.clone()
            };
            match train_run(&sub, &runs_parent, p, seed) {
                Ok((d, _)) => completed.push(d),
                Err(e) => {
                    warn!("run p={p} seed={seed} failed: {e}");
                    failures.push_str(&format!("{},{seed},\"{}\"\n", fmt_p(p), e.to_string().replace('"', "'")));
                }
            }
        }
    }
    write_file(&dir.join("failures.csv"), &failures)?;
    let table = aggregate_sweep(&completed).map_err(|e| RunError::Runtime(e.to_string()))?;
    write_file(&dir.join("rows.csv"), &table.rows_csv())?;
    write_file(&dir.join("aggregate.csv"), &table.aggregate_csv())?;
    let scores: Vec<_> = table.aggregate().into_iter().filter(|a| a.metric == "final_score").collect();
    let svg = render::line_plot(
        &render::Series::from_aggregates(&scores),
        &format!("{} {}", cfg.env.name(), cfg.name),
        "peek probability",
        "score",
    );
    write_file(&dir.join("sweep.svg"), &svg)?;
    println!("{}: {} runs, {} failed", dir.display(), completed.len(), failures.lines().count() - 1);
    Ok(dir)
}

/// A world model to dream in: where it came from and its parameters.
struct DreamSource {
    id: String,
    p: Option<f64>,
    params: Vec<f64>,
}

fn dream_source(ctx: &Context, path: &Path) -> Result<DreamSource, RunError> {
    let cfg = &ctx.config;
    let (arch, params) = load_checkpoint(path)?;
    let model = cartpole_model(cfg.cartpole.model_hidden);
    let joint = cfg.cartpole_task(1.0).architecture();
    let model_params = if arch == joint {
        params.0[cfg.cartpole_task(1.0).policy_param_count()..].to_vec()
    } else if arch == Architecture::Mlp(model.clone()) {
        params.0
    } else {
        return Err(mismatch(path, &joint, &arch));
    };
    let parent = path.parent().unwrap_or(Path::new("."));
    let manifest = RunManifest::read(parent);
    let id = parent
        .file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(DreamSource {
        id,
        p: manifest.and_then(|m| m.peek_probability),
        params: model_params,
    })
}

/// Trains a policy inside each world model and deploys it for real.
pub fn cmd_dream(ctx: &Context, checkpoints: &[PathBuf], baseline_from: Option<&Path>) -> Result<PathBuf, RunError> {
    let cfg = &ctx.config;
    if cfg.env != EnvKind::Cartpole {
        return Err(ConfigError::Invalid {
            key: "env".into(),
            message: "dreaming is implemented for cartpole".into(),
        }
        .into());
    }
    if checkpoints.is_empty() && baseline_from.is_none() {
        return Err(RunError::Usage("dream needs a world-model checkpoint or --baseline-from".into()));
    }
    // Validate everything before any compute.
    let mut sources = checkpoints
        .iter()
        .map(|c| dream_source(ctx, c))
        .collect::<Result<Vec<_>, _>>()?;
    let baseline_trace = baseline_from
        .map(|d| read_snapshots(&d.join("snapshots.txt")))
        .transpose()?;

    let dir = run_dir(&ctx.out, &format!("dream-{}-seed{}", cfg.name, cfg.seed), ctx.resume)?;
    RunManifest::new("dream", cfg, cfg.seed).write(&dir)?;
    let env = cfg.cartpole_env();
    let policy = cartpole_policy(cfg.cartpole.policy_hidden);
    let mut model_arch = cartpole_model(cfg.cartpole.model_hidden);

    if let Some(trace) = baseline_trace {
        let data = collect_transitions(
            &env,
            &policy,
            &trace,
            cfg.dream.baseline_transitions,
            derive_seed(cfg.seed, &[Stream::Sampling as u64]),
        )
        .map_err(|e| RunError::Runtime(e.to_string()))?;
        model_arch = cartpole_model(cfg.dream.baseline_hidden);
        let sup = SupervisedConfig {
            es: EsConfig {
                generations: cfg.dream.baseline_generations,
                ..SupervisedConfig::default().es
            },
            batch_size: cfg.dream.baseline_batch,
            output_mode: cfg.dropout.output_mode.into(),
            seed: cfg.seed,
        };
        let fit = fit_supervised_wm(&data, &model_arch, &sup, ctx.execution).map_err(|e| RunError::Runtime(e.to_string()))?;
        info!("baseline model fitted, mse {:.6}", fit.mse);
        let text = fit
            .params
            .to_checkpoint(&Architecture::Mlp(model_arch.clone()))
            .expect("sizes match");
        write_file(&dir.join("baseline_model.txt"), &text)?;
        write_file(&dir.join("baseline_fit.csv"), &format!("transitions,mse\n{},{}\n", data.len(), fit.mse))?;
        sources = vec![DreamSource {
            id: format!("baseline-h{}", cfg.dream.baseline_hidden),
            p: None,
            params: fit.params.0,
        }];
    }

    let mut results = String::from("p,wm_id,dream_score,transfer_score\n");
    let holdout = SeedScheme::new(cfg.seed).stream(Stream::Holdout);
    for (i, src) in sources.iter().enumerate() {
        let sub = dir.join(format!("wm{i}"));
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        let dream = CartpoleDream {
            env: env.clone(),
            policy: policy.clone(),
            world: CartpoleDreamWorld::Learned {
                arch: model_arch.clone(),
                params: src.params.clone(),
            },
            config: cfg.dream_config(),
            rollouts: cfg.dream.rollouts,
        };
        let mut metrics = CsvFile::create(sub.join(METRICS_FILE), &["generation", "best", "mean", "std", "best_so_far"])?;
        let mut failure = None;
        let mut observer = |r: &GenerationReport, _: &OpenEs| {
            let row = [
                r.generation.to_string(),
                r.best.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.best_so_far.to_string(),
            ];
            match metrics.row(&row) {
                Ok(()) => ControlFlow::Continue(()),
                Err(e) => {
                    failure = Some(e);
                    ControlFlow::Break(())
                }
            }
        };
        let spec = TrainSpec {
            execution: ctx.execution,
            ..TrainSpec::new(cfg.es.es_config(), derive_seed(cfg.seed, &[i as u64]))
        };
        let out = dream_train(&dream, &spec, &mut observer).map_err(|e| RunError::Runtime(e.to_string()))?;
        if let Some(e) = failure {
            return Err(e);
        }
        metrics.finish()?;
        let policy_arch = Architecture::Mlp(policy.clone());
        write_file(&sub.join("policy.txt"), &out.mean.to_checkpoint(&policy_arch).expect("sizes match"))?;
        let n = cfg.dream.transfer_episodes;
        let dream_score = (0..n)
            .map(|k| dream.episode(out.mean.as_slice(), derive_seed(holdout, &[k as u64])).score)
            .sum::<f64>()
            / n as f64;
        let transfer = cartpole_transfer(&env, &policy, out.mean.as_slice(), n, holdout, ctx.execution);
        let p = src.p.map(fmt_p).unwrap_or_default();
        results.push_str(&format!("{p},{},{dream_score},{}\n", src.id, transfer.mean_score));
        println!("{}: dream {:.1}, transfer {:.1} ± {:.1}", src.id, dream_score, transfer.mean_score, transfer.stderr);
    }
    write_file(&dir.join("dream_results.csv"), &results)?;
    Ok(dir)
}

/// Real-environment score of a checkpoint: a bare policy runs without any
/// model, a joint checkpoint runs under the configured peek probability.
pub fn cmd_eval(ctx: &Context, checkpoint: &Path) -> Result<PathBuf, RunError> {
    let cfg = &ctx.config;
    let (arch, params) = load_checkpoint(checkpoint)?;
    let p = cfg.eval.peek_probability;
    let n = cfg.eval.episodes;
    let holdout = SeedScheme::new(cfg.seed).stream(Stream::Holdout);
    let summary = match cfg.env {
        EnvKind::Cartpole => {
            let task = cfg.cartpole_task(p);
            if arch == task.architecture() {
                task.evaluate(params.as_slice(), holdout, n, ctx.execution)
            } else if arch == Architecture::Mlp(task.policy.clone()) {
                cartpole_transfer(&task.env, &task.policy, params.as_slice(), n, holdout, ctx.execution)
            } else {
                return Err(mismatch(checkpoint, &task.architecture(), &arch));
            }
        }
        EnvKind::Gridworld => {
            let task = cfg.grid_task(p);
            if arch != task.architecture() {
                return Err(mismatch(checkpoint, &task.architecture(), &arch));
            }
            task.evaluate(params.as_slice(), holdout, n, ctx.execution)
        }
    };
    let dir = run_dir(&ctx.out, &format!("eval-{}-seed{}", cfg.name, cfg.seed), ctx.resume)?;
    let mut manifest = RunManifest::new("eval", cfg, cfg.seed);
    manifest.architecture = Some(arch.to_string());
    manifest.peek_probability = Some(p);
    manifest.write(&dir)?;
    write_file(
        &dir.join("eval.csv"),
        &format!(
            "checkpoint,episodes,mean_score,stderr,peek_fraction\n{},{},{},{},{}\n",
            checkpoint.display(),
            summary.episodes,
            summary.mean_score,
            summary.stderr,
            summary.peek_fraction
        ),
    )?;
    println!("score {:.3} ± {:.3} over {} episodes", summary.mean_score, summary.stderr, n);
    Ok(dir)
}

pub fn cmd_stability(ctx: &Context) -> Result<PathBuf, RunError> {
    let cfg = &ctx.config;
    let phys = cfg.physical();
    let report = transfer_experiment(&phys, &cfg.transfer_config(), ctx.execution);
    let dir = run_dir(&ctx.out, &format!("stability-{}-seed{}", cfg.name, cfg.seed), ctx.resume)?;
    RunManifest::new("stability", cfg, cfg.seed).write(&dir)?;
    let path = dir.join("samples.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    report.write_csv(file).map_err(|e| RunError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;

    let balance = BalanceConfig {
        pole_mass_ratio: cfg.stability.pole_mass_ratio,
        duration: cfg.stability.duration,
        ..BalanceConfig::default()
    };
    let gains: Vec<_> = report
        .samples
        .iter()
        .filter(|s| s.true_stable)
        .filter_map(|s| s.gains)
        .take(cfg.stability.balance_checks)
        .collect();
    let theta0 = cfg.stability.theta0;
    let balanced = obsdrop::exec::map_indexed(gains.len(), ctx.execution, |i| {
        simulate_balance(gains[i], &phys, theta0, 0.0, &balance)
    });
    let ok = balanced.iter().filter(|&&b| b).count();
    let balance_rate = if gains.is_empty() { f64::NAN } else { ok as f64 / gains.len() as f64 };
    write_file(
        &dir.join("summary.csv"),
        &format!(
            "samples,found,transferred,success_rate,balance_checked,balance_rate\n{},{},{},{},{},{}\n",
            report.samples.len(),
            report.found,
            report.transferred,
            report.success_rate,
            gains.len(),
            balance_rate
        ),
    )?;
    println!(
        "success_rate {:.4} ({} of {} found), nonlinear balance {}/{}",
        report.success_rate,
        report.transferred,
        report.found,
        ok,
        gains.len()
    );
    Ok(dir)
}

/// Correlation maps of a grid world model for the four movements.
pub fn cmd_corr(ctx: &Context, checkpoint: &Path) -> Result<PathBuf, RunError> {
    let cfg = &ctx.config;
    let (arch, params) = load_checkpoint(checkpoint)?;
    let task = cfg.grid_task(1.0);
    let (model_arch, model_params) = match &arch {
        Architecture::Joint { policy, model } if **policy == Architecture::Mlp(task.policy.clone()) => {
            (model.as_ref().clone(), params.0[policy.param_count()..].to_vec())
        }
        Architecture::Mlp(_) | Architecture::PlusConv(_) => (arch.clone(), params.0.clone()),
        _ => return Err(mismatch(checkpoint, &task.architecture(), &arch)),
    };
    let model_ok = match &model_arch {
        Architecture::Mlp(m) => *m == task.fc,
        Architecture::PlusConv(c) => *c == task.conv,
        _ => false,
    };
    if !model_ok {
        return Err(mismatch(checkpoint, &task.architecture(), &arch));
    }
    let dir = run_dir(&ctx.out, &format!("corr-{}-seed{}", cfg.name, cfg.seed), ctx.resume)?;
    let mut manifest = RunManifest::new("corr", cfg, cfg.seed);
    manifest.architecture = Some(model_arch.to_string());
    manifest.write(&dir)?;
    let world = cfg.grid_env();
    let corr_cfg = CorrelationConfig {
        samples: cfg.corr.samples,
        seed: cfg.seed,
        thresholded: cfg.corr.thresholded,
        ..CorrelationConfig::default()
    };
    for dir_action in GridAction::MOVES {
        let predict = |obs: &obsdrop::gridworld::GridObs, a: GridAction| {
            let mut m = match &model_arch {
                Architecture::Mlp(_) => GridModel::fully_connected(&task.fc, &model_params),
                _ => GridModel::convolutional(&task.conv, &model_params),
            };
            m.predict_raw(obs, a)
        };
        let dc = direction_correlation(predict, &world, dir_action, &corr_cfg, ctx.execution);
        let name = dir_action.name().to_lowercase();
        write_file(&dir.join(format!("corr_{name}.csv")), &dc.combined.to_csv())?;
        write_file(
            &dir.join(format!("corr_{name}.svg")),
            &render::heatmap(&dc.combined, &format!("move {name}")),
        )?;
        for (k, plane) in dc.planes.iter().enumerate() {
            let label = if k == 0 { "apples" } else { "fires" };
            write_file(&dir.join(format!("corr_{name}_{label}.csv")), &plane.to_csv())?;
            write_file(
                &dir.join(format!("corr_{name}_{label}.svg")),
                &render::heatmap(plane, &format!("move {name}, {label}")),
            )?;
        }
    }
    println!("{}: correlation maps for 4 directions", dir.display());
    Ok(dir)
}

/// Renders a CSV artifact or a checkpoint rollout to SVG.
pub fn cmd_render(ctx: &Context, input: &Path, output: Option<&Path>) -> Result<PathBuf, RunError> {
    let text = fs::read_to_string(input).map_err(io_err(input))?;
    let header = text.lines().next().unwrap_or("");
    let svg = if header.starts_with("generation,best,mean") {
        render_metrics(&text, input)?
    } else if header == "metric,p,runs,mean,stderr" {
        render_aggregate(&text, input)?
    } else if header == "row,col,value,flagged" {
        render_corr(&text, input)?
    } else if header.starts_with(obsdrop::nn::CHECKPOINT_TAG) {
        render_rollout(ctx, input)?
    } else {
        return Err(RunError::Usage(format!("{}: unrecognized input format", input.display())));
    };
    let out = output.map_or_else(|| input.with_extension("svg"), Path::to_path_buf);
    let mut f = fs::File::create(&out).map_err(io_err(&out))?;
    f.write_all(svg.as_bytes()).map_err(io_err(&out))?;
    println!("{}", out.display());
    Ok(out)
}

fn parse_rows(text: &str, input: &Path) -> Result<Vec<Vec<String>>, RunError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| RunError::Usage(format!("{}: {e}", input.display())))
}

fn num(s: &str, input: &Path) -> Result<f64, RunError> {
    s.parse()
        .map_err(|_| RunError::Usage(format!("{}: bad number `{s}`", input.display())))
}

fn render_metrics(text: &str, input: &Path) -> Result<String, RunError> {
    let rows = parse_rows(text, input)?;
    let mut series = vec![
        render::Series { label: "best".into(), points: vec![] },
        render::Series { label: "mean".into(), points: vec![] },
        render::Series { label: "best so far".into(), points: vec![] },
    ];
    let bsf_col = if text.starts_with("generation,best,mean,std,evaluations") { 5 } else { 4 };
    for r in &rows {
        let g = num(&r[0], input)?;
        series[0].points.push((g, num(&r[1], input)?, None));
        series[1].points.push((g, num(&r[2], input)?, Some(num(&r[3], input)?)));
        series[2].points.push((g, num(&r[bsf_col], input)?, None));
    }
    Ok(render::line_plot(&series, "training", "generation", "fitness"))
}

fn render_aggregate(text: &str, input: &Path) -> Result<String, RunError> {
    let rows = parse_rows(text, input)?;
    let mut aggs = Vec::new();
    for r in &rows {
        aggs.push(obsdrop::analysis::SweepAggregate {
            metric: r[0].clone(),
            p: num(&r[1], input)?,
            runs: num(&r[2], input)? as usize,
            mean: num(&r[3], input)?,
            stderr: if r[4].is_empty() { None } else { Some(num(&r[4], input)?) },
        });
    }
    aggs.retain(|a| a.metric == "final_score");
    Ok(render::line_plot(&render::Series::from_aggregates(&aggs), "sweep", "peek probability", "score"))
}

fn render_corr(text: &str, input: &Path) -> Result<String, RunError> {
    let rows = parse_rows(text, input)?;
    let map = obsdrop::analysis::CorrelationMap {
        values: rows.iter().map(|r| num(&r[2], input)).collect::<Result<_, _>>()?,
        flagged: rows.iter().map(|r| r[3] == "true").collect(),
        samples: 0,
    };
    Ok(render::heatmap(&map, &input.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned())))
}

fn render_rollout(ctx: &Context, input: &Path) -> Result<String, RunError> {
    let cfg = &ctx.config;
    let (arch, params) = load_checkpoint(input)?;
    let p = cfg.eval.peek_probability;
    let seed = SeedScheme::new(cfg.seed).stream(Stream::Holdout);
    match cfg.env {
        EnvKind::Cartpole => {
            let task = cfg.cartpole_task(p);
            if arch != task.architecture() {
                return Err(mismatch(input, &task.architecture(), &arch));
            }
            let run = task.run(params.as_slice(), seed, true);
            let states: Vec<_> = run.trace.unwrap_or_default().into_iter().map(|t| t.env_state.state).collect();
            Ok(render::cartpole_strip(&states, &task.env.params, 50))
        }
        EnvKind::Gridworld => {
            let task = cfg.grid_task(p);
            if arch != task.architecture() {
                return Err(mismatch(input, &task.architecture(), &arch));
            }
            let run = task.run(params.as_slice(), seed, true);
            let mut states = vec![run.initial_state.clone()];
            states.extend(run.trace.unwrap_or_default().into_iter().map(|t| t.env_state).take(11));
            Ok(render::grid_frames(&states, 5))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_are_append_only() {
        let tmp = tempfile::tempdir().unwrap();
        let a = run_dir(tmp.path(), "x", false).unwrap();
        let b = run_dir(tmp.path(), "x", false).unwrap();
        assert_ne!(a, b);
        assert!(b.ends_with("x-2"));
        assert_eq!(run_dir(tmp.path(), "x", true).unwrap(), a);
    }

    #[test]
    fn snapshots_round_trip() {
        let mut t = TrainingTrace::default();
        t.record(0, &[0.1, -2.5e-7], 0.1);
        t.record(50, &[1.0 / 3.0, 7.0], 0.095);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("s.txt");
        fs::write(&path, snapshots_text(&t)).unwrap();
        assert_eq!(read_snapshots(&path).unwrap(), t);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Usage("x".into()).exit_code(), 1);
        assert_eq!(RunError::Runtime("x".into()).exit_code(), 2);
    }
}
