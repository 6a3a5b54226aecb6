//! Experiment orchestration: training dispatch, artifacts, metrics, reports.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stein_core::baselines::{sgld_step, svgd_step, ParticleSet};
use stein_core::evalsuite::{
    aggregate_runs, mmd_u_median, mode_coverage, moment_stats, posterior_accuracy, Aggregate, GroundTruth,
    MetricReport, RunMetrics,
};
use stein_core::fisher::{new_fisher_trace, FisherConfig, FisherTrainer};
use stein_core::networks::Mlp;
use stein_core::stein::{new_ksd_trace, KsdConfig, KsdTrainer, OptimizerConfig, TraceRecord, TrainTrace};
use stein_core::targets::{cross_mixture_probes, LabeledDataset, LogisticPosterior};
use stein_core::{Noise, ScoreModel, Target};

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Method, TargetSpec};
use crate::dataset::{load_dataset, prepare, synthetic_logistic};
use crate::error::{CliError, Result};
use crate::io::{read_matrix, write_atomic, write_samples};
use crate::svg::{auto_limits, scatter_svg};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const DISCRIMINATOR_FILE: &str = "discriminator.bin";
pub const TRACE_FILE: &str = "trace.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PLOT_FILE: &str = "scatter.svg";
pub const REPORT_FILE: &str = "report.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// Forward passes are chunked to bound memory for large sample counts.
const SAMPLE_CHUNK: usize = 8192;

mod stream {
    pub const GENERATOR_INIT: u64 = 1;
    pub const DISCRIMINATOR_INIT: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const FINAL_SAMPLES: u64 = 4;
    pub const REFERENCE: u64 = 5;
    pub const BASELINE: u64 = 6;
}

/// Independent RNG for one purpose within a seeded run.
pub fn derived_rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

fn derived_seed(seed: u64, purpose: u64) -> u64 {
    derived_rng(seed, purpose).next_u64()
}

pub struct LoadedTarget {
    pub target: Target,
    pub dataset: Option<LabeledDataset>,
}

pub fn build_target(cfg: &ExperimentConfig) -> Result<LoadedTarget> {
    let target = match &cfg.target {
        TargetSpec::Ring8 { radius, sd } => Target::ring8(*radius, *sd)?,
        TargetSpec::CrossMixture { rho } => Target::cross_mixture(*rho)?,
        TargetSpec::Gaussian { mean, variance } => Target::isotropic(Array1::from(mean.clone()), *variance)?,
        TargetSpec::Logistic {
            dataset,
            synthetic,
            split_seed,
            prior_shape,
            prior_rate,
        } => {
            let data = match (dataset, synthetic) {
                (Some(path), _) => load_dataset(path, *split_seed)?,
                (None, Some(spec)) => {
                    let (x, y) = synthetic_logistic(spec);
                    prepare(x, y, *split_seed)?
                }
                (None, None) => return Err(CliError::Config("target: logistic target needs data".into())),
            };
            let (x, y) = data.subset(&data.train);
            let post = LogisticPosterior::new(x, y, *prior_shape, *prior_rate)?;
            return Ok(LoadedTarget {
                target: Target::logistic(post),
                dataset: Some(data),
            });
        }
    };
    Ok(LoadedTarget { target, dataset: None })
}

/// Draws `count` generator outputs.
pub fn draw_samples(network: &Mlp, noise: &Noise, count: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((count, network.output_dim()));
    let mut start = 0;
    while start < count {
        let end = (start + SAMPLE_CHUNK).min(count);
        let z = noise.sample(end - start, network.input_dim(), rng);
        let x = network.forward(&z)?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&x);
        start = end;
    }
    Ok(out)
}

fn trace_header(trace: &TrainTrace) -> String {
    format!(
        "iteration,{},{},bandwidth,wall_time_s\n",
        trace.loss_name, trace.secondary_name
    )
}

fn trace_line(r: &TraceRecord) -> String {
    let bw = r.bandwidth.map(|b| b.to_string()).unwrap_or_default();
    format!("{},{},{},{},{:.6}\n", r.iteration, r.loss, r.secondary, bw, r.wall_time)
}

/// Trace file text: earlier lines carried over from a resumed run, then `trace`.
fn trace_text(trace: &TrainTrace, carried: &[String]) -> String {
    let mut s = trace_header(trace);
    for line in carried {
        s.push_str(line);
        s.push('\n');
    }
    for r in &trace.records {
        s.push_str(&trace_line(r));
    }
    s
}

/// Data lines of an existing trace with iteration ≤ `upto`.
fn carried_trace_lines(path: &Path, upto: u64) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|f| f.parse::<u64>().ok())
                .is_some_and(|it| it <= upto)
        })
        .map(str::to_string)
        .collect())
}

fn optimizer_config(cfg: &ExperimentConfig, disc: bool) -> OptimizerConfig {
    let o = cfg.optimizer.as_ref().expect("resolved config");
    OptimizerConfig {
        learning_rate: if disc {
            o.disc_learning_rate.expect("resolved config")
        } else {
            o.learning_rate.expect("resolved config")
        },
        decay: o.decay.expect("resolved config"),
        epsilon: o.epsilon.expect("resolved config"),
    }
}

fn network_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

fn generator_for(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<Mlp> {
    let net = cfg.network.as_ref().expect("resolved config");
    let noise_dim = cfg.noise.as_ref().and_then(|n| n.dim).unwrap_or(d);
    let dims = network_dims(noise_dim, net.hidden.as_deref().unwrap_or(&[]), d);
    Ok(Mlp::new(&dims, cfg.generator_activation(), derived_seed(seed, stream::GENERATOR_INIT))?)
}

fn discriminator_for(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<Mlp> {
    let net = cfg.discriminator.as_ref().expect("resolved config");
    let dims = network_dims(d, net.hidden.as_deref().unwrap_or(&[]), d);
    Ok(Mlp::new(
        &dims,
        cfg.discriminator_activation(),
        derived_seed(seed, stream::DISCRIMINATOR_INIT),
    )?)
}

/// Common loop for the two neural trainers: steps, periodic checkpoints, and
/// a trace that survives failures.
trait Stepper {
    fn iteration(&self) -> usize;
    fn step(&mut self) -> stein_core::Result<TraceRecord>;
    fn save(&self, dir: &Path) -> Result<()>;
}

impl Stepper for KsdTrainer<'_> {
    fn iteration(&self) -> usize {
        self.iteration
    }

    fn step(&mut self) -> stein_core::Result<TraceRecord> {
        KsdTrainer::step(self)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        Checkpoint {
            network: self.generator.clone(),
            iteration: self.iteration as u64,
            rng: self.rng.clone(),
            noise: self.config.noise,
            optimizer: Some(self.optimizer.clone()),
        }
        .save(&dir.join(CHECKPOINT_FILE))
    }
}

impl Stepper for FisherTrainer<'_> {
    fn iteration(&self) -> usize {
        self.iteration
    }

    fn step(&mut self) -> stein_core::Result<TraceRecord> {
        FisherTrainer::step(self)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        Checkpoint {
            network: self.generator.clone(),
            iteration: self.iteration as u64,
            rng: self.rng.clone(),
            noise: self.config.noise,
            optimizer: Some(self.gen_optimizer.clone()),
        }
        .save(&dir.join(CHECKPOINT_FILE))?;
        Checkpoint {
            network: self.discriminator.clone(),
            iteration: self.iteration as u64,
            rng: self.rng.clone(),
            noise: self.config.noise,
            optimizer: Some(self.disc_optimizer.clone()),
        }
        .save(&dir.join(DISCRIMINATOR_FILE))
    }
}

fn drive(
    trainer: &mut dyn Stepper,
    iterations: usize,
    checkpoint_every: Option<usize>,
    trace: &mut TrainTrace,
    carried: &[String],
    dir: &Path,
) -> Result<()> {
    let trace_path = dir.join(TRACE_FILE);
    while trainer.iteration() < iterations {
        match trainer.step() {
            Ok(rec) => trace.push(rec),
            Err(e) => {
                write_atomic(&trace_path, trace_text(trace, carried).as_bytes())?;
                return Err(e.into());
            }
        }
        if checkpoint_every.is_some_and(|k| trainer.iteration() % k == 0) {
            trainer.save(dir)?;
            write_atomic(&trace_path, trace_text(trace, carried).as_bytes())?;
        }
    }
    trainer.save(dir)?;
    write_atomic(&trace_path, trace_text(trace, carried).as_bytes())
}

fn load_resume(dir: &Path, file: &str, resume: bool) -> Result<Option<Checkpoint>> {
    let path = dir.join(file);
    if resume && path.exists() {
        Ok(Some(Checkpoint::load(&path)?))
    } else {
        Ok(None)
    }
}

fn carried(dir: &Path, ck: &Option<Checkpoint>) -> Result<Vec<String>> {
    match ck {
        Some(c) if dir.join(TRACE_FILE).exists() => carried_trace_lines(&dir.join(TRACE_FILE), c.iteration),
        _ => Ok(Vec::new()),
    }
}

fn check_resumed(ck: &Checkpoint, expected: &Mlp, what: &str) -> Result<()> {
    if ck.network.dims() != expected.dims() || ck.network.activation() != expected.activation() {
        return Err(CliError::Config(format!(
            "{what} checkpoint has dims {:?}, config expects {:?}",
            ck.network.dims(),
            expected.dims()
        )));
    }
    Ok(())
}

fn run_ksd(cfg: &ExperimentConfig, target: &Target, seed: u64, dir: &Path, resume: bool) -> Result<Mlp> {
    let s = &cfg.schedule;
    let kcfg = KsdConfig {
        iterations: s.iterations.expect("resolved config"),
        batch_size: s.batch_size.expect("resolved config"),
        optimizer: optimizer_config(cfg, false),
        kernel: cfg.kernel_spec(),
        noise: cfg.noise(),
        clip: s.clip,
        minibatch: s.minibatch,
    };
    let fresh = generator_for(cfg, target.dim(), seed)?;
    let ck = load_resume(dir, CHECKPOINT_FILE, resume)?;
    let carried = carried(dir, &ck)?;
    let mut trainer = match &ck {
        Some(c) => {
            check_resumed(c, &fresh, "generator")?;
            let opt = c.optimizer.clone().ok_or_else(|| CliError::Data("checkpoint lacks optimizer state".into()))?;
            KsdTrainer::resume(kcfg.clone(), target, c.network.clone(), opt, c.rng.clone(), c.iteration as usize)?
        }
        None => KsdTrainer::new(kcfg.clone(), target, fresh, derived_seed(seed, stream::TRAINING))?,
    };
    let mut trace = new_ksd_trace();
    drive(&mut trainer, kcfg.iterations, s.checkpoint_every, &mut trace, &carried, dir)?;
    Ok(trainer.generator)
}

fn run_fisher(cfg: &ExperimentConfig, target: &Target, seed: u64, dir: &Path, resume: bool) -> Result<Mlp> {
    let s = &cfg.schedule;
    let fcfg = FisherConfig {
        iterations: s.iterations.expect("resolved config"),
        batch_size: s.batch_size.expect("resolved config"),
        lambda: s.lambda.expect("resolved config"),
        disc_steps: s.disc_steps.expect("resolved config"),
        disc_optimizer: optimizer_config(cfg, true),
        gen_optimizer: optimizer_config(cfg, false),
        noise: cfg.noise(),
        minibatch: s.minibatch,
    };
    let gen = generator_for(cfg, target.dim(), seed)?;
    let disc = discriminator_for(cfg, target.dim(), seed)?;
    let gck = load_resume(dir, CHECKPOINT_FILE, resume)?;
    let dck = load_resume(dir, DISCRIMINATOR_FILE, resume)?;
    let carried = carried(dir, &gck)?;
    let mut trainer = match (&gck, &dck) {
        (Some(g), Some(d)) => {
            check_resumed(g, &gen, "generator")?;
            check_resumed(d, &disc, "discriminator")?;
            if g.iteration != d.iteration {
                return Err(CliError::Data("generator and discriminator checkpoints disagree on iteration".into()));
            }
            let missing = || CliError::Data("checkpoint lacks optimizer state".into());
            FisherTrainer::resume(
                fcfg.clone(),
                target,
                g.network.clone(),
                d.network.clone(),
                g.optimizer.clone().ok_or_else(missing)?,
                d.optimizer.clone().ok_or_else(missing)?,
                g.rng.clone(),
                g.iteration as usize,
            )?
        }
        (None, None) => FisherTrainer::new(fcfg.clone(), target, gen, disc, derived_seed(seed, stream::TRAINING))?,
        _ => return Err(CliError::Data("resume needs both generator and discriminator checkpoints".into())),
    };
    let mut trace = new_fisher_trace();
    drive(&mut trainer, fcfg.iterations, s.checkpoint_every, &mut trace, &carried, dir)?;
    Ok(trainer.generator)
}

fn baseline_start(cfg: &ExperimentConfig, d: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let init = cfg.init.as_ref().expect("resolved config");
    let center = init.center.clone().unwrap_or_else(|| vec![0.0; d]);
    if center.len() != d {
        return Err(CliError::Config(format!(
            "init.center: has {} entries, target dimension is {d}",
            center.len()
        )));
    }
    let sd = init.sd.expect("resolved config");
    Ok(Array2::from_shape_fn((n, d), |(_, j)| {
        let z: f64 = StandardNormal.sample(rng);
        center[j] + sd * z
    }))
}

fn run_svgd(cfg: &ExperimentConfig, target: &Target, seed: u64, dir: &Path) -> Result<Array2<f64>> {
    let n = cfg.eval.samples.expect("resolved config");
    let steps = cfg.schedule.iterations.expect("resolved config");
    let eps = cfg.schedule.step_size.expect("resolved config");
    let kernel = cfg.kernel_spec();
    let mut rng = derived_rng(seed, stream::BASELINE);
    let mut particles = ParticleSet::new(baseline_start(cfg, target.dim(), n, &mut rng)?)?;
    let mut trace = TrainTrace::new("mean_update_norm", "max_update_norm");
    let started = std::time::Instant::now();
    let trace_path = dir.join(TRACE_FILE);
    for _ in 0..steps {
        let batch = target.draw_minibatch(cfg.schedule.minibatch, &mut rng);
        let view = target.view(batch.as_deref());
        let k = kernel.resolve(particles.positions.view())?;
        let next = match svgd_step(&view, &k, &particles, eps) {
            Ok(p) => p,
            Err(e) => {
                write_atomic(&trace_path, trace_text(&trace, &[]).as_bytes())?;
                return Err(e.into());
            }
        };
        let norms: Vec<f64> = (&next.positions - &particles.positions)
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .collect();
        trace.push(TraceRecord {
            iteration: next.iteration,
            loss: norms.iter().sum::<f64>() / n as f64,
            secondary: norms.iter().copied().fold(0.0, f64::max),
            bandwidth: k.bandwidth(),
            wall_time: started.elapsed().as_secs_f64(),
        });
        particles = next;
    }
    write_atomic(&trace_path, trace_text(&trace, &[]).as_bytes())?;
    Ok(particles.positions)
}

fn run_sgld(cfg: &ExperimentConfig, target: &Target, seed: u64, dir: &Path) -> Result<Array2<f64>> {
    let s = &cfg.schedule;
    let total = cfg.eval.samples.expect("resolved config");
    let chains = s.chains.expect("resolved config");
    let thin = s.thin.expect("resolved config");
    let burn_in = s.burn_in.expect("resolved config");
    let steps = s.iterations.expect("resolved config");
    let d = target.dim();
    let mut rng = derived_rng(seed, stream::BASELINE);
    let starts = baseline_start(cfg, d, chains, &mut rng)?;
    let mut state: Vec<Array1<f64>> = starts.rows().into_iter().map(|r| r.to_owned()).collect();
    let per_chain = total.div_ceil(chains);
    let mut kept: Vec<Vec<Array1<f64>>> = vec![Vec::with_capacity(per_chain); chains];
    let mut trace = TrainTrace::new("mean_log_density", "step_size");
    let started = std::time::Instant::now();
    let trace_path = dir.join(TRACE_FILE);
    for t in 0..steps {
        for (c, x) in state.iter_mut().enumerate() {
            let batch = target.draw_minibatch(s.minibatch, &mut rng);
            let view = target.view(batch.as_deref());
            match sgld_step(&view, x.view(), t, &mut rng) {
                Ok(next) => *x = next,
                Err(e) => {
                    write_atomic(&trace_path, trace_text(&trace, &[]).as_bytes())?;
                    return Err(e.into());
                }
            }
            if t >= burn_in && (t - burn_in + 1) % thin == 0 {
                kept[c].push(x.clone());
            }
        }
        let mean_ld = state
            .iter()
            .map(|x| target.log_density_unnorm(x.view()))
            .sum::<stein_core::Result<f64>>()?
            / chains as f64;
        trace.push(TraceRecord {
            iteration: t + 1,
            loss: mean_ld,
            secondary: stein_core::baselines::sgld_step_size(t),
            bandwidth: None,
            wall_time: started.elapsed().as_secs_f64(),
        });
    }
    write_atomic(&trace_path, trace_text(&trace, &[]).as_bytes())?;
    let rows: Vec<f64> = kept.into_iter().flatten().take(total).flat_map(|x| x.to_vec()).collect();
    let n = rows.len() / d;
    Ok(Array2::from_shape_vec((n, d), rows).expect("whole rows"))
}

/// Ground truth `h₁`, `h₂` for 2-D targets with known moments.
pub fn ground_truth(target: &Target) -> GroundTruth {
    match (target.dim(), target.mean(), target.marginal_variances()) {
        (2, Some(m), Some(v)) => GroundTruth {
            h1: Some(m.sum()),
            h2: Some(v.mapv(f64::sqrt).sum()),
        },
        _ => GroundTruth::default(),
    }
}

/// Metrics requested by the config for one sample set.
pub fn evaluate(
    cfg: &ExperimentConfig,
    loaded: &LoadedTarget,
    samples: &Array2<f64>,
    seed: u64,
) -> Result<RunMetrics> {
    let target = &loaded.target;
    if samples.ncols() != target.dim() {
        return Err(CliError::Data(format!(
            "samples have {} columns, target dimension is {}",
            samples.ncols(),
            target.dim()
        )));
    }
    let mut m = RunMetrics::default();
    if cfg.wants("moments") {
        let (h1, h2) = moment_stats(samples.view())?;
        m.h1 = Some(h1);
        m.h2 = Some(h2);
    }
    if cfg.wants("mmd") {
        let mut rng = derived_rng(seed, stream::REFERENCE);
        let reference = target.sample(cfg.eval.reference_samples.expect("resolved config"), &mut rng)?;
        m.mmd = Some(mmd_u_median(samples.view(), reference.view())?);
    }
    if cfg.wants("coverage") {
        let modes: Vec<Array1<f64>> = match (&cfg.eval.modes, &cfg.target) {
            (Some(list), _) => list.iter().map(|v| Array1::from(v.clone())).collect(),
            (None, TargetSpec::CrossMixture { .. }) => cross_mixture_probes(),
            (None, _) => target.modes(),
        };
        if modes.is_empty() {
            return Err(CliError::Config("eval.modes: target has no known modes; list them".into()));
        }
        m.mode_coverage = Some(mode_coverage(
            samples.view(),
            &modes,
            cfg.eval.coverage_radius.expect("resolved config"),
        )?);
    }
    if cfg.wants("accuracy") {
        let data = loaded
            .dataset
            .as_ref()
            .ok_or_else(|| CliError::Config("eval.metrics: accuracy needs a logistic target".into()))?;
        let (x, y) = data.subset(&data.test);
        m.accuracy = Some(posterior_accuracy(samples.view(), x.view(), y.view())?);
    }
    Ok(m)
}

fn opt_str<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_columns(cfg: &ExperimentConfig) -> Vec<&'static str> {
    let mut cols = Vec::new();
    if cfg.wants("moments") {
        cols.extend(["h1", "h2"]);
    }
    if cfg.wants("mmd") {
        cols.push("mmd");
    }
    if cfg.wants("coverage") {
        cols.push("mode_coverage");
    }
    if cfg.wants("accuracy") {
        cols.push("accuracy");
    }
    cols
}

fn metric_value(m: &RunMetrics, col: &str) -> String {
    match col {
        "h1" => opt_str(m.h1),
        "h2" => opt_str(m.h2),
        "mmd" => opt_str(m.mmd),
        "mode_coverage" => opt_str(m.mode_coverage),
        "accuracy" => opt_str(m.accuracy),
        _ => String::new(),
    }
}

pub fn metrics_csv(cfg: &ExperimentConfig, seed: u64, m: &RunMetrics) -> String {
    let cols = metrics_columns(cfg);
    let mut s = format!("seed,{}\n{seed}", cols.join(","));
    for c in &cols {
        s.push(',');
        s.push_str(&metric_value(m, c));
    }
    s.push('\n');
    s
}

pub fn report_csv(report: &MetricReport) -> String {
    let mut s = String::from("metric,runs,mean,std_error,mse\n");
    let rows: [(&str, &Option<Aggregate>); 5] = [
        ("h1", &report.h1),
        ("h2", &report.h2),
        ("mmd", &report.mmd),
        ("mode_coverage", &report.mode_coverage),
        ("accuracy", &report.accuracy),
    ];
    for (name, agg) in rows {
        if let Some(a) = agg {
            s.push_str(&format!(
                "{name},{},{},{},{}\n",
                a.count,
                a.mean,
                a.std_error,
                opt_str(a.mse)
            ));
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub report: MetricReport,
}

pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(format!("seed-{seed}"))
}

/// Runs every seed of a resolved config and writes all artifacts.
pub fn run_config(cfg: &ExperimentConfig, resume: bool) -> Result<RunSummary> {
    let loaded = build_target(cfg)?;
    let target = &loaded.target;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    write_atomic(&cfg.output_dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml().as_bytes())?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let dir = seed_dir(cfg, seed);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let samples = match cfg.method {
            Method::KsdNs | Method::FisherNs => {
                let gen = if cfg.method == Method::KsdNs {
                    run_ksd(cfg, target, seed, &dir, resume)?
                } else {
                    run_fisher(cfg, target, seed, &dir, resume)?
                };
                let mut rng = derived_rng(seed, stream::FINAL_SAMPLES);
                draw_samples(&gen, &cfg.noise(), cfg.eval.samples.expect("resolved config"), &mut rng)?
            }
            Method::Svgd => run_svgd(cfg, target, seed, &dir)?,
            Method::Sgld => run_sgld(cfg, target, seed, &dir)?,
        };
        write_samples(&dir.join(SAMPLES_FILE), &samples)?;
        let metrics = evaluate(cfg, &loaded, &samples, seed)?;
        write_atomic(&dir.join(METRICS_FILE), metrics_csv(cfg, seed, &metrics).as_bytes())?;
        if let Some(lim) = cfg.eval.plot_limits {
            write_atomic(&dir.join(PLOT_FILE), scatter_svg(&samples, lim)?.as_bytes())?;
        }
        runs.push(metrics);
    }
    let report = aggregate_runs(&runs, &ground_truth(target));
    write_atomic(&cfg.output_dir.join(REPORT_FILE), report_csv(&report).as_bytes())?;
    Ok(RunSummary {
        output_dir: cfg.output_dir.clone(),
        report,
    })
}

pub fn run_experiment(config_path: &Path, resume: bool) -> Result<RunSummary> {
    let cfg = ExperimentConfig::load(config_path)?;
    run_config(&cfg, resume)
}

/// Draws `count` samples from a generator checkpoint without training.
pub fn sample_checkpoint(checkpoint: &Path, count: usize, seed: u64, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = draw_samples(&ck.network, &ck.noise, count, &mut rng)?;
    write_samples(out, &xs)
}

/// Metrics of an existing samples file under a config's evaluation settings,
/// as `metric,value` text.
pub fn eval_samples(samples: &Path, config_path: &Path) -> Result<String> {
    let cfg = ExperimentConfig::load(config_path)?;
    let loaded = build_target(&cfg)?;
    let (_, xs) = read_matrix(samples)?;
    let m = evaluate(&cfg, &loaded, &xs, cfg.seeds[0])?;
    let mut s = String::from("metric,value\n");
    for c in metrics_columns(&cfg) {
        s.push_str(&format!("{c},{}\n", metric_value(&m, c)));
    }
    Ok(s)
}

pub fn plot_samples(samples: &Path, out: &Path, limits: Option<[f64; 4]>) -> Result<()> {
    let (_, xs) = read_matrix(samples)?;
    let lim = limits.unwrap_or_else(|| auto_limits(&xs));
    write_atomic(out, scatter_svg(&xs, lim)?.as_bytes())
}

/// Column means of a sample file, handy for quick checks.
pub fn sample_means(xs: &Array2<f64>) -> Option<Array1<f64>> {
    xs.mean_axis(Axis(0))
}
