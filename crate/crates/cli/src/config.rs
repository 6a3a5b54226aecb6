//! Experiment configuration: parsing, validation, and default materialization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stein_core::kernels::{KernelSpec, SteinKernel};
use stein_core::networks::{Activation, RmsProp};
use stein_core::Noise;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    KsdNs,
    FisherNs,
    Svgd,
    Sgld,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::KsdNs => "ksd-ns",
            Method::FisherNs => "fisher-ns",
            Method::Svgd => "svgd",
            Method::Sgld => "sgld",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Method::KsdNs | Method::FisherNs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub features: usize,
    pub seed: u64,
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_label_noise() -> f64 {
    0.1
}

fn default_margin() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Ring8 {
        #[serde(default = "default_ring_radius")]
        radius: f64,
        #[serde(default = "default_one")]
        sd: f64,
    },
    CrossMixture {
        #[serde(default = "default_rho")]
        rho: f64,
    },
    Gaussian {
        mean: Vec<f64>,
        #[serde(default = "default_one")]
        variance: f64,
    },
    Logistic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        synthetic: Option<SyntheticSpec>,
        #[serde(default)]
        split_seed: u64,
        #[serde(default = "default_one")]
        prior_shape: f64,
        #[serde(default = "default_prior_rate")]
        prior_rate: f64,
    },
}

fn default_ring_radius() -> f64 {
    15.0
}

fn default_one() -> f64 {
    1.0
}

fn default_rho() -> f64 {
    0.8
}

fn default_prior_rate() -> f64 {
    0.01
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Fixed RBF bandwidth; omitted means the per-batch median heuristic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth_sq: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc_learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    /// Data minibatch size for data-backed targets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<Vec<f64>>>,
    /// `[xmin, xmax, ymin, ymax]` for scatter plots of 2-D samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot_limits: Option<[f64; 4]>,
}

/// Parsed configuration. After [`ExperimentConfig::resolve`], every field the
/// method uses is `Some` and no field it ignores is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub target: TargetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSpec>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub eval: EvalSpec,
}

pub const METRICS: [&str; 4] = ["mmd", "moments", "coverage", "accuracy"];

fn field_error(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn forbid<T>(value: &Option<T>, field: &str, method: Method) -> Result<(), CliError> {
    if value.is_some() {
        return Err(field_error(field, format!("not used by method {}", method.name())));
    }
    Ok(())
}

fn positive(value: f64, field: &str) -> Result<f64, CliError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(field_error(field, format!("must be positive, got {value}")))
    }
}

fn at_least(value: usize, min: usize, field: &str) -> Result<usize, CliError> {
    if value >= min {
        Ok(value)
    } else {
        Err(field_error(field, format!("must be at least {min}, got {value}")))
    }
}

impl TargetSpec {
    pub fn is_logistic(&self) -> bool {
        matches!(self, TargetSpec::Logistic { .. })
    }

    /// Dimension when known without loading data.
    pub fn static_dim(&self) -> Option<usize> {
        match self {
            TargetSpec::Ring8 { .. } | TargetSpec::CrossMixture { .. } => Some(2),
            TargetSpec::Gaussian { mean, .. } => Some(mean.len()),
            TargetSpec::Logistic { .. } => None,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        match self {
            TargetSpec::Ring8 { radius, sd } => {
                positive(*radius, "target.radius")?;
                positive(*sd, "target.sd")?;
            }
            TargetSpec::CrossMixture { rho } => {
                if !(rho.abs() < 1.0) {
                    return Err(field_error("target.rho", format!("must lie in (-1, 1), got {rho}")));
                }
            }
            TargetSpec::Gaussian { mean, variance } => {
                if mean.is_empty() {
                    return Err(field_error("target.mean", "must be nonempty"));
                }
                positive(*variance, "target.variance")?;
            }
            TargetSpec::Logistic {
                dataset,
                synthetic,
                prior_shape,
                prior_rate,
                ..
            } => {
                match (dataset, synthetic) {
                    (Some(_), Some(_)) => {
                        return Err(field_error("target", "set only one of dataset and synthetic"))
                    }
                    (None, None) => return Err(field_error("target", "logistic target needs dataset or synthetic")),
                    _ => {}
                }
                if let Some(s) = synthetic {
                    at_least(s.n, 5, "target.synthetic.n")?;
                    at_least(s.features, 1, "target.synthetic.features")?;
                    if !(0.0..0.5).contains(&s.label_noise) {
                        return Err(field_error("target.synthetic.label_noise", "must lie in [0, 0.5)"));
                    }
                    if !(s.margin >= 0.0) {
                        return Err(field_error("target.synthetic.margin", "must be nonnegative"));
                    }
                }
                positive(*prior_shape, "target.prior_shape")?;
                positive(*prior_rate, "target.prior_rate")?;
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads and resolves a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let TargetSpec::Logistic { dataset: Some(d), .. } = &mut cfg.target {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        cfg.resolve()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validates and fills every default the method uses.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let m = self.method;
        if self.seeds.is_empty() {
            return Err(field_error("seeds", "must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(field_error("seeds", "must not repeat"));
        }
        self.target.validate()?;
        self.resolve_eval()?;
        let logistic = self.target.is_logistic();
        let s = &mut self.schedule;

        if m != Method::FisherNs {
            forbid(&s.lambda, "schedule.lambda", m)?;
            forbid(&s.disc_steps, "schedule.disc_steps", m)?;
            forbid(&self.discriminator, "discriminator", m)?;
            forbid(
                &self.optimizer.as_ref().and_then(|o| o.disc_learning_rate),
                "optimizer.disc_learning_rate",
                m,
            )?;
        }
        if m != Method::KsdNs {
            forbid(&s.clip, "schedule.clip", m)?;
        }
        if !matches!(m, Method::KsdNs | Method::Svgd) {
            forbid(&self.kernel, "kernel", m)?;
        }
        if m != Method::Svgd {
            forbid(&s.step_size, "schedule.step_size", m)?;
        }
        if m != Method::Sgld {
            forbid(&s.burn_in, "schedule.burn_in", m)?;
            forbid(&s.thin, "schedule.thin", m)?;
            forbid(&s.chains, "schedule.chains", m)?;
        }
        if m.is_neural() {
            forbid(&self.init, "init", m)?;
        } else {
            forbid(&self.network, "network", m)?;
            forbid(&self.noise, "noise", m)?;
            forbid(&self.optimizer, "optimizer", m)?;
            forbid(&s.batch_size, "schedule.batch_size", m)?;
            forbid(&s.checkpoint_every, "schedule.checkpoint_every", m)?;
        }
        if !logistic {
            forbid(&s.minibatch, "schedule.minibatch", m)?;
        }

        if m.is_neural() {
            s.iterations.get_or_insert(1000);
            at_least(*s.batch_size.get_or_insert(100), 2, "schedule.batch_size")?;
            if let Some(k) = s.checkpoint_every {
                at_least(k, 1, "schedule.checkpoint_every")?;
            }
            let net = self.network.get_or_insert_with(NetworkSpec::default);
            resolve_network(net, "network", if logistic { vec![100] } else { vec![200, 200] })?;
            let opt = self.optimizer.get_or_insert_with(OptimizerSpec::default);
            positive(*opt.learning_rate.get_or_insert(1e-3), "optimizer.learning_rate")?;
            let decay = *opt.decay.get_or_insert(RmsProp::DEFAULT_DECAY);
            if !(decay > 0.0 && decay < 1.0) {
                return Err(field_error("optimizer.decay", format!("must lie in (0, 1), got {decay}")));
            }
            positive(*opt.epsilon.get_or_insert(RmsProp::DEFAULT_EPSILON), "optimizer.epsilon")?;
            let noise = self.noise.get_or_insert_with(NoiseSpec::default);
            let kind = noise.kind.get_or_insert_with(|| "uniform".into()).clone();
            if kind != "uniform" && kind != "gaussian" {
                return Err(field_error("noise.kind", format!("expected uniform or gaussian, got {kind:?}")));
            }
            positive(*noise.scale.get_or_insert(10.0), "noise.scale")?;
            if let Some(d) = noise.dim {
                at_least(d, 1, "noise.dim")?;
            }
        }
        match m {
            Method::KsdNs => {
                let k = self.kernel.get_or_insert_with(KernelConfig::default);
                let kind = k.kind.get_or_insert_with(|| "imq".into()).clone();
                resolve_kernel(k, &kind)?;
                if let Some(c) = s.clip {
                    positive(c, "schedule.clip")?;
                } else if kind == "rbf" {
                    s.clip = Some(stein_core::stein::KsdConfig::RBF_DEFAULT_CLIP);
                }
            }
            Method::FisherNs => {
                positive(*s.lambda.get_or_insert(0.5), "schedule.lambda")?;
                at_least(*s.disc_steps.get_or_insert(5), 1, "schedule.disc_steps")?;
                let default_hidden = self.network.as_ref().and_then(|n| n.hidden.clone()).unwrap_or_default();
                let disc = self.discriminator.get_or_insert_with(NetworkSpec::default);
                resolve_network(disc, "discriminator", if logistic { vec![64] } else { default_hidden })?;
                let opt = self.optimizer.as_mut().expect("resolved above");
                let lr = opt.learning_rate.expect("resolved above");
                positive(*opt.disc_learning_rate.get_or_insert(lr), "optimizer.disc_learning_rate")?;
            }
            Method::Svgd => {
                s.iterations.get_or_insert(1000);
                positive(*s.step_size.get_or_insert(0.3), "schedule.step_size")?;
                let k = self.kernel.get_or_insert_with(KernelConfig::default);
                let kind = k.kind.get_or_insert_with(|| "rbf".into()).clone();
                resolve_kernel(k, &kind)?;
            }
            Method::Sgld => {
                let thin = at_least(*s.thin.get_or_insert(10), 1, "schedule.thin")?;
                let chains = at_least(*s.chains.get_or_insert(1), 1, "schedule.chains")?;
                let burn_in = *s.burn_in.get_or_insert(5000);
                let per_chain = self.eval.samples.expect("resolved above").div_ceil(chains);
                let total = burn_in + per_chain * thin;
                match s.iterations {
                    Some(t) if t != total => {
                        return Err(field_error(
                            "schedule.iterations",
                            format!("SGLD runs burn_in + thin * samples per chain = {total} steps, got {t}"),
                        ))
                    }
                    _ => s.iterations = Some(total),
                }
            }
        }
        if logistic {
            at_least(*s.minibatch.get_or_insert(100), 1, "schedule.minibatch")?;
        }
        if !m.is_neural() {
            let init = self.init.get_or_insert_with(InitSpec::default);
            if let (Some(c), Some(d)) = (&init.center, self.target.static_dim()) {
                if c.len() != d {
                    return Err(field_error("init.center", format!("has {} entries, target dimension is {d}", c.len())));
                }
            }
            positive(*init.sd.get_or_insert(1.0), "init.sd")?;
        }
        Ok(self)
    }

    fn resolve_eval(&mut self) -> Result<(), CliError> {
        let logistic = self.target.is_logistic();
        let e = &mut self.eval;
        at_least(*e.samples.get_or_insert(if logistic { 100 } else { 1000 }), 1, "eval.samples")?;
        let default_metrics: Vec<String> = if logistic {
            vec!["accuracy".into()]
        } else {
            let mut v = vec!["mmd".to_string()];
            if self.target.static_dim() == Some(2) {
                v.push("moments".into());
            }
            if !matches!(self.target, TargetSpec::Gaussian { .. }) || e.modes.is_some() {
                v.push("coverage".into());
            }
            v
        };
        let metrics = e.metrics.get_or_insert(default_metrics).clone();
        for name in &metrics {
            if !METRICS.contains(&name.as_str()) {
                return Err(field_error("eval.metrics", format!("unknown metric {name:?}")));
            }
            let ok = match name.as_str() {
                "accuracy" => logistic,
                "moments" => self.target.static_dim() == Some(2),
                _ => !logistic,
            };
            if !ok {
                return Err(field_error("eval.metrics", format!("metric {name:?} does not apply to this target")));
            }
        }
        if metrics.iter().any(|m| m == "mmd") {
            at_least(*e.reference_samples.get_or_insert(1000), 2, "eval.reference_samples")?;
            at_least(e.samples.expect("set above"), 2, "eval.samples")?;
        } else if e.reference_samples.is_some() {
            return Err(field_error("eval.reference_samples", "only used by the mmd metric"));
        }
        if metrics.iter().any(|m| m == "coverage") {
            let default_radius = match self.target {
                TargetSpec::Ring8 { .. } => 3.0,
                _ => 1.0,
            };
            positive(*e.coverage_radius.get_or_insert(default_radius), "eval.coverage_radius")?;
            if let Some(modes) = &e.modes {
                if modes.is_empty() {
                    return Err(field_error("eval.modes", "must be nonempty"));
                }
                if let Some(d) = self.target.static_dim() {
                    if modes.iter().any(|m| m.len() != d) {
                        return Err(field_error("eval.modes", format!("every mode needs {d} coordinates")));
                    }
                }
            }
        } else {
            forbid(&e.coverage_radius, "eval.coverage_radius", self.method)?;
            forbid(&e.modes, "eval.modes", self.method)?;
        }
        if self.target.static_dim() == Some(2) {
            let lim = *e.plot_limits.get_or_insert(match self.target {
                TargetSpec::Ring8 { radius, .. } => {
                    let r = radius + 5.0;
                    [-r, r, -r, r]
                }
                _ => [-4.0, 4.0, -4.0, 4.0],
            });
            if !(lim[0] < lim[1] && lim[2] < lim[3]) {
                return Err(field_error("eval.plot_limits", "need xmin < xmax and ymin < ymax"));
            }
        } else if e.plot_limits.is_some() {
            return Err(field_error("eval.plot_limits", "only 2-D targets are plotted"));
        }
        Ok(())
    }

    pub fn wants(&self, metric: &str) -> bool {
        self.eval.metrics.as_ref().is_some_and(|m| m.iter().any(|x| x == metric))
    }

    pub fn generator_activation(&self) -> Activation {
        parse_activation(self.network.as_ref())
    }

    pub fn discriminator_activation(&self) -> Activation {
        parse_activation(self.discriminator.as_ref())
    }

    pub fn noise(&self) -> Noise {
        let spec = self.noise.as_ref().expect("resolved config");
        let scale = spec.scale.expect("resolved config");
        match spec.kind.as_deref() {
            Some("gaussian") => Noise::Gaussian { sd: scale },
            _ => Noise::Uniform { half_width: scale },
        }
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        let k = self.kernel.as_ref().expect("resolved config");
        match k.kind.as_deref() {
            Some("rbf") => KernelSpec::Rbf {
                bandwidth_sq: k.bandwidth_sq,
            },
            _ => KernelSpec::Imq {
                c: k.c.expect("resolved config"),
                beta: k.beta.expect("resolved config"),
            },
        }
    }
}

fn parse_activation(spec: Option<&NetworkSpec>) -> Activation {
    spec.and_then(|n| n.activation.as_deref())
        .and_then(|a| a.parse().ok())
        .unwrap_or(Activation::Tanh)
}

fn resolve_network(net: &mut NetworkSpec, section: &str, default_hidden: Vec<usize>) -> Result<(), CliError> {
    let hidden = net.hidden.get_or_insert(default_hidden);
    if hidden.iter().any(|&w| w == 0) {
        return Err(field_error(&format!("{section}.hidden"), "widths must be positive"));
    }
    let act = net.activation.get_or_insert_with(|| "tanh".into());
    act.parse::<Activation>()
        .map_err(|_| field_error(&format!("{section}.activation"), format!("expected tanh or relu, got {act:?}")))?;
    Ok(())
}

fn resolve_kernel(k: &mut KernelConfig, kind: &str) -> Result<(), CliError> {
    match kind {
        "imq" => {
            if k.bandwidth_sq.is_some() {
                return Err(field_error("kernel.bandwidth_sq", "only applies to the rbf kernel"));
            }
            let c = *k.c.get_or_insert(SteinKernel::IMQ_DEFAULT_C);
            let beta = *k.beta.get_or_insert(SteinKernel::IMQ_DEFAULT_BETA);
            SteinKernel::imq(c, beta).map_err(|e| field_error("kernel", e))?;
        }
        "rbf" => {
            if k.c.is_some() || k.beta.is_some() {
                return Err(field_error("kernel", "c and beta only apply to the imq kernel"));
            }
            if let Some(h) = k.bandwidth_sq {
                positive(h, "kernel.bandwidth_sq")?;
            }
        }
        other => return Err(field_error("kernel.kind", format!("expected imq or rbf, got {other:?}"))),
    }
    Ok(())
}
