//! The Stein kernel `u_q`, kernelized Stein discrepancy estimators, their
//! gradients with respect to the sample, and the KSD generator training loop.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelSpec, SteinKernel};
use crate::networks::{Mlp, RmsProp};
use crate::noise::Noise;
use crate::targets::{ScoreModel, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    UStatistic,
    VStatistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsdEstimate {
    pub value: f64,
    pub n: usize,
    pub estimator: Estimator,
}

/// `u_q` for one pair given precomputed scores.
#[inline]
fn stein_pair(kernel: &SteinKernel, x: ArrayView1<f64>, y: ArrayView1<f64>, sx: ArrayView1<f64>, sy: ArrayView1<f64>) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    let mut ss = 0.0;
    let mut r_dsc = 0.0;
    for a in 0..d {
        let r = x[a] - y[a];
        s += r * r;
        ss += sx[a] * sy[a];
        r_dsc += r * (sy[a] - sx[a]);
    }
    let rad = kernel.radial(s);
    // g·(S_y − S_x) with g = ∇ₓk = 2φ′r.
    rad.phi * ss + 2.0 * rad.d1 * r_dsc - 4.0 * rad.d2 * s - 2.0 * d as f64 * rad.d1
}

/// `u_q(x, y) = S(x)ᵀk S(y) + S(x)ᵀ∇ᵧk + S(y)ᵀ∇ₓk + tr ∇ₓ∇ᵧk`.
pub fn u_q(target: &(impl ScoreModel + ?Sized), kernel: &SteinKernel, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    check_dim(target.dim(), x.len())?;
    check_dim(target.dim(), y.len())?;
    let sx = target.score(x)?;
    let sy = target.score(y)?;
    Ok(stein_pair(kernel, x, y, sx.view(), sy.view()))
}

fn check_batch(target: &(impl ScoreModel + ?Sized), xs: &Array2<f64>, min_n: usize) -> Result<()> {
    check_dim(target.dim(), xs.ncols())?;
    if xs.nrows() < min_n {
        return Err(Error::invalid(format!(
            "KSD estimator needs at least {min_n} samples, got {}",
            xs.nrows()
        )));
    }
    Ok(())
}

/// Off-diagonal pair values in canonical order, so the sum does not depend
/// on the row order of `xs`.
fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

fn pair_values(kernel: &SteinKernel, xs: &Array2<f64>, scores: &Array2<f64>) -> Vec<f64> {
    let n = xs.nrows();
    let mut values = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            values.push(stein_pair(kernel, xs.row(i), xs.row(j), scores.row(i), scores.row(j)));
        }
    }
    values
}

/// Unbiased U-statistic `1/(n(n−1)) Σ_{i≠j} u_q(xᵢ, xⱼ)`.
pub fn ksd_u(target: &(impl ScoreModel + ?Sized), kernel: &SteinKernel, xs: &Array2<f64>) -> Result<KsdEstimate> {
    check_batch(target, xs, 2)?;
    let n = xs.nrows();
    let scores = target.score_batch(xs)?;
    let total = 2.0 * sorted_sum(pair_values(kernel, xs, &scores));
    Ok(KsdEstimate {
        value: total / (n * (n - 1)) as f64,
        n,
        estimator: Estimator::UStatistic,
    })
}

/// V-statistic `1/n² Σ_{i,j} u_q(xᵢ, xⱼ)`; nonnegative since `u_q` is positive definite.
pub fn ksd_v(target: &(impl ScoreModel + ?Sized), kernel: &SteinKernel, xs: &Array2<f64>) -> Result<KsdEstimate> {
    check_batch(target, xs, 1)?;
    let n = xs.nrows();
    let scores = target.score_batch(xs)?;
    let off = 2.0 * sorted_sum(pair_values(kernel, xs, &scores));
    let diag = sorted_sum(
        (0..n)
            .map(|i| stein_pair(kernel, xs.row(i), xs.row(i), scores.row(i), scores.row(i)))
            .collect(),
    );
    Ok(KsdEstimate {
        value: (off + diag) / (n * n) as f64,
        n,
        estimator: Estimator::VStatistic,
    })
}

/// U-statistic value together with `∂ KSD_u / ∂ xᵢ` for every row.
pub fn ksd_u_with_grad(
    target: &(impl ScoreModel + ?Sized),
    kernel: &SteinKernel,
    xs: &Array2<f64>,
) -> Result<(KsdEstimate, Array2<f64>)> {
    check_batch(target, xs, 2)?;
    let (n, d) = xs.dim();
    let scores = target.score_batch(xs)?;
    let mut values = Vec::with_capacity(n * (n - 1) / 2);
    let mut direct = Array2::<f64>::zeros((n, d));
    // Σⱼ (k Sⱼ − ∇ₓk) per row; contracted with the score Jacobian at the end.
    let mut jac_arg = Array2::<f64>::zeros((n, d));
    let mut r = vec![0.0; d];
    let mut dsc = vec![0.0; d];
    let dd = d as f64;
    for i in 0..n {
        let (xi, si) = (xs.row(i), scores.row(i));
        for j in i + 1..n {
            let (xj, sj) = (xs.row(j), scores.row(j));
            let mut s = 0.0;
            let mut ss = 0.0;
            let mut r_dsc = 0.0;
            for a in 0..d {
                r[a] = xi[a] - xj[a];
                dsc[a] = sj[a] - si[a];
                s += r[a] * r[a];
                ss += si[a] * sj[a];
                r_dsc += r[a] * dsc[a];
            }
            let rad = kernel.radial(s);
            values.push(rad.phi * ss + 2.0 * rad.d1 * r_dsc - 4.0 * rad.d2 * s - 2.0 * dd * rad.d1);
            let trace_coef = 8.0 * s * rad.d3 + (8.0 + 4.0 * dd) * rad.d2;
            // Non-Jacobian part of ∇₁u(xᵢ, xⱼ); it flips sign for ∇₁u(xⱼ, xᵢ).
            let coef_r = 2.0 * rad.d1 * ss + 4.0 * rad.d2 * r_dsc - trace_coef;
            for a in 0..d {
                let part = coef_r * r[a] + 2.0 * rad.d1 * dsc[a];
                direct[[i, a]] += part;
                direct[[j, a]] -= part;
                let g = 2.0 * rad.d1 * r[a];
                jac_arg[[i, a]] += rad.phi * sj[a] - g;
                jac_arg[[j, a]] += rad.phi * si[a] + g;
            }
        }
    }
    let norm = 2.0 / (n * (n - 1)) as f64;
    let mut grad = direct;
    for i in 0..n {
        let jv = target.score_jacobian_vec(xs.row(i), jac_arg.row(i))?;
        let mut row = grad.row_mut(i);
        row += &jv;
        row *= norm;
    }
    let value = norm * sorted_sum(values);
    Ok((
        KsdEstimate {
            value,
            n,
            estimator: Estimator::UStatistic,
        },
        grad,
    ))
}

/// `∂ KSD_u / ∂X` with the kernel (and hence any bandwidth) held fixed.
pub fn ksd_sample_grad(target: &(impl ScoreModel + ?Sized), kernel: &SteinKernel, xs: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(ksd_u_with_grad(target, kernel, xs)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loss: f64,
    pub secondary: f64,
    pub bandwidth: Option<f64>,
    pub wall_time: f64,
}

/// Per-iteration training log. `loss_name`/`secondary_name` label the two value columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub loss_name: &'static str,
    pub secondary_name: &'static str,
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn new(loss_name: &'static str, secondary_name: &'static str) -> Self {
        TrainTrace {
            loss_name,
            secondary_name,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TraceRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.iteration < record.iteration));
        self.records.push(record);
    }

    pub fn extend(&mut self, other: TrainTrace) {
        for r in other.records {
            self.push(r);
        }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Mean loss over records `[from, to)`.
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let slice = &self.records[from..to.min(self.records.len())];
        slice.iter().map(|r| r.loss).sum::<f64>() / slice.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            decay: RmsProp::DEFAULT_DECAY,
            epsilon: RmsProp::DEFAULT_EPSILON,
        }
    }
}

impl OptimizerConfig {
    pub fn rmsprop(&self, mlp: &Mlp) -> Result<RmsProp> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        RmsProp::new(mlp, self.decay, self.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsdConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub kernel: KernelSpec,
    pub noise: Noise,
    /// Weight clipping range for the generator. RBF kernels default to 10.
    pub clip: Option<f64>,
    /// Data minibatch size for data-backed targets.
    pub minibatch: Option<usize>,
}

impl Default for KsdConfig {
    fn default() -> Self {
        KsdConfig {
            iterations: 1000,
            batch_size: 100,
            optimizer: OptimizerConfig::default(),
            kernel: KernelSpec::default(),
            noise: Noise::default(),
            clip: None,
            minibatch: None,
        }
    }
}

impl KsdConfig {
    pub const RBF_DEFAULT_CLIP: f64 = 10.0;

    pub fn effective_clip(&self) -> Option<f64> {
        match (self.clip, self.kernel.is_rbf()) {
            (Some(c), _) => Some(c),
            (None, true) => Some(Self::RBF_DEFAULT_CLIP),
            (None, false) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("KSD training needs a batch of at least 2"));
        }
        self.noise.validate()?;
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("clip range must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn divergence(iteration: usize, what: &str, nets: &[(&str, &Mlp)]) -> Error {
    let norms = nets
        .iter()
        .map(|(name, m)| format!("{name} parameter norm {:.6e}", m.param_norm()))
        .collect::<Vec<_>>()
        .join(", ");
    Error::Diverged {
        iteration,
        detail: format!("{what} is not finite ({norms})"),
    }
}

/// Resumable KSD generator training state.
#[derive(Debug, Clone)]
pub struct KsdTrainer<'t> {
    pub config: KsdConfig,
    target: &'t Target,
    pub generator: Mlp,
    pub optimizer: RmsProp,
    pub rng: ChaCha8Rng,
    /// Number of completed iterations.
    pub iteration: usize,
    started: Instant,
}

impl<'t> KsdTrainer<'t> {
    pub fn new(config: KsdConfig, target: &'t Target, generator: Mlp, seed: u64) -> Result<Self> {
        let optimizer = config.optimizer.rmsprop(&generator)?;
        Self::resume(config, target, generator, optimizer, ChaCha8Rng::seed_from_u64(seed), 0)
    }

    pub fn resume(
        config: KsdConfig,
        target: &'t Target,
        generator: Mlp,
        optimizer: RmsProp,
        rng: ChaCha8Rng,
        iteration: usize,
    ) -> Result<Self> {
        config.validate()?;
        check_dim(target.dim(), generator.output_dim())?;
        Ok(KsdTrainer {
            config,
            target,
            generator,
            optimizer,
            rng,
            iteration,
            started: Instant::now(),
        })
    }

    /// One iteration; returns its trace record.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let it = self.iteration + 1;
        let z = self
            .config
            .noise
            .sample(self.config.batch_size, self.generator.input_dim(), &mut self.rng);
        let batch = self.target.draw_minibatch(self.config.minibatch, &mut self.rng);
        let view = self.target.view(batch.as_deref());

        let mut tape = crate::autodiff::Tape::new();
        let zn = tape.constant(z);
        let nodes = self.generator.record(&mut tape, zn)?;
        let xs = tape.value(nodes.output).clone();
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(divergence(it, "generator output", &[("generator", &self.generator)]));
        }
        let kernel = self.config.kernel.resolve(xs.view())?;
        let (est, grad_x) = ksd_u_with_grad(&view, &kernel, &xs)?;
        if !est.value.is_finite() || grad_x.iter().any(|v| !v.is_finite()) {
            return Err(divergence(it, "KSD loss", &[("generator", &self.generator)]));
        }
        let grads = tape.backward(nodes.output, &grad_x)?;
        let param_grads = self.generator.collect_grads(&grads, &nodes);
        self.optimizer
            .step(&mut self.generator, &param_grads, self.config.optimizer.learning_rate)
            .map_err(|_| divergence(it, "generator gradient", &[("generator", &self.generator)]))?;
        if let Some(c) = self.config.effective_clip() {
            self.generator.clip_weights(c)?;
        }
        let v = ksd_v(&view, &kernel, &xs)?.value;
        self.iteration = it;
        Ok(TraceRecord {
            iteration: it,
            loss: est.value,
            secondary: v,
            bandwidth: kernel.bandwidth(),
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Runs until `config.iterations` iterations have completed in total.
    pub fn run(&mut self, trace: &mut TrainTrace) -> Result<()> {
        while self.iteration < self.config.iterations {
            let rec = self.step()?;
            trace.push(rec);
        }
        Ok(())
    }
}

pub fn new_ksd_trace() -> TrainTrace {
    TrainTrace::new("ksd_u", "ksd_v")
}

/// Trains `generator` against `target` by minimizing the KSD U-statistic.
pub fn train_ksd_ns(config: &KsdConfig, target: &Target, generator: Mlp, seed: u64) -> Result<(Mlp, TrainTrace)> {
    let mut trainer = KsdTrainer::new(config.clone(), target, generator, seed)?;
    let mut trace = new_ksd_trace();
    trainer.run(&mut trace)?;
    Ok((trainer.generator, trace))
}

/// Sample-averaged score, handy for diagnostics.
pub fn mean_score(target: &(impl ScoreModel + ?Sized), xs: &Array2<f64>) -> Result<Array1<f64>> {
    let s = target.score_batch(xs)?;
    Ok(s.mean_axis(ndarray::Axis(0)).unwrap_or_else(|| Array1::zeros(xs.ncols())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn u_q_hand_values() {
        let t = Target::standard_normal(1);
        let k = SteinKernel::rbf(2.0).unwrap();
        let origin = array![0.0];
        assert!((u_q(&t, &k, origin.view(), origin.view()).unwrap() - 1.0).abs() < 1e-15);
        let got = u_q(&t, &k, array![0.0].view(), array![1.0].view()).unwrap();
        assert!((got + (-0.5f64).exp()).abs() < 1e-15, "{got}");
        assert!(u_q(&t, &k, array![0.0, 1.0].view(), origin.view()).is_err());
    }

    #[test]
    fn n_two_equals_pair() {
        let t = Target::standard_normal(2);
        let k = SteinKernel::imq_default();
        let xs = array![[0.3, -0.2], [1.1, 0.4]];
        let est = ksd_u(&t, &k, &xs).unwrap();
        let pair = u_q(&t, &k, xs.row(0), xs.row(1)).unwrap();
        assert_eq!(est.value, pair);
        assert_eq!(est.estimator, Estimator::UStatistic);
        assert!(ksd_u(&t, &k, &array![[0.0, 0.0]]).is_err());
    }

    #[test]
    fn v_stat_single_point() {
        let t = Target::standard_normal(2);
        let k = SteinKernel::imq_default();
        let xs = array![[0.7, -1.3]];
        let v = ksd_v(&t, &k, &xs).unwrap();
        assert_eq!(v.value, u_q(&t, &k, xs.row(0), xs.row(0)).unwrap());
        assert!(v.value >= 0.0);
    }

    #[test]
    fn zero_iterations_leave_generator_unchanged() {
        let t = Target::standard_normal(1);
        let g = Mlp::new(&[1, 4, 1], crate::networks::Activation::Tanh, 2).unwrap();
        let cfg = KsdConfig {
            iterations: 0,
            ..KsdConfig::default()
        };
        let (out, trace) = train_ksd_ns(&cfg, &t, g.clone(), 1).unwrap();
        assert_eq!(out, g);
        assert!(trace.is_empty());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let t = Target::standard_normal(2);
        let g = Mlp::new(&[2, 4, 1], crate::networks::Activation::Tanh, 2).unwrap();
        assert!(train_ksd_ns(&KsdConfig::default(), &t, g, 1).is_err());
    }

    #[test]
    fn rbf_auto_clips() {
        let cfg = KsdConfig {
            kernel: KernelSpec::median_rbf(),
            ..KsdConfig::default()
        };
        assert_eq!(cfg.effective_clip(), Some(10.0));
        assert_eq!(KsdConfig::default().effective_clip(), None);
    }
}
