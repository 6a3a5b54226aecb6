//! The Fisher-NS adversarial objective
//! `L(η, λ) = (1/n)Σ[S(xᵢ)ᵀf(xᵢ) + tr ∇f(xᵢ)] − λ(1/n)Σ‖f(xᵢ)‖²`
//! and its alternating discriminator/generator training loop.
//!
//! The Jacobian trace of the discriminator is recorded on the tape as `d`
//! forward tangent chains, one per input direction, so a single reverse pass
//! differentiates the whole objective with respect to both the discriminator
//! parameters and the sample.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{check_dim, Error, Result};
use crate::networks::{Activation, Mlp, MlpGrads, MlpNodes, RmsProp};
use crate::noise::Noise;
use crate::stein::{divergence, OptimizerConfig, TraceRecord, TrainTrace};
use crate::targets::{ScoreModel, Target};

#[derive(Debug, Clone, PartialEq)]
pub struct FisherConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lambda: f64,
    /// Discriminator ascent steps per generator step.
    pub disc_steps: usize,
    pub disc_optimizer: OptimizerConfig,
    pub gen_optimizer: OptimizerConfig,
    pub noise: Noise,
    pub minibatch: Option<usize>,
}

impl Default for FisherConfig {
    fn default() -> Self {
        FisherConfig {
            iterations: 1000,
            batch_size: 100,
            lambda: 0.5,
            disc_steps: 5,
            disc_optimizer: OptimizerConfig::default(),
            gen_optimizer: OptimizerConfig::default(),
            noise: Noise::default(),
            minibatch: None,
        }
    }
}

impl FisherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.disc_steps == 0 {
            return Err(Error::invalid("disc_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        self.noise.validate()
    }
}

/// Objective value and its pieces, with gradients for whichever side asked.
#[derive(Debug, Clone)]
pub struct FisherEval {
    pub loss: f64,
    pub stein_term: f64,
    pub penalty: f64,
    pub disc_grads: MlpGrads,
    /// `∂L/∂X`, including the path through `S(X)`.
    pub sample_grad: Option<Array2<f64>>,
}

struct Recorded {
    tape: Tape,
    x: NodeId,
    disc: MlpNodes,
    loss: NodeId,
    stein: NodeId,
    penalty: NodeId,
}

fn check_disc(disc: &Mlp, d: usize) -> Result<()> {
    check_dim(d, disc.input_dim())?;
    check_dim(d, disc.output_dim())
}

/// Records `Σᵢ tr ∇f(xᵢ)` as a `1×1` node.
fn record_trace(tape: &mut Tape, disc: &Mlp, nodes: &MlpNodes, n: usize) -> Result<NodeId> {
    let d = disc.input_dim();
    let depth = nodes.weights.len();
    // Elementwise activation derivative per hidden layer, shared by all directions.
    let mut derivs = Vec::with_capacity(nodes.hidden.len());
    for &h in &nodes.hidden {
        let node = match disc.activation() {
            Activation::Tanh => {
                let sq = tape.square(h)?;
                let neg = tape.scale(sq, -1.0)?;
                let ones = tape.constant(Array2::ones(tape.value(h).raw_dim()));
                tape.add(neg, ones)?
            }
            Activation::Relu => {
                let mask = tape.value(h).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                tape.constant(mask)
            }
        };
        derivs.push(node);
    }
    let mut total: Option<NodeId> = None;
    for k in 0..d {
        let mut unit = Array2::<f64>::zeros((n, d));
        unit.column_mut(k).fill(1.0);
        let e = tape.constant(unit);
        let mut t = e;
        for (l, &w) in nodes.weights.iter().enumerate() {
            t = tape.affine(t, w, None)?;
            if l + 1 < depth {
                t = tape.mul(t, derivs[l])?;
            }
        }
        let diag = tape.mul(t, e)?;
        let tr = tape.sum(diag)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, tr)?,
            None => tr,
        });
    }
    Ok(total.expect("input dimension is at least 1"))
}

fn record_objective(xs: &Array2<f64>, scores: &Array2<f64>, disc: &Mlp, lambda: f64, x_variable: bool) -> Result<Recorded> {
    let n = xs.nrows();
    let mut tape = Tape::new();
    let x = if x_variable {
        tape.variable(xs.clone())
    } else {
        tape.constant(xs.clone())
    };
    let s = tape.constant(scores.clone());
    let nodes = disc.record(&mut tape, x)?;
    let sf = tape.mul(s, nodes.output)?;
    let score_term = tape.sum(sf)?;
    let trace = record_trace(&mut tape, disc, &nodes, n)?;
    let stein_sum = tape.add(score_term, trace)?;
    let stein = tape.scale(stein_sum, 1.0 / n as f64)?;
    let sq = tape.square(nodes.output)?;
    let sq_sum = tape.sum(sq)?;
    let penalty = tape.scale(sq_sum, 1.0 / n as f64)?;
    let neg_pen = tape.scale(penalty, -lambda)?;
    let loss = tape.add(stein, neg_pen)?;
    Ok(Recorded {
        tape,
        x,
        disc: nodes,
        loss,
        stein,
        penalty,
    })
}

/// Evaluates the objective on `xs`; with `sample_grad` also returns `∂L/∂X`.
pub fn fisher_eval(
    target: &(impl ScoreModel + ?Sized),
    disc: &Mlp,
    xs: &Array2<f64>,
    lambda: f64,
    sample_grad: bool,
) -> Result<FisherEval> {
    check_dim(target.dim(), xs.ncols())?;
    check_disc(disc, target.dim())?;
    if xs.nrows() == 0 {
        return Err(Error::invalid("Fisher objective needs at least one sample"));
    }
    let scores = target.score_batch(xs)?;
    let rec = record_objective(xs, &scores, disc, lambda, sample_grad)?;
    let grads = rec.tape.backward_scalar(rec.loss)?;
    let disc_grads = disc.collect_grads(&grads, &rec.disc);
    let sample_grad = if sample_grad {
        let mut gx = grads.get_or_zeros(rec.x, xs);
        // Path through S(X): ∂L/∂S = f/n, contracted with the symmetric score Jacobian.
        let f = rec.tape.value(rec.disc.output);
        let inv_n = 1.0 / xs.nrows() as f64;
        for i in 0..xs.nrows() {
            let jv = target.score_jacobian_vec(xs.row(i), f.row(i))?;
            gx.row_mut(i).scaled_add(inv_n, &jv);
        }
        Some(gx)
    } else {
        None
    };
    Ok(FisherEval {
        loss: rec.tape.scalar(rec.loss),
        stein_term: rec.tape.scalar(rec.stein),
        penalty: rec.tape.scalar(rec.penalty),
        disc_grads,
        sample_grad,
    })
}

/// `(1/n)Σᵢ [S(xᵢ)ᵀf(xᵢ) + tr ∇f(xᵢ)]`.
pub fn stein_operator_mean(target: &(impl ScoreModel + ?Sized), disc: &Mlp, xs: &Array2<f64>) -> Result<f64> {
    Ok(stein_operator_values(target, disc, xs)?.mean().unwrap_or(0.0))
}

/// Per-sample Stein operator values `S(xᵢ)ᵀf(xᵢ) + tr ∇f(xᵢ)`.
pub fn stein_operator_values(target: &(impl ScoreModel + ?Sized), disc: &Mlp, xs: &Array2<f64>) -> Result<Array1<f64>> {
    check_dim(target.dim(), xs.ncols())?;
    check_disc(disc, target.dim())?;
    let n = xs.nrows();
    let scores = target.score_batch(xs)?;
    let mut tape = Tape::new();
    let x = tape.constant(xs.clone());
    let nodes = disc.record(&mut tape, x)?;
    let f = tape.value(nodes.output);
    let mut out = Array1::from_shape_fn(n, |i| scores.row(i).dot(&f.row(i)));
    // Per-row traces: reuse the chains without summing over rows.
    let d = disc.input_dim();
    let depth = nodes.weights.len();
    for k in 0..d {
        let mut t = Array2::<f64>::zeros((n, d));
        t.column_mut(k).fill(1.0);
        for (l, w) in disc.weights().iter().enumerate() {
            t = t.dot(&w.t());
            if l + 1 < depth {
                let h = tape.value(nodes.hidden[l]);
                match disc.activation() {
                    Activation::Tanh => t.zip_mut_with(h, |a, &hv| *a *= 1.0 - hv * hv),
                    Activation::Relu => t.zip_mut_with(h, |a, &hv| {
                        if hv <= 0.0 {
                            *a = 0.0
                        }
                    }),
                }
            }
        }
        out.zip_mut_with(&t.column(k), |o, &v| *o += v);
    }
    Ok(out)
}

/// `stein_operator_mean − λ(1/n)Σ‖f(xᵢ)‖²`.
pub fn fisher_loss(target: &(impl ScoreModel + ?Sized), disc: &Mlp, xs: &Array2<f64>, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let stein = stein_operator_mean(target, disc, xs)?;
    let f = disc.forward(xs)?;
    let pen = f.iter().map(|v| v * v).sum::<f64>() / xs.nrows() as f64;
    Ok(stein - lambda * pen)
}

/// Relative `L₂(p)` distance between the discriminator and the optimum
/// `(S_q − S_p)/(2λ)`: `‖f − f*‖ / ‖f*‖`, or the absolute norm when the
/// optimum vanishes (p = q).
pub fn optimal_discriminator_residual(
    target_q: &(impl ScoreModel + ?Sized),
    known_p: &(impl ScoreModel + ?Sized),
    disc: &Mlp,
    xs: &Array2<f64>,
    lambda: f64,
) -> Result<f64> {
    check_dim(target_q.dim(), known_p.dim())?;
    check_dim(target_q.dim(), xs.ncols())?;
    check_disc(disc, target_q.dim())?;
    let optimum = (target_q.score_batch(xs)? - known_p.score_batch(xs)?) / (2.0 * lambda);
    let f = disc.forward(xs)?;
    let n = xs.nrows() as f64;
    let resid = (&f - &optimum).iter().map(|v| v * v).sum::<f64>() / n;
    let scale = optimum.iter().map(|v| v * v).sum::<f64>() / n;
    Ok(if scale > 0.0 { (resid / scale).sqrt() } else { resid.sqrt() })
}

/// Trains only the discriminator against samples drawn from `p`, returning
/// the per-step objective values.
pub fn fit_discriminator(
    target_q: &Target,
    p: &Target,
    disc: &mut Mlp,
    steps: usize,
    batch_size: usize,
    lambda: f64,
    optimizer: &OptimizerConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut opt = optimizer.rmsprop(disc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(steps);
    for it in 1..=steps {
        let xs = p.sample(batch_size, &mut rng)?;
        let ev = fisher_eval(target_q, disc, &xs, lambda, false)?;
        if !ev.loss.is_finite() {
            return Err(divergence(it, "Fisher objective", &[("discriminator", disc)]));
        }
        opt.step(disc, &ev.disc_grads.scaled(-1.0), optimizer.learning_rate)?;
        losses.push(ev.loss);
    }
    Ok(losses)
}

/// Resumable Fisher-NS training state.
#[derive(Debug, Clone)]
pub struct FisherTrainer<'t> {
    pub config: FisherConfig,
    target: &'t Target,
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub gen_optimizer: RmsProp,
    pub disc_optimizer: RmsProp,
    pub rng: ChaCha8Rng,
    pub iteration: usize,
    started: Instant,
}

impl<'t> FisherTrainer<'t> {
    pub fn new(config: FisherConfig, target: &'t Target, generator: Mlp, discriminator: Mlp, seed: u64) -> Result<Self> {
        let gen_optimizer = config.gen_optimizer.rmsprop(&generator)?;
        let disc_optimizer = config.disc_optimizer.rmsprop(&discriminator)?;
        Self::resume(
            config,
            target,
            generator,
            discriminator,
            gen_optimizer,
            disc_optimizer,
            ChaCha8Rng::seed_from_u64(seed),
            0,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn resume(
        config: FisherConfig,
        target: &'t Target,
        generator: Mlp,
        discriminator: Mlp,
        gen_optimizer: RmsProp,
        disc_optimizer: RmsProp,
        rng: ChaCha8Rng,
        iteration: usize,
    ) -> Result<Self> {
        config.validate()?;
        check_dim(target.dim(), generator.output_dim())?;
        check_disc(&discriminator, target.dim())?;
        Ok(FisherTrainer {
            config,
            target,
            generator,
            discriminator,
            gen_optimizer,
            disc_optimizer,
            rng,
            iteration,
            started: Instant::now(),
        })
    }

    fn diverged(&self, it: usize, what: &str) -> Error {
        divergence(
            it,
            what,
            &[("generator", &self.generator), ("discriminator", &self.discriminator)],
        )
    }

    /// One outer iteration. `loss` is the objective seen by the generator step
    /// (after discriminator ascent); `secondary` is the objective before ascent.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let it = self.iteration + 1;
        let cfg = &self.config;
        let z = cfg.noise.sample(cfg.batch_size, self.generator.input_dim(), &mut self.rng);
        let batch = self.target.draw_minibatch(cfg.minibatch, &mut self.rng);
        let view = self.target.view(batch.as_deref());

        let mut gtape = Tape::new();
        let zn = gtape.constant(z);
        let gnodes = self.generator.record(&mut gtape, zn)?;
        let xs = gtape.value(gnodes.output).clone();
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(self.diverged(it, "generator output"));
        }

        let mut before = f64::NAN;
        for s in 0..cfg.disc_steps {
            let ev = fisher_eval(&view, &self.discriminator, &xs, cfg.lambda, false)?;
            if !ev.loss.is_finite() {
                return Err(self.diverged(it, "Fisher objective"));
            }
            if s == 0 {
                before = ev.loss;
            }
            self.disc_optimizer
                .step(
                    &mut self.discriminator,
                    &ev.disc_grads.scaled(-1.0),
                    cfg.disc_optimizer.learning_rate,
                )
                .map_err(|_| self.diverged(it, "discriminator gradient"))?;
        }

        let ev = fisher_eval(&view, &self.discriminator, &xs, cfg.lambda, true)?;
        let gx = ev.sample_grad.expect("sample gradient requested");
        if !ev.loss.is_finite() || gx.iter().any(|v| !v.is_finite()) {
            return Err(self.diverged(it, "Fisher objective"));
        }
        let grads = gtape.backward(gnodes.output, &gx)?;
        let param_grads = self.generator.collect_grads(&grads, &gnodes);
        let lr = self.config.gen_optimizer.learning_rate;
        if self.gen_optimizer.step(&mut self.generator, &param_grads, lr).is_err() {
            return Err(self.diverged(it, "generator gradient"));
        }
        self.iteration = it;
        Ok(TraceRecord {
            iteration: it,
            loss: ev.loss,
            secondary: before,
            bandwidth: None,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    pub fn run(&mut self, trace: &mut TrainTrace) -> Result<()> {
        while self.iteration < self.config.iterations {
            let rec = self.step()?;
            trace.push(rec);
        }
        Ok(())
    }
}

pub fn new_fisher_trace() -> TrainTrace {
    TrainTrace::new("generator_loss", "discriminator_loss_before_ascent")
}

pub fn train_fisher_ns(
    config: &FisherConfig,
    target: &Target,
    generator: Mlp,
    discriminator: Mlp,
    seed: u64,
) -> Result<(Mlp, Mlp, TrainTrace)> {
    let mut trainer = FisherTrainer::new(config.clone(), target, generator, discriminator, seed)?;
    let mut trace = new_fisher_trace();
    trainer.run(&mut trace)?;
    Ok((trainer.generator, trainer.discriminator, trace))
}
