//! Short reference training runs with known outcomes.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stein_core::fisher::{
    fisher_loss, fit_discriminator, new_fisher_trace, optimal_discriminator_residual, train_fisher_ns, FisherConfig,
    FisherTrainer,
};
use stein_core::networks::{Activation, Mlp};
use stein_core::stein::{train_ksd_ns, KsdConfig, OptimizerConfig};
use stein_core::{Noise, Target};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn ksd_loss_falls_on_standard_normal() {
    let target = Target::standard_normal(1);
    let gen = Mlp::new(&[1, 200, 200, 1], Activation::Tanh, 7).unwrap();
    let cfg = KsdConfig {
        iterations: 2000,
        ..KsdConfig::default()
    };
    let (_, trace) = train_ksd_ns(&cfg, &target, gen, 7).unwrap();
    assert_eq!(trace.len(), 2000);
    let first = trace.mean_loss(0, 100);
    let last = trace.mean_loss(1900, 2000);
    assert!(last < 0.1 * first, "first {first}, last {last}");
}

#[test]
fn fisher_moves_generator_to_shifted_normal() {
    let target = Target::isotropic(Array1::from(vec![2.0]), 1.0).unwrap();
    let gen = Mlp::new(&[1, 64, 64, 1], Activation::Tanh, 3).unwrap();
    let disc = Mlp::new(&[1, 64, 64, 1], Activation::Tanh, 4).unwrap();
    let cfg = FisherConfig {
        iterations: 1500,
        noise: Noise::Gaussian { sd: 1.0 },
        ..FisherConfig::default()
    };
    let (gen, _, _) = train_fisher_ns(&cfg, &target, gen, disc, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = cfg.noise.sample(5000, 1, &mut rng);
    let m = gen.forward(&z).unwrap().mean().unwrap();
    assert!((m - 2.0).abs() < 0.2, "sample mean {m}");
}

#[test]
fn discriminator_ascent_raises_objective() {
    let target = Target::cross_mixture(0.8).unwrap();
    let gen = Mlp::new(&[2, 64, 64, 2], Activation::Tanh, 1).unwrap();
    let disc = Mlp::new(&[2, 64, 64, 2], Activation::Tanh, 2).unwrap();
    let cfg = FisherConfig {
        iterations: 500,
        ..FisherConfig::default()
    };
    let mut trainer = FisherTrainer::new(cfg, &target, gen, disc, 3).unwrap();
    let mut trace = new_fisher_trace();
    trainer.run(&mut trace).unwrap();
    let raised = trace.records.iter().filter(|r| r.loss > r.secondary).count();
    assert!(raised as f64 >= 0.95 * 500.0, "ascent raised the objective in {raised}/500 iterations");
}

#[test]
fn discriminator_finds_closed_form_optimum() {
    let p = Target::standard_normal(1);
    let q = Target::isotropic(Array1::from(vec![1.0]), 1.0).unwrap();
    let mut disc = Mlp::new(&[1, 200, 200, 1], Activation::Tanh, 11).unwrap();
    let losses = fit_discriminator(&q, &p, &mut disc, 1500, 100, 0.5, &OptimizerConfig::default(), 12).unwrap();
    assert_eq!(losses.len(), 1500);

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = p.sample(1000, &mut rng).unwrap();
    let b = p.sample(1000, &mut rng).unwrap();
    let ra = optimal_discriminator_residual(&q, &p, &disc, &a, 0.5).unwrap();
    let rb = optimal_discriminator_residual(&q, &p, &disc, &b, 0.5).unwrap();
    assert!(ra < 0.1, "residual {ra}");
    assert!((ra - rb).abs() < 0.05, "residual redraw {ra} vs {rb}");
    let loss = fisher_loss(&q, &disc, &p.sample(10_000, &mut rng).unwrap(), 0.5).unwrap();
    assert!((loss - 0.5).abs() < 0.15 * 0.5, "loss {loss}");
    assert!(mean(&losses[1400..]) > mean(&losses[..100]));
}
