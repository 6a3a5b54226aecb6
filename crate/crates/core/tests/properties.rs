//! Structural invariants checked on random instances.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stein_core::autodiff::Tape;
use stein_core::baselines::{sgld_step_size, svgd_step, ParticleSet};
use stein_core::evalsuite::{mmd_u, mode_coverage, moment_stats, posterior_accuracy};
use stein_core::fisher::fisher_loss;
use stein_core::networks::{Activation, Mlp, MlpGrads, RmsProp};
use stein_core::stein::{ksd_sample_grad, ksd_u, ksd_v, u_q};
use stein_core::targets::ring8_modes;
use stein_core::{KernelSpec, ScoreModel, SteinKernel, Target};

fn matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.random_range(-scale..scale))
}

fn kernel(rng: &mut ChaCha8Rng) -> SteinKernel {
    if rng.random_bool(0.5) {
        SteinKernel::rbf(rng.random_range(0.3..5.0)).unwrap()
    } else {
        SteinKernel::imq(rng.random_range(0.3..3.0), rng.random_range(-0.95..-0.05)).unwrap()
    }
}

fn mixture_target(rng: &mut ChaCha8Rng) -> Target {
    if rng.random_bool(0.5) {
        Target::cross_mixture(rng.random_range(-0.9..0.9)).unwrap()
    } else {
        Target::ring8(rng.random_range(2.0..15.0), rng.random_range(0.5..1.5)).unwrap()
    }
}

fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn permute_rows(x: &Array2<f64>, p: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(x.dim(), |(i, j)| x[[p[i], j]])
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn backward_is_pure_and_linear(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.variable(matrix(&mut rng, 3, 2, 2.0));
        let w = tape.variable(matrix(&mut rng, 4, 2, 2.0));
        let b = tape.variable(matrix(&mut rng, 1, 4, 2.0));
        let h = tape.affine(x, w, Some(b)).unwrap();
        let t = tape.tanh(h).unwrap();
        let sq = tape.square(t).unwrap();
        let r = tape.relu(h).unwrap();
        let s1 = tape.sum(sq).unwrap();
        let s2 = tape.sum(r).unwrap();
        let s2 = tape.scale(s2, 0.7).unwrap();
        let total = tape.add(s1, s2).unwrap();

        let g1 = tape.backward_scalar(total).unwrap();
        let g2 = tape.backward_scalar(total).unwrap();
        for id in [x, w, b] {
            prop_assert_eq!(g1.get(id), g2.get(id));
        }
        let ga = tape.backward_scalar(s1).unwrap();
        let gb = tape.backward_scalar(s2).unwrap();
        for id in [x, w, b] {
            let sum = ga.get(id).unwrap() + gb.get(id).unwrap();
            for (p, q) in sum.iter().zip(g1.get(id).unwrap()) {
                prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
            }
        }
    }

    #[test]
    fn clipping_is_idempotent_and_bounds_outputs(seed in any::<u64>(), c in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&[2, 8, 8, 2], Activation::Tanh, seed).unwrap();
        net.clip_weights(c).unwrap();
        let once = net.clone();
        net.clip_weights(c).unwrap();
        prop_assert_eq!(&net, &once);
        prop_assert!(net.weights().iter().all(|w| w.iter().all(|v| v.abs() <= c)));

        let bound = net.lipschitz_bound();
        for _ in 0..200 {
            let z = matrix(&mut rng, 2, 2, 10.0);
            let out = net.forward(&z).unwrap();
            let dz = &z.row(0) - &z.row(1);
            let dout = &out.row(0) - &out.row(1);
            prop_assert!(dout.dot(&dout).sqrt() <= bound * dz.dot(&dz).sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rmsprop_moves_parameters_on_nonzero_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&[3, 4, 2], Activation::Relu, seed).unwrap();
        let before = net.clone();
        let mut grads = MlpGrads::zeros_like(&net);
        let k = rng.random_range(0..grads.weights[0].len());
        grads.weights[0].as_slice_mut().unwrap()[k] = rng.random_range(0.1..2.0);
        let mut opt = RmsProp::with_defaults(&net);
        opt.step(&mut net, &grads, 1e-3).unwrap();
        prop_assert_ne!(net, before);
    }

    #[test]
    fn score_jacobians_are_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = mixture_target(&mut rng);
        let x = matrix(&mut rng, 1, 2, 15.0).row(0).to_owned();
        let j = t.score_jacobian(x.view()).unwrap();
        prop_assert!((j[[0, 1]] - j[[1, 0]]).abs() <= 1e-10);
    }

    #[test]
    fn kernel_symmetries(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = kernel(&mut rng);
        let xy = matrix(&mut rng, 2, d, 3.0);
        let (x, y) = (xy.row(0), xy.row(1));
        prop_assert_eq!(k.eval(x, y).unwrap(), k.eval(y, x).unwrap());
        prop_assert_eq!(k.grad_x(x, y).unwrap(), -k.grad_y(x, y).unwrap());
        if let SteinKernel::Imq { c, beta } = k {
            prop_assert!(k.eval(x, y).unwrap() <= c.powf(2.0 * beta));
        }
    }

    #[test]
    fn stein_kernel_symmetric_and_statistics_consistent(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = mixture_target(&mut rng);
        let k = kernel(&mut rng);
        let xs = matrix(&mut rng, n, 2, 4.0);
        let (a, b) = (xs.row(0), xs.row(1));
        prop_assert_eq!(u_q(&t, &k, a, b).unwrap(), u_q(&t, &k, b, a).unwrap());

        let u = ksd_u(&t, &k, &xs).unwrap().value;
        let v = ksd_v(&t, &k, &xs).unwrap().value;
        prop_assert!(v >= 0.0, "V = {v}");
        let diag: f64 = xs.rows().into_iter().map(|r| u_q(&t, &k, r, r).unwrap()).sum();
        let nf = n as f64;
        let lhs = nf * nf * v;
        let rhs = nf * (nf - 1.0) * u + diag;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn ksd_permutation_invariance(seed in any::<u64>(), n in 2usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = mixture_target(&mut rng);
        let k = kernel(&mut rng);
        let xs = matrix(&mut rng, n, 2, 4.0);
        let p = permutation(&mut rng, n);
        let ys = permute_rows(&xs, &p);
        prop_assert_eq!(ksd_u(&t, &k, &xs).unwrap().value, ksd_u(&t, &k, &ys).unwrap().value);
        let gx = ksd_sample_grad(&t, &k, &xs).unwrap();
        let gy = ksd_sample_grad(&t, &k, &ys).unwrap();
        let gx_perm = permute_rows(&gx, &p);
        for (a, b) in gx_perm.iter().zip(&gy) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn fisher_loss_concave_in_output_layer(seed in any::<u64>(), s in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = mixture_target(&mut rng);
        let xs = matrix(&mut rng, 12, 2, 4.0);
        let base = Mlp::new(&[2, 6, 2], Activation::Tanh, seed).unwrap();
        let mut f = base.clone();
        let mut g = base.clone();
        let last = base.weights().len() - 1;
        f.weights_mut()[last] = matrix(&mut rng, 2, 6, 1.0);
        g.weights_mut()[last] = matrix(&mut rng, 2, 6, 1.0);
        f.biases_mut()[last] = matrix(&mut rng, 1, 2, 1.0).row(0).to_owned();
        g.biases_mut()[last] = matrix(&mut rng, 1, 2, 1.0).row(0).to_owned();
        let mut mix = base.clone();
        mix.weights_mut()[last] = &f.weights()[last] * s + &g.weights()[last] * (1.0 - s);
        mix.biases_mut()[last] = &f.biases()[last] * s + &g.biases()[last] * (1.0 - s);
        let lf = fisher_loss(&t, &f, &xs, 0.5).unwrap();
        let lg = fisher_loss(&t, &g, &xs, 0.5).unwrap();
        let lm = fisher_loss(&t, &mix, &xs, 0.5).unwrap();
        prop_assert!(lm >= s * lf + (1.0 - s) * lg - 1e-9 * (1.0 + lm.abs()));
    }

    #[test]
    fn svgd_zero_step_and_single_particle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = mixture_target(&mut rng);
        let ps = ParticleSet::new(matrix(&mut rng, 7, 2, 5.0)).unwrap();
        let k = KernelSpec::median_rbf().resolve(ps.positions.view()).unwrap();
        prop_assert_eq!(&svgd_step(&t, &k, &ps, 0.0).unwrap().positions, &ps.positions);

        let one = ParticleSet::new(matrix(&mut rng, 1, 2, 5.0)).unwrap();
        let eps = rng.random_range(0.01..0.5);
        let moved = svgd_step(&t, &SteinKernel::rbf(1.0).unwrap(), &one, eps).unwrap();
        let s = t.score(one.positions.row(0)).unwrap();
        let expected = &one.positions.row(0) + &(&s * eps);
        for (a, b) in moved.positions.row(0).iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn sgld_steps_positive_decreasing(t in 0usize..1_000_000) {
        prop_assert!(sgld_step_size(t) > 0.0);
        prop_assert!(sgld_step_size(t + 1) < sgld_step_size(t));
    }

    #[test]
    fn mmd_symmetric(seed in any::<u64>(), n in 2usize..20, m in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = matrix(&mut rng, n, 2, 3.0);
        let ys = matrix(&mut rng, m, 2, 3.0);
        let k = SteinKernel::rbf(rng.random_range(0.5..5.0)).unwrap();
        prop_assert_eq!(mmd_u(xs.view(), ys.view(), &k).unwrap(), mmd_u(ys.view(), xs.view(), &k).unwrap());
    }

    #[test]
    fn coverage_monotone_in_radius(seed in any::<u64>(), r in 0.1f64..6.0, extra in 0.0f64..6.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = matrix(&mut rng, 200, 2, 18.0);
        let modes = ring8_modes(15.0);
        let small = mode_coverage(xs.view(), &modes, r).unwrap();
        let large = mode_coverage(xs.view(), &modes, r + extra).unwrap();
        prop_assert!(small <= large);
    }

    #[test]
    fn moments_translate_exactly(seed in any::<u64>(), a in -4i32..4, b in -4i32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Dyadic values keep every sum exact.
        let xs = Array2::from_shape_simple_fn((16, 2), || rng.random_range(-64i32..64) as f64 / 8.0);
        let shift = Array1::from(vec![a as f64, b as f64]);
        let (h1, h2) = moment_stats(xs.view()).unwrap();
        let (g1, g2) = moment_stats((&xs + &shift).view()).unwrap();
        prop_assert_eq!(g1, h1 + (a + b) as f64);
        prop_assert_eq!(g2, h2);
    }

    #[test]
    fn accuracy_in_unit_interval(seed in any::<u64>(), m in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = matrix(&mut rng, 25, 3, 2.0);
        let labels = Array1::from_shape_fn(25, |_| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let weights = matrix(&mut rng, m, 4, 2.0);
        let acc = posterior_accuracy(weights.view(), features.view(), labels.view()).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }
}
