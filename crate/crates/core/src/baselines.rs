//! Particle baselines: Stein variational gradient descent and stochastic
//! gradient Langevin dynamics.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelSpec, SteinKernel};
use crate::targets::{ScoreModel, Target};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub positions: Array2<f64>,
    pub iteration: usize,
}

impl ParticleSet {
    pub fn new(positions: Array2<f64>) -> Result<Self> {
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial particle positions".into()));
        }
        Ok(ParticleSet {
            positions,
            iteration: 0,
        })
    }

    /// `n` particles drawn from `N(center, I)`.
    pub fn gaussian<R: Rng + ?Sized>(n: usize, center: ArrayView1<f64>, rng: &mut R) -> Self {
        let d = center.len();
        let positions = Array2::from_shape_fn((n, d), |(_, j)| {
            let z: f64 = StandardNormal.sample(rng);
            center[j] + z
        });
        ParticleSet {
            positions,
            iteration: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }
}

/// `xᵢ ← xᵢ + (ε/n)Σⱼ [k(xⱼ, xᵢ)S(xⱼ) + ∇_{xⱼ}k(xⱼ, xᵢ)]`.
pub fn svgd_step(
    target: &(impl ScoreModel + ?Sized),
    kernel: &SteinKernel,
    particles: &ParticleSet,
    step_size: f64,
) -> Result<ParticleSet> {
    let xs = &particles.positions;
    let (n, d) = xs.dim();
    check_dim(target.dim(), d)?;
    if n == 0 {
        return Err(Error::invalid("SVGD needs at least one particle"));
    }
    if !(step_size >= 0.0) {
        return Err(Error::invalid(format!("SVGD step size must be nonnegative, got {step_size}")));
    }
    let scores = target.score_batch(xs)?;
    let mut phi = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let xi = xs.row(i);
        let mut acc = phi.row_mut(i);
        for j in 0..n {
            let xj = xs.row(j);
            let mut s = 0.0;
            for a in 0..d {
                let r = xj[a] - xi[a];
                s += r * r;
            }
            let rad = kernel.radial(s);
            for a in 0..d {
                acc[a] += rad.phi * scores[[j, a]] + 2.0 * rad.d1 * (xj[a] - xi[a]);
            }
        }
    }
    let positions = xs + &(phi * (step_size / n as f64));
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            iteration: particles.iteration + 1,
            detail: "SVGD update is not finite".into(),
        });
    }
    Ok(ParticleSet {
        positions,
        iteration: particles.iteration + 1,
    })
}

/// Runs `steps` SVGD updates, resolving the kernel against the current
/// particles at every step (median heuristic for unspecified RBF bandwidth).
pub fn run_svgd(
    target: &(impl ScoreModel + ?Sized),
    kernel: &KernelSpec,
    mut particles: ParticleSet,
    steps: usize,
    step_size: f64,
) -> Result<ParticleSet> {
    for _ in 0..steps {
        let k = if particles.len() < 2 {
            match *kernel {
                KernelSpec::Rbf { bandwidth_sq } => SteinKernel::rbf(bandwidth_sq.unwrap_or(1.0))?,
                KernelSpec::Imq { c, beta } => SteinKernel::imq(c, beta)?,
            }
        } else {
            kernel.resolve(particles.positions.view())?
        };
        particles = svgd_step(target, &k, &particles, step_size)?;
    }
    Ok(particles)
}

pub const SGLD_BASE_STEP: f64 = 0.1;
pub const SGLD_DECAY_EXPONENT: f64 = 0.55;

/// `ε_t = 0.1/(t+1)^0.55`.
pub fn sgld_step_size(t: usize) -> f64 {
    SGLD_BASE_STEP / ((t + 1) as f64).powf(SGLD_DECAY_EXPONENT)
}

/// `x′ = x + (ε_t/2)S(x) + √ε_t ξ`.
pub fn sgld_step<R: Rng + ?Sized>(
    target: &(impl ScoreModel + ?Sized),
    x: ArrayView1<f64>,
    t: usize,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let eps = sgld_step_size(t);
    let s = target.score(x)?;
    let noise_scale = eps.sqrt();
    let next = Array1::from_shape_fn(x.len(), |a| {
        let xi: f64 = StandardNormal.sample(rng);
        x[a] + 0.5 * eps * s[a] + noise_scale * xi
    });
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            iteration: t,
            detail: "SGLD update is not finite".into(),
        });
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgldConfig {
    pub steps: usize,
    /// Leading iterations discarded.
    pub burn_in: usize,
    /// Keep every `thin`-th state after burn-in.
    pub thin: usize,
    /// Data minibatch size for data-backed targets.
    pub minibatch: Option<usize>,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig {
            steps: 10_000,
            burn_in: 5_000,
            thin: 10,
            minibatch: None,
        }
    }
}

/// Runs one chain from `x0` and returns the retained states as rows.
pub fn run_sgld_chain<R: Rng + ?Sized>(
    target: &Target,
    x0: ArrayView1<f64>,
    config: &SgldConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    check_dim(target.dim(), x0.len())?;
    if config.thin == 0 {
        return Err(Error::invalid("SGLD thinning interval must be at least 1"));
    }
    let mut x = x0.to_owned();
    let mut kept = Vec::new();
    for t in 0..config.steps {
        let batch = target.draw_minibatch(config.minibatch, rng);
        let view = target.view(batch.as_deref());
        x = sgld_step(&view, x.view(), t, rng)?;
        if t >= config.burn_in && (t - config.burn_in) % config.thin == config.thin - 1 {
            kept.extend(x.iter().copied());
        }
    }
    let rows = kept.len() / x.len().max(1);
    Ok(Array2::from_shape_vec((rows, x.len()), kept).expect("rows are whole"))
}

/// Independent chains, one per row of `starts`, each contributing its final state.
pub fn run_sgld_final_states<R: Rng + ?Sized>(
    target: &Target,
    starts: &Array2<f64>,
    steps: usize,
    minibatch: Option<usize>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    check_dim(target.dim(), starts.ncols())?;
    let mut out = starts.clone();
    for mut row in out.rows_mut() {
        let mut x = row.to_owned();
        for t in 0..steps {
            let batch = target.draw_minibatch(minibatch, rng);
            let view = target.view(batch.as_deref());
            x = sgld_step(&view, x.view(), t, rng)?;
        }
        row.assign(&x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_particle_follows_score() {
        let t = Target::isotropic(array![1.0, -2.0], 1.0).unwrap();
        let k = SteinKernel::rbf(1.0).unwrap();
        let p = ParticleSet::new(array![[0.5, 0.5]]).unwrap();
        let next = svgd_step(&t, &k, &p, 0.1).unwrap();
        let s = t.score(array![0.5, 0.5].view()).unwrap();
        assert_eq!(next.positions.row(0).to_owned(), &array![0.5, 0.5] + &(s * 0.1));
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn zero_step_is_identity() {
        let t = Target::standard_normal(2);
        let k = SteinKernel::rbf(1.0).unwrap();
        let p = ParticleSet::new(array![[0.5, 0.5], [1.0, -3.0], [2.0, 0.0]]).unwrap();
        assert_eq!(svgd_step(&t, &k, &p, 0.0).unwrap().positions, p.positions);
        assert!(svgd_step(&t, &k, &p, -1.0).is_err());
    }

    #[test]
    fn coincident_particles_move_together() {
        let t = Target::standard_normal(2);
        let k = SteinKernel::rbf(1.0).unwrap();
        let p = ParticleSet::new(array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let next = svgd_step(&t, &k, &p, 0.3).unwrap();
        assert_eq!(next.positions.row(0), next.positions.row(1));
    }

    #[test]
    fn step_size_schedule() {
        assert_eq!(sgld_step_size(0), 0.1);
        let mut prev = f64::INFINITY;
        for t in 0..1000 {
            let e = sgld_step_size(t);
            assert!(e > 0.0 && e < prev);
            prev = e;
        }
        assert!(SGLD_DECAY_EXPONENT < 1.0);
    }

    #[test]
    fn sgld_at_mode_is_pure_noise() {
        let t = Target::standard_normal(1);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let x = sgld_step(&t, array![0.0].view(), 3, &mut a).unwrap();
        let xi: f64 = StandardNormal.sample(&mut b);
        assert_eq!(x[0], sgld_step_size(3).sqrt() * xi);
    }

    #[test]
    fn chain_thinning_counts() {
        let t = Target::standard_normal(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SgldConfig {
            steps: 100,
            burn_in: 50,
            thin: 5,
            minibatch: None,
        };
        let kept = run_sgld_chain(&t, array![0.0].view(), &cfg, &mut rng).unwrap();
        assert_eq!(kept.dim(), (10, 1));
    }
}
