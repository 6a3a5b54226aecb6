//! Reference noise laws fed to generators.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// Independent `Uniform(−a, a)` coordinates.
    Uniform { half_width: f64 },
    /// Independent `N(0, σ²)` coordinates.
    Gaussian { sd: f64 },
}

impl Default for Noise {
    fn default() -> Self {
        Noise::Uniform { half_width: 10.0 }
    }
}

impl Noise {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Noise::Uniform { half_width } if !(half_width > 0.0) => {
                Err(Error::invalid(format!("uniform noise half-width must be positive, got {half_width}")))
            }
            Noise::Gaussian { sd } if !(sd > 0.0) => {
                Err(Error::invalid(format!("gaussian noise sd must be positive, got {sd}")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, dim: usize, rng: &mut R) -> Array2<f64> {
        match *self {
            Noise::Uniform { half_width } => {
                Array2::from_shape_simple_fn((n, dim), || rng.random_range(-half_width..half_width))
            }
            Noise::Gaussian { sd } => Array2::from_shape_simple_fn((n, dim), || {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }),
        }
    }

    /// Largest possible noise norm in `dim` dimensions, if bounded.
    pub fn norm_bound(&self, dim: usize) -> Option<f64> {
        match *self {
            Noise::Uniform { half_width } => Some(half_width * (dim as f64).sqrt()),
            Noise::Gaussian { .. } => None,
        }
    }
}
