//! Neural samplers trained with Stein discrepancies, plus the particle
//! baselines and evaluation metrics used to compare them.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod evalsuite;
pub mod fisher;
pub mod kernels;
pub mod linalg;
pub mod networks;
pub mod noise;
pub mod stein;
pub mod targets;

pub use error::{Error, Result};
pub use kernels::{KernelSpec, SteinKernel};
pub use networks::{Activation, Mlp, RmsProp};
pub use noise::Noise;
pub use targets::{ScoreModel, Target};
