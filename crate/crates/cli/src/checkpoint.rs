//! Binary checkpoints for trained networks.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "STEINNS\0"
//! version    u32
//! activation u8       0 = tanh, 1 = relu
//! layers     u32      number of entries in dims
//! dims       u64 × layers
//! iteration  u64
//! rng        32-byte seed, u64 stream, u128 word position
//! noise      u8 kind (0 = uniform, 1 = gaussian), f64 scale
//! params     u64 count, f64 × count (W₀ row-major, b₀, W₁, b₁, …)
//! optimizer  u8 present; if 1: f64 decay, f64 epsilon, f64 × count accumulators
//! ```

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use stein_core::networks::{Activation, Mlp, RmsProp};
use stein_core::Noise;

use crate::error::{CliError, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 8] = b"STEINNS\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Mlp,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub noise: Noise,
    pub optimizer: Option<RmsProp>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.network.activation() {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
        let dims = self.network.dims();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        let (kind, scale) = match self.noise {
            Noise::Uniform { half_width } => (0u8, half_width),
            Noise::Gaussian { sd } => (1u8, sd),
        };
        out.push(kind);
        out.extend_from_slice(&scale.to_le_bytes());
        let params = self.network.flatten();
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in &params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.decay.to_le_bytes());
                out.extend_from_slice(&opt.epsilon.to_le_bytes());
                for v in opt.accumulators().flatten() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint file (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version} (expected {VERSION})"));
        }
        let activation = match r.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            other => return Err(format!("unknown activation code {other}")),
        };
        let layers = r.u32()? as usize;
        if !(2..=1024).contains(&layers) {
            return Err(format!("implausible layer count {layers}"));
        }
        let mut dims = Vec::with_capacity(layers);
        for _ in 0..layers {
            dims.push(usize::try_from(r.u64()?).map_err(|_| "layer width overflows")?);
        }
        let iteration = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("length 32");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("length 16"));
        let noise = match (r.u8()?, r.f64()?) {
            (0, s) => Noise::Uniform { half_width: s },
            (1, s) => Noise::Gaussian { sd: s },
            (k, _) => return Err(format!("unknown noise kind {k}")),
        };
        noise.validate().map_err(|e| e.to_string())?;
        let count = r.u64()? as usize;
        let params = r.f64s(count)?;
        let network = Mlp::from_flat(&dims, activation, &params).map_err(|e| e.to_string())?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let decay = r.f64()?;
                let epsilon = r.f64()?;
                let acc = r.f64s(count)?;
                Some(RmsProp::from_flat(&network, decay, epsilon, &acc).map_err(|e| e.to_string())?)
            }
            other => return Err(format!("bad optimizer flag {other}")),
        };
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Checkpoint {
            network,
            iteration,
            rng,
            noise,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated checkpoint at byte {}", self.pos)),
        }
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length 4")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length 8")))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("length 8")))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("parameter count overflows")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("length 8")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn sample_checkpoint() -> Checkpoint {
        let net = Mlp::new(&[2, 7, 3], Activation::Relu, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: f64 = rng.random();
        Checkpoint {
            optimizer: Some(RmsProp::with_defaults(&net)),
            network: net,
            iteration: 42,
            rng,
            noise: Noise::Gaussian { sd: 2.0 },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample_checkpoint();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.network, ck.network);
        assert_eq!(back.iteration, 42);
        assert_eq!(back.noise, ck.noise);
        assert_eq!(back.optimizer, ck.optimizer);
        let mut a = ck.rng.clone();
        let mut b = back.rng.clone();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        let x = Array2::from_shape_fn((5, 2), |(i, j)| i as f64 - 0.7 * j as f64);
        let fa = ck.network.forward(&x).unwrap();
        let fb = back.network.forward(&x).unwrap();
        assert!(fa.iter().zip(&fb).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = sample_checkpoint().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("magic"));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("version"));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().contains("truncated"));
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
