//! Multilayer perceptrons used as generators and discriminators, plus the
//! RMSProp optimizer and weight clipping.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

/// Gradients (or any per-parameter quantity) shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.weights.iter_mut().for_each(|w| w.mapv_inplace(|v| c * v));
        self.biases.iter_mut().for_each(|b| b.mapv_inplace(|v| c * v));
        self
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
            + self.biases.iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
        sq.sqrt()
    }

    /// Values in the canonical layer order: `W₀` row-major, `b₀`, `W₁`, `b₁`, …
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Tape nodes created by [`Mlp::record`].
#[derive(Debug, Clone)]
pub struct MlpNodes {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
    /// Post-activation value of each hidden layer.
    pub hidden: Vec<NodeId>,
    pub output: NodeId,
}

impl Mlp {
    /// Xavier-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                rng.random_range(-bound..=bound)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn from_parts(
        dims: &[usize],
        activation: Activation,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<Self> {
        validate_dims(dims)?;
        if weights.len() != dims.len() - 1 || biases.len() != dims.len() - 1 {
            return Err(Error::invalid("layer count does not match dims"));
        }
        for (i, pair) in dims.windows(2).enumerate() {
            if weights[i].dim() != (pair[1], pair[0]) || biases[i].len() != pair[1] {
                return Err(Error::shape(
                    "mlp",
                    format!("layer {i} parameters do not match dims {:?}", dims),
                ));
            }
        }
        let mlp = Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
            activation,
        };
        if !mlp.params_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(mlp)
    }

    /// Rebuilds a network from parameters in [`MlpGrads::flatten`] order.
    pub fn from_flat(dims: &[usize], activation: Activation, flat: &[f64]) -> Result<Self> {
        validate_dims(dims)?;
        let expected = param_count(dims);
        if flat.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: flat.len(),
            });
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut offset = 0;
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let n = fan_in * fan_out;
            weights.push(
                Array2::from_shape_vec((fan_out, fan_in), flat[offset..offset + n].to_vec())
                    .expect("sized above"),
            );
            offset += n;
            biases.push(Array1::from(flat[offset..offset + fan_out].to_vec()));
            offset += fan_out;
        }
        Self::from_parts(dims, activation, weights, biases)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.dims)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn param_norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn params_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(
                "mlp_forward",
                format!("input has {} columns, network expects {}", x.ncols(), self.input_dim()),
            ));
        }
        Ok(())
    }

    /// Forward pass on a `batch × in_dim` matrix.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut h = x.to_owned();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut a = h.dot(&w.t());
            a += b;
            if i < last {
                let act = self.activation;
                a.mapv_inplace(|v| act.apply(v));
            }
            h = a;
        }
        Ok(h)
    }

    /// Records the forward pass on `tape` with parameters as variables.
    pub fn record(&self, tape: &mut Tape, x: NodeId) -> Result<MlpNodes> {
        self.check_input(tape.value(x))?;
        let last = self.weights.len() - 1;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut hidden = Vec::new();
        let mut h = x;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wn = tape.variable(w.clone());
            let bn = tape.variable(b.clone().insert_axis(Axis(0)));
            weights.push(wn);
            biases.push(bn);
            let a = tape.affine(h, wn, Some(bn))?;
            h = if i < last {
                let out = match self.activation {
                    Activation::Tanh => tape.tanh(a)?,
                    Activation::Relu => tape.relu(a)?,
                };
                hidden.push(out);
                out
            } else {
                a
            };
        }
        Ok(MlpNodes {
            weights,
            biases,
            hidden,
            output: h,
        })
    }

    /// Collects parameter gradients from a reverse pass over nodes made by [`Mlp::record`].
    pub fn collect_grads(&self, grads: &crate::autodiff::Gradients, nodes: &MlpNodes) -> MlpGrads {
        MlpGrads {
            weights: nodes
                .weights
                .iter()
                .zip(&self.weights)
                .map(|(&id, w)| grads.get(id).cloned().unwrap_or_else(|| Array2::zeros(w.raw_dim())))
                .collect(),
            biases: nodes
                .biases
                .iter()
                .zip(&self.biases)
                .map(|(&id, b)| {
                    grads
                        .get(id)
                        .map(|g| g.row(0).to_owned())
                        .unwrap_or_else(|| Array1::zeros(b.raw_dim()))
                })
                .collect(),
        }
    }

    /// Gradients of `⟨seed, G(X)⟩` with respect to parameters and to `X`.
    pub fn backward(&self, x: &Array2<f64>, output_seed: &Array2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        let mut tape = Tape::new();
        let xn = tape.variable(x.to_owned());
        let nodes = self.record(&mut tape, xn)?;
        if tape.value(nodes.output).dim() != output_seed.dim() {
            return Err(Error::shape(
                "mlp_backward",
                format!(
                    "seed is {}x{}, output is {}x{}",
                    output_seed.nrows(),
                    output_seed.ncols(),
                    x.nrows(),
                    self.output_dim()
                ),
            ));
        }
        let grads = tape.backward(nodes.output, output_seed)?;
        let input_grads = grads.get_or_zeros(xn, x);
        Ok((self.collect_grads(&grads, &nodes), input_grads))
    }

    /// Clamps every weight and bias into `[−c, c]`.
    pub fn clip_weights(&mut self, c: f64) -> Result<()> {
        if !(c > 0.0) {
            return Err(Error::invalid(format!("clip range must be positive, got {c}")));
        }
        for w in &mut self.weights {
            w.mapv_inplace(|v| v.clamp(-c, c));
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v.clamp(-c, c));
        }
        Ok(())
    }

    /// Upper bound on the input Lipschitz constant: product of the layers'
    /// Frobenius norms (activations are 1-Lipschitz).
    pub fn lipschitz_bound(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>().sqrt())
            .product()
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid(format!(
            "network needs at least input and output dims, got {dims:?}"
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

/// RMSProp: `v ← ρv + (1−ρ)g²`, `θ ← θ − lr·g/(√v + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub decay: f64,
    pub epsilon: f64,
    accumulators: MlpGrads,
}

impl RmsProp {
    pub const DEFAULT_DECAY: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(mlp: &Mlp, decay: f64, epsilon: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::invalid(format!("RMSProp decay must lie in (0,1), got {decay}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("RMSProp epsilon must be positive, got {epsilon}")));
        }
        Ok(RmsProp {
            decay,
            epsilon,
            accumulators: MlpGrads::zeros_like(mlp),
        })
    }

    pub fn with_defaults(mlp: &Mlp) -> Self {
        Self::new(mlp, Self::DEFAULT_DECAY, Self::DEFAULT_EPSILON).expect("defaults are valid")
    }

    /// Restores accumulators (e.g. from a checkpoint), in flatten order.
    pub fn from_flat(mlp: &Mlp, decay: f64, epsilon: f64, flat: &[f64]) -> Result<Self> {
        let acc = Mlp::from_flat(mlp.dims(), mlp.activation(), flat)?;
        if flat.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid("negative RMSProp accumulator"));
        }
        let mut state = Self::new(mlp, decay, epsilon)?;
        state.accumulators = MlpGrads {
            weights: acc.weights,
            biases: acc.biases,
        };
        Ok(state)
    }

    pub fn accumulators(&self) -> &MlpGrads {
        &self.accumulators
    }

    /// Descends along `grads`. Non-finite gradients abort without touching state.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads, learning_rate: f64) -> Result<()> {
        if grads.weights.len() != mlp.weights.len()
            || grads
                .weights
                .iter()
                .zip(&mlp.weights)
                .any(|(g, w)| g.dim() != w.dim())
            || grads
                .biases
                .iter()
                .zip(&mlp.biases)
                .any(|(g, b)| g.len() != b.len())
        {
            return Err(Error::shape("rmsprop_step", "gradient shapes do not match network"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to RMSProp".into()));
        }
        let (rho, eps) = (self.decay, self.epsilon);
        let update = |p: &mut f64, v: &mut f64, g: f64| {
            *v = rho * *v + (1.0 - rho) * g * g;
            *p -= learning_rate * g / (v.sqrt() + eps);
        };
        for ((w, v), g) in mlp
            .weights
            .iter_mut()
            .zip(&mut self.accumulators.weights)
            .zip(&grads.weights)
        {
            ndarray::Zip::from(w).and(v).and(g).for_each(|p, v, &g| update(p, v, g));
        }
        for ((b, v), g) in mlp
            .biases
            .iter_mut()
            .zip(&mut self.accumulators.biases)
            .zip(&grads.biases)
        {
            ndarray::Zip::from(b).and(v).and(g).for_each(|p, v, &g| update(p, v, g));
        }
        Ok(())
    }
}
