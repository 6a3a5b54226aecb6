//! Un-normalized target densities with analytic scores and score Jacobians.
//!
//! Log densities are only defined up to an additive constant. Every target
//! exposes `S_q(x) = ∇ log q(x)` and its Jacobian (the Hessian of `log q`);
//! finite differences are a test oracle, never a runtime path.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Anything exposing a score function. Implemented by [`Target`] and by
/// minibatch views of the logistic posterior.
pub trait ScoreModel {
    fn dim(&self) -> usize;
    fn log_density_unnorm(&self, x: ArrayView1<f64>) -> Result<f64>;
    fn score(&self, x: ArrayView1<f64>) -> Result<Array1<f64>>;
    fn score_jacobian(&self, x: ArrayView1<f64>) -> Result<Array2<f64>>;

    /// `(∇ₓ S_q(x)) v`. Targets with cheap Hessian-vector products override this.
    fn score_jacobian_vec(&self, x: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.dim(), v.len())?;
        Ok(self.score_jacobian(x)?.dot(&v))
    }

    /// Row-wise scores of a `n × d` batch.
    fn score_batch(&self, xs: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim(self.dim(), xs.ncols())?;
        let mut out = Array2::zeros(xs.raw_dim());
        for (i, row) in xs.outer_iter().enumerate() {
            out.row_mut(i).assign(&self.score(row)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: Array1<f64>,
    precision: Array2<f64>,
    chol: Array2<f64>,
    log_det_cov: f64,
}

impl GaussianComponent {
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        let chol = linalg::cholesky(&cov)?;
        Ok(GaussianComponent {
            precision: linalg::cholesky_inverse(&chol),
            log_det_cov: linalg::cholesky_log_det(&chol),
            mean,
            chol,
        })
    }

    pub fn isotropic(mean: Array1<f64>, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::invalid(format!("variance must be positive, got {var}")));
        }
        let d = mean.len();
        Self::new(mean, Array2::eye(d) * var)
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &Array2<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> Array2<f64> {
        self.chol.dot(&self.chol.t())
    }

    /// `−½ (x−μ)ᵀ Σ⁻¹ (x−μ)`.
    fn quad(&self, x: ArrayView1<f64>) -> f64 {
        let r = &x - &self.mean;
        -0.5 * r.dot(&self.precision.dot(&r))
    }

    fn score(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let r = &x - &self.mean;
        -self.precision.dot(&r)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let xi: Array1<f64> = (0..self.mean.len()).map(|_| StandardNormal.sample(rng)).collect();
        &self.mean + &self.chol.dot(&xi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    log_weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl Mixture {
    pub fn new(weights: &[f64], components: Vec<GaussianComponent>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::invalid("mixture needs one positive weight per component"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let d = components[0].mean.len();
        for c in &components {
            check_dim(d, c.mean.len())?;
        }
        Ok(Mixture {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            components,
        })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    fn log_terms(&self, x: ArrayView1<f64>) -> Vec<f64> {
        self.log_weights
            .iter()
            .zip(&self.components)
            .map(|(lw, c)| lw + c.quad(x) - 0.5 * c.log_det_cov)
            .collect()
    }

    /// Posterior component probabilities at `x`, computed in log space.
    fn responsibilities(&self, x: ArrayView1<f64>) -> (Vec<f64>, f64) {
        let terms = self.log_terms(x);
        let lse = log_sum_exp(&terms);
        (terms.iter().map(|t| (t - lse).exp()).collect(), lse)
    }

    fn score(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let (resp, _) = self.responsibilities(x);
        let mut s = Array1::zeros(x.len());
        for (r, c) in resp.iter().zip(&self.components) {
            s.scaled_add(*r, &c.score(x));
        }
        s
    }

    /// `Σ r_k (−P_k) + Σ r_k s_k s_kᵀ − S Sᵀ`.
    fn score_jacobian(&self, x: ArrayView1<f64>) -> Array2<f64> {
        let (resp, _) = self.responsibilities(x);
        let d = x.len();
        let mut jac = Array2::zeros((d, d));
        let mut total = Array1::zeros(d);
        for (r, c) in resp.iter().zip(&self.components) {
            let s = c.score(x);
            jac.scaled_add(-r, &c.precision);
            let outer = outer(&s, &s);
            jac.scaled_add(*r, &outer);
            total.scaled_add(*r, &s);
        }
        jac - outer(&total, &total)
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Binary-labelled data with a fixed train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    /// Labels in `{−1, +1}`.
    pub labels: Array1<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Array1<f64>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        check_dim(features.nrows(), labels.len())?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid("labels must be -1 or +1"));
        }
        let n = labels.len();
        if train.iter().chain(&test).any(|&i| i >= n) {
            return Err(Error::invalid("split index out of range"));
        }
        Ok(LabeledDataset {
            features,
            labels,
            train,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> (Array2<f64>, Array1<f64>) {
        (
            self.features.select(Axis(0), rows),
            self.labels.select(Axis(0), rows),
        )
    }
}

/// Bayesian logistic regression posterior over `(w, log α)` with
/// `w | α ~ N(0, α⁻¹ I)` and `α ~ Gamma(shape, rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticPosterior {
    features: Array2<f64>,
    labels: Array1<f64>,
    prior_shape: f64,
    prior_rate: f64,
}

impl LogisticPosterior {
    pub const DEFAULT_SHAPE: f64 = 1.0;
    pub const DEFAULT_RATE: f64 = 0.01;

    pub fn new(features: Array2<f64>, labels: Array1<f64>, prior_shape: f64, prior_rate: f64) -> Result<Self> {
        check_dim(features.nrows(), labels.len())?;
        if features.nrows() == 0 {
            return Err(Error::invalid("logistic posterior needs at least one observation"));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid("labels must be -1 or +1"));
        }
        if !(prior_shape > 0.0 && prior_rate > 0.0) {
            return Err(Error::invalid("Gamma prior parameters must be positive"));
        }
        Ok(LogisticPosterior {
            features,
            labels,
            prior_shape,
            prior_rate,
        })
    }

    /// Posterior over the training split of `data`, default hyperprior.
    pub fn from_dataset(data: &LabeledDataset) -> Result<Self> {
        let (x, y) = data.subset(&data.train);
        Self::new(x, y, Self::DEFAULT_SHAPE, Self::DEFAULT_RATE)
    }

    pub fn n_obs(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    fn split<'a>(&self, x: &'a ArrayView1<'a, f64>) -> (ArrayView1<'a, f64>, f64) {
        let p = self.n_features();
        (x.slice(ndarray::s![..p]), x[p])
    }

    fn check_batch(&self, batch: &[usize]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("minibatch is empty"));
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= self.n_obs()) {
            return Err(Error::invalid(format!("minibatch index {i} out of range")));
        }
        Ok(())
    }

    fn scale(&self, batch: Option<&[usize]>) -> f64 {
        batch.map_or(1.0, |b| self.n_obs() as f64 / b.len() as f64)
    }

    fn for_rows(&self, batch: Option<&[usize]>, mut f: impl FnMut(ArrayView1<f64>, f64)) {
        match batch {
            Some(rows) => rows
                .iter()
                .for_each(|&i| f(self.features.row(i), self.labels[i])),
            None => self
                .features
                .outer_iter()
                .zip(self.labels.iter())
                .for_each(|(row, &y)| f(row, y)),
        }
    }

    pub fn log_density(&self, x: ArrayView1<f64>, batch: Option<&[usize]>) -> Result<f64> {
        check_dim(self.n_features() + 1, x.len())?;
        if let Some(b) = batch {
            self.check_batch(b)?;
        }
        let (w, log_alpha) = self.split(&x);
        let mut loglik = 0.0;
        self.for_rows(batch, |row, y| loglik -= softplus(-y * row.dot(&w)));
        let alpha = log_alpha.exp();
        let p = self.n_features() as f64;
        let prior = 0.5 * p * log_alpha - 0.5 * alpha * w.dot(&w) + self.prior_shape * log_alpha
            - self.prior_rate * alpha;
        Ok(self.scale(batch) * loglik + prior)
    }

    pub fn score(&self, x: ArrayView1<f64>, batch: Option<&[usize]>) -> Result<Array1<f64>> {
        check_dim(self.n_features() + 1, x.len())?;
        if let Some(b) = batch {
            self.check_batch(b)?;
        }
        let p = self.n_features();
        let (w, log_alpha) = self.split(&x);
        let mut g = Array1::<f64>::zeros(p);
        self.for_rows(batch, |row, y| {
            let z = y * row.dot(&w);
            g.scaled_add(y * sigmoid(-z), &row);
        });
        g *= self.scale(batch);
        let alpha = log_alpha.exp();
        g.scaled_add(-alpha, &w);
        let mut out = Array1::zeros(p + 1);
        out.slice_mut(ndarray::s![..p]).assign(&g);
        out[p] = 0.5 * p as f64 + self.prior_shape - alpha * (0.5 * w.dot(&w) + self.prior_rate);
        Ok(out)
    }

    pub fn score_jacobian(&self, x: ArrayView1<f64>, batch: Option<&[usize]>) -> Result<Array2<f64>> {
        check_dim(self.n_features() + 1, x.len())?;
        if let Some(b) = batch {
            self.check_batch(b)?;
        }
        let p = self.n_features();
        let (w, log_alpha) = self.split(&x);
        let mut h = Array2::<f64>::zeros((p + 1, p + 1));
        {
            let mut hw = h.slice_mut(ndarray::s![..p, ..p]);
            let s = self.scale(batch);
            self.for_rows(batch, |row, y| {
                let z = y * row.dot(&w);
                let c = -s * sigmoid(z) * sigmoid(-z);
                for a in 0..p {
                    let ca = c * row[a];
                    for b in 0..p {
                        hw[[a, b]] += ca * row[b];
                    }
                }
            });
        }
        let alpha = log_alpha.exp();
        for a in 0..p {
            h[[a, a]] -= alpha;
            h[[a, p]] = -alpha * w[a];
            h[[p, a]] = -alpha * w[a];
        }
        h[[p, p]] = -alpha * (0.5 * w.dot(&w) + self.prior_rate);
        Ok(h)
    }

    pub fn score_jacobian_vec(
        &self,
        x: ArrayView1<f64>,
        v: ArrayView1<f64>,
        batch: Option<&[usize]>,
    ) -> Result<Array1<f64>> {
        check_dim(self.n_features() + 1, x.len())?;
        check_dim(self.n_features() + 1, v.len())?;
        if let Some(b) = batch {
            self.check_batch(b)?;
        }
        let p = self.n_features();
        let (w, log_alpha) = self.split(&x);
        let (vw, vu) = (v.slice(ndarray::s![..p]), v[p]);
        let mut out = Array1::<f64>::zeros(p + 1);
        {
            let mut ow = out.slice_mut(ndarray::s![..p]);
            let s = self.scale(batch);
            self.for_rows(batch, |row, y| {
                let z = y * row.dot(&w);
                let c = -s * sigmoid(z) * sigmoid(-z) * row.dot(&vw);
                ow.scaled_add(c, &row);
            });
        }
        let alpha = log_alpha.exp();
        for a in 0..p {
            out[a] += -alpha * vw[a] - alpha * w[a] * vu;
        }
        out[p] = -alpha * w.dot(&vw) - alpha * (0.5 * w.dot(&w) + self.prior_rate) * vu;
        Ok(out)
    }
}

fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// `N(μ, σ²I)` with `log q = −‖x−μ‖²/(2σ²)`.
    IsotropicGaussian { mean: Array1<f64>, var: f64 },
    Gaussian(GaussianComponent),
    Mixture(Mixture),
    Logistic(LogisticPosterior),
}

impl Target {
    pub fn isotropic(mean: Array1<f64>, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::invalid(format!("variance must be positive, got {var}")));
        }
        Ok(Target::IsotropicGaussian { mean, var })
    }

    pub fn standard_normal(dim: usize) -> Self {
        Target::IsotropicGaussian {
            mean: Array1::zeros(dim),
            var: 1.0,
        }
    }

    pub fn gaussian(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        Ok(Target::Gaussian(GaussianComponent::new(mean, cov)?))
    }

    /// Eight isotropic components with weight ⅛ at angles `2πk/8`, the first on the positive first axis.
    pub fn ring8(radius: f64, component_sd: f64) -> Result<Self> {
        if !(radius > 0.0 && component_sd > 0.0) {
            return Err(Error::invalid("ring radius and component sd must be positive"));
        }
        let components = ring8_modes(radius)
            .into_iter()
            .map(|m| GaussianComponent::isotropic(m, component_sd * component_sd))
            .collect::<Result<Vec<_>>>()?;
        Ok(Target::Mixture(Mixture::new(&[0.125; 8], components)?))
    }

    /// Equal mixture of two zero-mean bivariate normals with correlation `±rho`.
    pub fn cross_mixture(rho: f64) -> Result<Self> {
        let plus = GaussianComponent::new(Array1::zeros(2), ndarray::array![[1.0, rho], [rho, 1.0]])?;
        let minus = GaussianComponent::new(Array1::zeros(2), ndarray::array![[1.0, -rho], [-rho, 1.0]])?;
        Ok(Target::Mixture(Mixture::new(&[0.5, 0.5], vec![plus, minus])?))
    }

    pub fn logistic(posterior: LogisticPosterior) -> Self {
        Target::Logistic(posterior)
    }

    pub fn data_len(&self) -> Option<usize> {
        match self {
            Target::Logistic(p) => Some(p.n_obs()),
            _ => None,
        }
    }

    /// Random minibatch indices (without replacement) for data-backed targets.
    pub fn draw_minibatch<R: Rng + ?Sized>(&self, size: Option<usize>, rng: &mut R) -> Option<Vec<usize>> {
        let n = self.data_len()?;
        let size = size?;
        if size >= n {
            return None;
        }
        Some(sample_indices(rng, n, size).into_vec())
    }

    /// Score model using `batch` (ignored unless the target is data-backed).
    pub fn view<'a>(&'a self, batch: Option<&'a [usize]>) -> TargetView<'a> {
        TargetView { target: self, batch }
    }

    /// Exact i.i.d. draws for analytic targets.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        match self {
            Target::IsotropicGaussian { mean, var } => {
                let sd = var.sqrt();
                for mut row in out.outer_iter_mut() {
                    for (v, m) in row.iter_mut().zip(mean) {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = m + sd * z;
                    }
                }
            }
            Target::Gaussian(g) => {
                for mut row in out.outer_iter_mut() {
                    row.assign(&g.sample(rng));
                }
            }
            Target::Mixture(m) => {
                let weights = m.weights();
                let dist = rand::distr::weighted::WeightedIndex::new(&weights)
                    .map_err(|e| Error::invalid(e.to_string()))?;
                for mut row in out.outer_iter_mut() {
                    let k = dist.sample(rng);
                    row.assign(&m.components[k].sample(rng));
                }
            }
            Target::Logistic(_) => {
                return Err(Error::invalid("exact sampling is not available for the logistic posterior"))
            }
        }
        Ok(out)
    }

    /// Analytic mean, where available.
    pub fn mean(&self) -> Option<Array1<f64>> {
        match self {
            Target::IsotropicGaussian { mean, .. } => Some(mean.clone()),
            Target::Gaussian(g) => Some(g.mean.clone()),
            Target::Mixture(m) => {
                let mut mu = Array1::zeros(self.dim());
                for (w, c) in m.weights().iter().zip(&m.components) {
                    mu.scaled_add(*w, &c.mean);
                }
                Some(mu)
            }
            Target::Logistic(_) => None,
        }
    }

    /// Analytic per-coordinate variances, where available.
    pub fn marginal_variances(&self) -> Option<Array1<f64>> {
        let mean = self.mean()?;
        match self {
            Target::IsotropicGaussian { var, .. } => Some(Array1::from_elem(self.dim(), *var)),
            Target::Gaussian(g) => Some(g.covariance().diag().to_owned()),
            Target::Mixture(m) => {
                let mut second = Array1::<f64>::zeros(self.dim());
                for (w, c) in m.weights().iter().zip(&m.components) {
                    let cov = c.covariance();
                    for i in 0..self.dim() {
                        second[i] += w * (cov[[i, i]] + c.mean[i] * c.mean[i]);
                    }
                }
                Some(second - mean.mapv(|v| v * v))
            }
            Target::Logistic(_) => None,
        }
    }

    /// Component means of a mixture (used as mode probes).
    pub fn modes(&self) -> Vec<Array1<f64>> {
        match self {
            Target::Mixture(m) => m.components.iter().map(|c| c.mean.clone()).collect(),
            Target::IsotropicGaussian { mean, .. } => vec![mean.clone()],
            Target::Gaussian(g) => vec![g.mean.clone()],
            Target::Logistic(_) => Vec::new(),
        }
    }
}

/// Probe points on the two ridges of the cross mixture, one per component.
/// Both components are centered at the origin, so their means cannot tell
/// the ridges apart.
pub fn cross_mixture_probes() -> Vec<Array1<f64>> {
    vec![ndarray::array![1.5, 1.5], ndarray::array![-1.5, 1.5]]
}

pub fn ring8_modes(radius: f64) -> Vec<Array1<f64>> {
    (0..8)
        .map(|k| {
            let angle = 2.0 * PI * k as f64 / 8.0;
            ndarray::array![radius * angle.cos(), radius * angle.sin()]
        })
        .collect()
}

impl ScoreModel for Target {
    fn dim(&self) -> usize {
        match self {
            Target::IsotropicGaussian { mean, .. } => mean.len(),
            Target::Gaussian(g) => g.mean.len(),
            Target::Mixture(m) => m.components[0].mean.len(),
            Target::Logistic(p) => p.n_features() + 1,
        }
    }

    fn log_density_unnorm(&self, x: ArrayView1<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Target::IsotropicGaussian { mean, var } => {
                let r = &x - mean;
                -r.dot(&r) / (2.0 * var)
            }
            Target::Gaussian(g) => g.quad(x),
            Target::Mixture(m) => log_sum_exp(&m.log_terms(x)),
            Target::Logistic(p) => p.log_density(x, None)?,
        })
    }

    fn score(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Target::IsotropicGaussian { mean, var } => (mean - &x) / *var,
            Target::Gaussian(g) => g.score(x),
            Target::Mixture(m) => m.score(x),
            Target::Logistic(p) => p.score(x, None)?,
        })
    }

    fn score_jacobian(&self, x: ArrayView1<f64>) -> Result<Array2<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Target::IsotropicGaussian { var, .. } => Array2::eye(x.len()) * (-1.0 / var),
            Target::Gaussian(g) => -g.precision.clone(),
            Target::Mixture(m) => m.score_jacobian(x),
            Target::Logistic(p) => p.score_jacobian(x, None)?,
        })
    }

    fn score_jacobian_vec(&self, x: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        match self {
            Target::Logistic(p) => p.score_jacobian_vec(x, v, None),
            _ => {
                check_dim(self.dim(), v.len())?;
                Ok(self.score_jacobian(x)?.dot(&v))
            }
        }
    }
}

/// A target paired with an optional minibatch; for the logistic posterior the
/// likelihood terms are summed over the batch and rescaled by `N/|batch|`.
#[derive(Debug, Clone, Copy)]
pub struct TargetView<'a> {
    pub target: &'a Target,
    pub batch: Option<&'a [usize]>,
}

impl ScoreModel for TargetView<'_> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density_unnorm(&self, x: ArrayView1<f64>) -> Result<f64> {
        match (self.target, self.batch) {
            (Target::Logistic(p), Some(b)) => p.log_density(x, Some(b)),
            _ => self.target.log_density_unnorm(x),
        }
    }

    fn score(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        match (self.target, self.batch) {
            (Target::Logistic(p), Some(b)) => p.score(x, Some(b)),
            _ => self.target.score(x),
        }
    }

    fn score_jacobian(&self, x: ArrayView1<f64>) -> Result<Array2<f64>> {
        match (self.target, self.batch) {
            (Target::Logistic(p), Some(b)) => p.score_jacobian(x, Some(b)),
            _ => self.target.score_jacobian(x),
        }
    }

    fn score_jacobian_vec(&self, x: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        match (self.target, self.batch) {
            (Target::Logistic(p), Some(b)) => p.score_jacobian_vec(x, v, Some(b)),
            _ => self.target.score_jacobian_vec(x, v),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_score_err(t: &impl ScoreModel, x: &Array1<f64>) -> f64 {
        let s = t.score(x.view()).unwrap();
        finite_difference_check(
            |p| t.log_density_unnorm(ArrayView1::from(p)).unwrap(),
            x.as_slice().unwrap(),
            1e-5,
            s.as_slice().unwrap(),
        )
        .unwrap()
    }

    fn fd_jacobian_err(t: &impl ScoreModel, x: &Array1<f64>) -> f64 {
        let jac = t.score_jacobian(x.view()).unwrap();
        let mut worst = 0.0f64;
        for row in 0..t.dim() {
            let g = jac.row(row).to_vec();
            let e = finite_difference_check(
                |p| t.score(ArrayView1::from(p)).unwrap()[row],
                x.as_slice().unwrap(),
                1e-5,
                &g,
            )
            .unwrap();
            worst = worst.max(e);
        }
        worst
    }

    #[test]
    fn standard_normal_basics() {
        let t = Target::standard_normal(1);
        assert_eq!(t.log_density_unnorm(array![0.0].view()).unwrap(), 0.0);
        assert_eq!(t.score_jacobian(array![3.0].view()).unwrap(), array![[-1.0]]);
        assert!(t.score(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn shifted_normal_score_and_mode() {
        let mu = array![1.0, -2.0];
        let t = Target::isotropic(mu.clone(), 1.0).unwrap();
        assert_eq!(t.score(mu.view()).unwrap(), array![0.0, 0.0]);
        assert_eq!(t.score(array![0.0, 0.0].view()).unwrap(), mu);
        let at_mode = t.log_density_unnorm(mu.view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probes = Target::standard_normal(2).sample(50, &mut rng).unwrap();
        for p in probes.outer_iter() {
            assert!(t.log_density_unnorm(p).unwrap() <= at_mode);
        }
    }

    #[test]
    fn full_gaussian_jacobian_is_minus_precision() {
        let cov = array![[2.0, 0.5], [0.5, 1.0]];
        let t = Target::gaussian(array![0.0, 0.0], cov.clone()).unwrap();
        let jac = t.score_jacobian(array![0.3, 0.1].view()).unwrap();
        let prod = jac.dot(&cov);
        assert!((prod[[0, 0]] + 1.0).abs() < 1e-12 && prod[[0, 1]].abs() < 1e-12);
        assert!(Target::gaussian(array![0.0, 0.0], array![[1.0, 2.0], [2.0, 1.0]]).is_err());
    }

    #[test]
    fn cross_mixture_density_and_symmetry() {
        let t = Target::cross_mixture(0.8).unwrap();
        // Oracle: both correlated densities at the origin equal 1/(2π·0.6).
        let dens = 1.0 / (2.0 * PI * 0.6);
        let expected = (0.5 * dens + 0.5 * dens).ln() + (2.0 * PI).ln();
        let got = t.log_density_unnorm(array![0.0, 0.0].view()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert_eq!(t.score(array![0.0, 0.0].view()).unwrap(), array![0.0, 0.0]);

        // Direct density oracle at an off-origin point.
        let x = array![0.7, -0.2];
        let dens_at = |rho: f64| {
            let det = 1.0 - rho * rho;
            let q = (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / det;
            (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
        };
        let expected = (0.5 * dens_at(0.8) + 0.5 * dens_at(-0.8)).ln() + (2.0 * PI).ln();
        assert!((t.log_density_unnorm(x.view()).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ring8_geometry_and_moments() {
        let t = Target::ring8(15.0, 1.0).unwrap();
        let modes = t.modes();
        assert_eq!(modes.len(), 8);
        assert!((modes[0][0] - 15.0).abs() < 1e-12 && modes[0][1].abs() < 1e-12);
        let mean = t.mean().unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
        let var = t.marginal_variances().unwrap();
        assert!((var[0] - 113.5).abs() < 1e-9 && (var[1] - 113.5).abs() < 1e-9);
        assert!(Target::ring8(0.0, 1.0).is_err());
        // Far from every mode the log density must stay finite.
        assert!(t.log_density_unnorm(array![200.0, -300.0].view()).unwrap().is_finite());
    }

    #[test]
    fn mixture_weights_validated() {
        let c = || GaussianComponent::isotropic(array![0.0], 1.0).unwrap();
        assert!(Mixture::new(&[0.5, 0.4], vec![c(), c()]).is_err());
        assert!(Mixture::new(&[1.5, -0.5], vec![c(), c()]).is_err());
        assert!(Mixture::new(&[1.0], vec![c(), c()]).is_err());
    }

    #[test]
    fn scores_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let targets = vec![
            Target::isotropic(array![1.0, -1.0], 2.0).unwrap(),
            Target::gaussian(array![0.5, 0.0], array![[1.5, 0.3], [0.3, 0.7]]).unwrap(),
            Target::cross_mixture(0.8).unwrap(),
            Target::ring8(3.0, 1.0).unwrap(),
        ];
        for t in &targets {
            for _ in 0..50 {
                let x: Array1<f64> = (0..t.dim()).map(|_| rng.random_range(-4.0..4.0)).collect();
                assert!(fd_score_err(t, &x) < 1e-5);
                let jac = t.score_jacobian(x.view()).unwrap();
                for i in 0..t.dim() {
                    for j in 0..t.dim() {
                        assert!((jac[[i, j]] - jac[[j, i]]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn ring_jacobian_matches_finite_differences() {
        let t = Target::ring8(15.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = array![rng.random_range(-18.0..18.0), rng.random_range(-18.0..18.0)];
            assert!(fd_jacobian_err(&t, &x) < 1e-4);
        }
    }

    fn synthetic_posterior(n: usize, p: usize, seed: u64) -> LogisticPosterior {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, p), || rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |i| if (x[[i, 0]] + 0.3 * rng.random::<f64>()) > 0.1 { 1.0 } else { -1.0 });
        LogisticPosterior::new(x, y, 1.0, 0.01).unwrap()
    }

    #[test]
    fn logistic_symmetric_data_zero_likelihood_gradient() {
        let x = array![[1.0, 2.0], [-1.0, -2.0]];
        let y = array![1.0, -1.0];
        // y·x is identical for the pair, so use x and −x with equal labels instead.
        let post = LogisticPosterior::new(x.clone(), array![1.0, 1.0], 1.0, 0.01).unwrap();
        let s = post.score(array![0.0, 0.0, 0.0].view(), None).unwrap();
        assert!(s[0].abs() < 1e-15 && s[1].abs() < 1e-15);
        let post = LogisticPosterior::new(x, y, 1.0, 0.01).unwrap();
        assert!(post.score(array![0.0, 0.0, 0.0].view(), Some(&[])).is_err());
    }

    #[test]
    fn logistic_score_and_jacobian_match_finite_differences() {
        let post = synthetic_posterior(20, 3, 4);
        let t = Target::logistic(post);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Array1<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            assert!(fd_score_err(&t, &x) < 1e-5);
            assert!(fd_jacobian_err(&t, &x) < 1e-4);
            let v: Array1<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let jv = t.score_jacobian_vec(x.view(), v.view()).unwrap();
            let direct = t.score_jacobian(x.view()).unwrap().dot(&v);
            assert!((&jv - &direct).iter().all(|e| e.abs() < 1e-10));
        }
    }

    #[test]
    fn minibatch_score_is_unbiased_exhaustively() {
        let post = synthetic_posterior(6, 2, 6);
        let x = array![0.4, -0.7, 0.2];
        let full = post.score(x.view(), None).unwrap();
        let mut acc = Array1::<f64>::zeros(3);
        let mut count = 0.0;
        for i in 0..6 {
            for j in i + 1..6 {
                acc += &post.score(x.view(), Some(&[i, j])).unwrap();
                count += 1.0;
            }
        }
        acc /= count;
        assert!((&acc - &full).iter().all(|e| e.abs() < 1e-12), "{acc} vs {full}");
    }

    #[test]
    fn sampling_matches_moments() {
        let t = Target::ring8(15.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs = t.sample(20000, &mut rng).unwrap();
        let m = xs.mean_axis(Axis(0)).unwrap();
        assert!(m[0].abs() < 0.5 && m[1].abs() < 0.5);
        let v = xs.var_axis(Axis(0), 0.0);
        assert!((v[0] - 113.5).abs() < 5.0);
    }
}
