//! Radial kernels `k(x, y) = φ(‖x − y‖²)` with analytic derivatives up to
//! third order, as required by the Stein kernel and its sample gradient.
//!
//! With `r = x − y` and `s = ‖r‖²`:
//!
//! * `∇ₓk = 2φ′ r`, `∇ᵧk = −2φ′ r`
//! * `∇ₓ∇ᵧk = −4φ″ r rᵀ − 2φ′ I`, so `tr ∇ₓ∇ᵧk = −4φ″ s − 2dφ′`
//! * `∇ₓ tr ∇ₓ∇ᵧk = −(8sφ‴ + (8 + 4d)φ″) r`

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteinKernel {
    /// `exp(−‖x−y‖²/h)`.
    Rbf { bandwidth_sq: f64 },
    /// `(c² + ‖x−y‖²)^β` with `c > 0`, `β ∈ (−1, 0)`.
    Imq { c: f64, beta: f64 },
}

/// `φ(s)` and its first three derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radial {
    pub phi: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl SteinKernel {
    pub const IMQ_DEFAULT_C: f64 = 1.0;
    pub const IMQ_DEFAULT_BETA: f64 = -0.5;

    pub fn rbf(bandwidth_sq: f64) -> Result<Self> {
        if !(bandwidth_sq > 0.0 && bandwidth_sq.is_finite()) {
            return Err(Error::invalid(format!("RBF bandwidth must be positive, got {bandwidth_sq}")));
        }
        Ok(SteinKernel::Rbf { bandwidth_sq })
    }

    pub fn imq(c: f64, beta: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::invalid(format!("IMQ c must be positive, got {c}")));
        }
        if !(beta > -1.0 && beta < 0.0) {
            return Err(Error::invalid(format!("IMQ beta must lie in (-1, 0), got {beta}")));
        }
        Ok(SteinKernel::Imq { c, beta })
    }

    pub fn imq_default() -> Self {
        SteinKernel::Imq {
            c: Self::IMQ_DEFAULT_C,
            beta: Self::IMQ_DEFAULT_BETA,
        }
    }

    /// `h` for RBF, `None` for IMQ.
    pub fn bandwidth(&self) -> Option<f64> {
        match self {
            SteinKernel::Rbf { bandwidth_sq } => Some(*bandwidth_sq),
            SteinKernel::Imq { .. } => None,
        }
    }

    #[inline]
    pub fn radial(&self, s: f64) -> Radial {
        match *self {
            SteinKernel::Rbf { bandwidth_sq: h } => {
                let phi = (-s / h).exp();
                Radial {
                    phi,
                    d1: -phi / h,
                    d2: phi / (h * h),
                    d3: -phi / (h * h * h),
                }
            }
            SteinKernel::Imq { c, beta } => {
                let base = c * c + s;
                let phi = base.powf(beta);
                let d1 = beta * phi / base;
                let d2 = (beta - 1.0) * d1 / base;
                let d3 = (beta - 2.0) * d2 / base;
                Radial { phi, d1, d2, d3 }
            }
        }
    }

    fn diff(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(x.len(), y.len())?;
        Ok(&x - &y)
    }

    pub fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        let r = Self::diff(x, y)?;
        Ok(self.radial(r.dot(&r)).phi)
    }

    pub fn grad_x(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        let r = Self::diff(x, y)?;
        let d1 = self.radial(r.dot(&r)).d1;
        Ok(r * (2.0 * d1))
    }

    pub fn grad_y(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(-self.grad_x(x, y)?)
    }

    /// `tr(∇ₓ∇ᵧ k(x, y))`.
    pub fn trace_xy(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        let r = Self::diff(x, y)?;
        let s = r.dot(&r);
        let rad = self.radial(s);
        Ok(-4.0 * rad.d2 * s - 2.0 * r.len() as f64 * rad.d1)
    }

    /// `(∇ₓ∇ᵧk` as a `d×d` matrix with entry `[a, b] = ∂²k/∂x_a∂y_b`, `∇ₓ tr ∇ₓ∇ᵧk)`.
    pub fn grads_of_uq_terms(
        &self,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let r = Self::diff(x, y)?;
        let d = r.len();
        let s = r.dot(&r);
        let rad = self.radial(s);
        let mut cross = Array2::<f64>::eye(d) * (-2.0 * rad.d1);
        for a in 0..d {
            for b in 0..d {
                cross[[a, b]] -= 4.0 * rad.d2 * r[a] * r[b];
            }
        }
        let grad_trace = &r * (-(8.0 * s * rad.d3 + (8.0 + 4.0 * d as f64) * rad.d2));
        Ok((cross, grad_trace))
    }
}

/// Kernel choice before a bandwidth is resolved against data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// RBF; `None` means the per-batch median heuristic.
    Rbf { bandwidth_sq: Option<f64> },
    Imq { c: f64, beta: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Imq {
            c: SteinKernel::IMQ_DEFAULT_C,
            beta: SteinKernel::IMQ_DEFAULT_BETA,
        }
    }
}

impl KernelSpec {
    pub fn median_rbf() -> Self {
        KernelSpec::Rbf { bandwidth_sq: None }
    }

    pub fn is_rbf(&self) -> bool {
        matches!(self, KernelSpec::Rbf { .. })
    }

    pub fn resolve(&self, xs: ArrayView2<f64>) -> Result<SteinKernel> {
        match *self {
            KernelSpec::Rbf { bandwidth_sq: Some(h) } => SteinKernel::rbf(h),
            KernelSpec::Rbf { bandwidth_sq: None } => SteinKernel::rbf(median_heuristic(xs)?),
            KernelSpec::Imq { c, beta } => SteinKernel::imq(c, beta),
        }
    }
}

/// Median of the pairwise Euclidean distances.
pub fn median_pairwise_distance(xs: ArrayView2<f64>) -> Result<f64> {
    let n = xs.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("median heuristic needs at least 2 points, got {n}")));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = xs.row(i);
        for j in i + 1..n {
            let s: f64 = xi.iter().zip(xs.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(s.sqrt());
        }
    }
    let m = dists.len();
    let (_, upper, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
    let upper = *upper;
    if m % 2 == 1 {
        Ok(upper)
    } else {
        let lower = dists[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower + upper))
    }
}

/// `h = med² / ln(n + 1)` where `med` is the median pairwise distance.
pub fn median_heuristic(xs: ArrayView2<f64>) -> Result<f64> {
    let med = median_pairwise_distance(xs)?;
    if !(med > 0.0) {
        return Err(Error::invalid("median pairwise distance is zero; points coincide"));
    }
    Ok(med * med / ((xs.nrows() + 1) as f64).ln())
}
