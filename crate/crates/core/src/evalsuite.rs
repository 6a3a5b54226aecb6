//! Sample-quality metrics: unbiased MMD, the `h₁`/`h₂` moment statistics,
//! mode coverage, posterior predictive accuracy, and cross-run aggregation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{median_pairwise_distance, SteinKernel};
use crate::targets::sigmoid;

fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn within_mean(kernel: &SteinKernel, xs: ArrayView2<f64>) -> f64 {
    let n = xs.nrows();
    let mut vals = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            vals.push(kernel.radial(sq_dist(xs.row(i), xs.row(j))).phi);
        }
    }
    2.0 * sorted_sum(vals) / (n * (n - 1)) as f64
}

/// Unbiased MMD² U-statistic. The cross term skips paired indices `i = j`
/// when both samples have the same size, so `mmd_u(X, X) = 0` exactly.
pub fn mmd_u(xs: ArrayView2<f64>, ys: ArrayView2<f64>, kernel: &SteinKernel) -> Result<f64> {
    check_dim(xs.ncols(), ys.ncols())?;
    let (n, m) = (xs.nrows(), ys.nrows());
    if n < 2 || m < 2 {
        return Err(Error::invalid(format!("MMD needs at least 2 samples per set, got {n} and {m}")));
    }
    let kxx = within_mean(kernel, xs);
    let kyy = within_mean(kernel, ys);
    let paired = n == m;
    let mut cross = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            if paired && i == j {
                continue;
            }
            cross.push(kernel.radial(sq_dist(xs.row(i), ys.row(j))).phi);
        }
    }
    let count = cross.len() as f64;
    let kxy = sorted_sum(cross) / count;
    Ok(kxx + kyy - 2.0 * kxy)
}

/// RBF bandwidth `h = med²` from the pooled sample's median pairwise distance.
pub fn pooled_median_bandwidth(xs: ArrayView2<f64>, ys: ArrayView2<f64>) -> Result<f64> {
    check_dim(xs.ncols(), ys.ncols())?;
    let pooled = ndarray::concatenate(ndarray::Axis(0), &[xs, ys]).expect("column counts checked");
    let med = median_pairwise_distance(pooled.view())?;
    if !(med > 0.0) {
        return Err(Error::invalid("pooled sample has zero median distance"));
    }
    Ok(med * med)
}

/// [`mmd_u`] with an RBF kernel whose bandwidth is the pooled median heuristic.
pub fn mmd_u_median(xs: ArrayView2<f64>, ys: ArrayView2<f64>) -> Result<f64> {
    let h = pooled_median_bandwidth(xs, ys)?;
    mmd_u(xs, ys, &SteinKernel::rbf(h)?)
}

/// `h₁ = mean(X₁) + mean(X₂)`, `h₂ = sd(X₁) + sd(X₂)` with divisor `n`.
pub fn moment_stats(xs: ArrayView2<f64>) -> Result<(f64, f64)> {
    check_dim(2, xs.ncols())?;
    let n = xs.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("moment statistics need at least 2 samples, got {n}")));
    }
    let mut h1 = 0.0;
    let mut h2 = 0.0;
    for col in xs.columns() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        h1 += mean;
        h2 += var.sqrt();
    }
    Ok((h1, h2))
}

/// Number of modes with at least `max(2, 0.02n)` samples within `radius`.
pub fn mode_coverage(xs: ArrayView2<f64>, modes: &[Array1<f64>], radius: f64) -> Result<usize> {
    if modes.is_empty() {
        return Err(Error::invalid("mode list is empty"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("coverage radius must be positive, got {radius}")));
    }
    for m in modes {
        check_dim(xs.ncols(), m.len())?;
    }
    let need = (0.02 * xs.nrows() as f64).max(2.0);
    let r2 = radius * radius;
    Ok(modes
        .iter()
        .filter(|m| {
            let hits = xs.rows().into_iter().filter(|x| sq_dist(*x, m.view()) <= r2).count();
            hits as f64 >= need
        })
        .count())
}

/// Test accuracy of the posterior predictive `mean_s σ(wₛ·x)` thresholded at 1/2.
///
/// Rows of `weight_samples` hold `p` regression weights, optionally followed
/// by the log-precision coordinate, which is ignored. Exact ties at 1/2 go to
/// the majority class of `labels`.
pub fn posterior_accuracy(weight_samples: ArrayView2<f64>, features: ArrayView2<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    let p = features.ncols();
    if weight_samples.nrows() == 0 {
        return Err(Error::invalid("no posterior samples"));
    }
    if features.nrows() == 0 {
        return Err(Error::invalid("test set is empty"));
    }
    check_dim(features.nrows(), labels.len())?;
    if weight_samples.ncols() != p && weight_samples.ncols() != p + 1 {
        return Err(Error::Dimension {
            expected: p + 1,
            got: weight_samples.ncols(),
        });
    }
    let w = weight_samples.slice(ndarray::s![.., ..p]);
    let logits = features.dot(&w.t());
    let m = weight_samples.nrows() as f64;
    let positives = labels.iter().filter(|&&y| y > 0.0).count();
    let tie_label = if 2 * positives >= labels.len() { 1.0 } else { -1.0 };
    let mut correct = 0usize;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let prob = row.iter().map(|&z| sigmoid(z)).sum::<f64>() / m;
        let pred = if prob > 0.5 {
            1.0
        } else if prob < 0.5 {
            -1.0
        } else {
            tie_label
        };
        if pred == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Metrics from one run; absent entries were not computed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunMetrics {
    pub h1: Option<f64>,
    pub h2: Option<f64>,
    pub mmd: Option<f64>,
    pub mode_coverage: Option<usize>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GroundTruth {
    pub h1: Option<f64>,
    pub h2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Mean squared error against the ground truth, when one is known.
    pub mse: Option<f64>,
    /// Standard error of the mean (zero for a single run).
    pub std_error: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn from_values(values: &[f64], truth: Option<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let std_error = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        let mse = truth.map(|t| values.iter().map(|v| (v - t) * (v - t)).sum::<f64>() / k);
        Some(Aggregate {
            mean,
            mse,
            std_error,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub runs: Vec<RunMetrics>,
    pub h1: Option<Aggregate>,
    pub h2: Option<Aggregate>,
    pub mmd: Option<Aggregate>,
    pub mode_coverage: Option<Aggregate>,
    pub accuracy: Option<Aggregate>,
}

pub fn aggregate_runs(runs: &[RunMetrics], truth: &GroundTruth) -> MetricReport {
    let collect = |f: &dyn Fn(&RunMetrics) -> Option<f64>| runs.iter().filter_map(f).collect::<Vec<_>>();
    MetricReport {
        runs: runs.to_vec(),
        h1: Aggregate::from_values(&collect(&|r| r.h1), truth.h1),
        h2: Aggregate::from_values(&collect(&|r| r.h2), truth.h2),
        mmd: Aggregate::from_values(&collect(&|r| r.mmd), None),
        mode_coverage: Aggregate::from_values(&collect(&|r| r.mode_coverage.map(|c| c as f64)), None),
        accuracy: Aggregate::from_values(&collect(&|r| r.accuracy), None),
    }
}

/// Ring-of-8 ground truth for `h₁`/`h₂` given radius and component sd.
pub fn ring8_ground_truth(radius: f64, sd: f64) -> GroundTruth {
    // Each coordinate: mean 0, variance sd² + radius²/2 over the eight angles.
    let var = sd * sd + radius * radius / 2.0;
    GroundTruth {
        h1: Some(0.0),
        h2: Some(2.0 * var.sqrt()),
    }
}

/// Samples as an `n×d` matrix from row slices, for tests and small inputs.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(rows.len() * d);
    for r in rows {
        check_dim(d, r.len())?;
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), d), flat).expect("rows are uniform"))
}
