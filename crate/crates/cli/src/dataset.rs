//! Labeled datasets for the logistic posterior: file ingestion, the bundled
//! synthetic generator, standardization, and the seeded 4:1 split.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stein_core::targets::LabeledDataset;

use crate::config::SyntheticSpec;
use crate::error::{CliError, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum LabelScheme {
    ZeroOne,
    PlusMinus,
}

/// Reads `label,feature1,...,featureP` rows (no header), normalizes labels to
/// ±1, standardizes features and splits 4:1 with `split_seed`.
pub fn load_dataset(path: &Path, split_seed: u64) -> Result<LabeledDataset> {
    let (features, labels) = read_labeled(path)?;
    prepare(features, labels, split_seed)
}

fn read_labeled(path: &Path) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let err = |line: u64, msg: String| CliError::Data(format!("{}: line {line}: {msg}", path.display()));
    let mut width: Option<usize> = None;
    let mut scheme: Option<LabelScheme> = None;
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 {
            return Err(err(line, "expected a label and at least one feature".into()));
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(err(line, format!("expected {w} fields, found {}", record.len())))
            }
            _ => {}
        }
        let mut values = record.iter().map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("non-numeric field {f:?}")))
        });
        let raw = values.next().expect("length checked")?;
        let this = if raw == 0.0 {
            Some(LabelScheme::ZeroOne)
        } else if raw == -1.0 {
            Some(LabelScheme::PlusMinus)
        } else if raw == 1.0 {
            None
        } else {
            return Err(err(line, format!("unexpected label value {raw}")));
        };
        if let Some(s) = this {
            if scheme.is_some_and(|prev| prev != s) {
                return Err(err(line, format!("unexpected label value {raw}: labels mix 0 and -1")));
            }
            scheme = Some(s);
        }
        labels.push(if raw == 1.0 { 1.0 } else { -1.0 });
        for v in values {
            flat.push(v?);
        }
    }
    let p = width.map_or(0, |w| w - 1);
    if labels.is_empty() {
        return Err(CliError::Data(format!("{}: no observations", path.display())));
    }
    Ok((
        Array2::from_shape_vec((labels.len(), p), flat).expect("rows checked"),
        Array1::from(labels),
    ))
}

/// Standardizes columns (constant columns become zero) and splits rows 4:1.
pub fn prepare(mut features: Array2<f64>, labels: Array1<f64>, split_seed: u64) -> Result<LabeledDataset> {
    let n = features.nrows();
    for mut col in features.columns_mut() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_train = (4 * n).div_ceil(5);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(LabeledDataset::new(features, labels, train, test)?)
}

/// Separable-with-margin logistic data: `x ~ N(0, I)`, labels from a random
/// unit direction, points within `margin` of the boundary rejected, then each
/// label flipped with probability `label_noise`.
pub fn synthetic_logistic(spec: &SyntheticSpec) -> (Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.features;
    let mut w: Array1<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = w.dot(&w).sqrt();
    w /= norm;
    let mut features = Array2::zeros((spec.n, p));
    let mut labels = Array1::zeros(spec.n);
    for i in 0..spec.n {
        loop {
            let x: Array1<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = w.dot(&x);
            if z.abs() >= spec.margin {
                features.row_mut(i).assign(&x);
                labels[i] = z.signum();
                break;
            }
        }
        if rng.random::<f64>() < spec.label_noise {
            labels[i] = -labels[i];
        }
    }
    (features, labels)
}

/// Writes `label,features...` rows in the format [`load_dataset`] reads.
pub fn dataset_csv(features: &Array2<f64>, labels: &Array1<f64>) -> String {
    let mut out = String::new();
    for (row, y) in features.rows().into_iter().zip(labels) {
        out.push_str(&y.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}
