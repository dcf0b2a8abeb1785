//! Closed-form L2-regularized linear probe on pooled features.
//!
//! Solves `(X^T X + lambda I) W = X^T Y` for one-hot targets via a Cholesky
//! factorization in f64. An unpenalized constant column provides the
//! intercept. The lambda sweep covers `2^e` for `e in -20..=10` and selects
//! by validation top-1, breaking ties toward the larger lambda.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted probe: `weight` is `(C + 1) x S` with the bias row last when
/// `with_bias`, else `C x S`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub weight: Vec<f64>,
    pub features: usize,
    pub classes: usize,
    pub lambda: f64,
    pub with_bias: bool,
}

impl RidgeSolution {
    fn rows(&self) -> usize {
        self.features + usize::from(self.with_bias)
    }

    /// Class scores for one pooled feature vector.
    pub fn scores(&self, x: &[f32]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.features);
        let mut out = vec![0.0f64; self.classes];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weight[i * self.classes..(i + 1) * self.classes];
            for (s, &w) in row.iter().enumerate() {
                out[s] += xi as f64 * w;
            }
        }
        if self.with_bias {
            let row = &self.weight[self.features * self.classes..];
            for (s, &w) in row.iter().enumerate() {
                out[s] += w;
            }
        }
        out
    }

    /// Frobenius norm of the weight block (bias row included).
    pub fn weight_norm(&self) -> f64 {
        self.weight.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// In-place Cholesky solve of `A X = B` for symmetric positive-definite `A`
/// (`dim x dim`, row-major) and `B` of shape `dim x cols`. `B` holds the
/// solution on return.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], dim: usize, cols: usize) -> Result<()> {
    // factorize A = L L^T, L stored in the lower triangle
    for j in 0..dim {
        let mut diag = a[j * dim + j];
        for k in 0..j {
            diag -= a[j * dim + k] * a[j * dim + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::SingularSystem);
        }
        let root = diag.sqrt();
        a[j * dim + j] = root;
        for i in j + 1..dim {
            let mut v = a[i * dim + j];
            for k in 0..j {
                v -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = v / root;
        }
    }
    // forward substitution L Z = B
    for col in 0..cols {
        for i in 0..dim {
            let mut v = b[i * cols + col];
            for k in 0..i {
                v -= a[i * dim + k] * b[k * cols + col];
            }
            b[i * cols + col] = v / a[i * dim + i];
        }
        // back substitution L^T X = Z
        for i in (0..dim).rev() {
            let mut v = b[i * cols + col];
            for k in i + 1..dim {
                v -= a[k * dim + i] * b[k * cols + col];
            }
            b[i * cols + col] = v / a[i * dim + i];
        }
    }
    Ok(())
}

/// Fits `W = (X^T X + lambda I)^{-1} X^T Y` on `E x C` features and `E x S`
/// targets. The appended constant column (when `with_bias`) is not
/// penalized. `lambda = 0` requires a nonsingular Gram matrix.
pub fn fit_ridge(
    x: &[f32],
    y: &[f32],
    examples: usize,
    features: usize,
    classes: usize,
    lambda: f64,
    with_bias: bool,
) -> Result<RidgeSolution> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be >= 0")));
    }
    debug_assert_eq!(x.len(), examples * features);
    debug_assert_eq!(y.len(), examples * classes);
    let dim = features + usize::from(with_bias);

    // gram = Xt X with the implicit constant column
    let mut gram = vec![0.0f64; dim * dim];
    let mut rhs = vec![0.0f64; dim * classes];
    for e in 0..examples {
        let row = &x[e * features..(e + 1) * features];
        let targets = &y[e * classes..(e + 1) * classes];
        for i in 0..features {
            let xi = row[i] as f64;
            for j in i..features {
                gram[i * dim + j] += xi * row[j] as f64;
            }
            if with_bias {
                gram[i * dim + features] += xi;
            }
            for (s, &t) in targets.iter().enumerate() {
                rhs[i * classes + s] += xi * t as f64;
            }
        }
        if with_bias {
            gram[features * dim + features] += 1.0;
            for (s, &t) in targets.iter().enumerate() {
                rhs[features * classes + s] += t as f64;
            }
        }
    }
    // mirror the upper triangle and add the penalty (skipping the bias row)
    for i in 0..dim {
        for j in 0..i {
            gram[i * dim + j] = gram[j * dim + i];
        }
    }
    for i in 0..features {
        gram[i * dim + i] += lambda;
    }

    cholesky_solve(&mut gram, &mut rhs, dim, classes)?;
    Ok(RidgeSolution {
        weight: rhs,
        features,
        classes,
        lambda,
        with_bias,
    })
}

/// Residual of the normal equations, `max |(X^T X + P) W - X^T Y|`, for the
/// solution-quality invariant.
pub fn normal_equation_residual(
    solution: &RidgeSolution,
    x: &[f32],
    y: &[f32],
    examples: usize,
) -> f64 {
    let features = solution.features;
    let classes = solution.classes;
    let dim = solution.rows();
    let bias = solution.with_bias;
    // recompute A and B densely; this is test-path code
    let mut gram = vec![0.0f64; dim * dim];
    let mut rhs = vec![0.0f64; dim * classes];
    for e in 0..examples {
        let row = &x[e * features..(e + 1) * features];
        let extended: Vec<f64> = row
            .iter()
            .map(|&v| v as f64)
            .chain(bias.then_some(1.0))
            .collect();
        for i in 0..dim {
            for j in 0..dim {
                gram[i * dim + j] += extended[i] * extended[j];
            }
            for s in 0..classes {
                rhs[i * classes + s] += extended[i] * y[e * classes + s] as f64;
            }
        }
    }
    for i in 0..features {
        gram[i * dim + i] += solution.lambda;
    }
    let mut worst = 0.0f64;
    for i in 0..dim {
        for s in 0..classes {
            let mut acc = 0.0f64;
            for k in 0..dim {
                acc += gram[i * dim + k] * solution.weight[k * classes + s];
            }
            worst = worst.max((acc - rhs[i * classes + s]).abs());
        }
    }
    worst
}

pub const LAMBDA_EXPONENTS: std::ops::RangeInclusive<i32> = -20..=10;

/// The `2^e` candidates of the lambda sweep, 31 values.
pub fn lambda_candidates() -> Vec<f64> {
    LAMBDA_EXPONENTS.map(|e| 2.0f64.powi(e)).collect()
}

/// Fits every candidate lambda on the training block and returns the
/// solution with the best validation top-1; ties go to the larger lambda.
#[allow(clippy::too_many_arguments)]
pub fn sweep_lambda(
    x_train: &[f32],
    y_train: &[f32],
    train_examples: usize,
    features: usize,
    classes: usize,
    x_val: &[f32],
    labels_val: &[u32],
    with_bias: bool,
) -> Result<(RidgeSolution, f64)> {
    if labels_val.is_empty() {
        return Err(Error::InvalidConfig("validation set is empty".into()));
    }
    let mut best: Option<(RidgeSolution, f64)> = None;
    for lambda in lambda_candidates() {
        let solution = fit_ridge(
            x_train,
            y_train,
            train_examples,
            features,
            classes,
            lambda,
            with_bias,
        )?;
        let accuracy = accuracy_on(&solution, x_val, labels_val);
        let better = match &best {
            None => true,
            // >= so later (larger) lambdas win ties
            Some((_, best_accuracy)) => accuracy >= *best_accuracy,
        };
        if better {
            best = Some((solution, accuracy));
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Argmax prediction; ties break toward the smallest class index.
pub fn predict(solution: &RidgeSolution, x: &[f32]) -> Vec<u32> {
    let features = solution.features;
    x.chunks_exact(features)
        .map(|row| {
            let scores = solution.scores(row);
            let mut best = 0usize;
            for (s, &score) in scores.iter().enumerate() {
                if score > scores[best] {
                    best = s;
                }
            }
            best as u32
        })
        .collect()
}

pub fn accuracy_on(solution: &RidgeSolution, x: &[f32], labels: &[u32]) -> f64 {
    let predictions = predict(solution, x);
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// One-hot encodes integer labels row-major `E x S`.
pub fn one_hot_targets(labels: &[u32], classes: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; labels.len() * classes];
    for (e, &label) in labels.iter().enumerate() {
        y[e * classes + label as usize] = 1.0;
    }
    y
}

/// Probe checkpoint in the same flat-binary-plus-JSON-index format as the
/// head: one `weight` tensor of shape `rows x S`, stored as f32.
#[derive(Debug, Serialize, Deserialize)]
struct ProbeIndex {
    dtype: String,
    byte_order: String,
    features: usize,
    classes: usize,
    lambda: f64,
    with_bias: bool,
    tensors: serde_json::Map<String, serde_json::Value>,
}

pub fn save_probe(solution: &RidgeSolution, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(solution.weight.len() * 4);
    for &w in &solution.weight {
        bytes.extend_from_slice(&(w as f32).to_le_bytes());
    }
    std::fs::write(path, &bytes)?;
    let mut tensors = serde_json::Map::new();
    tensors.insert(
        "weight".into(),
        serde_json::json!({ "offset": 0, "shape": [solution.rows(), solution.classes] }),
    );
    let index = ProbeIndex {
        dtype: "f32".into(),
        byte_order: "little".into(),
        features: solution.features,
        classes: solution.classes,
        lambda: solution.lambda,
        with_bias: solution.with_bias,
        tensors,
    };
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn load_probe(path: &Path) -> Result<RidgeSolution> {
    let index: ProbeIndex = serde_json::from_str(
        &std::fs::read_to_string(path.with_extension("json"))
            .map_err(|e| Error::Checkpoint(format!("missing index: {e}")))?,
    )?;
    let bytes = std::fs::read(path)?;
    let rows = index.features + usize::from(index.with_bias);
    if bytes.len() != rows * index.classes * 4 {
        return Err(Error::Checkpoint("probe payload size mismatch".into()));
    }
    let weight: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(RidgeSolution {
        weight,
        features: index.features,
        classes: index.classes,
        lambda: index.lambda,
        with_bias: index.with_bias,
    })
}
