//! Training objectives for the toy model, selectable by name at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|x| *x = (*x - max).exp());
        let sum: f64 = row.iter().sum();
        row /= sum;
    }
    out
}

/// `α − onehot(labels)`: the gradient of per-row cross-entropy w.r.t. logits.
///
/// Panics if a label is outside `0..vocab`; labels are validated at config time.
pub fn a_matrix(alpha: &DMatrix<f64>, labels: &[usize]) -> DMatrix<f64> {
    assert_eq!(alpha.nrows(), labels.len(), "one label per row");
    let mut a = alpha.clone();
    for (i, &c) in labels.iter().enumerate() {
        assert!(
            c < a.ncols(),
            "label {c} out of range for vocab {}",
            a.ncols()
        );
        a[(i, c)] -= 1.0;
    }
    a
}

fn one_hot(rows: usize, vocab: usize, labels: &[usize]) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(rows, vocab);
    for (i, &c) in labels.iter().enumerate() {
        y[(i, c)] = 1.0;
    }
    y
}

fn weight_rows(mut m: DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    for (mut row, &w) in m.row_iter_mut().zip(weights) {
        row *= w;
    }
    m
}

/// Log-sum-exp of one row.
fn lse(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Exact cross-entropy of one row: `−z_c + ln Σ exp z_j`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    lse(logits) - logits[label]
}

/// Legendre-linearized cross-entropy `−z_c + αᵀz + H(α)` around the
/// distribution `alpha`.
pub fn linearized_cross_entropy(logits: &[f64], label: usize, alpha: &[f64]) -> f64 {
    let dot: f64 = alpha.iter().zip(logits).map(|(a, z)| a * z).sum();
    -logits[label] + dot + entropy(alpha)
}

/// A loss on the logit matrix `z = fW`, summed over rows with per-row weights.
pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient of the weighted summed loss w.r.t. the logits, the `A` matrix of the
    /// gradient flow `ḟ = −η A Wᵀ`, `Ẇ = −η fᵀA`.
    fn residual(&self, logits: &DMatrix<f64>, labels: &[usize], weights: &[f64]) -> DMatrix<f64>;

    /// Weighted mean loss.
    fn loss(&self, logits: &DMatrix<f64>, labels: &[usize], weights: &[f64]) -> f64;

    /// Whether the loss is cross-entropy-like (drives the compression phase).
    fn is_cross_entropy(&self) -> bool {
        true
    }
}

fn weighted_mean(per_row: impl Iterator<Item = f64>, weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    per_row.zip(weights).map(|(l, w)| l * w).sum::<f64>() / total
}

pub struct ExactCrossEntropy;

impl Objective for ExactCrossEntropy {
    fn name(&self) -> &'static str {
        "xent_exact"
    }

    fn residual(&self, logits: &DMatrix<f64>, labels: &[usize], weights: &[f64]) -> DMatrix<f64> {
        weight_rows(a_matrix(&softmax_rows(logits), labels), weights)
    }

    fn loss(&self, logits: &DMatrix<f64>, labels: &[usize], weights: &[f64]) -> f64 {
        let rows = (0..logits.nrows()).map(|i| {
            let r: Vec<f64> = logits.row(i).iter().copied().collect();
            cross_entropy(&r, labels[i])
        });
        weighted_mean(rows, weights)
    }
}

/// Linearized cross-entropy with the slope `α` refreshed from the current
/// logits every step. Its value equals the exact loss at the expansion point
/// and its gradient in `z` is `α − onehot`, so the dynamics coincide with
/// exact cross-entropy.
pub struct LinearizedCrossEntropy;

impl Objective for LinearizedCrossEntropy {
    fn name(&self) -> &'static str {
        "xent_linearized"
    }

    fn residual(&self, logits: &DMatrix<f64>, labels: &[usize], weights: &[f64]) -> DMatrix<f64> {
        // α is held fixed while differentiating the linear surrogate
        weight_rows(a_matrix(&softmax_rows(logits), labels), weights)
    }

    fn loss(&self, logits: &DMatrix<f64>, labels: &[usize], weights: &[f64]) -> f64 {
        let alpha = softmax_rows(logits);
        let rows = (0..logits.nrows()).map(|i| {
            let z: Vec<f64> = logits.row(i).iter().copied().collect();
            let a: Vec<f64> = alpha.row(i).iter().copied().collect();
            linearized_cross_entropy(&z, labels[i], &a)
        });
        weighted_mean(rows, weights)
    }
}

/// Squared error against one-hot targets, `½‖z − Y‖²` per row.
pub struct SquaredError;

impl Objective for SquaredError {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn residual(&self, logits: &DMatrix<f64>, labels: &[usize], weights: &[f64]) -> DMatrix<f64> {
        let y = one_hot(logits.nrows(), logits.ncols(), labels);
        weight_rows(logits - y, weights)
    }

    fn loss(&self, logits: &DMatrix<f64>, labels: &[usize], weights: &[f64]) -> f64 {
        let y = one_hot(logits.nrows(), logits.ncols(), labels);
        let diff = logits - y;
        let rows = diff
            .row_iter()
            .map(|r| 0.5 * r.norm_squared())
            .collect::<Vec<_>>();
        weighted_mean(rows.into_iter(), weights)
    }

    fn is_cross_entropy(&self) -> bool {
        false
    }
}

/// Objectives registered by name.
#[derive(Clone)]
pub struct ObjectiveRegistry {
    entries: BTreeMap<String, Arc<dyn Objective>>,
}

impl ObjectiveRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Replaces any objective already registered under the same name.
    pub fn register(&mut self, objective: Arc<dyn Objective>) {
        self.entries.insert(objective.name().to_string(), objective);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Objective>> {
        self.entries.get(name).cloned()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

impl Default for ObjectiveRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(ExactCrossEntropy));
        r.register(Arc::new(LinearizedCrossEntropy));
        r.register(Arc::new(SquaredError));
        r
    }
}

impl std::fmt::Debug for ObjectiveRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}
