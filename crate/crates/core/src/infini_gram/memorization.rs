use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{NgramError, Result, LOG_FLOOR};

/// One row of a per-token probability trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub example_id: String,
    pub token_index: u64,
    pub prob: f64,
}

/// Aligned per-token probabilities from a reference and a model predictor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbTrace {
    pub reference: Vec<f64>,
    pub model: Vec<f64>,
}

impl ProbTrace {
    pub fn new(reference: Vec<f64>, model: Vec<f64>) -> Result<Self> {
        if reference.len() != model.len() {
            return Err(NgramError::LengthMismatch(reference.len(), model.len()));
        }
        for &p in reference.iter().chain(&model) {
            if !(0.0..=1.0).contains(&p) {
                return Err(NgramError::BadProbability(p));
            }
        }
        Ok(Self { reference, model })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn spearman(&self) -> Result<f64> {
        spearman_rho(&self.reference, &self.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationUnit {
    /// Correlate joint likelihoods of whole target spans.
    #[default]
    PerExample,
    /// Correlate individual token probabilities.
    PerToken,
}

impl std::str::FromStr for CorrelationUnit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per_example" | "per-example" | "example" => Ok(Self::PerExample),
            "per_token" | "per-token" | "token" => Ok(Self::PerToken),
            other => Err(format!(
                "unknown correlation unit `{other}` (expected per_example or per_token)"
            )),
        }
    }
}

/// Average (fractional) ranks, 1-based. Tied values share the mean of the
/// ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(NgramError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(NgramError::TooFewPairs(x.len()));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(NgramError::NonFinite(i % x.len()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (x.len() + 1) as f64 / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(NgramError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Per-example log joint likelihoods, in order of first appearance.
///
/// Returns `(example_id, Σ ln max(p, LOG_FLOOR))`; the log is a monotone map
/// of the product so ranks are unchanged, and it cannot underflow.
pub fn example_logliks(records: &[TraceRecord]) -> Result<Vec<(String, f64)>> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<(String, f64)> = Vec::new();
    for r in records {
        if !(0.0..=1.0).contains(&r.prob) {
            return Err(NgramError::BadProbability(r.prob));
        }
        let i = *slot.entry(&r.example_id).or_insert_with(|| {
            out.push((r.example_id.clone(), 0.0));
            out.len() - 1
        });
        out[i].1 += r.prob.max(LOG_FLOOR).ln();
    }
    Ok(out)
}

fn check_aligned(reference: &[TraceRecord], model: &[TraceRecord]) -> Result<()> {
    if reference.len() != model.len() {
        return Err(NgramError::Misaligned(format!(
            "{} reference rows vs {} model rows",
            reference.len(),
            model.len()
        )));
    }
    for (row, (a, b)) in reference.iter().zip(model).enumerate() {
        if a.example_id != b.example_id || a.token_index != b.token_index {
            return Err(NgramError::Misaligned(format!(
                "row {row}: ({}, {}) vs ({}, {})",
                a.example_id, a.token_index, b.example_id, b.token_index
            )));
        }
    }
    Ok(())
}

/// Spearman correlation between reference (∞-gram) and model likelihoods.
///
/// Both traces must list the same `(example_id, token_index)` keys in the
/// same order.
pub fn distributional_memorization(
    reference: &[TraceRecord],
    model: &[TraceRecord],
    unit: CorrelationUnit,
) -> Result<f64> {
    check_aligned(reference, model)?;
    match unit {
        CorrelationUnit::PerToken => {
            let trace = ProbTrace::new(
                reference.iter().map(|r| r.prob).collect(),
                model.iter().map(|r| r.prob).collect(),
            )?;
            trace.spearman()
        }
        CorrelationUnit::PerExample => {
            let a = example_logliks(reference)?;
            let b = example_logliks(model)?;
            if a.len() < 2 {
                return Err(NgramError::TooFewExamples(a.len()));
            }
            let x: Vec<f64> = a.iter().map(|e| e.1).collect();
            let y: Vec<f64> = b.iter().map(|e| e.1).collect();
            spearman_rho(&x, &y)
        }
    }
}
