//! pass@k and DPO loss estimators.

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("problem {index}: k = {k} exceeds N = {n}")]
    KExceedsN { index: usize, k: u64, n: u64 },
    #[error("problem {index}: correct count {c} exceeds N = {n}")]
    CorrectExceedsN { index: usize, c: u64, n: u64 },
    #[error("no problems given")]
    Empty,
    #[error("non-finite reward in pair {0}")]
    NonFinite(usize),
    #[error("beta must be positive and finite, got {0}")]
    BadBeta(f64),
}

/// Samples drawn for one problem and how many were correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub n: u64,
    pub c: u64,
}

fn check(problems: &[Problem], k: u64) -> Result<(), EvalError> {
    if problems.is_empty() {
        return Err(EvalError::Empty);
    }
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    for (index, p) in problems.iter().enumerate() {
        if p.c > p.n {
            return Err(EvalError::CorrectExceedsN {
                index,
                c: p.c,
                n: p.n,
            });
        }
        if k > p.n {
            return Err(EvalError::KExceedsN { index, k, n: p.n });
        }
    }
    Ok(())
}

/// `1 − C(N−c, k)/C(N, k)` for one problem via the telescoping product.
pub fn pass_at_k_single(n: u64, c: u64, k: u64) -> f64 {
    if n - c < k {
        return 1.0;
    }
    let mut miss = 1.0;
    for j in 0..k {
        miss *= (n - c - j) as f64 / (n - j) as f64;
    }
    1.0 - miss
}

/// Unbiased pass@k, averaged over problems.
pub fn pass_at_k(problems: &[Problem], k: u64) -> Result<f64, EvalError> {
    check(problems, k)?;
    let total: f64 = problems.iter().map(|p| pass_at_k_single(p.n, p.c, k)).sum();
    Ok(total / problems.len() as f64)
}

fn big(x: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

/// Exact rational pass@k for one problem, same telescoping product.
pub fn pass_at_k_exact_single(n: u64, c: u64, k: u64) -> BigRational {
    if n - c < k {
        return big(1);
    }
    let mut miss = big(1);
    for j in 0..k {
        miss *= big(n - c - j) / big(n - j);
    }
    big(1) - miss
}

pub fn pass_at_k_exact(problems: &[Problem], k: u64) -> Result<BigRational, EvalError> {
    check(problems, k)?;
    let sum = problems
        .iter()
        .fold(big(0), |acc, p| acc + pass_at_k_exact_single(p.n, p.c, k));
    Ok(sum / big(problems.len() as u64))
}

/// Implicit rewards of a preferred (`r_w`) and dispreferred (`r_l`)
/// completion, already scaled by β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub r_w: f64,
    pub r_l: f64,
}

impl PreferencePair {
    /// Builds rewards `β · log(π/π_ref)` from log-ratios.
    pub fn from_log_ratios(
        log_ratio_w: f64,
        log_ratio_l: f64,
        beta: f64,
    ) -> Result<Self, EvalError> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(EvalError::BadBeta(beta));
        }
        Ok(Self {
            r_w: beta * log_ratio_w,
            r_l: beta * log_ratio_l,
        })
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `−ln σ(r_w − r_l)`.
pub fn dpo_loss_single(p: PreferencePair) -> f64 {
    softplus(-(p.r_w - p.r_l))
}

/// `−ln(e^{r_w} / (e^{r_w} + e^{r_l}))`, the two-candidate softmax form.
pub fn nce_loss_single(p: PreferencePair) -> f64 {
    let m = p.r_w.max(p.r_l);
    let lse = m + ((p.r_w - m).exp() + (p.r_l - m).exp()).ln();
    lse - p.r_w
}

fn check_finite(pairs: &[PreferencePair]) -> Result<(), EvalError> {
    match pairs
        .iter()
        .position(|p| !(p.r_w.is_finite() && p.r_l.is_finite()))
    {
        Some(i) => Err(EvalError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Mean DPO loss.
pub fn dpo_loss(pairs: &[PreferencePair]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    check_finite(pairs)?;
    Ok(pairs.iter().map(|&p| dpo_loss_single(p)).sum::<f64>() / pairs.len() as f64)
}

/// Largest absolute difference between the sigmoid and softmax forms.
pub fn dpo_nce_identity(pairs: &[PreferencePair]) -> Result<f64, EvalError> {
    check_finite(pairs)?;
    Ok(pairs
        .iter()
        .map(|&p| (dpo_loss_single(p) - nce_loss_single(p)).abs())
        .fold(0.0, f64::max))
}
