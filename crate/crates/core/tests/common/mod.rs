//! Independent reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;

/// Cyclic Jacobi rotations on a symmetric matrix; eigenvalues descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    d.sort_by(|x, y| y.partial_cmp(x).unwrap());
    d
}

/// `(1/M) FᵀF` by explicit triple loop.
pub fn naive_covariance(f: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let (m, d) = f.shape();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..m).map(|r| f[(r, i)] * f[(r, j)]).sum::<f64>() / m as f64)
                .collect()
        })
        .collect()
}

/// Occurrences of `pattern` inside single documents, by direct scan.
pub fn naive_count(docs: &[Vec<u32>], pattern: &[u32]) -> u64 {
    if pattern.is_empty() {
        return docs.iter().map(|d| d.len() as u64).sum();
    }
    docs.iter()
        .map(|d| d.windows(pattern.len()).filter(|w| *w == pattern).count() as u64)
        .sum()
}

/// Counts of each token following `pattern` within a document.
pub fn naive_continuations(docs: &[Vec<u32>], pattern: &[u32], vocab: usize) -> Vec<u64> {
    let mut c = vec![0u64; vocab];
    for d in docs {
        for i in 0..d.len() {
            let end = i + pattern.len();
            if end < d.len() && &d[i..end] == pattern {
                c[d[end] as usize] += 1;
            }
        }
    }
    c
}

/// Longest-suffix backoff by trying every suffix length from the longest
/// down. Returns `(probs, suffix_len_used, context_count)`.
pub fn naive_next(docs: &[Vec<u32>], context: &[u32], vocab: usize) -> (Vec<f64>, usize, u64) {
    for len in (1..=context.len()).rev() {
        let s = &context[context.len() - len..];
        let c = naive_continuations(docs, s, vocab);
        let total: u64 = c.iter().sum();
        if total > 0 {
            return (
                c.iter().map(|&x| x as f64 / total as f64).collect(),
                len,
                naive_count(docs, s),
            );
        }
    }
    let n: u64 = docs.iter().map(|d| d.len() as u64).sum();
    let mut c = vec![0u64; vocab];
    for d in docs {
        for &t in d {
            c[t as usize] += 1;
        }
    }
    (c.iter().map(|&x| x as f64 / n as f64).collect(), 0, n)
}

/// Ranks by counting, for every element, how many are smaller and how many
/// tie: rank = smaller + (ties + 1) / 2.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let smaller = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            smaller + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation of the naive ranks, using two-pass moments.
pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (naive_ranks(x), naive_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

/// Fraction of all `k`-subsets of `n` samples (the first `c` correct) that
/// contain a correct sample, by enumeration over bitmasks.
pub fn subset_pass_at_k(n: u32, c: u32, k: u32) -> BigRational {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() == k {
            total += 1;
            if mask & ((1 << c) - 1) != 0 {
                hit += 1;
            }
        }
    }
    BigRational::new(BigInt::from(hit), BigInt::from(total))
}

/// Builds `f` as `U diag(sqrt(M·λ)) Vᵀ`, centred, so that the covariance
/// spectrum is exactly `λ` (padded with zeros).
pub fn matrix_with_spectrum(lambda: &[f64], m: usize, d: usize, seed: u64) -> DMatrix<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r = lambda.len();
    assert!(r <= d && r < m);
    // orthonormal columns orthogonal to the all-ones vector keep the rows centred
    let mut a = DMatrix::from_fn(m, r + 1, |_, _| {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
    });
    a.set_column(0, &nalgebra::DVector::from_element(m, 1.0));
    let q = a.qr().q();
    let u = q.columns(1, r).into_owned();
    let b = DMatrix::from_fn(d, r, |_, _| {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
    });
    let v = b.qr().q();
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        r,
        lambda.iter().map(|l| (m as f64 * l).sqrt()),
    ));
    u * s * v.transpose()
}
