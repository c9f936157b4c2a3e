//! Small dense linear-algebra helpers shared by the spectral and toy-model code.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Singular value decomposition with a fixed ordering and sign convention.
///
/// Singular values are sorted in descending order. Each left singular vector
/// is flipped so that its largest-magnitude entry is positive, and the
/// matching right singular vector is flipped with it, so `m = u * diag(s) * vᵀ`
/// still holds.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors as columns (rows × r).
    pub u: DMatrix<f64>,
    /// Singular values, descending.
    pub s: Vec<f64>,
    /// Right singular vectors as columns (cols × r).
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn rank_cutoff(&self, rel_tol: f64) -> usize {
        let top = self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&x| x > rel_tol * top).count()
    }
}

pub fn svd_sorted(m: &DMatrix<f64>) -> Svd {
    let r = m.nrows().min(m.ncols());
    let svd = m.clone().svd(true, true);
    let u_raw = svd.u.expect("u requested");
    let vt_raw = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..r).collect();
    // stable: equal singular values keep solver order
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut u = DMatrix::zeros(m.nrows(), r);
    let mut v = DMatrix::zeros(m.ncols(), r);
    let mut s = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        let mut uc = u_raw.column(src).into_owned();
        let mut vc = vt_raw.row(src).transpose();
        if leading_sign(uc.as_slice()) < 0.0 {
            uc.neg_mut();
            vc.neg_mut();
        }
        u.set_column(dst, &uc);
        v.set_column(dst, &vc);
        s.push(svd.singular_values[src]);
    }
    Svd { u, s, v }
}

/// Sign of the largest-magnitude entry; the first such entry wins ties.
fn leading_sign(x: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &v in x {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
///
/// Ties keep the solver's index order, which makes downstream truncation
/// deterministic.
pub fn symmetric_eigen_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vecs = DMatrix::zeros(n, n);
    let mut vals = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
        vals.push(eig.eigenvalues[src]);
    }
    (vals, vecs)
}

/// Extends `k` orthonormal columns of an `n × k` matrix to a full `n × n`
/// orthonormal basis by Gram-Schmidt against the standard basis.
pub fn complete_orthonormal_basis(partial: &DMatrix<f64>) -> DMatrix<f64> {
    let n = partial.nrows();
    let mut cols: Vec<DVector<f64>> = partial.column_iter().map(|c| c.into_owned()).collect();
    let mut e = 0;
    while cols.len() < n && e < n {
        let mut cand = DVector::zeros(n);
        cand[e] = 1.0;
        // two passes of classical Gram-Schmidt for stability
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&cand);
                cand.axpy(-proj, c, 1.0);
            }
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            cols.push(cand / norm);
        }
        e += 1;
    }
    DMatrix::from_columns(&cols)
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill order is part of the seeded-determinism contract
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random `n × k` matrix with orthonormal columns (`k ≤ n`).
pub fn random_orthonormal_columns<R: Rng>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    assert!(
        k <= n,
        "cannot draw {k} orthonormal columns in dimension {n}"
    );
    let g = gaussian_matrix(rng, n, k);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix signs so the factorization is unique (diag(R) > 0)
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q.columns(0, k).into_owned()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}
