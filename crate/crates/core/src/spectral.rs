//! Covariance eigenspectra of activation matrices and the metrics derived
//! from them: entropy-based effective rank (RankMe), the power-law decay
//! exponent αReQ, and eigenvector ablations.
//!
//! All functions are pure; a [`FeatureMatrix`] is never mutated in place.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{complete_orthonormal_basis, symmetric_eigen_sorted};

/// Eigenvalues below `-NEGATIVE_CLAMP_TOL * σ₁` are treated as a solver failure;
/// anything between that and zero is round-off and is clamped to zero.
pub const NEGATIVE_CLAMP_TOL: f64 = 1e-10;

/// Default αReQ window: indices with `σᵢ > DEFAULT_FIT_FLOOR * σ₁`.
pub const DEFAULT_FIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("feature matrix needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("feature matrix needs at least 1 column")]
    NoColumns,
    #[error("feature matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("feature matrix must be centered before computing its covariance spectrum")]
    NotCentered,
    #[error("spectrum is all zeros; the eigenvalue distribution is undefined")]
    ZeroSpectrum,
    #[error("eigenvalue {value} at index {index} is negative beyond round-off")]
    NegativeEigenvalue { index: usize, value: f64 },
    #[error("spectrum value {0} is not finite")]
    NonFiniteSpectrum(f64),
    #[error("power-law fit needs at least 3 positive eigenvalues in the window, got {0}")]
    TooFewFitPoints(usize),
    #[error("power-law fit window has zero variance in ln(i)")]
    DegenerateFitWindow,
    #[error("fit window ({lo}, {hi}) is outside 1..={d}")]
    BadWindow { lo: usize, hi: usize, d: usize },
    #[error("ablation rank k={k} must satisfy 1 <= k <= {d}")]
    BadRank { k: usize, d: usize },
    #[error("projector built for dimension {expected} applied to a matrix with {got} columns")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, SpectralError>;

/// An `M × d` matrix of feature vectors, one row per input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    centered: bool,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(SpectralError::TooFewRows(data.nrows()));
        }
        if data.ncols() == 0 {
            return Err(SpectralError::NoColumns);
        }
        Ok(Self {
            data,
            centered: false,
        })
    }

    /// Builds from row vectors. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == d), "ragged feature rows");
        Self::new(DMatrix::from_fn(m, d, |i, j| rows[i][j]))
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    /// True after [`FeatureMatrix::center`] or when the column means already
    /// vanish within tolerance.
    pub fn is_centered(&self) -> bool {
        self.centered || self.column_means_vanish()
    }

    fn check_finite(&self) -> Result<()> {
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                if !self.data[(i, j)].is_finite() {
                    return Err(SpectralError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    /// Subtracts column means. Idempotent.
    pub fn center(&self) -> FeatureMatrix {
        let m = self.rows() as f64;
        let mut out = self.data.clone();
        for mut col in out.column_iter_mut() {
            // second pass removes the residual mean left by the first
            for _ in 0..2 {
                let mean = col.iter().sum::<f64>() / m;
                col.add_scalar_mut(-mean);
            }
        }
        FeatureMatrix {
            data: out,
            centered: true,
        }
    }

    /// Checks the centering invariant: every column mean is within
    /// `1e-10 × column std` of zero (absolute `1e-12` for constant columns).
    pub fn column_means_vanish(&self) -> bool {
        let m = self.rows() as f64;
        self.data.column_iter().all(|col| {
            let mean = col.iter().sum::<f64>() / m;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
            let tol = if var > 0.0 { 1e-10 * var.sqrt() } else { 1e-12 };
            mean.abs() <= tol
        })
    }
}

/// Descending eigenvalues of the feature covariance `(1/M) FᵀF`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    values: Vec<f64>,
    vectors: Option<DMatrix<f64>>,
    source_dims: (usize, usize),
}

impl EigenSpectrum {
    /// Wraps a list of eigenvalues. Values are sorted descending; negatives
    /// within round-off of zero are clamped, larger negatives are rejected.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(SpectralError::NonFiniteSpectrum(bad));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        clamp_negatives(&mut values)?;
        let d = values.len();
        Ok(Self {
            values,
            vectors: None,
            source_dims: (0, d),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Orthonormal eigenvectors as columns, matching `values` order.
    pub fn vectors(&self) -> Option<&DMatrix<f64>> {
        self.vectors.as_ref()
    }

    /// `(M, d)` of the matrix this spectrum came from; `M = 0` when built
    /// from raw values.
    pub fn source_dims(&self) -> (usize, usize) {
        self.source_dims
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn total_variance(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Same spectrum multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> EigenSpectrum {
        EigenSpectrum {
            values: self.values.iter().map(|v| v * c).collect(),
            vectors: self.vectors.clone(),
            source_dims: self.source_dims,
        }
    }

    /// Rebuilds `V diag(σ) Vᵀ`, if vectors are present.
    pub fn reconstruct(&self) -> Option<DMatrix<f64>> {
        let v = self.vectors.as_ref()?;
        let d = self.dim();
        let diag = DMatrix::from_fn(d, d, |i, j| if i == j { self.values[i] } else { 0.0 });
        Some(v * diag * v.transpose())
    }
}

fn clamp_negatives(values: &mut [f64]) -> Result<()> {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    for (i, v) in values.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -NEGATIVE_CLAMP_TOL * top {
                return Err(SpectralError::NegativeEigenvalue {
                    index: i,
                    value: *v,
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Eigenspectrum of `(1/M) FᵀF` for a centered feature matrix.
///
/// The eigenproblem is solved on the `d × d` covariance when `d ≤ M` and on
/// the `M × M` Gram matrix `(1/M) FFᵀ` otherwise; both share the same nonzero
/// spectrum. When vectors are requested on the Gram route, the eigenvectors
/// of the nonzero eigenvalues are mapped back through `Fᵀ` and the null space
/// is filled in with an arbitrary orthonormal completion.
pub fn covariance_spectrum(f: &FeatureMatrix, want_vectors: bool) -> Result<EigenSpectrum> {
    if !f.is_centered() {
        return Err(SpectralError::NotCentered);
    }
    f.check_finite()?;
    let (m, d) = (f.rows(), f.cols());
    let scale = 1.0 / m as f64;
    let x = f.data();

    let (mut values, vectors) = if d <= m {
        let cov = (x.transpose() * x) * scale;
        let cov = symmetrize(cov);
        let (vals, vecs) = symmetric_eigen_sorted(&cov);
        (vals, want_vectors.then_some(vecs))
    } else {
        let gram = symmetrize((x * x.transpose()) * scale);
        let (gvals, gvecs) = symmetric_eigen_sorted(&gram);
        let top = gvals.first().copied().unwrap_or(0.0).max(0.0);
        let mut vals = vec![0.0; d];
        vals[..m].copy_from_slice(&gvals);
        let vecs = if want_vectors {
            // v = Fᵀu / sqrt(M λ) for each nonzero λ
            let keep: Vec<usize> = (0..m).filter(|&i| gvals[i] > 1e-12 * top).collect();
            let mut partial = DMatrix::zeros(d, keep.len());
            for (c, &i) in keep.iter().enumerate() {
                let v = x.transpose() * gvecs.column(i);
                let norm = v.norm();
                partial.set_column(c, &(v / norm));
            }
            Some(complete_orthonormal_basis(&partial))
        } else {
            None
        };
        (vals, vecs)
    };

    clamp_negatives(&mut values)?;
    Ok(EigenSpectrum {
        values,
        vectors,
        source_dims: (m, d),
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Entropy-based effective rank: `exp(−Σ pᵢ ln pᵢ)` with `pᵢ = σᵢ / Σσⱼ`.
///
/// Zero eigenvalues contribute nothing (`0 ln 0 = 0`).
pub fn rankme(spec: &EigenSpectrum) -> Result<f64> {
    let total = spec.total_variance();
    if total <= 0.0 {
        return Err(SpectralError::ZeroSpectrum);
    }
    let entropy: f64 = spec
        .values()
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Result of the log-log least-squares fit behind αReQ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub r2: f64,
    /// 1-based inclusive index range the fit was restricted to.
    pub window: (usize, usize),
    /// Number of points with positive eigenvalues actually used.
    pub points: usize,
}

/// Fits `σᵢ ∝ i^{−α}` by ordinary least squares of `ln σᵢ` on `ln i`.
///
/// `window` is a 1-based inclusive index range. Without it, all indices with
/// `σᵢ > 1e-12 σ₁` are used. Non-positive eigenvalues inside an explicit
/// window are skipped.
pub fn alpha_req(spec: &EigenSpectrum, window: Option<(usize, usize)>) -> Result<PowerLawFit> {
    let d = spec.dim();
    let values = spec.values();
    let top = values.first().copied().unwrap_or(0.0);
    let (lo, hi) = match window {
        Some((lo, hi)) => {
            if lo == 0 || hi < lo || hi > d {
                return Err(SpectralError::BadWindow { lo, hi, d });
            }
            (lo, hi)
        }
        None => {
            let n = values
                .iter()
                .take_while(|&&s| s > DEFAULT_FIT_FLOOR * top)
                .count();
            if n < 3 {
                return Err(SpectralError::TooFewFitPoints(n));
            }
            (1, n)
        }
    };

    let pts: Vec<(f64, f64)> = (lo..=hi)
        .filter(|&i| values[i - 1] > 0.0)
        .map(|i| ((i as f64).ln(), values[i - 1].ln()))
        .collect();
    if pts.len() < 3 {
        return Err(SpectralError::TooFewFitPoints(pts.len()));
    }

    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(SpectralError::DegenerateFitWindow);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    // a perfectly flat spectrum is a perfect (zero-slope) fit
    let r2 = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };

    Ok(PowerLawFit {
        alpha: -slope,
        r2,
        window: (lo, hi),
        points: pts.len(),
    })
}

/// Metrics reported per feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMetrics {
    pub rankme: f64,
    pub alpha_req: f64,
    pub fit_window: (usize, usize),
    pub fit_r2: f64,
    pub m: usize,
    pub d: usize,
}

impl SpectralMetrics {
    pub fn from_spectrum(spec: &EigenSpectrum, window: Option<(usize, usize)>) -> Result<Self> {
        let fit = alpha_req(spec, window)?;
        let (m, d) = spec.source_dims();
        Ok(SpectralMetrics {
            rankme: rankme(spec)?,
            alpha_req: fit.alpha,
            fit_window: fit.window,
            fit_r2: fit.r2,
            m,
            d,
        })
    }
}

/// Centers `f` if needed and computes its spectral metrics.
pub fn spectral_metrics(
    f: &FeatureMatrix,
    window: Option<(usize, usize)>,
) -> Result<SpectralMetrics> {
    let centered;
    let f = if f.is_centered() {
        f
    } else {
        centered = f.center();
        &centered
    };
    SpectralMetrics::from_spectrum(&covariance_spectrum(f, false)?, window)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Keep only the span of the top-k eigenvectors.
    RetainTop,
    /// Project out the top-k eigenvectors.
    RemoveTop,
}

impl AblationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::RetainTop => "retain_top",
            AblationMode::RemoveTop => "remove_top",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "retain_top" | "retain-top" => Ok(AblationMode::RetainTop),
            "remove_top" | "remove-top" => Ok(AblationMode::RemoveTop),
            other => Err(format!(
                "unknown ablation mode `{other}` (expected retain_top or remove_top)"
            )),
        }
    }
}

/// Orthogonal projector onto (or away from) the top-k covariance eigenvectors
/// of a fitted feature matrix.
///
/// Eigenvalue ties at the k-th position are broken by the solver's
/// eigen-index order, ascending.
#[derive(Debug, Clone)]
pub struct SpectralProjector {
    projector: DMatrix<f64>,
    mode: AblationMode,
    k: usize,
}

impl SpectralProjector {
    pub fn fit(f: &FeatureMatrix, k: usize, mode: AblationMode) -> Result<Self> {
        let d = f.cols();
        if k == 0 || k > d {
            return Err(SpectralError::BadRank { k, d });
        }
        let spec = covariance_spectrum(f, true)?;
        let v = spec.vectors.expect("vectors requested");
        let top = v.columns(0, k);
        let p_top = top * top.transpose();
        let projector = match mode {
            AblationMode::RetainTop => p_top,
            AblationMode::RemoveTop => DMatrix::identity(d, d) - p_top,
        };
        Ok(Self { projector, mode, k })
    }

    pub fn mode(&self) -> AblationMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.projector
    }

    pub fn apply(&self, f: &FeatureMatrix) -> Result<FeatureMatrix> {
        if f.cols() != self.projector.nrows() {
            return Err(SpectralError::DimensionMismatch {
                expected: self.projector.nrows(),
                got: f.cols(),
            });
        }
        // projecting centered rows keeps column means at zero
        Ok(FeatureMatrix {
            data: f.data() * &self.projector,
            centered: f.is_centered(),
        })
    }
}

/// Projects the rows of a centered `F` onto the span of its top-k
/// eigenvectors (`RetainTop`) or onto the orthogonal complement
/// (`RemoveTop`). The output keeps all `d` columns.
pub fn ablate_spectrum(f: &FeatureMatrix, k: usize, mode: AblationMode) -> Result<FeatureMatrix> {
    SpectralProjector::fit(f, k, mode)?.apply(f)
}
