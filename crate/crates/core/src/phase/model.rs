use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ToyConfig;
use super::objective::{Objective, ObjectiveRegistry};
use super::PhaseError;
use crate::linalg::{
    frobenius, gaussian_matrix, random_orthonormal_columns, svd_sorted, symmetric_eigen_sorted, Svd,
};
use crate::spectral::{rankme, EigenSpectrum};

/// Parameters `(θ, W)` of the linear model `z = SθW`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelState {
    pub theta: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// Inputs with orthonormal rows.
    pub s: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    /// Set when the initial features are identically zero.
    pub degenerate_init: bool,
}

impl ToyModelState {
    pub fn features(&self) -> DMatrix<f64> {
        &self.s * &self.theta
    }

    pub fn logits(&self) -> DMatrix<f64> {
        self.features() * &self.w
    }

    /// `‖fᵀf − WWᵀ‖_F`.
    pub fn conservation_residual(&self) -> f64 {
        let f = self.features();
        frobenius(&(f.transpose() * &f - &self.w * self.w.transpose()))
    }
}

/// Draws `S`, a small random `θ`, and `W = V₁ S₁ Qᵀ` from the SVD
/// `f = U₁ S₁ V₁ᵀ`, so that `fᵀf = WWᵀ` holds to round-off.
pub fn init_balanced(cfg: &ToyConfig) -> Result<ToyModelState, PhaseError> {
    cfg.validate_shape()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows = cfg.input_rows();
    let s = random_orthonormal_columns(&mut rng, cfg.d_in, rows).transpose();
    let theta = gaussian_matrix(&mut rng, cfg.d_in, cfg.d) * cfg.init_scale;
    let f = &s * &theta;
    let svd = svd_sorted(&f);
    let r = svd.s.len();
    let q = random_orthonormal_columns(&mut rng, cfg.vocab, r);
    let s1 = DMatrix::from_diagonal(&DVector::from_vec(svd.s.clone()));
    let w = &svd.v * s1 * q.transpose();
    let degenerate_init = svd.s.iter().all(|&x| x == 0.0);
    Ok(ToyModelState {
        theta,
        w,
        s,
        labels: cfg.labels(),
        weights: cfg.weights(),
        degenerate_init,
    })
}

/// One Euler step: `θ ← θ − η Sᵀ(AWᵀ)`, `W ← W − η fᵀA`.
pub fn gd_step(state: &ToyModelState, a: &DMatrix<f64>, lr: f64) -> ToyModelState {
    let f = state.features();
    let theta = &state.theta - (state.s.transpose() * (a * state.w.transpose())) * lr;
    let w = &state.w - (f.transpose() * a) * lr;
    ToyModelState {
        theta,
        w,
        ..state.clone()
    }
}

/// Light per-step scalars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub rankme: f64,
    pub sigma_f: Vec<f64>,
    pub sigma_w: Vec<f64>,
    pub align_err: f64,
    pub conserve_err: f64,
    pub a_norm: f64,
}

/// Full matrices at one step, kept for the singular-value checks.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub f: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: ToyConfig,
    pub records: Vec<StepRecord>,
    pub states: Vec<StepState>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub degenerate_init: bool,
}

impl Trajectory {
    pub fn rankme_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rankme).collect()
    }

    /// `k`-th singular value of the features across steps (0-based `k`).
    pub fn sigma_f_series(&self, k: usize) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.sigma_f.get(k).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Relative gap below which neighbouring singular values count as equal.
pub const DEGENERACY_TOL: f64 = 1e-6;

/// Groups of indices whose singular values agree within
/// `DEGENERACY_TOL · σ_max`.
pub fn degenerate_groups(s: &[f64]) -> Vec<Vec<usize>> {
    let top = s.first().copied().unwrap_or(0.0);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &x) in s.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if (s[*g.last().unwrap()] - x).abs() <= DEGENERACY_TOL * top => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

fn projector(cols: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let sub = cols.select_columns(idx);
    &sub * sub.transpose()
}

/// Alignment between the right singular vectors of `f` and the left singular
/// vectors of `W`.
///
/// Without degeneracy this is `‖|V₁ᵀU₂| − I‖_F` over the shared rank. When
/// singular values of `f` coincide, each tied group contributes
/// `‖P_{V₁} − P_{U₂}‖_F / √2` instead. Returns the error and whether any
/// group was degenerate.
pub fn alignment_error(svd_f: &Svd, svd_w: &Svd) -> (f64, bool) {
    let k = svd_f.s.len().min(svd_w.s.len());
    let top = svd_f.s.first().copied().unwrap_or(0.0);
    if k == 0 || top == 0.0 {
        return (0.0, false);
    }
    let groups = degenerate_groups(&svd_f.s[..k]);
    let degenerate = groups.iter().any(|g| g.len() > 1);
    if !degenerate {
        let m = svd_f.v.columns(0, k).transpose() * svd_w.u.columns(0, k);
        let err = m.abs() - DMatrix::identity(k, k);
        return (frobenius(&err), false);
    }
    let mut sq = 0.0;
    for g in &groups {
        let diff = projector(&svd_f.v, g) - projector(&svd_w.u, g);
        sq += frobenius(&diff).powi(2) / 2.0;
    }
    (sq.sqrt(), true)
}

/// RankMe of the weighted covariance of the feature rows. Zero features
/// give 0.
pub fn weighted_rankme(f: &DMatrix<f64>, weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::zeros(f.ncols());
    for (i, &w) in weights.iter().enumerate() {
        mean += f.row(i).transpose() * (w / total);
    }
    let mut cov = DMatrix::zeros(f.ncols(), f.ncols());
    for (i, &w) in weights.iter().enumerate() {
        let c = f.row(i).transpose() - &mean;
        cov += &c * c.transpose() * (w / total);
    }
    let (vals, _) = symmetric_eigen_sorted(&cov);
    EigenSpectrum::from_values(vals)
        .and_then(|s| rankme(&s))
        .unwrap_or(0.0)
}

fn record(step: usize, st: &ToyModelState, obj: &dyn Objective) -> (StepRecord, StepState) {
    let f = st.features();
    let z = &f * &st.w;
    let a = obj.residual(&z, &st.labels, &st.weights);
    let svd_f = svd_sorted(&f);
    let svd_w = svd_sorted(&st.w);
    let (align_err, _) = alignment_error(&svd_f, &svd_w);
    let rec = StepRecord {
        step,
        loss: obj.loss(&z, &st.labels, &st.weights),
        rankme: weighted_rankme(&f, &st.weights),
        sigma_f: svd_f.s.clone(),
        sigma_w: svd_w.s.clone(),
        align_err,
        conserve_err: frobenius(&(f.transpose() * &f - &st.w * st.w.transpose())),
        a_norm: frobenius(&a),
    };
    (
        rec,
        StepState {
            f,
            w: st.w.clone(),
            a,
        },
    )
}

/// Runs `cfg.steps` gradient steps from a balanced init with the default
/// objective registry.
pub fn run_trajectory(cfg: &ToyConfig) -> Result<Trajectory, PhaseError> {
    run_trajectory_with(cfg, &ObjectiveRegistry::default())
}

pub fn run_trajectory_with(
    cfg: &ToyConfig,
    registry: &ObjectiveRegistry,
) -> Result<Trajectory, PhaseError> {
    cfg.validate(registry)?;
    let obj: Arc<dyn Objective> = registry.get(&cfg.loss).expect("validated");
    let mut st = init_balanced(cfg)?;
    let mut records = Vec::with_capacity(cfg.steps + 1);
    let mut states = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (rec, snap) = record(step, &st, obj.as_ref());
        let a = snap.a.clone();
        records.push(rec);
        states.push(snap);
        if step == cfg.steps {
            break;
        }
        st = gd_step(&st, &a, cfg.lr);
        if st.theta.iter().chain(st.w.iter()).any(|x| !x.is_finite()) {
            return Err(PhaseError::Diverged { step: step + 1 });
        }
    }
    Ok(Trajectory {
        config: cfg.clone(),
        records,
        states,
        labels: st.labels,
        weights: st.weights,
        degenerate_init: st.degenerate_init,
    })
}
