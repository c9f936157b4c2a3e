//! Diagnostics over a recorded trajectory: phase detection, the conservation
//! and alignment law, singular-value rate checks and the primacy probe.

use nalgebra::DMatrix;
use serde::Serialize;

use super::config::ToyConfig;
use super::model::{alignment_error, degenerate_groups, run_trajectory, Trajectory};
use super::PhaseError;
use crate::linalg::{frobenius, spectral_norm, svd_sorted, Svd};

/// Relative tolerance for "no interior maximum" and "nondecreasing" after
/// smoothing.
pub const PHASE_TOL: f64 = 0.025;

/// Moving average over `window` points (`valid` convolution).
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let w = window.clamp(1, x.len().max(1));
    if x.len() < w {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(x.len() - w + 1);
    let mut acc: f64 = x[..w].iter().sum();
    out.push(acc / w as f64);
    for i in w..x.len() {
        acc += x[i] - x[i - w];
        out.push(acc / w as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReport {
    pub window: usize,
    /// Step at the smoothed minimum of the first half (end of warmup).
    pub warmup_end: usize,
    /// Step at the smoothed maximum after warmup (entropy → compression).
    pub peak: usize,
    pub peak_rankme: f64,
    pub final_rankme: f64,
    /// `(peak − final) / peak` on the smoothed series.
    pub peak_drop: f64,
    pub interior_max: bool,
    /// Post-warmup local maxima whose prominence exceeds the tolerance.
    pub n_peaks: usize,
    /// Largest relative dip below the running maximum after warmup.
    pub max_violation: f64,
    pub nondecreasing: bool,
    pub tolerance: f64,
}

impl PhaseReport {
    /// One smoothed interior maximum: the entropy-seeking then
    /// compression-seeking signature.
    pub fn has_single_interior_max(&self) -> bool {
        self.interior_max && self.n_peaks == 1
    }
}

/// Smooths with a window of 5% of the series and locates the phases.
pub fn detect_phases(series: &[f64], tol: f64) -> PhaseReport {
    let window = (series.len() / 20).max(1);
    let s = moving_average(series, window);
    let offset = (window - 1) / 2;
    let half = (s.len() / 2).max(1);
    let warm = argmin(&s[..half]);
    let peak = warm + argmax(&s[warm..]);
    let last = s.len() - 1;
    let peak_drop = if s[peak] > 0.0 {
        (s[peak] - s[last]) / s[peak]
    } else {
        0.0
    };

    let mut running = f64::NEG_INFINITY;
    let mut max_violation: f64 = 0.0;
    for &v in &s[warm..] {
        running = running.max(v);
        if running > 0.0 {
            max_violation = max_violation.max((running - v) / running);
        }
    }
    let n_peaks = prominent_peaks(&s[warm..], tol);
    PhaseReport {
        window,
        warmup_end: warm + offset,
        peak: peak + offset,
        peak_rankme: s[peak],
        final_rankme: s[last],
        peak_drop,
        interior_max: peak < last && peak_drop > tol,
        n_peaks,
        max_violation,
        nondecreasing: max_violation <= tol,
        tolerance: tol,
    }
}

fn argmin(x: &[f64]) -> usize {
    (0..x.len()).fold(0, |b, i| if x[i] < x[b] { i } else { b })
}

fn argmax(x: &[f64]) -> usize {
    (0..x.len()).fold(0, |b, i| if x[i] > x[b] { i } else { b })
}

/// Interior local maxima whose topographic prominence exceeds `tol · height`.
fn prominent_peaks(s: &[f64], tol: f64) -> usize {
    let n = s.len();
    let mut count = 0;
    let mut i = 1;
    while i + 1 < n {
        if s[i] > s[i - 1] {
            // walk across a plateau
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] < s[i] {
                let mut left = s[i];
                for k in (0..i).rev() {
                    if s[k] > s[i] {
                        break;
                    }
                    left = left.min(s[k]);
                }
                let mut right = s[i];
                for &v in &s[j + 1..] {
                    if v > s[i] {
                        break;
                    }
                    right = right.min(v);
                }
                if s[i] - left.max(right) > tol * s[i].abs() {
                    count += 1;
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LateGrowth {
    pub from_step: usize,
    pub delta_sigma1: f64,
    pub delta_sigma2: f64,
    pub log_growth_sigma1: f64,
    pub log_growth_sigma2: f64,
}

impl LateGrowth {
    pub fn sigma1_faster(&self) -> bool {
        self.delta_sigma1 > self.delta_sigma2 && self.log_growth_sigma1 > self.log_growth_sigma2
    }
}

/// Growth of the top two feature singular values from `from_step` to the end.
pub fn late_growth(traj: &Trajectory, from_step: usize) -> LateGrowth {
    let s1 = traj.sigma_f_series(0);
    let s2 = traj.sigma_f_series(1);
    let last = s1.len() - 1;
    let t = from_step.min(last);
    let lg = |a: f64, b: f64| {
        if a > 0.0 && b > 0.0 {
            (b / a).ln()
        } else {
            0.0
        }
    };
    LateGrowth {
        from_step: t,
        delta_sigma1: s1[last] - s1[t],
        delta_sigma2: s2[last] - s2[t],
        log_growth_sigma1: lg(s1[t], s1[last]),
        log_growth_sigma2: lg(s2[t], s2[last]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub initial_residual: f64,
    /// Initial residual over `‖fᵀf‖_F`.
    pub initial_relative: f64,
    pub max_residual: f64,
    pub final_residual: f64,
    pub initial_alignment: f64,
    pub max_alignment: f64,
    pub max_alignment_step: usize,
    /// Steps where tied singular values forced the projector comparison.
    pub degenerate_steps: usize,
}

pub fn check_conservation(traj: &Trajectory) -> ConservationReport {
    let r0 = &traj.records[0];
    let f0 = &traj.states[0].f;
    let gram = frobenius(&(f0.transpose() * f0));
    let mut max_alignment = 0.0;
    let mut max_alignment_step = 0;
    let mut degenerate_steps = 0;
    for (rec, st) in traj.records.iter().zip(&traj.states) {
        if rec.align_err > max_alignment {
            max_alignment = rec.align_err;
            max_alignment_step = rec.step;
        }
        let top = rec.sigma_f.first().copied().unwrap_or(0.0);
        if top > 0.0 && degenerate_groups(&rec.sigma_f).iter().any(|g| g.len() > 1) {
            let (_, deg) = alignment_error(&svd_sorted(&st.f), &svd_sorted(&st.w));
            degenerate_steps += usize::from(deg);
        }
    }
    ConservationReport {
        initial_residual: r0.conserve_err,
        initial_relative: if gram > 0.0 {
            r0.conserve_err / gram
        } else {
            0.0
        },
        max_residual: traj
            .records
            .iter()
            .map(|r| r.conserve_err)
            .fold(0.0, f64::max),
        final_residual: traj.records.last().map_or(0.0, |r| r.conserve_err),
        initial_alignment: r0.align_err,
        max_alignment,
        max_alignment_step,
        degenerate_steps,
    }
}

/// Change of `fᵀf − WWᵀ` over one Euler step of size `lr`.
pub fn step_drift(f: &DMatrix<f64>, w: &DMatrix<f64>, a: &DMatrix<f64>, lr: f64) -> f64 {
    let c0 = f.transpose() * f - w * w.transpose();
    let f1 = f - (a * w.transpose()) * lr;
    let w1 = w - (f.transpose() * a) * lr;
    let c1 = f1.transpose() * &f1 - &w1 * w1.transpose();
    frobenius(&(c1 - c0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRatio {
    pub lr: f64,
    pub drift: f64,
    pub drift_half_lr: f64,
    /// `drift / drift_half_lr`; about 4 for a second-order integrator error
    /// at a fixed state.
    pub ratio: f64,
}

/// Conservation drift after `cfg.steps` steps at `cfg.lr` and at `cfg.lr / 2`.
pub fn drift_ratio_test(cfg: &ToyConfig) -> Result<DriftRatio, PhaseError> {
    let full = run_trajectory(cfg)?;
    let half = run_trajectory(&ToyConfig {
        lr: cfg.lr / 2.0,
        ..cfg.clone()
    })?;
    let drift = full.records.last().unwrap().conserve_err - full.records[0].conserve_err;
    let drift_half_lr = half.records.last().unwrap().conserve_err - half.records[0].conserve_err;
    Ok(DriftRatio {
        lr: cfg.lr,
        drift,
        drift_half_lr,
        ratio: drift / drift_half_lr,
    })
}

/// `gᵢ = u₁ᵢᵀ A ṽᵢ`, with `ṽᵢ = Wᵀv₁ᵢ / ‖Wᵀv₁ᵢ‖` the right singular vector of
/// `W` paired with the i-th right singular vector of `f`. Indices where
/// `Wᵀv₁ᵢ` vanishes give 0.
pub fn g_values(svd_f: &Svd, w: &DMatrix<f64>, a: &DMatrix<f64>) -> Vec<f64> {
    let k = svd_f.s.len().min(w.nrows()).min(w.ncols());
    (0..k)
        .map(|i| {
            let v = w.transpose() * svd_f.v.column(i);
            let n = v.norm();
            if n == 0.0 {
                return 0.0;
            }
            (svd_f.u.column(i).transpose() * a * (v / n))[(0, 0)]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaRateReport {
    /// Max relative error of the forward difference against `uᵀΔM v`.
    pub max_projection_error: f64,
    /// Max relative error against `−η gᵢ σᵢ`.
    pub max_formula_error: f64,
    /// Max relative error of `|Δσᵢ|/σᵢ` against `η|gᵢ|`.
    pub max_collapse_error: f64,
    pub checked: usize,
    pub skipped_small: usize,
    pub skipped_near_degenerate: usize,
    pub skipped_stationary: usize,
    pub small_sigma_tol: f64,
    pub gap_factor: f64,
}

impl SigmaRateReport {
    pub fn within(&self, tol: f64) -> bool {
        self.checked > 0
            && self.max_projection_error <= tol
            && self.max_formula_error <= tol
            && self.max_collapse_error <= tol
    }
}

/// Indices below `small_sigma_tol · σ_max` are skipped, as are indices whose
/// gap to a neighbouring singular value (or to zero) is under
/// `gap_factor · ‖ΔM‖₂`, where first-order perturbation theory breaks down,
/// and indices whose predicted change is negligible (`≤ 1e-10 σ`) or does not
/// dominate the second-order term (`≤ gap_factor · ‖ΔM‖₂² / gap`).
pub fn check_sigma_rates(
    traj: &Trajectory,
    small_sigma_tol: f64,
    gap_factor: f64,
) -> SigmaRateReport {
    let lr = traj.config.lr;
    let mut rep = SigmaRateReport {
        max_projection_error: 0.0,
        max_formula_error: 0.0,
        max_collapse_error: 0.0,
        checked: 0,
        skipped_small: 0,
        skipped_near_degenerate: 0,
        skipped_stationary: 0,
        small_sigma_tol,
        gap_factor,
    };
    let mut prev: Option<(Svd, Svd)> = None;
    for t in 0..traj.states.len().saturating_sub(1) {
        let st = &traj.states[t];
        let (svd_f, svd_w) = prev
            .take()
            .unwrap_or_else(|| (svd_sorted(&st.f), svd_sorted(&st.w)));
        let nxt = &traj.states[t + 1];
        let (next_f, next_w) = (svd_sorted(&nxt.f), svd_sorted(&nxt.w));

        let d_f = -(&st.a * st.w.transpose()) * lr;
        let d_w = -(st.f.transpose() * &st.a) * lr;
        let g = g_values(&svd_f, &st.w, &st.a);
        let norm_f = spectral_norm(&d_f);
        let norm_w = spectral_norm(&d_w);

        for (svd, next, dm, nrm, other) in [
            (&svd_f, &next_f, &d_f, norm_f, &svd_w),
            (&svd_w, &next_w, &d_w, norm_w, &svd_f),
        ] {
            let top = svd.s.first().copied().unwrap_or(0.0);
            for (i, &gi) in g.iter().enumerate() {
                let sigma = svd.s[i];
                if sigma < small_sigma_tol * top || sigma == 0.0 {
                    rep.skipped_small += 1;
                    continue;
                }
                let gap = svd
                    .s
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &x)| (x - sigma).abs())
                    .fold(sigma, f64::min);
                if gap < gap_factor * nrm {
                    rep.skipped_near_degenerate += 1;
                    continue;
                }
                // σ̇ of f is driven by σ of W and vice versa
                let partner = other.s.get(i).copied().unwrap_or(0.0);
                let pred = -lr * gi * partner;
                // second-order perturbation of σ is bounded by ‖ΔM‖²/gap
                if pred.abs() <= 1e-10 * sigma || pred.abs() <= gap_factor * nrm * nrm / gap {
                    rep.skipped_stationary += 1;
                    continue;
                }
                let fd = next.s[i] - sigma;
                let projected = (svd.u.column(i).transpose() * dm * svd.v.column(i))[(0, 0)];
                let rate = lr * gi.abs() * partner / sigma;
                rep.max_projection_error = rep
                    .max_projection_error
                    .max((fd - projected).abs() / projected.abs());
                rep.max_formula_error = rep.max_formula_error.max((fd - pred).abs() / pred.abs());
                rep.max_collapse_error = rep
                    .max_collapse_error
                    .max((fd.abs() / sigma - rate).abs() / rate);
                rep.checked += 1;
            }
        }
        prev = Some((next_f, next_w));
    }
    rep
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimacyReport {
    pub threshold: f64,
    pub class_counts: Vec<usize>,
    /// First step from which each class's mean logit margin stays above the
    /// threshold until the end, if any.
    pub crossing_steps: Vec<Option<usize>>,
    /// Every class crosses no later than any strictly rarer class.
    pub frequent_first: bool,
    /// Correlation across indices `i` of `Δσᵢ` against `σᵢ`, averaged over the
    /// steps from `from_step` on.
    pub selection_bias: Option<f64>,
    pub from_step: usize,
}

/// Mean margin `z_c − max_{j≠c} z_j` of each class's rows.
pub fn class_margins(logits: &DMatrix<f64>, labels: &[usize], vocab: usize) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; vocab];
    let mut n = vec![0usize; vocab];
    for (i, &c) in labels.iter().enumerate() {
        let zc = logits[(i, c)];
        let other = (0..logits.ncols())
            .filter(|&j| j != c)
            .map(|j| logits[(i, j)])
            .fold(f64::NEG_INFINITY, f64::max);
        sum[c] += zc - other;
        n[c] += 1;
    }
    sum.iter()
        .zip(&n)
        .map(|(&s, &k)| (k > 0).then(|| s / k as f64))
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Primacy (which classes are learned first) and selection bias (whether
/// larger singular values grow faster) after `from_step`.
pub fn primacy_selection_probe(traj: &Trajectory, from_step: usize) -> PrimacyReport {
    let cfg = &traj.config;
    let mut crossing_steps = vec![None; cfg.vocab];
    for (t, st) in traj.states.iter().enumerate() {
        let margins = class_margins(&(&st.f * &st.w), &traj.labels, cfg.vocab);
        for (c, m) in margins.iter().enumerate() {
            if m.is_some_and(|m| m > cfg.margin_threshold) {
                crossing_steps[c].get_or_insert(t);
            } else {
                crossing_steps[c] = None;
            }
        }
    }
    let key = |s: Option<usize>| s.unwrap_or(usize::MAX);
    let counts = &cfg.class_counts;
    let frequent_first = (0..cfg.vocab).all(|a| {
        (0..cfg.vocab)
            .all(|b| counts[a] <= counts[b] || key(crossing_steps[a]) <= key(crossing_steps[b]))
    });

    let recs = &traj.records;
    let per_step: Vec<f64> = (from_step..recs.len().saturating_sub(1))
        .filter_map(|t| {
            let s = &recs[t].sigma_f;
            let ds: Vec<f64> = s
                .iter()
                .zip(&recs[t + 1].sigma_f)
                .map(|(a, b)| b - a)
                .collect();
            pearson(s, &ds)
        })
        .collect();
    let selection_bias =
        (!per_step.is_empty()).then(|| per_step.iter().sum::<f64>() / per_step.len() as f64);
    PrimacyReport {
        threshold: cfg.margin_threshold,
        class_counts: counts.clone(),
        crossing_steps,
        frequent_first,
        selection_bias,
        from_step,
    }
}
