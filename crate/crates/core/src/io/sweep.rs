use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::matrix::decode_matrix;
use super::{IoError, Result};
use crate::phase::format_float;
use crate::spectral::{
    ablate_spectrum, covariance_spectrum, AblationMode, FeatureMatrix, SpectralMetrics,
};

/// Environment variable capping sweep parallelism; 0 or unset means automatic.
pub const THREADS_ENV: &str = "SPECGEO_THREADS";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub k: usize,
    pub modes: Vec<AblationMode>,
}

/// Ordered matrix files to analyse, plus shared options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(default = "default_center")]
    pub center: bool,
    #[serde(default)]
    pub alpha_window: Option<(usize, usize)>,
    #[serde(default)]
    pub ablation: Option<AblationSpec>,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

fn default_center() -> bool {
    true
}

impl RunManifest {
    /// Manifest over `entries` with centering on and no ablation.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            center: true,
            alpha_window: None,
            ablation: None,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    /// Non-empty with unique labels.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(IoError::Manifest("no entries".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.label.as_str()) {
                return Err(IoError::Manifest(format!("duplicate label `{}`", e.label)));
            }
        }
        if let Some(a) = &self.ablation {
            if a.k == 0 || a.modes.is_empty() {
                return Err(IoError::Manifest(
                    "ablation needs k ≥ 1 and at least one mode".into(),
                ));
            }
        }
        Ok(())
    }

    /// Parses TOML; relative entry paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: RunManifest =
            toml::from_str(text).map_err(|e| IoError::Manifest(e.to_string()))?;
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = base_dir.join(&e.path);
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// Reads a TOML manifest and checks that every entry path exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base)?;
        if let Some(e) = m.entries.iter().find(|e| !e.path.exists()) {
            return Err(IoError::Manifest(format!(
                "entry `{}`: {} does not exist",
                e.label,
                e.path.display()
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationResult {
    pub mode: AblationMode,
    pub k: usize,
    /// Variance of the ablated features over that of the originals.
    pub retained_energy: f64,
    pub metrics: SpectralMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryReport {
    pub label: String,
    pub path: String,
    pub status: &'static str,
    pub sha256: Option<String>,
    pub metrics: Option<SpectralMetrics>,
    pub ablations: Vec<AblationResult>,
    pub error: Option<EntryError>,
}

impl EntryReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub toolkit_version: String,
    pub center: bool,
    pub alpha_window: Option<(usize, usize)>,
    pub ablation: Option<AblationSpec>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub entries: Vec<EntryReport>,
}

impl MetricsReport {
    pub fn all_ok(&self) -> bool {
        self.n_failed == 0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per entry and variant (`full` or an ablation mode).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "label",
            "variant",
            "k",
            "status",
            "sha256",
            "rankme",
            "alpha_req",
            "fit_lo",
            "fit_hi",
            "fit_r2",
            "m",
            "d",
            "retained_energy",
            "error",
        ])
        .expect("in-memory write");
        let num = format_float;
        for e in &self.entries {
            let hash = e.sha256.clone().unwrap_or_default();
            let err = e
                .error
                .as_ref()
                .map(|x| format!("{}: {}", x.code, x.message))
                .unwrap_or_default();
            let mut row =
                |variant: &str, k: String, m: Option<&SpectralMetrics>, energy: String| {
                    let cells = match m {
                        Some(m) => vec![
                            num(m.rankme),
                            num(m.alpha_req),
                            m.fit_window.0.to_string(),
                            m.fit_window.1.to_string(),
                            num(m.fit_r2),
                            m.m.to_string(),
                            m.d.to_string(),
                        ],
                        None => vec![String::new(); 7],
                    };
                    let mut rec = vec![
                        e.label.clone(),
                        variant.to_string(),
                        k,
                        e.status.to_string(),
                        hash.clone(),
                    ];
                    rec.extend(cells);
                    rec.push(energy);
                    rec.push(err.clone());
                    w.write_record(&rec).expect("in-memory write");
                };
            row("full", String::new(), e.metrics.as_ref(), String::new());
            for a in &e.ablations {
                row(
                    a.mode.as_str(),
                    a.k.to_string(),
                    Some(&a.metrics),
                    num(a.retained_energy),
                );
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

pub fn file_sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Worker count from the environment: `None` when unset or 0.
pub fn configured_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(IoError::Manifest(format!(
                "{THREADS_ENV} must be a nonnegative integer, got `{v}`"
            ))),
        },
    }
}

fn analyse(manifest: &RunManifest, bytes: &[u8]) -> Result<(SpectralMetrics, Vec<AblationResult>)> {
    let f = FeatureMatrix::new(decode_matrix(bytes)?)?;
    let f = if manifest.center { f.center() } else { f };
    let spec = covariance_spectrum(&f, false)?;
    let metrics = SpectralMetrics::from_spectrum(&spec, manifest.alpha_window)?;
    let mut ablations = Vec::new();
    if let Some(a) = &manifest.ablation {
        for &mode in &a.modes {
            let g = ablate_spectrum(&f, a.k, mode)?;
            let gspec = covariance_spectrum(&g, false)?;
            ablations.push(AblationResult {
                mode,
                k: a.k,
                retained_energy: gspec.total_variance() / spec.total_variance(),
                metrics: SpectralMetrics::from_spectrum(&gspec, manifest.alpha_window)?,
            });
        }
    }
    Ok((metrics, ablations))
}

fn run_entry(manifest: &RunManifest, entry: &ManifestEntry) -> EntryReport {
    let mut report = EntryReport {
        label: entry.label.clone(),
        path: entry.path.display().to_string(),
        status: "ok",
        sha256: None,
        metrics: None,
        ablations: Vec::new(),
        error: None,
    };
    let outcome = std::fs::read(&entry.path)
        .map_err(|e| IoError::io(&entry.path, e))
        .and_then(|bytes| {
            report.sha256 = Some(file_sha256(&bytes));
            analyse(manifest, &bytes)
        });
    match outcome {
        Ok((m, a)) => {
            report.metrics = Some(m);
            report.ablations = a;
        }
        Err(e) => {
            report.status = "error";
            report.error = Some(EntryError {
                code: e.code().to_string(),
                message: e.to_string(),
            });
        }
    }
    report
}

/// Computes metrics for every entry, in parallel on `threads` workers
/// (`None` for automatic). Entry failures are recorded, not propagated.
pub fn run_sweep(manifest: &RunManifest, threads: Option<usize>) -> Result<MetricsReport> {
    manifest.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| IoError::Manifest(format!("thread pool: {e}")))?;
    let entries: Vec<EntryReport> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| run_entry(manifest, e))
            .collect()
    });
    let n_failed = entries.iter().filter(|e| !e.is_ok()).count();
    Ok(MetricsReport {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        center: manifest.center,
        alpha_window: manifest.alpha_window,
        ablation: manifest.ablation.clone(),
        n_ok: entries.len() - n_failed,
        n_failed,
        entries,
    })
}

/// Writes `report.json` and `report.csv` into `dir`, creating it if needed.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let json = dir.join("report.json");
    let csv = dir.join("report.csv");
    std::fs::write(&json, report.to_json()).map_err(|e| IoError::io(&json, e))?;
    std::fs::write(&csv, report.to_csv()).map_err(|e| IoError::io(&csv, e))?;
    Ok((json, csv))
}

/// Human-readable one-line-per-entry summary.
pub fn summary_lines(report: &MetricsReport) -> String {
    let mut s = String::new();
    for e in &report.entries {
        match (&e.metrics, &e.error) {
            (Some(m), _) => {
                let _ = writeln!(
                    s,
                    "{}\trankme={:?}\talpha_req={:?}\tr2={:?}",
                    e.label, m.rankme, m.alpha_req, m.fit_r2
                );
            }
            (None, Some(err)) => {
                let _ = writeln!(s, "{}\terror[{}]: {}", e.label, err.code, err.message);
            }
            (None, None) => {}
        }
    }
    s
}
