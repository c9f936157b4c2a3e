//! `specgeo`: command-line front end for the spectral, ∞-gram, toy-model and
//! evaluation toolkit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use specgeo::eval::{dpo_loss, dpo_nce_identity, pass_at_k, Problem};
use specgeo::infini_gram::{
    distributional_memorization, CorrelationUnit, SuffixIndex, TokenCorpus,
};
use specgeo::io::{
    configured_threads, load_corpus_or_index, read_feature_matrix, read_pairs_csv,
    read_problems_csv, read_trace_csv, run_sweep, summary_lines, write_index, write_matrix_as,
    write_report, Dtype, RunManifest,
};
use specgeo::phase::{
    check_conservation, check_sigma_rates, drift_ratio_test, run_trajectory, summarize,
    write_trajectory_csv, ToyConfig, GAP_FACTOR, SMALL_SIGMA_TOL,
};
use specgeo::spectral::{
    alpha_req, covariance_spectrum, rankme, AblationMode, FeatureMatrix, SpectralMetrics,
    SpectralProjector,
};

#[derive(Parser)]
#[command(
    name = "specgeo",
    version,
    about = "Spectral geometry and evaluation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Print machine-readable JSON on standard output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Args)]
struct MatrixInput {
    /// Feature matrix file.
    file: PathBuf,
    /// Treat the matrix as already centered instead of centering it.
    #[arg(long)]
    no_center: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Covariance eigenspectrum and summary metrics of a feature matrix.
    Spectrum {
        #[command(flatten)]
        input: MatrixInput,
        /// Fit window `LO,HI` (1-based, inclusive).
        #[arg(long, value_parser = parse_window)]
        window: Option<(usize, usize)>,
        #[command(flatten)]
        common: Common,
    },
    /// Effective rank of a feature matrix.
    Rankme {
        #[command(flatten)]
        input: MatrixInput,
        #[command(flatten)]
        common: Common,
    },
    /// Power-law decay exponent of the eigenspectrum.
    Alphareq {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long, value_parser = parse_window)]
        window: Option<(usize, usize)>,
        #[command(flatten)]
        common: Common,
    },
    /// Project features onto or away from the top-k eigenvectors.
    Ablate {
        #[command(flatten)]
        input: MatrixInput,
        /// Number of leading eigenvectors.
        #[arg(long)]
        k: usize,
        /// `retain_top` or `remove_top`.
        #[arg(long, value_parser = parse_mode)]
        mode: AblationMode,
        /// Where to write the ablated matrix.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output precision: `f64` or `f32`.
        #[arg(long, default_value = "f64", value_parser = parse_dtype)]
        dtype: Dtype,
        #[command(flatten)]
        common: Common,
    },
    /// Metrics for every matrix listed in a TOML manifest.
    Sweep {
        /// TOML manifest; relative paths resolve against its directory.
        manifest: PathBuf,
        /// Directory for `report.json` and `report.csv`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build a suffix-array index from a text corpus.
    NgramBuild {
        /// Whitespace-separated token ids, one document per line.
        corpus: PathBuf,
        /// Index file to write.
        #[arg(long)]
        out: PathBuf,
        /// Vocabulary size; defaults to the largest token id plus one.
        #[arg(long)]
        vocab: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Next-token distribution with longest-suffix backoff.
    NgramQuery {
        /// Text corpus or stored index.
        corpus: PathBuf,
        /// Space- or comma-separated token ids.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        context: String,
        /// Vocabulary size for a text corpus.
        #[arg(long)]
        vocab: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank correlation between reference and model probability traces.
    Memorize {
        /// Reference trace CSV: example_id, token_index, prob.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Model trace CSV in the same layout.
        #[arg(long)]
        model: PathBuf,
        /// `per_example` or `per_token`.
        #[arg(long, default_value = "per_example", value_parser = parse_unit)]
        mode: CorrelationUnit,
        #[command(flatten)]
        common: Common,
    },
    /// Train the linear toy model and write its trajectory and summary.
    ToyRun {
        /// `key = value` config; omitted keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check conservation, alignment and singular-value rates on a toy run.
    ToyVerify {
        /// `key = value` config; omitted keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exit with status 1 when a check fails.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Unbiased pass@k from per-problem sample counts.
    Passk {
        /// CSV rows: problem_id, n, c.
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated list of k values.
        #[arg(long, value_parser = parse_k_list)]
        k: KList,
        #[command(flatten)]
        common: Common,
    },
    /// DPO loss and its agreement with the two-way softmax form.
    DpoCheck {
        /// CSV rows: r_w, r_l.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone)]
struct KList(Vec<u64>);

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let p = |x: &str| {
        x.trim()
            .parse::<usize>()
            .map_err(|_| format!("invalid index `{x}`"))
    };
    Ok((p(lo)?, p(hi)?))
}

fn parse_mode(s: &str) -> Result<AblationMode, String> {
    s.parse()
}

fn parse_unit(s: &str) -> Result<CorrelationUnit, String> {
    s.parse()
}

fn parse_dtype(s: &str) -> Result<Dtype, String> {
    match s {
        "f64" => Ok(Dtype::F64),
        "f32" => Ok(Dtype::F32),
        other => Err(format!("unknown dtype `{other}` (expected f64 or f32)")),
    }
}

fn parse_k_list(s: &str) -> Result<KList, String> {
    let ks = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<u64>()
                .map_err(|_| format!("invalid k `{x}`"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KList(ks))
}

fn parse_tokens(s: &str) -> Result<Vec<u32>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u32>()
                .with_context(|| format!("invalid token id `{t}`"))
        })
        .collect()
}

fn load_matrix(input: &MatrixInput) -> Result<FeatureMatrix> {
    let f = read_feature_matrix(&input.file)
        .with_context(|| format!("reading {}", input.file.display()))?;
    Ok(if input.no_center { f } else { f.center() })
}

fn load_config(path: Option<&Path>) -> Result<ToyConfig> {
    match path {
        None => Ok(ToyConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ToyConfig::parse(&text)?)
        }
    }
}

fn emit(json: bool, value: Value, text: String) {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&value).expect("json value")
        );
    } else {
        print!("{text}");
    }
}

fn metrics_text(m: &SpectralMetrics) -> String {
    format!(
        "rankme\t{:?}\nalpha_req\t{:?}\nfit_window\t{},{}\nfit_r2\t{:?}\nm\t{}\nd\t{}\n",
        m.rankme, m.alpha_req, m.fit_window.0, m.fit_window.1, m.fit_r2, m.m, m.d
    )
}

/// Runs one command; `Ok(false)` means the command finished but reported a
/// failure that should set a nonzero exit status.
fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Spectrum {
            input,
            window,
            common,
        } => {
            let f = load_matrix(&input)?;
            let spec = covariance_spectrum(&f, false)?;
            let m = SpectralMetrics::from_spectrum(&spec, window)?;
            let mut text = metrics_text(&m);
            for (i, v) in spec.values().iter().enumerate() {
                text.push_str(&format!("eig_{}\t{v:?}\n", i + 1));
            }
            let mut value = serde_json::to_value(&m)?;
            value["eigenvalues"] = json!(spec.values());
            emit(common.json, value, text);
        }
        Command::Rankme { input, common } => {
            let r = rankme(&covariance_spectrum(&load_matrix(&input)?, false)?)?;
            emit(common.json, json!({ "rankme": r }), format!("{r:?}\n"));
        }
        Command::Alphareq {
            input,
            window,
            common,
        } => {
            let fit = alpha_req(&covariance_spectrum(&load_matrix(&input)?, false)?, window)?;
            let text = format!(
                "alpha_req\t{:?}\nfit_r2\t{:?}\nfit_window\t{},{}\n",
                fit.alpha, fit.r2, fit.window.0, fit.window.1
            );
            let value = json!({ "alpha_req": fit.alpha, "fit_r2": fit.r2, "fit_window": fit.window, "points": fit.points });
            emit(common.json, value, text);
        }
        Command::Ablate {
            input,
            k,
            mode,
            out,
            dtype,
            common,
        } => {
            let f = load_matrix(&input)?;
            let before = covariance_spectrum(&f, false)?;
            let g = SpectralProjector::fit(&f, k, mode)?.apply(&f)?;
            let after = covariance_spectrum(&g, false)?;
            let retained = after.total_variance() / before.total_variance();
            if let Some(path) = &out {
                write_matrix_as(g.data(), dtype, path)?;
            }
            let r_before = rankme(&before)?;
            let r_after = if after.total_variance() > 0.0 {
                Some(rankme(&after)?)
            } else {
                None
            };
            let value = json!({
                "mode": mode.as_str(),
                "k": k,
                "retained_energy": retained,
                "rankme_before": r_before,
                "rankme_after": r_after,
                "out": out.as_ref().map(|p| p.display().to_string()),
            });
            let after_text = r_after.map_or_else(|| "undefined".to_string(), |r| format!("{r:?}"));
            let text = format!(
                "mode\t{}\nk\t{k}\nretained_energy\t{retained:?}\nrankme_before\t{r_before:?}\nrankme_after\t{after_text}\n",
                mode.as_str()
            );
            emit(common.json, value, text);
        }
        Command::Sweep {
            manifest,
            out_dir,
            common,
        } => {
            let m = RunManifest::load(&manifest)?;
            let report = run_sweep(&m, configured_threads()?)?;
            if let Some(dir) = &out_dir {
                write_report(&report, dir)?;
            }
            if common.json {
                print!("{}", report.to_json());
            } else {
                print!("{}", summary_lines(&report));
            }
            if !report.all_ok() {
                eprintln!(
                    "{} of {} entries failed",
                    report.n_failed,
                    report.entries.len()
                );
                return Ok(false);
            }
        }
        Command::NgramBuild {
            corpus,
            out,
            vocab,
            common,
        } => {
            let text = fs::read_to_string(&corpus)
                .with_context(|| format!("reading {}", corpus.display()))?;
            let index = SuffixIndex::build(TokenCorpus::parse_text(&text, vocab)?)?;
            write_index(&index, &out)?;
            let c = index.corpus();
            let value = json!({
                "tokens": c.len(),
                "documents": c.doc_boundaries().len(),
                "vocab_size": c.vocab_size(),
                "out": out.display().to_string(),
            });
            let text = format!(
                "tokens\t{}\ndocuments\t{}\nvocab_size\t{}\n",
                c.len(),
                c.doc_boundaries().len(),
                c.vocab_size()
            );
            emit(common.json, value, text);
        }
        Command::NgramQuery {
            corpus,
            context,
            vocab,
            common,
        } => {
            let index = load_corpus_or_index(&corpus, vocab)?;
            let context = parse_tokens(&context)?;
            if let Some(&t) = context.iter().find(|&&t| t >= index.vocab_size()) {
                bail!(
                    "context token {t} is outside the vocabulary of size {}",
                    index.vocab_size()
                );
            }
            let pred = index.next_token(&context);
            let mut text = format!(
                "suffix_len_used\t{}\ncontext_count\t{}\n",
                pred.suffix_len_used, pred.context_count
            );
            for (t, p) in pred.token_probs.iter().enumerate() {
                text.push_str(&format!("{t}\t{p:?}\n"));
            }
            emit(common.json, serde_json::to_value(&pred)?, text);
        }
        Command::Memorize {
            reference,
            model,
            mode,
            common,
        } => {
            let r = read_trace_csv(&reference)?;
            let m = read_trace_csv(&model)?;
            let rho = distributional_memorization(&r, &m, mode)?;
            let unit = serde_json::to_value(mode)?;
            emit(
                common.json,
                json!({ "spearman": rho, "mode": unit, "records": r.len() }),
                format!("{rho:?}\n"),
            );
        }
        Command::ToyRun {
            config,
            out_dir,
            common,
        } => {
            let cfg = load_config(config.as_deref())?;
            let traj = run_trajectory(&cfg)?;
            let summary = summarize(&traj);
            fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let csv_path = out_dir.join("trajectory.csv");
            let json_path = out_dir.join("summary.json");
            let file = fs::File::create(&csv_path)
                .with_context(|| format!("creating {}", csv_path.display()))?;
            write_trajectory_csv(&traj, std::io::BufWriter::new(file))?;
            fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")?;
            let value = json!({
                "trajectory": csv_path.display().to_string(),
                "summary": json_path.display().to_string(),
                "final_loss": summary.final_loss,
                "peak_step": summary.phases.peak,
                "single_interior_max": summary.phases.has_single_interior_max(),
            });
            let text = format!(
                "trajectory\t{}\nsummary\t{}\nfinal_loss\t{:?}\npeak_step\t{}\nsingle_interior_max\t{}\n",
                csv_path.display(),
                json_path.display(),
                summary.final_loss,
                summary.phases.peak,
                summary.phases.has_single_interior_max()
            );
            emit(common.json, value, text);
        }
        Command::ToyVerify {
            config,
            strict,
            common,
        } => {
            let cfg = load_config(config.as_deref())?;
            let traj = run_trajectory(&cfg)?;
            let t1 = check_conservation(&traj);
            let t2 = check_sigma_rates(&traj, SMALL_SIGMA_TOL, GAP_FACTOR);
            let drift = drift_ratio_test(&cfg)?;
            let checks = [
                ("conservation_at_init", t1.initial_residual <= 1e-12),
                (
                    "drift_second_order",
                    drift.drift <= 400.0 * drift.drift_half_lr.max(0.0),
                ),
                ("alignment", t1.max_alignment <= 1e-6),
                ("singular_value_rates", t2.within(0.05)),
            ];
            let passed = checks.iter().all(|c| c.1);
            let value = json!({
                "conservation": t1,
                "sigma_rates": t2,
                "drift": drift,
                "checks": checks.iter().map(|(n, ok)| (n.to_string(), json!(ok))).collect::<serde_json::Map<_, _>>(),
                "passed": passed,
            });
            let text: String = checks
                .iter()
                .map(|(n, ok)| format!("{n}\t{}\n", if *ok { "PASS" } else { "FAIL" }))
                .collect();
            emit(common.json, value, text);
            return Ok(passed || !strict);
        }
        Command::Passk { input, k, common } => {
            let problems: Vec<Problem> = read_problems_csv(&input)?
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            let mut map = serde_json::Map::new();
            let mut text = String::new();
            for &kk in &k.0 {
                let v = pass_at_k(&problems, kk)?;
                map.insert(kk.to_string(), json!(v));
                text.push_str(&format!("pass@{kk}\t{v:?}\n"));
            }
            emit(common.json, Value::Object(map), text);
        }
        Command::DpoCheck { input, common } => {
            let pairs = read_pairs_csv(&input)?;
            let loss = dpo_loss(&pairs)?;
            let gap = dpo_nce_identity(&pairs)?;
            let value = json!({ "pairs": pairs.len(), "dpo_loss": loss, "max_identity_gap": gap });
            emit(
                common.json,
                value,
                format!(
                    "pairs\t{}\ndpo_loss\t{loss:?}\nmax_identity_gap\t{gap:?}\n",
                    pairs.len()
                ),
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
