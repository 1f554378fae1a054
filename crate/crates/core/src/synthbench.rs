//! End-to-end fixtures on synthetic codon corpora: trainability against the
//! phase-blind baseline, boundary phase structure, compression adherence,
//! and the rate-loss weight ablation. Scales are fixed in committed configs
//! so the fixtures are stable contracts rather than tuning exercises.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::autodiff::Scalar;
use crate::eval::{boundary_stats, eval_perplexity_parallel};
use crate::fmt_sig;
use crate::hnet::build_model;
use crate::seqdata::{
    phase_conditioned_entropy, synth_codon_corpus, unigram_entropy, GeneAnnotation,
    NucleotideSequence, RegionLabel, Strand,
};
use crate::train::{fit, load_corpus, DataConfig, RunConfig, TrainError};

/// The committed trainability fixture configuration.
pub const TRAINABILITY_CONFIG: &str = include_str!("../../../configs/trainability.toml");

/// Heldout evaluation windows drawn with a seed offset from the corpus.
const HELDOUT_SEQUENCES: usize = 32;

#[derive(Debug, Clone, Serialize)]
pub struct FixtureReport {
    pub seed: u64,
    pub steps: usize,
    pub final_perplexity: f64,
    /// Best perplexity achievable without phase tracking.
    pub unigram_baseline_ppl: f64,
    /// Entropy-rate floor of the generator.
    pub phase_floor_ppl: f64,
    /// Stage-1 boundary selection rate per codon phase (1..3).
    pub phase_rates: [f64; 3],
    /// Max minus min phase rate, in percentage points.
    pub phase_spread_points: f64,
    /// Realized selection fraction per stage, measured on heldout data.
    pub selected_fractions: Vec<f64>,
    /// `|1/F_s - R_s| / R_s` per stage.
    pub compression_deviation: Vec<f64>,
    pub train_warnings: usize,
}

impl FixtureReport {
    pub fn beats_unigram_baseline(&self) -> bool {
        self.final_perplexity < self.unigram_baseline_ppl
    }
}

fn coding_annotations(windows: &[NucleotideSequence]) -> Vec<GeneAnnotation> {
    windows
        .iter()
        .map(|w| GeneAnnotation {
            gene_id: format!("{}_cds", w.id),
            genome_id: w.id.clone(),
            start: 0,
            end: w.len(),
            strand: Strand::Forward,
            region_label: RegionLabel::Coding,
            essential: None,
        })
        .collect()
}

/// Runs the committed trainability fixture: train a two-stage (3,2) model
/// on the 3-periodic corpus, then measure heldout perplexity, stage-1 phase
/// structure, and compression adherence. Reports land in a timestamped
/// directory under `out_root` when given.
pub fn run_trainability_fixture<T: Scalar>(
    seed: u64,
    out_root: Option<&Path>,
) -> Result<(FixtureReport, Option<PathBuf>), TrainError> {
    let config: RunConfig = toml::from_str(TRAINABILITY_CONFIG)
        .map_err(|e| TrainError::Config(format!("bad committed fixture config: {e}")))?;
    run_trainability_with::<T>(&config, seed, out_root)
}

/// Fixture body parameterized by a run configuration (the committed config
/// in production, a miniature one in unit tests).
pub fn run_trainability_with<T: Scalar>(
    config: &RunConfig,
    seed: u64,
    out_root: Option<&Path>,
) -> Result<(FixtureReport, Option<PathBuf>), TrainError> {
    let mut train_cfg = config.train.clone();
    train_cfg.seed = seed;
    let corpus = load_corpus(&config.data, config.model.context).map_err(|e| {
        TrainError::Config(format!("fixture corpus failed to load: {e}"))
    })?;

    let (heldout_len, corpus_seed) = match config.data {
        DataConfig::Synthetic { length, seed, .. } => (length, seed),
        _ => (config.model.context.min(192), 0),
    };
    let heldout = synth_codon_corpus(HELDOUT_SEQUENCES, heldout_len, corpus_seed ^ 0x5EED);

    let out_dir = out_root.map(|root| {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        root.join(format!("trainability-{stamp}"))
    });
    let train_dir = match &out_dir {
        Some(d) => d.clone(),
        None => std::env::temp_dir().join(format!("dnahnet-fixture-{seed}-{}", std::process::id())),
    };

    let mut model = build_model::<T>(&config.model, seed)?;
    let outcome = fit(&mut model, &corpus, &train_cfg, &train_dir, None)?;

    let final_perplexity = eval_perplexity_parallel(&model, &heldout, 1)
        .map_err(|e| TrainError::Config(format!("heldout evaluation failed: {e}")))?;

    let annotations = coding_annotations(&heldout);
    let (stats, _rows) = boundary_stats(&model, &heldout, &annotations, 1)
        .map_err(|e| TrainError::Config(format!("boundary statistics failed: {e}")))?;

    let mut phase_rates = [0.0f64; 3];
    if let Some(stage1) = stats.first() {
        for phase in 1..=3u8 {
            phase_rates[phase as usize - 1] = stage1
                .per_phase
                .get(&phase)
                .map_or(0.0, |r| r.fraction());
        }
    }
    let spread = phase_rates.iter().cloned().fold(f64::MIN, f64::max)
        - phase_rates.iter().cloned().fold(f64::MAX, f64::min);

    let selected_fractions: Vec<f64> = stats.iter().map(|s| s.global.fraction()).collect();
    let compression_deviation: Vec<f64> = selected_fractions
        .iter()
        .zip(&config.model.targets)
        .map(|(&f, &r)| {
            if f > 0.0 {
                ((1.0 / f) - r).abs() / r
            } else {
                f64::INFINITY
            }
        })
        .collect();

    let report = FixtureReport {
        seed,
        steps: train_cfg.max_steps,
        final_perplexity,
        unigram_baseline_ppl: unigram_entropy().exp(),
        phase_floor_ppl: phase_conditioned_entropy().exp(),
        phase_rates,
        phase_spread_points: spread * 100.0,
        selected_fractions,
        compression_deviation,
        train_warnings: outcome.warning_count,
    };

    if let Some(dir) = &out_dir {
        write_fixture_report(dir, &report, config)?;
    } else {
        // Clean up the scratch training directory when not keeping reports.
        let _ = std::fs::remove_dir_all(&train_dir);
    }
    Ok((report, out_dir))
}

fn write_fixture_report(
    dir: &Path,
    report: &FixtureReport,
    config: &RunConfig,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("metric,value\n");
    let mut push = |k: &str, v: f64| {
        csv.push_str(&format!("{k},{}\n", fmt_sig(v)));
    };
    push("final_perplexity", report.final_perplexity);
    push("unigram_baseline_ppl", report.unigram_baseline_ppl);
    push("phase_floor_ppl", report.phase_floor_ppl);
    for (i, r) in report.phase_rates.iter().enumerate() {
        push(&format!("phase{}_rate", i + 1), *r);
    }
    push("phase_spread_points", report.phase_spread_points);
    for (i, f) in report.selected_fractions.iter().enumerate() {
        push(&format!("F_s{}", i + 1), *f);
    }
    for (i, d) in report.compression_deviation.iter().enumerate() {
        push(&format!("compression_deviation_s{}", i + 1), *d);
    }
    csv.push_str(&format!("steps,{}\n", report.steps));
    csv.push_str(&format!("train_warnings,{}\n", report.train_warnings));
    std::fs::write(dir.join("report.csv"), csv)?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        fixture: &'a str,
        seed: u64,
        started_unix: u64,
        config: &'a RunConfig,
    }
    let manifest = Manifest {
        fixture: "trainability",
        seed: report.seed,
        started_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| TrainError::Config(format!("manifest serialization failed: {e}")))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

/// One row of the rate-loss weight ablation.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub final_nll: f64,
    pub selected_fractions: Vec<f64>,
    /// Mean over stages of `|1/F_s - R_s| / R_s`.
    pub mean_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AlphaRow>,
    /// Alphas ordered by ascending deviation (strongest adherence first).
    pub alphas_by_adherence: Vec<f64>,
}

/// Trains one short run per alpha on the fixture corpus and records how
/// strongly each pins the realized compression to its target.
pub fn run_alpha_ablation<T: Scalar>(
    config: &RunConfig,
    alphas: &[f64],
    seed: u64,
) -> Result<AblationReport, TrainError> {
    let corpus = load_corpus(&config.data, config.model.context)
        .map_err(|e| TrainError::Config(format!("ablation corpus failed to load: {e}")))?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut model_cfg = config.model.clone();
        model_cfg.alpha = alpha;
        let mut train_cfg = config.train.clone();
        train_cfg.seed = seed;
        let mut model = build_model::<T>(&model_cfg, seed)?;
        let dir = std::env::temp_dir().join(format!(
            "dnahnet-ablation-{seed}-{}-{}",
            std::process::id(),
            rows.len()
        ));
        let outcome = fit(&mut model, &corpus, &train_cfg, &dir, None)?;
        let _ = std::fs::remove_dir_all(&dir);
        let metrics = outcome
            .final_metrics
            .ok_or_else(|| TrainError::Config("ablation run produced no metrics".into()))?;
        let fractions: Vec<f64> = metrics.stages.iter().map(|s| s.1).collect();
        let mean_deviation = fractions
            .iter()
            .zip(&model_cfg.targets)
            .map(|(&f, &r)| {
                if f > 0.0 {
                    ((1.0 / f) - r).abs() / r
                } else {
                    f64::INFINITY
                }
            })
            .sum::<f64>()
            / model_cfg.targets.len().max(1) as f64;
        rows.push(AlphaRow {
            alpha,
            final_nll: metrics.nll,
            selected_fractions: fractions,
            mean_deviation,
        });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .mean_deviation
            .partial_cmp(&rows[b].mean_deviation)
            .expect("finite deviations")
    });
    Ok(AblationReport {
        alphas_by_adherence: order.iter().map(|&i| rows[i].alpha).collect(),
        rows,
    })
}

/// Renders the ablation rows with the fixed 9-digit formatting.
pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out = String::from("alpha,final_nll,mean_deviation,fractions\n");
    for r in &report.rows {
        let fr: Vec<String> = r.selected_fractions.iter().map(|&f| fmt_sig(f)).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_sig(r.alpha),
            fmt_sig(r.final_nll),
            fmt_sig(r.mean_deviation),
            fr.join(";")
        ));
    }
    out
}
