//! Zero-shot evaluation pipelines: variant-effect scoring with Spearman
//! correlation, essentiality scoring with AUROC, held-out perplexity, and
//! boundary-interpretability statistics over functional regions and codon
//! phases.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Scalar;
use crate::chunking::BoundaryDumpRow;
use crate::fmt_sig;
use crate::hnet::{HNetModel, ModelError, ModelSnapshot};
use crate::seqdata::{
    apply_variant, make_knockout, GeneAnnotation, NucleotideSequence, RegionLabel, SeqError,
    Strand, VariantRecord,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<V> = std::result::Result<V, EvalError>;

/// Anything that can assign a log-likelihood (nats, first position
/// unscored) to a sequence. Implemented by the model and by hand-built
/// oracles in tests.
pub trait SequenceScorer {
    fn loglik(&self, seq: &NucleotideSequence) -> Result<f64>;
}

impl<T: Scalar> SequenceScorer for HNetModel<T> {
    fn loglik(&self, seq: &NucleotideSequence) -> Result<f64> {
        Ok(self.sequence_loglik(&seq.codes)?)
    }
}

/// Runs `f` over `items` on `threads` workers, each holding its own model
/// copy rebuilt from a snapshot; output order matches input order.
pub fn with_model_parallel<T, I, O>(
    model: &HNetModel<T>,
    items: &[I],
    threads: usize,
    f: impl Fn(&HNetModel<T>, &I) -> O + Sync,
) -> Result<Vec<O>>
where
    T: Scalar,
    I: Sync,
    O: Send,
{
    if threads <= 1 || items.len() <= 1 {
        return Ok(items.iter().map(|i| f(model, i)).collect());
    }
    let snapshot: ModelSnapshot<T> = model.snapshot();
    let chunk = items.len().div_ceil(threads);
    let mut results: Vec<Option<O>> = Vec::with_capacity(items.len());
    results.resize_with(items.len(), || None);
    let mut failed: Option<ModelError> = None;
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (item_chunk, out_chunk) in items.chunks(chunk).zip(results.chunks_mut(chunk)) {
            let snap = &snapshot;
            let f = &f;
            handles.push(scope.spawn(move || -> std::result::Result<(), ModelError> {
                let local = HNetModel::<T>::from_snapshot(snap)?;
                for (i, item) in item_chunk.iter().enumerate() {
                    out_chunk[i] = Some(f(&local, item));
                }
                Ok(())
            }));
        }
        for h in handles {
            if let Err(e) = h.join().expect("worker panicked") {
                failed = Some(e);
            }
        }
    });
    if let Some(e) = failed {
        return Err(EvalError::Model(e));
    }
    Ok(results.into_iter().map(|o| o.expect("worker filled slot")).collect())
}

/// A variant with its model score (`loglik(variant) - loglik(wildtype)`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredVariant {
    pub gene_id: String,
    pub position: usize,
    pub ref_base: char,
    pub alt_base: char,
    pub score: f64,
    pub fitness: f64,
}

pub struct VepOutcome {
    pub scored: Vec<ScoredVariant>,
    /// Records skipped per-record (reference mismatches etc.), with reasons.
    pub skipped: Vec<(VariantRecord, String)>,
}

/// Scores each variant as the log-likelihood difference against the
/// reference; the reference likelihood is computed once. Records that fail
/// their preconditions are skipped, logged with reasons and counted — a
/// mismatch signals a coordinate bug and must not be silently fixed.
pub fn vep_score<S: SequenceScorer + ?Sized>(
    scorer: &S,
    reference: &NucleotideSequence,
    variants: &[VariantRecord],
) -> Result<VepOutcome> {
    let ref_ll = scorer.loglik(reference)?;
    let mut scored = Vec::with_capacity(variants.len());
    let mut skipped = Vec::new();
    for v in variants {
        match apply_variant(reference, v) {
            Ok(mutated) => {
                let ll = scorer.loglik(&mutated)?;
                scored.push(ScoredVariant {
                    gene_id: v.gene_id.clone(),
                    position: v.position,
                    ref_base: v.ref_base,
                    alt_base: v.alt_base,
                    score: ll - ref_ll,
                    fitness: v.fitness,
                });
            }
            Err(e) => skipped.push((v.clone(), e.to_string())),
        }
    }
    Ok(VepOutcome { scored, skipped })
}

/// Parallel variant scoring against a model.
pub fn vep_score_parallel<T: Scalar>(
    model: &HNetModel<T>,
    reference: &NucleotideSequence,
    variants: &[VariantRecord],
    threads: usize,
) -> Result<VepOutcome> {
    if threads <= 1 {
        return vep_score(model, reference, variants);
    }
    let ref_ll = model.sequence_loglik(&reference.codes)?;
    let results = with_model_parallel(model, variants, threads, |m, v| {
        match apply_variant(reference, v) {
            Ok(mutated) => m
                .sequence_loglik(&mutated.codes)
                .map(|ll| ll - ref_ll)
                .map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        }
    })?;
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for (v, r) in variants.iter().zip(results) {
        match r {
            Ok(score) => scored.push(ScoredVariant {
                gene_id: v.gene_id.clone(),
                position: v.position,
                ref_base: v.ref_base,
                alt_base: v.alt_base,
                score,
                fitness: v.fitness,
            }),
            Err(reason) => skipped.push((v.clone(), reason)),
        }
    }
    Ok(VepOutcome { scored, skipped })
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-finite rank input"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // 1-based ranks, ties averaged
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvalError::Degenerate(format!(
            "need two equally sized samples of at least 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(xs) || constant(ys) {
        return Err(EvalError::Degenerate(
            "correlation is undefined for constant input".into(),
        ));
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Mann-Whitney AUROC: `(wins + 0.5 ties) / (positives * negatives)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::Degenerate("scores/labels length mismatch".into()));
    }
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::Degenerate(
            "AUROC needs both classes present".into(),
        ));
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Per-gene essentiality score with its label when known.
#[derive(Debug, Clone)]
pub struct GeneScore {
    pub gene_id: String,
    pub score: f64,
    pub essential: Option<bool>,
}

pub struct EssentialityOutcome {
    pub scored: Vec<GeneScore>,
    pub skipped: Vec<(String, String)>,
}

/// Scores each gene as `loglik(wildtype window) - loglik(knockout window)`;
/// higher means the model penalizes the knockout more, predicting the gene
/// essential. Genes that fail construction are skipped with reasons rather
/// than aborting the run.
pub fn essentiality_scores<S: SequenceScorer + ?Sized>(
    scorer: &S,
    genome: &NucleotideSequence,
    genes: &[GeneAnnotation],
    window: usize,
) -> Result<EssentialityOutcome> {
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for gene in genes {
        match make_knockout(genome, gene, window) {
            Ok((wt, ko)) => {
                let score = scorer.loglik(&wt)? - scorer.loglik(&ko)?;
                scored.push(GeneScore {
                    gene_id: gene.gene_id.clone(),
                    score,
                    essential: gene.essential,
                });
            }
            Err(e) => skipped.push((gene.gene_id.clone(), e.to_string())),
        }
    }
    Ok(EssentialityOutcome { scored, skipped })
}

/// Parallel essentiality scoring against a model.
pub fn essentiality_scores_parallel<T: Scalar>(
    model: &HNetModel<T>,
    genome: &NucleotideSequence,
    genes: &[GeneAnnotation],
    window: usize,
    threads: usize,
) -> Result<EssentialityOutcome> {
    if threads <= 1 {
        return essentiality_scores(model, genome, genes, window);
    }
    let results = with_model_parallel(model, genes, threads, |m, gene| {
        match make_knockout(genome, gene, window) {
            Ok((wt, ko)) => {
                let wt_ll = m.sequence_loglik(&wt.codes).map_err(|e| e.to_string())?;
                let ko_ll = m.sequence_loglik(&ko.codes).map_err(|e| e.to_string())?;
                Ok(wt_ll - ko_ll)
            }
            Err(e) => Err(e.to_string()),
        }
    })?;
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for (gene, r) in genes.iter().zip(results) {
        match r {
            Ok(score) => scored.push(GeneScore {
                gene_id: gene.gene_id.clone(),
                score,
                essential: gene.essential,
            }),
            Err(reason) => skipped.push((gene.gene_id.clone(), reason)),
        }
    }
    Ok(EssentialityOutcome { scored, skipped })
}

/// Exp of the token-weighted mean NLL across windows: every scored
/// nucleotide counts once, so differently sized windows pool exactly as a
/// concatenated computation would.
pub fn eval_perplexity<S: SequenceScorer + ?Sized>(
    scorer: &S,
    windows: &[NucleotideSequence],
) -> Result<f64> {
    if windows.is_empty() {
        return Err(EvalError::Degenerate("no windows to evaluate".into()));
    }
    let mut nll_sum = 0.0;
    let mut tokens = 0usize;
    for w in windows {
        if w.len() < 2 {
            continue;
        }
        nll_sum -= scorer.loglik(w)?;
        tokens += w.len() - 1;
    }
    if tokens == 0 {
        return Err(EvalError::Degenerate(
            "no window long enough to score".into(),
        ));
    }
    Ok((nll_sum / tokens as f64).exp())
}

/// Parallel perplexity over windows.
pub fn eval_perplexity_parallel<T: Scalar>(
    model: &HNetModel<T>,
    windows: &[NucleotideSequence],
    threads: usize,
) -> Result<f64> {
    if threads <= 1 {
        return eval_perplexity(model, windows);
    }
    let results = with_model_parallel(model, windows, threads, |m, w| {
        if w.len() < 2 {
            return Ok((0.0, 0usize));
        }
        m.sequence_loglik(&w.codes)
            .map(|ll| (-ll, w.len() - 1))
            .map_err(|e| e.to_string())
    })?;
    let mut nll_sum = 0.0;
    let mut tokens = 0usize;
    for r in results {
        let (nll, t) = r.map_err(EvalError::Degenerate)?;
        nll_sum += nll;
        tokens += t;
    }
    if tokens == 0 {
        return Err(EvalError::Degenerate(
            "no window long enough to score".into(),
        ));
    }
    Ok((nll_sum / tokens as f64).exp())
}

/// A numerator/denominator pair for a selection rate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Rate {
    pub numerator: usize,
    pub denominator: usize,
}

impl Rate {
    pub fn fraction(&self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            self.numerator as f64 / self.denominator as f64
        }
    }

    fn tally(&mut self, hit: bool) {
        self.denominator += 1;
        self.numerator += usize::from(hit);
    }
}

/// Boundary selection rates for one stage: global, per functional region,
/// and per codon phase within coding regions.
#[derive(Debug, Clone)]
pub struct BoundaryStats {
    /// 1-based stage number.
    pub stage: usize,
    pub global: Rate,
    pub per_region: BTreeMap<RegionLabel, Rate>,
    pub per_phase: BTreeMap<u8, Rate>,
    /// Positions without any covering annotation, excluded from all
    /// denominators but counted here.
    pub uncovered: usize,
}

/// Labels with narrower meaning win when annotations overlap.
fn region_precedence(label: RegionLabel) -> u8 {
    match label {
        RegionLabel::StartCodon => 0,
        RegionLabel::StopCodon => 1,
        RegionLabel::Promoter => 2,
        RegionLabel::Coding => 3,
        RegionLabel::Intergenic => 4,
        RegionLabel::Other => 5,
    }
}

fn resolve_region<'a>(
    annotations: &'a [GeneAnnotation],
    genome_id: &str,
    pos0: usize,
) -> Option<&'a GeneAnnotation> {
    annotations
        .iter()
        .filter(|a| a.genome_id == genome_id && a.start <= pos0 && pos0 < a.end)
        .min_by_key(|a| region_precedence(a.region_label))
}

fn codon_phase(annotations: &[GeneAnnotation], genome_id: &str, pos0: usize) -> Option<u8> {
    let cds = annotations.iter().find(|a| {
        a.genome_id == genome_id
            && a.region_label == RegionLabel::Coding
            && a.start <= pos0
            && pos0 < a.end
    })?;
    let phase = match cds.strand {
        Strand::Forward => (pos0 - cds.start) % 3,
        Strand::Reverse => (cds.end - 1 - pos0) % 3,
    };
    Some(phase as u8 + 1)
}

/// Aggregates dump rows into per-stage statistics. Stage-2 rows arrive
/// already attributed to the nucleotide that opened their stage-1 chunk, so
/// the same region/phase resolution applies at every stage.
pub fn boundary_stats_from_rows(
    rows: &[BoundaryDumpRow],
    annotations: &[GeneAnnotation],
) -> Vec<BoundaryStats> {
    let max_stage = rows.iter().map(|r| r.stage).max().unwrap_or(0);
    let mut out: Vec<BoundaryStats> = (1..=max_stage)
        .map(|stage| BoundaryStats {
            stage,
            global: Rate::default(),
            per_region: BTreeMap::new(),
            per_phase: BTreeMap::new(),
            uncovered: 0,
        })
        .collect();
    for row in rows {
        let stats = &mut out[row.stage - 1];
        let pos0 = row.position - 1;
        match resolve_region(annotations, &row.seq_id, pos0) {
            Some(annot) => {
                stats.global.tally(row.b);
                stats
                    .per_region
                    .entry(annot.region_label)
                    .or_default()
                    .tally(row.b);
                if annot.region_label == RegionLabel::Coding {
                    if let Some(phase) = codon_phase(annotations, &row.seq_id, pos0) {
                        stats.per_phase.entry(phase).or_default().tally(row.b);
                    }
                }
            }
            None => stats.uncovered += 1,
        }
    }
    out
}

/// Builds dump rows for one window from a forward trace: one row per stage
/// input position, attributed back to absolute genome coordinates
/// (1-based). Stage s > 1 rows land on the nucleotide that opened the
/// corresponding stage s-1 chunk.
pub fn boundary_dump_for_window<T: Scalar>(
    model: &HNetModel<T>,
    window: &NucleotideSequence,
) -> Result<Vec<BoundaryDumpRow>> {
    let trace = crate::autodiff::no_grad(|| model.forward(&window.codes))?;
    let (seq_id, offset) = match &window.origin {
        Some(o) => (o.genome_id.clone(), o.start),
        None => (window.id.clone(), 0),
    };
    let mut rows = Vec::new();
    for stage in &trace.stages {
        for (i, &pos) in stage.input_positions.iter().enumerate() {
            rows.push(BoundaryDumpRow {
                seq_id: seq_id.clone(),
                stage: stage.stage_index + 1,
                position: offset + pos + 1,
                p: stage.decision.p[i],
                b: stage.decision.b[i],
            });
        }
    }
    Ok(rows)
}

/// Full pipeline: forward every window, dump boundaries, aggregate stats.
pub fn boundary_stats<T: Scalar>(
    model: &HNetModel<T>,
    windows: &[NucleotideSequence],
    annotations: &[GeneAnnotation],
    threads: usize,
) -> Result<(Vec<BoundaryStats>, Vec<BoundaryDumpRow>)> {
    let per_window = with_model_parallel(model, windows, threads, |m, w| {
        boundary_dump_for_window(m, w).map_err(|e| e.to_string())
    })?;
    let mut rows = Vec::new();
    for r in per_window {
        rows.extend(r.map_err(EvalError::Annotation)?);
    }
    let stats = boundary_stats_from_rows(&rows, annotations);
    Ok((stats, rows))
}

pub fn write_vep_csv<W: Write>(w: &mut W, outcome: &VepOutcome) -> std::io::Result<()> {
    writeln!(w, "gene_id,position,ref,alt,score,fitness")?;
    for s in &outcome.scored {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.gene_id,
            s.position,
            s.ref_base,
            s.alt_base,
            fmt_sig(s.score),
            fmt_sig(s.fitness)
        )?;
    }
    Ok(())
}

pub fn write_essentiality_csv<W: Write>(
    w: &mut W,
    outcome: &EssentialityOutcome,
) -> std::io::Result<()> {
    writeln!(w, "gene_id,score,essential")?;
    for s in &outcome.scored {
        let label = match s.essential {
            None => "NA".to_string(),
            Some(true) => "1".into(),
            Some(false) => "0".into(),
        };
        writeln!(w, "{},{},{}", s.gene_id, fmt_sig(s.score), label)?;
    }
    Ok(())
}

/// Stats CSV mirroring the per-stage table structure:
/// `stage,feature_class,feature,rate,numerator,denominator`.
pub fn write_stats_csv<W: Write>(w: &mut W, stats: &[BoundaryStats]) -> std::io::Result<()> {
    writeln!(w, "stage,feature_class,feature,rate,numerator,denominator")?;
    for s in stats {
        writeln!(
            w,
            "{},global,all,{},{},{}",
            s.stage,
            fmt_sig(s.global.fraction()),
            s.global.numerator,
            s.global.denominator
        )?;
        for (label, rate) in &s.per_region {
            writeln!(
                w,
                "{},region,{},{},{},{}",
                s.stage,
                label.as_str(),
                fmt_sig(rate.fraction()),
                rate.numerator,
                rate.denominator
            )?;
        }
        for (phase, rate) in &s.per_phase {
            writeln!(
                w,
                "{},codon_phase,{},{},{},{}",
                s.stage,
                phase,
                fmt_sig(rate.fraction()),
                rate.numerator,
                rate.denominator
            )?;
        }
        if s.uncovered > 0 {
            writeln!(w, "{},uncovered,all,,{},", s.stage, s.uncovered)?;
        }
    }
    Ok(())
}

/// Convenience for writing any of the CSV outputs to a file atomically
/// (write to a temp sibling then rename).
pub fn write_atomically(
    path: &Path,
    write: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>,
) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
    write(&mut w)?;
    w.into_inner()?.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
