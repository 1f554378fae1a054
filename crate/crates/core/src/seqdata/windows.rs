//! Genome windowing: non-overlapping training windows and gene-centered
//! evaluation windows.

use super::{GeneAnnotation, NucleotideSequence, Origin, Result, SeqError, Strand};

/// Paper-default context window in nucleotides.
pub const DEFAULT_WINDOW: usize = 8192;

/// Splits a genome into consecutive non-overlapping windows; the final window
/// carries the remainder. Each output records its 0-based origin offset.
pub fn window_genome(genome: &NucleotideSequence, window: usize) -> Vec<NucleotideSequence> {
    assert!(window >= 1, "window must be at least 1");
    let base_start = genome.origin.as_ref().map_or(0, |o| o.start);
    let genome_id = genome
        .origin
        .as_ref()
        .map_or_else(|| genome.id.clone(), |o| o.genome_id.clone());
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < genome.len() {
        let end = (offset + window).min(genome.len());
        out.push(NucleotideSequence {
            id: format!("{}:{}", genome.id, base_start + offset),
            codes: genome.codes[offset..end].to_vec(),
            origin: Some(Origin {
                genome_id: genome_id.clone(),
                start: base_start + offset,
                strand: Strand::Forward,
            }),
        });
        offset = end;
    }
    out
}

/// Fixed-length window centered on the gene midpoint, shifted minimally to
/// stay within genome bounds (never padded). Output length is exactly
/// `window`.
pub fn centered_window(
    genome: &NucleotideSequence,
    gene: &GeneAnnotation,
    window: usize,
) -> Result<NucleotideSequence> {
    if genome.len() < window {
        return Err(SeqError::Window(format!(
            "genome {} ({} nt) shorter than window {}",
            genome.id,
            genome.len(),
            window
        )));
    }
    let mid = gene.midpoint();
    let half = window / 2;
    let start = mid
        .saturating_sub(half)
        .min(genome.len() - window);
    let end = start + window;
    Ok(NucleotideSequence {
        id: format!("{}:{}", genome.id, start),
        codes: genome.codes[start..end].to_vec(),
        origin: Some(Origin {
            genome_id: genome.id.clone(),
            start,
            strand: Strand::Forward,
        }),
    })
}
