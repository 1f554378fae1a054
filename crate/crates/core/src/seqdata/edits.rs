//! Sequence edits: point variants and in-silico stop-cassette knockouts.

use super::windows::centered_window;
use super::{
    base_code, GeneAnnotation, NucleotideSequence, Result, SeqError, Strand, VariantRecord,
};

/// The 15 nt premature-stop cassette inserted by knockouts, read in gene
/// orientation.
pub const STOP_CASSETTE: &str = "TAATAATAATAGTGA";

/// Offset of the replaced span from the gene start, in gene orientation:
/// the 3 nt start codon plus 12 nt downstream of its last base.
const CASSETTE_OFFSET: usize = 3 + 12;

/// Applies a single-nucleotide substitution. The reference base must match;
/// a mismatch signals a coordinate-system bug and is never corrected
/// silently.
pub fn apply_variant(
    reference: &NucleotideSequence,
    variant: &VariantRecord,
) -> Result<NucleotideSequence> {
    if variant.position >= reference.len() {
        return Err(SeqError::Window(format!(
            "variant position {} outside reference of length {}",
            variant.position,
            reference.len()
        )));
    }
    let expected = base_code(variant.ref_base).ok_or(SeqError::RefMismatch {
        position: variant.position,
        found: '?',
        expected: variant.ref_base,
    })?;
    let alt = base_code(variant.alt_base).ok_or(SeqError::RefMismatch {
        position: variant.position,
        found: '?',
        expected: variant.alt_base,
    })?;
    let found = reference.codes[variant.position];
    if found != expected {
        return Err(SeqError::RefMismatch {
            position: variant.position,
            found: super::ALPHABET[found as usize],
            expected: variant.ref_base,
        });
    }
    let mut codes = reference.codes.clone();
    codes[variant.position] = alt;
    Ok(NucleotideSequence {
        id: reference.id.clone(),
        codes,
        origin: reference.origin.clone(),
    })
}

/// Undoes a previously applied variant (swapped ref/alt).
pub fn revert_variant(
    sequence: &NucleotideSequence,
    variant: &VariantRecord,
) -> Result<NucleotideSequence> {
    let swapped = VariantRecord {
        ref_base: variant.alt_base,
        alt_base: variant.ref_base,
        ..variant.clone()
    };
    apply_variant(sequence, &swapped)
}

/// Builds the wild-type and knockout windows for a gene.
///
/// Both windows come from [`centered_window`]. The knockout replaces 15 nt
/// with [`STOP_CASSETTE`], starting 12 nt after the last base of the start
/// codon in gene orientation. Reverse-strand genes take the replacement on
/// the reverse complement and map it back, so the cassette reads in frame on
/// the gene's own strand.
pub fn make_knockout(
    genome: &NucleotideSequence,
    gene: &GeneAnnotation,
    window: usize,
) -> Result<(NucleotideSequence, NucleotideSequence)> {
    let cassette_len = STOP_CASSETTE.len();
    if gene.len() < CASSETTE_OFFSET + cassette_len {
        return Err(SeqError::GeneTooShort {
            gene_id: gene.gene_id.clone(),
            reason: format!(
                "length {} cannot hold a {} nt replacement at offset {}",
                gene.len(),
                cassette_len,
                CASSETTE_OFFSET
            ),
        });
    }
    if gene.end > genome.len() {
        return Err(SeqError::Window(format!(
            "gene {} ends at {} beyond genome length {}",
            gene.gene_id,
            gene.end,
            genome.len()
        )));
    }

    // Genome-coordinate span of the replaced bases, and the cassette text as
    // it appears on the forward strand.
    let (span_start, forward_text): (usize, String) = match gene.strand {
        Strand::Forward => (gene.start + CASSETTE_OFFSET, STOP_CASSETTE.to_string()),
        Strand::Reverse => {
            let rc: String = STOP_CASSETTE
                .chars()
                .rev()
                .map(|c| match c {
                    'A' => 'T',
                    'T' => 'A',
                    'C' => 'G',
                    'G' => 'C',
                    other => other,
                })
                .collect();
            (gene.end - CASSETTE_OFFSET - cassette_len, rc)
        }
    };
    let span_end = span_start + cassette_len;

    let wildtype = centered_window(genome, gene, window)?;
    let wstart = wildtype.origin.as_ref().expect("windows carry origins").start;
    if span_start < wstart || span_end > wstart + window {
        return Err(SeqError::Window(format!(
            "replacement span [{span_start},{span_end}) falls outside the {window} nt window of gene {}",
            gene.gene_id
        )));
    }

    let mut ko_codes = wildtype.codes.clone();
    for (i, ch) in forward_text.chars().enumerate() {
        ko_codes[span_start - wstart + i] = base_code(ch).expect("cassette is ACGT");
    }
    let knockout = NucleotideSequence {
        id: format!("{}|ko:{}", wildtype.id, gene.gene_id),
        codes: ko_codes,
        origin: wildtype.origin.clone(),
    };
    Ok((wildtype, knockout))
}
