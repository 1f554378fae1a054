//! Genomic sequence ingestion: nucleotide encoding, FASTA/TSV parsing,
//! genome windowing, variant and knockout construction, and synthetic
//! corpora with planted codon structure.
//!
//! All operations are pure functions over immutable inputs.

mod edits;
mod io;
mod synth;
mod windows;

pub use edits::{apply_variant, make_knockout, revert_variant, STOP_CASSETTE};
pub use io::{
    read_annotations, read_fasta, read_variants, write_annotations, write_fasta, write_variants,
};
pub use synth::{
    categorical_entropy, phase_conditioned_entropy, phase_tables, synth_codon_corpus,
    unigram_entropy, PHASE_COUNT,
};
pub use windows::{centered_window, window_genome, DEFAULT_WINDOW};

use thiserror::Error;

/// The fixed nucleotide alphabet. Index assignment: A=0, C=1, G=2, T=3.
pub const ALPHABET: [char; 4] = ['A', 'C', 'G', 'T'];

/// Errors raised by sequence construction and parsing.
#[derive(Debug, Error)]
pub enum SeqError {
    #[error("ambiguous bases at positions {positions:?}")]
    Ambiguity { positions: Vec<usize> },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("window error: {0}")]
    Window(String),
    #[error("reference mismatch at position {position}: sequence has {found}, variant expects {expected}")]
    RefMismatch {
        position: usize,
        found: char,
        expected: char,
    },
    #[error("gene {gene_id} too short for knockout: {reason}")]
    GeneTooShort { gene_id: String, reason: String },
    #[error("empty sequence")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<V> = std::result::Result<V, SeqError>;

/// Policy for non-ACGT characters during encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmbiguityPolicy {
    /// Fail with the offending positions (default).
    #[default]
    Reject,
    /// Replace each offender with a seeded uniform base.
    Randomize { seed: u64 },
}

/// Strand of a genome feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strand {
    Forward,
    Reverse,
}

impl Strand {
    pub fn symbol(self) -> char {
        match self {
            Strand::Forward => '+',
            Strand::Reverse => '-',
        }
    }

    pub fn parse(s: &str) -> Option<Strand> {
        match s {
            "+" => Some(Strand::Forward),
            "-" => Some(Strand::Reverse),
            _ => None,
        }
    }
}

/// Where a windowed sequence came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub genome_id: String,
    /// 0-based offset of this sequence's first base in the source genome.
    pub start: usize,
    pub strand: Strand,
}

/// An encoded nucleotide sequence over the index alphabet {0:A,1:C,2:G,3:T}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NucleotideSequence {
    pub id: String,
    pub codes: Vec<u8>,
    pub origin: Option<Origin>,
}

impl NucleotideSequence {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Decodes back to an ACGT string.
    pub fn decode(&self) -> String {
        self.codes.iter().map(|&c| ALPHABET[c as usize]).collect()
    }

    /// Reverse complement (A<->T, C<->G, reversed), preserving id and origin.
    pub fn reverse_complement(&self) -> NucleotideSequence {
        NucleotideSequence {
            id: self.id.clone(),
            codes: self.codes.iter().rev().map(|&c| 3 - c).collect(),
            origin: self.origin.clone(),
        }
    }
}

/// Encodes an ACGT string (case-insensitive). Non-ACGT characters follow the
/// ambiguity policy: rejected with their positions, or replaced by seeded
/// uniform draws.
pub fn encode_sequence(
    id: impl Into<String>,
    text: &str,
    policy: AmbiguityPolicy,
) -> Result<NucleotideSequence> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    if text.is_empty() {
        return Err(SeqError::Empty);
    }
    let mut codes = Vec::with_capacity(text.len());
    let mut bad = Vec::new();
    for (i, ch) in text.chars().enumerate() {
        let code = match ch.to_ascii_uppercase() {
            'A' => 0,
            'C' => 1,
            'G' => 2,
            'T' => 3,
            _ => {
                bad.push(i);
                u8::MAX
            }
        };
        codes.push(code);
    }
    if !bad.is_empty() {
        match policy {
            AmbiguityPolicy::Reject => return Err(SeqError::Ambiguity { positions: bad }),
            AmbiguityPolicy::Randomize { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for &i in &bad {
                    codes[i] = rng.random_range(0..4u8);
                }
            }
        }
    }
    Ok(NucleotideSequence {
        id: id.into(),
        codes,
        origin: None,
    })
}

/// Functional class of an annotated region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionLabel {
    Promoter,
    StartCodon,
    Coding,
    StopCodon,
    Intergenic,
    Other,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::Promoter => "promoter",
            RegionLabel::StartCodon => "start_codon",
            RegionLabel::Coding => "coding",
            RegionLabel::StopCodon => "stop_codon",
            RegionLabel::Intergenic => "intergenic",
            RegionLabel::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<RegionLabel> {
        match s {
            "promoter" => Some(RegionLabel::Promoter),
            "start_codon" => Some(RegionLabel::StartCodon),
            "coding" => Some(RegionLabel::Coding),
            "stop_codon" => Some(RegionLabel::StopCodon),
            "intergenic" => Some(RegionLabel::Intergenic),
            "other" => Some(RegionLabel::Other),
            _ => None,
        }
    }
}

/// One annotated span of a genome, 0-based half-open.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneAnnotation {
    pub gene_id: String,
    pub genome_id: String,
    pub start: usize,
    pub end: usize,
    pub strand: Strand,
    pub region_label: RegionLabel,
    pub essential: Option<bool>,
}

impl GeneAnnotation {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn midpoint(&self) -> usize {
        (self.start + self.end) / 2
    }
}

/// A single-nucleotide substitution with its measured fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRecord {
    pub gene_id: String,
    /// 0-based offset within the reference sequence.
    pub position: usize,
    pub ref_base: char,
    pub alt_base: char,
    pub fitness: f64,
}

pub(crate) fn base_code(ch: char) -> Option<u8> {
    match ch.to_ascii_uppercase() {
        'A' => Some(0),
        'C' => Some(1),
        'G' => Some(2),
        'T' => Some(3),
        _ => None,
    }
}
