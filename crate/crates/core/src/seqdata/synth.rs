//! Synthetic corpora with planted 3-periodic codon structure.
//!
//! Bases are drawn independently given the codon phase of their position,
//! from three distinct emission tables. Optimal next-symbol prediction
//! therefore requires tracking the phase: the phase-conditioned entropy is
//! strictly below the entropy of the pooled unigram distribution.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::NucleotideSequence;

pub const PHASE_COUNT: usize = 3;

/// Emission probabilities over (A, C, G, T) for codon phases 1..3.
/// These tables are part of the corpus definition; tests and baselines
/// derive expected statistics directly from them.
const PHASE_EMISSIONS: [[f64; 4]; PHASE_COUNT] = [
    [0.70, 0.10, 0.15, 0.05], // phase 1: purine-heavy anchor
    [0.05, 0.55, 0.10, 0.30], // phase 2
    [0.10, 0.15, 0.60, 0.15], // phase 3
];

/// The per-phase emission tables (rows: phase 1..3, cols: A,C,G,T).
pub fn phase_tables() -> [[f64; 4]; PHASE_COUNT] {
    PHASE_EMISSIONS
}

fn sample_base(rng: &mut ChaCha8Rng, dist: &[f64; 4]) -> u8 {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u8;
        }
    }
    3
}

/// Draws `num_sequences` sequences of `length` nt (length divisible by 3)
/// from the fixed 3-periodic process. Deterministic given the seed.
pub fn synth_codon_corpus(
    num_sequences: usize,
    length: usize,
    seed: u64,
) -> Vec<NucleotideSequence> {
    assert!(length % 3 == 0, "length must be divisible by 3");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_sequences)
        .map(|n| {
            let codes = (0..length)
                .map(|i| sample_base(&mut rng, &PHASE_EMISSIONS[i % PHASE_COUNT]))
                .collect();
            NucleotideSequence {
                id: format!("synth{n:05}"),
                codes,
                origin: None,
            }
        })
        .collect()
}

/// Entropy (nats) of a categorical distribution.
pub fn categorical_entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum()
}

/// Entropy of the pooled (phase-blind) unigram distribution, in nats.
/// `exp` of this is the best perplexity achievable without phase tracking.
pub fn unigram_entropy() -> f64 {
    let mut marginal = [0.0f64; 4];
    for row in &PHASE_EMISSIONS {
        for (m, p) in marginal.iter_mut().zip(row) {
            *m += p / PHASE_COUNT as f64;
        }
    }
    categorical_entropy(&marginal)
}

/// Mean per-phase emission entropy, in nats — the entropy rate of the
/// generating process and the floor for any predictor.
pub fn phase_conditioned_entropy() -> f64 {
    PHASE_EMISSIONS
        .iter()
        .map(|row| categorical_entropy(row))
        .sum::<f64>()
        / PHASE_COUNT as f64
}
