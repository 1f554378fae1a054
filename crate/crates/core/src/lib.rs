//! dnahnet: a hierarchical dynamic-chunking language model for nucleotide
//! sequences, together with its training loop, inference pipelines, FLOP
//! cost model and synthetic benchmarks.

pub mod autodiff;
pub mod chunking;
pub mod eval;
pub mod flops;
pub mod hnet;
pub mod layers;
pub mod seqdata;
pub mod synthbench;
pub mod train;

pub use autodiff::{Parameter, Scalar, Tensor, TensorError};

/// Formats a value with 9 significant digits in scientific notation — the
/// fixed convention for all numeric CSV output, chosen so golden-file tests
/// stay byte-stable.
pub fn fmt_sig(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod fmt_tests {
    use super::fmt_sig;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(4.0), "4.00000000e0");
        assert_eq!(fmt_sig(1.3862943611198906), "1.38629436e0");
        assert_eq!(fmt_sig(0.25), "2.50000000e-1");
        assert_eq!(fmt_sig(0.0), "0.00000000e0");
        assert_eq!(fmt_sig(-31.5), "-3.15000000e1");
        let round_trip: f64 = fmt_sig(0.1).parse().unwrap();
        assert!((round_trip - 0.1).abs() < 1e-9);
    }
}
