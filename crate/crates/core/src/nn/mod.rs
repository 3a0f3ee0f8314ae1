//! Differentiable building blocks for sequence tagging: LSTM encoder,
//! linear-chain CRF, dropout and the Adam optimizer. Everything runs in
//! `f64` with hand-written backpropagation.

pub mod crf;
mod lstm;
mod matrix;
mod model;
mod optim;

use rand::Rng;
use thiserror::Error;

pub use crf::{Crf, Marginals, FORBIDDEN};
pub use lstm::{BiLstm, BiLstmTrace, LstmCell, LstmTrace};
pub use matrix::{axpy, dot, log_sum_exp, sigmoid, Matrix, Parameter};
pub use model::{CrfHead, Linear, SequenceModel, TokenInput};
pub use optim::{Adam, AdamConfig};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite {what} in parameter {param}")]
    NonFinite { param: String, what: &'static str },
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Applies inverted dropout in training mode; identity at inference.
pub fn dropout_apply<R: Rng>(v: &[f64], rate: f64, training: bool, rng: &mut R) -> Vec<f64> {
    if !training || rate == 0.0 {
        return v.to_vec();
    }
    v.iter()
        .zip(dropout_mask(v.len(), rate, rng))
        .map(|(x, m)| x * m)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = vec![1.0, -2.0, 3.5];
        assert_eq!(dropout_apply(&v, 0.0, true, &mut rng), v);
        assert_eq!(dropout_apply(&v, 0.5, false, &mut rng), v);
    }

    #[test]
    fn dropout_rate_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = dropout_apply(&vec![1.0; 100_000], 0.2, true, &mut rng);
        let zeros = out.iter().filter(|&&x| x == 0.0).count() as f64 / 1e5;
        assert!((0.195..=0.205).contains(&zeros), "{zeros}");
        assert!(out.iter().all(|&x| x == 0.0 || (x - 1.25).abs() < 1e-12));
    }
}
