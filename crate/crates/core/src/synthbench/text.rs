use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::vocab::{is_verb, VOCABULARY};
use super::SynthError;
use crate::numerics::{Fnv64, Tensor};

const TABLE_SEED: u64 = 0x7e57_c11b;
const HASH_BUCKETS: usize = 16;
/// Pooling weight of verb tokens in the sentence embedding.
pub const VERB_WEIGHT: f64 = 4.0;

/// Sentence embedding (unit norm) plus per-token embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEncoding {
    pub sentence: Vec<f64>,
    pub tokens: Tensor,
}

/// Frozen stand-in for a pretrained language encoder: a fixed seeded table of
/// token vectors and verb-weighted, L2-normalized pooling.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    dim: usize,
    table: Vec<f64>,
}

impl TextEncoder {
    pub fn frozen(dim: usize) -> Self {
        let rows = VOCABULARY.len() + HASH_BUCKETS;
        let mut rng = ChaCha8Rng::seed_from_u64(TABLE_SEED ^ dim as u64);
        let std = 1.0 / libm::sqrt(dim as f64);
        let table = (0..rows * dim)
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>();
        Self { dim, table }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row_of(&self, token: &str) -> usize {
        match VOCABULARY.iter().position(|&v| v == token) {
            Some(i) => i,
            None => {
                let mut h = Fnv64::new();
                h.write(token.as_bytes());
                VOCABULARY.len() + (h.finish() % HASH_BUCKETS as u64) as usize
            }
        }
    }

    pub fn token_vector(&self, token: &str) -> &[f64] {
        let r = self.row_of(token);
        &self.table[r * self.dim..(r + 1) * self.dim]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TextEncoding, SynthError> {
        if tokens.is_empty() {
            return Err(SynthError::EmptyInstruction);
        }
        let mut pooled = alloc::vec![0.0; self.dim];
        let mut rows = Vec::with_capacity(tokens.len() * self.dim);
        for tok in tokens {
            let tok = tok.as_ref();
            let v = self.token_vector(tok);
            let w = if is_verb(tok) { VERB_WEIGHT } else { 1.0 };
            for (p, x) in pooled.iter_mut().zip(v) {
                *p += w * x;
            }
            rows.extend_from_slice(v);
        }
        let n = libm::sqrt(pooled.iter().map(|x| x * x).sum::<f64>());
        pooled.iter_mut().for_each(|x| *x /= n);
        Ok(TextEncoding {
            sentence: pooled,
            tokens: Tensor::new(alloc::vec![tokens.len(), self.dim], rows)
                .expect("table entries are finite"),
        })
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    ab / libm::sqrt(aa * bb)
}

pub fn tokens(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| String::from(*w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_is_unit_and_scale_free() {
        let enc = TextEncoder::frozen(64);
        let once = enc.encode(&["open"]).unwrap();
        let twice = enc.encode(&["open", "open"]).unwrap();
        let n: f64 = once.sentence.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-9);
        for (a, b) in once.sentence.iter().zip(&twice.sentence) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(twice.tokens.shape(), &[2, 64]);
    }

    #[test]
    fn shared_verb_is_closer_than_disjoint() {
        let enc = TextEncoder::frozen(64);
        let a = enc.encode(&["open", "grill"]).unwrap().sentence;
        let b = enc.encode(&["open", "drawer"]).unwrap().sentence;
        let c = enc.encode(&["stack", "wine"]).unwrap().sentence;
        assert!(cosine(&a, &b) > cosine(&a, &c));
    }

    #[test]
    fn unknown_tokens_hash_deterministically() {
        let enc = TextEncoder::frozen(64);
        let a = enc.encode(&["zyzzyva"]).unwrap();
        let b = enc.encode(&["zyzzyva"]).unwrap();
        assert_eq!(a, b);
        assert!(enc.encode::<&str>(&[]).is_err());
    }
}
