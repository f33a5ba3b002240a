//! Stateless hashed n-gram featurization shared by experts and router.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 14_695_981_039_346_656_037;
const FNV_PRIME: u64 = 1_099_511_628_211;
const JOINER: u8 = 0x1F;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TfScaling {
    RawCount,
    Log1pCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizerConfig {
    pub ngram_orders: Vec<usize>,
    pub dims: usize,
    pub lowercase: bool,
    pub tf_scaling: TfScaling,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            ngram_orders: vec![1, 2],
            dims: 1 << 18,
            lowercase: true,
            tf_scaling: TfScaling::Log1pCount,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.dims.is_power_of_two() || self.dims > 1 << 31 {
            return Err(Error::Config(format!(
                "featurizer dims must be a power of two no larger than 2^31, got {}",
                self.dims
            )));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Config(
                "ngram_orders must be nonempty and every order at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Length of a weight vector over these features, bias included.
    pub fn weight_len(&self) -> usize {
        self.dims + 1
    }
}

/// Sparse nonnegative feature vector. Indices are strictly increasing and lie
/// in `[0, dims)`; the bias coordinate at `dims` is implicit and always 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dims: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn zero(dims: usize) -> Self {
        Self {
            dims,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from `(index, value)` pairs, validating the invariants.
    pub fn from_entries(dims: usize, entries: &[(usize, f64)]) -> Result<Self> {
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut prev: Option<usize> = None;
        for &(i, v) in entries {
            if i >= dims || prev.is_some_and(|p| p >= i) {
                return Err(Error::invalid(format!(
                    "feature indices must be strictly increasing and below {dims}"
                )));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("feature values must be positive and finite"));
            }
            indices.push(i as u32);
            values.push(v);
            prev = Some(i);
        }
        Ok(Self {
            dims,
            indices,
            values,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Inner product with a dense weight vector of length `dims + 1`, bias last.
    pub fn dot(&self, dense: &[f64]) -> Result<f64> {
        if dense.len() != self.dims + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.dims + 1,
                actual: dense.len(),
            });
        }
        Ok(self.dot_unchecked(dense))
    }

    #[inline]
    pub(crate) fn dot_unchecked(&self, dense: &[f64]) -> f64 {
        debug_assert_eq!(dense.len(), self.dims + 1);
        let mut acc = 0.0;
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            acc += v * dense[i as usize];
        }
        acc + dense[self.dims]
    }

    /// `dense += scale * phi~`, bias coordinate included.
    #[inline]
    pub(crate) fn axpy_into(&self, scale: f64, dense: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            dense[i as usize] += scale * v;
        }
        dense[self.dims] += scale;
    }

    /// Dense copy with the bias coordinate appended.
    pub fn to_dense_with_bias(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dims + 1];
        self.axpy_into(1.0, &mut d);
        d
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn simple_lowercase(s: &str) -> String {
    s.chars()
        .map(|c| c.to_lowercase().next().unwrap_or(c))
        .collect()
}

/// Whitespace split, edge punctuation stripped, empty pieces dropped.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|piece| piece.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|piece| !piece.is_empty())
        .map(|piece| {
            if lowercase {
                simple_lowercase(piece)
            } else {
                piece.to_string()
            }
        })
        .collect()
}

/// Per-index n-gram counts before scaling and normalization.
pub fn hashed_counts(tokens: &[String], config: &FeaturizerConfig) -> HashMap<u32, f64> {
    let mask = (config.dims - 1) as u64;
    let mut counts: HashMap<u32, f64> = HashMap::new();
    let mut buf: Vec<u8> = Vec::new();
    for &n in &config.ngram_orders {
        if n > tokens.len() {
            continue;
        }
        for gram in tokens.windows(n) {
            buf.clear();
            for (j, tok) in gram.iter().enumerate() {
                if j > 0 {
                    buf.push(JOINER);
                }
                buf.extend_from_slice(tok.as_bytes());
            }
            let idx = (fnv1a64(&buf) & mask) as u32;
            *counts.entry(idx).or_insert(0.0) += 1.0;
        }
    }
    counts
}

pub fn featurize(text: &str, config: &FeaturizerConfig) -> FeatureVector {
    let tokens = tokenize(text, config.lowercase);
    let mut entries: Vec<(u32, f64)> = hashed_counts(&tokens, config).into_iter().collect();
    entries.sort_unstable_by_key(|&(i, _)| i);
    if config.tf_scaling == TfScaling::Log1pCount {
        for e in &mut entries {
            e.1 = e.1.ln_1p();
        }
    }
    let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    let (indices, values) = entries.into_iter().unzip();
    FeatureVector {
        dims: config.dims,
        indices,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Hello, world!", true), words(&["hello", "world"]));
        assert!(tokenize("", true).is_empty());
        assert_eq!(
            tokenize("Person1: Hello.", true),
            words(&["person1", "hello"])
        );
        assert_eq!(tokenize("  -- ... ", true), Vec::<String>::new());
        assert_eq!(tokenize("Keep CASE", false), words(&["Keep", "CASE"]));
        assert_eq!(
            tokenize("don't\u{00A0}ÉCOLE", true),
            words(&["don't", "école"])
        );
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn raw_counts_for_repeated_token() {
        let cfg = FeaturizerConfig {
            ngram_orders: vec![1],
            dims: 1 << 20,
            lowercase: true,
            tf_scaling: TfScaling::RawCount,
        };
        let counts = hashed_counts(&tokenize("a b a", true), &cfg);
        let ha = (fnv1a64(b"a") & (cfg.dims as u64 - 1)) as u32;
        let hb = (fnv1a64(b"b") & (cfg.dims as u64 - 1)) as u32;
        assert_eq!(counts[&ha], 2.0);
        assert_eq!(counts[&hb], 1.0);
    }

    #[test]
    fn bigram_uses_unit_separator() {
        let cfg = FeaturizerConfig {
            ngram_orders: vec![2],
            dims: 1 << 20,
            ..Default::default()
        };
        let fv = featurize("x y", &cfg);
        let h = (fnv1a64(b"x\x1fy") & (cfg.dims as u64 - 1)) as usize;
        assert_eq!(fv.entries().collect::<Vec<_>>(), vec![(h, 1.0)]);
    }

    #[test]
    fn empty_text_is_bias_only() {
        let cfg = FeaturizerConfig {
            dims: 8,
            ..Default::default()
        };
        let fv = featurize("", &cfg);
        assert_eq!(fv.nnz(), 0);
        let dense = [0.3, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2.5];
        assert_eq!(fv.dot(&dense).unwrap(), -2.5);
    }

    #[test]
    fn normalized_and_deterministic() {
        let cfg = FeaturizerConfig::default();
        let a = featurize("The quick brown fox jumps over the lazy dog.", &cfg);
        let b = featurize("The quick brown fox jumps over the lazy dog.", &cfg);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dot_examples() {
        let fv = FeatureVector::from_entries(8, &[(0, 1.0)]).unwrap();
        let mut e0 = vec![0.0; 9];
        e0[0] = 1.0;
        assert_eq!(fv.dot(&e0).unwrap(), 1.0);

        let fv = FeatureVector::from_entries(8, &[(2, 0.5), (7, 2.0)]).unwrap();
        let mut dense = vec![0.0; 9];
        dense[2] = 1.0;
        dense[7] = 0.25;
        dense[8] = 0.1;
        assert!((fv.dot(&dense).unwrap() - 1.1).abs() < 1e-15);
        assert!(matches!(
            fv.dot(&dense[..8]),
            Err(Error::DimensionMismatch {
                expected: 9,
                actual: 8
            })
        ));
    }

    #[test]
    fn entries_validation() {
        assert!(FeatureVector::from_entries(4, &[(2, 1.0), (1, 1.0)]).is_err());
        assert!(FeatureVector::from_entries(4, &[(4, 1.0)]).is_err());
        assert!(FeatureVector::from_entries(4, &[(1, 0.0)]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FeaturizerConfig::default().validate().is_ok());
        assert!(FeaturizerConfig {
            dims: 100,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FeaturizerConfig {
            ngram_orders: vec![],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FeaturizerConfig {
            ngram_orders: vec![0],
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
