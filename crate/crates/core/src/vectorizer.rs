//! Sparse tf-idf features over word uni- and bigrams.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::ShapeMismatch("indices and values differ in length".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ShapeMismatch("indices must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite feature value".into()));
        }
        Ok(SparseVector { indices, values })
    }

    /// Builds a vector from unordered `(index, value)` pairs, summing duplicates.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            *acc.entry(i).or_insert(0.0) += v;
        }
        let (indices, values) = acc.into_iter().unzip();
        SparseVector::new(indices, values)
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        SparseVector { indices, values }
    }

    pub fn zero() -> Self {
        SparseVector::default()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// One past the largest index, i.e. the smallest feature space that fits.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |i| i + 1)
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// How term counts become feature values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Raw count times smoothed idf, L2-normalized.
    #[default]
    TfIdf,
    /// Raw term counts, unnormalized. Kept for ablations.
    RawCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorizerConfig {
    pub min_df: usize,
    pub ngram_range: (usize, usize),
    pub weighting: Weighting,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        VectorizerConfig { min_df: 2, ngram_range: (1, 2), weighting: Weighting::TfIdf }
    }
}

/// Fitted term dictionary with per-term idf weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    idf: Vec<f64>,
    config: VectorizerConfig,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    idf: Vec<f64>,
    config: VectorizerConfig,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let index = r.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { terms: r.terms, idf: r.idf, config: r.config, index }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { terms: v.terms, idf: v.idf, config: v.config }
    }
}

/// Word n-grams of `doc` for `n` in `range`, bigrams joined by a space.
pub fn ngrams(doc: &[String], range: (usize, usize)) -> impl Iterator<Item = String> + '_ {
    let (lo, hi) = range;
    (lo.max(1)..=hi).flat_map(move |n| doc.windows(n).map(|w| w.join(" ")))
}

pub fn fit_vocabulary(docs: &[Vec<String>], min_df: usize) -> Result<Vocabulary> {
    fit_vocabulary_with(docs, &VectorizerConfig { min_df, ..Default::default() })
}

pub fn fit_vocabulary_with(docs: &[Vec<String>], config: &VectorizerConfig) -> Result<Vocabulary> {
    if docs.iter().all(|d| d.is_empty()) {
        return Err(Error::EmptyDocuments);
    }
    if config.ngram_range.0 > config.ngram_range.1 || config.ngram_range.1 == 0 {
        return Err(Error::InvalidConfig(format!("bad ngram_range {:?}", config.ngram_range)));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<String> = ngrams(doc, config.ngram_range).collect();
        for term in unique {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let n_docs = docs.len() as f64;
    let (terms, idf): (Vec<String>, Vec<f64>) = df
        .into_iter()
        .filter(|(_, d)| *d >= config.min_df)
        .map(|(t, d)| (t, ((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0))
        .unzip();
    Ok(VocabularyRepr { terms, idf, config: *config }.into())
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn config(&self) -> &VectorizerConfig {
        &self.config
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Same terms and idf, different weighting scheme.
    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.config.weighting = weighting;
        self
    }

    pub fn transform(&self, doc: &[String]) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for term in ngrams(doc, self.config.ngram_range) {
            if let Some(&i) = self.index.get(&term) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let (indices, mut values): (Vec<usize>, Vec<f64>) = match self.config.weighting {
            Weighting::RawCount => counts.into_iter().unzip(),
            Weighting::TfIdf => counts.into_iter().map(|(i, tf)| (i, tf * self.idf[i])).unzip(),
        };
        if self.config.weighting == Weighting::TfIdf {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                values.iter_mut().for_each(|v| *v /= norm);
            }
        }
        SparseVector { indices, values }
    }
}

pub fn transform(doc: &[String], vocab: &Vocabulary) -> SparseVector {
    vocab.transform(doc)
}
