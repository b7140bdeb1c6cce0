//! Word embedding matrices and bilingual dictionaries.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormState {
    Raw,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Scale every row to unit Euclidean norm.
    #[default]
    UnitNorm,
    /// Subtract the mean vector, then scale rows to unit norm.
    CenterThenUnit,
}

/// Row-per-word embeddings with a frequency-ordered vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vec<String>,
    vectors: Mat,
    norm_state: NormState,
    index: BTreeMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(vocab: Vec<String>, vectors: Mat) -> Result<Self> {
        if vocab.len() != vectors.rows() {
            return Err(Error::DimensionMismatch {
                context: "vocabulary length vs embedding rows",
                expected: vectors.rows(),
                actual: vocab.len(),
            });
        }
        if !vectors.is_finite() {
            return Err(Error::NonFiniteInput("embedding vectors"));
        }
        let mut index = BTreeMap::new();
        for (i, w) in vocab.iter().enumerate() {
            if w.is_empty() {
                return Err(Error::InvalidArgument(format!("empty word at row {i}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate word {w:?}")));
            }
        }
        Ok(EmbeddingMatrix {
            vocab,
            vectors,
            norm_state: NormState::Raw,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vectors(&self) -> &Mat {
        &self.vectors
    }

    pub fn norm_state(&self) -> NormState {
        self.norm_state
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// The `n` most frequent words.
    pub fn truncated(&self, n: usize) -> EmbeddingMatrix {
        let n = n.min(self.len());
        let vocab: Vec<String> = self.vocab[..n].to_vec();
        let index = vocab.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        EmbeddingMatrix {
            vocab,
            vectors: self.vectors.top_rows(n),
            norm_state: self.norm_state,
            index,
        }
    }

    /// Returns a copy with every row at unit norm. Zero rows become the basis
    /// vector `e_(row mod d)`.
    pub fn normalized(&self, mode: Normalization) -> Result<EmbeddingMatrix> {
        if self.norm_state == NormState::Unit {
            return Err(Error::InvalidArgument("embeddings are already normalized".into()));
        }
        let (n, d) = self.vectors.shape();
        let mut v = self.vectors.clone();
        if mode == Normalization::CenterThenUnit && n > 0 {
            let mean: Vec<f64> = v.col_sums().into_iter().map(|s| s / n as f64).collect();
            for i in 0..n {
                for (x, m) in v.row_mut(i).iter_mut().zip(&mean) {
                    *x -= m;
                }
            }
        }
        let mut replaced = 0usize;
        for i in 0..n {
            let row = v.row_mut(i);
            let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>());
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            } else if d > 0 {
                row.iter_mut().for_each(|x| *x = 0.0);
                row[i % d] = 1.0;
                replaced += 1;
            }
        }
        if replaced > 0 {
            log::warn!("replaced {replaced} zero embedding rows with basis vectors");
        }
        Ok(EmbeddingMatrix {
            vocab: self.vocab.clone(),
            vectors: v,
            norm_state: NormState::Unit,
            index: self.index.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictEntry {
    pub source: String,
    /// Gold translations in first-seen order, without duplicates.
    pub targets: Vec<String>,
    /// Set by [`BilingualDictionary::mark_oov`] when the entry cannot be evaluated.
    pub oov: bool,
}

/// Source word → set of accepted translations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualDictionary {
    entries: Vec<DictEntry>,
    by_source: BTreeMap<String, usize>,
}

impl BilingualDictionary {
    /// Builds a dictionary from (source, target) pairs, dropping duplicate pairs.
    pub fn from_pairs<I, S, T>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut entries: Vec<DictEntry> = Vec::new();
        let mut by_source = BTreeMap::new();
        for (s, t) in pairs {
            let (s, t) = (s.into(), t.into());
            if s.is_empty() || t.is_empty() {
                return Err(Error::InvalidArgument("dictionary words must be nonempty".into()));
            }
            let slot = *by_source.entry(s.clone()).or_insert_with(|| {
                entries.push(DictEntry {
                    source: s,
                    targets: Vec::new(),
                    oov: false,
                });
                entries.len() - 1
            });
            let targets = &mut entries[slot].targets;
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        if entries.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        Ok(BilingualDictionary { entries, by_source })
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    /// Number of distinct source words.
    pub fn num_queries(&self) -> usize {
        self.entries.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.entries.iter().map(|e| e.targets.len()).sum()
    }

    pub fn targets_of(&self, source: &str) -> Option<&[String]> {
        self.by_source.get(source).map(|&i| self.entries[i].targets.as_slice())
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .flat_map(|e| e.targets.iter().map(move |t| (e.source.as_str(), t.as_str())))
    }

    /// Flags entries whose source word, or every gold target, is missing from
    /// the given vocabularies. Returns the number of flagged entries.
    pub fn mark_oov(&mut self, source: &EmbeddingMatrix, target: &EmbeddingMatrix) -> usize {
        let mut flagged = 0;
        for e in &mut self.entries {
            e.oov = source.index_of(&e.source).is_none()
                || e.targets.iter().all(|t| target.index_of(t).is_none());
            flagged += e.oov as usize;
        }
        flagged
    }

    /// In-vocabulary queries as (source row, gold target rows), plus the number
    /// of skipped entries.
    pub fn resolve(&self, source: &EmbeddingMatrix, target: &EmbeddingMatrix) -> (Vec<(usize, Vec<usize>)>, usize) {
        let mut queries = Vec::new();
        let mut skipped = 0;
        for e in &self.entries {
            let gold: Vec<usize> = e.targets.iter().filter_map(|t| target.index_of(t)).collect();
            match source.index_of(&e.source) {
                Some(s) if !gold.is_empty() => queries.push((s, gold)),
                _ => skipped += 1,
            }
        }
        (queries, skipped)
    }
}
