//! TF-IDF vectorizer over whitespace-tokenized text.
//!
//! Fixed formula: idf(t) = ln((1+N)/(1+df(t))) + 1, weight = tf * idf,
//! rows L2-normalized. The vocabulary is the sorted set of observed terms,
//! so fitting is deterministic and transforms are bit-reproducible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    /// Sorted ascending; term index = position.
    terms: Vec<String>,
    idf: Vec<f64>,
}

pub fn tfidf_fit<S: AsRef<str>>(docs: &[S]) -> Result<TfidfVectorizer> {
    if docs.is_empty() {
        return Err(Error::Fit("tfidf needs at least one document".into()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.as_ref().split_whitespace().collect();
        seen.sort_unstable();
        seen.dedup();
        for term in seen {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let n = docs.len() as f64;
    let mut terms = Vec::with_capacity(df.len());
    let mut idf = Vec::with_capacity(df.len());
    for (term, count) in df {
        terms.push(term.to_string());
        idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
    }
    Ok(TfidfVectorizer { terms, idf })
}

impl TfidfVectorizer {
    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.terms
    }

    /// Dense L2-normalized row; unseen terms are ignored and an empty or
    /// fully out-of-vocabulary document maps to the zero vector.
    pub fn transform(&self, doc: &str) -> Vec<f64> {
        let mut row = vec![0.0; self.terms.len()];
        for term in doc.split_whitespace() {
            if let Ok(i) = self.terms.binary_search_by(|t| t.as_str().cmp(term)) {
                row[i] += self.idf[i];
            }
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
        row
    }
}
