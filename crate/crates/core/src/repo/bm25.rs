//! Okapi BM25 with Lucene's non-negative idf.

use std::collections::{BTreeSet, HashMap};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    docs: Vec<HashMap<String, usize>>,
    lens: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avgdl: f64,
}

impl Bm25Index {
    pub fn new(docs: &[Vec<String>]) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut tfs = Vec::with_capacity(docs.len());
        for d in docs {
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in d {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            tfs.push(tf);
        }
        let lens: Vec<usize> = docs.iter().map(Vec::len).collect();
        let avgdl = if lens.is_empty() {
            0.0
        } else {
            lens.iter().sum::<usize>() as f64 / lens.len() as f64
        };
        Bm25Index {
            docs: tfs,
            lens,
            doc_freq,
            avgdl,
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_score(&self, term: &str, tf: usize, dl: usize) -> f64 {
        if tf == 0 {
            return 0.0;
        }
        let tf = tf as f64;
        let norm = if self.avgdl > 0.0 { dl as f64 / self.avgdl } else { 1.0 };
        self.idf(term) * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * norm))
    }

    /// Score of document `doc` over the distinct query terms.
    pub fn score(&self, query: &[String], doc: usize) -> f64 {
        let terms: BTreeSet<&String> = query.iter().collect();
        terms
            .into_iter()
            .map(|t| self.term_score(t, self.docs[doc].get(t).copied().unwrap_or(0), self.lens[doc]))
            .sum()
    }

    /// Score the query would get against a document identical to itself,
    /// using this corpus's statistics. Used to normalize scores.
    pub fn self_score(&self, query: &[String]) -> f64 {
        let mut tf: HashMap<&String, usize> = HashMap::new();
        for t in query {
            *tf.entry(t).or_default() += 1;
        }
        let terms: BTreeSet<&String> = query.iter().collect();
        terms
            .into_iter()
            .map(|t| self.term_score(t, tf[t], query.len()))
            .sum()
    }

    pub fn contains_any(&self, query: &[String], doc: usize) -> bool {
        query.iter().any(|t| self.docs[doc].contains_key(t))
    }
}
