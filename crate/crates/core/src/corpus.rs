//! Document collections: loading, tokenization, vocabulary pruning and
//! tf-idf / bag-of-words featurization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sparse::SparseVec;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    Empty,
    #[error("document {0:?} has a sub-label but no major label")]
    BrokenHierarchy(String),
    #[error("sub-label {sub:?} maps to both {first:?} and {second:?}")]
    InconsistentHierarchy {
        sub: String,
        first: String,
        second: String,
    },
    #[error("vocabulary is empty after pruning")]
    EmptyVocabulary,
}

/// One document with optional hierarchical gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub gold_major: Option<String>,
    pub gold_sub: Option<String>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        raw_text: impl Into<String>,
        gold_major: Option<String>,
        gold_sub: Option<String>,
    ) -> Self {
        let raw_text = raw_text.into();
        Self {
            id: id.into(),
            tokens: tokenize(&raw_text),
            raw_text,
            gold_major,
            gold_sub,
        }
    }
}

/// JSON-lines record for a single document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub major_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_label: Option<String>,
}

/// An ordered, id-unique collection of documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Validates id uniqueness and the label hierarchy.
    pub fn new(docs: Vec<Document>) -> Result<Self, CorpusError> {
        if docs.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut by_id = HashMap::with_capacity(docs.len());
        let mut sub_to_major: HashMap<&str, &str> = HashMap::new();
        for (i, doc) in docs.iter().enumerate() {
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
            if let Some(sub) = &doc.gold_sub {
                let Some(major) = &doc.gold_major else {
                    return Err(CorpusError::BrokenHierarchy(doc.id.clone()));
                };
                match sub_to_major.get(sub.as_str()) {
                    Some(&m) if m != major => {
                        return Err(CorpusError::InconsistentHierarchy {
                            sub: sub.clone(),
                            first: m.to_string(),
                            second: major.clone(),
                        })
                    }
                    Some(_) => {}
                    None => {
                        sub_to_major.insert(sub, major);
                    }
                }
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn from_records(records: Vec<CorpusRecord>) -> Result<Self, CorpusError> {
        Self::new(
            records
                .into_iter()
                .map(|r| Document::new(r.id, r.text, r.major_label, r.sub_label))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, index: usize) -> Option<&Document> {
        self.docs.get(index)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&Document> {
        self.index_of(id).map(|i| &self.docs[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    /// True when every document carries both gold labels.
    pub fn has_hierarchical_labels(&self) -> bool {
        self.docs
            .iter()
            .all(|d| d.gold_major.is_some() && d.gold_sub.is_some())
    }

    pub fn records(&self) -> impl Iterator<Item = CorpusRecord> + '_ {
        self.docs.iter().map(|d| CorpusRecord {
            id: d.id.clone(),
            text: d.raw_text.clone(),
            major_label: d.gold_major.clone(),
            sub_label: d.gold_sub.clone(),
        })
    }

    /// Drops exact-duplicate texts (first occurrence wins) and documents
    /// with fewer than `filter.min_tokens` tokens.
    pub fn filtered(&self, filter: &CorpusFilter) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        let kept = self
            .docs
            .iter()
            .filter(|d| !filter.dedup || seen.insert(d.raw_text.trim()))
            .filter(|d| d.tokens.len() >= filter.min_tokens)
            .cloned()
            .collect();
        Self::new(kept)
    }

    /// New corpus restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, CorpusError> {
        Self::new(indices.iter().map(|&i| self.docs[i].clone()).collect())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = BufWriter::new(File::create(path)?);
        for record in self.records() {
            serde_json::to_writer(&mut out, &record).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cleaning rules applied after loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusFilter {
    pub min_tokens: usize,
    pub dedup: bool,
}

impl Default for CorpusFilter {
    fn default() -> Self {
        Self {
            min_tokens: 30,
            dedup: true,
        }
    }
}

/// Reads a JSON-lines corpus. Blank lines are ignored.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::FileNotFound(path.to_path_buf()),
        _ => CorpusError::Io(e),
    })?;
    read_corpus(BufReader::new(file))
}

pub fn read_corpus(reader: impl BufRead) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Corpus::from_records(records)
}

/// A token with its byte range in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercased alphabetic runs of at least two characters.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    tokenize_spans(raw_text).into_iter().map(|t| t.text).collect()
}

pub fn tokenize_spans(raw_text: &str) -> Vec<TokenSpan> {
    let mut out = Vec::new();
    let mut start = None;
    let push = |s: usize, e: usize, out: &mut Vec<TokenSpan>| {
        let piece = &raw_text[s..e];
        if piece.chars().nth(1).is_some() {
            out.push(TokenSpan {
                text: piece.to_lowercase(),
                start: s,
                end: e,
            });
        }
    };
    for (i, c) in raw_text.char_indices() {
        match (c.is_alphabetic(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                push(s, i, &mut out);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s, raw_text.len(), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn empty() -> Self {
        Self(HashSet::new())
    }

    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Ok(Self::parse(&text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(CorpusError::FileNotFound(path.to_path_buf()))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn contains(&self, term: &str) -> bool {
        self.0.contains(term)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<String> for Stopwords {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Document-frequency pruning: a term survives when
/// `min_df <= df <= max_df_fraction * n_docs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub min_df: usize,
    pub max_df_fraction: f64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_df: 3,
            max_df_fraction: 0.5,
        }
    }
}

impl VocabConfig {
    pub fn keeps(&self, df: usize, n_docs: usize) -> bool {
        df >= self.min_df && (df as f64) <= self.max_df_fraction * n_docs as f64
    }
}

/// Lexicographically ordered term list with document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyExport", into = "VocabularyExport")]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    n_docs: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyExport {
    terms: Vec<String>,
    doc_freq: BTreeMap<String, usize>,
    n_docs: usize,
}

impl From<Vocabulary> for VocabularyExport {
    fn from(v: Vocabulary) -> Self {
        Self {
            doc_freq: v.terms.iter().cloned().zip(v.doc_freq).collect(),
            terms: v.terms,
            n_docs: v.n_docs,
        }
    }
}

impl TryFrom<VocabularyExport> for Vocabulary {
    type Error = String;

    fn try_from(e: VocabularyExport) -> Result<Self, Self::Error> {
        let doc_freq = e
            .terms
            .iter()
            .map(|t| {
                e.doc_freq
                    .get(t)
                    .copied()
                    .ok_or_else(|| format!("missing doc_freq for {t:?}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Vocabulary::from_parts(e.terms, doc_freq, e.n_docs)
            .ok_or_else(|| "duplicate terms in vocabulary".to_string())
    }
}

impl Vocabulary {
    fn from_parts(terms: Vec<String>, doc_freq: Vec<usize>, n_docs: usize) -> Option<Self> {
        let index: HashMap<String, usize> = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        (index.len() == terms.len()).then_some(Self {
            terms,
            doc_freq,
            n_docs,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn doc_freq(&self, index: usize) -> usize {
        self.doc_freq[index]
    }

    /// Number of documents the frequencies were counted over.
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Smooth idf: `ln((1 + D) / (1 + df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq[index] as f64)).ln() + 1.0
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("vocabulary serializes")
    }
}

pub fn build_vocabulary(
    corpus: &Corpus,
    stopwords: &Stopwords,
    config: &VocabConfig,
) -> Result<Vocabulary, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in corpus.docs() {
        let distinct: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for t in distinct {
            *df.entry(t).or_default() += 1;
        }
    }
    let n_docs = corpus.len();
    let (terms, doc_freq): (Vec<String>, Vec<usize>) = df
        .into_iter()
        .filter(|(t, f)| !stopwords.contains(t) && config.keeps(*f, n_docs))
        .map(|(t, f)| (t.to_string(), f))
        .unzip();
    if terms.is_empty() {
        return Err(CorpusError::EmptyVocabulary);
    }
    Ok(Vocabulary::from_parts(terms, doc_freq, n_docs).expect("BTreeMap keys are unique"))
}

/// Row-per-document sparse tf-idf weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub cols: usize,
    pub rows: Vec<SparseVec>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(SparseVec::nnz).sum()
    }
}

/// In-vocabulary term counts per document, sorted by term index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowMatrix {
    pub n_terms: usize,
    pub rows: Vec<Vec<(u32, u32)>>,
}

impl BowMatrix {
    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn row_total(&self, doc: usize) -> u32 {
        self.rows[doc].iter().map(|&(_, c)| c).sum()
    }

    pub fn total(&self) -> u64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter().map(|&(_, c)| c as u64))
            .sum()
    }

    /// The document as a flat token-id list, grouped by term index.
    pub fn tokens(&self, doc: usize) -> Vec<u32> {
        expand_counts(&self.rows[doc])
    }

    pub fn dense_row(&self, doc: usize) -> Vec<u32> {
        let mut out = vec![0; self.n_terms];
        for &(t, c) in &self.rows[doc] {
            out[t as usize] = c;
        }
        out
    }
}

pub(crate) fn expand_counts(row: &[(u32, u32)]) -> Vec<u32> {
    row.iter()
        .flat_map(|&(t, c)| std::iter::repeat_n(t, c as usize))
        .collect()
}

fn count_row(tokens: &[String], vocab: &Vocabulary) -> Vec<(u32, u32)> {
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for t in tokens {
        if let Some(i) = vocab.index_of(t) {
            *counts.entry(i as u32).or_default() += 1;
        }
    }
    counts.into_iter().collect()
}

pub fn bow_counts(corpus: &Corpus, vocab: &Vocabulary) -> BowMatrix {
    BowMatrix {
        n_terms: vocab.len(),
        rows: corpus
            .docs()
            .iter()
            .map(|d| count_row(&d.tokens, vocab))
            .collect(),
    }
}

/// Raw-count tf times smooth idf, L2-normalized per non-empty row.
pub fn tfidf_features(corpus: &Corpus, vocab: &Vocabulary) -> FeatureMatrix {
    let rows = corpus
        .docs()
        .iter()
        .map(|d| tfidf_row(&count_row(&d.tokens, vocab), vocab))
        .collect();
    FeatureMatrix {
        cols: vocab.len(),
        rows,
    }
}

fn tfidf_row(counts: &[(u32, u32)], vocab: &Vocabulary) -> SparseVec {
    let raw: Vec<(u32, f64)> = counts
        .iter()
        .map(|&(t, c)| (t, c as f64 * vocab.idf(t as usize)))
        .collect();
    let norm = raw.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return SparseVec::zeros(vocab.len());
    }
    SparseVec::from_sorted(vocab.len(), raw.into_iter().map(|(t, v)| (t, v / norm)))
}
