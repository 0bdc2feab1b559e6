use serde::{Deserialize, Serialize};

use super::{Condition, Session, SessionError};
use crate::active_learning::dominant_topic;
use crate::corpus::{tokenize_spans, TokenSpan};

const SNIPPET_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocSummary {
    pub doc_id: String,
    pub snippet: String,
    pub label: Option<String>,
    pub skipped: bool,
    pub recommended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicGroup {
    pub topic: usize,
    pub keywords: Vec<String>,
    pub documents: Vec<DocSummary>,
}

/// Topic groups for topic conditions, a flat list for `none`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overview {
    pub condition: Condition,
    pub recommended_doc: Option<String>,
    pub groups: Vec<TopicGroup>,
    pub documents: Vec<DocSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicWeight {
    pub topic: usize,
    pub weight: f64,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentDetail {
    pub doc_id: String,
    pub text: String,
    pub label: Option<String>,
    pub skipped: bool,
    pub recommended: bool,
    pub tokens: Vec<TokenSpan>,
    /// Parallel to `tokens`; absent for the `none` condition.
    pub highlight: Option<Vec<bool>>,
    pub topics: Option<Vec<TopicWeight>>,
    pub suggestions: Vec<Suggestion>,
}

fn snippet(text: &str) -> String {
    match text.char_indices().nth(SNIPPET_CHARS) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_string(),
    }
}

impl Session {
    fn summary(&self, d: usize) -> DocSummary {
        let doc = &self.data.corpus.docs()[d];
        DocSummary {
            doc_id: doc.id.clone(),
            snippet: snippet(&doc.raw_text),
            label: self.buffer.label_of(&doc.id).map(str::to_string),
            skipped: self.skipped.contains(&doc.id),
            recommended: self.recommended.as_deref() == Some(doc.id.as_str()),
        }
    }

    pub fn get_overview(&self) -> Overview {
        let n = self.data.corpus.len();
        let rec = self
            .recommended
            .as_deref()
            .and_then(|id| self.data.corpus.index_of(id));
        let pinned = |members: &mut Vec<usize>| {
            if let Some(r) = rec {
                if let Some(pos) = members.iter().position(|&d| d == r) {
                    members.remove(pos);
                    members.insert(0, r);
                }
            }
        };
        let Some(model) = self.topics.as_deref() else {
            let mut order: Vec<usize> = (0..n).collect();
            pinned(&mut order);
            return Overview {
                condition: self.condition,
                recommended_doc: self.recommended.clone(),
                groups: Vec::new(),
                documents: order.into_iter().map(|d| self.summary(d)).collect(),
            };
        };
        let mut members = vec![Vec::new(); model.k];
        for (d, theta) in model.theta.iter().enumerate() {
            members[dominant_topic(theta).0].push(d);
        }
        let mut topic_order: Vec<usize> = (0..model.k).collect();
        if let Some(r) = rec {
            let t = dominant_topic(&model.theta[r]).0;
            topic_order.retain(|&x| x != t);
            topic_order.insert(0, t);
        }
        let n_keywords = self.config.keywords_per_topic;
        let groups = topic_order
            .into_iter()
            .map(|t| {
                let mut docs = std::mem::take(&mut members[t]);
                pinned(&mut docs);
                TopicGroup {
                    topic: t,
                    keywords: model.keywords[t].iter().take(n_keywords).cloned().collect(),
                    documents: docs.into_iter().map(|d| self.summary(d)).collect(),
                }
            })
            .collect();
        Overview {
            condition: self.condition,
            recommended_doc: self.recommended.clone(),
            groups,
            documents: Vec::new(),
        }
    }

    /// Current labels ranked by classifier probability for document `d`;
    /// ties keep label creation order. Empty before the classifier is fit.
    pub(super) fn suggestions_for(&self, d: usize) -> Vec<Suggestion> {
        let Ok(p) = self.classifier.predict_proba(&self.features[d]) else {
            return Vec::new();
        };
        let mut ranked: Vec<Suggestion> = self
            .classifier
            .labels()
            .iter()
            .zip(p)
            .map(|(label, probability)| Suggestion {
                label: label.clone(),
                probability,
            })
            .collect();
        ranked.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        ranked.truncate(self.config.suggestions);
        ranked
    }

    pub fn get_document_detail(&self, doc_id: &str) -> Result<DocumentDetail, SessionError> {
        let d = self.doc_index(doc_id)?;
        let doc = &self.data.corpus.docs()[d];
        let tokens = tokenize_spans(&doc.raw_text);
        let (highlight, topics) = match self.topics.as_deref() {
            None => (None, None),
            Some(model) => {
                let theta = &model.theta[d];
                let mut order: Vec<usize> = (0..model.k).collect();
                order.sort_by(|&a, &b| theta[b].total_cmp(&theta[a]));
                let n_keywords = self.config.keywords_per_topic;
                let topics = order
                    .iter()
                    .take(self.config.detail_topics)
                    .map(|&t| TopicWeight {
                        topic: t,
                        weight: theta[t],
                        keywords: model.keywords[t].iter().take(n_keywords).cloned().collect(),
                    })
                    .collect();
                let primary = dominant_topic(theta).0;
                let mask = tokens
                    .iter()
                    .map(|tok| {
                        let w = self.data.vocab.index_of(&tok.text);
                        match (model.phi.as_ref(), w) {
                            (Some(phi), Some(w)) => phi[primary][w] > self.config.highlight_threshold,
                            _ => false,
                        }
                    })
                    .collect();
                (Some(mask), Some(topics))
            }
        };
        Ok(DocumentDetail {
            doc_id: doc.id.clone(),
            text: doc.raw_text.clone(),
            label: self.buffer.label_of(&doc.id).map(str::to_string),
            skipped: self.skipped.contains(&doc.id),
            recommended: self.recommended.as_deref() == Some(doc.id.as_str()),
            tokens,
            highlight,
            topics,
            suggestions: self.suggestions_for(d),
        })
    }
}
