use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use super::{ModelSource, TopicModel, TopicModelError};
use crate::corpus::BowMatrix;

/// Reads a `doc_id,t0,...,t{K-1}` CSV into `(doc_id, row)` pairs.
pub fn read_theta_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>, TopicModelError> {
    let malformed = |message: String| TopicModelError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let k = header.len().saturating_sub(1);
    let expected = std::iter::once("doc_id".to_string()).chain((0..k).map(|t| format!("t{t}")));
    if k == 0 || !header.iter().eq(expected.collect::<Vec<_>>().iter().map(String::as_str)) {
        return Err(malformed(format!(
            "header must be doc_id,t0,...,t{{K-1}}, got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let values = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| malformed(format!("row {}: {e}", i + 1)))?;
        if values.len() != k {
            return Err(malformed(format!("row {} has {} columns", i + 1, values.len())));
        }
        rows.push((record[0].to_string(), values));
    }
    Ok(rows)
}

/// Reads a JSON array of keyword arrays.
pub fn read_keywords(path: &Path) -> Result<Vec<Vec<String>>, TopicModelError> {
    let file = BufReader::new(File::open(path)?);
    serde_json::from_reader(file).map_err(|e| TopicModelError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Builds an imported model whose theta rows follow `doc_ids` order.
/// Rows are renormalized to sum to one; phi is left empty.
pub fn import_external_topics(
    theta_path: &Path,
    keywords_path: &Path,
    doc_ids: &[&str],
) -> Result<TopicModel, TopicModelError> {
    let rows = read_theta_csv(theta_path)?;
    let keywords = read_keywords(keywords_path)?;
    if rows.len() != doc_ids.len() {
        return Err(TopicModelError::RowCountMismatch {
            expected: doc_ids.len(),
            actual: rows.len(),
        });
    }
    let k = rows[0].1.len();
    if keywords.len() != k {
        return Err(TopicModelError::Malformed {
            path: keywords_path.to_path_buf(),
            message: format!("expected {k} keyword lists, got {}", keywords.len()),
        });
    }
    let by_id: HashMap<&str, usize> = rows
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let theta = doc_ids
        .iter()
        .map(|id| {
            let i = *by_id
                .get(id)
                .ok_or_else(|| TopicModelError::MissingDocument(id.to_string()))?;
            normalize_row(&rows[i].1, i)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TopicModel {
        k,
        source: ModelSource::Imported,
        alpha: 0.0,
        beta: 0.0,
        seed: 0,
        phi: None,
        theta,
        keywords,
        assignments: None,
    })
}

fn normalize_row(row: &[f64], index: usize) -> Result<Vec<f64>, TopicModelError> {
    if row.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(TopicModelError::NegativeEntry { row: index });
    }
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return Err(TopicModelError::ZeroRow { row: index });
    }
    Ok(row.iter().map(|v| v / total).collect())
}

/// Topic-word distributions implied by `theta` and the corpus counts:
/// `phi_kw ∝ sum_d theta_dk * n_dw`. Topics with no mass come out uniform.
pub fn estimate_phi(theta: &[Vec<f64>], bow: &BowMatrix) -> Vec<Vec<f64>> {
    let k = theta.first().map_or(0, Vec::len);
    let mut phi = vec![vec![0.0; bow.n_terms]; k];
    for (row, counts) in theta.iter().zip(&bow.rows) {
        for &(w, c) in counts {
            for (t, &p) in row.iter().enumerate() {
                phi[t][w as usize] += p * c as f64;
            }
        }
    }
    for row in &mut phi {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            row.fill(1.0 / bow.n_terms as f64);
        }
    }
    phi
}
