//! Minimal sparse vector used for feature rows.

use serde::{Deserialize, Serialize};

/// A sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from `(index, value)` pairs. Pairs must be sorted by
    /// index with no duplicates; zero values are dropped.
    pub fn from_sorted(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut out = Self::zeros(dim);
        for (i, v) in pairs {
            debug_assert!((i as usize) < dim);
            debug_assert!(out.indices.last().is_none_or(|&last| last < i));
            if v != 0.0 {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_sorted(
            values.len(),
            values.iter().enumerate().map(|(i, &v)| (i as u32, v)),
        )
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&(index as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Dot product against a dense slice of length `dim`.
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    /// `[self | tail]`, with tail indices shifted past `self.dim`.
    pub fn concat_dense(&self, tail: &[f64]) -> SparseVec {
        let offset = self.dim as u32;
        let mut out = self.clone();
        out.dim += tail.len();
        for (j, &v) in tail.iter().enumerate() {
            if v != 0.0 {
                out.indices.push(offset + j as u32);
                out.values.push(v);
            }
        }
        out
    }
}
