//! Per-round context: the binary client × item interaction matrix and its
//! top-`d` singular values.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};

/// Sparse binary matrix; `(u, i)` present means client `u` uploaded item `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    rows: usize,
    cols: usize,
    entries: BTreeSet<(usize, usize)>,
}

impl InteractionMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: BTreeSet::new(),
        }
    }

    pub fn from_pairs(
        rows: usize,
        cols: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut m = Self::new(rows, cols);
        for (u, i) in pairs {
            m.insert(u, i)?;
        }
        Ok(m)
    }

    /// Returns whether the entry was newly set.
    pub fn insert(&mut self, u: usize, i: usize) -> Result<bool> {
        if u >= self.rows || i >= self.cols {
            return precondition(format!(
                "entry ({u}, {i}) outside {}x{} matrix",
                self.rows, self.cols
            ));
        }
        Ok(self.entries.insert((u, i)))
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.entries.contains(&(u, i))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().copied()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(u, i) in &self.entries {
            m[(u, i)] = 1.0;
        }
        m
    }
}

/// Top singular values in descending order, zero-padded to a fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(Vec<f64>);

impl ContextVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Reduces `matrix` to its `d` largest singular values.
///
/// With `normalize` set, values are divided by `sqrt(max(1, nnz))` so that the
/// squared context sums to at most one regardless of data volume.
pub fn reduce(matrix: &InteractionMatrix, d: usize, normalize: bool) -> Result<ContextVector> {
    if d == 0 {
        return precondition("context dimension must be at least 1");
    }
    let mut out = vec![0.0; d];
    if matrix.nnz() == 0 {
        return Ok(ContextVector(out));
    }
    let mut sv: Vec<f64> = matrix.to_dense().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let scale = if normalize {
        (matrix.nnz().max(1) as f64).sqrt()
    } else {
        1.0
    };
    for (slot, s) in out.iter_mut().zip(sv) {
        *slot = s.max(0.0) / scale;
    }
    Ok(ContextVector(out))
}
