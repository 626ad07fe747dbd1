//! Dense row-major feature matrix with a sparse view of binary columns.

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeVector, Example};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    binary: Vec<bool>,
    // CSR list of binary columns equal to 1, per row
    active_ptr: Vec<usize>,
    active_idx: Vec<u32>,
    // nonzero (col, value) pairs of every column, per row
    nz_ptr: Vec<usize>,
    nz: Vec<(u32, f64)>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(Error::Config(format!(
                    "row {i} has {} columns, expected {n_cols}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("row {i} has a non-finite value")));
            }
            values.extend_from_slice(r);
        }
        Ok(Self::from_values(rows.len(), n_cols, values))
    }

    fn from_values(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Self {
        let binary: Vec<bool> = (0..n_cols)
            .map(|j| (0..n_rows).all(|i| matches!(values[i * n_cols + j], v if v == 0.0 || v == 1.0)))
            .collect();
        let mut active_ptr = Vec::with_capacity(n_rows + 1);
        let mut active_idx = Vec::new();
        let mut nz_ptr = Vec::with_capacity(n_rows + 1);
        let mut nz = Vec::new();
        active_ptr.push(0);
        nz_ptr.push(0);
        for i in 0..n_rows {
            for j in 0..n_cols {
                let v = values[i * n_cols + j];
                if v != 0.0 {
                    nz.push((j as u32, v));
                    if binary[j] {
                        active_idx.push(j as u32);
                    }
                }
            }
            active_ptr.push(active_idx.len());
            nz_ptr.push(nz.len());
        }
        Self {
            n_rows,
            n_cols,
            values,
            binary,
            active_ptr,
            active_idx,
            nz_ptr,
            nz,
        }
    }

    pub fn from_vectors<'a>(vectors: impl IntoIterator<Item = &'a AttributeVector>) -> Self {
        let mut n_rows = 0;
        let mut n_cols = None;
        let mut values = Vec::new();
        for v in vectors {
            n_rows += 1;
            let cols = *n_cols.get_or_insert(v.len());
            assert_eq!(cols, v.len(), "attribute vectors of unequal length");
            values.extend(v.bits().iter().map(|&b| b as f64));
        }
        Self::from_values(n_rows, n_cols.unwrap_or(0), values)
    }

    pub fn from_examples(examples: &[Example]) -> Self {
        Self::from_vectors(examples.iter().map(|e| &e.attributes))
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn is_binary(&self, j: usize) -> bool {
        self.binary[j]
    }

    /// Binary columns set to 1 in row `i`.
    pub fn active(&self, i: usize) -> &[u32] {
        &self.active_idx[self.active_ptr[i]..self.active_ptr[i + 1]]
    }

    /// Nonzero entries of row `i`.
    pub fn nonzeros(&self, i: usize) -> &[(u32, f64)] {
        &self.nz[self.nz_ptr[i]..self.nz_ptr[i + 1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_binary_columns_and_sparse_rows() {
        let m = FeatureMatrix::from_rows(&[vec![0.0, 1.0, 2.5], vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(m.is_binary(0) && m.is_binary(1) && !m.is_binary(2));
        assert_eq!(m.active(0), &[1]);
        assert_eq!(m.active(1), &[0]);
        assert_eq!(m.nonzeros(0), &[(1, 1.0), (2, 2.5)]);
        assert!(FeatureMatrix::from_rows(&[vec![0.0], vec![0.0, 1.0]]).is_err());
    }
}
