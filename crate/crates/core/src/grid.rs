use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Dense `T x N` grid (timestamps by assets), row-major, with explicit missing
/// entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Grid<S> {
    rows: usize,
    cols: usize,
    data: Vec<Option<S>>,
}

impl<S: Scalar> Grid<S> {
    pub fn missing(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![None; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self {
            rows,
            cols,
            data: vec![Some(value); rows * cols],
        }
    }

    /// Builds a grid from row-major cells. Panics if the length is not `rows * cols`.
    pub fn from_cells(rows: usize, cols: usize, data: Vec<Option<S>>) -> Self {
        assert_eq!(data.len(), rows * cols, "grid shape mismatch");
        Self { rows, cols, data }
    }

    /// Fully-defined grid from nested rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r.iter().copied().map(Some));
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> Option<S> {
        self.data[t * self.cols + i]
    }

    #[inline]
    pub fn set(&mut self, t: usize, i: usize, v: Option<S>) {
        self.data[t * self.cols + i] = v;
    }

    pub fn row(&self, t: usize) -> &[Option<S>] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [Option<S>] {
        &mut self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn column(&self, i: usize) -> Vec<Option<S>> {
        (0..self.rows).map(|t| self.get(t, i)).collect()
    }

    pub fn set_column(&mut self, i: usize, values: &[Option<S>]) {
        for (t, v) in values.iter().enumerate() {
            self.set(t, i, *v);
        }
    }

    pub fn cells(&self) -> &[Option<S>] {
        &self.data
    }

    pub fn defined_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_some()).count()
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(S) -> Option<S>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.and_then(&f)).collect(),
        }
    }
}
