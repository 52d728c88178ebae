//! Compressed-row sparse operators and a triplet builder.

use std::io::Write;

use crate::{Error, Result};

/// Accumulates `(row, col, value)` contributions; duplicates are summed.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: Vec::new() }
    }

    pub fn with_capacity(rows: usize, cols: usize, capacity: usize) -> Self {
        Self { rows, cols, entries: Vec::with_capacity(capacity) }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.entries.push((row, col, value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorts, sums duplicates and drops entries whose magnitude is at most
    /// `1e-15` times the largest magnitude in their row.
    pub fn build(mut self) -> SparseOperator {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for (r, c, v) in self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut row_max = vec![0.0f64; self.rows];
        for &(r, _, v) in &merged {
            row_max[r] = row_max[r].max(v.abs());
        }
        let mut offsets = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(merged.len());
        let mut values = Vec::with_capacity(merged.len());
        for &(r, c, v) in &merged {
            if v != 0.0 && v.abs() > 1e-15 * row_max[r] {
                offsets[r + 1] += 1;
                indices.push(c);
                values.push(v);
            }
        }
        for r in 0..self.rows {
            offsets[r + 1] += offsets[r];
        }
        SparseOperator { rows: self.rows, cols: self.cols, offsets, indices, values }
    }
}

/// Sparse matrix in compressed-row storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, offsets: vec![0; rows + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Self {
        let mut b = TripletBuilder::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = data[r * cols + c];
                if v != 0.0 {
                    b.push(r, c, v);
                }
            }
        }
        b.build()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[r]..self.offsets[r + 1];
        self.indices[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.rows).map(|r| self.row_nnz(r)).max().unwrap_or(0)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.offsets[r]..self.offsets[r + 1];
        match self.indices[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.offsets[r]..self.offsets[r + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *out = s;
        }
    }

    /// `y = A^T x`.
    pub fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            for k in self.offsets[r]..self.offsets[r + 1] {
                y[self.indices[k]] += self.values[k] * xr;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.apply(x, &mut y);
        y
    }

    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        self.apply_transpose(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            for k in self.offsets[r]..self.offsets[r + 1] {
                let c = self.indices[k];
                indices[next[c]] = r;
                values[next[c]] = self.values[k];
                next[c] += 1;
            }
        }
        Self { rows: self.cols, cols: self.rows, offsets: counts, indices, values }
    }

    /// Multiplies every column `j` by `d[j]`.
    pub fn scale_columns(&self, d: &[f64]) -> Self {
        let mut out = self.clone();
        for (v, &c) in out.values.iter_mut().zip(&out.indices) {
            *v *= d[c];
        }
        out
    }

    /// Sparse product `A B`.
    pub fn matmul(&self, other: &SparseOperator) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut b = TripletBuilder::new(self.rows, other.cols);
        let mut acc = vec![0.0; other.cols];
        let mut marker = vec![usize::MAX; other.cols];
        let mut touched = Vec::new();
        for r in 0..self.rows {
            touched.clear();
            for (k, a) in self.row(r) {
                for (c, v) in other.row(k) {
                    if marker[c] != r {
                        marker[c] = r;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * v;
                }
            }
            for &c in &touched {
                b.push(r, c, acc[c]);
            }
        }
        Ok(b.build())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                d[r * self.cols + c] = v;
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise difference `max |A - B|`.
    pub fn max_abs_diff(&self, other: &SparseOperator) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut diff = 0.0f64;
        for r in 0..self.rows {
            let (mut a, mut b) = (self.row(r).peekable(), other.row(r).peekable());
            loop {
                match (a.peek().copied(), b.peek().copied()) {
                    (Some((ca, va)), Some((cb, vb))) if ca == cb => {
                        diff = diff.max((va - vb).abs());
                        a.next();
                        b.next();
                    }
                    (Some((ca, va)), Some((cb, _))) if ca < cb => {
                        diff = diff.max(va.abs());
                        a.next();
                    }
                    (Some(_), Some((_, vb))) => {
                        diff = diff.max(vb.abs());
                        b.next();
                    }
                    (Some((_, va)), None) => {
                        diff = diff.max(va.abs());
                        a.next();
                    }
                    (None, Some((_, vb))) => {
                        diff = diff.max(vb.abs());
                        b.next();
                    }
                    (None, None) => break,
                }
            }
        }
        Ok(diff)
    }

    /// Matrix-market style dump: header `%%sparse rows cols nnz`, then
    /// 1-based `row col value` lines.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "%%sparse {} {} {}", self.rows, self.cols, self.nnz())?;
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }

    /// Estimated heap footprint in bytes.
    pub fn memory_bytes(&self) -> usize {
        self.offsets.len() * std::mem::size_of::<usize>()
            + self.indices.len() * std::mem::size_of::<usize>()
            + self.values.len() * std::mem::size_of::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SparseOperator {
        let mut b = TripletBuilder::new(2, 3);
        b.push(0, 0, 1.0);
        b.push(0, 2, 2.0);
        b.push(1, 1, 3.0);
        b.push(0, 0, 0.5);
        b.push(1, 2, 1e-20);
        b.build()
    }

    #[test]
    fn builder_sums_duplicates_and_drops_tiny_entries() {
        let a = sample();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 0), 1.5);
        assert_eq!(a.get(1, 2), 0.0);
        assert_eq!(a.to_dense(), vec![1.5, 0.0, 2.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn products() {
        let a = sample();
        assert_eq!(a.mul_vec(&[1.0, 2.0, 3.0]), vec![7.5, 6.0]);
        assert_eq!(a.mul_transpose_vec(&[1.0, 1.0]), vec![1.5, 3.0, 2.0]);
        let at = a.transpose();
        assert_eq!(at.rows(), 3);
        assert_eq!(at.get(2, 0), 2.0);
        let aat = a.matmul(&at).unwrap();
        assert_eq!(aat.to_dense(), vec![6.25, 0.0, 0.0, 9.0]);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn matrix_market_dump() {
        let mut buf = Vec::new();
        sample().write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("%%sparse 2 3 3"));
        assert!(lines.next().unwrap().starts_with("1 1 1.5"));
        assert_eq!(lines.count(), 2);
    }

    proptest! {
        #[test]
        fn transpose_matches_dense(data in proptest::collection::vec(-3i32..3, 12)) {
            let d: Vec<f64> = data.iter().map(|&v| v as f64).collect();
            let a = SparseOperator::from_dense(3, 4, &d);
            let t = a.transpose();
            for r in 0..3 {
                for c in 0..4 {
                    prop_assert_eq!(a.get(r, c), d[r * 4 + c]);
                    prop_assert_eq!(t.get(c, r), d[r * 4 + c]);
                }
            }
            prop_assert_eq!(a.max_abs_diff(&t.transpose()).unwrap(), 0.0);
            let x = [1.0, -2.0, 0.5];
            let y1 = a.mul_transpose_vec(&x);
            let y2 = t.mul_vec(&x);
            prop_assert_eq!(y1, y2);
        }
    }
}
