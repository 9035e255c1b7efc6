//! Borrowed row-major views and the chunk plans used to traverse them.

use core::ops::Range;

use crate::error::{Error, Result};

/// Rows per chunk unless overridden.
pub const DEFAULT_CHUNK_ROWS: usize = 65_536;

/// Splits `rows` into contiguous ascending blocks of `chunk_rows`; the last
/// block may be short.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPlan {
    chunk_rows: usize,
}

impl Default for ChunkPlan {
    fn default() -> Self {
        Self { chunk_rows: DEFAULT_CHUNK_ROWS }
    }
}

impl ChunkPlan {
    pub fn new(chunk_rows: usize) -> Result<Self> {
        if chunk_rows == 0 {
            return Err(Error::InvalidOption("chunk_rows must be at least 1"));
        }
        Ok(Self { chunk_rows })
    }

    pub fn chunk_rows(&self) -> usize {
        self.chunk_rows
    }

    pub fn count(&self, rows: usize) -> usize {
        rows.div_ceil(self.chunk_rows)
    }

    /// Row range of chunk `index`.
    pub fn range(&self, rows: usize, index: usize) -> Range<usize> {
        let start = index * self.chunk_rows;
        debug_assert!(start < rows || rows == 0);
        start..(start + self.chunk_rows).min(rows)
    }

    pub fn ranges(&self, rows: usize) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.count(rows)).map(move |i| self.range(rows, i))
    }
}

/// A dense row-major matrix over borrowed storage. Element `(i, j)` lives at
/// `data[i * cols + j]`.
#[derive(Debug, Clone, Copy)]
pub struct MatrixView<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
}

impl<'a> MatrixView<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Shape("cols must be at least 1"));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Shape("buffer length is not rows * cols"));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }

    /// # Panics
    /// If `i >= rows` or `j >= cols`.
    #[inline]
    pub fn element(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of range for {}x{}", self.rows, self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (i < self.rows && j < self.cols).then(|| self.data[i * self.cols + j])
    }

    /// # Panics
    /// If `i >= rows`.
    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        assert!(i < self.rows, "row {i} out of range for {} rows", self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> core::slice::ChunksExact<'a, f64> {
        self.data.chunks_exact(self.cols)
    }

    /// Rows `range` as their own view.
    pub fn slice_rows(&self, range: Range<usize>) -> MatrixView<'a> {
        assert!(range.start <= range.end && range.end <= self.rows, "row range out of bounds");
        MatrixView {
            data: &self.data[range.start * self.cols..range.end * self.cols],
            rows: range.end - range.start,
            cols: self.cols,
        }
    }

    /// The first `rows` rows.
    pub fn prefix(&self, rows: usize) -> MatrixView<'a> {
        self.slice_rows(0..rows)
    }

    /// Chunk `index` of `plan` as `(row_offset, block)`.
    pub fn chunk(&self, plan: ChunkPlan, index: usize) -> (usize, MatrixView<'a>) {
        let range = plan.range(self.rows, index);
        (range.start, self.slice_rows(range))
    }

    pub fn chunks(&self, plan: ChunkPlan) -> Chunks<'a> {
        Chunks { view: *self, plan, next: 0, count: plan.count(self.rows) }
    }
}

/// Ascending `(row_offset, block)` pairs covering every row once.
#[derive(Debug, Clone)]
pub struct Chunks<'a> {
    view: MatrixView<'a>,
    plan: ChunkPlan,
    next: usize,
    count: usize,
}

impl<'a> Iterator for Chunks<'a> {
    type Item = (usize, MatrixView<'a>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next == self.count {
            return None;
        }
        let item = self.view.chunk(self.plan, self.next);
        self.next += 1;
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Chunks<'_> {}
