//! Block-partitioned sparse operator.
//!
//! The matrix is stored once in compressed-row form. A [`BlockPartition`]
//! splits rows into `M` contiguous ranges `I_i` and columns into `N`
//! contiguous ranges `J_j`; for every row the operator precomputes where each
//! column block starts inside that row's entries, so a block `A[I_i, J_j]` is a
//! view and never a copy.
//!
//! Every product is charged to an atomic tally counted in nonzeros touched.
//! [`BlockOperator::matvec_units`] reports that tally divided by `nnz(A)`, so a
//! full sweep over all blocks costs exactly `1.0`.
//!
//! Summation order is fixed: within a block entries are added in ascending
//! column order, partial block results are combined in ascending block index.
//! A full product therefore reproduces the sum of its block products bit for
//! bit.

use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Row ranges `I_i` and column ranges `J_j` splitting a matrix into blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    rows: Vec<Range<usize>>,
    cols: Vec<Range<usize>>,
}

fn split_even(len: usize, parts: usize) -> Vec<Range<usize>> {
    let base = len / parts;
    let extra = len % parts;
    let mut start = 0;
    (0..parts)
        .map(|k| {
            let size = base + usize::from(k < extra);
            let range = start..start + size;
            start += size;
            range
        })
        .collect()
}

fn check_cover(ranges: &[Range<usize>], len: usize, what: &str) -> Result<()> {
    if ranges.is_empty() {
        return Err(Error::InvalidPartition(format!("no {what} blocks")));
    }
    let mut next = 0;
    for r in ranges {
        if r.start != next || r.end <= r.start {
            return Err(Error::InvalidPartition(format!(
                "{what} ranges must be non-empty, contiguous and ordered (got {r:?} at {next})"
            )));
        }
        next = r.end;
    }
    if next != len {
        return Err(Error::InvalidPartition(format!(
            "{what} ranges cover 0..{next}, expected 0..{len}"
        )));
    }
    Ok(())
}

impl BlockPartition {
    /// Builds a partition from explicit ranges, checking that each list is an
    /// ordered disjoint cover of `0..nrows` / `0..ncols`.
    pub fn new(
        rows: Vec<Range<usize>>,
        cols: Vec<Range<usize>>,
        nrows: usize,
        ncols: usize,
    ) -> Result<Self> {
        check_cover(&rows, nrows, "row")?;
        check_cover(&cols, ncols, "column")?;
        Ok(Self { rows, cols })
    }

    /// Contiguous near-equal split; the first `len % parts` blocks are one
    /// longer than the rest.
    pub fn uniform(nrows: usize, ncols: usize, row_blocks: usize, col_blocks: usize) -> Result<Self> {
        if row_blocks == 0 || col_blocks == 0 {
            return Err(Error::InvalidPartition("block counts must be at least 1".into()));
        }
        if row_blocks > nrows {
            return Err(Error::InvalidPartition(format!(
                "{row_blocks} row blocks for {nrows} rows"
            )));
        }
        if col_blocks > ncols {
            return Err(Error::InvalidPartition(format!(
                "{col_blocks} column blocks for {ncols} columns"
            )));
        }
        Ok(Self {
            rows: split_even(nrows, row_blocks),
            cols: split_even(ncols, col_blocks),
        })
    }

    pub fn row_blocks(&self) -> usize {
        self.rows.len()
    }

    pub fn col_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.rows[i].clone()
    }

    pub fn col_range(&self, j: usize) -> Range<usize> {
        self.cols[j].clone()
    }

    pub fn row_ranges(&self) -> &[Range<usize>] {
        &self.rows
    }

    pub fn col_ranges(&self) -> &[Range<usize>] {
        &self.cols
    }

    pub fn nrows(&self) -> usize {
        self.rows.last().map_or(0, |r| r.end)
    }

    pub fn ncols(&self) -> usize {
        self.cols.last().map_or(0, |r| r.end)
    }

    /// Index of the column block containing column `col`.
    pub fn col_block_of(&self, col: usize) -> usize {
        self.cols.partition_point(|r| r.end <= col)
    }

    /// Index of the row block containing row `row`.
    pub fn row_block_of(&self, row: usize) -> usize {
        self.rows.partition_point(|r| r.end <= row)
    }
}

/// `make_partition(r, c, M, N)`: contiguous near-equal row and column blocks.
pub fn make_partition(nrows: usize, ncols: usize, row_blocks: usize, col_blocks: usize) -> Result<BlockPartition> {
    BlockPartition::uniform(nrows, ncols, row_blocks, col_blocks)
}

/// Compressed-row sparse matrix with column indices sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are
    /// summed in input order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::Shape(format!(
                    "entry ({r}, {c}) outside a {nrows}x{ncols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite entry at ({r}, {c})")));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (r, c, v) = triplets[k];
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from a dense row-major array, keeping nonzero entries.
    pub fn from_dense(nrows: usize, ncols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::Shape(format!(
                "dense data has {} values, expected {}",
                data.len(),
                nrows * ncols
            )));
        }
        let triplets: Vec<_> = data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, &v)| (k / ncols, k % ncols, v))
            .collect();
        Self::from_triplets(nrows, ncols, &triplets)
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|k| (k, k, 1.0)).collect();
        Self::from_triplets(n, n, &triplets).expect("identity is well formed")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Dense row-major copy. Intended for small test problems.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows * self.ncols];
        for (r, c, v) in self.triplets() {
            out[r * self.ncols + c] = v;
        }
        out
    }

    /// Writes the textual triplet format: a `rows cols nnz` header followed by
    /// one `row col value` line per entry, 0-based, shortest round-trip values.
    pub fn write_triplet<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v:?}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_triplet<R: Read>(reader: R) -> Result<Self> {
        let reader = BufReader::new(reader);
        let mut lines = reader.lines();
        let header = loop {
            match lines.next() {
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => return Err(Error::Parse("empty matrix file".into())),
            }
        };
        let dims = parse_fields::<usize>(&header, 3)?;
        let (nrows, ncols, nnz) = (dims[0], dims[1], dims[2]);
        let mut triplets = Vec::with_capacity(nnz);
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = || it.next().ok_or_else(|| Error::Parse(format!("short line `{line}`")));
            let r: usize = next()?.parse().map_err(|e| Error::Parse(format!("`{line}`: {e}")))?;
            let c: usize = next()?.parse().map_err(|e| Error::Parse(format!("`{line}`: {e}")))?;
            let v: f64 = next()?.parse().map_err(|e| Error::Parse(format!("`{line}`: {e}")))?;
            triplets.push((r, c, v));
        }
        if triplets.len() != nnz {
            return Err(Error::Parse(format!(
                "header declares {nnz} entries, found {}",
                triplets.len()
            )));
        }
        Self::from_triplets(nrows, ncols, &triplets)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_triplet(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_triplet(std::fs::File::open(path)?)
    }
}

/// Writes a vector as a length line followed by one value per line.
pub fn write_vector<W: Write>(v: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "{}", v.len())?;
    for x in v {
        writeln!(w, "{x:?}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vector<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut text = String::new();
    BufReader::new(reader).read_to_string(&mut text)?;
    let mut tokens = text.split_whitespace();
    let len: usize = tokens
        .next()
        .ok_or_else(|| Error::Parse("empty vector file".into()))?
        .parse()
        .map_err(|e| Error::Parse(format!("vector length: {e}")))?;
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("`{t}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != len {
        return Err(Error::Parse(format!("header declares {len} values, found {}", values.len())));
    }
    Ok(values)
}

pub fn save_vector(v: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_vector(v, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_vector(std::fs::File::open(path)?)
}

pub(crate) fn parse_fields<T: std::str::FromStr>(line: &str, count: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let fields: Vec<T> = line
        .split_whitespace()
        .map(|f| f.parse::<T>().map_err(|e| Error::Parse(format!("`{line}`: {e}"))))
        .collect::<Result<_>>()?;
    if fields.len() != count {
        return Err(Error::Parse(format!("expected {count} fields in `{line}`")));
    }
    Ok(fields)
}

/// Sparse matrix with block views and an instrumented product counter.
///
/// Immutable apart from the counter; share it across workers by reference.
#[derive(Debug)]
pub struct BlockOperator {
    matrix: Arc<SparseMatrix>,
    partition: BlockPartition,
    /// Per row, `N + 1` absolute offsets into the entry arrays delimiting the
    /// column blocks inside that row.
    block_ptr: Vec<usize>,
    /// `nnz` of each block, row-block-major.
    block_nnz: Vec<u64>,
    tally: AtomicU64,
}

impl Clone for BlockOperator {
    fn clone(&self) -> Self {
        Self {
            matrix: Arc::clone(&self.matrix),
            partition: self.partition.clone(),
            block_ptr: self.block_ptr.clone(),
            block_nnz: self.block_nnz.clone(),
            tally: AtomicU64::new(self.tally.load(Ordering::Relaxed)),
        }
    }
}

impl BlockOperator {
    pub fn new(matrix: SparseMatrix, partition: BlockPartition) -> Result<Self> {
        Self::from_shared(Arc::new(matrix), partition)
    }

    /// The unpartitioned operator (a single block).
    pub fn whole(matrix: SparseMatrix) -> Result<Self> {
        let partition = BlockPartition::uniform(matrix.nrows(), matrix.ncols(), 1, 1)?;
        Self::new(matrix, partition)
    }

    fn from_shared(matrix: Arc<SparseMatrix>, partition: BlockPartition) -> Result<Self> {
        if partition.nrows() != matrix.nrows() || partition.ncols() != matrix.ncols() {
            return Err(Error::Shape(format!(
                "partition is {}x{}, matrix is {}x{}",
                partition.nrows(),
                partition.ncols(),
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let n = partition.col_blocks();
        let mut block_ptr = Vec::with_capacity(matrix.nrows() * (n + 1));
        let mut block_nnz = vec![0u64; partition.row_blocks() * n];
        for row in 0..matrix.nrows() {
            let base = matrix.row_ptr[row];
            let (cols, _) = matrix.row(row);
            let i = partition.row_block_of(row);
            for (j, range) in partition.col_ranges().iter().enumerate() {
                let start = cols.partition_point(|&c| c < range.start);
                let end = cols.partition_point(|&c| c < range.end);
                block_ptr.push(base + start);
                block_nnz[i * n + j] += (end - start) as u64;
            }
            block_ptr.push(base + cols.len());
        }
        Ok(Self {
            matrix,
            partition,
            block_ptr,
            block_nnz,
            tally: AtomicU64::new(0),
        })
    }

    /// Same matrix under a different partition, with a fresh counter.
    pub fn repartition(&self, partition: BlockPartition) -> Result<Self> {
        Self::from_shared(Arc::clone(&self.matrix), partition)
    }

    /// Same matrix split into `row_blocks x col_blocks` near-equal blocks.
    pub fn with_blocks(&self, row_blocks: usize, col_blocks: usize) -> Result<Self> {
        self.repartition(make_partition(self.nrows(), self.ncols(), row_blocks, col_blocks)?)
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn block_nnz(&self, i: usize, j: usize) -> usize {
        self.block_nnz[i * self.partition.col_blocks() + j] as usize
    }

    /// Accumulated cost in full-matrix product equivalents.
    pub fn matvec_units(&self) -> f64 {
        let nnz = self.nnz();
        if nnz == 0 {
            return 0.0;
        }
        self.tally.load(Ordering::Relaxed) as f64 / nnz as f64
    }

    /// Raw tally in nonzeros touched.
    pub fn matvec_nnz(&self) -> u64 {
        self.tally.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.tally.store(0, Ordering::Relaxed);
    }

    fn charge(&self, nnz: u64) {
        self.tally.fetch_add(nnz, Ordering::Relaxed);
    }

    #[inline]
    fn block_span(&self, row: usize, j: usize) -> Range<usize> {
        let stride = self.partition.col_blocks() + 1;
        self.block_ptr[row * stride + j]..self.block_ptr[row * stride + j + 1]
    }

    fn check_block(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.partition.row_blocks() || j >= self.partition.col_blocks() {
            return Err(Error::Shape(format!(
                "block ({i}, {j}) outside a {}x{} partition",
                self.partition.row_blocks(),
                self.partition.col_blocks()
            )));
        }
        Ok(())
    }

    /// `out = A[I_i, J_j] x_j`, uncharged.
    fn block_forward(&self, i: usize, j: usize, x_j: &[f64], out: &mut [f64]) {
        let rows = self.partition.row_range(i);
        let col0 = self.partition.col_range(j).start;
        for (o, row) in out.iter_mut().zip(rows) {
            let span = self.block_span(row, j);
            let mut acc = 0.0;
            for (&c, &v) in self.matrix.col_idx[span.clone()].iter().zip(&self.matrix.values[span]) {
                acc += v * x_j[c - col0];
            }
            *o = acc;
        }
    }

    /// `out = A[I_i, J_j]^T r_i`, uncharged.
    fn block_adjoint(&self, i: usize, j: usize, r_i: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let rows = self.partition.row_range(i);
        let col0 = self.partition.col_range(j).start;
        for (&rv, row) in r_i.iter().zip(rows) {
            let span = self.block_span(row, j);
            for (&c, &v) in self.matrix.col_idx[span.clone()].iter().zip(&self.matrix.values[span]) {
                out[c - col0] += v * rv;
            }
        }
    }

    /// `z = A[I_i, J_j] x_j` where `x_j` holds the entries of `x` in `J_j`.
    pub fn block_matvec(&self, i: usize, j: usize, x_j: &[f64]) -> Result<Vec<f64>> {
        self.check_block(i, j)?;
        let mut out = vec![0.0; self.partition.row_range(i).len()];
        self.block_matvec_into(i, j, x_j, &mut out)?;
        Ok(out)
    }

    pub fn block_matvec_into(&self, i: usize, j: usize, x_j: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_block(i, j)?;
        let (rows, cols) = (self.partition.row_range(i), self.partition.col_range(j));
        if x_j.len() != cols.len() || out.len() != rows.len() {
            return Err(Error::Shape(format!(
                "block ({i}, {j}) is {}x{}, got input {} and output {}",
                rows.len(),
                cols.len(),
                x_j.len(),
                out.len()
            )));
        }
        self.block_forward(i, j, x_j, out);
        self.charge(self.block_nnz(i, j) as u64);
        Ok(())
    }

    /// `A[I_i, J_j]^T r_i`, without any scaling.
    pub fn block_matvec_transpose(&self, i: usize, j: usize, r_i: &[f64]) -> Result<Vec<f64>> {
        self.check_block(i, j)?;
        let mut out = vec![0.0; self.partition.col_range(j).len()];
        self.block_matvec_transpose_into(i, j, r_i, &mut out)?;
        Ok(out)
    }

    pub fn block_matvec_transpose_into(&self, i: usize, j: usize, r_i: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_block(i, j)?;
        let (rows, cols) = (self.partition.row_range(i), self.partition.col_range(j));
        if r_i.len() != rows.len() || out.len() != cols.len() {
            return Err(Error::Shape(format!(
                "block ({i}, {j}) is {}x{}, got input {} and output {} for the transpose",
                rows.len(),
                cols.len(),
                r_i.len(),
                out.len()
            )));
        }
        self.block_adjoint(i, j, r_i, out);
        self.charge(self.block_nnz(i, j) as u64);
        Ok(())
    }

    fn forward_blocked(&self, x: &[f64], out: &mut [f64]) {
        let mut partial = Vec::new();
        for (i, rows) in self.partition.row_ranges().iter().enumerate() {
            let dst = &mut out[rows.clone()];
            dst.iter_mut().for_each(|v| *v = 0.0);
            partial.resize(rows.len(), 0.0);
            for (j, cols) in self.partition.col_ranges().iter().enumerate() {
                self.block_forward(i, j, &x[cols.clone()], &mut partial);
                for (d, p) in dst.iter_mut().zip(&partial) {
                    *d += p;
                }
            }
        }
    }

    fn adjoint_blocked(&self, r: &[f64], out: &mut [f64]) {
        let mut partial = Vec::new();
        for (j, cols) in self.partition.col_ranges().iter().enumerate() {
            let dst = &mut out[cols.clone()];
            dst.iter_mut().for_each(|v| *v = 0.0);
            partial.resize(cols.len(), 0.0);
            for (i, rows) in self.partition.row_ranges().iter().enumerate() {
                self.block_adjoint(i, j, &r[rows.clone()], &mut partial);
                for (d, p) in dst.iter_mut().zip(&partial) {
                    *d += p;
                }
            }
        }
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::Shape(format!("{what} has length {got}, expected {want}")));
        }
        Ok(())
    }

    /// Full product `A x`, assembled block by block in ascending order.
    /// Charges one unit.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.nrows()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(x.len(), self.ncols(), "input")?;
        self.check_len(out.len(), self.nrows(), "output")?;
        self.forward_blocked(x, out);
        self.charge(self.nnz() as u64);
        Ok(())
    }

    /// Full product `A^T r`. Charges one unit.
    pub fn apply_transpose(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.ncols()];
        self.apply_transpose_into(r, &mut out)?;
        Ok(out)
    }

    pub fn apply_transpose_into(&self, r: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(r.len(), self.nrows(), "input")?;
        self.check_len(out.len(), self.ncols(), "output")?;
        self.adjoint_blocked(r, out);
        self.charge(self.nnz() as u64);
        Ok(())
    }

    /// `A x` without touching the counter. For monitoring code that must not
    /// show up in cost comparisons.
    pub fn apply_uncharged(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len(), self.ncols(), "input")?;
        let mut out = vec![0.0; self.nrows()];
        self.forward_blocked(x, &mut out);
        Ok(out)
    }

    /// `A^T r` without touching the counter.
    pub fn apply_transpose_uncharged(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(r.len(), self.nrows(), "input")?;
        let mut out = vec![0.0; self.ncols()];
        self.adjoint_blocked(r, &mut out);
        Ok(out)
    }
}

/// `r = y - sum_j z^j`, summing the contributions in ascending `j` before
/// subtracting.
pub fn assemble_residual(y: &[f64], z_cache: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; y.len()];
    assemble_residual_into(y, z_cache, &mut out)?;
    Ok(out)
}

pub fn assemble_residual_into(y: &[f64], z_cache: &[Vec<f64>], out: &mut [f64]) -> Result<()> {
    if out.len() != y.len() {
        return Err(Error::Shape(format!(
            "residual buffer has length {}, expected {}",
            out.len(),
            y.len()
        )));
    }
    for (j, z) in z_cache.iter().enumerate() {
        if z.len() != y.len() {
            return Err(Error::Shape(format!(
                "contribution {j} has length {}, expected {}",
                z.len(),
                y.len()
            )));
        }
    }
    for (k, (o, &yk)) in out.iter_mut().zip(y).enumerate() {
        let mut acc = 0.0;
        for z in z_cache {
            acc += z[k];
        }
        *o = yk - acc;
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense(rows: usize, cols: usize, density: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows * cols)
            .map(|_| if rng.random::<f64>() < density { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect()
    }

    fn dense_matvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        (0..rows).map(|r| (0..cols).map(|c| a[r * cols + c] * x[c]).sum()).collect()
    }

    fn dense_matvec_t(a: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
        (0..cols).map(|c| (0..rows).map(|r| a[r * cols + c] * y[r]).sum()).collect()
    }

    #[test]
    fn identity_partition() {
        let p = make_partition(4, 4, 1, 1).unwrap();
        assert_eq!(p.row_ranges(), &[0..4]);
        assert_eq!(p.col_ranges(), &[0..4]);
    }

    #[test]
    fn uneven_partition_sizes() {
        let p = make_partition(10, 8, 4, 4).unwrap();
        let rows: Vec<_> = p.row_ranges().iter().map(|r| r.len()).collect();
        let cols: Vec<_> = p.col_ranges().iter().map(|r| r.len()).collect();
        assert_eq!(rows, vec![3, 3, 2, 2]);
        assert_eq!(cols, vec![2, 2, 2, 2]);
    }

    #[test]
    fn partition_covers_exhaustively() {
        for len in 1..30 {
            for parts in 1..=len {
                let p = make_partition(len, len, parts, parts).unwrap();
                let mut hits = vec![0; len];
                for r in p.row_ranges() {
                    assert!(!r.is_empty());
                    for k in r.clone() {
                        hits[k] += 1;
                    }
                }
                assert!(hits.iter().all(|&h| h == 1), "len {len} parts {parts}");
                let sizes: Vec<_> = p.row_ranges().iter().map(|r| r.len()).collect();
                let (mn, mx) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(mx - mn <= 1);
            }
        }
    }

    #[test]
    fn too_many_blocks_rejected() {
        assert!(matches!(make_partition(4, 4, 5, 1), Err(Error::InvalidPartition(_))));
        assert!(matches!(make_partition(4, 4, 1, 5), Err(Error::InvalidPartition(_))));
        assert!(matches!(make_partition(4, 4, 0, 1), Err(Error::InvalidPartition(_))));
    }

    #[test]
    fn explicit_partition_validation() {
        assert!(BlockPartition::new(vec![0..2, 2..4], vec![0..4], 4, 4).is_ok());
        assert!(BlockPartition::new(vec![0..2, 3..4], vec![0..4], 4, 4).is_err());
        assert!(BlockPartition::new(vec![0..2, 2..2, 2..4], vec![0..4], 4, 4).is_err());
        assert!(BlockPartition::new(vec![0..3], vec![0..4], 4, 4).is_err());
    }

    #[test]
    fn identity_blocks() {
        let op = BlockOperator::new(SparseMatrix::identity(4), make_partition(4, 4, 2, 2).unwrap()).unwrap();
        assert_eq!(op.block_matvec(0, 0, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(op.block_matvec(0, 1, &[7.0, -3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(op.block_matvec_transpose(1, 1, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn scalar_block_transpose() {
        let m = SparseMatrix::from_dense(1, 1, &[2.5]).unwrap();
        let op = BlockOperator::whole(m).unwrap();
        assert_eq!(op.block_matvec_transpose(0, 0, &[4.0]).unwrap(), vec![10.0]);
    }

    #[test]
    fn block_shape_errors() {
        let op = BlockOperator::new(SparseMatrix::identity(4), make_partition(4, 4, 2, 2).unwrap()).unwrap();
        assert!(matches!(op.block_matvec(0, 0, &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(op.block_matvec_transpose(0, 0, &[1.0, 2.0, 3.0]), Err(Error::Shape(_))));
        assert!(matches!(op.block_matvec(2, 0, &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(op.apply(&[1.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn block_rows_match_dense_oracle() {
        let (rows, cols) = (6, 6);
        let a = random_dense(rows, cols, 0.7, 3);
        let op = BlockOperator::new(
            SparseMatrix::from_dense(rows, cols, &a).unwrap(),
            make_partition(rows, cols, 3, 3).unwrap(),
        )
        .unwrap();
        let x: Vec<f64> = (0..cols).map(|k| (k as f64 * 0.37).sin()).collect();
        // Oracle with the same grouping: per row, sum within each column block
        // left to right, then add block partials in ascending block order.
        let p = op.partition().clone();
        for (i, rr) in p.row_ranges().iter().enumerate() {
            let mut sum = vec![0.0; rr.len()];
            for (j, cc) in p.col_ranges().iter().enumerate() {
                let z = op.block_matvec(i, j, &x[cc.clone()]).unwrap();
                for (s, v) in sum.iter_mut().zip(&z) {
                    *s += v;
                }
            }
            for (k, row) in rr.clone().enumerate() {
                let mut grouped = 0.0;
                for cc in p.col_ranges() {
                    let mut part = 0.0;
                    for c in cc.clone() {
                        if a[row * cols + c] != 0.0 {
                            part += a[row * cols + c] * x[c];
                        }
                    }
                    grouped += part;
                }
                assert_eq!(sum[k].to_bits(), grouped.to_bits());
            }
        }
        let full = op.apply(&x).unwrap();
        let dense = dense_matvec(&a, rows, cols, &x);
        for (f, d) in full.iter().zip(&dense) {
            assert!((f - d).abs() < 1e-12);
        }
    }

    #[test]
    fn assembled_transpose_matches_dense() {
        let (rows, cols) = (6, 6);
        let a = random_dense(rows, cols, 0.6, 9);
        let op = BlockOperator::new(
            SparseMatrix::from_dense(rows, cols, &a).unwrap(),
            make_partition(rows, cols, 3, 3).unwrap(),
        )
        .unwrap();
        let r: Vec<f64> = (0..rows).map(|k| (k as f64 * 1.3).cos()).collect();
        let p = op.partition().clone();
        let mut assembled = vec![0.0; cols];
        for (i, rr) in p.row_ranges().iter().enumerate() {
            for (j, cc) in p.col_ranges().iter().enumerate() {
                let g = op.block_matvec_transpose(i, j, &r[rr.clone()]).unwrap();
                for (k, c) in cc.clone().enumerate() {
                    assembled[c] += g[k];
                }
            }
        }
        let dense = dense_matvec_t(&a, rows, cols, &r);
        for (s, d) in assembled.iter().zip(&dense) {
            assert!((s - d).abs() < 1e-12);
        }
        let full = op.apply_transpose(&r).unwrap();
        for (s, d) in full.iter().zip(&dense) {
            assert!((s - d).abs() < 1e-12);
        }
    }

    #[test]
    fn full_sweep_costs_one_unit() {
        let (rows, cols) = (13, 11);
        let a = random_dense(rows, cols, 0.4, 21);
        let op = BlockOperator::new(
            SparseMatrix::from_dense(rows, cols, &a).unwrap(),
            make_partition(rows, cols, 4, 3).unwrap(),
        )
        .unwrap();
        let x = vec![1.0; cols];
        let p = op.partition().clone();
        let total: usize = (0..4).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| op.block_nnz(i, j)).sum();
        assert_eq!(total, op.nnz());
        for i in 0..4 {
            for j in 0..3 {
                op.block_matvec(i, j, &x[p.col_range(j)]).unwrap();
            }
        }
        assert!((op.matvec_units() - 1.0).abs() < 1e-12);
        op.apply_transpose(&vec![1.0; rows]).unwrap();
        assert!((op.matvec_units() - 2.0).abs() < 1e-12);
        op.apply_uncharged(&x).unwrap();
        assert!((op.matvec_units() - 2.0).abs() < 1e-12);
        op.reset_counter();
        assert_eq!(op.matvec_units(), 0.0);
    }

    #[test]
    fn residual_assembly() {
        let y = vec![1.0, -2.0, 3.0];
        assert_eq!(assemble_residual(&y, &[vec![0.0; 3], vec![0.0; 3]]).unwrap(), y);
        assert_eq!(assemble_residual(&y, &[y.clone()]).unwrap(), vec![0.0; 3]);
        assert!(matches!(assemble_residual(&y, &[vec![0.0; 2]]), Err(Error::Shape(_))));
    }

    #[test]
    fn residual_after_full_pass_matches_dense() {
        let (rows, cols) = (9, 7);
        let a = random_dense(rows, cols, 0.5, 5);
        let op = BlockOperator::new(
            SparseMatrix::from_dense(rows, cols, &a).unwrap(),
            make_partition(rows, cols, 3, 2).unwrap(),
        )
        .unwrap();
        let x: Vec<f64> = (0..cols).map(|k| k as f64 - 2.5).collect();
        let y: Vec<f64> = (0..rows).map(|k| (k as f64).sqrt()).collect();
        let p = op.partition().clone();
        let mut z = vec![vec![0.0; rows]; 2];
        for (i, rr) in p.row_ranges().iter().enumerate() {
            for (j, cc) in p.col_ranges().iter().enumerate() {
                let part = op.block_matvec(i, j, &x[cc.clone()]).unwrap();
                z[j][rr.clone()].copy_from_slice(&part);
            }
        }
        let r = assemble_residual(&y, &z).unwrap();
        let ax = dense_matvec(&a, rows, cols, &x);
        for k in 0..rows {
            assert!((r[k] - (y[k] - ax[k])).abs() < 1e-12);
        }
        let exact = op.apply(&x).unwrap();
        for k in 0..rows {
            assert_eq!(r[k].to_bits(), (y[k] - exact[k]).to_bits());
        }
    }

    #[test]
    fn triplet_round_trip_is_exact() {
        let a = random_dense(5, 4, 0.5, 77);
        let m = SparseMatrix::from_dense(5, 4, &a).unwrap();
        let mut buf = Vec::new();
        m.write_triplet(&mut buf).unwrap();
        let back = SparseMatrix::read_triplet(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn triplet_parse_errors() {
        assert!(SparseMatrix::read_triplet("2 2 2\n0 0 1.0\n".as_bytes()).is_err());
        assert!(SparseMatrix::read_triplet("2 2 1\n3 0 1.0\n".as_bytes()).is_err());
        assert!(SparseMatrix::read_triplet("".as_bytes()).is_err());
        assert!(SparseMatrix::read_triplet("2 2 1\n0 0 abc\n".as_bytes()).is_err());
    }

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 2.0), (0, 1, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), vec![0.0, 1.5, 2.0, 0.0]);
    }

    #[test]
    fn vector_round_trip() {
        let v = vec![0.1, -2.5e-17, 3.0, f64::MAX];
        let mut buf = Vec::new();
        write_vector(&v, &mut buf).unwrap();
        assert_eq!(read_vector(buf.as_slice()).unwrap(), v);
        assert!(matches!(read_vector("3\n1.0\n2.0\n".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(read_vector("".as_bytes()), Err(Error::Parse(_))));
    }
}
