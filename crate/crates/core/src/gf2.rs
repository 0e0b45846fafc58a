//! Bit-packed linear algebra over GF(2).
//!
//! Vectors and matrices store 64 entries per word, rows of a matrix are
//! word-aligned so that row dot products reduce to `popcount(a & b) & 1`.

use std::fmt;

use thiserror::Error;

const WORD: usize = 64;

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("column order is not a permutation of 0..{0}")]
    BadPermutation(usize),
    #[error("matrix text line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn check_dim(op: &'static str, expected: usize, found: usize) -> Result<(), Gf2Error> {
    if expected == found {
        Ok(())
    } else {
        Err(Gf2Error::DimensionMismatch {
            op,
            expected,
            found,
        })
    }
}

/// A vector over GF(2).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryVector {
    len: usize,
    words: Vec<u64>,
}

impl BinaryVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self::zeros(len);
        for w in v.words.iter_mut() {
            *w = u64::MAX;
        }
        v.mask_tail();
        v
    }

    /// Builds a vector from 0/1 bytes; any nonzero byte is a one.
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b != 0 {
                v.words[i / WORD] |= 1 << (i % WORD);
            }
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.words[i / WORD] |= 1 << (i % WORD);
            }
        }
        v
    }

    /// Vector of length `len` with ones at `support`.
    pub fn from_support(len: usize, support: &[usize]) -> Self {
        let mut v = Self::zeros(len);
        for &i in support {
            v.set(i, true);
        }
        v
    }

    fn mask_tail(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD] ^= 1 << (i % WORD);
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor_assign(&mut self, other: &BinaryVector) -> Result<(), Gf2Error> {
        check_dim("xor", self.len, other.len)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
        Ok(())
    }

    pub fn xor(&self, other: &BinaryVector) -> Result<BinaryVector, Gf2Error> {
        let mut out = self.clone();
        out.xor_assign(other)?;
        Ok(out)
    }

    /// Entrywise AND (the ⊙ product over GF(2)).
    pub fn and(&self, other: &BinaryVector) -> Result<BinaryVector, Gf2Error> {
        check_dim("and", self.len, other.len)?;
        Ok(BinaryVector {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        })
    }

    /// Inner product mod 2.
    pub fn dot(&self, other: &BinaryVector) -> Result<bool, Gf2Error> {
        check_dim("dot", self.len, other.len)?;
        Ok(dot_words(&self.words, &other.words))
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let tz = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * WORD + tz)
                }
            })
        })
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    /// Concatenation `(self, other)`.
    pub fn concat(&self, other: &BinaryVector) -> BinaryVector {
        let mut out = BinaryVector::zeros(self.len + other.len);
        for i in self.iter_ones() {
            out.set(i, true);
        }
        for i in other.iter_ones() {
            out.set(self.len + i, true);
        }
        out
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> BinaryVector {
        assert!(range.end <= self.len);
        let mut out = BinaryVector::zeros(range.len());
        for (k, i) in range.enumerate() {
            if self.get(i) {
                out.set(k, true);
            }
        }
        out
    }

    /// Lexicographic comparison with index 0 most significant.
    pub fn lex_cmp(&self, other: &BinaryVector) -> std::cmp::Ordering {
        for (a, b) in self.iter().zip(other.iter()) {
            if a != b {
                return a.cmp(&b);
            }
        }
        self.len.cmp(&other.len)
    }
}

impl fmt::Debug for BinaryVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryVector({self})")
    }
}

impl fmt::Display for BinaryVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[inline]
fn dot_words(a: &[u64], b: &[u64]) -> bool {
    let mut acc = 0u64;
    for (x, y) in a.iter().zip(b) {
        acc ^= x & y;
    }
    acc.count_ones() & 1 == 1
}

#[inline]
fn xor_words(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

/// Dense row-major matrix over GF(2).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from equal-length rows of 0/1 bytes.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, Gf2Error> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            check_dim("from_rows", cols, r.len())?;
            for (j, &b) in r.iter().enumerate() {
                if b != 0 {
                    m.set(i, j, true);
                }
            }
        }
        Ok(m)
    }

    pub fn from_row_vectors(cols: usize, rows: &[BinaryVector]) -> Result<Self, Gf2Error> {
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            check_dim("from_row_vectors", cols, r.len())?;
            m.row_words_mut(i).copy_from_slice(r.words());
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(i < self.rows && j < self.cols, "({i},{j}) out of range");
        (self.data[i * self.stride + j / WORD] >> (j % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        assert!(i < self.rows && j < self.cols, "({i},{j}) out of range");
        let w = &mut self.data[i * self.stride + j / WORD];
        let mask = 1u64 << (j % WORD);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    #[inline]
    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }

    #[inline]
    fn row_words_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.data[i * self.stride..(i + 1) * self.stride]
    }

    pub fn row(&self, i: usize) -> BinaryVector {
        BinaryVector {
            len: self.cols,
            words: self.row_words(i).to_vec(),
        }
    }

    pub fn column(&self, j: usize) -> BinaryVector {
        let mut v = BinaryVector::zeros(self.rows);
        for i in 0..self.rows {
            if self.get(i, j) {
                v.set(i, true);
            }
        }
        v
    }

    /// Row indices with a one in column `j`.
    pub fn column_support(&self, j: usize) -> Vec<usize> {
        (0..self.rows).filter(|&i| self.get(i, j)).collect()
    }

    pub fn row_support(&self, i: usize) -> Vec<usize> {
        self.row(i).iter_ones().collect()
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0)
    }

    /// `M·v` over GF(2).
    pub fn matvec(&self, v: &BinaryVector) -> Result<BinaryVector, Gf2Error> {
        check_dim("matvec", self.cols, v.len())?;
        let mut out = BinaryVector::zeros(self.rows);
        for i in 0..self.rows {
            if dot_words(self.row_words(i), v.words()) {
                out.words[i / WORD] |= 1 << (i % WORD);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> BinaryMatrix {
        let mut t = BinaryMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in self.row(i).iter_ones() {
                t.set(j, i, true);
            }
        }
        t
    }

    /// Matrix product over GF(2).
    pub fn mul(&self, other: &BinaryMatrix) -> Result<BinaryMatrix, Gf2Error> {
        check_dim("mul", self.cols, other.rows)?;
        let mut out = BinaryMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in self.row(i).iter_ones() {
                let (src_start, stride) = (k * other.stride, other.stride);
                let src = other.data[src_start..src_start + stride].to_vec();
                xor_words(out.row_words_mut(i), &src);
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` over GF(2), computed by row dot products.
    pub fn mul_transpose(&self, other: &BinaryMatrix) -> Result<BinaryMatrix, Gf2Error> {
        check_dim("mul_transpose", self.cols, other.cols)?;
        let mut out = BinaryMatrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                if dot_words(self.row_words(i), other.row_words(j)) {
                    out.set(i, j, true);
                }
            }
        }
        Ok(out)
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &BinaryMatrix) -> Result<BinaryMatrix, Gf2Error> {
        check_dim("vstack", self.cols, other.cols)?;
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(BinaryMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            stride: self.stride,
            data,
        })
    }

    /// Places `self` to the left of `other`.
    pub fn hstack(&self, other: &BinaryMatrix) -> Result<BinaryMatrix, Gf2Error> {
        check_dim("hstack", self.rows, other.rows)?;
        let mut out = BinaryMatrix::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            for j in self.row(i).iter_ones() {
                out.set(i, j, true);
            }
            for j in other.row(i).iter_ones() {
                out.set(i, self.cols + j, true);
            }
        }
        Ok(out)
    }

    pub fn block_diag(&self, other: &BinaryMatrix) -> BinaryMatrix {
        let mut out = BinaryMatrix::zeros(self.rows + other.rows, self.cols + other.cols);
        for i in 0..self.rows {
            for j in self.row(i).iter_ones() {
                out.set(i, j, true);
            }
        }
        for i in 0..other.rows {
            for j in other.row(i).iter_ones() {
                out.set(self.rows + i, self.cols + j, true);
            }
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> BinaryMatrix {
        let mut out = BinaryMatrix::zeros(rows.len(), self.cols);
        for (k, &i) in rows.iter().enumerate() {
            let src = self.row_words(i).to_vec();
            out.row_words_mut(k).copy_from_slice(&src);
        }
        out
    }

    pub fn row_range(&self, range: std::ops::Range<usize>) -> BinaryMatrix {
        let rows: Vec<usize> = range.collect();
        self.select_rows(&rows)
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for w in 0..self.stride {
            self.data.swap(a * self.stride + w, b * self.stride + w);
        }
    }

    /// `row[dst] ^= row[src]`.
    pub fn add_row(&mut self, src: usize, dst: usize) {
        assert_ne!(src, dst);
        let s = self.stride;
        let (lo, hi) = self.data.split_at_mut(src.max(dst) * s);
        if src < dst {
            xor_words(&mut hi[..s], &lo[src * s..src * s + s]);
        } else {
            xor_words(&mut lo[dst * s..dst * s + s], &hi[..s]);
        }
    }

    /// Row rank over GF(2). Works on a private copy.
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let mut rank = 0;
        for c in 0..self.cols {
            if rank == m.rows {
                break;
            }
            let Some(p) = (rank..m.rows).find(|&r| m.get(r, c)) else {
                continue;
            };
            m.swap_rows(rank, p);
            for r in rank + 1..m.rows {
                if m.get(r, c) {
                    m.add_row(rank, r);
                }
            }
            rank += 1;
        }
        rank
    }

    /// Basis of the right kernel `{x : M·x = 0}`, one vector per free column
    /// in ascending column order.
    pub fn kernel(&self) -> Vec<BinaryVector> {
        let mut m = self.clone();
        let mut pivots: Vec<usize> = Vec::new();
        let mut rank = 0;
        for c in 0..self.cols {
            if rank == m.rows {
                break;
            }
            let Some(p) = (rank..m.rows).find(|&r| m.get(r, c)) else {
                continue;
            };
            m.swap_rows(rank, p);
            for r in 0..m.rows {
                if r != rank && m.get(r, c) {
                    m.add_row(rank, r);
                }
            }
            pivots.push(c);
            rank += 1;
        }
        let mut is_pivot = vec![false; self.cols];
        for &c in &pivots {
            is_pivot[c] = true;
        }
        (0..self.cols)
            .filter(|&c| !is_pivot[c])
            .map(|free| {
                let mut v = BinaryVector::zeros(self.cols);
                v.set(free, true);
                for (r, &pc) in pivots.iter().enumerate() {
                    if m.get(r, free) {
                        v.set(pc, true);
                    }
                }
                v
            })
            .collect()
    }

    /// Parses the fixture text format: a `rows cols` header followed by one
    /// line of `0`/`1` characters per row.
    pub fn parse_text(text: &str) -> Result<BinaryMatrix, Gf2Error> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Gf2Error::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let mut dims = header.split_whitespace();
        let mut dim = |name: &str| -> Result<usize, Gf2Error> {
            dims.next()
                .ok_or_else(|| Gf2Error::Parse {
                    line: 1,
                    msg: format!("missing {name}"),
                })?
                .parse::<usize>()
                .map_err(|e| Gf2Error::Parse {
                    line: 1,
                    msg: format!("bad {name}: {e}"),
                })
        };
        let rows = dim("rows")?;
        let cols = dim("cols")?;
        if dims.next().is_some() {
            return Err(Gf2Error::Parse {
                line: 1,
                msg: "trailing tokens in header".into(),
            });
        }
        // Guard allocation against absurd headers.
        if rows.saturating_mul(cols) > text.len() {
            return Err(Gf2Error::Parse {
                line: 1,
                msg: format!("{rows}x{cols} does not fit in {} bytes", text.len()),
            });
        }
        let mut m = BinaryMatrix::zeros(rows, cols);
        let mut seen = 0;
        for (idx, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.is_empty() && cols > 0 {
                continue;
            }
            if seen == rows {
                return Err(Gf2Error::Parse {
                    line: idx + 1,
                    msg: "more rows than declared".into(),
                });
            }
            if line.len() != cols {
                return Err(Gf2Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {cols} entries, found {}", line.len()),
                });
            }
            for (j, ch) in line.bytes().enumerate() {
                match ch {
                    b'0' => {}
                    b'1' => m.set(seen, j, true),
                    other => {
                        return Err(Gf2Error::Parse {
                            line: idx + 1,
                            msg: format!("invalid character {:?}", other as char),
                        })
                    }
                }
            }
            seen += 1;
        }
        if seen != rows {
            return Err(Gf2Error::Parse {
                line: rows + 1,
                msg: format!("expected {rows} rows, found {seen}"),
            });
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                s.push(if self.get(i, j) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }
}

impl fmt::Debug for BinaryMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Gaussian elimination of `M` with columns visited in a caller-supplied
/// order, retaining the row transform so several right-hand sides can be
/// solved against the same pivot basis.
#[derive(Debug, Clone)]
pub struct PivotSolver {
    rows: usize,
    cols: usize,
    /// `pivots[i]` is the column eliminated by reduced row `i`.
    pivots: Vec<usize>,
    /// Row transform `T` with `T·M` in reduced form; `rows × rows`.
    transform: BinaryMatrix,
}

impl PivotSolver {
    pub fn new(m: &BinaryMatrix, column_order: &[usize]) -> Result<Self, Gf2Error> {
        check_dim("column order", m.cols(), column_order.len())?;
        let mut seen = vec![false; m.cols()];
        for &c in column_order {
            if c >= m.cols() || seen[c] {
                return Err(Gf2Error::BadPermutation(m.cols()));
            }
            seen[c] = true;
        }
        let rows = m.rows();
        // Augmented [M | I] so the transform is tracked alongside.
        let mut aug = m.hstack(&BinaryMatrix::identity(rows))?;
        let mut pivots = Vec::new();
        for &c in column_order {
            let rank = pivots.len();
            if rank == rows {
                break;
            }
            let Some(p) = (rank..rows).find(|&r| aug.get(r, c)) else {
                continue;
            };
            aug.swap_rows(rank, p);
            for r in 0..rows {
                if r != rank && aug.get(r, c) {
                    aug.add_row(rank, r);
                }
            }
            pivots.push(c);
        }
        let mut transform = BinaryMatrix::zeros(rows, rows);
        for i in 0..rows {
            for j in 0..rows {
                if aug.get(i, m.cols() + j) {
                    transform.set(i, j, true);
                }
            }
        }
        Ok(Self {
            rows,
            cols: m.cols(),
            pivots,
            transform,
        })
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    /// Solves `M·e = s` with `e` supported on pivot columns. `Ok(None)` means
    /// the system has no solution.
    pub fn solve(&self, s: &BinaryVector) -> Result<Option<BinaryVector>, Gf2Error> {
        check_dim("solve", self.rows, s.len())?;
        let reduced = self.transform.matvec(s)?;
        if (self.rank()..self.rows).any(|i| reduced.get(i)) {
            return Ok(None);
        }
        let mut e = BinaryVector::zeros(self.cols);
        for (i, &c) in self.pivots.iter().enumerate() {
            if reduced.get(i) {
                e.set(c, true);
            }
        }
        Ok(Some(e))
    }
}

/// One-shot form of [`PivotSolver`].
pub fn solve_with_pivots(
    m: &BinaryMatrix,
    s: &BinaryVector,
    column_order: &[usize],
) -> Result<Option<BinaryVector>, Gf2Error> {
    check_dim("solve", m.rows(), s.len())?;
    PivotSolver::new(m, column_order)?.solve(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, density: f64) -> BinaryMatrix {
        let mut m = BinaryMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if rng.random_bool(density) {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    fn random_vector(rng: &mut impl Rng, len: usize) -> BinaryVector {
        let bits: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
        BinaryVector::from_bools(&bits)
    }

    #[test]
    fn matvec_hand_examples() {
        let h = BinaryMatrix::from_rows(&[[1u8, 1, 0], [0, 1, 1]]).unwrap();
        let e = BinaryVector::from_bits(&[1, 0, 1]);
        assert_eq!(h.matvec(&e).unwrap(), BinaryVector::from_bits(&[1, 1]));

        let e = BinaryVector::from_bits(&[0, 1, 0]);
        assert_eq!(BinaryMatrix::identity(3).matvec(&e).unwrap(), e);
    }

    #[test]
    fn matvec_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_matrix(&mut rng, 64, 128, 0.5);
        let v = random_vector(&mut rng, 128);
        let fast = m.matvec(&v).unwrap();
        for i in 0..64 {
            let mut acc = false;
            for j in 0..128 {
                acc ^= m.get(i, j) & v.get(j);
            }
            assert_eq!(fast.get(i), acc, "row {i}");
        }
    }

    #[test]
    fn matvec_rejects_bad_length() {
        let m = BinaryMatrix::identity(3);
        assert!(matches!(
            m.matvec(&BinaryVector::zeros(4)),
            Err(Gf2Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(BinaryMatrix::identity(4).rank(), 4);
        assert_eq!(BinaryMatrix::zeros(3, 5).rank(), 0);
        let m = BinaryMatrix::from_rows(&[[1u8, 1, 0], [0, 1, 1], [1, 0, 1]]).unwrap();
        assert_eq!(m.rank(), 2);
    }

    #[test]
    fn solve_examples() {
        let s = BinaryVector::from_bits(&[1, 0, 1]);
        let e = solve_with_pivots(&BinaryMatrix::identity(3), &s, &[2, 0, 1])
            .unwrap()
            .unwrap();
        assert_eq!(e, s);

        let m = BinaryMatrix::from_rows(&[[1u8, 1]]).unwrap();
        let s = BinaryVector::from_bits(&[1]);
        let e = solve_with_pivots(&m, &s, &[0, 1]).unwrap().unwrap();
        assert_eq!(e, BinaryVector::from_bits(&[1, 0]));
        let e = solve_with_pivots(&m, &s, &[1, 0]).unwrap().unwrap();
        assert_eq!(e, BinaryVector::from_bits(&[0, 1]));
    }

    #[test]
    fn solve_reports_infeasible_distinctly() {
        let m = BinaryMatrix::from_rows(&[[1u8, 1], [1, 1]]).unwrap();
        let s = BinaryVector::from_bits(&[1, 0]);
        assert_eq!(solve_with_pivots(&m, &s, &[0, 1]).unwrap(), None);
        assert!(solve_with_pivots(&m, &BinaryVector::zeros(3), &[0, 1]).is_err());
        assert!(matches!(
            solve_with_pivots(&m, &s, &[0, 0]),
            Err(Gf2Error::BadPermutation(2))
        ));
    }

    #[test]
    fn solve_random_consistent_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = random_matrix(&mut rng, 20, 40, 0.3);
            let truth = random_vector(&mut rng, 40);
            let s = m.matvec(&truth).unwrap();
            let mut order: Vec<usize> = (0..40).collect();
            for i in (1..40).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let e = solve_with_pivots(&m, &s, &order).unwrap().unwrap();
            assert_eq!(m.matvec(&e).unwrap(), s);
            // Support lies inside the first independent columns of the order.
            let solver = PivotSolver::new(&m, &order).unwrap();
            assert_eq!(solver.rank(), m.rank());
            for j in e.iter_ones() {
                assert!(solver.pivots().contains(&j));
            }
        }
    }

    #[test]
    fn kernel_vectors_are_annihilated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 12, 30, 0.3);
        let ker = m.kernel();
        assert_eq!(ker.len(), 30 - m.rank());
        for v in &ker {
            assert!(m.matvec(v).unwrap().is_zero());
        }
        let basis = BinaryMatrix::from_row_vectors(30, &ker).unwrap();
        assert_eq!(basis.rank(), ker.len());
    }

    #[test]
    fn text_format_round_trip_and_errors() {
        let m = BinaryMatrix::from_rows(&[[1u8, 0, 1], [0, 1, 1]]).unwrap();
        let text = m.to_text();
        assert_eq!(text, "2 3\n101\n011\n");
        assert_eq!(BinaryMatrix::parse_text(&text).unwrap(), m);
        assert!(BinaryMatrix::parse_text("2 3\n101\n").is_err());
        assert!(BinaryMatrix::parse_text("1 3\n1x1\n").is_err());
        assert!(BinaryMatrix::parse_text("1 3\n1011\n").is_err());
        assert!(BinaryMatrix::parse_text("").is_err());
        assert!(BinaryMatrix::parse_text("99999999 99999999\n").is_err());
        for (r, c) in [(0, 0), (0, 4), (3, 0)] {
            let z = BinaryMatrix::zeros(r, c);
            assert_eq!(BinaryMatrix::parse_text(&z.to_text()).unwrap(), z);
        }
    }

    #[test]
    fn vector_helpers() {
        let v = BinaryVector::from_bits(&[0, 1, 1, 0, 1]);
        assert_eq!(v.weight(), 3);
        assert_eq!(v.iter_ones().collect::<Vec<_>>(), vec![1, 2, 4]);
        assert_eq!(v.to_string(), "01101");
        assert_eq!(BinaryVector::ones(70).weight(), 70);
        let a = BinaryVector::from_bits(&[0, 1]);
        let b = BinaryVector::from_bits(&[1, 0]);
        assert_eq!(a.lex_cmp(&b), std::cmp::Ordering::Less);
        assert_eq!(a.concat(&b).to_string(), "0110");
    }

    proptest! {
        #[test]
        fn matvec_is_linear(seed in any::<u64>(), rows in 1usize..80, cols in 1usize..150) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, rows, cols, 0.4);
            let a = random_vector(&mut rng, cols);
            let b = random_vector(&mut rng, cols);
            let lhs = m.matvec(&a.xor(&b).unwrap()).unwrap();
            let rhs = m.matvec(&a).unwrap().xor(&m.matvec(&b).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn rank_invariant_under_row_operations(seed in any::<u64>(), rows in 2usize..30, cols in 1usize..90) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = random_matrix(&mut rng, rows, cols, 0.3);
            let r0 = m.rank();
            prop_assert!(r0 <= rows.min(cols));
            prop_assert_eq!(m.rank(), r0);
            for _ in 0..10 {
                let a = rng.random_range(0..rows);
                let b = rng.random_range(0..rows);
                if a != b {
                    if rng.random_bool(0.5) { m.swap_rows(a, b) } else { m.add_row(a, b) }
                }
            }
            prop_assert_eq!(m.rank(), r0);
        }

        #[test]
        fn feasible_solutions_multiply_back(seed in any::<u64>(), rows in 1usize..25, cols in 1usize..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, rows, cols, 0.3);
            let s = random_vector(&mut rng, rows);
            let order: Vec<usize> = (0..cols).rev().collect();
            if let Some(e) = solve_with_pivots(&m, &s, &order).unwrap() {
                prop_assert_eq!(m.matvec(&e).unwrap(), s);
            } else {
                // Infeasible only if s is outside the column space.
                prop_assert!(m.rank() < m.hstack(&BinaryMatrix::from_row_vectors(rows, &[s]).unwrap().transpose()).unwrap().rank() || rows == 0);
            }
        }
    }
}
