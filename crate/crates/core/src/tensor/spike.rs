use crate::error::{shape_err, Error, Result};

use super::{RealTensor, Shape};

pub const WORD_BITS: usize = 64;

/// Bit-packed `{0,1}` tensor. Each row of the last axis starts on a fresh
/// `u64` word; bits past the row length are always zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpikeTensor {
    shape: Shape,
    words_per_row: usize,
    words: Vec<u64>,
}

pub(crate) fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

impl SpikeTensor {
    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Ok(Self::zeros_shape(Shape::new(dims)?))
    }

    pub(crate) fn zeros_shape(shape: Shape) -> Self {
        let words_per_row = words_for(shape.last());
        let words = vec![0; words_per_row * shape.rows()];
        Self {
            shape,
            words_per_row,
            words,
        }
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> bool) -> Result<Self> {
        let mut out = Self::zeros(dims)?;
        for i in 0..out.shape.numel() {
            if f(i) {
                out.set_flat(i);
            }
        }
        Ok(out)
    }

    pub fn from_bools(dims: impl Into<Vec<usize>>, bits: &[bool]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if bits.len() != shape.numel() {
            return Err(shape_err(format!("{} bits for shape {shape}", bits.len())));
        }
        let mut out = Self::zeros_shape(shape);
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            out.set_flat(i);
        }
        Ok(out)
    }

    /// Packs a tensor whose entries are exactly `0.0` or `1.0`.
    pub fn pack(x: &RealTensor) -> Result<Self> {
        let mut out = Self::zeros_shape(x.shape().clone());
        for (i, &v) in x.data().iter().enumerate() {
            if v == 1.0 {
                out.set_flat(i);
            } else if v != 0.0 {
                return Err(Error::NonBinaryInput { index: i, value: v });
            }
        }
        Ok(out)
    }

    pub fn unpack(&self) -> RealTensor {
        let data = (0..self.shape.numel())
            .map(|i| if self.get_flat(i) { 1.0 } else { 0.0 })
            .collect();
        RealTensor::from_shape(self.shape.clone(), data).expect("binary values are finite")
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.shape.numel()).map(|i| self.get_flat(i)).collect()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    /// Rebuilds a tensor from raw packed words, rejecting nonzero padding.
    pub fn from_words(shape: Shape, words: Vec<u64>) -> Result<Self> {
        let words_per_row = words_for(shape.last());
        if words.len() != words_per_row * shape.rows() {
            return Err(shape_err(format!(
                "{} words for shape {shape}",
                words.len()
            )));
        }
        let tail = shape.last() % WORD_BITS;
        if tail != 0 {
            let mask = !((1u64 << tail) - 1);
            for r in 0..shape.rows() {
                if words[(r + 1) * words_per_row - 1] & mask != 0 {
                    return Err(Error::Format(format!("nonzero padding bits in row {r}")));
                }
            }
        }
        Ok(Self {
            shape,
            words_per_row,
            words,
        })
    }

    fn locate(&self, flat: usize) -> (usize, u64) {
        let last = self.shape.last();
        let (r, c) = (flat / last, flat % last);
        (
            r * self.words_per_row + c / WORD_BITS,
            1u64 << (c % WORD_BITS),
        )
    }

    pub fn get_flat(&self, flat: usize) -> bool {
        let (w, mask) = self.locate(flat);
        self.words[w] & mask != 0
    }

    pub(crate) fn set_flat(&mut self, flat: usize) {
        let (w, mask) = self.locate(flat);
        self.words[w] |= mask;
    }

    pub fn get(&self, index: &[usize]) -> Result<bool> {
        Ok(self.get_flat(self.shape.flat_index(index)?))
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn row_count_ones(&self, r: usize) -> u64 {
        self.row_words(r)
            .iter()
            .map(|w| u64::from(w.count_ones()))
            .sum()
    }

    /// Fraction of ones.
    pub fn density(&self) -> f64 {
        self.count_ones() as f64 / self.numel() as f64
    }

    /// Bitwise complement, padding kept at zero.
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        let tail = self.shape.last() % WORD_BITS;
        let pad_mask = if tail == 0 {
            u64::MAX
        } else {
            (1u64 << tail) - 1
        };
        for (i, w) in out.words.iter_mut().enumerate() {
            *w = !*w;
            if (i + 1) % self.words_per_row == 0 {
                *w &= pad_mask;
            }
        }
        out
    }

    /// Iterator over the column indices of set bits in row `r`.
    pub fn row_ones(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_words(r)
            .iter()
            .enumerate()
            .flat_map(|(wi, &word)| {
                let mut w = word;
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let bit = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * WORD_BITS + bit)
                })
            })
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = self.shape.reshaped(dims)?;
        if shape.last() == self.shape.last() {
            return Ok(Self {
                shape,
                words_per_row: self.words_per_row,
                words: self.words.clone(),
            });
        }
        let mut out = Self::zeros_shape(shape);
        for i in (0..self.numel()).filter(|&i| self.get_flat(i)) {
            out.set_flat(i);
        }
        Ok(out)
    }

    pub fn transpose_axes(&self, perm: &[usize]) -> Result<Self> {
        let shape = self.shape.permuted(perm)?;
        let map = self.shape.permutation_map(perm)?;
        let mut out = Self::zeros_shape(shape);
        for (dst, &src) in map.iter().enumerate() {
            if self.get_flat(src) {
                out.set_flat(dst);
            }
        }
        Ok(out)
    }

    /// Copies rows `[start, start + count)` of the `[rows, last]` view.
    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.rows() || count == 0 {
            return Err(shape_err(format!(
                "rows {start}..{} of {}",
                start + count,
                self.shape
            )));
        }
        let shape = Shape::new(vec![count, self.shape.last()])?;
        let words =
            self.words[start * self.words_per_row..(start + count) * self.words_per_row].to_vec();
        Ok(Self {
            shape,
            words_per_row: self.words_per_row,
            words,
        })
    }

    /// Copies columns `[start, start + width)` of the `[rows, last]` view.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Self> {
        let last = self.shape.last();
        if start + width > last || width == 0 {
            return Err(shape_err(format!(
                "cols {start}..{} of {}",
                start + width,
                self.shape
            )));
        }
        let rows = self.shape.rows();
        let mut out = Self::zeros(vec![rows, width])?;
        for r in 0..rows {
            for c in self
                .row_ones(r)
                .filter(|&c| c >= start && c < start + width)
            {
                out.set_flat(r * width + c - start);
            }
        }
        Ok(out)
    }

    /// Copies the listed rows of the `[rows, last]` view, in order.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Self> {
        let n = self.shape.rows();
        if rows.is_empty() {
            return Err(shape_err("gather of zero rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(shape_err(format!("row {bad} out of {n}")));
        }
        let shape = Shape::new(vec![rows.len(), self.shape.last()])?;
        let mut words = Vec::with_capacity(rows.len() * self.words_per_row);
        for &r in rows {
            words.extend_from_slice(self.row_words(r));
        }
        Ok(Self {
            shape,
            words_per_row: self.words_per_row,
            words,
        })
    }

    /// Joins two `[rows, *]` tensors along the last axis.
    pub fn concat_cols(&self, other: &Self) -> Result<Self> {
        let rows = self.shape.rows();
        if other.shape.rows() != rows {
            return Err(shape_err(format!(
                "column concat of {} and {}",
                self.shape, other.shape
            )));
        }
        let (wa, wb) = (self.shape.last(), other.shape.last());
        let mut out = Self::zeros(vec![rows, wa + wb])?;
        for r in 0..rows {
            for c in self.row_ones(r) {
                out.set_flat(r * (wa + wb) + c);
            }
            for c in other.row_ones(r) {
                out.set_flat(r * (wa + wb) + wa + c);
            }
        }
        Ok(out)
    }

    /// Stacks `[rows_i, last]` tensors along the row axis.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat of zero tensors"))?;
        let last = first.shape.last();
        if parts.iter().any(|p| p.shape.last() != last) {
            return Err(shape_err("row concat needs equal last extents"));
        }
        let rows = parts.iter().map(|p| p.shape.rows()).sum();
        let shape = Shape::new(vec![rows, last])?;
        let words = parts.iter().flat_map(|p| p.words.iter().copied()).collect();
        Ok(Self {
            shape,
            words_per_row: first.words_per_row,
            words,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_identity_bits() {
        let x = RealTensor::new(vec![4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let s = SpikeTensor::pack(&x).unwrap();
        assert_eq!(s.words(), &[0b0110]);
        assert_eq!(s.unpack(), x);
    }

    #[test]
    fn pack_all_zero() {
        let s = SpikeTensor::pack(&RealTensor::zeros(vec![8]).unwrap()).unwrap();
        assert_eq!(s.words(), &[0]);
    }

    #[test]
    fn pack_rejects_non_binary() {
        let x = RealTensor::new(vec![3], vec![0.0, 0.5, 1.0]).unwrap();
        assert!(matches!(
            SpikeTensor::pack(&x),
            Err(Error::NonBinaryInput { index: 1, .. })
        ));
    }

    #[test]
    fn complement_keeps_padding_zero() {
        let s = SpikeTensor::from_fn(vec![2, 70], |i| i % 3 == 0).unwrap();
        let c = s.complement();
        assert_eq!(s.count_ones() + c.count_ones(), 140);
        assert!(SpikeTensor::from_words(c.shape().clone(), c.words().to_vec()).is_ok());
    }

    #[test]
    fn from_words_rejects_dirty_padding() {
        let shape = Shape::new(vec![1, 3]).unwrap();
        assert!(SpikeTensor::from_words(shape, vec![0b1000]).is_err());
    }

    #[test]
    fn reshape_repacks_rows() {
        let s = SpikeTensor::from_fn(vec![3, 5], |i| i % 2 == 1).unwrap();
        let r = s.reshape(vec![5, 3]).unwrap();
        assert_eq!(r.to_bools(), s.to_bools());
        assert_eq!(r.reshape(vec![3, 5]).unwrap(), s);
    }

    #[test]
    fn row_ones_lists_columns() {
        let s = SpikeTensor::from_fn(vec![1, 130], |i| i == 3 || i == 64 || i == 129).unwrap();
        assert_eq!(s.row_ones(0).collect::<Vec<_>>(), vec![3, 64, 129]);
    }
}
