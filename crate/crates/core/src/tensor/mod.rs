//! Dense real tensors, bit-packed spike tensors and the exact integer
//! kernels built on them.

mod int;
mod real;
mod shape;
mod spike;

pub use int::IntTensor;
pub use real::{matmul_real, RealTensor};
pub use shape::Shape;
pub use spike::{SpikeTensor, WORD_BITS};

use crate::error::{shape_err, Result};

/// `Σ_d (2a_d − 1)(2b_d − 1)` over two packed rows of logical length `len`.
///
/// Padding bits are zero in both operands so they never contribute to the
/// XOR population count.
#[inline]
pub fn signed_row_dot(a: &[u64], b: &[u64], len: usize) -> i64 {
    let differing: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
    len as i64 - 2 * i64::from(differing)
}

/// `Σ_d a_d b_d` over two packed `{0,1}` rows.
#[inline]
pub fn binary_row_dot(a: &[u64], b: &[u64]) -> i64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| i64::from((x & y).count_ones()))
        .sum()
}

fn rank2(x: &SpikeTensor, what: &str) -> Result<(usize, usize)> {
    match *x.dims() {
        [r, c] => Ok((r, c)),
        _ => Err(shape_err(format!(
            "{what} must be rank 2, got {}",
            x.shape()
        ))),
    }
}

/// `out[r,s] = Σ_d (2a[r,d]−1)(2b[d,s]−1)`, computed as `D − 2·popcount(a_r ⊕ b_s)`.
pub fn signed_binary_matmul(a: &SpikeTensor, b: &SpikeTensor) -> Result<IntTensor> {
    let (rows, depth) = rank2(a, "left operand")?;
    let (depth_b, cols) = rank2(b, "right operand")?;
    if depth != depth_b {
        return Err(shape_err(format!("inner extents {depth} vs {depth_b}")));
    }
    let bt = b.transpose_axes(&[1, 0])?;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ar = a.row_words(r);
        out.extend((0..cols).map(|s| signed_row_dot(ar, bt.row_words(s), depth)));
    }
    IntTensor::new(vec![rows, cols], out)
}

/// `{0,1}` matrix product `[R×D]·[D×S]` via popcount of AND.
pub fn binary_matmul(a: &SpikeTensor, b: &SpikeTensor) -> Result<IntTensor> {
    let (rows, depth) = rank2(a, "left operand")?;
    let (depth_b, cols) = rank2(b, "right operand")?;
    if depth != depth_b {
        return Err(shape_err(format!("inner extents {depth} vs {depth_b}")));
    }
    let bt = b.transpose_axes(&[1, 0])?;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ar = a.row_words(r);
        out.extend((0..cols).map(|s| binary_row_dot(ar, bt.row_words(s))));
    }
    IntTensor::new(vec![rows, cols], out)
}

/// Spike rows times a real weight matrix, `[R×K]·[K×N]`, by accumulating the
/// weight rows selected by set bits. Returns the product and the number of
/// accumulate operations performed.
pub fn spike_real_matmul(x: &SpikeTensor, w: &RealTensor) -> Result<(RealTensor, u64)> {
    let (rows, depth) = rank2(x, "spike operand")?;
    let &[depth_w, cols] = w.dims() else {
        return Err(shape_err(format!(
            "weight must be rank 2, got {}",
            w.shape()
        )));
    };
    if depth != depth_w {
        return Err(shape_err(format!("inner extents {depth} vs {depth_w}")));
    }
    let mut out = vec![0.0; rows * cols];
    let mut ops = 0u64;
    for r in 0..rows {
        let dst = &mut out[r * cols..(r + 1) * cols];
        for k in x.row_ones(r) {
            for (o, &wv) in dst.iter_mut().zip(w.row(k)) {
                *o += wv;
            }
            ops += cols as u64;
        }
    }
    Ok((RealTensor::new(vec![rows, cols], out)?, ops))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(bits: &[u8]) -> SpikeTensor {
        SpikeTensor::from_fn(vec![1, bits.len()], |i| bits[i] == 1).unwrap()
    }

    fn col(bits: &[u8]) -> SpikeTensor {
        SpikeTensor::from_fn(vec![bits.len(), 1], |i| bits[i] == 1).unwrap()
    }

    #[test]
    fn signed_matmul_hand_cases() {
        let ones = [1, 1, 1, 1];
        assert_eq!(
            signed_binary_matmul(&row(&ones), &col(&ones))
                .unwrap()
                .data(),
            &[4]
        );
        assert_eq!(
            signed_binary_matmul(&row(&ones), &col(&[0, 0, 0, 0]))
                .unwrap()
                .data(),
            &[-4]
        );
        assert_eq!(
            signed_binary_matmul(&row(&[1, 0, 1, 0]), &col(&[1, 1, 0, 0]))
                .unwrap()
                .data(),
            &[0]
        );
    }

    #[test]
    fn signed_matmul_shape_mismatch() {
        assert!(signed_binary_matmul(&row(&[1, 0]), &col(&[1, 0, 1])).is_err());
    }

    #[test]
    fn spike_real_matmul_counts_set_bits() {
        let x = SpikeTensor::from_fn(vec![2, 3], |i| i == 0 || i == 4 || i == 5).unwrap();
        let w = RealTensor::from_fn(vec![3, 2], |i| i as f64).unwrap();
        let (y, ops) = spike_real_matmul(&x, &w).unwrap();
        assert_eq!(y, x.unpack().matmul(&w).unwrap());
        assert_eq!(ops, 3 * 2);
    }
}
