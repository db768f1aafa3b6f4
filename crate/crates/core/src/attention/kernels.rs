//! Single-head spike attention kernels in exact integer arithmetic.
//!
//! Every kernel returns its integer pre-activations together with the
//! number of accumulate operations it performed. `{0,1}` operands skip
//! zero entries; `{−1,1}` operands cost one accumulate per position.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{binary_matmul, signed_binary_matmul, IntTensor, SpikeTensor};

/// Integer pre-activations and the accumulates spent producing them.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub values: IntTensor,
    pub acc_ops: u64,
}

fn check_qkv(q: &SpikeTensor, k: &SpikeTensor, v: &SpikeTensor) -> Result<(usize, usize, usize)> {
    let (&[lq, dq], &[lk, dk], &[lv, dv]) = (q.dims(), k.dims(), v.dims()) else {
        return Err(shape_err(format!(
            "q, k, v must be rank 2, got {}, {}, {}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    };
    if dq != dk || dk != dv || lk != lv {
        return Err(shape_err(format!(
            "q {} / k {} / v {} do not agree",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok((lq, lk, dq))
}

fn signs(row: &SpikeTensor, r: usize, width: usize) -> Vec<i64> {
    let mut out = vec![-1i64; width];
    for c in row.row_ones(r) {
        out[c] = 1;
    }
    out
}

/// `(2Q−1)·[(2K−1)ᵀ·V]`, evaluated right to left (linear in token count).
pub fn hamming_scores_linear(q: &SpikeTensor, k: &SpikeTensor, v: &SpikeTensor) -> Result<Scores> {
    let (lq, lk, d) = check_qkv(q, k, v)?;
    let mut kv = vec![0i64; d * d];
    let mut ops = 0u64;
    for m in 0..lk {
        let ks = signs(k, m, d);
        for j in v.row_ones(m) {
            for (i, &s) in ks.iter().enumerate() {
                kv[i * d + j] += s;
            }
            ops += d as u64;
        }
    }
    let mut out = vec![0i64; lq * d];
    for l in 0..lq {
        let qs = signs(q, l, d);
        let dst = &mut out[l * d..(l + 1) * d];
        for (i, &s) in qs.iter().enumerate() {
            for (o, &kvij) in dst.iter_mut().zip(&kv[i * d..(i + 1) * d]) {
                *o += s * kvij;
            }
        }
        ops += (d * d) as u64;
    }
    Ok(Scores {
        values: IntTensor::new(vec![lq, d], out)?,
        acc_ops: ops,
    })
}

/// `[(2Q−1)·(2K−1)ᵀ]·V`, evaluated left to right (quadratic in token count).
pub fn hamming_scores_quadratic(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
) -> Result<Scores> {
    let (lq, lk, d) = check_qkv(q, k, v)?;
    let scores = signed_binary_matmul(q, &k.transpose_axes(&[1, 0])?)?;
    let mut ops = (lq * lk * d) as u64;
    let mut out = vec![0i64; lq * d];
    for l in 0..lq {
        let dst = &mut out[l * d..(l + 1) * d];
        for m in 0..lk {
            let s = scores.data()[l * lk + m];
            for j in v.row_ones(m) {
                dst[j] += s;
                ops += 1;
            }
        }
    }
    Ok(Scores {
        values: IntTensor::new(vec![lq, d], out)?,
        acc_ops: ops,
    })
}

/// Score matrix `(2Q−1)(2K−1)ᵀ`, `[Lq×Lk]`.
pub fn hamming_score_matrix(q: &SpikeTensor, k: &SpikeTensor) -> Result<IntTensor> {
    signed_binary_matmul(q, &k.transpose_axes(&[1, 0])?)
}

/// `Q·(Kᵀ·V)` on `{0,1}` operands, skipping zeros everywhere.
pub fn dot_scores_linear(q: &SpikeTensor, k: &SpikeTensor, v: &SpikeTensor) -> Result<Scores> {
    let (lq, lk, d) = check_qkv(q, k, v)?;
    let mut kv = vec![0i64; d * d];
    let mut ops = 0u64;
    for m in 0..lk {
        let vs: Vec<usize> = v.row_ones(m).collect();
        for i in k.row_ones(m) {
            for &j in &vs {
                kv[i * d + j] += 1;
            }
            ops += vs.len() as u64;
        }
    }
    let mut out = vec![0i64; lq * d];
    for l in 0..lq {
        let dst = &mut out[l * d..(l + 1) * d];
        for i in q.row_ones(l) {
            for (o, &kvij) in dst.iter_mut().zip(&kv[i * d..(i + 1) * d]) {
                *o += kvij;
            }
            ops += d as u64;
        }
    }
    Ok(Scores {
        values: IntTensor::new(vec![lq, d], out)?,
        acc_ops: ops,
    })
}

/// `(Q·Kᵀ)·V` on `{0,1}` operands.
pub fn dot_scores_quadratic(q: &SpikeTensor, k: &SpikeTensor, v: &SpikeTensor) -> Result<Scores> {
    let (lq, lk, d) = check_qkv(q, k, v)?;
    let scores = binary_matmul(q, &k.transpose_axes(&[1, 0])?)?;
    let mut ops = q.count_ones() * lk as u64;
    let mut out = vec![0i64; lq * d];
    for l in 0..lq {
        let dst = &mut out[l * d..(l + 1) * d];
        for m in 0..lk {
            let s = scores.data()[l * lk + m];
            for j in v.row_ones(m) {
                dst[j] += s;
                ops += 1;
            }
        }
    }
    Ok(Scores {
        values: IntTensor::new(vec![lq, d], out)?,
        acc_ops: ops,
    })
}

/// Single-step spiking from rest: fires where `scale · pre > threshold`.
pub fn fire(pre: &IntTensor, scale: f64, threshold: f64) -> Result<SpikeTensor> {
    let bits: Vec<bool> = pre
        .data()
        .iter()
        .map(|&p| p as f64 * scale > threshold)
        .collect();
    SpikeTensor::from_bools(pre.dims().to_vec(), &bits)
}

/// Dot-product spike-driven self-attention `SN_s(Q(KᵀV))` with unit `u_th`.
pub fn sdsa_dot(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
    threshold_scale: f64,
) -> Result<SpikeTensor> {
    if !(threshold_scale > 0.0) {
        return Err(Error::Domain(format!(
            "threshold scale {threshold_scale} must be positive"
        )));
    }
    fire(&dot_scores_linear(q, k, v)?.values, 1.0, threshold_scale)
}

/// Hamming attention: fires where `score_scale · (2Q−1)[(2K−1)ᵀV] > 1`.
/// The conventional `score_scale` is `1/(2·D_h)`.
pub fn sdha(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
    score_scale: f64,
) -> Result<SpikeTensor> {
    fire(&hamming_scores_linear(q, k, v)?.values, score_scale, 1.0)
}

/// [`sdha`] evaluated in the quadratic order.
pub fn sdha_quadratic(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
    score_scale: f64,
) -> Result<SpikeTensor> {
    fire(&hamming_scores_quadratic(q, k, v)?.values, score_scale, 1.0)
}

/// `1/(2·D_h)` for spikes of width `head_dim`.
pub fn default_hamming_scale(head_dim: usize) -> f64 {
    1.0 / (2 * head_dim) as f64
}

/// Hamming cross-attention reading a memory of earlier steps: queries are
/// the `N` tokens of the current step, keys and values are the tokens of
/// the `T−1` previous steps (each `[N×D]`), stacked in step order.
pub fn cross_sdha(
    query: &SpikeTensor,
    memory_k: &[SpikeTensor],
    memory_v: &[SpikeTensor],
    score_scale: f64,
) -> Result<SpikeTensor> {
    if memory_k.is_empty() || memory_v.is_empty() {
        return Err(Error::EmptyMemory);
    }
    if memory_k.len() != memory_v.len() {
        return Err(shape_err(format!(
            "{} key steps but {} value steps",
            memory_k.len(),
            memory_v.len()
        )));
    }
    if memory_k
        .iter()
        .chain(memory_v)
        .any(|m| m.dims() != query.dims())
    {
        return Err(shape_err(format!(
            "every memory step must match the query shape {}",
            query.shape()
        )));
    }
    let k = SpikeTensor::concat_rows(&memory_k.iter().collect::<Vec<_>>())?;
    let v = SpikeTensor::concat_rows(&memory_v.iter().collect::<Vec<_>>())?;
    sdha(query, &k, &v, score_scale)
}
