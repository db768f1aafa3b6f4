//! Sign-random-projection binary embeddings and the similarity functions
//! relating Hamming similarity of the codes to cosine similarity of the
//! real vectors.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::rng::{derive_seed, gaussian_vec, seeded, unit_vector};
use crate::tensor::{RealTensor, SpikeTensor};

/// Gaussian projection `A ∈ ℝ^{D×C}` with i.i.d. `N(0,1)` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMatrix {
    a: RealTensor,
    seed: u64,
}

impl ProjectionMatrix {
    /// Entries are drawn row-major from `seeded(seed)`.
    pub fn gaussian(code_len: usize, input_dim: usize, seed: u64) -> Result<Self> {
        let data = gaussian_vec(&mut seeded(seed), code_len * input_dim);
        Ok(Self {
            a: RealTensor::new(vec![code_len, input_dim], data)?,
            seed,
        })
    }

    pub fn from_tensor(a: RealTensor, seed: u64) -> Result<Self> {
        if a.shape().rank() != 2 {
            return Err(shape_err(format!(
                "projection must be rank 2, got {}",
                a.shape()
            )));
        }
        Ok(Self { a, seed })
    }

    pub fn code_len(&self) -> usize {
        self.a.dims()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.a.dims()[1]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &RealTensor {
        &self.a
    }
}

/// Bit `d` is set iff `(A·x)_d > 0`; zero projections map to 0.
pub fn binarize(a: &ProjectionMatrix, x: &RealTensor) -> Result<SpikeTensor> {
    binarize_slice(a, x.data())
}

fn binarize_slice(a: &ProjectionMatrix, x: &[f64]) -> Result<SpikeTensor> {
    let c = a.input_dim();
    if x.len() != c {
        return Err(shape_err(format!(
            "input of length {} for projection width {c}",
            x.len()
        )));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroVector);
    }
    let rows = a.matrix().data().chunks_exact(c);
    let bits: Vec<bool> = rows
        .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() > 0.0)
        .collect();
    SpikeTensor::from_bools(vec![a.code_len()], &bits)
}

fn same_shape(q: &SpikeTensor, k: &SpikeTensor) -> Result<()> {
    if q.shape() != k.shape() {
        return Err(shape_err(format!("{} vs {}", q.shape(), k.shape())));
    }
    Ok(())
}

/// `1 − (#differing bits)/D`.
pub fn hamming_similarity(q: &SpikeTensor, k: &SpikeTensor) -> Result<f64> {
    same_shape(q, k)?;
    let differing: u64 = q
        .words()
        .iter()
        .zip(k.words())
        .map(|(a, b)| u64::from((a ^ b).count_ones()))
        .sum();
    Ok(1.0 - differing as f64 / q.numel() as f64)
}

/// The ±1 rewrite `1/2 + (1/2D)·Σ(2q−1)(2k−1)`.
///
/// The signed sum is expanded as `4|q∧k| − 2|q| − 2|k| + D`, so only AND
/// counts are used and no XOR path is shared with [`hamming_similarity`].
pub fn hamming_identity(q: &SpikeTensor, k: &SpikeTensor) -> Result<f64> {
    same_shape(q, k)?;
    let d = q.numel() as i64;
    let both: i64 = q
        .words()
        .iter()
        .zip(k.words())
        .map(|(a, b)| i64::from((a & b).count_ones()))
        .sum();
    let signed = 4 * both - 2 * q.count_ones() as i64 - 2 * k.count_ones() as i64 + d;
    Ok(0.5 + signed as f64 / (2 * d) as f64)
}

pub fn cosine_similarity(q: &RealTensor, k: &RealTensor) -> Result<f64> {
    cosine_slices(q.data(), k.data())
}

fn cosine_slices(q: &[f64], k: &[f64]) -> Result<f64> {
    if q.len() != k.len() {
        return Err(shape_err(format!("lengths {} vs {}", q.len(), k.len())));
    }
    let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nk = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nq == 0.0 || nk == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
    Ok((dot / (nq * nk)).clamp(-1.0, 1.0))
}

/// `g(x) = 1 − arccos(x)/π`, the expected agreement rate of sign codes of
/// two vectors with cosine `x`.
pub fn g_map(x: f64) -> Result<f64> {
    if !(x.abs() <= 1.0 + 1e-12) {
        return Err(Error::Domain(format!("g_map argument {x} outside [-1, 1]")));
    }
    Ok(1.0 - x.clamp(-1.0, 1.0).acos() / PI)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRow {
    pub code_len: usize,
    pub num_pairs: usize,
    pub mean_error: f64,
    pub max_error: f64,
    /// Standard error of `mean_error`.
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCurve {
    pub rows: Vec<ErrorRow>,
}

impl ErrorCurve {
    pub const CSV_HEADER: &'static str = "D,num_pairs,mean_error,max_error";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.code_len, r.num_pairs, r.mean_error, r.max_error
            );
        }
        out
    }

    /// True when each mean error is below its predecessor plus `sigmas`
    /// combined standard errors.
    pub fn decreasing_within(&self, sigmas: f64) -> bool {
        self.rows.windows(2).all(|w| {
            let slack = sigmas * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            w[1].mean_error < w[0].mean_error + slack
        })
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].mean_error < w[0].mean_error)
    }
}

/// Random unit-vector pairs used by the experiments: for pair `i`, `q` then
/// `k` are drawn from one `seeded(seed)` stream in order.
pub fn sample_pairs(dim: usize, num_pairs: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = seeded(seed);
    (0..num_pairs)
        .map(|_| {
            let q = unit_vector(&mut rng, dim);
            let k = unit_vector(&mut rng, dim);
            (q, k)
        })
        .collect()
}

/// Seed of the projection used for the `index`-th code length.
pub fn projection_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64 + 1)
}

fn pair_errors(pairs: &[(Vec<f64>, Vec<f64>)], a: &ProjectionMatrix) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|(q, k)| {
            let f_c = cosine_slices(q, k)?;
            let f_h = hamming_similarity(&binarize_slice(a, q)?, &binarize_slice(a, k)?)?;
            Ok((f_h - g_map(f_c)?).abs())
        })
        .collect()
}

/// Mean and max of `|f_H − g(f_C)|` over `num_pairs` random pairs in `ℝ^C`
/// for each code length, with a fresh projection per length.
pub fn jl_error_experiment(
    input_dim: usize,
    code_lens: &[usize],
    num_pairs: usize,
    seed: u64,
) -> Result<ErrorCurve> {
    if input_dim < 2 {
        return Err(Error::Config(format!(
            "input dimension {input_dim} must be at least 2"
        )));
    }
    if code_lens.is_empty() || num_pairs == 0 {
        return Err(Error::Config(
            "need at least one code length and one pair".into(),
        ));
    }
    let pairs = sample_pairs(input_dim, num_pairs, seed);
    let mut order: Vec<(usize, usize)> = code_lens.iter().copied().enumerate().collect();
    order.sort_by_key(|&(_, d)| d);
    let mut rows = Vec::with_capacity(order.len());
    for (index, d) in order {
        let a = ProjectionMatrix::gaussian(d, input_dim, projection_seed(seed, index))?;
        rows.push(summarize(d, &pair_errors(&pairs, &a)?));
    }
    Ok(ErrorCurve { rows })
}

/// Same statistic over caller-supplied pairs (e.g. `q = k`).
pub fn pair_error_row(pairs: &[(Vec<f64>, Vec<f64>)], a: &ProjectionMatrix) -> Result<ErrorRow> {
    Ok(summarize(a.code_len(), &pair_errors(pairs, a)?))
}

fn summarize(code_len: usize, errors: &[f64]) -> ErrorRow {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let max = errors.iter().copied().fold(0.0, f64::max);
    let var = if errors.len() > 1 {
        errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    ErrorRow {
        code_len,
        num_pairs: errors.len(),
        mean_error: mean,
        max_error: max,
        std_error: (var / n).sqrt(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcentrationResult {
    pub violation_rate: f64,
    /// `2·exp(−δ²D)`; may exceed 1, in which case it is vacuous.
    pub bound: f64,
    /// Three binomial standard deviations at rate `min(bound, 1)`.
    pub slack: f64,
}

impl ConcentrationResult {
    pub fn holds(&self) -> bool {
        self.violation_rate <= self.bound + self.slack
    }
}

/// Fraction of pairs with `|f_H − g(f_C)| > δ`, against `2e^{−δ²D}`.
pub fn concentration_check(
    input_dim: usize,
    code_len: usize,
    num_pairs: usize,
    delta: f64,
    seed: u64,
) -> Result<ConcentrationResult> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta {delta} must be positive")));
    }
    if num_pairs == 0 || input_dim < 2 {
        return Err(Error::Config(
            "need at least one pair in dimension >= 2".into(),
        ));
    }
    let pairs = sample_pairs(input_dim, num_pairs, seed);
    let a = ProjectionMatrix::gaussian(code_len, input_dim, projection_seed(seed, 0))?;
    let errors = pair_errors(&pairs, &a)?;
    let violations = errors.iter().filter(|&&e| e > delta).count();
    let bound = 2.0 * (-delta * delta * code_len as f64).exp();
    let p = bound.min(1.0);
    Ok(ConcentrationResult {
        violation_rate: violations as f64 / num_pairs as f64,
        bound,
        slack: 3.0 * (p * (1.0 - p) / num_pairs as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(v: &[u8]) -> SpikeTensor {
        SpikeTensor::from_fn(vec![v.len()], |i| v[i] == 1).unwrap()
    }

    #[test]
    fn binarize_hand_case() {
        let a = ProjectionMatrix::from_tensor(
            RealTensor::new(vec![3, 1], vec![1.0, -2.0, 3.0]).unwrap(),
            0,
        )
        .unwrap();
        let x = RealTensor::new(vec![1], vec![2.0]).unwrap();
        assert_eq!(binarize(&a, &x).unwrap(), bits(&[1, 0, 1]));
    }

    #[test]
    fn binarize_scale_and_sign() {
        let a = ProjectionMatrix::gaussian(40, 5, 11).unwrap();
        let x = RealTensor::new(vec![5], vec![0.3, -1.0, 2.0, 0.1, -0.7]).unwrap();
        let b = binarize(&a, &x).unwrap();
        assert_eq!(binarize(&a, &x.scale(2.0).unwrap()).unwrap(), b);
        assert_eq!(
            binarize(&a, &x.scale(-1.0).unwrap()).unwrap(),
            b.complement()
        );
    }

    #[test]
    fn binarize_rejects_zero() {
        let a = ProjectionMatrix::gaussian(4, 2, 1).unwrap();
        let x = RealTensor::zeros(vec![2]).unwrap();
        assert!(matches!(binarize(&a, &x), Err(Error::ZeroVector)));
    }

    #[test]
    fn hamming_hand_cases() {
        assert_eq!(
            hamming_similarity(&bits(&[1, 0, 1, 0]), &bits(&[1, 0, 1, 0])).unwrap(),
            1.0
        );
        assert_eq!(
            hamming_similarity(&bits(&[1, 0, 1, 0]), &bits(&[0, 1, 0, 1])).unwrap(),
            0.0
        );
        assert_eq!(
            hamming_similarity(&bits(&[1, 1, 0, 0]), &bits(&[1, 0, 0, 0])).unwrap(),
            0.75
        );
        assert_eq!(
            hamming_identity(&bits(&[1, 1, 0, 0]), &bits(&[1, 0, 0, 0])).unwrap(),
            0.75
        );
        assert!(hamming_similarity(&bits(&[1]), &bits(&[1, 0])).is_err());
    }

    #[test]
    fn cosine_hand_cases() {
        let q = RealTensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let k = RealTensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let e2 = RealTensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        assert!((cosine_similarity(&q, &q).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&q, &e2).unwrap(), 0.0);
        assert!((cosine_similarity(&q, &k).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(cosine_similarity(&q, &RealTensor::zeros(vec![2]).unwrap()).is_err());
    }

    #[test]
    fn g_map_points() {
        assert_eq!(g_map(1.0).unwrap(), 1.0);
        assert_eq!(g_map(-1.0).unwrap(), 0.0);
        assert!((g_map(0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(g_map(1.0 + 1e-13).unwrap(), 1.0);
        assert!(matches!(g_map(1.01), Err(Error::Domain(_))));
    }

    #[test]
    fn identical_pair_has_zero_error() {
        let pairs = sample_pairs(8, 1, 5);
        let same = vec![(pairs[0].0.clone(), pairs[0].0.clone())];
        let a = ProjectionMatrix::gaussian(32, 8, 9).unwrap();
        let row = pair_error_row(&same, &a).unwrap();
        assert_eq!(row.mean_error, 0.0);
        assert_eq!(row.num_pairs, 1);
    }

    #[test]
    fn concentration_trivial_cases() {
        let r = concentration_check(16, 32, 200, 1.0, 3).unwrap();
        assert_eq!(r.violation_rate, 0.0);
        let vacuous = concentration_check(16, 16, 200, 0.05, 3).unwrap();
        assert!(vacuous.bound > 1.0 && vacuous.holds());
        assert!(concentration_check(16, 16, 10, 0.0, 3).is_err());
    }

    #[test]
    fn experiment_rejects_bad_arguments() {
        assert!(jl_error_experiment(1, &[8], 10, 0).is_err());
        assert!(jl_error_experiment(8, &[], 10, 0).is_err());
        assert!(jl_error_experiment(8, &[8], 0, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let curve = jl_error_experiment(8, &[32, 8], 20, 1).unwrap();
        let csv = curve.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "D,num_pairs,mean_error,max_error");
        assert!(lines[1].starts_with("8,20,"));
        assert!(lines[2].starts_with("32,20,"));
    }
}
