//! Series transforms and the pairwise dissimilarity matrix: forward
//! difference, one-sided FFT magnitude spectrum, and dynamic time warping,
//! composed per corpus as derivative -> spectrum -> DTW.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Processing stage of a transformed series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Raw,
    Derivative,
    Spectrum,
}

/// A series somewhere along the transform pipeline, tagged with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries<T: Scalar> {
    pub values: Vec<T>,
    pub origin_id: String,
    pub stage: Stage,
}

impl<T: Scalar> FeatureSeries<T> {
    pub fn raw(values: Vec<T>, origin_id: impl Into<String>) -> Self {
        FeatureSeries {
            values,
            origin_id: origin_id.into(),
            stage: Stage::Raw,
        }
    }

    pub fn differentiate(&self) -> Result<FeatureSeries<T>> {
        Ok(FeatureSeries {
            values: differentiate(&self.values)?,
            origin_id: self.origin_id.clone(),
            stage: Stage::Derivative,
        })
    }

    pub fn spectrum(&self) -> Result<FeatureSeries<T>> {
        Ok(FeatureSeries {
            values: spectrum(&self.values)?,
            origin_id: self.origin_id.clone(),
            stage: Stage::Spectrum,
        })
    }
}

/// Forward difference: `out[j] = in[j+1] - in[j]`, length `m - 1`.
pub fn differentiate<T: Scalar>(series: &[T]) -> Result<Vec<T>> {
    if series.len() < 2 {
        return Err(Error::InvalidSeries(format!(
            "derivative requires at least 2 samples, got {}",
            series.len()
        )));
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

/// In-place iterative radix-2 FFT. `buf.len()` must be a power of two.
pub fn fft_in_place<T: Scalar>(buf: &mut [Complex<T>]) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    if n <= 1 {
        return;
    }

    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }

    let mut len = 2usize;
    while len <= n {
        let ang = -T::lit(2.0) * T::pi() / T::from_usize(len).unwrap();
        let w_len = Complex::new(ang.cos(), ang.sin());
        for chunk in buf.chunks_mut(len) {
            let mut w = Complex::new(T::one(), T::zero());
            let (lo, hi) = chunk.split_at_mut(len / 2);
            for k in 0..len / 2 {
                let u = lo[k];
                let v = hi[k] * w;
                lo[k] = u + v;
                hi[k] = u - v;
                w *= w_len;
            }
        }
        len <<= 1;
    }
}

/// Next power of two >= `m`.
pub fn padded_len(m: usize) -> usize {
    m.next_power_of_two()
}

/// One-sided magnitude spectrum: the series is zero-padded to the next power
/// of two, transformed, and the magnitudes of the first `m/2 + 1` bins are
/// returned (`m` = original length).
pub fn spectrum<T: Scalar>(series: &[T]) -> Result<Vec<T>> {
    if series.is_empty() {
        return Err(Error::InvalidSeries("spectrum of empty series".into()));
    }
    let m = series.len();
    let padded = padded_len(m);
    let mut buf: Vec<Complex<T>> = series
        .iter()
        .map(|&v| Complex::new(v, T::zero()))
        .chain(std::iter::repeat_n(Complex::new(T::zero(), T::zero()), padded - m))
        .collect();
    fft_in_place(&mut buf);
    Ok(buf[..m / 2 + 1].iter().map(|c| c.norm()).collect())
}

/// Derivative followed by magnitude spectrum; the per-series transform used
/// before any DTW comparison.
pub fn trend_spectrum<T: Scalar>(series: &[T]) -> Result<Vec<T>> {
    spectrum(&differentiate(series)?)
}

/// Dynamic time warping distance with absolute-difference cell cost and
/// unit steps, computed over the full cost matrix (no window constraint).
pub fn dtw_distance<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidSeries("dtw of empty series".into()));
    }
    let m = y.len();
    let inf = T::infinity();
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    prev[0] = T::zero();
    for &xi in x {
        cur[0] = inf;
        for (j, &yj) in y.iter().enumerate() {
            let cost = (xi - yj).abs();
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Symmetric pairwise distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DistanceMatrix<T: Scalar> {
    n: usize,
    entries: Vec<T>,
    pub ids: Vec<String>,
}

impl<T: Scalar> DistanceMatrix<T> {
    pub fn new(n: usize, entries: Vec<T>, ids: Vec<String>) -> Result<Self> {
        if entries.len() != n * n || ids.len() != n {
            return Err(Error::DistanceMatrix(format!(
                "shape mismatch: n={n}, {} entries, {} ids",
                entries.len(),
                ids.len()
            )));
        }
        for i in 0..n {
            if entries[i * n + i] != T::zero() {
                return Err(Error::DistanceMatrix(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !v.is_finite() || v < T::zero() {
                    return Err(Error::DistanceMatrix(format!(
                        "entry ({i},{j}) = {v} is negative or non-finite"
                    )));
                }
                if v != entries[j * n + i] {
                    return Err(Error::DistanceMatrix(format!("asymmetry at ({i},{j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, entries, ids })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.n + j]
    }

    /// CSV with an id header row and a leading id column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for id in &self.ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for i in 0..self.n {
            out.push_str(&self.ids[i]);
            for j in 0..self.n {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// DTW distances between every pair of (already transformed) series. The
/// upper triangle is evaluated in parallel; output does not depend on
/// evaluation order.
pub fn pairwise_matrix<T: Scalar>(
    corpus: &[Vec<T>],
    ids: Vec<String>,
) -> Result<DistanceMatrix<T>> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::DistanceMatrix(format!(
            "need at least 2 series, got {n}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let dists: Vec<(usize, usize, T)> = pairs
        .par_iter()
        .map(|&(i, j)| dtw_distance(&corpus[i], &corpus[j]).map(|d| (i, j, d)))
        .collect::<Result<_>>()?;

    let mut entries = vec![T::zero(); n * n];
    for (i, j, d) in dists {
        entries[i * n + j] = d;
        entries[j * n + i] = d;
    }
    DistanceMatrix::new(n, entries, ids)
}

/// Transform every raw series (derivative then spectrum) and build the
/// pairwise DTW matrix over the transformed corpus.
pub fn corpus_distance_matrix<T: Scalar>(
    raw: &[Vec<T>],
    ids: Vec<String>,
) -> Result<DistanceMatrix<T>> {
    let transformed: Vec<Vec<T>> = raw
        .iter()
        .map(|s| trend_spectrum(s))
        .collect::<Result<_>>()?;
    pairwise_matrix(&transformed, ids)
}
