//! Uniform angle bins with one-hot labels, and expectation decoding of a bin
//! distribution back to a continuous angle. Everything here is in degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[min_deg, max_deg]` into `n_bins` bins.
///
/// Bins are half-open `[lo, hi)` except the last, which is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BinSchemeDef", into = "BinSchemeDef")]
pub struct BinScheme {
    min_deg: f64,
    max_deg: f64,
    n_bins: usize,
    width: f64,
    centers: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BinSchemeDef {
    min_deg: f64,
    max_deg: f64,
    n_bins: usize,
}

impl TryFrom<BinSchemeDef> for BinScheme {
    type Error = Error;

    fn try_from(d: BinSchemeDef) -> Result<Self> {
        make_bin_scheme(d.min_deg, d.max_deg, d.n_bins)
    }
}

impl From<BinScheme> for BinSchemeDef {
    fn from(s: BinScheme) -> Self {
        Self {
            min_deg: s.min_deg,
            max_deg: s.max_deg,
            n_bins: s.n_bins,
        }
    }
}

pub fn make_bin_scheme(min_deg: f64, max_deg: f64, n_bins: usize) -> Result<BinScheme> {
    if !min_deg.is_finite() || !max_deg.is_finite() || !(min_deg < max_deg) {
        return Err(Error::invalid(format!(
            "bin range must satisfy min < max, got [{min_deg}, {max_deg}]"
        )));
    }
    if n_bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {n_bins}")));
    }
    let width = (max_deg - min_deg) / n_bins as f64;
    let centers = (0..n_bins)
        .map(|i| min_deg + (i as f64 + 0.5) * width)
        .collect();
    Ok(BinScheme {
        min_deg,
        max_deg,
        n_bins,
        width,
        centers,
    })
}

impl BinScheme {
    /// MPIIGaze annotation range: 28 bins of 3 degrees over [-42, 42].
    pub fn mpiigaze() -> Self {
        make_bin_scheme(-42.0, 42.0, 28).expect("valid constant scheme")
    }

    /// Gaze360 annotation range: 90 bins of 4 degrees over [-180, 180].
    pub fn gaze360() -> Self {
        make_bin_scheme(-180.0, 180.0, 90).expect("valid constant scheme")
    }

    pub fn min_deg(&self) -> f64 {
        self.min_deg
    }

    pub fn max_deg(&self) -> f64 {
        self.max_deg
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Lower edge of bin `i`.
    pub fn lower_edge(&self, i: usize) -> f64 {
        self.min_deg + i as f64 * self.width
    }

    pub fn one_hot(&self, index: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_bins];
        v[index] = 1.0;
        v
    }
}

/// Classification and regression targets for one angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinnedTarget {
    pub bin_index: usize,
    pub continuous_deg: f64,
    pub n_bins: usize,
}

impl BinnedTarget {
    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_bins];
        v[self.bin_index] = 1.0;
        v
    }
}

/// Bins an angle, clamping out-of-range values into the edge bins. The
/// continuous value is kept as given.
pub fn bin_target(angle_deg: f64, scheme: &BinScheme) -> Result<BinnedTarget> {
    if !angle_deg.is_finite() {
        return Err(Error::invalid(format!("cannot bin non-finite angle {angle_deg}")));
    }
    let last = scheme.n_bins - 1;
    let raw = ((angle_deg - scheme.min_deg) / scheme.width).floor();
    let mut index = if raw <= 0.0 { 0 } else { (raw as usize).min(last) };
    // Keep the index consistent with `lower_edge` when the division rounds
    // across an edge.
    if index > 0 && angle_deg < scheme.lower_edge(index) {
        index -= 1;
    } else if index < last && angle_deg >= scheme.lower_edge(index + 1) {
        index += 1;
    }
    Ok(BinnedTarget {
        bin_index: index,
        continuous_deg: angle_deg,
        n_bins: scheme.n_bins,
    })
}

/// Probability-weighted mean of the bin centers.
pub fn decode_expectation(probabilities: &[f64], scheme: &BinScheme) -> Result<f64> {
    if probabilities.len() != scheme.n_bins {
        return Err(Error::invalid(format!(
            "expected {} probabilities, got {}",
            scheme.n_bins,
            probabilities.len()
        )));
    }
    if probabilities.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid("probabilities must be finite and non-negative"));
    }
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(expectation(probabilities, &scheme.centers))
}

pub(crate) fn expectation(probabilities: &[f64], centers: &[f64]) -> f64 {
    probabilities.iter().zip(centers).map(|(p, c)| p * c).sum()
}
