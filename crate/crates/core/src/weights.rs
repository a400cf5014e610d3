//! Geographic kernel weights, attribute-similarity weights and their convex mix.
//!
//! Attribute similarity between the regression point `i` and a neighbour `l`
//! for covariate `j` is `0.5^((x_l - x_i) / sd)^2`, where `sd` is the spread of
//! covariate `j` over the geographic neighbourhood of `i`. A neighbour whose
//! value differs by one neighbourhood standard deviation gets similarity 0.5.
//! Attribute weights are only ever non-zero on the geographic support.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{MsgwrError, Result};

/// Replacement for a zero neighbourhood standard deviation.
pub const DEFAULT_RHO: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdKind {
    /// Divide by the neighbourhood size.
    #[default]
    Population,
    /// Divide by the neighbourhood size minus one.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub rho: f64,
    pub sd: SdKind,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            sd: SdKind::Population,
        }
    }
}

/// Adaptive bi-square kernel value at distance `d` for radius `radius`.
#[inline]
pub fn bisquare(d: f64, radius: f64) -> f64 {
    if d < radius {
        let z = d / radius;
        let t = 1.0 - z * z;
        t * t
    } else {
        0.0
    }
}

/// Similarity on the 0.5-base Gaussian curve for a raw difference `delta`.
#[inline]
pub fn similarity(delta: f64, sd: f64) -> f64 {
    let z = delta / sd;
    (-(z * z)).exp2()
}

/// Standard deviation of `values` with the zero-spread substitution applied.
pub fn neighborhood_sd(values: impl Iterator<Item = f64> + Clone, cfg: &SimilarityConfig) -> f64 {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), x| (c + 1, s + x));
    if count == 0 {
        return cfg.rho;
    }
    let mean = sum / count as f64;
    let ss: f64 = values.map(|x| (x - mean) * (x - mean)).sum();
    let denom = match cfg.sd {
        SdKind::Population => count as f64,
        SdKind::Sample if count > 1 => (count - 1) as f64,
        SdKind::Sample => 1.0,
    };
    let sd = (ss / denom).sqrt();
    if sd > 0.0 {
        sd
    } else {
        cfg.rho
    }
}

pub fn geographic_weights(row: &[f64], radius: f64) -> Result<Vec<f64>> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(MsgwrError::Parameter(format!(
            "kernel radius must be positive, got {radius}"
        )));
    }
    Ok(row.iter().map(|&d| bisquare(d, radius)).collect())
}

/// Indices with strictly positive weight.
pub fn support(w: &[f64]) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(l, _)| l)
        .collect()
}

/// Attribute similarity weights of covariate values `x_j` around point `i`,
/// restricted to the neighbourhood `mask` (indices, normally including `i`).
pub fn attribute_weights(
    x_j: &[f64],
    i: usize,
    mask: &[usize],
    cfg: &SimilarityConfig,
) -> Result<Vec<f64>> {
    if mask.is_empty() {
        return Err(MsgwrError::Calibration(format!(
            "empty neighbourhood at point {i}; bandwidth too small"
        )));
    }
    if i >= x_j.len() || mask.iter().any(|&l| l >= x_j.len()) {
        return Err(MsgwrError::Parameter("neighbourhood index out of range".into()));
    }
    if let Some(l) = mask.iter().find(|&&l| !x_j[l].is_finite()) {
        return Err(MsgwrError::Input(format!("non-finite covariate value at row {l}")));
    }
    let sd = neighborhood_sd(mask.iter().map(|&l| x_j[l]), cfg);
    let xi = x_j[i];
    let mut w = vec![0.0; x_j.len()];
    for &l in mask {
        w[l] = similarity(x_j[l] - xi, sd);
    }
    Ok(w)
}

/// Pooled similarity used by the single-scale similarity model: the
/// per-covariate absolute standardized differences are averaged (skipping
/// the intercept column 0) and the mean passed through the same curve.
pub fn pooled_attribute_weights(
    x: ArrayView2<'_, f64>,
    i: usize,
    mask: &[usize],
    cfg: &SimilarityConfig,
) -> Result<Vec<f64>> {
    if mask.is_empty() {
        return Err(MsgwrError::Calibration(format!(
            "empty neighbourhood at point {i}; bandwidth too small"
        )));
    }
    let n = x.nrows();
    let mut w = vec![0.0; n];
    let dist = pooled_distances(x, i, mask, cfg);
    for (&l, d) in mask.iter().zip(dist) {
        w[l] = (-(d * d)).exp2();
    }
    Ok(w)
}

/// Averaged standardized distance from `i` to every index in `mask`.
pub(crate) fn pooled_distances(
    x: ArrayView2<'_, f64>,
    i: usize,
    mask: &[usize],
    cfg: &SimilarityConfig,
) -> Vec<f64> {
    let p = x.ncols();
    let mut acc = vec![0.0; mask.len()];
    if p <= 1 {
        return acc;
    }
    for j in 1..p {
        let col = x.column(j);
        let sd = neighborhood_sd(mask.iter().map(|&l| col[l]), cfg);
        let xi = col[i];
        for (a, &l) in acc.iter_mut().zip(mask) {
            *a += (col[l] - xi).abs() / sd;
        }
    }
    let k = (p - 1) as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    acc
}

pub fn combine_weights(w_geo: &[f64], w_attr: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if w_geo.len() != w_attr.len() {
        return Err(MsgwrError::Parameter(format!(
            "weight vectors differ in length ({} vs {})",
            w_geo.len(),
            w_attr.len()
        )));
    }
    Ok(w_geo
        .iter()
        .zip(w_attr)
        .map(|(&g, &a)| mix(g, a, alpha))
        .collect())
}

#[inline]
pub(crate) fn mix(g: f64, a: f64, alpha: f64) -> f64 {
    alpha * g + (1.0 - alpha) * a
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(MsgwrError::Parameter(format!("alpha {alpha} outside [0, 1]")))
    }
}

/// Geographic, attribute and combined weights of one covariate at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTriple {
    pub w_geo: Vec<f64>,
    pub w_attr: Vec<f64>,
    pub w_combined: Vec<f64>,
    pub alpha: f64,
    pub covariate_index: usize,
    pub point_index: usize,
}

impl WeightTriple {
    /// Builds the triple from a distance row and an explicit kernel radius.
    pub fn build(
        row: &[f64],
        x_j: &[f64],
        point_index: usize,
        covariate_index: usize,
        radius: f64,
        alpha: f64,
        cfg: &SimilarityConfig,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let w_geo = geographic_weights(row, radius)?;
        let mask = support(&w_geo);
        let w_attr = attribute_weights(x_j, point_index, &mask, cfg)?;
        let w_combined = combine_weights(&w_geo, &w_attr, alpha)?;
        Ok(Self {
            w_geo,
            w_attr,
            w_combined,
            alpha,
            covariate_index,
            point_index,
        })
    }
}
