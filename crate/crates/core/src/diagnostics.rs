//! Goodness-of-fit metrics and global Moran's I on residuals.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{MsgwrError, Result};
use crate::geometry::NeighborTable;
use crate::model_selection::aicc;

pub const DEFAULT_MORAN_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricBundle {
    pub r2: f64,
    pub adj_r2: f64,
    /// NaN when the corrected criterion is undefined for this complexity.
    pub aicc: f64,
    pub rss: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Metrics of `fitted` against `y` for a model with `enp_model` effective
/// parameters.
pub fn fit_metrics(y: &[f64], fitted: &[f64], enp_model: f64) -> Result<MetricBundle> {
    let n = y.len();
    if fitted.len() != n || n == 0 {
        return Err(MsgwrError::Parameter("metric inputs differ in length".into()));
    }
    let nf = n as f64;
    if !(nf > enp_model + 1.0) {
        return Err(MsgwrError::Calibration(format!(
            "n = {n} must exceed the effective number of parameters plus one ({enp_model:.3})"
        )));
    }
    let mean = y.iter().sum::<f64>() / nf;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if tss == 0.0 {
        return Err(MsgwrError::Degenerate("response has zero total sum of squares; R² undefined".into()));
    }
    let (mut rss, mut abs) = (0.0, 0.0);
    for (a, b) in y.iter().zip(fitted) {
        let e = a - b;
        rss += e * e;
        abs += e.abs();
    }
    let r2 = 1.0 - rss / tss;
    let adj_r2 = 1.0 - (1.0 - r2) * (nf - 1.0) / (nf - enp_model - 1.0);
    let aicc = if rss > 0.0 {
        aicc(n, rss / nf, enp_model)?.unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    Ok(MetricBundle {
        r2,
        adj_r2,
        aicc,
        rss,
        mae: abs / nf,
        rmse: (rss / nf).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoranResult {
    #[serde(rename = "I")]
    pub i: f64,
    pub expected: f64,
    pub variance: f64,
    pub z: f64,
    pub p_value: f64,
    /// Pseudo p-value of the permutation test, when requested.
    pub p_permutation: Option<f64>,
    pub k: usize,
}

/// Row-standardized binary k-nearest-neighbour weights as sparse rows.
fn knn_rows(neighbors: &NeighborTable, k: usize) -> Vec<&[u32]> {
    (0..neighbors.len()).map(|i| neighbors.nearest(i, k)).collect()
}

fn statistic(rows: &[&[u32]], z: &[f64], k: usize) -> f64 {
    let w = 1.0 / k as f64;
    let num: f64 = rows
        .iter()
        .enumerate()
        .map(|(i, row)| z[i] * w * row.iter().map(|&l| z[l as usize]).sum::<f64>())
        .sum();
    let den: f64 = z.iter().map(|v| v * v).sum();
    // S0 = n for row-standardized weights, so the n / S0 factor is one
    num / den
}

/// Global Moran's I of `residuals` with k-NN weights over `neighbors`.
/// `permutations` adds a seeded permutation p-value.
pub fn morans_i(
    residuals: &[f64],
    neighbors: &NeighborTable,
    k: usize,
    permutations: Option<(usize, u64)>,
) -> Result<MoranResult> {
    let n = residuals.len();
    if n < 3 || neighbors.len() != n {
        return Err(MsgwrError::Parameter("Moran's I needs n >= 3 matching coordinates".into()));
    }
    if k == 0 || k > n - 1 {
        return Err(MsgwrError::Parameter(format!("neighbour count {k} outside [1, {}]", n - 1)));
    }
    let nf = n as f64;
    let mean = residuals.iter().sum::<f64>() / nf;
    let z: Vec<f64> = residuals.iter().map(|e| e - mean).collect();
    let m2: f64 = z.iter().map(|v| v * v).sum::<f64>() / nf;
    if !(m2 > 0.0) {
        return Err(MsgwrError::Degenerate("residuals are constant; Moran's I undefined".into()));
    }
    let rows = knn_rows(neighbors, k);
    let i_stat = statistic(&rows, &z, k);
    let expected = -1.0 / (nf - 1.0);

    // Moments under the normality assumption.
    let w = 1.0 / k as f64;
    let s0 = nf;
    // S1 = sum over ordered pairs of (w_il + w_li)^2 / 2; an edge present in
    // one direction only also covers its empty reverse pair.
    let mut s1 = 0.0;
    let mut col_sums = vec![0.0; n];
    for (i, row) in rows.iter().enumerate() {
        for &l in row.iter() {
            col_sums[l as usize] += w;
            let mutual = rows[l as usize].contains(&(i as u32));
            s1 += if mutual { 4.0 * w * w } else { 2.0 * w * w };
        }
    }
    s1 *= 0.5;
    let s2: f64 = (0..n).map(|i| (1.0 + col_sums[i]).powi(2)).sum();
    let variance = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0) - expected * expected;
    let zscore = (i_stat - expected) / variance.sqrt();
    let normal = Normal::standard();
    let p_value = (2.0 * (1.0 - normal.cdf(zscore.abs()))).clamp(f64::MIN_POSITIVE, 1.0);

    let p_permutation = permutations.map(|(draws, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm = z.clone();
        let obs = (i_stat - expected).abs();
        let extreme = (0..draws)
            .filter(|_| {
                perm.shuffle(&mut rng);
                (statistic(&rows, &perm, k) - expected).abs() >= obs
            })
            .count();
        (extreme + 1) as f64 / (draws + 1) as f64
    });
    Ok(MoranResult {
        i: i_stat,
        expected,
        variance,
        z: zscore,
        p_value,
        p_permutation,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pairwise_distances, Coordinates};
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(side: usize) -> NeighborTable {
        let pts: Vec<(f64, f64)> = (0..side * side).map(|p| ((p % side) as f64, (p / side) as f64)).collect();
        NeighborTable::new(&pairwise_distances(&Coordinates::from_pairs(&pts).unwrap()))
    }

    /// Dense-matrix Moran's I and moments.
    fn dense_oracle(e: &[f64], nb: &NeighborTable, k: usize) -> (f64, f64) {
        let n = e.len();
        let mut w = vec![vec![0.0; n]; n];
        for (i, row) in w.iter_mut().enumerate() {
            for &l in nb.nearest(i, k) {
                row[l as usize] = 1.0 / k as f64;
            }
        }
        let mean = e.iter().sum::<f64>() / n as f64;
        let z: Vec<f64> = e.iter().map(|v| v - mean).collect();
        let s0: f64 = w.iter().flatten().sum();
        let mut num = 0.0;
        let mut s1 = 0.0;
        for i in 0..n {
            for l in 0..n {
                num += w[i][l] * z[i] * z[l];
                s1 += (w[i][l] + w[l][i]).powi(2);
            }
        }
        s1 /= 2.0;
        let s2: f64 = (0..n)
            .map(|i| {
                let r: f64 = w[i].iter().sum();
                let c: f64 = (0..n).map(|l| w[l][i]).sum();
                (r + c).powi(2)
            })
            .sum();
        let den: f64 = z.iter().map(|v| v * v).sum();
        let nf = n as f64;
        let i_stat = nf / s0 * num / den;
        let ei = -1.0 / (nf - 1.0);
        let var = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0) - ei * ei;
        (i_stat, var)
    }

    #[test]
    fn perfect_fit_metrics() {
        let y = [1.0, 2.0, 4.0, 3.0];
        let m = fit_metrics(&y, &y, 1.0).unwrap();
        assert_eq!(m.rss, 0.0);
        assert_eq!(m.adj_r2, 1.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.rmse, 0.0);
    }

    #[test]
    fn null_model_has_zero_r2() {
        let y = [1.0, 2.0, 4.0, 3.0, 7.0];
        let mean = y.iter().sum::<f64>() / 5.0;
        let m = fit_metrics(&y, &[mean; 5], 1.0).unwrap();
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn zero_tss_is_degenerate() {
        assert!(matches!(fit_metrics(&[2.0; 4], &[1.0; 4], 1.0), Err(MsgwrError::Degenerate(_))));
    }

    #[test]
    fn metrics_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
        let f: Vec<f64> = y.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let m = fit_metrics(&y, &f, 4.5).unwrap();
        let mut rss = 0.0;
        let mut mae = 0.0;
        for i in 0..40 {
            rss += (y[i] - f[i]).powi(2);
            mae += (y[i] - f[i]).abs();
        }
        let mean: f64 = y.iter().sum::<f64>() / 40.0;
        let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let adj = 1.0 - (rss / tss) * 39.0 / (40.0 - 4.5 - 1.0);
        assert!((m.rss - rss).abs() < 1e-12);
        assert!((m.mae - mae / 40.0).abs() < 1e-12);
        assert!((m.rmse - (rss / 40.0).sqrt()).abs() < 1e-12);
        assert!((m.adj_r2 - adj).abs() < 1e-12);
        assert!(m.mae <= m.rmse);
    }

    #[test]
    fn expected_value_at_616() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<(f64, f64)> = (0..616).map(|_| (rng.random(), rng.random())).collect();
        let nb = NeighborTable::new(&pairwise_distances(&Coordinates::from_pairs(&pts).unwrap()));
        let e: Vec<f64> = (0..616).map(|_| rng.random()).collect();
        let r = morans_i(&e, &nb, 8, None).unwrap();
        assert_eq!(r.expected, -1.0 / 615.0);
        assert_eq!(format!("{:.3}", r.expected), "-0.002");
    }

    #[test]
    fn checkerboard_is_negative() {
        let nb = grid(6);
        let e: Vec<f64> = (0..36).map(|p| if (p % 6 + p / 6) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = morans_i(&e, &nb, 4, None).unwrap();
        let (oracle, var) = dense_oracle(&e, &nb, 4);
        assert!((r.i - oracle).abs() < 1e-12);
        assert!((r.variance - var).abs() < 1e-12);
        assert!(r.i < -0.5, "{}", r.i);
    }

    #[test]
    fn gradient_is_positive() {
        let nb = grid(7);
        let e: Vec<f64> = (0..49).map(|p| (p % 7) as f64 + 0.5 * (p / 7) as f64).collect();
        let r = morans_i(&e, &nb, 8, None).unwrap();
        let (oracle, var) = dense_oracle(&e, &nb, 8);
        assert!((r.i - oracle).abs() < 1e-12);
        assert!((r.variance - var).abs() < 1e-12);
        assert!(r.i > 0.3 && r.p_value < 0.01);
    }

    #[test]
    fn constant_residuals_rejected() {
        assert!(matches!(morans_i(&[1.5; 16], &grid(4), 4, None), Err(MsgwrError::Degenerate(_))));
    }

    #[test]
    fn permutation_test_is_seeded() {
        let nb = grid(6);
        let e: Vec<f64> = (0..36).map(|p| ((p * 7919) % 13) as f64).collect();
        let a = morans_i(&e, &nb, 4, Some((199, 5))).unwrap();
        let b = morans_i(&e, &nb, 4, Some((199, 5))).unwrap();
        let p = a.p_permutation.unwrap();
        assert_eq!(Some(p), b.p_permutation);
        assert!(p > 0.0 && p <= 1.0);
    }

    proptest! {
        #[test]
        fn invariant_to_scale_and_shift(seed in 0u64..500, c in -5.0f64..5.0, s in 0.1f64..10.0) {
            let nb = grid(5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = e.iter().map(|v| s * v + c).collect();
            let neg: Vec<f64> = e.iter().map(|v| -v).collect();
            let a = morans_i(&e, &nb, 4, None).unwrap();
            let b = morans_i(&t, &nb, 4, None).unwrap();
            let d = morans_i(&neg, &nb, 4, None).unwrap();
            prop_assert!((a.i - b.i).abs() < 1e-10);
            prop_assert!((a.i - d.i).abs() < 1e-10);
            prop_assert_eq!(a.expected, -1.0 / 24.0);
        }
    }
}
