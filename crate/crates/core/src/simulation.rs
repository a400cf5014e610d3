//! Synthetic datasets with known coefficient surfaces on a unit grid.
//!
//! Smooth geographic fields are mixtures of three seeded Gaussian bumps;
//! contextual fields are piecewise-constant regime scores from a seeded
//! k-means partition of auxiliary features, so they carry no spatial
//! structure. Both are rescaled to mean 0 and variance 1.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MsgwrError, Result};
use crate::geometry::Coordinates;
use crate::local_fit::Dataset;

pub const DEFAULT_GRID_SIDE: usize = 30;
pub const DEFAULT_NOISE_SD: f64 = 0.9;
const BUMPS: usize = 3;
const REGIMES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Mixed,
    PureGeo,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Mixed => "mixed",
            Scenario::PureGeo => "pure-geo",
        }
    }
}

/// Tunable parts of the generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub grid_side: usize,
    pub noise_sd: f64,
    /// Multiplier on every smooth geographic component of the coefficients.
    pub geo_amplitude: f64,
    /// `s_j` for the three mixed coefficients.
    pub contextual_scale: [f64; 3],
    /// Weight of the smooth field in each predictor.
    pub predictor_field: f64,
    /// Weight of the contextual score in the mixed predictors.
    pub predictor_context: f64,
    /// Weight of the independent noise in the mixed predictors.
    pub predictor_noise: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            grid_side: DEFAULT_GRID_SIDE,
            noise_sd: DEFAULT_NOISE_SD,
            geo_amplitude: 1.0,
            contextual_scale: [1.0; 3],
            predictor_field: 0.5,
            predictor_context: 0.5,
            predictor_noise: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub dataset: Dataset,
    pub true_beta: Array2<f64>,
    /// Smooth geographic part `g_j` of every coefficient (before scaling).
    pub geo_component: Array2<f64>,
    /// Contextual part `s_j c_j` of every coefficient; zero where absent.
    pub contextual_component: Array2<f64>,
    pub noise: Array1<f64>,
    pub seed: u64,
    pub scenario: Scenario,
    pub grid_side: usize,
}

impl SimulatedDataset {
    /// `sum_j beta_j x_j + noise`, accumulated in column order.
    pub fn regenerate_response(&self) -> Array1<f64> {
        response(&self.true_beta, &self.dataset.x, &self.noise)
    }
}

fn response(beta: &Array2<f64>, x: &Array2<f64>, noise: &Array1<f64>) -> Array1<f64> {
    let (n, m) = x.dim();
    Array1::from_shape_fn(n, |i| {
        let mut s = 0.0;
        for j in 0..m {
            s += beta[[i, j]] * x[[i, j]];
        }
        s + noise[i]
    })
}

fn grid(side: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (side - 1) as f64;
    let n = side * side;
    let u = (0..n).map(|p| (p % side) as f64 / h).collect();
    let v = (0..n).map(|p| (p / side) as f64 / h).collect();
    (u, v)
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

/// Standardized mixture of Gaussian bumps with random centres and widths.
fn smooth_field(rng: &mut ChaCha8Rng, u: &[f64], v: &[f64]) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..BUMPS)
        .map(|_| {
            let cu = rng.random::<f64>();
            let cv = rng.random::<f64>();
            let width = rng.random_range(0.15..0.4);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            (cu, cv, width, sign * rng.random_range(0.5..1.5))
        })
        .collect();
    let mut f: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| {
            bumps
                .iter()
                .map(|&(cu, cv, w, amp)| {
                    let d2 = (a - cu).powi(2) + (b - cv).powi(2);
                    amp * (-d2 / (2.0 * w * w)).exp()
                })
                .sum()
        })
        .collect();
    standardize(&mut f);
    f
}

/// Lloyd's k-means on 2-D points; centres seeded from distinct points.
pub fn kmeans(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng, iters: usize) -> Vec<usize> {
    let n = points.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut centres: Vec<[f64; 2]> = idx[..k.min(n)].iter().map(|&i| points[i]).collect();
    let mut labels = vec![0usize; n];
    for _ in 0..iters {
        let mut changed = false;
        for (p, lab) in points.iter().zip(labels.iter_mut()) {
            let best = centres
                .iter()
                .enumerate()
                .map(|(c, q)| (c, (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(c, _)| c)
                .unwrap_or(0);
            if best != *lab {
                *lab = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0, 0.0, 0.0]; centres.len()];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            sums[l][2] += 1.0;
        }
        for (c, s) in centres.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Standardized regime score: k-means regimes on iid auxiliary features,
/// each regime assigned one of `REGIMES` evenly spaced levels at random.
fn contextual_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let feats: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    let labels = kmeans(&feats, REGIMES, rng, 100);
    let mut levels: Vec<f64> = (0..REGIMES).map(|r| r as f64 - (REGIMES - 1) as f64 / 2.0).collect();
    levels.shuffle(rng);
    let mut c: Vec<f64> = labels.iter().map(|&l| levels[l]).collect();
    standardize(&mut c);
    c
}

fn build(
    scenario: Scenario,
    seed: u64,
    cfg: &SimulationConfig,
    beta: Array2<f64>,
    geo: Array2<f64>,
    ctx: Array2<f64>,
    x: Array2<f64>,
    rng: &mut ChaCha8Rng,
    coords: Coordinates,
) -> Result<SimulatedDataset> {
    let n = x.nrows();
    let noise = if cfg.noise_sd > 0.0 {
        let dist = Normal::new(0.0, cfg.noise_sd).map_err(|e| MsgwrError::Parameter(e.to_string()))?;
        Array1::from_shape_fn(n, |_| dist.sample(rng))
    } else {
        Array1::zeros(n)
    };
    let y = response(&beta, &x, &noise);
    let m = x.ncols();
    let names = (0..m)
        .map(|j| if j == 0 { "Intercept".to_string() } else { format!("x{j}") })
        .collect();
    let dataset = Dataset::new(coords, y, x, names)?;
    Ok(SimulatedDataset {
        dataset,
        true_beta: beta,
        geo_component: geo,
        contextual_component: ctx,
        noise,
        seed,
        scenario,
        grid_side: cfg.grid_side,
    })
}

fn check(cfg: &SimulationConfig) -> Result<()> {
    if cfg.grid_side < 5 {
        return Err(MsgwrError::Parameter(format!("grid side {} must be at least 5", cfg.grid_side)));
    }
    if !(cfg.noise_sd >= 0.0) {
        return Err(MsgwrError::Parameter("noise standard deviation must be non-negative".into()));
    }
    Ok(())
}

/// Three coefficients driven by location alone; the third is the plane
/// `3 + u + v`.
pub fn gen_pure_geographic(seed: u64, cfg: &SimulationConfig) -> Result<SimulatedDataset> {
    check(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u, v) = grid(cfg.grid_side);
    let n = u.len();
    let g0 = smooth_field(&mut rng, &u, &v);
    let g1 = smooth_field(&mut rng, &u, &v);
    let amp = cfg.geo_amplitude;
    let mut beta = Array2::<f64>::zeros((n, 3));
    let mut geo = Array2::<f64>::zeros((n, 3));
    for i in 0..n {
        geo[[i, 0]] = g0[i];
        geo[[i, 1]] = g1[i];
        geo[[i, 2]] = u[i] + v[i];
        beta[[i, 0]] = 1.0 + 0.8 * amp * g0[i];
        beta[[i, 1]] = 1.0 + amp * g1[i];
        beta[[i, 2]] = 1.0 + (u[i] + (2.0 + v[i]));
    }
    let h: Vec<Vec<f64>> = (0..2).map(|_| smooth_field(&mut rng, &u, &v)).collect();
    let mut x = Array2::<f64>::ones((n, 3));
    for j in 1..3 {
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            x[[i, j]] = h[j - 1][i] + z;
        }
    }
    let coords = Coordinates::new(u, v)?;
    let ctx = Array2::zeros((n, 3));
    build(Scenario::PureGeo, seed, cfg, beta, geo, ctx, x, &mut rng, coords)
}

/// Five coefficients: the intercept and first slope are purely geographic,
/// the remaining three mix a smooth field with a contextual regime score.
pub fn gen_mixed_effects(seed: u64, cfg: &SimulationConfig) -> Result<SimulatedDataset> {
    check(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u, v) = grid(cfg.grid_side);
    let n = u.len();
    let m = 5;
    let g: Vec<Vec<f64>> = (0..m).map(|_| smooth_field(&mut rng, &u, &v)).collect();
    let c: Vec<Vec<f64>> = (0..m)
        .map(|j| if j >= 2 { contextual_field(&mut rng, n) } else { vec![0.0; n] })
        .collect();
    let amp = cfg.geo_amplitude;
    let mut beta = Array2::<f64>::zeros((n, m));
    let mut geo = Array2::<f64>::zeros((n, m));
    let mut ctx = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            geo[[i, j]] = g[j][i];
        }
        beta[[i, 0]] = 1.0 + 0.8 * amp * g[0][i];
        beta[[i, 1]] = 1.0 + amp * g[1][i];
        for j in 2..m {
            let s = cfg.contextual_scale[j - 2];
            ctx[[i, j]] = s * c[j][i];
            beta[[i, j]] = 1.0 + s * (amp * g[j][i] + c[j][i]);
        }
    }
    let h: Vec<Vec<f64>> = (1..m).map(|_| smooth_field(&mut rng, &u, &v)).collect();
    let mut x = Array2::<f64>::ones((n, m));
    for j in 1..m {
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            x[[i, j]] = if j == 1 {
                cfg.predictor_field * h[0][i] + z
            } else {
                cfg.predictor_field * h[j - 1][i] + cfg.predictor_context * c[j][i] + cfg.predictor_noise * z
            };
        }
    }
    let coords = Coordinates::new(u, v)?;
    build(Scenario::Mixed, seed, cfg, beta, geo, ctx, x, &mut rng, coords)
}

pub fn generate(scenario: Scenario, seed: u64, cfg: &SimulationConfig) -> Result<SimulatedDataset> {
    match scenario {
        Scenario::Mixed => gen_mixed_effects(seed, cfg),
        Scenario::PureGeo => gen_pure_geographic(seed, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryScore {
    pub rmse: Vec<f64>,
    /// `None` where either column is constant.
    pub pearson: Vec<Option<f64>>,
}

pub fn score_recovery(true_beta: &Array2<f64>, estimated: &Array2<f64>) -> Result<RecoveryScore> {
    if true_beta.dim() != estimated.dim() || true_beta.nrows() == 0 {
        return Err(MsgwrError::Parameter(format!(
            "coefficient shapes differ: {:?} vs {:?}",
            true_beta.dim(),
            estimated.dim()
        )));
    }
    let n = true_beta.nrows() as f64;
    let mut rmse = Vec::new();
    let mut pearson = Vec::new();
    for (a, b) in true_beta.columns().into_iter().zip(estimated.columns()) {
        let mse = a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n;
        rmse.push(mse.sqrt());
        let (ma, mb) = (a.sum() / n, b.sum() / n);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (p, q) in a.iter().zip(b.iter()) {
            sab += (p - ma) * (q - mb);
            saa += (p - ma) * (p - ma);
            sbb += (q - mb) * (q - mb);
        }
        pearson.push(if saa > 0.0 && sbb > 0.0 {
            Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
        } else {
            None
        });
    }
    Ok(RecoveryScore { rmse, pearson })
}
