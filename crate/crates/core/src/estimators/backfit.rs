//! Multiscale backfitting. Each covariate gets its own bandwidth and, in
//! the similarity mode, its own alpha; MGWR is the mode with every alpha
//! fixed at 1.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::single::{calibrate, geo_support};
use super::{assemble, Convergence, FitConfig, FitResult, ModelKind, ScaleConfig, SpatialContext};
use crate::error::{MsgwrError, Result};
use crate::local_fit::Dataset;
use crate::model_selection::{
    evaluate_criterion, golden_section_bandwidth_search, TraceRecord, TraceScope,
};
use crate::weights::{mix, neighborhood_sd, similarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiscaleMode {
    Mgwr,
    Msgwr,
}

/// Score-of-change used for the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SocKind {
    /// Relative change of the additive components.
    #[default]
    Coef,
    /// Relative change of the residual sum of squares.
    Rss,
}

/// Univariate smoother of one covariate at one bandwidth: the four kernel
/// sums per point, from which any alpha is a linear mix.
struct UniCandidate {
    g1: Vec<f64>,
    g2: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    self_geo: Vec<f64>,
}

fn attr_weights(x_j: &[f64], i: usize, support: &[usize], cfg: &FitConfig) -> Vec<f64> {
    let sd = neighborhood_sd(support.iter().map(|&l| x_j[l]), &cfg.similarity);
    let xi = x_j[i];
    support.iter().map(|&l| similarity(x_j[l] - xi, sd)).collect()
}

impl UniCandidate {
    fn build(ctx: &SpatialContext, cfg: &FitConfig, x_j: &[f64], r: &[f64], k: usize, attr: bool) -> Self {
        let n = x_j.len();
        let rows: Vec<[f64; 5]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (s, g) = geo_support(ctx, i, k);
                let (mut g1, mut g2) = (0.0, 0.0);
                for (&l, &w) in s.iter().zip(&g) {
                    let wx = w * x_j[l];
                    g1 += wx * r[l];
                    g2 += wx * x_j[l];
                }
                let (a1, a2) = if attr {
                    let a = attr_weights(x_j, i, &s, cfg);
                    let (mut a1, mut a2) = (0.0, 0.0);
                    for (&l, &w) in s.iter().zip(&a) {
                        let wx = w * x_j[l];
                        a1 += wx * r[l];
                        a2 += wx * x_j[l];
                    }
                    (a1, a2)
                } else {
                    (g1, g2)
                };
                [g1, g2, a1, a2, g[0]]
            })
            .collect();
        let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
        Self {
            g1: col(0),
            g2: col(1),
            a1: col(2),
            a2: col(3),
            self_geo: col(4),
        }
    }

    fn evaluate(&self, cfg: &FitConfig, x_j: &[f64], r: &[f64], alpha: f64) -> Option<f64> {
        let n = x_j.len();
        let mut e = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        for i in 0..n {
            let den = mix(self.g2[i], self.a2[i], alpha);
            if !(den > 0.0) {
                return None;
            }
            let b = mix(self.g1[i], self.a1[i], alpha) / den;
            e.push(r[i] - x_j[i] * b);
            s.push(x_j[i] * x_j[i] * mix(self.self_geo[i], 1.0, alpha) / den);
        }
        evaluate_criterion(cfg.criterion, &e, &s).map(|c| c.value)
    }
}

/// Rows of the univariate smoother `A_j` at a fixed scale, stored sparsely as
/// `(support, w_l x_lj / D_i)`; `A_j[i, l] = x_ij` times the stored factor.
struct Smoother {
    rows: Vec<(Vec<usize>, Vec<f64>)>,
}

impl Smoother {
    fn build(ctx: &SpatialContext, cfg: &FitConfig, x_j: &[f64], k: usize, alpha: f64, attr: bool) -> Result<Self> {
        let n = x_j.len();
        let rows = (0..n)
            .into_par_iter()
            .map(|i| {
                let (s, g) = geo_support(ctx, i, k);
                let w: Vec<f64> = if attr {
                    let a = attr_weights(x_j, i, &s, cfg);
                    g.iter().zip(&a).map(|(&g, &a)| mix(g, a, alpha)).collect()
                } else {
                    g.iter().map(|&g| mix(g, g, alpha)).collect()
                };
                let den: f64 = s.iter().zip(&w).map(|(&l, &w)| w * x_j[l] * x_j[l]).sum();
                if !(den > 0.0) {
                    return Err(MsgwrError::Singular { point: i, rcond: 0.0 });
                }
                let f = s.iter().zip(&w).map(|(&l, &w)| w * x_j[l] / den).collect();
                Ok((s, f))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(s, f)| s.iter().zip(f).map(|(&l, &c)| c * r[l]).sum())
            .collect()
    }

    /// `A_j (I - S + R_j)` as a dense matrix.
    fn project(&self, x_j: &[f64], s_mat: &Array2<f64>, r_j: &Array2<f64>) -> Array2<f64> {
        let n = x_j.len();
        let mut out = Array2::<f64>::zeros((n, n));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(self.rows.par_iter())
            .enumerate()
            .for_each(|(i, (mut row, (s, f)))| {
                let xi = x_j[i];
                let acc = row.as_slice_mut().expect("row-major");
                for (&l, &c) in s.iter().zip(f) {
                    let a = xi * c;
                    let rl = r_j.row(l);
                    let sl = s_mat.row(l);
                    let (rl, sl) = (rl.as_slice().expect("row-major"), sl.as_slice().expect("row-major"));
                    for ((o, &p), &q) in acc.iter_mut().zip(rl).zip(sl) {
                        *o += a * (p - q);
                    }
                    acc[l] += a;
                }
            });
        out
    }
}

/// Backfitting calibration in either mode.
pub fn fit_multiscale(mode: MultiscaleMode, data: &Dataset, ctx: &SpatialContext, cfg: &FitConfig) -> Result<FitResult> {
    let (n, m) = data.x.dim();
    let (k_min, k_max) = cfg.range(n, m)?;
    let attr = mode == MultiscaleMode::Msgwr;
    let model = match mode {
        MultiscaleMode::Mgwr => ModelKind::Mgwr,
        MultiscaleMode::Msgwr => ModelKind::Msgwr,
    };
    if !(cfg.phi > 0.0) || cfg.max_iters == 0 {
        return Err(MsgwrError::Parameter("backfitting needs phi > 0 and max_iters >= 1".into()));
    }
    let pins: Vec<_> = (0..m).map(|j| cfg.pin(j)).collect();
    for (j, p) in pins.iter().enumerate() {
        if let Some(b) = p.bandwidth {
            if b < 2 || b > n - 1 {
                return Err(MsgwrError::Parameter(format!(
                    "pinned bandwidth {b} for covariate {} outside [2, {}]",
                    data.names[j],
                    n - 1
                )));
            }
        }
        if let Some(a) = p.alpha {
            crate::weights::check_alpha(a)?;
        }
    }
    // A constant column carries no attribute information; its alpha is 1.
    let constant: Vec<bool> = (0..m)
        .map(|j| {
            let c = data.x.column(j);
            c.iter().all(|&v| v == c[0])
        })
        .collect();
    let fixed_alpha = |j: usize| -> Option<f64> {
        if attr {
            pins[j].alpha.or(constant[j].then_some(1.0))
        } else {
            Some(1.0)
        }
    };

    // Initialization from the single-scale counterpart.
    let common_alpha = if attr {
        let first = pins[0].alpha;
        first.filter(|_| pins.iter().all(|p| p.alpha == first))
    } else {
        None
    };
    let init = if attr {
        calibrate(ModelKind::Sgwr, data, ctx, cfg, true, common_alpha, None)?
    } else {
        calibrate(ModelKind::Gwr, data, ctx, cfg, false, None, None)?
    };
    let init_scales = init.scales.clone().expect("single-scale fits report scales");
    let mut bandwidths = init_scales.bandwidths.clone();
    let mut alphas: Vec<f64> = (0..m)
        .map(|j| fixed_alpha(j).unwrap_or(init_scales.alphas[j]))
        .collect();
    let mut trace = init.trace.clone();
    let mut beta = init.beta.clone();
    let mut parts: Array2<f64> = &data.x * &beta;
    let mut projections = init.projections;
    let mut s_mat = projections.iter().fold(Array2::<f64>::zeros((n, n)), |acc, r| acc + r);
    let y = data.y.as_slice().expect("contiguous response");
    let mut err: Vec<f64> = (0..n).map(|i| y[i] - parts.row(i).sum()).collect();
    let mut rss_old: f64 = err.iter().map(|e| e * e).sum();
    let x_cols: Vec<Vec<f64>> = (0..m).map(|j| data.x.column(j).to_vec()).collect();

    let mut convergence = Convergence {
        converged: false,
        iterations: 0,
        soc: f64::INFINITY,
        soc_kind: Some(cfg.soc),
        phi: Some(cfg.phi),
    };
    for it in 1..=cfg.max_iters {
        let parts_old = parts.clone();
        for j in 0..m {
            let x_j = &x_cols[j];
            let r: Vec<f64> = (0..n).map(|i| err[i] + parts[[i, j]]).collect();
            let mut best_alpha: HashMap<usize, f64> = HashMap::new();
            let mut failure: Option<MsgwrError> = None;
            let mut score = |k: usize| -> Option<f64> {
                let cand = UniCandidate::build(ctx, cfg, x_j, &r, k, attr);
                let found = match fixed_alpha(j) {
                    Some(a) => cand.evaluate(cfg, x_j, &r, a).map(|c| (a, c)),
                    None => match cfg.alpha_search.run(|a| cand.evaluate(cfg, x_j, &r, a)) {
                        Ok(v) => v,
                        Err(e) => {
                            failure.get_or_insert(e);
                            None
                        }
                    },
                };
                let (a, c) = found?;
                best_alpha.insert(k, a);
                trace.push(TraceRecord {
                    scope: TraceScope::Covariate(j),
                    bandwidth: k,
                    alpha: a,
                    criterion: c,
                    iteration: it,
                });
                Some(c)
            };
            let k = match pins[j].bandwidth {
                Some(b) => {
                    score(b).ok_or_else(|| {
                        MsgwrError::Calibration(format!(
                            "criterion infeasible at pinned bandwidth {b} for covariate {}",
                            data.names[j]
                        ))
                    })?;
                    b
                }
                None => {
                    let res = golden_section_bandwidth_search(&mut score, k_min, k_max);
                    if let Some(e) = failure {
                        return Err(e);
                    }
                    res.map_err(|e| {
                        MsgwrError::Calibration(format!("covariate {}: {e}", data.names[j]))
                    })?
                    .0
                }
            };
            let a = best_alpha[&k];
            bandwidths[j] = k;
            alphas[j] = a;
            let sm = Smoother::build(ctx, cfg, x_j, k, a, attr)?;
            let b_new = sm.apply(&r);
            for i in 0..n {
                beta[[i, j]] = b_new[i];
                parts[[i, j]] = x_j[i] * b_new[i];
                err[i] = r[i] - parts[[i, j]];
            }
            let r_new = sm.project(x_j, &s_mat, &projections[j]);
            s_mat = s_mat - &projections[j] + &r_new;
            projections[j] = r_new;
        }
        let rss_new: f64 = err.iter().map(|e| e * e).sum();
        let soc = match cfg.soc {
            SocKind::Coef => {
                let num: f64 = (0..m)
                    .map(|j| {
                        (0..n)
                            .map(|i| (parts[[i, j]] - parts_old[[i, j]]).powi(2))
                            .sum::<f64>()
                            / n as f64
                    })
                    .sum();
                let den: f64 = (0..n).map(|i| parts.row(i).sum().powi(2)).sum();
                (num / den).sqrt()
            }
            SocKind::Rss => (rss_new - rss_old).abs() / rss_new,
        };
        rss_old = rss_new;
        convergence.iterations = it;
        convergence.soc = soc;
        log::debug!("{} sweep {it}: soc {soc:.3e}, bandwidths {bandwidths:?}, alphas {alphas:?}", model.label());
        if soc <= cfg.phi {
            convergence.converged = true;
            break;
        }
    }
    let mut warnings = init.warnings;
    if !convergence.converged {
        let msg = format!(
            "backfitting did not converge in {} iterations (last score of change {:.3e}, tolerance {:.1e})",
            cfg.max_iters, convergence.soc, cfg.phi
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let leverages: Array1<f64> = s_mat.diag().to_owned();
    let hat_trace = leverages.sum();
    assemble(
        model,
        data,
        beta,
        projections,
        hat_trace,
        leverages,
        Some(ScaleConfig { bandwidths, alphas }),
        cfg.criterion,
        trace,
        convergence,
        warnings,
    )
}

/// Multiscale GWR: per-covariate bandwidths with purely geographic kernels.
pub fn fit_mgwr(data: &Dataset, ctx: &SpatialContext, cfg: &FitConfig) -> Result<FitResult> {
    fit_multiscale(MultiscaleMode::Mgwr, data, ctx, cfg)
}

/// Multiscale SGWR: per-covariate bandwidths and alphas.
pub fn fit_msgwr(data: &Dataset, ctx: &SpatialContext, cfg: &FitConfig) -> Result<FitResult> {
    fit_multiscale(MultiscaleMode::Msgwr, data, ctx, cfg)
}
