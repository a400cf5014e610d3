//! Single-bandwidth calibration shared by GWR (geographic kernel only) and
//! SGWR (geographic kernel mixed with pooled attribute similarity).

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::{assemble, Convergence, FitConfig, FitResult, ModelKind, ScaleConfig, SpatialContext};
use crate::error::{MsgwrError, Result};
use crate::local_fit::{dot, Dataset, NormalSystem};
use crate::model_selection::{
    evaluate_criterion, golden_section_bandwidth_search, SearchTrace, TraceRecord, TraceScope,
};
use crate::weights::{bisquare, mix, pooled_distances};

/// Support of point `i` at bandwidth `k`: the point itself first, then the
/// neighbours strictly inside the radius, with geographic weights.
pub(crate) fn geo_support(ctx: &SpatialContext, i: usize, k: usize) -> (Vec<usize>, Vec<f64>) {
    let (idx, dist, r) = ctx.neighbors.inside(i, k);
    let mut s = Vec::with_capacity(idx.len() + 1);
    let mut g = Vec::with_capacity(idx.len() + 1);
    s.push(i);
    g.push(bisquare(0.0, r));
    for (&l, &d) in idx.iter().zip(dist) {
        s.push(l as usize);
        g.push(bisquare(d, r));
    }
    (s, g)
}

struct PointWeights {
    support: Vec<usize>,
    geo: Vec<f64>,
    attr: Vec<f64>,
}

fn point_weights(data: &Dataset, ctx: &SpatialContext, cfg: &FitConfig, i: usize, k: usize, pooled: bool) -> PointWeights {
    let (support, geo) = geo_support(ctx, i, k);
    let attr = if pooled {
        pooled_distances(data.x.view(), i, &support, &cfg.similarity)
            .into_iter()
            .map(|d| (-(d * d)).exp2())
            .collect()
    } else {
        geo.clone()
    };
    PointWeights { support, geo, attr }
}

/// Per-point normal systems at one bandwidth, mixed linearly in alpha.
struct Candidate {
    geo: Vec<NormalSystem>,
    attr: Option<Vec<NormalSystem>>,
    self_geo: Vec<f64>,
}

impl Candidate {
    fn build(data: &Dataset, ctx: &SpatialContext, cfg: &FitConfig, k: usize, pooled: bool) -> Self {
        let n = data.n();
        let parts: Vec<(NormalSystem, Option<NormalSystem>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let pw = point_weights(data, ctx, cfg, i, k, pooled);
                let g = NormalSystem::accumulate(
                    data.x.view(),
                    data.y.view(),
                    pw.support.iter().copied().zip(pw.geo.iter().copied()),
                );
                let a = pooled.then(|| {
                    NormalSystem::accumulate(
                        data.x.view(),
                        data.y.view(),
                        pw.support.iter().copied().zip(pw.attr.iter().copied()),
                    )
                });
                (g, a, pw.geo[0])
            })
            .collect();
        let mut geo = Vec::with_capacity(n);
        let mut attr = pooled.then(|| Vec::with_capacity(n));
        let mut self_geo = Vec::with_capacity(n);
        for (g, a, s) in parts {
            geo.push(g);
            if let (Some(v), Some(a)) = (attr.as_mut(), a) {
                v.push(a);
            }
            self_geo.push(s);
        }
        Self { geo, attr, self_geo }
    }

    fn system(&self, i: usize, alpha: f64) -> NormalSystem {
        match &self.attr {
            Some(a) => self.geo[i].mix(&a[i], alpha),
            None => self.geo[i].clone(),
        }
    }

    fn evaluate(&self, data: &Dataset, cfg: &FitConfig, alpha: f64) -> Option<f64> {
        let n = data.n();
        let rows: Option<Vec<(f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let solved = self.system(i, alpha).solve(i, &cfg.solve).ok()?;
                let xi = data.x.row(i);
                let z = solved.apply_inverse(xi);
                let w_self = mix(self.self_geo[i], 1.0, alpha);
                let e = data.y[i] - dot(xi, &solved.beta);
                Some((e, w_self * dot(xi, &z)))
            })
            .collect();
        let (e, s): (Vec<f64>, Vec<f64>) = rows?.into_iter().unzip();
        evaluate_criterion(cfg.criterion, &e, &s).map(|c| c.value)
    }
}

/// Calibrates a single-scale model. `pooled` enables the attribute kernel;
/// `alpha` pins the mixing weight, and `bandwidth` pins the neighbour count.
pub(crate) fn calibrate(
    model: ModelKind,
    data: &Dataset,
    ctx: &SpatialContext,
    cfg: &FitConfig,
    pooled: bool,
    alpha: Option<f64>,
    bandwidth: Option<usize>,
) -> Result<FitResult> {
    let (n, m) = data.x.dim();
    let (k_min, k_max) = cfg.range(n, m)?;
    let mut trace = SearchTrace::default();
    let mut best_alpha: HashMap<usize, f64> = HashMap::new();
    let mut failure: Option<MsgwrError> = None;
    let mut score = |k: usize| -> Option<f64> {
        let cand = Candidate::build(data, ctx, cfg, k, pooled);
        let found = match (pooled, alpha) {
            (false, _) => cand.evaluate(data, cfg, 1.0).map(|c| (1.0, c)),
            (true, Some(a)) => cand.evaluate(data, cfg, a).map(|c| (a, c)),
            (true, None) => match cfg.alpha_search.run(|a| cand.evaluate(data, cfg, a)) {
                Ok(r) => r,
                Err(e) => {
                    failure.get_or_insert(e);
                    None
                }
            },
        };
        let (a, c) = found?;
        best_alpha.insert(k, a);
        trace.push(TraceRecord {
            scope: TraceScope::All,
            bandwidth: k,
            alpha: a,
            criterion: c,
            iteration: 0,
        });
        Some(c)
    };
    let k = match bandwidth {
        Some(b) => {
            if b < 2 || b > n - 1 {
                return Err(MsgwrError::Parameter(format!("pinned bandwidth {b} outside [2, {}]", n - 1)));
            }
            score(b).ok_or_else(|| {
                MsgwrError::Calibration(format!("criterion infeasible at pinned bandwidth {b}"))
            })?;
            b
        }
        None => {
            let r = golden_section_bandwidth_search(&mut score, k_min, k_max);
            if let Some(e) = failure {
                return Err(e);
            }
            r.map_err(|e| MsgwrError::Calibration(format!("{}: {e}", model.label())))?.0
        }
    };
    let a = best_alpha[&k];
    final_fit(model, data, ctx, cfg, k, a, pooled, trace)
}

#[allow(clippy::too_many_arguments)]
fn final_fit(
    model: ModelKind,
    data: &Dataset,
    ctx: &SpatialContext,
    cfg: &FitConfig,
    k: usize,
    alpha: f64,
    pooled: bool,
    trace: SearchTrace,
) -> Result<FitResult> {
    let (n, m) = data.x.dim();
    struct PointFit {
        beta: Vec<f64>,
        support: Vec<usize>,
        // C_i[:, l] for every l in the support, column-major by support slot
        c: Vec<Vec<f64>>,
        leverage: f64,
        ridged: bool,
    }
    let fits: Vec<PointFit> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<PointFit> {
            let pw = point_weights(data, ctx, cfg, i, k, pooled);
            let w: Vec<f64> = pw.geo.iter().zip(&pw.attr).map(|(&g, &a)| mix(g, a, alpha)).collect();
            let sys = NormalSystem::accumulate(
                data.x.view(),
                data.y.view(),
                pw.support.iter().copied().zip(w.iter().copied()),
            );
            let solved = sys.solve(i, &cfg.solve)?;
            let c: Vec<Vec<f64>> = pw
                .support
                .iter()
                .zip(&w)
                .map(|(&l, &wl)| solved.apply_inverse(data.x.row(l)).into_iter().map(|z| wl * z).collect())
                .collect();
            let leverage = dot(data.x.row(i), &c[0]);
            Ok(PointFit {
                beta: solved.beta,
                support: pw.support,
                c,
                leverage,
                ridged: solved.ridged,
            })
        })
        .collect::<Result<_>>()?;
    let mut beta = Array2::<f64>::zeros((n, m));
    let mut projections = vec![Array2::<f64>::zeros((n, n)); m];
    let mut leverages = Array1::<f64>::zeros(n);
    let mut ridged = 0usize;
    for (i, f) in fits.iter().enumerate() {
        for j in 0..m {
            beta[[i, j]] = f.beta[j];
            let xij = data.x[[i, j]];
            let r = &mut projections[j];
            for (&l, cl) in f.support.iter().zip(&f.c) {
                r[[i, l]] = xij * cl[j];
            }
        }
        leverages[i] = f.leverage;
        ridged += f.ridged as usize;
    }
    let mut warnings = Vec::new();
    if ridged > 0 {
        warnings.push(format!("{ridged} local systems solved with ridge regularization"));
    }
    let hat_trace = leverages.sum();
    assemble(
        model,
        data,
        beta,
        projections,
        hat_trace,
        leverages,
        Some(ScaleConfig::uniform(m, k, alpha)),
        cfg.criterion,
        trace,
        Convergence::direct(),
        warnings,
    )
}

/// Geographically weighted regression with one adaptive bandwidth.
pub fn fit_gwr(data: &Dataset, ctx: &SpatialContext, cfg: &FitConfig) -> Result<FitResult> {
    calibrate(ModelKind::Gwr, data, ctx, cfg, false, None, None)
}

/// Single-scale similarity and geographically weighted regression: one
/// bandwidth and one alpha shared by all covariates.
pub fn fit_sgwr(data: &Dataset, ctx: &SpatialContext, cfg: &FitConfig) -> Result<FitResult> {
    calibrate(ModelKind::Sgwr, data, ctx, cfg, true, None, None)
}
