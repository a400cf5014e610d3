//! The model fitters: OLS, the single-scale GWR/SGWR engine and the
//! multiscale backfitting calibration shared by MGWR and M-SGWR.
//!
//! Every fitter produces, per covariate `j`, the projection matrix `R_j`
//! mapping `y` to the fitted contribution `x_j * beta_j`. Effective numbers
//! of parameters, the residual variance and local standard errors are all
//! derived from these matrices in [`inference`].

mod backfit;
mod single;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use backfit::{fit_mgwr, fit_msgwr, MultiscaleMode, SocKind};
pub use single::{fit_gwr, fit_sgwr};

use crate::diagnostics::{fit_metrics, MetricBundle};
use crate::error::{MsgwrError, Result};
use crate::geometry::{pairwise_distances, NeighborTable};
use crate::local_fit::{Dataset, NormalSystem, SolveOptions};
use crate::model_selection::{evaluate_criterion, AlphaSearch, CriterionKind, CriterionValue, SearchTrace};
use crate::weights::SimilarityConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ols,
    Gwr,
    Sgwr,
    Mgwr,
    Msgwr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Ols, ModelKind::Gwr, ModelKind::Sgwr, ModelKind::Mgwr, ModelKind::Msgwr];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Ols => "ols",
            ModelKind::Gwr => "gwr",
            ModelKind::Sgwr => "sgwr",
            ModelKind::Mgwr => "mgwr",
            ModelKind::Msgwr => "msgwr",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Ols => "OLS",
            ModelKind::Gwr => "GWR",
            ModelKind::Sgwr => "SGWR",
            ModelKind::Mgwr => "MGWR",
            ModelKind::Msgwr => "M-SGWR",
        }
    }
}

/// Optional pins for one covariate's scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariateScale {
    pub bandwidth: Option<usize>,
    pub alpha: Option<f64>,
}

/// Calibration settings shared by all fitters.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub criterion: CriterionKind,
    pub alpha_search: AlphaSearch,
    pub similarity: SimilarityConfig,
    pub solve: SolveOptions,
    /// Backfitting convergence tolerance.
    pub phi: f64,
    pub soc: SocKind,
    pub max_iters: usize,
    /// Inclusive neighbour-count search range; defaults to `[m + 2, n - 1]`.
    pub bandwidth_range: Option<(usize, usize)>,
    /// Per-covariate pins for the multiscale fitters (empty = all free).
    pub pins: Vec<CovariateScale>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            criterion: CriterionKind::Aicc,
            alpha_search: AlphaSearch::dnc(),
            similarity: SimilarityConfig::default(),
            solve: SolveOptions::default(),
            phi: 1e-5,
            soc: SocKind::Coef,
            max_iters: 200,
            bandwidth_range: None,
            pins: Vec::new(),
        }
    }
}

impl FitConfig {
    pub(crate) fn range(&self, n: usize, m: usize) -> Result<(usize, usize)> {
        let (lo, hi) = self.bandwidth_range.unwrap_or((m + 2, n.saturating_sub(1)));
        if lo < 2 || hi > n.saturating_sub(1) || lo > hi {
            return Err(MsgwrError::Calibration(format!(
                "bandwidth range [{lo}, {hi}] is empty or outside [2, {}]",
                n.saturating_sub(1)
            )));
        }
        Ok((lo, hi))
    }

    pub(crate) fn pin(&self, j: usize) -> CovariateScale {
        self.pins.get(j).copied().unwrap_or_default()
    }
}

/// Calibrated per-covariate bandwidths (neighbour counts) and alphas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleConfig {
    pub bandwidths: Vec<usize>,
    pub alphas: Vec<f64>,
}

impl ScaleConfig {
    pub fn uniform(m: usize, bandwidth: usize, alpha: f64) -> Self {
        Self {
            bandwidths: vec![bandwidth; m],
            alphas: vec![alpha; m],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    /// Last score of change (NaN for non-iterative fits).
    pub soc: f64,
    pub soc_kind: Option<SocKind>,
    pub phi: Option<f64>,
}

impl Convergence {
    fn direct() -> Self {
        Self {
            converged: true,
            iterations: 0,
            soc: f64::NAN,
            soc_kind: None,
            phi: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelKind,
    pub beta: Array2<f64>,
    pub se: Array2<f64>,
    pub t_values: Array2<f64>,
    pub fitted: Array1<f64>,
    pub residuals: Array1<f64>,
    pub enp_per_covariate: Vec<f64>,
    pub enp_model: f64,
    /// Trace of the model hat matrix as assembled by the fitter.
    pub hat_trace: f64,
    pub leverages: Array1<f64>,
    pub sigma2_hat: f64,
    pub scales: Option<ScaleConfig>,
    pub diagnostics: MetricBundle,
    /// The selection criterion evaluated on the final model.
    pub criterion: Option<CriterionValue>,
    pub criterion_kind: CriterionKind,
    pub trace: SearchTrace,
    pub convergence: Convergence,
    pub warnings: Vec<String>,
    /// `R_j` for every covariate.
    pub projections: Vec<Array2<f64>>,
}

/// Shared read-only spatial structures for fitting one dataset.
#[derive(Debug, Clone)]
pub struct SpatialContext {
    pub neighbors: NeighborTable,
}

impl SpatialContext {
    pub fn new(data: &Dataset) -> Self {
        let table = pairwise_distances(&data.coords);
        Self {
            neighbors: NeighborTable::new(&table),
        }
    }
}

/// Quantities derived from the projection matrices.
pub(crate) struct Inference {
    pub enp: Vec<f64>,
    pub enp_model: f64,
    pub sigma2: f64,
    pub se: Array2<f64>,
    pub t: Array2<f64>,
}

pub(crate) fn inference(
    projections: &[Array2<f64>],
    x: &Array2<f64>,
    beta: &Array2<f64>,
    residuals: &Array1<f64>,
) -> Result<Inference> {
    let (n, m) = x.dim();
    let enp: Vec<f64> = projections.iter().map(|r| r.diag().sum()).collect();
    let enp_model: f64 = enp.iter().sum();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let dof = n as f64 - enp_model;
    if !(dof > 0.0) {
        return Err(MsgwrError::Calibration(format!(
            "residual degrees of freedom n - tr(S) = {dof:.3} are not positive"
        )));
    }
    let sigma2 = rss / dof;
    let mut se = Array2::<f64>::from_elem((n, m), f64::NAN);
    let mut t = Array2::<f64>::from_elem((n, m), f64::NAN);
    for (j, r) in projections.iter().enumerate() {
        for i in 0..n {
            let xij = x[[i, j]];
            if xij == 0.0 {
                continue;
            }
            let ss: f64 = r.row(i).iter().map(|v| (v / xij) * (v / xij)).sum();
            let s = (sigma2 * ss).sqrt();
            se[[i, j]] = s;
            if s > 0.0 {
                t[[i, j]] = beta[[i, j]] / s;
            }
        }
    }
    Ok(Inference {
        enp,
        enp_model,
        sigma2,
        se,
        t,
    })
}

/// Assembles a [`FitResult`] from coefficients and projections.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    model: ModelKind,
    data: &Dataset,
    beta: Array2<f64>,
    projections: Vec<Array2<f64>>,
    hat_trace: f64,
    leverages: Array1<f64>,
    scales: Option<ScaleConfig>,
    kind: CriterionKind,
    trace: SearchTrace,
    convergence: Convergence,
    warnings: Vec<String>,
) -> Result<FitResult> {
    let fitted: Array1<f64> = (&data.x * &beta).sum_axis(ndarray::Axis(1));
    let residuals = &data.y - &fitted;
    let inf = inference(&projections, &data.x, &beta, &residuals)?;
    let diagnostics = fit_metrics(
        data.y.as_slice().expect("contiguous response"),
        fitted.as_slice().expect("contiguous fitted"),
        inf.enp_model,
    )?;
    let criterion = evaluate_criterion(
        kind,
        residuals.as_slice().expect("contiguous residuals"),
        leverages.as_slice().expect("contiguous leverages"),
    )
    .map(|mut c| {
        c.trace_s = inf.enp_model;
        c
    });
    Ok(FitResult {
        model,
        beta,
        se: inf.se,
        t_values: inf.t,
        fitted,
        residuals,
        enp_per_covariate: inf.enp,
        enp_model: inf.enp_model,
        hat_trace,
        leverages,
        sigma2_hat: inf.sigma2,
        scales,
        diagnostics,
        criterion,
        criterion_kind: kind,
        trace,
        convergence,
        warnings,
        projections,
    })
}

/// Global least squares, replicated across observations.
pub fn fit_ols(data: &Dataset) -> Result<FitResult> {
    let (n, m) = data.x.dim();
    let sys = NormalSystem::accumulate(data.x.view(), data.y.view(), (0..n).map(|l| (l, 1.0)));
    let solved = sys.solve(0, &SolveOptions::default()).map_err(|e| match e {
        MsgwrError::Singular { .. } => MsgwrError::Input("design matrix is rank deficient".into()),
        other => other,
    })?;
    let beta = Array2::from_shape_fn((n, m), |(_, j)| solved.beta[j]);
    // C = (X'X)^-1 X'; R_j[i, l] = x_ij C[j, l]
    let mut c = Array2::<f64>::zeros((m, n));
    for l in 0..n {
        let z = solved.apply_inverse(data.x.row(l));
        for j in 0..m {
            c[[j, l]] = z[j];
        }
    }
    let projections: Vec<Array2<f64>> = (0..m)
        .map(|j| Array2::from_shape_fn((n, n), |(i, l)| data.x[[i, j]] * c[[j, l]]))
        .collect();
    let leverages = Array1::from_shape_fn(n, |i| projections.iter().map(|r| r[[i, i]]).sum());
    let hat_trace = leverages.sum();
    assemble(
        ModelKind::Ols,
        data,
        beta,
        projections,
        hat_trace,
        leverages,
        None,
        CriterionKind::Aicc,
        SearchTrace::default(),
        Convergence::direct(),
        Vec::new(),
    )
}

/// Fits `model` with `cfg`.
pub fn fit(model: ModelKind, data: &Dataset, ctx: &SpatialContext, cfg: &FitConfig) -> Result<FitResult> {
    match model {
        ModelKind::Ols => fit_ols(data),
        ModelKind::Gwr => fit_gwr(data, ctx, cfg),
        ModelKind::Sgwr => fit_sgwr(data, ctx, cfg),
        ModelKind::Mgwr => fit_mgwr(data, ctx, cfg),
        ModelKind::Msgwr => fit_msgwr(data, ctx, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Coordinates;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(n: usize, m: usize, seed: u64, coef: &[f64], noise: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let x = Array2::from_shape_fn((n, m), |(_, j)| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let y = Array1::from_shape_fn(n, |i| {
            (0..m).map(|j| coef[j] * x[[i, j]]).sum::<f64>() + noise * rng.random_range(-1.0..1.0)
        });
        let names = (0..m).map(|j| if j == 0 { "Intercept".into() } else { format!("x{j}") }).collect();
        Dataset::new(Coordinates::from_pairs(&pts).unwrap(), y, x, names).unwrap()
    }

    #[test]
    fn ols_noise_free_coefficients() {
        let d = dataset(30, 3, 1, &[1.5, -2.0, 0.5], 1e-9);
        let f = fit_ols(&d).unwrap();
        for i in [0, 17] {
            assert!((f.beta[[i, 0]] - 1.5).abs() < 1e-8);
            assert!((f.beta[[i, 1]] + 2.0).abs() < 1e-8);
            assert!((f.beta[[i, 2]] - 0.5).abs() < 1e-8);
        }
        assert!(f.diagnostics.rss < 1e-15);
    }

    #[test]
    fn ols_intercept_only_is_mean() {
        let d = dataset(25, 1, 4, &[3.0], 1.0);
        let f = fit_ols(&d).unwrap();
        let mean = d.y.mean().unwrap();
        assert!((f.beta[[3, 0]] - mean).abs() < 1e-12);
        assert!((f.enp_model - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_classical_standard_errors() {
        let d = dataset(50, 3, 8, &[1.0, 2.0, -1.0], 0.5);
        let f = fit_ols(&d).unwrap();
        let n = 50.0;
        let s2 = f.diagnostics.rss / (n - 3.0);
        assert!((f.sigma2_hat - s2).abs() < 1e-12);
        let sys = NormalSystem::accumulate(d.x.view(), d.y.view(), (0..50).map(|l| (l, 1.0)));
        let inv = sys.solve(0, &SolveOptions::default()).unwrap().inverse;
        for j in 0..3 {
            let se = (s2 * inv[j][j]).sqrt();
            assert!((f.se[[0, j]] - se).abs() < 1e-10);
            assert!((f.t_values[[0, j]] - f.beta[[0, j]] / se).abs() < 1e-8);
        }
    }
}
