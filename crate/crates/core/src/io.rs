//! Dataset CSV ingestion and export, standardization, run configuration and
//! result writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{MetricBundle, MoranResult, DEFAULT_MORAN_K};
use crate::error::{MsgwrError, Result};
use crate::estimators::{FitConfig, FitResult, ModelKind, SocKind};
use crate::geometry::Coordinates;
use crate::local_fit::{Dataset, SolveOptions};
use crate::model_selection::{AlphaSearch, CriterionKind};
use crate::simulation::SimulatedDataset;
use crate::weights::{SdKind, SimilarityConfig, DEFAULT_RHO};

/// Formats `v` with 17 significant digits, dropping trailing zeros, in the
/// manner of C's `%.17g`. Parsing the result recovers `v` exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        strip_zeros(&s).to_string()
    } else {
        let mant = strip_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Column mapping for [`load_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnSpec {
    pub x_col: String,
    pub y_col: String,
    pub response: String,
    /// Empty selects every remaining numeric column.
    pub predictors: Vec<String>,
    pub id_col: Option<String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            x_col: "u".into(),
            y_col: "v".into(),
            response: "y".into(),
            predictors: Vec::new(),
            id_col: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub ids: Vec<String>,
    pub warnings: Vec<String>,
}

fn find(headers: &[String], name: &str, path: &Path) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        MsgwrError::Input(format!("{}: missing column '{name}'", path.display()))
    })
}

/// Reads a headed CSV into a [`Dataset`] with an intercept column prepended.
pub fn load_dataset(path: &Path, spec: &ColumnSpec) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| {
        MsgwrError::Input(format!("{}: {e}", path.display()))
    })?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let xi = find(&headers, &spec.x_col, path)?;
    let yi = find(&headers, &spec.y_col, path)?;
    let ri = find(&headers, &spec.response, path)?;
    let id_i = match &spec.id_col {
        Some(c) => Some(find(&headers, c, path)?),
        None => headers.iter().position(|h| h == "id"),
    };
    let predictors: Vec<String> = if spec.predictors.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(c, _)| ![Some(xi), Some(yi), Some(ri), id_i].contains(&Some(*c)))
            .map(|(_, h)| h.clone())
            .collect()
    } else {
        spec.predictors.clone()
    };
    if predictors.is_empty() {
        return Err(MsgwrError::Input(format!("{}: no predictor columns", path.display())));
    }
    let pi: Vec<usize> = predictors.iter().map(|p| find(&headers, p, path)).collect::<Result<_>>()?;
    let mut u = Vec::new();
    let mut v = Vec::new();
    let mut y = Vec::new();
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); pi.len()];
    let mut ids = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // row numbers are 1-based data rows, header excluded
        let cell = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            let val: f64 = raw.parse().map_err(|_| {
                MsgwrError::Input(format!(
                    "{}: non-numeric value '{raw}' at row {}, column '{}'",
                    path.display(),
                    row + 1,
                    headers[c]
                ))
            })?;
            if !val.is_finite() {
                return Err(MsgwrError::Input(format!(
                    "{}: non-finite value at row {}, column '{}'",
                    path.display(),
                    row + 1,
                    headers[c]
                )));
            }
            Ok(val)
        };
        u.push(cell(xi)?);
        v.push(cell(yi)?);
        y.push(cell(ri)?);
        for (col, &c) in xs.iter_mut().zip(&pi) {
            col.push(cell(c)?);
        }
        ids.push(match id_i {
            Some(c) => rec.get(c).unwrap_or("").to_string(),
            None => row.to_string(),
        });
    }
    let n = y.len();
    let mut warnings = Vec::new();
    if looks_geographic(&u, &v) {
        warnings.push(
            "coordinates look like longitude/latitude; distances are planar, project the data first".into(),
        );
    }
    let coords = Coordinates::new(u, v)?;
    if coords.duplicate_count() > 0 {
        warnings.push(format!("{} rows share coordinates with an earlier row", coords.duplicate_count()));
    }
    let mut x = Array2::<f64>::ones((n, pi.len() + 1));
    for (j, col) in xs.iter().enumerate() {
        for (i, &val) in col.iter().enumerate() {
            x[[i, j + 1]] = val;
        }
    }
    let mut names = vec!["Intercept".to_string()];
    names.extend(predictors);
    let dataset = Dataset::new(coords, Array1::from(y), x, names)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    log::info!("loaded {} rows, {} predictors from {}", n, pi.len(), path.display());
    Ok(LoadedData { dataset, ids, warnings })
}

fn looks_geographic(u: &[f64], v: &[f64]) -> bool {
    let span = |a: &[f64]| {
        let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (ul, uh) = span(u);
    let (vl, vh) = span(v);
    let in_range = ul >= -180.0 && uh <= 180.0 && vl >= -90.0 && vh <= 90.0;
    let fractional = u.iter().chain(v).any(|c| c.fract() != 0.0);
    in_range && fractional && (uh - ul > 1.0 || vh - vl > 1.0)
}

/// Writes `id,u,v,y,<predictors>` with 17-digit numbers.
pub fn write_dataset(path: &Path, data: &Dataset, ids: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "u".into(), "v".into(), "y".into()];
    header.extend(data.names.iter().skip(1).cloned());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let (u, v) = data.coords.point(i);
        let mut rec = vec![
            ids.map(|s| s[i].clone()).unwrap_or_else(|| i.to_string()),
            fmt_f64(u),
            fmt_f64(v),
            fmt_f64(data.y[i]),
        ];
        rec.extend((1..data.m()).map(|j| fmt_f64(data.x[[i, j]])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Means and population standard deviations used to z-score a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub y_mean: f64,
    pub y_sd: f64,
    /// Per design column; the intercept entry is `(0, 1)`.
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores the response and every non-intercept column.
pub fn standardize(data: &Dataset) -> Result<(Dataset, Standardization)> {
    let (n, m) = data.x.dim();
    let (y_mean, y_sd) = mean_sd(data.y.iter().copied());
    if !(y_sd > 0.0) {
        return Err(MsgwrError::Input("response has zero variance".into()));
    }
    let mut x_mean = vec![0.0; m];
    let mut x_sd = vec![1.0; m];
    let mut x = data.x.clone();
    for j in 1..m {
        let (mu, sd) = mean_sd(data.x.column(j).iter().copied());
        if !(sd > 0.0) {
            return Err(MsgwrError::Input(format!("column '{}' has zero variance", data.names[j])));
        }
        x_mean[j] = mu;
        x_sd[j] = sd;
        for i in 0..n {
            x[[i, j]] = (data.x[[i, j]] - mu) / sd;
        }
    }
    let y = data.y.mapv(|v| (v - y_mean) / y_sd);
    let out = Dataset::new(data.coords.clone(), y, x, data.names.clone())?;
    Ok((out, Standardization { y_mean, y_sd, x_mean, x_sd }))
}

impl Standardization {
    pub fn unstandardize(&self, data: &Dataset) -> Result<Dataset> {
        let (n, m) = data.x.dim();
        let mut x = data.x.clone();
        for j in 1..m {
            for i in 0..n {
                x[[i, j]] = data.x[[i, j]] * self.x_sd[j] + self.x_mean[j];
            }
        }
        let y = data.y.mapv(|v| v * self.y_sd + self.y_mean);
        Dataset::new(data.coords.clone(), y, x, data.names.clone())
    }

    /// Maps coefficients fitted on standardized data to original units.
    pub fn back_transform(&self, beta: &Array2<f64>) -> Array2<f64> {
        let (n, m) = beta.dim();
        let mut out = Array2::<f64>::zeros((n, m));
        for i in 0..n {
            let mut shift = 0.0;
            for j in 1..m {
                let b = self.y_sd * beta[[i, j]] / self.x_sd[j];
                out[[i, j]] = b;
                shift += b * self.x_mean[j];
            }
            out[[i, 0]] = self.y_mean + self.y_sd * beta[[i, 0]] - shift;
        }
        out
    }
}

/// Settings of one CLI run, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Model to fit; default `msgwr`.
    pub model: ModelKind,
    /// Bandwidth selection criterion; default `aicc`.
    pub criterion: CriterionKind,
    /// Alpha search strategy; default `dnc`.
    pub alpha_search: AlphaSearchKind,
    /// Kernel; only `adaptive-bisquare` is available.
    pub kernel: KernelKind,
    /// Backfitting tolerance; default 1e-5.
    pub phi: f64,
    /// Score of change; default `coef`.
    pub soc: SocKind,
    /// Backfitting iteration cap; default 200.
    pub max_iters: usize,
    /// Z-score inputs; default on for empirical data, off for simulated data.
    pub standardize: Option<bool>,
    /// Seed for simulation and permutation draws; default 0.
    pub seed: u64,
    /// Neighbours in the Moran's I weights; default 8.
    pub moran_k: usize,
    /// Permutation draws for Moran's I; default none.
    pub moran_permutations: Option<usize>,
    /// Zero-spread substitute for the attribute kernel; default 1e-5.
    pub rho: f64,
    /// Standard deviation convention for the attribute kernel; default `population`.
    pub sd: SdKind,
    /// Ridge fallback on singular local systems; default off.
    pub ridge: bool,
    /// Inclusive bandwidth search range; default `[m + 2, n - 1]`.
    pub bandwidth_min: Option<usize>,
    pub bandwidth_max: Option<usize>,
    /// Input CSV.
    pub data: Option<PathBuf>,
    /// Output path stem.
    pub out: Option<PathBuf>,
    pub columns: ColumnSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSearchKind {
    #[default]
    Dnc,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[default]
    AdaptiveBisquare,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Msgwr,
            criterion: CriterionKind::Aicc,
            alpha_search: AlphaSearchKind::Dnc,
            kernel: KernelKind::AdaptiveBisquare,
            phi: 1e-5,
            soc: SocKind::Coef,
            max_iters: 200,
            standardize: None,
            seed: 0,
            moran_k: DEFAULT_MORAN_K,
            moran_permutations: None,
            rho: DEFAULT_RHO,
            sd: SdKind::Population,
            ridge: false,
            bandwidth_min: None,
            bandwidth_max: None,
            data: None,
            out: None,
            columns: ColumnSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MsgwrError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MsgwrError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies the `MSGWR_SEED` override.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var("MSGWR_SEED") {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| MsgwrError::Config(format!("MSGWR_SEED '{s}' is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn fit_config(&self, n: usize, m: usize) -> FitConfig {
        let range = match (self.bandwidth_min, self.bandwidth_max) {
            (None, None) => None,
            (lo, hi) => Some((lo.unwrap_or(m + 2), hi.unwrap_or(n.saturating_sub(1)))),
        };
        FitConfig {
            criterion: self.criterion,
            alpha_search: match self.alpha_search {
                AlphaSearchKind::Dnc => AlphaSearch::dnc(),
                AlphaSearchKind::Greedy => AlphaSearch::greedy(),
            },
            similarity: SimilarityConfig { rho: self.rho, sd: self.sd },
            solve: SolveOptions { ridge: self.ridge },
            phi: self.phi,
            soc: self.soc,
            max_iters: self.max_iters,
            bandwidth_range: range,
            pins: Vec::new(),
        }
    }
}

/// Sidecar metadata written next to simulated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub simulated: bool,
    pub scenario: String,
    pub seed: u64,
    pub grid_side: usize,
}

pub fn meta_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("meta.json")
}

pub fn read_meta(data_path: &Path) -> Option<SimulationMeta> {
    let text = std::fs::read_to_string(meta_path(data_path)).ok()?;
    serde_json::from_str(&text).ok()
}

/// `<stem><suffix>`, appending to the file name rather than replacing an
/// extension.
pub fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes the simulated dataset, its true coefficients and metadata;
/// returns the paths written.
pub fn write_simulation(stem: &Path, sim: &SimulatedDataset) -> Result<Vec<PathBuf>> {
    let data_path = with_suffix(stem, ".csv");
    write_dataset(&data_path, &sim.dataset, None)?;
    let beta_path = with_suffix(stem, ".true_beta.csv");
    let mut w = csv::Writer::from_path(&beta_path)?;
    let mut header = vec!["id".to_string()];
    header.extend(sim.dataset.names.iter().map(|n| format!("beta_{n}")));
    w.write_record(&header)?;
    for i in 0..sim.dataset.n() {
        let mut rec = vec![i.to_string()];
        rec.extend(sim.true_beta.row(i).iter().map(|&b| fmt_f64(b)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = SimulationMeta {
        simulated: true,
        scenario: sim.scenario.as_str().into(),
        seed: sim.seed,
        grid_side: sim.grid_side,
    };
    let meta_file = meta_path(&data_path);
    std::fs::write(&meta_file, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(vec![data_path, beta_path, meta_file])
}

/// Reads a true-coefficient sidecar back as an n x m matrix.
pub fn read_true_beta(path: &Path) -> Result<Array2<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| MsgwrError::Input(format!("{}: non-numeric value at row {}", path.display(), r + 1)))?;
        rows.push(vals);
    }
    let m = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((rows.len(), m), rows.into_iter().flatten().collect())
        .map_err(|e| MsgwrError::Input(format!("{}: {e}", path.display())))
}

/// Per-observation estimates: `id,u,v,fitted,residual` then `beta_`, `se_`
/// and `t_` columns per covariate.
pub fn write_coefficients(path: &Path, data: &Dataset, ids: &[String], fit: &FitResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "u".into(), "v".into(), "fitted".into(), "residual".into()];
    for prefix in ["beta_", "se_", "t_"] {
        header.extend(data.names.iter().map(|n| format!("{prefix}{n}")));
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let (u, v) = data.coords.point(i);
        let mut rec = vec![ids[i].clone(), fmt_f64(u), fmt_f64(v), fmt_f64(fit.fitted[i]), fmt_f64(fit.residuals[i])];
        for mat in [&fit.beta, &fit.se, &fit.t_values] {
            rec.extend(mat.row(i).iter().map(|&b| fmt_f64(b)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Rounded {
    bandwidths: Option<Vec<usize>>,
    alphas: Option<Vec<String>>,
    adj_r2: String,
    aicc: String,
    rmse: String,
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub model: &'a str,
    pub criterion: &'a str,
    pub alpha_search: &'a str,
    pub n: usize,
    pub m: usize,
    pub names: &'a [String],
    pub standardized: bool,
    pub standardization: Option<&'a Standardization>,
    pub bandwidths: Option<&'a [usize]>,
    pub alphas: Option<&'a [f64]>,
    pub enp_per_covariate: &'a [f64],
    pub enp_model: f64,
    pub sigma2_hat: f64,
    pub criterion_value: Option<f64>,
    pub metrics: &'a MetricBundle,
    pub converged: bool,
    pub iterations: usize,
    pub soc: Option<f64>,
    pub moran: Option<&'a MoranResult>,
    pub warnings: &'a [String],
    pub seed: u64,
    rounded: Rounded,
}

impl<'a> Summary<'a> {
    pub fn new(
        fit: &'a FitResult,
        data: &'a Dataset,
        cfg: &'a RunConfig,
        standardization: Option<&'a Standardization>,
        moran: Option<&'a MoranResult>,
    ) -> Self {
        let scales = fit.scales.as_ref();
        let r3 = |v: f64| format!("{v:.3}");
        Summary {
            model: fit.model.as_str(),
            criterion: fit.criterion_kind.as_str(),
            alpha_search: match cfg.alpha_search {
                AlphaSearchKind::Dnc => "dnc",
                AlphaSearchKind::Greedy => "greedy",
            },
            n: data.n(),
            m: data.m(),
            names: &data.names,
            standardized: standardization.is_some(),
            standardization,
            bandwidths: scales.map(|s| s.bandwidths.as_slice()),
            alphas: scales.map(|s| s.alphas.as_slice()),
            enp_per_covariate: &fit.enp_per_covariate,
            enp_model: fit.enp_model,
            sigma2_hat: fit.sigma2_hat,
            criterion_value: fit.criterion.as_ref().map(|c| c.value),
            metrics: &fit.diagnostics,
            converged: fit.convergence.converged,
            iterations: fit.convergence.iterations,
            soc: Some(fit.convergence.soc).filter(|s| s.is_finite()),
            moran,
            warnings: &fit.warnings,
            seed: cfg.seed,
            rounded: Rounded {
                bandwidths: scales.map(|s| s.bandwidths.clone()),
                alphas: scales.map(|s| s.alphas.iter().map(|&a| r3(a)).collect()),
                adj_r2: r3(fit.diagnostics.adj_r2),
                aicc: r3(fit.diagnostics.aicc),
                rmse: r3(fit.diagnostics.rmse),
            },
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `model,adj_r2,aicc,rss,mae,rmse`, one row per model.
pub fn write_compare(path: &Path, rows: &[(ModelKind, MetricBundle)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "adj_r2", "aicc", "rss", "mae", "rmse"])?;
    for (model, m) in rows {
        w.write_record([
            model.label().to_string(),
            fmt_f64(m.adj_r2),
            fmt_f64(m.aicc),
            fmt_f64(m.rss),
            fmt_f64(m.mae),
            fmt_f64(m.rmse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `model,covariate,bandwidth,alpha` for every scale-bearing model.
pub fn write_scales(path: &Path, names: &[String], fits: &[&FitResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "covariate", "bandwidth", "alpha"])?;
    for f in fits {
        if let Some(s) = &f.scales {
            for (j, name) in names.iter().enumerate() {
                w.write_record([
                    f.model.label().to_string(),
                    name.clone(),
                    s.bandwidths[j].to_string(),
                    fmt_f64(s.alphas[j]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `model,I,expected,z,p_value`, one row per model.
pub fn write_moran(path: &Path, rows: &[(ModelKind, MoranResult)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "I", "expected", "z", "p_value"])?;
    for (model, r) in rows {
        w.write_record([
            model.label().to_string(),
            fmt_f64(r.i),
            fmt_f64(r.expected),
            fmt_f64(r.z),
            fmt_f64(r.p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}
