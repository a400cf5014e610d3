//! Command-line driver.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::diagnostics::{morans_i, MoranResult};
use crate::error::{MsgwrError, Result};
use crate::estimators::{fit, FitResult, ModelKind, SocKind, SpatialContext};
use crate::io::{
    load_dataset, read_meta, with_suffix, write_coefficients, write_compare, write_json, write_moran, write_scales,
    write_simulation, AlphaSearchKind, RunConfig, Standardization, Summary,
};
use crate::local_fit::Dataset;
use crate::model_selection::{CriterionKind, SearchTrace};
use crate::simulation::{generate, Scenario, SimulationConfig};

pub const EXIT_NON_CONVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "msgwr", version, about = "Multiscale similarity and geographically weighted regression")]
struct Cli {
    /// Worker threads for local fits (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model and write coefficients, summary and search trace.
    Fit(FitArgs),
    /// Generate a synthetic dataset with known coefficients.
    Simulate(SimulateArgs),
    /// Fit OLS, GWR, SGWR, MGWR and M-SGWR and tabulate their fit.
    Compare(DataArgs),
    /// Write the bandwidth/alpha search trace of one model, or re-emit an
    /// existing trace file in sorted order.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Ols,
    Gwr,
    Sgwr,
    Mgwr,
    Msgwr,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ols => ModelKind::Ols,
            ModelArg::Gwr => ModelKind::Gwr,
            ModelArg::Sgwr => ModelKind::Sgwr,
            ModelArg::Mgwr => ModelKind::Mgwr,
            ModelArg::Msgwr => ModelKind::Msgwr,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    Aicc,
    Cv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SearchArg {
    Dnc,
    Greedy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SocArg {
    Coef,
    Rss,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Mixed,
    PureGeo,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV (overrides the config file).
    #[arg(long)]
    data: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path stem (default: the input path without extension).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    x_col: Option<String>,
    #[arg(long)]
    y_col: Option<String>,
    #[arg(long)]
    response: Option<String>,
    /// Comma-separated predictor columns.
    #[arg(long, value_delimiter = ',')]
    predictors: Option<Vec<String>>,
    #[arg(long)]
    id_col: Option<String>,
    #[arg(long, value_enum)]
    criterion: Option<CriterionArg>,
    #[arg(long, value_enum)]
    alpha_search: Option<SearchArg>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, value_enum)]
    soc: Option<SocArg>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Force z-scoring of the response and predictors.
    #[arg(long, conflicts_with = "no_standardize")]
    standardize: bool,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    moran_k: Option<usize>,
    /// Add a seeded permutation test with this many draws.
    #[arg(long)]
    moran_permutations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep outputs of runs that end without convergence (exit code 4).
    #[arg(long)]
    keep_partial: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct TraceArgs {
    /// Existing trace CSV to re-emit instead of fitting.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "mixed")]
    scenario: ScenarioArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = crate::simulation::DEFAULT_GRID_SIDE)]
    grid_side: usize,
    #[arg(long, default_value_t = crate::simulation::DEFAULT_NOISE_SD)]
    noise_sd: f64,
    /// Output path stem; writes `<stem>.csv`, `<stem>.true_beta.csv` and
    /// `<stem>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

/// Tracks written files so a failed run can remove them.
#[derive(Default)]
struct Outputs {
    paths: Vec<PathBuf>,
}

impl Outputs {
    fn add(&mut self, p: PathBuf) -> PathBuf {
        self.paths.push(p.clone());
        p
    }

    fn remove_all(&self) {
        for p in &self.paths {
            let _ = std::fs::remove_file(p);
        }
    }
}

enum Outcome {
    Done,
    NotConverged,
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut outputs = Outputs::default();
    let keep_partial = match &cli.command {
        Command::Fit(a) => a.data.keep_partial,
        Command::Compare(a) => a.keep_partial,
        Command::Trace(a) => a.data.keep_partial,
        Command::Simulate(_) => false,
    };
    let mut run = || dispatch(&cli.command, &mut outputs);
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(MsgwrError::Parameter(format!("thread pool: {e}"))),
        },
        None => run(),
    };
    match result {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: backfitting did not converge");
            if !keep_partial {
                outputs.remove_all();
                eprintln!("outputs removed; rerun with --keep-partial to retain them");
            }
            EXIT_NON_CONVERGENCE
        }
        Err(e) => {
            outputs.remove_all();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command, outputs: &mut Outputs) -> Result<Outcome> {
    match cmd {
        Command::Fit(a) => run_fit(a.model.map(Into::into), &a.data, outputs, false),
        Command::Trace(a) => match &a.from {
            Some(p) => reemit_trace(p, a.data.out.as_deref(), outputs),
            None => run_fit(a.model.map(Into::into), &a.data, outputs, true),
        },
        Command::Compare(a) => run_compare(a, outputs),
        Command::Simulate(a) => run_simulate(a, outputs),
    }
}

fn resolve_config(a: &DataArgs, model: Option<ModelKind>) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = model {
        cfg.model = m;
    }
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    let cols = &mut cfg.columns;
    if let Some(v) = &a.x_col {
        cols.x_col = v.clone();
    }
    if let Some(v) = &a.y_col {
        cols.y_col = v.clone();
    }
    if let Some(v) = &a.response {
        cols.response = v.clone();
    }
    if let Some(v) = &a.predictors {
        cols.predictors = v.clone();
    }
    if let Some(v) = &a.id_col {
        cols.id_col = Some(v.clone());
    }
    if let Some(c) = a.criterion {
        cfg.criterion = match c {
            CriterionArg::Aicc => CriterionKind::Aicc,
            CriterionArg::Cv => CriterionKind::Cv,
        };
    }
    if let Some(s) = a.alpha_search {
        cfg.alpha_search = match s {
            SearchArg::Dnc => AlphaSearchKind::Dnc,
            SearchArg::Greedy => AlphaSearchKind::Greedy,
        };
    }
    if let Some(p) = a.phi {
        cfg.phi = p;
    }
    if let Some(s) = a.soc {
        cfg.soc = match s {
            SocArg::Coef => SocKind::Coef,
            SocArg::Rss => SocKind::Rss,
        };
    }
    if let Some(m) = a.max_iters {
        cfg.max_iters = m;
    }
    if a.standardize {
        cfg.standardize = Some(true);
    }
    if a.no_standardize {
        cfg.standardize = Some(false);
    }
    if let Some(k) = a.moran_k {
        cfg.moran_k = k;
    }
    if let Some(p) = a.moran_permutations {
        cfg.moran_permutations = Some(p);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.apply_env()?;
    Ok(cfg)
}

struct Prepared {
    data: Dataset,
    ids: Vec<String>,
    standardization: Option<Standardization>,
    stem: PathBuf,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let path = cfg
        .data
        .clone()
        .ok_or_else(|| MsgwrError::Input("no input dataset given (--data or `data` in the config)".into()))?;
    let loaded = load_dataset(&path, &cfg.columns)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let simulated = read_meta(&path).is_some_and(|m| m.simulated);
    let standardize = cfg.standardize.unwrap_or(!simulated);
    let (data, standardization) = if standardize {
        let (d, s) = crate::io::standardize(&loaded.dataset)?;
        (d, Some(s))
    } else {
        (loaded.dataset, None)
    };
    let stem = cfg.out.clone().unwrap_or_else(|| path.with_extension(""));
    Ok(Prepared {
        data,
        ids: loaded.ids,
        standardization,
        stem,
    })
}

fn moran(cfg: &RunConfig, fit: &FitResult, ctx: &SpatialContext) -> Result<MoranResult> {
    let perms = cfg.moran_permutations.map(|d| (d, cfg.seed));
    morans_i(fit.residuals.as_slice().expect("contiguous residuals"), &ctx.neighbors, cfg.moran_k, perms)
}

fn run_fit(model: Option<ModelKind>, a: &DataArgs, outputs: &mut Outputs, trace_only: bool) -> Result<Outcome> {
    let cfg = resolve_config(a, model)?;
    let p = prepare(&cfg)?;
    let ctx = SpatialContext::new(&p.data);
    let fc = cfg.fit_config(p.data.n(), p.data.m());
    let result = fit(cfg.model, &p.data, &ctx, &fc)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let trace_path = outputs.add(with_suffix(&p.stem, ".trace.csv"));
    result.trace.write_csv(std::fs::File::create(&trace_path)?)?;
    if !trace_only {
        let mi = moran(&cfg, &result, &ctx)?;
        let coef = outputs.add(with_suffix(&p.stem, ".coefficients.csv"));
        write_coefficients(&coef, &p.data, &p.ids, &result)?;
        let summary = Summary::new(&result, &p.data, &cfg, p.standardization.as_ref(), Some(&mi));
        let sp = outputs.add(with_suffix(&p.stem, ".summary.json"));
        write_json(&sp, &summary)?;
        report(&result, &p.data, Some(&mi));
    }
    Ok(if result.convergence.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn report(fit: &FitResult, data: &Dataset, mi: Option<&MoranResult>) {
    let d = &fit.diagnostics;
    println!(
        "{}: adj R2 {:.3}, AICc {:.3}, RSS {:.3}, RMSE {:.3}, ENP {:.3}",
        fit.model.label(),
        d.adj_r2,
        d.aicc,
        d.rss,
        d.rmse,
        fit.enp_model
    );
    if let Some(s) = &fit.scales {
        for (j, name) in data.names.iter().enumerate() {
            println!("  {name}: bandwidth {}, alpha {:.3}", s.bandwidths[j], s.alphas[j]);
        }
    }
    if let Some(m) = mi {
        println!("  residual Moran's I {:.4} (E[I] {:.4}, z {:.3}, p {:.4})", m.i, m.expected, m.z, m.p_value);
    }
}

fn run_compare(a: &DataArgs, outputs: &mut Outputs) -> Result<Outcome> {
    let cfg = resolve_config(a, None)?;
    let p = prepare(&cfg)?;
    let ctx = SpatialContext::new(&p.data);
    let fc = cfg.fit_config(p.data.n(), p.data.m());
    let mut fits = Vec::new();
    for model in ModelKind::ALL {
        let f = fit(model, &p.data, &ctx, &fc)?;
        for w in &f.warnings {
            eprintln!("warning: {} {w}", model.label());
        }
        fits.push(f);
    }
    let morans: Vec<(ModelKind, MoranResult)> = fits
        .iter()
        .map(|f| moran(&cfg, f, &ctx).map(|m| (f.model, m)))
        .collect::<Result<_>>()?;
    let cp = outputs.add(with_suffix(&p.stem, ".compare.csv"));
    let rows: Vec<_> = fits.iter().map(|f| (f.model, f.diagnostics)).collect();
    write_compare(&cp, &rows)?;
    let sp = outputs.add(with_suffix(&p.stem, ".scales.csv"));
    write_scales(&sp, &p.data.names, &fits.iter().collect::<Vec<_>>())?;
    let mp = outputs.add(with_suffix(&p.stem, ".moran.csv"));
    write_moran(&mp, &morans)?;
    for (f, (_, m)) in fits.iter().zip(&morans) {
        report(f, &p.data, Some(m));
    }
    Ok(if fits.iter().all(|f| f.convergence.converged) {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn reemit_trace(from: &Path, out: Option<&Path>, outputs: &mut Outputs) -> Result<Outcome> {
    let trace = SearchTrace::read_csv(std::fs::File::open(from)?)?;
    match out {
        Some(stem) => {
            let p = outputs.add(with_suffix(stem, ".trace.csv"));
            trace.write_csv(std::fs::File::create(p)?)?;
        }
        None => trace.write_csv(std::io::stdout().lock())?,
    }
    Ok(Outcome::Done)
}

fn run_simulate(a: &SimulateArgs, outputs: &mut Outputs) -> Result<Outcome> {
    let mut seed_cfg = RunConfig {
        seed: a.seed.unwrap_or(0),
        ..RunConfig::default()
    };
    seed_cfg.apply_env()?;
    let scenario = match a.scenario {
        ScenarioArg::Mixed => Scenario::Mixed,
        ScenarioArg::PureGeo => Scenario::PureGeo,
    };
    let sim_cfg = SimulationConfig {
        grid_side: a.grid_side,
        noise_sd: a.noise_sd,
        ..SimulationConfig::default()
    };
    let sim = generate(scenario, seed_cfg.seed, &sim_cfg)?;
    // register before writing so a failure midway removes partial files
    for suffix in [".csv", ".true_beta.csv", ".meta.json"] {
        outputs.add(with_suffix(&a.out, suffix));
    }
    let written = write_simulation(&a.out, &sim)?;
    println!(
        "wrote {} ({} points, scenario {}, seed {})",
        written[0].display(),
        sim.dataset.n(),
        scenario.as_str(),
        seed_cfg.seed
    );
    Ok(Outcome::Done)
}
