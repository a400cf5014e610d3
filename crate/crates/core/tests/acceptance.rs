//! Acceptance gate. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero when any gated criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use msgwr::diagnostics::morans_i;
use msgwr::estimators::{fit_gwr, fit_mgwr, fit_msgwr, fit_ols, CovariateScale};
use msgwr::geometry::{pairwise_distances, Coordinates, NeighborTable};
use msgwr::io::{load_dataset, standardize, RunConfig};
use msgwr::local_fit::{weighted_least_squares, SolveOptions};
use msgwr::model_selection::{
    aicc, alpha_search_dnc, alpha_search_greedy, cv_score, golden_section_bandwidth_search,
};
use msgwr::simulation::{gen_mixed_effects, gen_pure_geographic, score_recovery, SimulationConfig};
use msgwr::weights::{bisquare, similarity};
use msgwr::{fit, Dataset, FitConfig, FitResult, ModelKind, SpatialContext};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REDUCTION_TOL: f64 = 1e-8;
const REDUCTION_BUDGET: Duration = Duration::from_secs(120);
const PURE_GEO_BUDGET: Duration = Duration::from_secs(15 * 60);
const ALPHA_INTERIOR_MAX: f64 = 0.9;
const PRESS_TOL: f64 = 1e-10;
const AICC_ORACLE_TOL: f64 = 1e-6;
const WLS_TOL: f64 = 1e-10;
const ENP_TOL: f64 = 1e-8;
const T_REL_TOL: f64 = 1e-12;
const DNC_EPS: f64 = 0.005;
const COVID_ADJ_R2: f64 = 0.536;
const COVID_ADJ_R2_TOL: f64 = 0.02;
const SIM_SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn compare_fits(a: &FitResult, b: &FitResult) -> (f64, f64, f64) {
    (
        max_abs_diff(a.beta.iter().copied(), b.beta.iter().copied()),
        max_abs_diff(a.fitted.iter().copied(), b.fitted.iter().copied()),
        (a.diagnostics.aicc - b.diagnostics.aicc).abs(),
    )
}

/// Dense solve with partial pivoting; returns `None` for a singular system.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// `(X'WX)^-1 X'W y` from explicit normal equations.
fn wls_oracle(x: &Array2<f64>, y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let (n, m) = x.dim();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for l in 0..n {
        for p in 0..m {
            b[p] += w[l] * x[[l, p]] * y[l];
            for q in 0..m {
                a[p][q] += w[l] * x[[l, p]] * x[[l, q]];
            }
        }
    }
    gauss_solve(a, b)
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, m: usize, intercept: bool) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |(_, j)| {
        if intercept && j == 0 {
            1.0
        } else {
            rng.random_range(-2.0..2.0)
        }
    })
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Dataset {
    loop {
        let x = random_design(rng, n, m, true);
        let y = Array1::from_shape_fn(n, |i| x.row(i).sum() + rng.random_range(-1.0..1.0));
        let coords =
            Coordinates::new((0..n).map(|_| rng.random()).collect(), (0..n).map(|_| rng.random()).collect())
                .expect("coordinates");
        let names = (0..m).map(|j| format!("x{j}")).collect();
        if let Ok(d) = Dataset::new(coords, y, x, names) {
            return d;
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sim_cfg = SimulationConfig { grid_side: 20, ..SimulationConfig::default() };
    let sim = gen_pure_geographic(SIM_SEED, &sim_cfg).expect("simulate");
    let data = &sim.dataset;
    let ctx = SpatialContext::new(data);
    let cfg = FitConfig::default();

    let gwr = fit_gwr(data, &ctx, &cfg).expect("gwr");
    let k = gwr.scales.as_ref().expect("gwr bandwidth").bandwidths[0];
    let mut pinned = cfg.clone();
    pinned.pins = vec![CovariateScale { bandwidth: Some(k), alpha: Some(1.0) }; data.m()];
    let equal = fit_msgwr(data, &ctx, &pinned).expect("pinned msgwr");
    let (b1, f1, a1) = compare_fits(&equal, &gwr);
    let gwr_ok = b1 <= REDUCTION_TOL && f1 <= REDUCTION_TOL && a1 <= REDUCTION_TOL;

    let mgwr = fit_mgwr(data, &ctx, &cfg).expect("mgwr");
    let mut geo_only = cfg.clone();
    geo_only.pins = vec![CovariateScale { bandwidth: None, alpha: Some(1.0) }; data.m()];
    let free = fit_msgwr(data, &ctx, &geo_only).expect("alpha-1 msgwr");
    let (b2, f2, a2) = compare_fits(&free, &mgwr);
    let mgwr_ok = b2 <= REDUCTION_TOL && f2 <= REDUCTION_TOL && a2 <= REDUCTION_TOL;

    let elapsed = start.elapsed();
    let time_ok = elapsed < REDUCTION_BUDGET;
    Outcome::new(
        gwr_ok && mgwr_ok && time_ok,
        format!(
            "equal bw {k}, alpha=1 vs GWR: |dbeta| {b1:.3e} |dfit| {f1:.3e} |dAICc| {a1:.3e} [{}]; \
             free bw, alpha=1 vs MGWR: |dbeta| {b2:.3e} |dfit| {f2:.3e} |dAICc| {a2:.3e} [{}]; \
             {:.1}s [{}]",
            ok(gwr_ok),
            ok(mgwr_ok),
            elapsed.as_secs_f64(),
            ok(time_ok)
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let sim = gen_pure_geographic(SIM_SEED, &SimulationConfig::default()).expect("simulate");
    let data = &sim.dataset;
    let ctx = SpatialContext::new(data);
    let res = fit_msgwr(data, &ctx, &FitConfig::default()).expect("msgwr");
    let alphas = &res.scales.as_ref().expect("scales").alphas;
    let elapsed = start.elapsed();
    let pass = data.n() == 900 && alphas.iter().all(|&a| a == 1.0) && elapsed < PURE_GEO_BUDGET;
    Outcome::new(
        pass,
        format!("n {} alphas {alphas:?} in {:.1}s", data.n(), elapsed.as_secs_f64()),
    )
}

/// Criterion 3, plus the fits reused by criterion 7.
fn criterion_3() -> (Outcome, Vec<(Dataset, FitResult)>) {
    let sim = gen_mixed_effects(SIM_SEED, &SimulationConfig::default()).expect("simulate");
    let data = &sim.dataset;
    let ctx = SpatialContext::new(data);
    let cfg = FitConfig::default();
    let mgwr = fit_mgwr(data, &ctx, &cfg).expect("mgwr");
    let msgwr = fit_msgwr(data, &ctx, &cfg).expect("msgwr");
    let alphas = msgwr.scales.as_ref().expect("scales").alphas.clone();
    let r_mg = score_recovery(&sim.true_beta, &mgwr.beta).expect("score").rmse;
    let r_ms = score_recovery(&sim.true_beta, &msgwr.beta).expect("score").rmse;

    let endpoints = alphas[0] == 1.0 && alphas[1] == 1.0;
    let interior = alphas[2..].iter().all(|&a| a <= ALPHA_INTERIOR_MAX);
    let rmse = (2..5).all(|j| r_ms[j] <= r_mg[j]);
    let aicc = msgwr.diagnostics.aicc <= mgwr.diagnostics.aicc;
    let rounded = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    let out = Outcome::new(
        endpoints && interior && rmse && aicc,
        format!(
            "alphas [{}] endpoints [{}] interior [{}]; RMSE b2-b4 MGWR [{}] M-SGWR [{}] [{}]; \
             AICc MGWR {:.3} M-SGWR {:.3} [{}]",
            rounded(&alphas),
            ok(endpoints),
            ok(interior),
            rounded(&r_mg[2..]),
            rounded(&r_ms[2..]),
            ok(rmse),
            mgwr.diagnostics.aicc,
            msgwr.diagnostics.aicc,
            ok(aicc)
        ),
    );
    let mut fits = vec![(data.clone(), mgwr), (data.clone(), msgwr)];
    fits.push((data.clone(), fit_ols(data).expect("ols")));
    fits.push((data.clone(), fit(ModelKind::Gwr, data, &ctx, &cfg).expect("gwr")));
    fits.push((data.clone(), fit(ModelKind::Sgwr, data, &ctx, &cfg).expect("sgwr")));
    (out, fits)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(8..=30);
        let m = rng.random_range(1..=4);
        let data = random_dataset(&mut rng, n, m);
        let ols = fit_ols(&data).expect("ols");
        let press = cv_score(ols.residuals.as_slice().unwrap(), ols.leverages.as_slice().unwrap())
            .expect("cv")
            .expect("feasible");
        let y = data.y.as_slice().unwrap();
        let mut loo = 0.0;
        for i in 0..n {
            let w: Vec<f64> = (0..n).map(|l| if l == i { 0.0 } else { 1.0 }).collect();
            let b = wls_oracle(&data.x, y, &w).expect("refit");
            let pred: f64 = (0..m).map(|j| data.x[[i, j]] * b[j]).sum();
            loo += (y[i] - pred).powi(2);
        }
        loo /= n as f64;
        worst = worst.max((press - loo).abs() / loo.max(1.0));
    }
    Outcome::new(worst <= PRESS_TOL, format!("20 instances, worst scaled |PRESS - LOO| {worst:.3e}"))
}

fn criterion_5() -> Outcome {
    // n ln s2 + n ln 2pi + n (n + tr) / (n - 2 - tr) at n = 100, s2 = 1, tr = 5
    let oracle = 100.0 * (2.0 * std::f64::consts::PI).ln() + 100.0 * 105.0 / 93.0;
    let got = aicc(100, 1.0, 5.0).expect("aicc").expect("feasible");
    let aicc_ok = (got - oracle).abs() <= AICC_ORACLE_TOL && format!("{got:.6}") == "296.690932";
    let kernel = bisquare(0.5, 1.0);
    let attr = similarity(1.3, 1.3);
    let pass = aicc_ok && kernel == 0.5625 && attr == 0.5;
    Outcome::new(
        pass,
        format!("aicc(100, 1, 5) = {got:.9} (oracle {oracle:.9}); w(r/2) = {kernel}; w_attr(SD) = {attr}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut beta_err, mut hat_err, mut rowsum_err) = (0.0f64, 0.0f64, 0.0f64);
    let opts = SolveOptions::default();
    let mut done = 0;
    while done < 100 {
        let n = rng.random_range(6..=40);
        let m = rng.random_range(1..=5.min(n - 2));
        let intercept = rng.random_bool(0.7);
        let x = random_design(&mut rng, n, m, intercept);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> =
            (0..n).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.01..1.0) }).collect();
        let point = rng.random_range(0..n);
        let Some(oracle) = wls_oracle(&x, &y, &w) else { continue };
        let Ok(row) = weighted_least_squares(x.view(), Array1::from(y.clone()).view(), &w, point, &opts) else {
            continue;
        };
        beta_err = beta_err.max(max_abs_diff(row.beta.iter().copied(), oracle.iter().copied()));
        // hat row: column l is the point prediction's derivative with respect to y_l
        for l in 0..n {
            let mut e = vec![0.0; n];
            e[l] = 1.0;
            let b = wls_oracle(&x, &e, &w).expect("oracle");
            let h: f64 = (0..m).map(|j| x[[point, j]] * b[j]).sum();
            hat_err = hat_err.max((h - row.hat_row[l]).abs());
        }
        if intercept {
            rowsum_err = rowsum_err.max((row.hat_row.iter().sum::<f64>() - 1.0).abs());
        }
        done += 1;
    }
    let pass = beta_err <= WLS_TOL && hat_err <= WLS_TOL && rowsum_err <= WLS_TOL;
    Outcome::new(
        pass,
        format!("100 instances: |dbeta| {beta_err:.3e} |dhat| {hat_err:.3e} |rowsum - 1| {rowsum_err:.3e}"),
    )
}

fn criterion_7(fits: &[(Dataset, FitResult)]) -> Outcome {
    let (mut enp_err, mut t_err) = (0.0f64, 0.0f64);
    let mut se_ok = true;
    for (_, f) in fits {
        let traces: f64 = f.projections.iter().map(|r| r.diag().sum()).sum();
        enp_err = enp_err.max((f.enp_model - traces).abs());
        se_ok &= f.se.iter().all(|&s| s > 0.0);
        for ((b, s), t) in f.beta.iter().zip(&f.se).zip(&f.t_values) {
            t_err = t_err.max((t - b / s).abs() / t.abs().max(1.0));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(616);
    let n = 616;
    let coords =
        Coordinates::new((0..n).map(|_| rng.random()).collect(), (0..n).map(|_| rng.random()).collect())
            .expect("coordinates");
    let nb = NeighborTable::new(&pairwise_distances(&coords));
    let resid: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mi = morans_i(&resid, &nb, 8, None).expect("moran");
    let expected_ok = mi.expected == -1.0 / 615.0 && format!("{:.3}", mi.expected) == "-0.002";
    let pass = enp_err <= ENP_TOL && se_ok && t_err <= T_REL_TOL && expected_ok;
    let models: Vec<_> = fits.iter().map(|(_, f)| f.model.label()).collect();
    Outcome::new(
        pass,
        format!(
            "{}: |ENP - sum tr R_j| {enp_err:.3e}; SE > 0 [{}]; |t - beta/SE| {t_err:.3e}; E[I] at n=616 {:.3}",
            models.join("/"),
            ok(se_ok),
            mi.expected
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut golden_ok = 0;
    for _ in 0..50 {
        let k_min = rng.random_range(2..40);
        let k_max = rng.random_range(k_min + 1..=200);
        let centre = rng.random_range(k_min as f64..=k_max as f64);
        let (left, right) = (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0));
        let power = rng.random_range(1.0..3.0);
        let f = |k: usize| {
            let d = k as f64 - centre;
            (if d < 0.0 { left } else { right }) * d.abs().powf(power)
        };
        let mut best = (k_min, f(k_min));
        for k in k_min..=k_max {
            if f(k) <= best.1 {
                best = (k, f(k));
            }
        }
        let got = golden_section_bandwidth_search(|k| Some(f(k)), k_min, k_max).expect("search");
        if got.0 == best.0 {
            golden_ok += 1;
        }
    }

    let mut dnc_worst = 0.0f64;
    let targets: Vec<f64> = std::iter::once(0.371).chain((0..19).map(|_| rng.random_range(0.0..1.0))).collect();
    for &t in &targets {
        let (a, _) = alpha_search_dnc(|a| Some((a - t).powi(2)), DNC_EPS).expect("dnc").expect("feasible");
        dnc_worst = dnc_worst.max((a - t).abs());
    }

    let two_basin = |deep: f64, shallow: f64| {
        move |a: f64| Some(((a - deep).powi(2) - 0.5).min((a - shallow).powi(2) - 0.3))
    };
    let seeds = [0.0, 0.5, 1.0];
    let step = 0.05;
    let mut greedy_ok = true;
    for (deep, shallow) in [(0.1, 0.9), (0.9, 0.1)] {
        let (a, _) = alpha_search_greedy(two_basin(deep, shallow), &seeds, step, None)
            .expect("greedy")
            .expect("feasible");
        greedy_ok &= (a - deep).abs() <= step;
    }

    let pass = golden_ok == 50 && dnc_worst <= DNC_EPS && greedy_ok;
    Outcome::new(
        pass,
        format!(
            "golden-section exact on {golden_ok}/50; DnC worst |alpha - target| {dnc_worst:.4}; greedy better basin [{}]",
            ok(greedy_ok)
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_msgwr"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn compare_run(dir: &Path) -> Option<Vec<(String, Vec<u8>)>> {
    let stem = dir.join("sim");
    let stem = stem.to_str()?;
    let data = format!("{stem}.csv");
    let out = dir.join("run");
    let seed = SIM_SEED.to_string();
    if !run_cli(&["simulate", "--scenario", "mixed", "--seed", &seed, "--grid-side", "20", "--out", stem]) {
        return None;
    }
    if !run_cli(&[
        "compare",
        "--data",
        &data,
        "--out",
        out.to_str()?,
        "--seed",
        &seed,
        "--moran-permutations",
        "99",
    ]) {
        return None;
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap_or_default()))
        .collect();
    files.sort();
    Some(files)
}

fn criterion_9() -> Outcome {
    let (a, b) = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    match (compare_run(a.path()), compare_run(b.path())) {
        (Some(x), Some(y)) => {
            let names: Vec<_> = x.iter().map(|(n, _)| n.as_str()).collect();
            let compared = names.iter().any(|n| n.ends_with(".compare.csv"));
            Outcome::new(compared && x == y, format!("files {names:?} identical [{}]", ok(x == y)))
        }
        _ => Outcome::new(false, "a simulate/compare run failed"),
    }
}

/// `None` when no external dataset is configured.
fn criterion_10() -> Option<Outcome> {
    let path = std::env::var_os("MSGWR_COVID_CONFIG")?;
    let run = match RunConfig::load(Path::new(&path)) {
        Ok(r) => r,
        Err(e) => return Some(Outcome::new(false, format!("config: {e}"))),
    };
    let Some(data_path) = run.data.clone() else {
        return Some(Outcome::new(false, "config names no data file"));
    };
    let loaded = match load_dataset(&data_path, &run.columns) {
        Ok(l) => l,
        Err(e) => return Some(Outcome::new(false, format!("load: {e}"))),
    };
    let raw = loaded.dataset;
    let scaled = standardize(&raw).expect("standardize").0;
    let mut details = Vec::new();
    let mut pass = false;
    for (label, data) in [("raw", &raw), ("standardized", &scaled)] {
        let ctx = SpatialContext::new(data);
        let cfg = run.fit_config(data.n(), data.m());
        let fits: Vec<FitResult> =
            ModelKind::ALL.iter().map(|&m| fit(m, data, &ctx, &cfg).expect("fit")).collect();
        let adj = fits[0].diagnostics.adj_r2;
        let best = fits
            .iter()
            .min_by(|a, b| a.diagnostics.aicc.total_cmp(&b.diagnostics.aicc))
            .map(|f| f.model)
            .expect("models");
        let this = (adj - COVID_ADJ_R2).abs() <= COVID_ADJ_R2_TOL && best == ModelKind::Msgwr;
        pass |= this;
        details.push(format!("{label}: OLS adj-R2 {adj:.3}, lowest AICc {} [{}]", best.label(), ok(this)));
    }
    Some(Outcome::new(pass, details.join("; ")))
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fail"
    }
}

fn report(id: &str, name: &str, o: &Outcome) {
    println!("{} {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    // cargo passes harness flags such as --list or filters; only --list needs an answer
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failed = Vec::new();
    let mut record = |id: &'static str, name: &str, o: Outcome| {
        report(id, name, &o);
        if !o.pass {
            failed.push(id);
        }
    };
    record("1", "reduction lattice", criterion_1());
    record("2", "pure-geographic alpha recovery", criterion_2());
    let (c3, fits) = criterion_3();
    record("3", "mixed-effects alpha pattern", c3);
    record("4", "PRESS identity", criterion_4());
    record("5", "AICc arithmetic and kernel points", criterion_5());
    record("6", "WLS oracle equivalence", criterion_6());
    record("7", "inference consistency", criterion_7(&fits));
    record("8", "search correctness", criterion_8());
    record("9", "determinism", criterion_9());
    match criterion_10() {
        Some(o) => record("10", "external COVID dataset", o),
        None => println!("SKIP 10 external COVID dataset: MSGWR_COVID_CONFIG not set"),
    }
    if failed.is_empty() {
        println!("acceptance: all gated criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
