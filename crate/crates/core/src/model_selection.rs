//! Fit criteria and the one-dimensional searches over bandwidth and alpha.
//!
//! Candidate evaluators return `None` for an infeasible candidate (a
//! degenerate neighbourhood, a non-positive AICc denominator, a leverage of
//! one). Searches never feed such candidates into arithmetic; they simply
//! lose every comparison.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{MsgwrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    #[default]
    Aicc,
    Cv,
}

impl CriterionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CriterionKind::Aicc => "aicc",
            CriterionKind::Cv => "cv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriterionValue {
    pub kind: CriterionKind,
    pub value: f64,
    pub trace_s: f64,
    /// Maximum-likelihood residual variance `RSS / n`; AICc only.
    pub sigma2_hat: Option<f64>,
}

/// Corrected AIC for a linear smoother. `Ok(None)` flags an infeasible
/// candidate (`n - 2 - tr(S) <= 0`).
pub fn aicc(n: usize, sigma2_hat: f64, trace_s: f64) -> Result<Option<f64>> {
    if !(sigma2_hat > 0.0) || !sigma2_hat.is_finite() {
        return Err(MsgwrError::Numeric(format!(
            "AICc needs a positive residual variance, got {sigma2_hat}"
        )));
    }
    let n = n as f64;
    let denom = n - 2.0 - trace_s;
    if !(denom > 0.0) {
        return Ok(None);
    }
    Ok(Some(
        n * sigma2_hat.ln() + n * (2.0 * PI).ln() + n * (n + trace_s) / denom,
    ))
}

/// Leverage-corrected leave-one-out score. `Ok(None)` when some `s_ii >= 1`.
pub fn cv_score(residuals: &[f64], leverages: &[f64]) -> Result<Option<f64>> {
    if residuals.len() != leverages.len() || residuals.is_empty() {
        return Err(MsgwrError::Parameter(
            "residual and leverage vectors must be non-empty and of equal length".into(),
        ));
    }
    if leverages.iter().any(|&s| !(s < 1.0)) {
        return Ok(None);
    }
    let n = residuals.len() as f64;
    Ok(Some(
        residuals
            .iter()
            .zip(leverages)
            .map(|(e, s)| {
                let r = e / (1.0 - s);
                r * r
            })
            .sum::<f64>()
            / n,
    ))
}

/// Criterion of a linear smoother from its residuals and hat diagonal.
pub fn evaluate_criterion(kind: CriterionKind, residuals: &[f64], leverages: &[f64]) -> Option<CriterionValue> {
    let n = residuals.len();
    let trace_s: f64 = leverages.iter().sum();
    match kind {
        CriterionKind::Aicc => {
            let rss: f64 = residuals.iter().map(|e| e * e).sum();
            let s2 = rss / n as f64;
            let value = aicc(n, s2, trace_s).ok().flatten()?;
            Some(CriterionValue { kind, value, trace_s, sigma2_hat: Some(s2) })
        }
        CriterionKind::Cv => {
            let value = cv_score(residuals, leverages).ok().flatten()?;
            Some(CriterionValue { kind, value, trace_s, sigma2_hat: None })
        }
    }
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

/// `true` when candidate `a` strictly beats `b` (infeasible loses).
fn better(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x < y,
        (Some(_), None) => true,
        _ => false,
    }
}

const GOLDEN_DELTA: f64 = 0.381_966_011_250_105_1;

/// Golden-section search over integer neighbour counts in `[k_min, k_max]`.
///
/// Brackets of width at most 4 are scanned exhaustively. Equal criterion
/// values resolve toward the larger bandwidth.
pub fn golden_section_bandwidth_search(
    mut evaluate: impl FnMut(usize) -> Option<f64>,
    k_min: usize,
    k_max: usize,
) -> Result<(usize, f64)> {
    if k_min > k_max {
        return Err(MsgwrError::Parameter(format!(
            "empty bandwidth range [{k_min}, {k_max}]"
        )));
    }
    let mut cache: BTreeMap<usize, Option<f64>> = BTreeMap::new();
    let mut f = |k: usize| *cache.entry(k).or_insert_with(|| finite(evaluate(k)));
    let (mut a, mut c) = (k_min, k_max);
    while c - a > 4 {
        let step = (GOLDEN_DELTA * (c - a) as f64).round() as usize;
        let b = a + step;
        let d = c - step;
        let (fb, fd) = (f(b), f(d));
        if better(fb, fd) {
            c = d;
        } else {
            a = b;
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for k in (a..=c).rev() {
        if let Some(v) = f(k) {
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((k, v));
            }
        }
    }
    best.ok_or_else(|| {
        MsgwrError::Calibration(format!(
            "no feasible bandwidth in [{k_min}, {k_max}]"
        ))
    })
}

/// Best `(alpha, value)` seen in a search; ties go to the larger alpha.
#[derive(Debug, Default)]
struct AlphaIncumbent {
    best: Option<(f64, f64)>,
    cache: BTreeMap<u64, Option<f64>>,
}

impl AlphaIncumbent {
    fn eval(&mut self, alpha: f64, evaluate: &mut impl FnMut(f64) -> Option<f64>) -> Option<f64> {
        let alpha = alpha.clamp(0.0, 1.0);
        let v = *self
            .cache
            .entry(alpha.to_bits())
            .or_insert_with(|| finite(evaluate(alpha)));
        if let Some(v) = v {
            let replace = match self.best {
                None => true,
                Some((ba, bv)) => v < bv || (v == bv && alpha > ba),
            };
            if replace {
                self.best = Some((alpha, v));
            }
        }
        v
    }
}

/// Coarse-to-fine alpha search: the grid `{0, 0.1, ..., 1}` then repeated
/// halving of the step around the incumbent until the step is `<= epsilon`.
pub fn alpha_search_dnc(
    mut evaluate: impl FnMut(f64) -> Option<f64>,
    epsilon: f64,
) -> Result<Option<(f64, f64)>> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(MsgwrError::Parameter(format!(
            "alpha search precision {epsilon} outside (0, 1)"
        )));
    }
    let mut inc = AlphaIncumbent::default();
    for g in 0..=10 {
        inc.eval(g as f64 / 10.0, &mut evaluate);
    }
    let mut step = 0.1;
    while step > epsilon {
        let Some((centre, _)) = inc.best else { break };
        step /= 2.0;
        for cand in [centre - step, centre + step] {
            if (0.0..=1.0).contains(&cand) {
                inc.eval(cand, &mut evaluate);
            }
        }
    }
    Ok(inc.best)
}

/// Multi-start hill climbing over alpha with a fixed step, optionally
/// followed by a finer climb from the winner.
pub fn alpha_search_greedy(
    mut evaluate: impl FnMut(f64) -> Option<f64>,
    seeds: &[f64],
    step: f64,
    refine_step: Option<f64>,
) -> Result<Option<(f64, f64)>> {
    if !(step > 0.0) {
        return Err(MsgwrError::Parameter(format!("greedy step {step} must be positive")));
    }
    if let Some(s) = seeds.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(MsgwrError::Parameter(format!("seed {s} outside [0, 1]")));
    }
    let mut inc = AlphaIncumbent::default();
    let climb = |inc: &mut AlphaIncumbent, evaluate: &mut dyn FnMut(f64) -> Option<f64>, start: f64, h: f64| {
        let mut ev = |a: f64| evaluate(a);
        let mut pos = start;
        let mut val = inc.eval(pos, &mut ev);
        loop {
            let mut moved = false;
            for cand in [pos + h, pos - h] {
                let cand = cand.clamp(0.0, 1.0);
                if cand == pos {
                    continue;
                }
                let v = inc.eval(cand, &mut ev);
                if better(v, val) {
                    pos = cand;
                    val = v;
                    moved = true;
                    break;
                }
            }
            if !moved {
                break;
            }
        }
    };
    for &s in seeds {
        climb(&mut inc, &mut evaluate, s, step);
    }
    if let (Some(h), Some((winner, _))) = (refine_step, inc.best) {
        if h > 0.0 {
            climb(&mut inc, &mut evaluate, winner, h);
        }
    }
    Ok(inc.best)
}

/// Which alpha search to run, with its tuning constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AlphaSearch {
    Dnc { epsilon: f64 },
    Greedy { seeds: Vec<f64>, step: f64, refine_step: Option<f64> },
}

impl AlphaSearch {
    pub fn dnc() -> Self {
        AlphaSearch::Dnc { epsilon: 0.005 }
    }

    pub fn greedy() -> Self {
        AlphaSearch::Greedy {
            seeds: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            step: 0.05,
            refine_step: Some(0.01),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlphaSearch::Dnc { .. } => "dnc",
            AlphaSearch::Greedy { .. } => "greedy",
        }
    }

    pub fn run(&self, evaluate: impl FnMut(f64) -> Option<f64>) -> Result<Option<(f64, f64)>> {
        match self {
            AlphaSearch::Dnc { epsilon } => alpha_search_dnc(evaluate, *epsilon),
            AlphaSearch::Greedy { seeds, step, refine_step } => {
                alpha_search_greedy(evaluate, seeds, *step, *refine_step)
            }
        }
    }
}

impl Default for AlphaSearch {
    fn default() -> Self {
        Self::dnc()
    }
}

/// Which covariate(s) a trace record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum TraceScope {
    /// A single-scale search shared by every covariate.
    All,
    Covariate(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub scope: TraceScope,
    pub bandwidth: usize,
    pub alpha: f64,
    pub criterion: f64,
    pub iteration: usize,
}

/// Append-only log of every evaluated (bandwidth, optimal alpha) pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    records: Vec<TraceRecord>,
}

impl SearchTrace {
    pub fn push(&mut self, rec: TraceRecord) {
        self.records.push(rec);
    }

    pub fn extend(&mut self, other: SearchTrace) {
        self.records.extend(other.records);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records ordered by (scope, iteration); insertion order within a group.
    pub fn sorted(&self) -> Vec<TraceRecord> {
        let mut r = self.records.clone();
        r.sort_by_key(|a| (a.scope, a.iteration));
        r
    }

    /// CSV with columns `covariate,bandwidth,alpha,criterion,iteration`; the
    /// covariate column holds `all` for single-scale searches.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["covariate", "bandwidth", "alpha", "criterion", "iteration"])?;
        for r in self.sorted() {
            let scope = match r.scope {
                TraceScope::All => "all".to_string(),
                TraceScope::Covariate(j) => j.to_string(),
            };
            wr.write_record([
                scope,
                r.bandwidth.to_string(),
                crate::io::fmt_f64(r.alpha),
                crate::io::fmt_f64(r.criterion),
                r.iteration.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut trace = SearchTrace::default();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| MsgwrError::Input(format!("trace row {}: bad {what}", row + 1));
            if rec.len() != 5 {
                return Err(bad("field count"));
            }
            let scope = match &rec[0] {
                "all" => TraceScope::All,
                s => TraceScope::Covariate(s.parse().map_err(|_| bad("covariate"))?),
            };
            trace.push(TraceRecord {
                scope,
                bandwidth: rec[1].parse().map_err(|_| bad("bandwidth"))?,
                alpha: rec[2].parse().map_err(|_| bad("alpha"))?,
                criterion: rec[3].parse().map_err(|_| bad("criterion"))?,
                iteration: rec[4].parse().map_err(|_| bad("iteration"))?,
            });
        }
        Ok(trace)
    }
}
