//! Weighted least squares at a single regression point.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{MsgwrError, Result};
use crate::geometry::Coordinates;
use crate::linalg::{SmallLu, RCOND_TOL};

/// Locations, response and design matrix (column 0 is the intercept).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub coords: Coordinates,
    pub y: Array1<f64>,
    pub x: Array2<f64>,
    pub names: Vec<String>,
}

impl Dataset {
    /// Validates shapes and finiteness and checks the design has full column rank.
    pub fn new(coords: Coordinates, y: Array1<f64>, x: Array2<f64>, names: Vec<String>) -> Result<Self> {
        let n = coords.len();
        if y.len() != n || x.nrows() != n {
            return Err(MsgwrError::Input(format!(
                "row counts disagree: {n} coordinates, {} responses, {} design rows",
                y.len(),
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(MsgwrError::Input(format!(
                "{} names for {} design columns",
                names.len(),
                x.ncols()
            )));
        }
        if x.ncols() == 0 {
            return Err(MsgwrError::Input("design matrix has no columns".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(MsgwrError::Input(format!("non-finite response at row {i}")));
        }
        for ((i, j), v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(MsgwrError::Input(format!(
                    "non-finite value at row {i}, column {}",
                    names[j]
                )));
            }
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(MsgwrError::Input("column 0 must be the intercept (all ones)".into()));
        }
        let ones = vec![1.0; n];
        let sys = NormalSystem::accumulate(x.view(), y.view(), (0..n).zip(ones.iter().copied()));
        let lu = SmallLu::factor(&sys.xtwx, sys.m)
            .ok_or_else(|| MsgwrError::Input("design matrix is rank deficient".into()))?;
        let rcond = lu.rcond_with(&lu.inverse_columns());
        if rcond < RCOND_TOL {
            return Err(MsgwrError::Input(format!(
                "design matrix is rank deficient (rcond {rcond:.3e})"
            )));
        }
        if rcond < 1e-8 {
            log::warn!("design matrix is nearly rank deficient (rcond {rcond:.3e})");
        }
        Ok(Self { coords, y, x, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveOptions {
    /// Add `1e-8 * trace / m` to the diagonal of the normal matrix.
    pub ridge: bool,
}

/// Local coefficients and the smoother row that maps `y` to the fitted value.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFitRow {
    pub beta: Vec<f64>,
    pub hat_row: Vec<f64>,
    pub leverage: f64,
    pub ridged: bool,
}

/// `X'WX` and `X'Wy` accumulated over a weighted support.
#[derive(Debug, Clone)]
pub(crate) struct NormalSystem {
    pub m: usize,
    pub xtwx: Vec<f64>,
    pub xtwy: Vec<f64>,
}

impl NormalSystem {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            xtwx: vec![0.0; m * m],
            xtwy: vec![0.0; m],
        }
    }

    pub fn accumulate(
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        weighted: impl Iterator<Item = (usize, f64)>,
    ) -> Self {
        let m = x.ncols();
        let mut s = Self::zeros(m);
        for (l, w) in weighted {
            if w == 0.0 {
                continue;
            }
            let row = x.row(l);
            let wy = w * y[l];
            for a in 0..m {
                let wa = w * row[a];
                s.xtwy[a] += row[a] * wy;
                for b in a..m {
                    s.xtwx[a * m + b] += wa * row[b];
                }
            }
        }
        s.symmetrize();
        s
    }

    fn symmetrize(&mut self) {
        let m = self.m;
        for a in 0..m {
            for b in 0..a {
                self.xtwx[a * m + b] = self.xtwx[b * m + a];
            }
        }
    }

    /// `alpha * self + (1 - alpha) * other`, elementwise.
    pub fn mix(&self, other: &Self, alpha: f64) -> Self {
        let f = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(&p, &q)| crate::weights::mix(p, q, alpha)).collect()
        };
        Self {
            m: self.m,
            xtwx: f(&self.xtwx, &other.xtwx),
            xtwy: f(&self.xtwy, &other.xtwy),
        }
    }

    /// Factorizes and solves, applying the ridge fallback when requested.
    pub fn solve(&self, point: usize, opts: &SolveOptions) -> Result<SolvedSystem> {
        match self.try_solve(&self.xtwx, point) {
            Ok(s) => Ok(s),
            Err(e) if !opts.ridge => Err(e),
            Err(_) => {
                let m = self.m;
                let tr: f64 = (0..m).map(|a| self.xtwx[a * m + a]).sum();
                let lambda = 1e-8 * tr / m as f64;
                let mut a = self.xtwx.clone();
                for d in 0..m {
                    a[d * m + d] += lambda;
                }
                log::debug!("ridge fallback at point {point} (lambda {lambda:.3e})");
                let mut s = self.try_solve(&a, point)?;
                s.ridged = true;
                Ok(s)
            }
        }
    }

    fn try_solve(&self, a: &[f64], point: usize) -> Result<SolvedSystem> {
        let lu = SmallLu::factor(a, self.m).ok_or(MsgwrError::Singular { point, rcond: 0.0 })?;
        let inv = lu.inverse_columns();
        let rcond = lu.rcond_with(&inv);
        if !(rcond >= RCOND_TOL) {
            return Err(MsgwrError::Singular { point, rcond });
        }
        let beta = lu.solve(&self.xtwy);
        Ok(SolvedSystem {
            beta,
            inverse: inv,
            ridged: false,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SolvedSystem {
    pub beta: Vec<f64>,
    /// Columns of `(X'WX)^-1`; the matrix is symmetric so these are also rows.
    pub inverse: Vec<Vec<f64>>,
    pub ridged: bool,
}

impl SolvedSystem {
    /// `(X'WX)^-1 x` for a design row `x`.
    pub fn apply_inverse(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let m = self.beta.len();
        let mut z = vec![0.0; m];
        for (c, col) in self.inverse.iter().enumerate() {
            let xc = x[c];
            for r in 0..m {
                z[r] += col[r] * xc;
            }
        }
        z
    }
}

pub(crate) fn dot(a: ArrayView1<'_, f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Solves `(X'WX) beta = X'Wy` for `W = diag(w)` and returns the row of the
/// smoother at `point`, `x_point' (X'WX)^-1 X'W`.
pub fn weighted_least_squares(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    w: &[f64],
    point: usize,
    opts: &SolveOptions,
) -> Result<LocalFitRow> {
    let n = x.nrows();
    let m = x.ncols();
    if y.len() != n || w.len() != n || point >= n {
        return Err(MsgwrError::Parameter("inconsistent local regression shapes".into()));
    }
    if let Some(l) = w.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(MsgwrError::Parameter(format!("invalid weight at row {l}")));
    }
    let positive = w.iter().filter(|&&v| v > 0.0).count();
    if positive < m {
        return Err(MsgwrError::Singular { point, rcond: 0.0 });
    }
    let sys = NormalSystem::accumulate(x, y, w.iter().copied().enumerate());
    let solved = sys.solve(point, opts)?;
    let z = solved.apply_inverse(x.row(point));
    let hat_row: Vec<f64> = (0..n)
        .map(|l| if w[l] == 0.0 { 0.0 } else { w[l] * dot(x.row(l), &z) })
        .collect();
    Ok(LocalFitRow {
        leverage: hat_row[point],
        beta: solved.beta,
        hat_row,
        ridged: solved.ridged,
    })
}

/// Row `i` of the single-covariate smoother, `x_ij (X_j'WX_j)^-1 X_j'W`.
pub fn smoothing_operator_row(x_j: &[f64], w: &[f64], i: usize) -> Result<Vec<f64>> {
    if x_j.len() != w.len() || i >= x_j.len() {
        return Err(MsgwrError::Parameter("inconsistent smoother shapes".into()));
    }
    let denom: f64 = x_j.iter().zip(w).map(|(x, w)| w * x * x).sum();
    if !(denom > 0.0) {
        return Err(MsgwrError::Singular { point: i, rcond: 0.0 });
    }
    let scale = x_j[i] / denom;
    Ok(x_j.iter().zip(w).map(|(x, w)| scale * w * x).collect())
}
