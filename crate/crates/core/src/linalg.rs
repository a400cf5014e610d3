//! Dense LU factorization for the small normal systems solved at every
//! regression point.

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_TOL: f64 = 1e-12;

/// LU factors of a square row-major matrix with partial pivoting.
#[derive(Debug, Clone)]
pub struct SmallLu {
    m: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    norm1: f64,
}

impl SmallLu {
    /// Returns `None` when an exactly zero pivot is met.
    pub fn factor(a: &[f64], m: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), m * m);
        let norm1 = (0..m)
            .map(|c| (0..m).map(|r| a[r * m + c].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let mut p = k;
            let mut best = lu[k * m + k].abs();
            for r in k + 1..m {
                let v = lu[r * m + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            if p != k {
                for c in 0..m {
                    lu.swap(k * m + c, p * m + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * m + k];
            for r in k + 1..m {
                let f = lu[r * m + k] / pivot;
                lu[r * m + k] = f;
                if f != 0.0 {
                    for c in k + 1..m {
                        lu[r * m + c] -= f * lu[k * m + c];
                    }
                }
            }
        }
        Some(Self { m, lu, perm, norm1 })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..m {
            let mut s = x[r];
            for c in 0..r {
                s -= self.lu[r * m + c] * x[c];
            }
            x[r] = s;
        }
        for r in (0..m).rev() {
            let mut s = x[r];
            for c in r + 1..m {
                s -= self.lu[r * m + c] * x[c];
            }
            x[r] = s / self.lu[r * m + r];
        }
        x
    }

    /// Columns of the inverse, obtained by solving against unit vectors.
    pub fn inverse_columns(&self) -> Vec<Vec<f64>> {
        let m = self.m;
        (0..m)
            .map(|j| {
                let mut e = vec![0.0; m];
                e[j] = 1.0;
                self.solve(&e)
            })
            .collect()
    }

    /// Reciprocal 1-norm condition number from the exact inverse norm.
    pub fn rcond_with(&self, inverse_columns: &[Vec<f64>]) -> f64 {
        let inv_norm = inverse_columns
            .iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if self.norm1 == 0.0 || !inv_norm.is_finite() {
            0.0
        } else {
            1.0 / (self.norm1 * inv_norm)
        }
    }
}
