//! Planar coordinates, Euclidean distances and adaptive (nearest-neighbour)
//! kernel radii.
//!
//! An adaptive bandwidth `k` is a neighbour count. At point `i` the kernel
//! radius is the distance to the `k`-th nearest *other* observation, so the
//! point sitting exactly on the radius (and anything tied with it) falls
//! outside the open kernel support.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{MsgwrError, Result};

/// Observation locations in a projected planar system.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    u: Vec<f64>,
    v: Vec<f64>,
    duplicates: usize,
}

impl Coordinates {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() {
            return Err(MsgwrError::Input(format!(
                "coordinate columns differ in length ({} vs {})",
                u.len(),
                v.len()
            )));
        }
        for (row, (a, b)) in u.iter().zip(&v).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(MsgwrError::Input(format!(
                    "non-finite coordinate at row {row}: ({a}, {b})"
                )));
            }
        }
        let mut keys: Vec<(u64, u64)> = u
            .iter()
            .zip(&v)
            .map(|(a, b)| ((a + 0.0).to_bits(), (b + 0.0).to_bits()))
            .collect();
        keys.sort_unstable();
        let distinct = {
            let mut k = keys.clone();
            k.dedup();
            k.len()
        };
        if distinct < 2 {
            return Err(MsgwrError::Input(
                "at least two distinct locations are required".into(),
            ));
        }
        Ok(Self {
            duplicates: keys.len() - distinct,
            u,
            v,
        })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let (u, v) = pairs.iter().copied().unzip();
        Self::new(u, v)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.u[i], self.v[i])
    }

    /// Number of observations that repeat an earlier location.
    pub fn duplicate_count(&self) -> usize {
        self.duplicates
    }
}

/// Dense symmetric matrix of pairwise Euclidean distances.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    d: Array2<f64>,
}

impl DistanceTable {
    pub fn len(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.nrows() == 0
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.d[[i, l]]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.d
            .row(i)
            .to_slice()
            .expect("distance table rows are contiguous")
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.d
    }
}

pub fn pairwise_distances(coords: &Coordinates) -> DistanceTable {
    let n = coords.len();
    let (u, v) = (coords.u(), coords.v());
    let mut d = Array2::<f64>::zeros((n, n));
    d.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for l in 0..n {
                // hypot is symmetric in its arguments up to sign, so d[i][l] == d[l][i] bitwise
                row[l] = if i == l {
                    0.0
                } else {
                    (u[i] - u[l]).abs().hypot((v[i] - v[l]).abs())
                };
            }
        });
    DistanceTable { d }
}

/// The `k`-th smallest distance from `i` to the other points.
pub fn adaptive_bandwidth_distance(row: &[f64], i: usize, k: usize) -> Result<f64> {
    let n = row.len();
    if i >= n {
        return Err(MsgwrError::Parameter(format!(
            "point index {i} out of range for {n} observations"
        )));
    }
    if k < 2 || k > n.saturating_sub(1) {
        return Err(MsgwrError::Parameter(format!(
            "adaptive bandwidth {k} outside [2, {}]",
            n.saturating_sub(1)
        )));
    }
    let mut others: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != i)
        .map(|(_, &d)| d)
        .collect();
    let (_, kth, _) = others.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// For every point, the other observations ordered by increasing distance
/// (index breaks ties, which only affects storage order, never weights).
#[derive(Debug, Clone)]
pub struct NeighborTable {
    order: Vec<Vec<u32>>,
    dist: Vec<Vec<f64>>,
}

impl NeighborTable {
    pub fn new(table: &DistanceTable) -> Self {
        let n = table.len();
        let (order, dist): (Vec<_>, Vec<_>) = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = table.row(i);
                let mut idx: Vec<u32> = (0..n as u32).filter(|&l| l as usize != i).collect();
                idx.sort_by(|&a, &b| {
                    row[a as usize]
                        .total_cmp(&row[b as usize])
                        .then(a.cmp(&b))
                });
                let d = idx.iter().map(|&l| row[l as usize]).collect();
                (idx, d)
            })
            .unzip();
        Self { order, dist }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Largest admissible adaptive bandwidth (`n - 1`).
    pub fn max_bandwidth(&self) -> usize {
        self.order.len().saturating_sub(1)
    }

    pub fn radius(&self, i: usize, k: usize) -> f64 {
        self.dist[i][k - 1]
    }

    /// Other points strictly inside the `k`-neighbour radius of `i`, with
    /// their distances.
    pub fn inside(&self, i: usize, k: usize) -> (&[u32], &[f64], f64) {
        let r = self.radius(i, k);
        let cut = self.dist[i].partition_point(|&d| d < r);
        (&self.order[i][..cut], &self.dist[i][..cut], r)
    }

    /// The `k` nearest other points of `i` (ties resolved by index).
    pub fn nearest(&self, i: usize, k: usize) -> &[u32] {
        &self.order[i][..k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_and_pythagorean_points() {
        let c = Coordinates::from_pairs(&[(0.0, 0.0), (0.0, 0.0), (3.0, 4.0)]).unwrap();
        assert_eq!(c.duplicate_count(), 1);
        let d = pairwise_distances(&c);
        assert_eq!(d.get(0, 1), 0.0);
        assert_eq!(d.get(0, 2), 5.0);
        assert_eq!(d.get(2, 0), 5.0);
    }

    #[test]
    fn matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|_| (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        let d = pairwise_distances(&Coordinates::from_pairs(&pts).unwrap());
        for (i, a) in pts.iter().enumerate() {
            for (l, b) in pts.iter().enumerate() {
                let oracle = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                assert!((d.get(i, l) - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_finite_with_row() {
        let err = Coordinates::new(vec![0.0, f64::NAN, 1.0], vec![0.0, 1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn rejects_single_location() {
        assert!(Coordinates::from_pairs(&[(1.0, 1.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn kth_neighbour_on_a_line() {
        let c = Coordinates::from_pairs(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]).unwrap();
        let d = pairwise_distances(&c);
        assert_eq!(adaptive_bandwidth_distance(d.row(0), 0, 2).unwrap(), 2.0);
        assert_eq!(adaptive_bandwidth_distance(d.row(0), 0, 3).unwrap(), 3.0);
        assert!(adaptive_bandwidth_distance(d.row(0), 0, 1).is_err());
        assert!(adaptive_bandwidth_distance(d.row(0), 0, 4).is_err());
    }

    #[test]
    fn tied_neighbours_share_radius() {
        // two points at distance 1 from the origin
        let c = Coordinates::from_pairs(&[(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (5.0, 0.0)]).unwrap();
        let d = pairwise_distances(&c);
        assert_eq!(adaptive_bandwidth_distance(d.row(0), 0, 2).unwrap(), 1.0);
        let nt = NeighborTable::new(&d);
        let (inside, _, r) = nt.inside(0, 2);
        assert_eq!(r, 1.0);
        assert!(inside.is_empty());
    }

    proptest! {
        #[test]
        fn radius_monotone_and_counts(seed in 0u64..500, n in 4usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| ((rng.random_range(0..6) as f64), (rng.random_range(0..6) as f64) + 0.5 * (rng.random::<f64>() > 0.5) as u8 as f64))
                .collect();
            prop_assume!(Coordinates::from_pairs(&pts).is_ok());
            let d = pairwise_distances(&Coordinates::from_pairs(&pts).unwrap());
            for i in 0..n {
                let mut prev = 0.0;
                for k in 2..n {
                    let r = adaptive_bandwidth_distance(d.row(i), i, k).unwrap();
                    prop_assert!(r >= prev);
                    prev = r;
                    let strict = (0..n).filter(|&l| l != i && d.get(i, l) < r).count();
                    let weak = (0..n).filter(|&l| l != i && d.get(i, l) <= r).count();
                    prop_assert!(strict < k);
                    prop_assert!(weak >= k);
                }
            }
        }
    }
}
