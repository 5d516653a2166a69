//! Minimum-cost bipartite assignment between predicted keypoints and
//! ground-truth points.
//!
//! The solver is the O(n³) potential-based Hungarian method on a square
//! matrix. Rectangular inputs are padded with zero-cost dummy rows or
//! columns. Forbidden cells carry a penalty large enough that no assignment
//! uses one while a feasible alternative exists; they are never reported.
//!
//! Among equal-cost optima the lexicographically smallest assignment (by
//! row, then column) is returned, found by walking the tight edges of the
//! optimal dual solution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// Sentinel for a cell that may not be assigned.
pub const FORBIDDEN: f64 = f64::INFINITY;

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    cost: Vec<f64>,
}

impl CostMatrix {
    /// Every entry must be finite and non-negative, or [`FORBIDDEN`].
    pub fn new(rows: usize, cols: usize, cost: Vec<f64>) -> Result<Self> {
        if cost.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "cost matrix has {} entries, expected {rows}x{cols}",
                cost.len()
            )));
        }
        if let Some(bad) = cost.iter().find(|c| **c != FORBIDDEN && !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidInput(format!("invalid cost entry {bad}")));
        }
        Ok(Self { rows, cols, cost })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("ragged cost matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cost[row * self.cols + col]
    }

    pub fn is_forbidden(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == FORBIDDEN
    }

    /// Sum of the costs of `pairs`, accumulated in the order given.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Minimum-cost assignment, sorted by row. Forbidden cells never appear;
/// the number of pairs is `min(rows, cols)` whenever a feasible assignment
/// of that size exists.
pub fn hungarian_min_cost(m: &CostMatrix) -> Vec<(usize, usize)> {
    let n = m.rows.max(m.cols);
    if m.rows == 0 || m.cols == 0 {
        return Vec::new();
    }

    let max_finite = m.cost.iter().copied().filter(|c| c.is_finite()).fold(0.0_f64, f64::max);
    // Any assignment with k forbidden cells costs at least k·penalty, which
    // exceeds every assignment with k-1 of them.
    let penalty = (max_finite + 1.0) * n as f64;
    let square: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (r, c) = (idx / n, idx % n);
            if r < m.rows && c < m.cols {
                let v = m.get(r, c);
                if v == FORBIDDEN {
                    penalty
                } else {
                    v
                }
            } else {
                0.0
            }
        })
        .collect();

    let (row_of_col, u, v) = solve_square(n, &square);
    let scale = square.iter().copied().fold(1.0_f64, f64::max);
    let tol = 1e-9 * scale;
    let col_of_row = lexicographic_optimum(n, &square, &u, &v, tol, &row_of_col);

    col_of_row
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| r < m.rows && c < m.cols && !m.is_forbidden(r, c))
        .collect()
}

/// Potential-based Hungarian method on an n×n matrix (1-indexed internally).
/// Returns the row assigned to each column plus the dual potentials, so that
/// `a[i][j] - u[i] - v[j] >= 0` with equality on the assignment.
fn solve_square(n: usize, a: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let cost = |i: usize, j: usize| a[(i - 1) * n + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let row_of_col = (1..=n).map(|j| p[j] - 1).collect();
    (row_of_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Every optimal assignment is a perfect matching on the tight edges of an
/// optimal dual, and vice versa. Fix rows in order, each to the smallest
/// tight column that still admits a perfect matching of the remainder.
fn lexicographic_optimum(n: usize, a: &[f64], u: &[f64], v: &[f64], tol: f64, row_of_col: &[usize]) -> Vec<usize> {
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] - u[i] - v[j] <= tol).collect())
        .collect();
    let mut col_of_row = vec![0; n];
    let mut row_of = row_of_col.to_vec();
    for (c, &r) in row_of_col.iter().enumerate() {
        col_of_row[r] = c;
    }

    for i in 0..n {
        for j in 0..n {
            if !tight[i][j] || row_of[j] < i {
                continue;
            }
            if col_of_row[i] == j {
                break;
            }
            // Rematch the row currently holding j, ending at i's old column.
            let k = row_of[j];
            let target = col_of_row[i];
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut path = Vec::new();
            if alternating_path(k, target, i, &tight, &row_of, &mut visited, &mut path) {
                // path holds (row, new col) moves from k to target.
                for &(r, c) in &path {
                    col_of_row[r] = c;
                    row_of[c] = r;
                }
                col_of_row[i] = j;
                row_of[j] = i;
                break;
            }
        }
    }
    col_of_row
}

fn alternating_path(
    row: usize,
    target: usize,
    fixed_upto: usize,
    tight: &[Vec<bool>],
    row_of: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..tight.len() {
        if visited[c] || !tight[row][c] || row_of[c] < fixed_upto {
            continue;
        }
        visited[c] = true;
        if c == target {
            path.push((row, c));
            return true;
        }
        if alternating_path(row_of[c], target, fixed_upto, tight, row_of, visited, path) {
            path.push((row, c));
            return true;
        }
    }
    false
}

/// Matching radius, either absolute or relative to the image diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchThreshold {
    Pixels(f64),
    DiagonalFraction(f64),
}

impl MatchThreshold {
    pub fn resolve(&self, (width, height): (u32, u32)) -> f64 {
        match *self {
            MatchThreshold::Pixels(px) => px,
            MatchThreshold::DiagonalFraction(f) => f * f64::from(width).hypot(f64::from(height)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            MatchThreshold::Pixels(v) | MatchThreshold::DiagonalFraction(v) => v,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("match threshold must be positive, got {self}")))
        }
    }
}

impl Default for MatchThreshold {
    fn default() -> Self {
        MatchThreshold::DiagonalFraction(0.05)
    }
}

impl fmt::Display for MatchThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchThreshold::Pixels(px) => write!(f, "{px}px"),
            MatchThreshold::DiagonalFraction(frac) => write!(f, "{frac}"),
        }
    }
}

/// Accepts `"12px"` (absolute), `"5%"` or `"0.05"` (fraction of diagonal).
impl FromStr for MatchThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse match threshold {s:?}"));
        let t = if let Some(px) = s.strip_suffix("px") {
            MatchThreshold::Pixels(px.trim().parse().map_err(|_| bad())?)
        } else if let Some(pct) = s.strip_suffix('%') {
            MatchThreshold::DiagonalFraction(pct.trim().parse::<f64>().map_err(|_| bad())? / 100.0)
        } else {
            MatchThreshold::DiagonalFraction(s.parse().map_err(|_| bad())?)
        };
        t.validate()?;
        Ok(t)
    }
}

impl Serialize for MatchThreshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MatchThreshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Number(f) => {
                let t = MatchThreshold::DiagonalFraction(f);
                t.validate().map_err(serde::de::Error::custom)?;
                Ok(t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// (prediction index, ground-truth index), sorted by prediction.
    pub pairs: Vec<(usize, usize)>,
    pub n_valid: usize,
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// One-to-one matching of predictions to ground truth within `threshold`
/// pixels, maximizing the number of valid pairs and then minimizing their
/// total distance.
pub fn match_points(pred: &[Point], gt: &[Point], threshold: f64) -> MatchResult {
    let cost = pred
        .iter()
        .flat_map(|&p| {
            gt.iter().map(move |&g| {
                let d = distance(p, g);
                if d <= threshold {
                    d
                } else {
                    FORBIDDEN
                }
            })
        })
        .collect();
    let m = CostMatrix {
        rows: pred.len(),
        cols: gt.len(),
        cost,
    };
    let pairs = hungarian_min_cost(&m);
    MatchResult {
        n_valid: pairs.len(),
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive oracle: minimum over all injective maps of the smaller side
    /// into the larger, maximizing feasible pairs first.
    fn brute_force(m: &CostMatrix) -> (usize, f64) {
        fn rec(m: &CostMatrix, r: usize, used: &mut Vec<bool>, pairs: usize, cost: f64, best: &mut (usize, f64)) {
            if r == m.rows() {
                if pairs > best.0 || (pairs == best.0 && cost < best.1) {
                    *best = (pairs, cost);
                }
                return;
            }
            let slack = m.cols() - used.iter().filter(|u| **u).count();
            let rows_left = m.rows() - r;
            if rows_left > slack {
                // Row r may stay unassigned only when rows outnumber cols.
                rec(m, r + 1, used, pairs, cost, best);
            }
            for c in 0..m.cols() {
                if used[c] {
                    continue;
                }
                used[c] = true;
                if m.is_forbidden(r, c) {
                    rec(m, r + 1, used, pairs, cost, best);
                } else {
                    rec(m, r + 1, used, pairs + 1, cost + m.get(r, c), best);
                }
                used[c] = false;
            }
        }
        let mut best = (0, f64::INFINITY);
        rec(m, 0, &mut vec![false; m.cols()], 0, 0.0, &mut best);
        if best.1 == f64::INFINITY {
            best.1 = 0.0;
        }
        best
    }

    fn m(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_by_two_fixtures() {
        let a = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert_eq!(brute_force(&a), (2, 2.0));
        assert_eq!(hungarian_min_cost(&a), vec![(0, 0), (1, 1)]);
        assert_eq!(a.total(&hungarian_min_cost(&a)), 2.0);

        let b = m(&[&[5.0]]);
        assert_eq!(hungarian_min_cost(&b), vec![(0, 0)]);
        assert_eq!(b.total(&hungarian_min_cost(&b)), 5.0);

        let c = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(hungarian_min_cost(&c), vec![(0, 0), (1, 1)]);
        assert_eq!(c.total(&hungarian_min_cost(&c)), 0.0);
    }

    #[test]
    fn empty_matrices() {
        assert!(hungarian_min_cost(&CostMatrix::new(0, 0, vec![]).unwrap()).is_empty());
        assert!(hungarian_min_cost(&CostMatrix::new(0, 3, vec![]).unwrap()).is_empty());
        assert!(hungarian_min_cost(&CostMatrix::new(3, 0, vec![]).unwrap()).is_empty());
    }

    #[test]
    fn rejects_negative_and_nan() {
        assert!(CostMatrix::new(1, 1, vec![-1.0]).is_err());
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(CostMatrix::new(1, 2, vec![1.0]).is_err());
        assert!(CostMatrix::new(1, 1, vec![FORBIDDEN]).is_ok());
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let all_equal = m(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        assert_eq!(hungarian_min_cost(&all_equal), vec![(0, 0), (1, 1), (2, 2)]);

        // Two optima: {(0,1),(1,0)} and {(0,2),(1,1)} both cost 2.
        let t = m(&[&[5.0, 1.0, 1.0], &[1.0, 1.0, 5.0]]);
        assert_eq!(hungarian_min_cost(&t), vec![(0, 1), (1, 0)]);

        let wide = m(&[&[3.0, 3.0, 3.0, 3.0]]);
        assert_eq!(hungarian_min_cost(&wide), vec![(0, 0)]);
    }

    #[test]
    fn forbidden_cells_are_avoided() {
        let f = FORBIDDEN;
        // The cheap diagonal pairing would need a forbidden cell.
        let a = m(&[&[0.0, 10.0], &[f, 0.0]]);
        assert_eq!(hungarian_min_cost(&a), vec![(0, 0), (1, 1)]);
        let b = m(&[&[1.0, 9.0], &[1.0, f]]);
        assert_eq!(hungarian_min_cost(&b), vec![(0, 1), (1, 0)]);
        let all = m(&[&[f, f], &[f, f]]);
        assert!(hungarian_min_cost(&all).is_empty());
        // Only one row can be served; it takes the sole feasible column.
        let c = m(&[&[f, 2.0], &[f, 1.0]]);
        assert_eq!(hungarian_min_cost(&c), vec![(1, 1)]);
    }

    #[test]
    fn match_points_fixtures() {
        assert_eq!(match_points(&[(10.0, 10.0)], &[(12.0, 10.0)], 5.0).n_valid, 1);
        assert_eq!(match_points(&[(0.0, 0.0)], &[(100.0, 100.0)], 5.0).n_valid, 0);
        let r = match_points(&[(0.0, 0.0), (10.0, 0.0)], &[(9.0, 0.0)], 2.0);
        assert_eq!(r.n_valid, 1);
        assert_eq!(r.pairs, vec![(1, 0)]);
    }

    #[test]
    fn far_pairing_does_not_steal_near_point() {
        // Unconstrained, (0,0)+(1,1) costs 0 + 7.0 < 4.8 + 3.9, but (1,1) is
        // out of range, so gating inside the solver keeps both pairs valid.
        let pred = [(0.0, 0.0), (-1.0, 3.8)];
        let gt = [(0.0, 0.0), (4.8, 0.0)];
        let r = match_points(&pred, &gt, 5.0);
        assert_eq!(r.n_valid, 2);
        assert_eq!(r.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn threshold_parsing() {
        assert_eq!("12px".parse::<MatchThreshold>().unwrap(), MatchThreshold::Pixels(12.0));
        assert_eq!(
            "5%".parse::<MatchThreshold>().unwrap(),
            MatchThreshold::DiagonalFraction(0.05)
        );
        assert_eq!(
            "0.05".parse::<MatchThreshold>().unwrap(),
            MatchThreshold::DiagonalFraction(0.05)
        );
        assert!("-3px".parse::<MatchThreshold>().is_err());
        assert!("wide".parse::<MatchThreshold>().is_err());
        let t = MatchThreshold::DiagonalFraction(0.05);
        assert!((t.resolve((300, 400)) - 25.0).abs() < 1e-12);
        let json = serde_json::to_string(&MatchThreshold::Pixels(7.5)).unwrap();
        assert_eq!(
            serde_json::from_str::<MatchThreshold>(&json).unwrap(),
            MatchThreshold::Pixels(7.5)
        );
    }

    fn matrix_strategy() -> impl Strategy<Value = CostMatrix> {
        (0usize..=6, 0usize..=6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(
                prop_oneof![4 => (0u32..20).prop_map(f64::from), 1 => Just(FORBIDDEN)],
                r * c,
            )
            .prop_map(move |cost| CostMatrix::new(r, c, cost).unwrap())
        })
    }

    fn points(max: usize) -> impl Strategy<Value = Vec<Point>> {
        proptest::collection::vec((0.0..50.0f64, 0.0..50.0f64), 0..max)
    }

    proptest! {
        #[test]
        fn agrees_with_exhaustive_search(m in matrix_strategy()) {
            let pairs = hungarian_min_cost(&m);
            let (best_pairs, best_cost) = brute_force(&m);
            prop_assert_eq!(pairs.len(), best_pairs);
            prop_assert_eq!(m.total(&pairs), best_cost);
            let mut rows: Vec<_> = pairs.iter().map(|p| p.0).collect();
            let mut cols: Vec<_> = pairs.iter().map(|p| p.1).collect();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            prop_assert_eq!(rows.len(), pairs.len());
            prop_assert_eq!(cols.len(), pairs.len());
        }

        #[test]
        fn n_valid_monotone_in_threshold(pred in points(7), gt in points(7), t in 0.5..20.0f64, dt in 0.0..20.0f64) {
            let lo = match_points(&pred, &gt, t).n_valid;
            let hi = match_points(&pred, &gt, t + dt).n_valid;
            prop_assert!(lo <= hi);
            prop_assert!(hi <= pred.len().min(gt.len()));
        }

        #[test]
        fn n_valid_symmetric(a in points(7), b in points(7), t in 0.5..30.0f64) {
            prop_assert_eq!(match_points(&a, &b, t).n_valid, match_points(&b, &a, t).n_valid);
        }
    }
}
