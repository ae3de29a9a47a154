//! Rectangular maximum-similarity assignment.
//!
//! The kernel is the O(n²m) shortest-augmenting-path Hungarian method on
//! costs (negated similarities). On top of it, [`hungarian_max`] returns the
//! lexicographically smallest optimal pair set, which keeps results stable on
//! degenerate matrices (e.g. many identical short strings).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AssignError {
    #[error("non-finite similarity at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has {len} columns, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("pair ({row}, {col}) outside a {rows}x{cols} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
}

/// Dense `rows x cols` grid of finite similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, AssignError> {
        let r = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(r * t);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != t {
                return Err(AssignError::Ragged {
                    row: i,
                    len: row.len(),
                    expected: t,
                });
            }
            for (j, v) in row.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(AssignError::NonFinite { row: i, col: j });
                }
                values.push(v);
            }
        }
        Ok(Self {
            rows: r,
            cols: t,
            values,
        })
    }

    /// Builds an `r x t` matrix from a generator; `t` is kept even when `r == 0`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, AssignError> {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                if !v.is_finite() {
                    return Err(AssignError::NonFinite { row: i, col: j });
                }
                values.push(v);
            }
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

/// One-to-one pairs `(row, col)`, sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total(&self, sim: &SimilarityMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| sim.get(i, j)).sum()
    }

    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }
}

/// Minimum-cost assignment of every row of a `n x m` (n <= m) cost grid.
/// Returns the column chosen for each row.
fn min_cost_rows(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum total similarity over matchings of size min(r, t) restricted to
/// the given free rows/columns, plus the pairs achieving it.
fn best_restricted(sim: &SimilarityMatrix, rows: &[usize], cols: &[usize]) -> (f64, Vec<(usize, usize)>) {
    if rows.is_empty() || cols.is_empty() {
        return (0.0, Vec::new());
    }
    let pairs: Vec<(usize, usize)> = if rows.len() <= cols.len() {
        min_cost_rows(rows.len(), cols.len(), |a, b| -sim.get(rows[a], cols[b]))
            .into_iter()
            .enumerate()
            .map(|(a, b)| (rows[a], cols[b]))
            .collect()
    } else {
        min_cost_rows(cols.len(), rows.len(), |b, a| -sim.get(rows[a], cols[b]))
            .into_iter()
            .enumerate()
            .map(|(b, a)| (rows[a], cols[b]))
            .collect()
    };
    let total = pairs.iter().map(|&(i, j)| sim.get(i, j)).sum();
    (total, pairs)
}

/// Optimal assignment of size min(r, t) maximizing total similarity; the
/// lexicographically smallest optimal pair set is returned.
pub fn hungarian_max(sim: &SimilarityMatrix) -> Matching {
    let (r, t) = (sim.rows(), sim.cols());
    if r == 0 || t == 0 {
        return Matching::default();
    }
    let all_rows: Vec<usize> = (0..r).collect();
    let all_cols: Vec<usize> = (0..t).collect();
    let (optimum, mut current) = best_restricted(sim, &all_rows, &all_cols);
    let scale = (0..r)
        .flat_map(|i| (0..t).map(move |j| (i, j)))
        .map(|(i, j)| sim.get(i, j).abs())
        .fold(1.0f64, f64::max);
    let tol = 1e-9 * scale * r.min(t) as f64;

    let target = r.min(t);
    let mut fixed: Vec<(usize, usize)> = Vec::with_capacity(target);
    let mut fixed_total = 0.0;
    let mut row_used = vec![false; r];
    let mut col_used = vec![false; t];

    // Greedily accept the smallest pair (i, j) that still admits an optimal completion.
    'rows: for i in 0..r {
        if fixed.len() == target {
            break;
        }
        for j in 0..t {
            if col_used[j] {
                continue;
            }
            let feasible = if current.contains(&(i, j)) {
                true
            } else {
                row_used[i] = true;
                col_used[j] = true;
                let free_rows: Vec<usize> = (0..r).filter(|&k| !row_used[k]).collect();
                let free_cols: Vec<usize> = (0..t).filter(|&k| !col_used[k]).collect();
                let (rest, rest_pairs) = best_restricted(sim, &free_rows, &free_cols);
                row_used[i] = false;
                col_used[j] = false;
                let total = fixed_total + sim.get(i, j) + rest;
                if total >= optimum - tol {
                    current = fixed.clone();
                    current.push((i, j));
                    current.extend(rest_pairs);
                    true
                } else {
                    false
                }
            };
            if feasible {
                fixed.push((i, j));
                fixed_total += sim.get(i, j);
                row_used[i] = true;
                col_used[j] = true;
                continue 'rows;
            }
        }
    }
    fixed.sort_unstable();
    Matching { pairs: fixed }
}

/// Binary `r x t` indicator grid of a matching.
pub fn matching_matrix(m: &Matching, rows: usize, cols: usize) -> Result<Vec<Vec<u8>>, AssignError> {
    let mut grid = vec![vec![0u8; cols]; rows];
    for &(i, j) in m.pairs() {
        if i >= rows || j >= cols {
            return Err(AssignError::OutOfBounds {
                row: i,
                col: j,
                rows,
                cols,
            });
        }
        grid[i][j] = 1;
    }
    Ok(grid)
}

impl Matching {
    /// Builds a matching from explicit pairs; rows and columns must not repeat.
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Option<Self> {
        pairs.sort_unstable();
        let mut rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        (rows.len() == pairs.len() && cols.len() == pairs.len()).then_some(Self { pairs })
    }
}
