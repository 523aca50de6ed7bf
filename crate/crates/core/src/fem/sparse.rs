//! Compressed sparse rows, reverse Cuthill-McKee ordering and envelope
//! (skyline) Cholesky factorization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// Entry-wise exact symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    /// Block with rows `rows` and columns `cols`, reindexed from zero.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Self {
        let mut t = Vec::new();
        for i in rows.clone() {
            for (j, v) in self.row(i) {
                if cols.contains(&j) {
                    t.push((i - rows.start, j - cols.start, v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Reverse Cuthill-McKee ordering of a structurally symmetric matrix.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows;
    let degree: Vec<usize> = (0..n).map(|i| a.row_ptr[i + 1] - a.row_ptr[i]).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .unwrap();
        let start = pseudo_peripheral(a, seed, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            nb.sort_by_key(|&j| (degree[j], j));
            for j in nb {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(a: &CsrMatrix, start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; a.n_rows];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].unwrap();
        for (j, _) in a.row(v) {
            if level[j].is_none() {
                level[j] = Some(l + 1);
                queue.push_back(j);
            }
        }
    }
    level
}

fn pseudo_peripheral(a: &CsrMatrix, seed: usize, degree: &[usize]) -> usize {
    let mut v = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let lv = bfs_levels(a, v);
        let max = lv.iter().flatten().copied().max().unwrap_or(0);
        if max <= ecc && ecc > 0 {
            break;
        }
        ecc = max;
        v = (0..a.n_rows)
            .filter(|&i| lv[i] == Some(max))
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
    }
    v
}

/// Cholesky factor `L` of `P A Pᵀ` stored row-wise over the envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkylineCholesky {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// First column of each row inside the envelope.
    first: Vec<usize>,
    /// Offset of row `i` in `data`; row `i` holds columns `first[i]..=i`.
    start: Vec<usize>,
    data: Vec<f64>,
    min_pivot: f64,
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(Error::Dimension("Cholesky of a non-square matrix".into()));
        }
        let n = a.n_rows;
        let perm = rcm(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for (j, _) in a.row(old) {
                let jn = inv[j];
                if jn < first[new] {
                    first[new] = jn;
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for (new, &old) in perm.iter().enumerate() {
            for (j, v) in a.row(old) {
                let jn = inv[j];
                if jn <= new {
                    data[start[new] + jn - first[new]] = v;
                }
            }
        }
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let ri = start[i] - fi;
                let rj = start[j] - fj;
                let mut s = data[ri + j];
                for k in k0..j {
                    s -= data[ri + k] * data[rj + k];
                }
                data[ri + j] = s / data[rj + j];
            }
            let ri = start[i] - fi;
            let mut d = data[ri + i];
            for k in fi..i {
                d -= data[ri + k] * data[ri + k];
            }
            if !(d > 0.0) {
                return Err(Error::SingularMatrix(format!(
                    "nonpositive pivot {d:.3e} at row {i} of {n}"
                )));
            }
            min_pivot = min_pivot.min(d);
            data[ri + i] = d.sqrt();
        }
        Ok(Self {
            n,
            perm,
            first,
            start,
            data,
            min_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest pivot `d_i` before the square root.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side length");
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..self.n {
            let ri = self.start[i] - self.first[i];
            let mut s = y[i];
            for k in self.first[i]..i {
                s -= self.data[ri + k] * y[k];
            }
            y[i] = s / self.data[ri + i];
        }
        for i in (0..self.n).rev() {
            let ri = self.start[i] - self.first[i];
            y[i] /= self.data[ri + i];
            let yi = y[i];
            for k in self.first[i]..i {
                y[k] -= self.data[ri + k] * yi;
            }
        }
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
