//! Direct solver for sparse systems: reverse Cuthill-McKee reordering followed
//! by a banded LU factorization with partial pivoting.
//!
//! Row interchanges are applied in the interleaved (LAPACK `gbtrf`) form, so
//! the stored multipliers of column `k` are never permuted after step `k`.

use std::collections::VecDeque;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Reverse Cuthill-McKee ordering of the symmetrized pattern of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for nb in adj.iter_mut() {
        nb.sort_unstable();
        nb.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(seed, &adj, &degree);
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// George-Liu style search for a vertex of (nearly) maximal eccentricity in
/// the component of `seed`.
fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut current = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(current, adj);
        let depth = *levels.iter().flatten().max().unwrap_or(&0);
        if depth <= ecc && current != seed {
            break;
        }
        ecc = depth;
        let candidate = levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(depth))
            .map(|(v, _)| v)
            .min_by_key(|&v| (degree[v], v))
            .unwrap_or(current);
        if candidate == current {
            break;
        }
        current = candidate;
    }
    current
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap();
        for &w in &adj[v] {
            if level[w].is_none() {
                level[w] = Some(lv + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

fn permuted_bandwidths(a: &CsrMatrix, inv_perm: &[usize]) -> (usize, usize) {
    let (mut kl, mut ku) = (0, 0);
    for i in 0..a.nrows() {
        let pi = inv_perm[i];
        for (j, _) in a.row(i) {
            let pj = inv_perm[j];
            if pi > pj {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
        }
    }
    (kl, ku)
}

/// LU factors of a symmetrically permuted square sparse matrix.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    /// Upper bandwidth of U, including pivoting fill (`kl + ku`).
    ku_fill: usize,
    width: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
    /// `perm[new] = old`
    perm: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.ncols(),
            });
        }
        let identity: Vec<usize> = (0..n).collect();
        let natural = permuted_bandwidths(a, &identity);
        let rcm = reverse_cuthill_mckee(a);
        let mut rcm_inv = vec![0; n];
        for (new, &old) in rcm.iter().enumerate() {
            rcm_inv[old] = new;
        }
        let reordered = permuted_bandwidths(a, &rcm_inv);
        let (perm, inv, (kl, ku)) = if reordered.0 + reordered.1 < natural.0 + natural.1 {
            (rcm, rcm_inv, reordered)
        } else {
            (identity.clone(), identity, natural)
        };

        let ku_fill = kl + ku;
        let width = kl + ku_fill + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            let pi = inv[i];
            for (j, v) in a.row(i) {
                let pj = inv[j];
                band[pi * width + (pj + kl - pi)] += v;
            }
        }
        let mut lu = BandedLu {
            n,
            kl,
            ku_fill,
            width,
            band,
            pivots: vec![0; n],
            perm,
        };
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn eliminate(&mut self) -> Result<()> {
        let n = self.n;
        let scale = self.band.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * 1e-3;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.ku_fill).min(n - 1);
            let mut p = k;
            let mut best = self.band[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.band[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(Error::SingularMatrix { column: self.perm[k] });
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.band.swap(a, b);
                }
            }
            let pivot = self.band[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                if self.band[ik] == 0.0 {
                    continue;
                }
                let l = self.band[ik] / pivot;
                self.band[ik] = l;
                let row_k = self.idx(k, k + 1);
                let row_i = self.idx(i, k + 1);
                let len = last_col - k;
                for off in 0..len {
                    self.band[row_i + off] -= l * self.band[row_k + off];
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                y.swap(k, p);
            }
            let yk = y[k];
            if yk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    y[i] -= self.band[self.idx(i, k)] * yk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in k + 1..=(k + self.ku_fill).min(n - 1) {
                s -= self.band[self.idx(k, j)] * y[j];
            }
            y[k] = s / self.band[self.idx(k, k)];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut z: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // U^T z' = z, forward
        for k in 0..n {
            let s = z[k] / self.band[self.idx(k, k)];
            z[k] = s;
            if s != 0.0 {
                for j in k + 1..=(k + self.ku_fill).min(n - 1) {
                    z[j] -= self.band[self.idx(k, j)] * s;
                }
            }
        }
        // apply L_k^{-T} then P_k for k = n-1 .. 0
        for k in (0..n).rev() {
            let mut s = 0.0;
            for i in k + 1..=(k + self.kl).min(n - 1) {
                s += self.band[self.idx(i, k)] * z[i];
            }
            z[k] -= s;
            let p = self.pivots[k];
            if p != k {
                z.swap(k, p);
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = z[new];
        }
        x
    }
}
