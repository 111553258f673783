//! Compressed sparse row storage for the stiffness matrix.

use std::io::Write;

use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed in the
    /// order they appear, so the result is deterministic.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> SparseMatrix {
        triplets.par_sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len() / 4);
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len() / 4);
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).into_par_iter().map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `b − Ax` with every row evaluated by compensated dot products, so
    /// the cancellation in `Ax ≈ b` does not swamp the result.
    pub fn residual_compensated(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (mut s, mut c) = (b[i], 0.0);
                for (j, v) in self.row(i) {
                    let p = -v * x[j];
                    let pe = (-v).mul_add(x[j], -p);
                    let t = s + p;
                    let z = t - s;
                    c += (s - (t - z)) + (p - z) + pe;
                    s = t;
                }
                s + c
            })
            .collect()
    }

    /// `‖ |A||x| + |b| ‖`, the scale of the rounding error in `b − Ax`.
    pub fn residual_scale(&self, x: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let s: f64 = self.row(i).map(|(j, v)| (v * x[j]).abs()).sum::<f64>() + b[i].abs();
                s * s
            })
            .sum();
        sq.sqrt()
    }

    /// `xᵀ A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Largest `|a_ij − a_ji|` relative to the largest `|a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// Matrix Market coordinate dump of the lower triangle (`symmetric`).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let lower: Vec<(usize, usize, f64)> = self.triplets().filter(|t| t.1 <= t.0).collect();
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{} {} {}", self.n, self.n, lower.len())?;
        for (i, j, v) in lower {
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}
