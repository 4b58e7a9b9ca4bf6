//! Compressed-row sparse matrices with sorted column indices.

use std::ops::{AddAssign, Mul};

use num_traits::Zero;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Copy> CsrMatrix<T> {
    /// Builds a matrix from triplets. Duplicate coordinates are summed in input order.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, T)>,
        T: Zero + AddAssign,
    {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); nrows];
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        Self::from_rows(ncols, rows)
    }

    /// Builds a matrix from per-row `(column, value)` lists; duplicates are summed in list order.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, T)>>) -> Self
    where
        T: Zero + AddAssign,
    {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            // stable: equal columns keep insertion order so sums are reproducible
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, v)) = iter.next() {
                debug_assert!(c < ncols);
                let mut acc = v;
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    acc += v2;
                    iter.next();
                }
                indices.push(c);
                values.push(acc);
            }
            indptr.push(indices.len());
        }
        Self { nrows, ncols, indptr, indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Stored value at `(r, c)`, if the coordinate is in the pattern.
    pub fn get(&self, r: usize, c: usize) -> Option<T> {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).ok().map(|k| vals[k])
    }

    /// Same pattern, transformed values.
    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> CsrMatrix<U> {
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Keeps the entries for which `keep(storage_index)` holds.
    pub fn filter_entries(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if keep(k) {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr.push(indices.len());
        }
        Self { nrows: self.nrows, ncols: self.ncols, indptr, indices, values }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0usize; self.nnz()];
        let mut values: Vec<Option<T>> = vec![None; self.nnz()];
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let dst = next[c];
                next[c] += 1;
                indices[dst] = r;
                values[dst] = Some(self.values[k]);
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            values: values.into_iter().map(|v| v.expect("filled")).collect(),
        }
    }

    /// Iterates `(row, col, value)` in storage order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }
}

impl<T> CsrMatrix<T>
where
    T: Copy + Zero + AddAssign + Mul<Output = T>,
{
    /// `y = A x` for a dense vector.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols, "mul_vec: length mismatch");
        (0..self.nrows)
            .map(|r| {
                let mut acc = T::zero();
                for k in self.indptr[r]..self.indptr[r + 1] {
                    acc += self.values[k] * x[self.indices[k]];
                }
                acc
            })
            .collect()
    }

    /// `Y = A X` where `X` is `ncols × k`, row-major.
    pub fn mul_dense(&self, x: &[T], k: usize) -> Vec<T> {
        assert_eq!(x.len(), self.ncols * k, "mul_dense: shape mismatch");
        if k == 1 {
            return self.mul_vec(x);
        }
        let mut y = vec![T::zero(); self.nrows * k];
        for r in 0..self.nrows {
            let out = &mut y[r * k..(r + 1) * k];
            for e in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[e];
                let src = &x[self.indices[e] * k..(self.indices[e] + 1) * k];
                for (o, &s) in out.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        y
    }

    /// `X += Aᵀ G` where `G` is `nrows × k`, without materializing the transpose.
    pub fn mul_transpose_acc(&self, g: &[T], k: usize, out: &mut [T]) {
        assert_eq!(g.len(), self.nrows * k, "mul_transpose_acc: shape mismatch");
        assert_eq!(out.len(), self.ncols * k, "mul_transpose_acc: output shape mismatch");
        for r in 0..self.nrows {
            let src = &g[r * k..(r + 1) * k];
            for e in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[e];
                let dst = &mut out[self.indices[e] * k..(self.indices[e] + 1) * k];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }
}
