//! Pair-wise MRF structure derived from the sparsity pattern of a channel matrix.

use std::sync::Arc;

use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Symmetric neighbor lists in compressed form, self excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Adjacency {
    /// Builds from per-node neighbor lists; each list is sorted and deduplicated.
    pub fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let mut indptr = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for l in lists.iter_mut() {
            l.sort_unstable();
            l.dedup();
            indices.extend_from_slice(l);
            indptr.push(indices.len());
        }
        Self { indptr, indices }
    }

    pub fn nodes(&self) -> usize {
        self.indptr.len() - 1
    }

    /// Number of directed neighbor slots, `Σ_i |N(i)|`.
    pub fn edges(&self) -> usize {
        self.indices.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    /// Storage position of the first edge of node `i`.
    pub fn offset(&self, i: usize) -> usize {
        self.indptr[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.nodes()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.nodes()).all(|i| self.neighbors(i).iter().all(|&j| self.contains(j, i)))
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.nodes()).any(|i| self.contains(i, i))
    }

    /// Iterates directed edges `(i, j)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nodes()).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j)))
    }
}

/// Graph plus the constant matrix that maps per-row weights to edge attributes.
///
/// `gram` has one row per directed edge `(i, j)` holding `h_ri h_rj` for every
/// row `r` shared by columns `i` and `j`, so `gram · w` gives `Σ_r h_ri h_rj w_r`.
#[derive(Debug, Clone)]
pub struct MrfStructure<T> {
    pub adjacency: Arc<Adjacency>,
    pub gram: Arc<CsrMatrix<T>>,
}

impl<T: Scalar> MrfStructure<T> {
    /// Columns `i ≠ j` are neighbors when they share at least one structurally
    /// nonzero row of `h`.
    pub fn from_matrix(h: &CsrMatrix<T>) -> Self {
        let ht = h.transpose();
        let n = h.ncols();
        let mut mark = vec![usize::MAX; n];
        let mut lists = Vec::with_capacity(n);
        for i in 0..n {
            let mut nb = Vec::new();
            mark[i] = i;
            for &r in ht.row(i).0 {
                for &j in h.row(r).0 {
                    if mark[j] != i {
                        mark[j] = i;
                        nb.push(j);
                    }
                }
            }
            lists.push(nb);
        }
        let adjacency = Adjacency::from_lists(lists);

        let mut rows = Vec::with_capacity(adjacency.edges());
        for (i, j) in adjacency.iter() {
            let (ri, vi) = ht.row(i);
            let (rj, vj) = ht.row(j);
            let (mut a, mut b) = (0, 0);
            let mut row = Vec::new();
            while a < ri.len() && b < rj.len() {
                match ri[a].cmp(&rj[b]) {
                    std::cmp::Ordering::Less => a += 1,
                    std::cmp::Ordering::Greater => b += 1,
                    std::cmp::Ordering::Equal => {
                        row.push((ri[a], vi[a] * vj[b]));
                        a += 1;
                        b += 1;
                    }
                }
            }
            rows.push(row);
        }
        let gram = CsrMatrix::from_rows(h.nrows(), rows);
        Self { adjacency: Arc::new(adjacency), gram: Arc::new(gram) }
    }

    pub fn node_pair_count(&self) -> usize {
        self.adjacency.edges()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbors_share_rows_and_exclude_self() {
        // rows: {0,1}, {1,2}, {3}
        let h = CsrMatrix::from_triplets(
            3,
            4,
            vec![(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0), (1, 2, 4.0), (2, 3, 5.0)],
        );
        let g = MrfStructure::from_matrix(&h);
        let adj = &g.adjacency;
        assert_eq!(adj.neighbors(0), &[1]);
        assert_eq!(adj.neighbors(1), &[0, 2]);
        assert_eq!(adj.neighbors(2), &[1]);
        assert!(adj.neighbors(3).is_empty());
        assert!(adj.is_symmetric());
        assert!(!adj.has_self_loops());
        assert_eq!(g.node_pair_count(), 4);
        let e = g.gram.mul_vec(&[1.0, 10.0, 100.0]);
        // edges in order: (0,1), (1,0), (1,2), (2,1)
        assert_eq!(e, vec![2.0, 2.0, 120.0, 120.0]);
    }
}
