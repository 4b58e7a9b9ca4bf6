//! Real-valued detector view of an effective channel.

use std::sync::Arc;

use crate::channel::EffectiveChannel;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Lifted channel `H` in the detector's scalar type, split by IDI membership.
#[derive(Debug, Clone)]
pub struct RealChannel<T> {
    /// `MN`; the real system has `2MN` unknowns.
    pub mn: usize,
    pub h: Arc<CsrMatrix<T>>,
    pub ht: Arc<CsrMatrix<T>>,
    /// `|H|^{∘2}` and its transpose.
    pub h_sq: Arc<CsrMatrix<T>>,
    pub ht_sq: Arc<CsrMatrix<T>>,
    /// Entries `(j, i)` with `i ∈ Ĩ(j)`.
    pub h_idi: Arc<CsrMatrix<T>>,
    pub h_idi_sq: Arc<CsrMatrix<T>>,
    /// Entries `(j, i)` with `i ∈ I(j) \ Ĩ(j)`.
    pub h_kept: Arc<CsrMatrix<T>>,
    pub idx_in: Arc<Vec<Vec<usize>>>,
    pub idx_out: Arc<Vec<Vec<usize>>>,
    pub idx_idi: Arc<Vec<Vec<usize>>>,
}

impl<T: Scalar> RealChannel<T> {
    pub fn new(ch: &EffectiveChannel) -> Self {
        Self::from_parts(&ch.h_real, ch.idx_in.clone(), ch.idx_out.clone(), ch.idx_idi.clone())
    }

    /// Builds from any lifted matrix and index sets (used by tests with hand-made channels).
    pub fn from_parts(
        h_real: &CsrMatrix<f64>,
        idx_in: Vec<Vec<usize>>,
        idx_out: Vec<Vec<usize>>,
        idx_idi: Vec<Vec<usize>>,
    ) -> Self {
        assert_eq!(h_real.nrows(), h_real.ncols(), "lifted channel must be square");
        assert_eq!(h_real.nrows() % 2, 0, "lifted channel has even dimension");
        let h: CsrMatrix<T> = h_real.map(T::lit);
        let cols = h.indices();
        let mut is_idi = Vec::with_capacity(h.nnz());
        for r in 0..h.nrows() {
            let idi = &idx_idi[r];
            for e in h.indptr()[r]..h.indptr()[r + 1] {
                is_idi.push(idi.binary_search(&cols[e]).is_ok());
            }
        }
        let h_idi = h.filter_entries(|e| is_idi[e]);
        let h_kept = h.filter_entries(|e| !is_idi[e]);
        let sq = |m: &CsrMatrix<T>| m.map(|v| v * v);
        let ht = h.transpose();
        Self {
            mn: h.nrows() / 2,
            h_sq: Arc::new(sq(&h)),
            ht_sq: Arc::new(sq(&ht)),
            h_idi_sq: Arc::new(sq(&h_idi)),
            h_idi: Arc::new(h_idi),
            h_kept: Arc::new(h_kept),
            ht: Arc::new(ht),
            h: Arc::new(h),
            idx_in: Arc::new(idx_in),
            idx_out: Arc::new(idx_out),
            idx_idi: Arc::new(idx_idi),
        }
    }

    /// Identity channel of size `2MN` with no IDI entries.
    pub fn identity(mn: usize) -> Self {
        let n = 2 * mn;
        let h = CsrMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)));
        let sets: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        Self::from_parts(&h, sets.clone(), sets, vec![Vec::new(); n])
    }

    /// Number of real unknowns `2MN`.
    pub fn dim(&self) -> usize {
        2 * self.mn
    }
}
