//! Graph network pass over the pair-wise MRF of the normalized channel.

use std::sync::Arc;

use crate::amp::AMP_EPS;
use crate::graph::{Adjacency, MrfStructure};
use crate::nn::params::BoundParams;
use crate::nn::{gru_tape, mlp_tape, GnnParams, Stage, Tape, Tensor, Var};
use crate::real::RealChannel;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Which channel entries form the MRF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphMode {
    /// Non-IDI entries only; IDI is folded into per-row Gaussian statistics.
    IdiApprox,
    /// Every entry of the truncated channel, noise-normalized.
    Full,
}

/// Gaussian model of the interference carried by IDI entries.
#[derive(Debug, Clone, PartialEq)]
pub struct IdiStats<T> {
    pub mu_zeta: Vec<T>,
    pub sigma_zeta_sq: Vec<T>,
}

impl<T: Scalar> IdiStats<T> {
    /// `μ = 0`, `σ² = σ_n²/2`.
    pub fn noise_only(n: usize, noise_var: T) -> Self {
        Self { mu_zeta: vec![T::zero(); n], sigma_zeta_sq: vec![noise_var / T::lit(2.0); n] }
    }
}

/// `μ_j = Σ_{i∈Ĩ(j)} h_ji x̂_i` and `σ²_j = Σ_{i∈Ĩ(j)} h_ji² ν̂_i + σ_n²/2`.
pub fn idi_stats<T: Scalar>(ch: &RealChannel<T>, x_hat: &[T], nu_x: &[T], noise_var: T) -> IdiStats<T> {
    let half = noise_var / T::lit(2.0);
    IdiStats {
        mu_zeta: ch.h_idi.mul_vec(x_hat),
        sigma_zeta_sq: ch.h_idi_sq.mul_vec(nu_x).into_iter().map(|v| v + half).collect(),
    }
}

/// Static graph data for one channel and mode; values change per iteration, structure does not.
#[derive(Debug, Clone)]
pub struct GnnGraph<T> {
    pub mode: GraphMode,
    /// Matrix whose columns are the MRF nodes (`h_kept` or the full `H`).
    pub h: Arc<CsrMatrix<T>>,
    pub ht: Arc<CsrMatrix<T>>,
    pub ht_sq: Arc<CsrMatrix<T>>,
    pub structure: MrfStructure<T>,
}

impl<T: Scalar> GnnGraph<T> {
    pub fn new(ch: &RealChannel<T>, mode: GraphMode) -> Self {
        let h = match mode {
            GraphMode::IdiApprox => Arc::clone(&ch.h_kept),
            GraphMode::Full => Arc::clone(&ch.h),
        };
        let ht = h.transpose();
        Self {
            mode,
            structure: MrfStructure::from_matrix(&h),
            ht_sq: Arc::new(ht.map(|v| v * v)),
            ht: Arc::new(ht),
            h,
        }
    }

    pub fn adjacency(&self) -> &Arc<Adjacency> {
        &self.structure.adjacency
    }

    pub fn node_pair_count(&self) -> usize {
        self.structure.node_pair_count()
    }
}

/// Normalized observation model and the MRF built from it.
#[derive(Debug, Clone)]
pub struct MrfGraph<T> {
    pub adjacency: Arc<Adjacency>,
    /// `h̃_iᵀ h̃_j` per directed edge in adjacency order.
    pub edge_attr: Vec<T>,
    /// `(ỹᵀh̃_i, h̃_iᵀh̃_i)` per node.
    pub node_init_feats: Vec<[T; 2]>,
    pub node_pair_count: usize,
}

#[derive(Debug, Clone)]
pub struct Normalized<T> {
    pub y_tilde: Vec<T>,
    pub h_tilde: CsrMatrix<T>,
    pub graph: MrfGraph<T>,
}

/// Row-scales the graph's channel by `1/σ_ζ` and centers `y` by `μ_ζ`.
///
/// In [`GraphMode::Full`] the statistics are ignored and `σ² = σ_n²/2`, `μ = 0` are used.
pub fn normalize<T: Scalar>(g: &GnnGraph<T>, y: &[T], stats: &IdiStats<T>, noise_var: T) -> Normalized<T> {
    let n = y.len();
    let stats = match g.mode {
        GraphMode::IdiApprox => stats.clone(),
        GraphMode::Full => IdiStats::noise_only(n, noise_var),
    };
    let sigma: Vec<T> = stats.sigma_zeta_sq.iter().map(|v| v.sqrt()).collect();
    let y_tilde: Vec<T> = (0..n).map(|j| (y[j] - stats.mu_zeta[j]) / sigma[j]).collect();
    let rows: Vec<Vec<(usize, T)>> = (0..g.h.nrows())
        .map(|j| {
            let (c, v) = g.h.row(j);
            c.iter().zip(v).map(|(&i, &h)| (i, h / sigma[j])).collect()
        })
        .collect();
    let h_tilde = CsrMatrix::from_rows(g.h.ncols(), rows);
    let ht = h_tilde.transpose();
    let node_init_feats = (0..n)
        .map(|i| {
            let (r, v) = ht.row(i);
            let proj = r.iter().zip(v).map(|(&j, &h)| h * y_tilde[j]).sum();
            let energy = v.iter().map(|&h| h * h).sum();
            [proj, energy]
        })
        .collect();
    let adjacency = Arc::clone(&g.structure.adjacency);
    let edge_attr = adjacency
        .iter()
        .map(|(i, j)| {
            let (ri, vi) = ht.row(i);
            let (rj, vj) = ht.row(j);
            let mut acc = T::zero();
            let (mut a, mut b) = (0, 0);
            while a < ri.len() && b < rj.len() {
                match ri[a].cmp(&rj[b]) {
                    std::cmp::Ordering::Less => a += 1,
                    std::cmp::Ordering::Greater => b += 1,
                    std::cmp::Ordering::Equal => {
                        acc += vi[a] * vj[b];
                        a += 1;
                        b += 1;
                    }
                }
            }
            acc
        })
        .collect();
    let node_pair_count = adjacency.edges();
    Normalized { y_tilde, h_tilde, graph: MrfGraph { adjacency, edge_attr, node_init_feats, node_pair_count } }
}

/// How the IDI statistics of an iteration are obtained.
#[derive(Debug, Clone, Copy)]
pub enum StatsSource {
    /// From the previous iteration's posterior moments.
    Estimate { x_prev: Var, nu_prev: Var },
    /// Noise only: `μ = 0`, `σ² = σ_n²/2`.
    NoiseOnly,
}

/// Output of one recorded pass.
#[derive(Debug, Clone, Copy)]
pub struct PassVars {
    pub probs: Var,
    pub x_hat: Var,
    pub nu_x: Var,
}

/// Records IDI statistics, normalization and a full graph pass on the tape.
#[allow(clippy::too_many_arguments)]
pub fn gnn_iteration_tape<T: Scalar>(
    tape: &mut Tape<T>,
    ch: &RealChannel<T>,
    g: &GnnGraph<T>,
    p: &BoundParams,
    layers: usize,
    y: Var,
    noise_var: T,
    stats: StatsSource,
    attrs: Var,
    support: &Arc<Vec<T>>,
) -> PassVars {
    tape.set_stage(Stage::Initialization);
    let n = ch.dim();
    let half = noise_var / T::lit(2.0);
    let (centered, w) = match stats {
        StatsSource::Estimate { x_prev, nu_prev } if g.mode == GraphMode::IdiApprox => {
            let mu = tape.spmm(&ch.h_idi, x_prev);
            let var_idi = tape.spmm(&ch.h_idi_sq, nu_prev);
            let var = tape.add_const(var_idi, half);
            let w = tape.recip(var, T::lit(AMP_EPS));
            (tape.sub(y, mu), w)
        }
        _ => {
            let w = tape.input(Tensor::filled(n, 1, T::one() / half.max(T::lit(AMP_EPS))));
            (y, w)
        }
    };
    let yw = tape.mul(centered, w);
    let proj = tape.spmm(&g.ht, yw);
    let energy = tape.spmm(&g.ht_sq, w);
    let feats = tape.concat(&[proj, energy]);
    let u0 = tape.linear(feats, p.w1, Some(p.b1));
    let edges = tape.spmm(&g.structure.gram, w);
    gnn_rounds_tape(tape, g.adjacency(), p, layers, u0, edges, attrs, support)
}

/// `L` propagation/update rounds from initial features `u0`, then readout and moments.
#[allow(clippy::too_many_arguments)]
pub fn gnn_rounds_tape<T: Scalar>(
    tape: &mut Tape<T>,
    adjacency: &Arc<Adjacency>,
    p: &BoundParams,
    layers: usize,
    u0: Var,
    edges: Var,
    attrs: Var,
    support: &Arc<Vec<T>>,
) -> PassVars {
    let n = tape.value(u0).rows;
    let n_h = tape.value(p.phi.w_hh).rows;
    let mut u = u0;
    let mut s = tape.input(Tensor::zeros(n, n_h));
    for _ in 0..layers {
        tape.set_stage(Stage::Aggregation);
        let agg = tape.graph_sum(adjacency, u, edges);
        tape.set_stage(Stage::MlpTheta);
        let m = mlp_tape(tape, agg, &p.theta);
        tape.set_stage(Stage::UpdateGru);
        let x_in = tape.concat(&[m, attrs]);
        s = gru_tape(tape, &p.phi, x_in, s);
        tape.set_stage(Stage::UpdateLinear);
        u = tape.linear(s, p.w2, Some(p.b2));
    }
    tape.set_stage(Stage::Readout);
    let probs = mlp_tape(tape, u, &p.omega);
    tape.set_stage(Stage::Other);
    let mom = tape.moments(probs, support);
    let x_hat = tape.column(mom, 0);
    let nu_x = tape.column(mom, 1);
    PassVars { probs, x_hat, nu_x }
}

/// Posterior output of a standalone pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassOutput<T> {
    /// `2MN × |Q_R|`, rows sum to one.
    pub posteriors: Tensor<T>,
    pub x_hat: Vec<T>,
    pub nu_x: Vec<T>,
}

/// Runs one pass from precomputed normalized features.
///
/// `node_attrs` holds `[r_i, ν_{r_i}]` per node.
pub fn gnn_pass<T: Scalar>(
    graph: &MrfGraph<T>,
    node_attrs: &[[T; 2]],
    params: &GnnParams<T>,
    support: &[T],
) -> Result<PassOutput<T>> {
    let n = graph.adjacency.nodes();
    if node_attrs.len() != n || graph.node_init_feats.len() != n || graph.edge_attr.len() != graph.adjacency.edges() {
        return Err(Error::Shape("node attributes, features and graph disagree".into()));
    }
    if support.len() != params.hyper.qr_size {
        return Err(Error::Shape(format!("readout size {} vs alphabet {}", params.hyper.qr_size, support.len())));
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let feats = tape.input(Tensor::from_vec(n, 2, graph.node_init_feats.iter().flatten().copied().collect()));
    let u0 = tape.linear(feats, p.w1, Some(p.b1));
    let edges = tape.input(Tensor::column(graph.edge_attr.clone()));
    let attrs = tape.input(Tensor::from_vec(n, 2, node_attrs.iter().flatten().copied().collect()));
    let support = Arc::new(support.to_vec());
    let out = gnn_rounds_tape(&mut tape, &graph.adjacency, &p, params.hyper.l, u0, edges, attrs, &support);
    let posteriors = tape.value(out.probs).clone();
    if !posteriors.is_finite() {
        return Err(Error::NonFinite("graph network posteriors"));
    }
    Ok(PassOutput { posteriors, x_hat: tape.value(out.x_hat).data.clone(), nu_x: tape.value(out.nu_x).data.clone() })
}
