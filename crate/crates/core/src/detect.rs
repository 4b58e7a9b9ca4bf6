//! Detector orchestration: the alternating AMP/GNN loop, its variants and baselines.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::amp::{amp_init, amp_init_tape, amp_step_tape, amp_step_vectorized, bayes_denoise, INITIAL_VARIANCE};
use crate::channel::EffectiveChannel;
use crate::error::{Error, Result};
use crate::frames::Constellation;
use crate::gnn::{gnn_iteration_tape, GnnGraph, GraphMode, StatsSource};
use crate::nn::params::BoundParams;
use crate::nn::{GnnParams, Stage, StageCounters, Tape, Tensor, Var};
use crate::real::RealChannel;
use crate::scalar::Scalar;

/// Largest `MN` accepted by exhaustive search.
pub const MAP_MAX_MN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AmpGnn,
    AmpGnnV1,
    AmpGnnV2,
    AmpOnly,
    GnnOnly,
    MapBruteforce,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::AmpGnn, Variant::AmpGnnV1, Variant::AmpGnnV2, Variant::AmpOnly, Variant::GnnOnly, Variant::MapBruteforce];

    pub fn name(self) -> &'static str {
        match self {
            Variant::AmpGnn => "amp_gnn",
            Variant::AmpGnnV1 => "amp_gnn_v1",
            Variant::AmpGnnV2 => "amp_gnn_v2",
            Variant::AmpOnly => "amp_only",
            Variant::GnnOnly => "gnn_only",
            Variant::MapBruteforce => "map_bruteforce",
        }
    }

    /// Whether the variant needs trained parameters.
    pub fn is_learned(self) -> bool {
        matches!(self, Variant::AmpGnn | Variant::AmpGnnV1 | Variant::AmpGnnV2 | Variant::GnnOnly)
    }

    pub fn graph_mode(self) -> Option<GraphMode> {
        match self {
            Variant::AmpGnn | Variant::AmpGnnV1 => Some(GraphMode::IdiApprox),
            Variant::AmpGnnV2 | Variant::GnnOnly => Some(GraphMode::Full),
            Variant::AmpOnly | Variant::MapBruteforce => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown detector {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub variant: Variant,
    /// Outer iterations. The GNN-only baseline always runs a single pass.
    pub t: usize,
    /// Graph rounds per iteration.
    pub l: usize,
    /// Record per-stage operation counts and timings.
    pub instrument: bool,
}

impl DetectorConfig {
    pub fn new(variant: Variant, t: usize, l: usize) -> Self {
        Self { variant, t, l, instrument: false }
    }

    pub fn instrumented(mut self) -> Self {
        self.instrument = true;
        self
    }

    pub fn outer_iterations(&self) -> usize {
        if self.variant == Variant::GnnOnly {
            1
        } else {
            self.t
        }
    }

    pub fn validate(&self, mn: usize) -> Result<()> {
        if self.t == 0 || self.l == 0 {
            return Err(Error::InvalidConfig("T and L must be at least 1".into()));
        }
        if self.variant == Variant::MapBruteforce && mn > MAP_MAX_MN {
            return Err(Error::TooLarge(mn));
        }
        Ok(())
    }
}

/// Per-channel precomputation shared by every frame detected on that channel.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub effective: Arc<EffectiveChannel>,
    pub real: RealChannel<T>,
    pub graph: Option<GnnGraph<T>>,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(effective: &EffectiveChannel, variant: Variant) -> Self {
        let real = RealChannel::new(effective);
        let graph = variant.graph_mode().map(|m| GnnGraph::new(&real, m));
        Self { effective: Arc::new(effective.clone()), real, graph }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    pub mean_nu_r: f64,
    pub mean_nu_x: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// `N_s` of the graph used in each outer iteration.
    pub node_pairs: Vec<usize>,
    pub counters: Option<StageCounters>,
    pub trace: Vec<IterationTrace>,
}

impl Diagnostics {
    pub fn total_node_pairs(&self) -> usize {
        self.node_pairs.iter().sum()
    }

    pub fn to_json(&self) -> Value {
        let counters = self.counters.as_ref().map(|c| {
            Stage::ALL
                .iter()
                .map(|&s| (format!("{s:?}"), json!({ "flops": c.flops(s), "seconds": c.seconds(s) })))
                .collect::<serde_json::Map<_, _>>()
        });
        json!({ "node_pairs": self.node_pairs, "counters": counters, "trace": self.trace })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Hard decisions as constellation indices.
    pub symbols: Vec<usize>,
    /// Complex soft estimate before the decision.
    pub x_hat_bar: Vec<Complex64>,
    pub soft_x: Vec<f64>,
    pub soft_nu: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Nearest constellation point per symbol, ties to the lowest index.
pub fn hard_decide(x_hat_bar: &[Complex64], constellation: &Constellation) -> Vec<usize> {
    x_hat_bar.iter().map(|&z| constellation.decide(z)).collect()
}

/// `x̂̄_i = x̂_i + j x̂_{i+MN}`.
pub fn recombine(x: &[f64]) -> Vec<Complex64> {
    let mn = x.len() / 2;
    (0..mn).map(|i| Complex64::new(x[i], x[i + mn])).collect()
}

fn lift_observation<T: Scalar>(y_bar: &[Complex64]) -> Vec<T> {
    y_bar.iter().map(|v| T::lit(v.re)).chain(y_bar.iter().map(|v| T::lit(v.im))).collect()
}

/// Options that only matter while training.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnrollOptions {
    /// Treat `(r, ν_r)` as constants in the backward pass.
    pub detach_amp: bool,
}

#[derive(Debug, Clone)]
pub struct UnrolledOutput {
    pub x_hat: Var,
    pub nu_x: Var,
    pub node_pairs: Vec<usize>,
    pub trace: Vec<IterationTrace>,
}

fn mean<T: Scalar>(t: &Tensor<T>) -> f64 {
    t.data.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / t.len().max(1) as f64
}

/// Records the full detector on a tape for a learned variant.
#[allow(clippy::too_many_arguments)]
pub fn unrolled_forward<T: Scalar>(
    tape: &mut Tape<T>,
    prep: &Prepared<T>,
    params: &BoundParams,
    cfg: &DetectorConfig,
    y: Var,
    noise_var: T,
    support: &Arc<Vec<T>>,
    opts: UnrollOptions,
) -> Result<UnrolledOutput> {
    let graph = prep
        .graph
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("{} has no graph stage", cfg.variant)))?;
    let ch = &prep.real;
    let n = ch.dim();
    tape.set_stage(Stage::Initialization);
    let mut x = tape.input(Tensor::zeros(n, 1));
    let mut nu = tape.input(Tensor::filled(n, 1, T::lit(INITIAL_VARIANCE)));
    let mut s_prev = amp_init_tape(tape, ch);
    let mut node_pairs = Vec::new();
    let mut trace = Vec::new();
    for t in 0..cfg.outer_iterations() {
        let (attrs, mean_nu_r) = if cfg.variant == Variant::GnnOnly {
            (tape.input(Tensor::zeros(n, 2)), f64::NAN)
        } else {
            let a = amp_step_tape(tape, ch, y, noise_var, s_prev, x, nu);
            if !tape.value(a.r).is_finite() || !tape.value(a.nu_r).is_finite() {
                return Err(Error::Diverged { iteration: t + 1 });
            }
            s_prev = a.s;
            let mean_nu_r = mean(tape.value(a.nu_r));
            let attrs = tape.concat(&[a.r, a.nu_r]);
            let attrs = if opts.detach_amp { tape.input(tape.value(attrs).clone()) } else { attrs };
            (attrs, mean_nu_r)
        };
        let stats = match cfg.variant {
            Variant::AmpGnn => StatsSource::Estimate { x_prev: x, nu_prev: nu },
            _ => StatsSource::NoiseOnly,
        };
        let pass = gnn_iteration_tape(tape, ch, graph, params, cfg.l, y, noise_var, stats, attrs, support);
        if !tape.value(pass.probs).is_finite() {
            return Err(Error::NonFinite("graph network posteriors"));
        }
        x = pass.x_hat;
        nu = pass.nu_x;
        node_pairs.push(graph.node_pair_count());
        trace.push(IterationTrace { mean_nu_r, mean_nu_x: mean(tape.value(nu)) });
    }
    tape.set_stage(Stage::Other);
    Ok(UnrolledOutput { x_hat: x, nu_x: nu, node_pairs, trace })
}

/// Detects one frame with the configured variant.
pub fn detect<T: Scalar>(
    y_bar: &[Complex64],
    prep: &Prepared<T>,
    noise_var: f64,
    constellation: &Constellation,
    cfg: &DetectorConfig,
    params: Option<&GnnParams<T>>,
) -> Result<DetectionResult> {
    let mn = prep.real.mn;
    cfg.validate(mn)?;
    if y_bar.len() != mn {
        return Err(Error::Shape(format!("observation has {} symbols, channel expects {mn}", y_bar.len())));
    }
    match cfg.variant {
        Variant::MapBruteforce => detect_map_bruteforce(y_bar, &prep.effective, noise_var, constellation),
        Variant::AmpOnly => detect_amp_only(y_bar, prep, noise_var, constellation, cfg.t),
        _ => {
            let params = params.ok_or_else(|| Error::MissingParams(cfg.variant.to_string()))?;
            if params.hyper.qr_size != constellation.real_alphabet.len() {
                return Err(Error::Shape(format!(
                    "checkpoint readout has {} levels, constellation has {}",
                    params.hyper.qr_size,
                    constellation.real_alphabet.len()
                )));
            }
            let mut tape = if cfg.instrument { Tape::instrumented() } else { Tape::new() };
            let bound = params.bind(&mut tape);
            let y = tape.input(Tensor::column(lift_observation(y_bar)));
            let support = Arc::new(constellation.real_alphabet.iter().map(|&v| T::lit(v)).collect());
            let out =
                unrolled_forward(&mut tape, prep, &bound, cfg, y, T::lit(noise_var), &support, UnrollOptions::default())?;
            let soft_x: Vec<f64> = tape.value(out.x_hat).data.iter().map(|v| v.to_f64_lossy()).collect();
            let soft_nu: Vec<f64> = tape.value(out.nu_x).data.iter().map(|v| v.to_f64_lossy()).collect();
            let x_hat_bar = recombine(&soft_x);
            Ok(DetectionResult {
                symbols: hard_decide(&x_hat_bar, constellation),
                x_hat_bar,
                soft_x,
                soft_nu,
                diagnostics: Diagnostics { node_pairs: out.node_pairs, counters: tape.counters(), trace: out.trace },
            })
        }
    }
}

/// `T` AMP iterations with the per-entry posterior of the discrete prior as denoiser.
pub fn detect_amp_only<T: Scalar>(
    y_bar: &[Complex64],
    prep: &Prepared<T>,
    noise_var: f64,
    constellation: &Constellation,
    t: usize,
) -> Result<DetectionResult> {
    let ch = &prep.real;
    let y: Vec<T> = lift_observation(y_bar);
    let sigma = T::lit(noise_var);
    let alphabet: Vec<T> = constellation.real_alphabet.iter().map(|&v| T::lit(v)).collect();
    let n = ch.dim();
    let mut state = amp_init(ch, &y, sigma)?;
    let mut x = vec![T::zero(); n];
    let mut nu = vec![T::lit(INITIAL_VARIANCE); n];
    let mut trace = Vec::with_capacity(t);
    for _ in 0..t {
        state = amp_step_vectorized(&state, ch, &y, sigma, &x, &nu)?;
        for i in 0..n {
            let (m, v) = bayes_denoise(state.r[i], state.nu_r[i], &alphabet);
            x[i] = m;
            nu[i] = v;
        }
        let avg = |v: &[T]| v.iter().map(|a| a.to_f64_lossy()).sum::<f64>() / n as f64;
        trace.push(IterationTrace { mean_nu_r: avg(&state.nu_r), mean_nu_x: avg(&nu) });
    }
    let soft_x: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
    let x_hat_bar = recombine(&soft_x);
    Ok(DetectionResult {
        symbols: hard_decide(&x_hat_bar, constellation),
        x_hat_bar,
        soft_x,
        soft_nu: nu.iter().map(|v| v.to_f64_lossy()).collect(),
        diagnostics: Diagnostics { trace, ..Diagnostics::default() },
    })
}

/// Exhaustive minimization of `‖ȳ − H_eff x̄‖²`; ties go to the lexicographically smallest index vector.
pub fn detect_map_bruteforce(
    y_bar: &[Complex64],
    channel: &EffectiveChannel,
    _noise_var: f64,
    constellation: &Constellation,
) -> Result<DetectionResult> {
    let mn = channel.config.mn();
    if mn > MAP_MAX_MN {
        return Err(Error::TooLarge(mn));
    }
    let dense = channel.h_eff.to_dense();
    let cols: Vec<Vec<Complex64>> = (0..mn).map(|c| (0..mn).map(|r| dense[r][c]).collect()).collect();
    let q = constellation.order;
    let pts = &constellation.points;
    let mut idx = vec![0usize; mn];
    // residual for the all-zero-index hypothesis
    let mut resid: Vec<Complex64> = y_bar.to_vec();
    for (c, col) in cols.iter().enumerate() {
        for r in 0..mn {
            resid[r] -= col[r] * pts[idx[c]];
        }
    }
    let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let mut best = idx.clone();
    let mut best_cost = norm(&resid);
    // odometer with position 0 most significant so the order is lexicographic
    'outer: loop {
        let mut pos = mn;
        loop {
            if pos == 0 {
                break 'outer;
            }
            pos -= 1;
            let old = idx[pos];
            let new = if old + 1 == q { 0 } else { old + 1 };
            let delta = pts[new] - pts[old];
            for r in 0..mn {
                resid[r] -= cols[pos][r] * delta;
            }
            idx[pos] = new;
            if new != 0 {
                break;
            }
        }
        let cost = norm(&resid);
        if cost < best_cost {
            best_cost = cost;
            best.copy_from_slice(&idx);
        }
    }
    let x_hat_bar: Vec<Complex64> = best.iter().map(|&i| pts[i]).collect();
    let soft_x: Vec<f64> = x_hat_bar.iter().map(|z| z.re).chain(x_hat_bar.iter().map(|z| z.im)).collect();
    Ok(DetectionResult {
        symbols: best,
        x_hat_bar,
        soft_nu: vec![0.0; 2 * mn],
        soft_x,
        diagnostics: Diagnostics::default(),
    })
}
