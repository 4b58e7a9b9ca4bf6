//! Delay-Doppler channel synthesis and the sparse effective channel.
//!
//! A realization is a list of `P` propagation paths, each with a complex gain,
//! an integer delay tap `l_p`, an integer Doppler bin `k_p` and a fractional
//! Doppler offset `κ_p`. [`build_effective_channel`] expands it into the
//! `MN × MN` matrix that maps vectorized delay-Doppler symbols (index
//! `k·M + l`) to received samples, the IDI-truncated matrix that keeps only
//! the `2N_o + 1` strongest Doppler leakage taps of every path, and the
//! real-valued `2MN × 2MN` lift used by the detectors.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::sparse::CsrMatrix;

/// System dimensions and channel statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtfsConfig {
    /// Subcarriers (delay bins).
    #[serde(rename = "M")]
    pub m: usize,
    /// Time slots (Doppler bins).
    #[serde(rename = "N")]
    pub n: usize,
    /// Subcarrier spacing in Hz; the symbol duration is its inverse.
    pub delta_f: f64,
    #[serde(rename = "P")]
    pub paths: usize,
    pub l_max: usize,
    pub k_max: usize,
    /// Half-width of the retained Doppler leakage window.
    #[serde(rename = "N_o")]
    pub n_o: usize,
    pub qam_order: usize,
}

impl Default for OtfsConfig {
    fn default() -> Self {
        Self::small()
    }
}

impl OtfsConfig {
    /// `M=4, N=2, P=2`: small enough for exhaustive MAP search.
    pub fn tiny() -> Self {
        Self { m: 4, n: 2, delta_f: 30e3, paths: 2, l_max: 2, k_max: 1, n_o: 1, qam_order: 4 }
    }

    /// `M=16, N=8, P=2`: desk-scale training and BER sweeps.
    pub fn small() -> Self {
        Self { m: 16, n: 8, delta_f: 30e3, paths: 2, l_max: 4, k_max: 2, n_o: 2, qam_order: 4 }
    }

    /// `M=64, N=16` with `l_max=8, k_max=2, N_o=5`, `P=4` and 16-QAM.
    pub fn paper() -> Self {
        Self { m: 64, n: 16, delta_f: 30e3, paths: 4, l_max: 8, k_max: 2, n_o: 5, qam_order: 16 }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "small" => Some(Self::small()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    pub fn with_paths(mut self, paths: usize) -> Self {
        self.paths = paths;
        self
    }

    pub fn with_qam(mut self, order: usize) -> Self {
        self.qam_order = order;
        self
    }

    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    /// Length of the real-valued lifted vectors, `2MN`.
    pub fn dim(&self) -> usize {
        2 * self.m * self.n
    }

    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.delta_f
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 || self.n == 0 || self.paths == 0 {
            return fail(format!("M, N and P must be positive (M={}, N={}, P={})", self.m, self.n, self.paths));
        }
        if !(self.delta_f.is_finite() && self.delta_f > 0.0) {
            return fail(format!("delta_f must be positive, got {}", self.delta_f));
        }
        if self.l_max >= self.m {
            return fail(format!("l_max={} must be below M={}", self.l_max, self.m));
        }
        if self.k_max > self.n / 2 {
            return fail(format!("k_max={} exceeds floor(N/2)={}", self.k_max, self.n / 2));
        }
        if self.n_o > self.n / 2 {
            return fail(format!("N_o={} exceeds floor(N/2)={}", self.n_o, self.n / 2));
        }
        if self.qam_order != 4 && self.qam_order != 16 {
            return Err(Error::UnsupportedOrder(self.qam_order));
        }
        Ok(())
    }

    /// Doppler leakage indices of the full model, `⌊−N/2⌋+1 ..= ⌊N/2⌋`.
    pub fn q_full(&self) -> std::ops::RangeInclusive<i64> {
        let n = self.n as i64;
        ((-n).div_euclid(2) + 1)..=n.div_euclid(2)
    }

    /// Retained leakage indices: `[−N_o, N_o]` clipped to the full range so that
    /// no residue modulo `N` is counted twice.
    pub fn q_window(&self) -> Vec<i64> {
        let no = self.n_o as i64;
        self.q_full().filter(|q| (-no..=no).contains(q)).collect()
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PathRecord", into = "PathRecord")]
pub struct PathTap {
    pub gain: Complex64,
    /// Integer delay tap `l_p ∈ [0, l_max]`.
    pub delay: usize,
    /// Integer Doppler bin `k_p ∈ [−k_max, k_max]`.
    pub doppler: i64,
    /// Fractional Doppler `κ_p ∈ [−1/2, 1/2]`.
    pub doppler_frac: f64,
}

#[derive(Serialize, Deserialize)]
struct PathRecord {
    gain_re: f64,
    gain_im: f64,
    l: usize,
    k: i64,
    kappa: f64,
}

impl From<PathRecord> for PathTap {
    fn from(r: PathRecord) -> Self {
        Self { gain: Complex64::new(r.gain_re, r.gain_im), delay: r.l, doppler: r.k, doppler_frac: r.kappa }
    }
}

impl From<PathTap> for PathRecord {
    fn from(p: PathTap) -> Self {
        Self { gain_re: p.gain.re, gain_im: p.gain.im, l: p.delay, k: p.doppler, kappa: p.doppler_frac }
    }
}

impl PathTap {
    /// Physical delay `τ_p = l_p / (M Δf)` in seconds.
    pub fn delay_seconds(&self, cfg: &OtfsConfig) -> f64 {
        self.delay as f64 / (cfg.m as f64 * cfg.delta_f)
    }

    /// Physical Doppler `ν_p = (k_p + κ_p) / (N ΔT)` in Hz.
    pub fn doppler_hz(&self, cfg: &OtfsConfig) -> f64 {
        (self.doppler as f64 + self.doppler_frac) / (cfg.n as f64 * cfg.symbol_duration())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub paths: Vec<PathTap>,
}

impl ChannelRealization {
    pub fn validate(&self, cfg: &OtfsConfig) -> Result<()> {
        if self.paths.len() != cfg.paths {
            return Err(Error::InvalidConfig(format!(
                "realization has {} paths, config expects {}",
                self.paths.len(),
                cfg.paths
            )));
        }
        for (i, p) in self.paths.iter().enumerate() {
            let ok = p.delay <= cfg.l_max
                && p.doppler.unsigned_abs() as usize <= cfg.k_max
                && p.doppler_frac.abs() <= 0.5
                && p.gain.re.is_finite()
                && p.gain.im.is_finite();
            if !ok {
                return Err(Error::InvalidConfig(format!("path {i} out of range: {p:?}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("realization serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Exponential power-delay profile `e^{−0.1 l_p} / Σ_i e^{−0.1 l_i}`.
pub fn path_powers(delays: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = delays.iter().map(|&l| (-0.1 * l as f64).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn sample_channel(cfg: &OtfsConfig, seed: u64) -> Result<ChannelRealization> {
    cfg.validate()?;
    Ok(sample_channel_with(cfg, &mut rng_from_seed(seed)))
}

/// Draws delays, Dopplers and fractional Dopplers uniformly, then Rayleigh gains
/// with the normalized exponential power-delay profile.
pub fn sample_channel_with<R: Rng + ?Sized>(cfg: &OtfsConfig, rng: &mut R) -> ChannelRealization {
    let k_max = cfg.k_max as i64;
    let taps: Vec<(usize, i64, f64)> = (0..cfg.paths)
        .map(|_| {
            let l = rng.random_range(0..=cfg.l_max);
            let k = rng.random_range(-k_max..=k_max);
            let kappa = rng.random::<f64>() - 0.5;
            (l, k, kappa)
        })
        .collect();
    let delays: Vec<usize> = taps.iter().map(|t| t.0).collect();
    let powers = path_powers(&delays);
    let paths = taps
        .iter()
        .zip(&powers)
        .map(|(&(delay, doppler, doppler_frac), &power)| {
            let normal = Normal::new(0.0, (power / 2.0).sqrt()).expect("finite deviation");
            let gain = Complex64::new(normal.sample(rng), normal.sample(rng));
            PathTap { gain, delay, doppler, doppler_frac }
        })
        .collect();
    ChannelRealization { paths }
}

/// Adds `CN(0, σ_e²/P)` estimation error to every path gain.
pub fn perturb_csi(real: &ChannelRealization, sigma_e_sq: f64, seed: u64) -> ChannelRealization {
    assert!(sigma_e_sq >= 0.0, "CSI error variance must be nonnegative");
    if sigma_e_sq == 0.0 {
        return real.clone();
    }
    let per_path = sigma_e_sq / real.paths.len() as f64;
    let normal = Normal::new(0.0, (per_path / 2.0).sqrt()).expect("finite deviation");
    let mut rng = rng_from_seed(seed);
    let paths = real
        .paths
        .iter()
        .map(|p| PathTap { gain: p.gain + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)), ..*p })
        .collect();
    ChannelRealization { paths }
}

/// Doppler leakage kernel `Σ_{n=0}^{N−1} e^{j2πn(q+κ)/N}`, evaluated in closed form.
pub fn beta(q: i64, kappa: f64, n: usize) -> Complex64 {
    let nf = n as f64;
    let q_red = q.rem_euclid(n as i64) as f64;
    // e^{j2π(q+κ)} reduces to e^{j2πκ} for integer q, which is exactly 1 when κ = 0.
    let num = Complex64::from_polar(1.0, 2.0 * PI * kappa) - 1.0;
    let den = Complex64::from_polar(1.0, 2.0 * PI * (q_red + kappa) / nf) - 1.0;
    if den.norm() > 1e-9 {
        num / den
    } else {
        beta_sum(q, kappa, n)
    }
}

/// Direct `N`-term evaluation of [`beta`].
pub fn beta_sum(q: i64, kappa: f64, n: usize) -> Complex64 {
    let nf = n as f64;
    let q_red = q.rem_euclid(n as i64) as f64;
    (0..n).map(|i| Complex64::from_polar(1.0, 2.0 * PI * i as f64 * (q_red + kappa) / nf)).sum()
}

/// Per-tap coefficient `α_p(k, l, q)`; the wrap-around branch applies for `l < l_p`.
pub fn alpha(path: &PathTap, k: usize, l: usize, q: i64, cfg: &OtfsConfig) -> Complex64 {
    let b = beta(q, path.doppler_frac, cfg.n);
    if l >= path.delay {
        b
    } else {
        let n = cfg.n as i64;
        let shift = (k as i64 - path.doppler + q).rem_euclid(n) as f64;
        (b - 1.0) * Complex64::from_polar(1.0, -2.0 * PI * shift / cfg.n as f64)
    }
}

/// Complex column index `[k − k_p + q]_N · M + [l − l_p]_M` reached from row `(k, l)`.
fn tap_column(path: &PathTap, k: usize, l: usize, q: i64, cfg: &OtfsConfig) -> usize {
    let kk = (k as i64 - path.doppler + q).rem_euclid(cfg.n as i64) as usize;
    let ll = (l as i64 - path.delay as i64).rem_euclid(cfg.m as i64) as usize;
    kk * cfg.m + ll
}

/// Row index `[k + k_p + q]_N · M + [l + l_p]_M` that receives column `(k, l)`.
fn tap_row(path: &PathTap, k: usize, l: usize, q: i64, cfg: &OtfsConfig) -> usize {
    let kk = (k as i64 + path.doppler + q).rem_euclid(cfg.n as i64) as usize;
    let ll = ((l + path.delay) % cfg.m) as usize;
    kk * cfg.m + ll
}

/// Full and truncated effective channels of one realization.
#[derive(Debug, Clone)]
pub struct EffectiveChannel {
    pub config: OtfsConfig,
    pub realization: ChannelRealization,
    /// `MN × MN`, every leakage index of the full model (structural zeros kept).
    pub h_eff: CsrMatrix<Complex64>,
    /// `MN × MN`, the leakage window `[−N_o, N_o]`; values extracted from `h_eff`.
    pub h_bar: CsrMatrix<Complex64>,
    /// `2MN × 2MN` block lift `[[Re, −Im], [Im, Re]]` of `h_bar`.
    pub h_real: CsrMatrix<f64>,
    /// `I(j)`: columns reachable from lifted row `j`.
    pub idx_in: Vec<Vec<usize>>,
    /// `L(i)`: rows that observe lifted column `i`.
    pub idx_out: Vec<Vec<usize>>,
    /// `Ĩ(j)`: columns of `I(j)` reached only through nonzero leakage indices.
    pub idx_idi: Vec<Vec<usize>>,
}

pub fn build_effective_channel(real: &ChannelRealization, cfg: &OtfsConfig) -> Result<EffectiveChannel> {
    cfg.validate()?;
    real.validate(cfg)?;
    let (m, n, mn) = (cfg.m, cfg.n, cfg.mn());
    let window = cfg.q_window();

    let mut eff_rows = Vec::with_capacity(mn);
    for k in 0..n {
        for l in 0..m {
            let mut row = Vec::with_capacity(cfg.paths * n);
            for p in &real.paths {
                let phase = 2.0 * PI * (l as f64 - p.delay as f64) * (p.doppler as f64 + p.doppler_frac) / mn as f64;
                let scale = p.gain * Complex64::from_polar(1.0, phase) / n as f64;
                for q in cfg.q_full() {
                    row.push((tap_column(p, k, l, q, cfg), scale * alpha(p, k, l, q, cfg)));
                }
            }
            eff_rows.push(row);
        }
    }
    let h_eff = CsrMatrix::from_rows(mn, eff_rows);

    let mut bar_rows = Vec::with_capacity(mn);
    let mut in_c = Vec::with_capacity(mn);
    let mut idi_c = Vec::with_capacity(mn);
    for k in 0..n {
        for l in 0..m {
            let j = k * m + l;
            let mut cols = Vec::new();
            let mut idi = Vec::new();
            let mut direct = Vec::new();
            for p in &real.paths {
                for &q in &window {
                    // the window is symmetric modulo N, so ±q enumerate the same set
                    let c = tap_column(p, k, l, -q, cfg);
                    cols.push(c);
                    if q == 0 {
                        direct.push(c);
                    } else {
                        idi.push(c);
                    }
                }
            }
            cols.sort_unstable();
            cols.dedup();
            // a column hit by any q = 0 tap stays in the MRF with its full coefficient
            idi.retain(|c| !direct.contains(c));
            idi.sort_unstable();
            idi.dedup();
            let row = cols
                .iter()
                .map(|&c| (c, h_eff.get(j, c).expect("windowed tap is part of the full pattern")))
                .collect();
            bar_rows.push(row);
            in_c.push(cols);
            idi_c.push(idi);
        }
    }
    let h_bar = CsrMatrix::from_rows(mn, bar_rows);

    let mut out_c: Vec<Vec<usize>> = Vec::with_capacity(mn);
    for k in 0..n {
        for l in 0..m {
            let mut rows: Vec<usize> = real
                .paths
                .iter()
                .flat_map(|p| window.iter().map(move |&q| tap_row(p, k, l, q, cfg)))
                .collect();
            rows.sort_unstable();
            rows.dedup();
            out_c.push(rows);
        }
    }

    Ok(EffectiveChannel {
        config: *cfg,
        realization: real.clone(),
        h_real: lift_matrix(&h_bar),
        h_eff,
        h_bar,
        idx_in: lift_sets(&in_c, mn),
        idx_out: lift_sets(&out_c, mn),
        idx_idi: lift_sets(&idi_c, mn),
    })
}

/// Real block lift `[[Re(A), −Im(A)], [Im(A), Re(A)]]`; all four blocks share the pattern of `A`.
pub fn lift_matrix(a: &CsrMatrix<Complex64>) -> CsrMatrix<f64> {
    let n = a.nrows();
    let nc = a.ncols();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 2 * n];
    for (r, c, v) in a.triplets() {
        rows[r].push((c, v.re));
        rows[r].push((c + nc, -v.im));
        rows[r + n].push((c, v.im));
        rows[r + n].push((c + nc, v.re));
    }
    CsrMatrix::from_rows(2 * nc, rows)
}

fn lift_sets(sets: &[Vec<usize>], mn: usize) -> Vec<Vec<usize>> {
    let lifted: Vec<Vec<usize>> =
        sets.iter().map(|s| s.iter().copied().chain(s.iter().map(|&i| i + mn)).collect()).collect();
    lifted.iter().chain(lifted.iter()).cloned().collect()
}

impl EffectiveChannel {
    /// Whether lifted entry `(j, i)` belongs to the IDI part `Ĩ(j)`.
    pub fn is_idi(&self, j: usize, i: usize) -> bool {
        self.idx_idi[j].binary_search(&i).is_ok()
    }

    /// Number of rows of `h_bar` with exactly `P(2N_o+1)` stored taps (no path collisions).
    pub fn collision_free_rows(&self) -> usize {
        let full = self.config.paths * self.config.q_window().len();
        (0..self.h_bar.nrows()).filter(|&r| self.h_bar.row_nnz(r) == full).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_path(l: usize, k: i64, kappa: f64) -> ChannelRealization {
        ChannelRealization {
            paths: vec![PathTap { gain: Complex64::new(1.0, 0.0), delay: l, doppler: k, doppler_frac: kappa }],
        }
    }

    #[test]
    fn power_profile_matches_direct_evaluation() {
        assert_eq!(path_powers(&[5]), vec![1.0]);
        let p = path_powers(&[0, 8]);
        assert!((p[0] - 0.68997).abs() < 1e-5, "{p:?}");
        assert!((p[1] - 0.31003).abs() < 1e-5, "{p:?}");
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let cfg = OtfsConfig::paper();
        let a = sample_channel(&cfg, 11).unwrap();
        assert_eq!(a, sample_channel(&cfg, 11).unwrap());
        assert_ne!(a, sample_channel(&cfg, 12).unwrap());
        a.validate(&cfg).unwrap();
    }

    #[test]
    fn beta_special_values() {
        assert_eq!(beta(0, 0.0, 16), Complex64::new(16.0, 0.0));
        assert_eq!(beta(3, 0.0, 16).norm(), 0.0);
        let b = beta(0, 0.25, 8);
        assert!((b - beta_sum(0, 0.25, 8)).norm() < 1e-10);
    }

    #[test]
    fn alpha_branches() {
        let cfg = OtfsConfig { m: 8, n: 16, ..OtfsConfig::paper() };
        let p = single_path(2, 1, 0.0);
        let a = alpha(&p.paths[0], 3, 5, 0, &cfg);
        assert!((a.norm() / 16.0 - 1.0).abs() < 1e-12);
        assert_eq!(alpha(&p.paths[0], 3, 5, 3, &cfg).norm(), 0.0);
        let wrap = alpha(&p.paths[0], 3, 1, 3, &cfg);
        assert!((wrap.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_path_gives_identity() {
        let cfg = OtfsConfig { m: 4, n: 4, paths: 1, l_max: 2, k_max: 1, n_o: 1, ..OtfsConfig::tiny() };
        let ch = build_effective_channel(&single_path(0, 0, 0.0), &cfg).unwrap();
        let d = ch.h_eff.to_dense();
        for (r, row) in d.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((v - Complex64::new(expect, 0.0)).norm() < 1e-14, "({r},{c}) = {v}");
            }
        }
    }

    #[test]
    fn full_window_truncation_is_exact() {
        let cfg = OtfsConfig { m: 4, n: 5, paths: 2, l_max: 3, k_max: 2, n_o: 2, ..OtfsConfig::tiny() };
        let real = sample_channel(&cfg, 3).unwrap();
        let ch = build_effective_channel(&real, &cfg).unwrap();
        assert_eq!(ch.h_bar, ch.h_eff);
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = OtfsConfig { l_max: 4, ..OtfsConfig::tiny() };
        assert!(bad.validate().is_err());
        let bad = OtfsConfig { qam_order: 8, ..OtfsConfig::tiny() };
        assert!(matches!(bad.validate(), Err(Error::UnsupportedOrder(8))));
        let real = sample_channel(&OtfsConfig::tiny(), 1).unwrap();
        let bad = OtfsConfig { n_o: 3, ..OtfsConfig::tiny() };
        assert!(build_effective_channel(&real, &bad).is_err());
    }

    #[test]
    fn zero_csi_error_is_identity() {
        let real = sample_channel(&OtfsConfig::paper(), 5).unwrap();
        assert_eq!(perturb_csi(&real, 0.0, 9), real);
        let noisy = perturb_csi(&real, 0.01, 9);
        for (a, b) in real.paths.iter().zip(&noisy.paths) {
            assert_eq!((a.delay, a.doppler, a.doppler_frac), (b.delay, b.doppler, b.doppler_frac));
            assert_ne!(a.gain, b.gain);
        }
    }

    #[test]
    fn json_round_trip() {
        let real = sample_channel(&OtfsConfig::small(), 2).unwrap();
        let s = real.to_json();
        assert!(s.contains("\"gain_re\"") && s.contains("\"kappa\""));
        assert_eq!(ChannelRealization::from_json(&s).unwrap(), real);
    }
}
