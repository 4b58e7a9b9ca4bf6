//! Operation counts: closed-form formulas, worst-case graph sizes and measured tallies.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::channel::{ChannelRealization, OtfsConfig};
use crate::error::{Error, Result};
use crate::gnn::GraphMode;
use crate::nn::{GnnHyper, Stage, StageCounters};

/// Value printed for the GRU line in the widely quoted complexity table.
pub const QUOTED_GRU_FLOPS: u64 = 24_330_240;

fn mn2(cfg: &OtfsConfig) -> u64 {
    2 * (cfg.m * cfg.n) as u64
}

/// Stored entries of the lifted channel on a collision-free channel: `2MN · 2P(2N_o+1)`.
pub fn lifted_nnz(cfg: &OtfsConfig) -> u64 {
    mn2(cfg) * 2 * cfg.paths as u64 * (2 * cfg.n_o as u64 + 1)
}

/// `(4Q + 18MN) T`.
pub fn flops_amp(cfg: &OtfsConfig, t: usize) -> u64 {
    (4 * lifted_nnz(cfg) + 9 * mn2(cfg)) * t as u64
}

/// `(n_g − 2MN T)(N_u + 1) L`, where `n_g` sums `N_s` over the outer iterations.
pub fn flops_aggregation(n_g: u64, cfg: &OtfsConfig, hyper: &GnnHyper) -> Result<u64> {
    let self_terms = mn2(cfg) * hyper.t as u64;
    if n_g < self_terms {
        return Err(Error::InvalidConfig(format!("n_g = {n_g} is below 2MNT = {self_terms}")));
    }
    Ok((n_g - self_terms) * (hyper.n_u as u64 + 1) * hyper.l as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NnFlops {
    pub mlp_theta: u64,
    pub update_linear: u64,
    pub update_gru: u64,
    pub readout: u64,
}

pub fn flops_nn(cfg: &OtfsConfig, h: &GnnHyper) -> NnFlops {
    let nodes = mn2(cfg);
    let (n_u, n_h, n_h1, n_h2, qr) = (h.n_u as u64, h.n_h as u64, h.n_h1 as u64, h.n_h2 as u64, h.qr_size as u64);
    let (t, l) = (h.t as u64, h.l as u64);
    NnFlops {
        mlp_theta: nodes * ((2 * n_u + 1) * n_h1 + n_h1 * n_h2 + n_h2 * n_u) * l * t,
        update_linear: nodes * n_u * n_h * l * t,
        update_gru: nodes * (3 * (n_h * (n_u + 2) + n_h * n_h) + 11 * n_h) * l * t,
        readout: nodes * (n_u * n_h1 + n_h1 * n_h2 + n_h2 * qr) * t,
    }
}

/// Largest possible `N_s` (neighbor slots over all `2MN` nodes, self excluded).
pub fn worst_case_node_pairs(cfg: &OtfsConfig, idi_approx: bool) -> u64 {
    let p = cfg.paths as u64;
    let per_node = if idi_approx {
        2 * p * (p - 1) + 1
    } else {
        let w = 4 * cfg.n_o as u64 + 1;
        2 * p * (p - 1) * w + 8 * cfg.n_o as u64 + 1
    };
    mn2(cfg) * per_node
}

/// Exact `N_s` of the MRF for a realization without building the graph.
///
/// Every row reaches the columns `j + d` for a fixed offset set `d ∈ D` on the
/// `N × M` torus, so two columns are neighbors exactly when their difference
/// lies in `K − K`, where `K` holds the offsets that form the graph. Each real
/// node then sees both parts of every complex neighbor plus its own partner.
pub fn node_pair_count(real: &ChannelRealization, cfg: &OtfsConfig, mode: GraphMode) -> u64 {
    let (n, m) = (cfg.n as i64, cfg.m as i64);
    let offset = |dk: i64, dl: i64| (dk.rem_euclid(n), dl.rem_euclid(m));
    let window = cfg.q_window();
    let mut direct = HashSet::new();
    let mut leak = HashSet::new();
    for p in &real.paths {
        for &q in &window {
            let d = offset(q - p.doppler, -(p.delay as i64));
            if q == 0 {
                direct.insert(d);
            } else {
                leak.insert(d);
            }
        }
    }
    let kept: Vec<(i64, i64)> = match mode {
        GraphMode::IdiApprox => direct.iter().copied().collect(),
        GraphMode::Full => direct.union(&leak).copied().collect(),
    };
    if kept.is_empty() {
        return 0;
    }
    let diffs: HashSet<(i64, i64)> =
        kept.iter().flat_map(|a| kept.iter().map(move |b| offset(a.0 - b.0, a.1 - b.1))).collect();
    mn2(cfg) * (2 * diffs.len() as u64 - 1)
}

/// Per-stage operation counts and, when measured, wall-clock time.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopReport {
    pub initialization: u64,
    pub aggregation: u64,
    pub mlp_theta: u64,
    pub update_linear: u64,
    pub update_gru: u64,
    pub readout: u64,
    pub amp: u64,
    pub other: u64,
    /// `Σ_t N_s^{(t)}` when known.
    pub n_g: Option<u64>,
    /// Seconds per stage in [`Stage::ALL`] order, for measured reports.
    pub seconds: Option<[f64; 8]>,
}

impl FlopReport {
    pub fn update(&self) -> u64 {
        self.update_linear + self.update_gru
    }

    pub fn total(&self) -> u64 {
        self.initialization
            + self.aggregation
            + self.mlp_theta
            + self.update_linear
            + self.update_gru
            + self.readout
            + self.amp
            + self.other
    }

    /// Formula values; `n_g` defaults to the worst case of the chosen graph.
    pub fn analytic(cfg: &OtfsConfig, h: &GnnHyper, n_g: Option<u64>, idi_approx: bool) -> Result<Self> {
        let n_g = n_g.unwrap_or_else(|| worst_case_node_pairs(cfg, idi_approx) * h.t as u64);
        let nn = flops_nn(cfg, h);
        Ok(Self {
            initialization: 0,
            aggregation: flops_aggregation(n_g, cfg, h)?,
            mlp_theta: nn.mlp_theta,
            update_linear: nn.update_linear,
            update_gru: nn.update_gru,
            readout: nn.readout,
            amp: flops_amp(cfg, h.t),
            other: 0,
            n_g: Some(n_g),
            seconds: None,
        })
    }

    /// Measured tallies of an instrumented run.
    pub fn from_counters(c: &StageCounters, n_g: Option<u64>) -> Self {
        let mut seconds = [0.0; 8];
        for (i, &s) in Stage::ALL.iter().enumerate() {
            seconds[i] = c.seconds(s);
        }
        Self {
            initialization: c.flops(Stage::Initialization),
            aggregation: c.flops(Stage::Aggregation),
            mlp_theta: c.flops(Stage::MlpTheta),
            update_linear: c.flops(Stage::UpdateLinear),
            update_gru: c.flops(Stage::UpdateGru),
            readout: c.flops(Stage::Readout),
            amp: c.flops(Stage::Amp),
            other: c.flops(Stage::Other),
            n_g,
            seconds: Some(seconds),
        }
    }

    fn rows(&self) -> Vec<(&'static str, u64, Option<f64>)> {
        let sec = |s: Stage| self.seconds.map(|v| v[s as usize]);
        let add = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(x, y)| x + y);
        vec![
            ("initialization", self.initialization, sec(Stage::Initialization)),
            ("aggregation", self.aggregation, sec(Stage::Aggregation)),
            ("mlp_theta", self.mlp_theta, sec(Stage::MlpTheta)),
            ("update_linear", self.update_linear, sec(Stage::UpdateLinear)),
            ("update_gru", self.update_gru, sec(Stage::UpdateGru)),
            ("update", self.update(), add(sec(Stage::UpdateLinear), sec(Stage::UpdateGru))),
            ("readout", self.readout, sec(Stage::Readout)),
            ("amp", self.amp, sec(Stage::Amp)),
            ("other", self.other, sec(Stage::Other)),
            ("total", self.total(), self.seconds.map(|v| v.iter().sum())),
        ]
    }

    /// Aligned text table with a note on the GRU line.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>14} {:>12} {:>12}", "stage", "flops", "x1e7", "ms");
        for (name, v, s) in self.rows() {
            let ms = s.map_or("-".to_string(), |s| format!("{:.3}", s * 1e3));
            let _ = writeln!(out, "{:<16} {:>14} {:>12.4} {:>12}", name, v, v as f64 / 1e7, ms);
        }
        if let Some(n_g) = self.n_g {
            let _ = writeln!(out, "{:<16} {:>14}", "n_g", n_g);
        }
        out.push_str(&gru_footer(self.update_gru));
        out
    }

    /// `name,value` lines; seconds are appended as `<name>_ms` when measured.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,value\n");
        for (name, v, _) in self.rows() {
            let _ = writeln!(out, "{name},{v}");
        }
        if let Some(n_g) = self.n_g {
            let _ = writeln!(out, "n_g,{n_g}");
        }
        for (name, _, s) in self.rows() {
            if let Some(s) = s {
                let _ = writeln!(out, "{name}_ms,{}", s * 1e3);
            }
        }
        for line in gru_footer(self.update_gru).lines() {
            let _ = writeln!(out, "# {}", line.trim_start_matches("note: "));
        }
        out
    }
}

fn gru_footer(update_gru: u64) -> String {
    format!(
        "note: update_gru = 2MN{{3[N_h(N_u+2)+N_h^2]+11N_h}}LT = {update_gru}; the frequently quoted {QUOTED_GRU_FLOPS} \
         (and the update total derived from it) does not follow from that formula at these hyperparameters.\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper(p: usize) -> (OtfsConfig, GnnHyper) {
        (OtfsConfig::paper().with_paths(p), GnnHyper::standard(4))
    }

    #[test]
    fn amp_constants() {
        assert_eq!(flops_amp(&paper(4).0, 15), 11_089_920);
        assert_eq!(flops_amp(&paper(8).0, 15), 21_903_360);
        assert_eq!(flops_amp(&paper(4).0, 0), 0);
    }

    #[test]
    fn aggregation_constants() {
        let (c, h) = paper(4);
        assert_eq!(flops_aggregation(753_525, &c, &h).unwrap(), 13_010_490);
        assert_eq!(flops_aggregation(2_837_310, &c, &h).unwrap(), 50_518_620);
        assert_eq!(flops_aggregation(2048 * 15, &c, &h).unwrap(), 0);
        assert!(flops_aggregation(10, &c, &h).is_err());
    }

    #[test]
    fn nn_constants() {
        let (c, h) = paper(4);
        let nn = flops_nn(&c, &h);
        assert_eq!(nn.mlp_theta, 34_406_400);
        assert_eq!(nn.update_linear, 5_898_240);
        assert_eq!(nn.readout, 11_304_960);
        assert_eq!(nn.update_gru, 56_770_560);
    }

    #[test]
    fn worst_case_constants() {
        assert_eq!(worst_case_node_pairs(&paper(4).0, true), 51_200);
        assert_eq!(worst_case_node_pairs(&paper(8).0, true), 231_424);
        assert_eq!(worst_case_node_pairs(&paper(4).0, false), 1_116_160);
        assert_eq!(worst_case_node_pairs(&paper(8).0, false), 4_900_864);
        assert_eq!(worst_case_node_pairs(&paper(1).0, true), 2048);
    }

    #[test]
    fn report_totals_and_csv() {
        let (c, h) = paper(4);
        let r = FlopReport::analytic(&c, &h, Some(753_525), true).unwrap();
        assert_eq!(r.total(), r.rows().iter().filter(|x| !matches!(x.0, "update" | "total")).map(|x| x.1).sum::<u64>());
        let csv = r.to_csv();
        assert!(csv.lines().any(|l| l == "amp,11089920"), "{csv}");
        assert!(csv.contains("24330240"));
        assert!(r.to_table().contains("56770560"));
    }
}
