use ampgnn::channel::{build_effective_channel, sample_channel, OtfsConfig};
use ampgnn::complexity::{node_pair_count, worst_case_node_pairs};
use ampgnn::frames::{generate_frame, Constellation};
use ampgnn::gnn::{GnnGraph, GraphMode};
use ampgnn::RealChannel;
use num_complex::Complex64;
use proptest::prelude::*;

fn presets() -> [OtfsConfig; 3] {
    [OtfsConfig::tiny(), OtfsConfig::small(), OtfsConfig::small().with_paths(3)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn index_sets_are_consistent(seed in any::<u64>(), which in 0usize..3) {
        let cfg = presets()[which];
        let eff = build_effective_channel(&sample_channel(&cfg, seed).unwrap(), &cfg).unwrap();
        let n = 2 * cfg.mn();
        let p = cfg.paths;
        let w = cfg.q_window().len();
        for j in 0..n {
            let (cols, _) = eff.h_real.row(j);
            prop_assert_eq!(cols, &eff.idx_in[j][..]);
            let kept = eff.idx_in[j].iter().filter(|&&i| !eff.is_idi(j, i)).count();
            prop_assert!(kept >= 1 && kept <= 2 * p);
            prop_assert!(eff.idx_idi[j].len() <= 2 * p * (w - 1));
            for &i in &eff.idx_idi[j] {
                prop_assert!(eff.idx_in[j].binary_search(&i).is_ok());
            }
        }
        for i in 0..n {
            for &j in &eff.idx_out[i] {
                prop_assert!(eff.idx_in[j].binary_search(&i).is_ok());
            }
        }
        let total_in: usize = eff.idx_in.iter().map(Vec::len).sum();
        let total_out: usize = eff.idx_out.iter().map(Vec::len).sum();
        prop_assert_eq!(total_in, total_out);
    }

    #[test]
    fn truncated_entries_are_extracted_and_lifted(seed in any::<u64>(), which in 0usize..3) {
        let cfg = presets()[which];
        let eff = build_effective_channel(&sample_channel(&cfg, seed).unwrap(), &cfg).unwrap();
        let mn = cfg.mn();
        for (r, c, v) in eff.h_bar.triplets() {
            prop_assert_eq!(eff.h_eff.get(r, c), Some(v));
            prop_assert_eq!(eff.h_real.get(r, c), Some(v.re));
            prop_assert_eq!(eff.h_real.get(r, c + mn), Some(-v.im));
            prop_assert_eq!(eff.h_real.get(r + mn, c), Some(v.im));
            prop_assert_eq!(eff.h_real.get(r + mn, c + mn), Some(v.re));
        }
    }

    #[test]
    fn counted_node_pairs_match_built_graphs(seed in any::<u64>(), which in 0usize..3) {
        let cfg = presets()[which];
        let real = sample_channel(&cfg, seed).unwrap();
        let ch = RealChannel::<f64>::new(&build_effective_channel(&real, &cfg).unwrap());
        let approx = GnnGraph::new(&ch, GraphMode::IdiApprox);
        let full = GnnGraph::new(&ch, GraphMode::Full);
        prop_assert!(approx.adjacency().is_symmetric() && !approx.adjacency().has_self_loops());
        prop_assert!(full.adjacency().is_symmetric() && !full.adjacency().has_self_loops());
        prop_assert_eq!(approx.node_pair_count() as u64, node_pair_count(&real, &cfg, GraphMode::IdiApprox));
        prop_assert_eq!(full.node_pair_count() as u64, node_pair_count(&real, &cfg, GraphMode::Full));
        prop_assert!(approx.node_pair_count() <= full.node_pair_count());
        prop_assert!(approx.node_pair_count() as u64 <= worst_case_node_pairs(&cfg, true));
        prop_assert!(full.node_pair_count() as u64 <= worst_case_node_pairs(&cfg, false));
        for (i, j) in approx.adjacency().iter() {
            prop_assert!(full.adjacency().contains(i, j));
        }
    }
}

#[test]
fn approximation_strictly_shrinks_paper_scale_graphs() {
    let cfg = OtfsConfig::paper();
    for seed in 0..20 {
        let real = sample_channel(&cfg, seed).unwrap();
        let a = node_pair_count(&real, &cfg, GraphMode::IdiApprox);
        let f = node_pair_count(&real, &cfg, GraphMode::Full);
        assert!(a < f, "seed {seed}: {a} vs {f}");
    }
}

#[test]
fn noise_and_symbol_statistics() {
    let cfg = OtfsConfig::small();
    let eff = build_effective_channel(&sample_channel(&cfg, 4).unwrap(), &cfg).unwrap();
    let c = Constellation::new(16).unwrap();
    let nv = 0.3;
    let (mut re2, mut im2, mut count) = (0.0, 0.0, 0usize);
    let mut hist = [0usize; 16];
    let mut seed = 0;
    while count < 100_000 {
        let f = generate_frame(&eff, &c, nv, seed);
        let clean = eff.h_eff.mul_vec(&f.x_bar);
        for (y, x) in f.y_bar.iter().zip(&clean) {
            let w: Complex64 = y - x;
            re2 += w.re * w.re;
            im2 += w.im * w.im;
        }
        for &s in &f.symbols {
            hist[s] += 1;
        }
        count += f.y_bar.len();
        seed += 1;
    }
    let n = count as f64;
    assert!(((re2 + im2) / n / nv - 1.0).abs() < 0.03);
    assert!((re2 / n / (nv / 2.0) - 1.0).abs() < 0.03);
    assert!((im2 / n / (nv / 2.0) - 1.0).abs() < 0.03);
    let p = 1.0 / 16.0;
    let sd = (n * p * (1.0 - p)).sqrt();
    for h in hist {
        assert!((h as f64 - n * p).abs() < 5.0 * sd);
    }
}

#[test]
fn frames_are_deterministic_per_seed() {
    let cfg = OtfsConfig::tiny();
    let eff = build_effective_channel(&sample_channel(&cfg, 1).unwrap(), &cfg).unwrap();
    let c = Constellation::new(4).unwrap();
    assert_eq!(generate_frame(&eff, &c, 0.1, 9), generate_frame(&eff, &c, 0.1, 9));
    assert_ne!(generate_frame(&eff, &c, 0.1, 9), generate_frame(&eff, &c, 0.1, 10));
}
