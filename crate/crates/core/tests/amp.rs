use ampgnn::amp::{amp_init, amp_init_tape, amp_step, amp_step_tape, amp_step_vectorized, bayes_denoise};
use ampgnn::channel::{build_effective_channel, sample_channel, OtfsConfig};
use ampgnn::complexity::flops_amp;
use ampgnn::frames::{generate_frame, Constellation};
use ampgnn::nn::{Stage, Tape, Tensor};
use ampgnn::RealChannel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(cfg: &OtfsConfig, seed: u64, snr_db: f64) -> (RealChannel<f64>, Vec<f64>, f64) {
    let eff = build_effective_channel(&sample_channel(cfg, seed).unwrap(), cfg).unwrap();
    let nv = ampgnn::frames::snr_to_noise_var(snr_db);
    let frame = generate_frame(&eff, &Constellation::new(cfg.qam_order).unwrap(), nv, seed ^ 0xabc);
    (RealChannel::new(&eff), frame.y_real(), nv)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn scalar_and_matrix_forms_agree(seed in any::<u64>(), snr in 0.0f64..25.0) {
        let cfg = OtfsConfig::tiny();
        let (ch, y, nv) = setup(&cfg, seed, snr);
        let n = ch.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = amp_init(&ch, &y, nv).unwrap();
        let mut b = a.clone();
        for _ in 0..4 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.8..0.8)).collect();
            let nu: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.6)).collect();
            a = amp_step(&a, &ch, &y, nv, &x, &nu).unwrap();
            b = amp_step_vectorized(&b, &ch, &y, nv, &x, &nu).unwrap();
            for (u, v) in a.r.iter().zip(&b.r).chain(a.nu_r.iter().zip(&b.nu_r)).chain(a.z.iter().zip(&b.z)) {
                prop_assert!((u - v).abs() <= 1e-10 * u.abs().max(1.0), "{} vs {}", u, v);
            }
        }
    }
}

#[test]
fn tape_form_matches_matrix_form() {
    let cfg = OtfsConfig::small();
    let (ch, y, nv) = setup(&cfg, 3, 10.0);
    let n = ch.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = amp_init(&ch, &y, nv).unwrap();
    let mut tape = Tape::new();
    let yv = tape.input(Tensor::column(y.clone()));
    let mut s = amp_init_tape(&mut tape, &ch);
    for _ in 0..3 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.7..0.7)).collect();
        let nu: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.5)).collect();
        state = amp_step_vectorized(&state, &ch, &y, nv, &x, &nu).unwrap();
        let xv = tape.input(Tensor::column(x));
        let nuv = tape.input(Tensor::column(nu));
        let out = amp_step_tape(&mut tape, &ch, yv, nv, s, xv, nuv);
        s = out.s;
        for (a, b) in state.r.iter().zip(&tape.value(out.r).data) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
        for (a, b) in state.nu_r.iter().zip(&tape.value(out.nu_r).data) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn instrumented_count_is_four_nnz_plus_eighteen_mn_per_step() {
    let cfg = OtfsConfig::small();
    let (ch, y, nv) = setup(&cfg, 8, 10.0);
    let n = ch.dim();
    let t = 4;
    let mut tape = Tape::instrumented();
    let yv = tape.input(Tensor::column(y));
    let x = tape.input(Tensor::zeros(n, 1));
    let nu = tape.input(Tensor::filled(n, 1, 0.5));
    let mut s = amp_init_tape(&mut tape, &ch);
    for _ in 0..t {
        s = amp_step_tape(&mut tape, &ch, yv, nv, s, x, nu).s;
    }
    let c = tape.counters().unwrap();
    let expected = (4 * ch.h.nnz() as u64 + 9 * n as u64) * t as u64;
    assert_eq!(c.flops(Stage::Amp), expected);
    // with one path every row holds exactly 2(2N_o+1) real taps, as in the closed form
    let one = cfg.with_paths(1);
    let (ch1, _, _) = setup(&one, 8, 10.0);
    assert_eq!((4 * ch1.h.nnz() as u64 + 9 * n as u64) * t as u64, flops_amp(&one, t));
}

#[test]
fn amp_alone_recovers_symbols_on_an_easy_channel() {
    let cfg = OtfsConfig::small();
    let eff = build_effective_channel(&sample_channel(&cfg, 2).unwrap(), &cfg).unwrap();
    let c = Constellation::new(4).unwrap();
    let frame = generate_frame(&eff, &c, 1e-6, 1);
    let ch = RealChannel::<f64>::new(&eff);
    let y = frame.y_real();
    let mut state = amp_init(&ch, &y, 1e-6).unwrap();
    let (mut x, mut nu) = (vec![0.0; ch.dim()], vec![0.5; ch.dim()]);
    for _ in 0..30 {
        state = amp_step_vectorized(&state, &ch, &y, 1e-6, &x, &nu).unwrap();
        for i in 0..ch.dim() {
            (x[i], nu[i]) = bayes_denoise(state.r[i], state.nu_r[i], &c.real_alphabet);
        }
    }
    let target = frame.x_real();
    let wrong = x.iter().zip(&target).filter(|(a, b)| (*a - *b).abs() > 0.5).count();
    assert!(wrong * 10 < target.len(), "{wrong} of {} entries wrong", target.len());
}
