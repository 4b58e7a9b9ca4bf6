use std::sync::Arc;

use ampgnn::graph::Adjacency;
use ampgnn::nn::{Activation, DenseLayer, GruCell, Mlp, Stage, Tape, Tensor};
use ampgnn::CsrMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[test]
fn mlp_matches_hand_evaluation() {
    let l0 = DenseLayer {
        weights: Tensor::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]),
        bias: Tensor::from_vec(1, 2, vec![0.0, -1.0]),
        activation: Activation::Relu,
    };
    let l1 = DenseLayer {
        weights: Tensor::from_vec(1, 2, vec![3.0, -2.0]),
        bias: Tensor::from_vec(1, 1, vec![0.25]),
        activation: Activation::Identity,
    };
    let mlp: Mlp<f64> = Mlp::new(vec![l0, l1]).unwrap();
    // x=(1,2): hidden = relu(1-2, 0.5+4-1) = (0, 3.5); out = -7 + 0.25
    let y = mlp.forward(&Tensor::from_vec(2, 2, vec![1.0, 2.0, 0.0, 0.0])).unwrap();
    assert_eq!(y.shape(), (2, 1));
    assert!((y.at(0, 0) + 6.75).abs() < 1e-15);
    // x=0: hidden = relu(0, -1) = 0; out = 0.25
    assert!((y.at(1, 0) - 0.25).abs() < 1e-15);
}

#[test]
fn mlp_rejects_inconsistent_layers() {
    let l = |o: usize, i: usize, a| DenseLayer { weights: Tensor::zeros(o, i), bias: Tensor::zeros(1, o), activation: a };
    assert!(Mlp::<f64>::new(vec![l(3, 2, Activation::Relu), l(1, 4, Activation::Identity)]).is_err());
    assert!(Mlp::<f64>::new(vec![l(3, 2, Activation::Softmax), l(1, 3, Activation::Identity)]).is_err());
    let mlp = Mlp::<f64>::new(vec![l(3, 2, Activation::Relu)]).unwrap();
    assert!(mlp.forward(&Tensor::zeros(1, 5)).is_err());
}

#[test]
fn gru_with_zero_weights_halves_state() {
    let cell = GruCell::<f64>::zeros(4, 3);
    let s = Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]);
    let out = cell.forward(&Tensor::from_vec(1, 4, vec![0.3; 4]), &s).unwrap();
    for k in 0..3 {
        assert!((out.at(0, k) - 0.5 * s.at(0, k)).abs() < 1e-15);
    }
}

#[test]
fn gru_from_zero_state_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cell = GruCell::<f64>::zeros(3, 2);
    cell.w_xz = random(2, 3, &mut rng);
    cell.w_xh = random(2, 3, &mut rng);
    cell.w_xr = random(2, 3, &mut rng);
    cell.b_z = random(1, 2, &mut rng);
    cell.b_h = random(1, 2, &mut rng);
    let x = random(1, 3, &mut rng);
    let out = cell.forward(&x, &Tensor::zeros(1, 2)).unwrap();
    for k in 0..2 {
        let dot = |w: &Tensor<f64>| (0..3).map(|c| w.at(k, c) * x.at(0, c)).sum::<f64>();
        let z = sigmoid(dot(&cell.w_xz) + cell.b_z.at(0, k));
        let cand = (dot(&cell.w_xh) + cell.b_h.at(0, k)).tanh();
        assert!((out.at(0, k) - (1.0 - z) * cand).abs() < 1e-14);
    }
}

#[test]
fn gru_general_step_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (i, h) = (3, 2);
    let cell = GruCell {
        w_xr: random(h, i, &mut rng),
        w_xz: random(h, i, &mut rng),
        w_xh: random(h, i, &mut rng),
        w_hr: random(h, h, &mut rng),
        w_hz: random(h, h, &mut rng),
        w_hh: random(h, h, &mut rng),
        b_r: random(1, h, &mut rng),
        b_z: random(1, h, &mut rng),
        b_h: random(1, h, &mut rng),
    };
    let x = random(1, i, &mut rng);
    let s = random(1, h, &mut rng);
    let out = cell.forward(&x, &s).unwrap();
    let mv = |w: &Tensor<f64>, v: &[f64], k: usize| (0..v.len()).map(|c| w.at(k, c) * v[c]).sum::<f64>();
    let r: Vec<f64> = (0..h).map(|k| sigmoid(mv(&cell.w_xr, x.row(0), k) + mv(&cell.w_hr, s.row(0), k) + cell.b_r.at(0, k))).collect();
    let rs: Vec<f64> = (0..h).map(|k| r[k] * s.at(0, k)).collect();
    for k in 0..h {
        let z = sigmoid(mv(&cell.w_xz, x.row(0), k) + mv(&cell.w_hz, s.row(0), k) + cell.b_z.at(0, k));
        let cand = (mv(&cell.w_xh, x.row(0), k) + mv(&cell.w_hh, &rs, k) + cell.b_h.at(0, k)).tanh();
        assert!((out.at(0, k) - (z * s.at(0, k) + (1.0 - z) * cand)).abs() < 1e-14);
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(3, 4, v));
        let p = tape.softmax(x);
        for r in 0..3 {
            let row = tape.value(p).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&q| q >= 0.0));
        }
    }
}

#[test]
fn uniform_readout_gives_zero_mean_and_alphabet_variance() {
    let b = 1.0 / 10f64.sqrt();
    let support = Arc::new(vec![-3.0 * b, -b, b, 3.0 * b]);
    let mut tape = Tape::new();
    let logits = tape.input(Tensor::zeros(5, 4));
    let p = tape.softmax(logits);
    let m = tape.moments(p, &support);
    for r in 0..5 {
        assert!(tape.value(m).at(r, 0).abs() < 1e-15);
        assert!((tape.value(m).at(r, 1) - 0.5).abs() < 1e-14);
    }
}

/// Central-difference check of a scalar function of one input tensor.
fn check_grad(x0: Tensor<f64>, f: impl Fn(&mut Tape<f64>, ampgnn::nn::Var) -> ampgnn::nn::Var) {
    let eval = |x: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.param(0, x.clone());
        let out = f(&mut tape, v);
        tape.value(out).data.iter().sum::<f64>()
    };
    let mut tape = Tape::new();
    let v = tape.param(0, x0.clone());
    let out = f(&mut tape, v);
    let shape = tape.value(out).shape();
    let grads = tape.backward(out, Tensor::filled(shape.0, shape.1, 1.0));
    let g = grads.wrt(v).expect("gradient of the parameter");
    let h = 1e-6;
    for k in 0..x0.len() {
        let mut xp = x0.clone();
        xp.data[k] += h;
        let mut xm = x0.clone();
        xm.data[k] -= h;
        let num = (eval(&xp) - eval(&xm)) / (2.0 * h);
        let scale = g.data[k].abs().max(num.abs()).max(1.0);
        assert!((g.data[k] - num).abs() / scale < 1e-7, "entry {k}: analytic {} numeric {num}", g.data[k]);
    }
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(4, 3, &mut rng);
    check_grad(x.clone(), |t, v| t.sigmoid(v));
    check_grad(x.clone(), |t, v| t.tanh(v));
    check_grad(x.clone(), |t, v| {
        let s = t.softmax(v);
        let w = t.input(Tensor::from_vec(4, 3, (0..12).map(|k| k as f64).collect()));
        t.mul(s, w)
    });
    check_grad(x.map(|v| v.abs() + 0.5), |t, v| t.recip(v, 1e-12));
    check_grad(x.clone(), |t, v| {
        let a = t.one_minus(v);
        let b = t.mul(a, v);
        t.scale(b, 3.0)
    });
}

#[test]
fn structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random(2, 3, &mut rng);
    let b = random(1, 2, &mut rng);
    let x = random(5, 3, &mut rng);
    check_grad(x.clone(), |t, v| {
        let wv = t.input(w.clone());
        let bv = t.input(b.clone());
        let y = t.linear(v, wv, Some(bv));
        t.tanh(y)
    });
    let xc = x.clone();
    check_grad(w.clone(), move |t, wv| {
        let xv = t.input(xc.clone());
        let y = t.linear(xv, wv, None);
        t.sigmoid(y)
    });
    let mat = Arc::new(CsrMatrix::<f64>::from_triplets(4, 5, [(0, 1, 2.0), (1, 0, -1.0), (1, 4, 0.5), (3, 3, 1.5), (3, 1, -0.25)]));
    check_grad(x.clone(), move |t, v| {
        let y = t.spmm(&mat, v);
        t.tanh(y)
    });
    check_grad(x.clone(), |t, v| {
        let c0 = t.column(v, 0);
        let c2 = t.column(v, 2);
        let both = t.concat(&[c2, v, c0]);
        t.sigmoid(both)
    });
    let support = Arc::new(vec![-1.0, -0.2, 0.4]);
    check_grad(x, move |t, v| {
        let p = t.softmax(v);
        let m = t.moments(p, &support);
        t.mul(m, m)
    });
}

#[test]
fn graph_sum_gradients_and_layout() {
    let adj = Arc::new(Adjacency::from_lists(vec![vec![1, 2], vec![0], vec![0], vec![]]));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = random(4, 2, &mut rng);
    let e = random(adj.edges(), 1, &mut rng);
    let mut tape = Tape::new();
    let uv = tape.input(u.clone());
    let ev = tape.input(e.clone());
    let out = tape.graph_sum(&adj, uv, ev);
    let o = tape.value(out);
    assert_eq!(o.shape(), (4, 5));
    // node 0 has two neighbors: [2·u_0, u_1+u_2, e_01+e_02]
    for c in 0..2 {
        assert!((o.at(0, c) - 2.0 * u.at(0, c)).abs() < 1e-15);
        assert!((o.at(0, 2 + c) - u.at(1, c) - u.at(2, c)).abs() < 1e-15);
    }
    assert!((o.at(0, 4) - e.data[0] - e.data[1]).abs() < 1e-15);
    assert!(o.row(3).iter().all(|&v| v == 0.0));
    let (a2, e2) = (adj.clone(), e.clone());
    check_grad(u, move |t, v| {
        let ev = t.input(e2.clone());
        let s = t.graph_sum(&a2, v, ev);
        t.tanh(s)
    });
}

#[test]
fn linear_layers_count_rows_times_in_times_out() {
    let mut tape = Tape::<f64>::instrumented();
    tape.set_stage(Stage::MlpTheta);
    let x = tape.input(Tensor::zeros(10, 17));
    let w = tape.input(Tensor::zeros(16, 17));
    let b = tape.input(Tensor::zeros(1, 16));
    tape.linear(x, w, Some(b));
    tape.set_stage(Stage::Readout);
    let w2 = tape.input(Tensor::zeros(4, 16));
    let h = tape.input(Tensor::zeros(10, 16));
    tape.linear(h, w2, None);
    let c = tape.counters().unwrap();
    assert_eq!(c.flops(Stage::MlpTheta), 10 * 17 * 16);
    assert_eq!(c.flops(Stage::Readout), 10 * 16 * 4);
    assert_eq!(c.flops(Stage::Aggregation), 0);
}
