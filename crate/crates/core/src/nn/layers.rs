use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Softmax,
}

/// Weights `out × in`, bias `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

/// Tape handles of one dense layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w: Var,
    pub b: Var,
    pub activation: Activation,
}

pub fn mlp_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, layers: &[LayerVars]) -> Var {
    layers.iter().fold(x, |h, l| {
        let a = tape.linear(h, l.w, Some(l.b));
        match l.activation {
            Activation::Identity => a,
            Activation::Relu => tape.relu(a),
            Activation::Softmax => tape.softmax(a),
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weights.rows) {
                return Err(Error::Shape(format!("layer {i}: bias {:?} vs weights {:?}", l.bias.shape(), l.weights.shape())));
            }
            if i > 0 && layers[i - 1].weights.rows != l.weights.cols {
                return Err(Error::Shape(format!("layer {i}: input width {} after output {}", l.weights.cols, layers[i - 1].weights.rows)));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::Shape(format!("layer {i}: softmax only allowed on the final layer")));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.cols)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows)
    }

    /// Puts every tensor on the tape as parameters `first_id, first_id + 1, …` (weights then bias).
    pub fn bind(&self, tape: &mut Tape<T>, first_id: usize) -> Vec<LayerVars> {
        self.layers
            .iter()
            .enumerate()
            .map(|(k, l)| LayerVars {
                w: tape.param(first_id + 2 * k, l.weights.clone()),
                b: tape.param(first_id + 2 * k + 1, l.bias.clone()),
                activation: l.activation,
            })
            .collect()
    }

    /// Evaluates a batch `x` of shape `n × in`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.cols != self.input_dim() {
            return Err(Error::Shape(format!("mlp input width {} != {}", x.cols, self.input_dim())));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, 0);
        let xi = tape.input(x.clone());
        let y = mlp_tape(&mut tape, xi, &vars);
        Ok(tape.value(y).clone())
    }
}

/// Gated recurrent unit with separate input and hidden weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell<T> {
    pub w_xr: Tensor<T>,
    pub w_xz: Tensor<T>,
    pub w_xh: Tensor<T>,
    pub w_hr: Tensor<T>,
    pub w_hz: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b_r: Tensor<T>,
    pub b_z: Tensor<T>,
    pub b_h: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_xr: Var,
    pub w_xz: Var,
    pub w_xh: Var,
    pub w_hr: Var,
    pub w_hz: Var,
    pub w_hh: Var,
    pub b_r: Var,
    pub b_z: Var,
    pub b_h: Var,
}

/// One GRU update for every row of `x` (`n × in`) and `s` (`n × hidden`).
pub fn gru_tape<T: Scalar>(tape: &mut Tape<T>, g: &GruVars, x: Var, s: Var) -> Var {
    let gate = |tape: &mut Tape<T>, wx: Var, wh: Var, b: Var, h: Var| {
        let a = tape.linear(x, wx, None);
        let c = tape.linear(h, wh, None);
        let sum = tape.add(a, c);
        tape.add_bias(sum, b)
    };
    let r_pre = gate(tape, g.w_xr, g.w_hr, g.b_r, s);
    let r = tape.sigmoid(r_pre);
    let z_pre = gate(tape, g.w_xz, g.w_hz, g.b_z, s);
    let z = tape.sigmoid(z_pre);
    let rs = tape.mul(r, s);
    let h_pre = gate(tape, g.w_xh, g.w_hh, g.b_h, rs);
    let cand = tape.tanh(h_pre);
    let keep = tape.mul(z, s);
    let one_minus_z = tape.one_minus(z);
    let fresh = tape.mul(one_minus_z, cand);
    tape.add(keep, fresh)
}

impl<T: Scalar> GruCell<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let wx = Tensor::zeros(hidden, input);
        let wh = Tensor::zeros(hidden, hidden);
        let b = Tensor::zeros(1, hidden);
        Self {
            w_xr: wx.clone(),
            w_xz: wx.clone(),
            w_xh: wx,
            w_hr: wh.clone(),
            w_hz: wh.clone(),
            w_hh: wh,
            b_r: b.clone(),
            b_z: b.clone(),
            b_h: b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.rows
    }

    pub fn input(&self) -> usize {
        self.w_xh.cols
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [&self.w_xr, &self.w_xz, &self.w_xh, &self.w_hr, &self.w_hz, &self.w_hh, &self.b_r, &self.b_z, &self.b_h]
    }

    /// Binds the nine tensors as parameters `first_id..first_id + 9` in [`GruCell::tensors`] order.
    pub fn bind(&self, tape: &mut Tape<T>, first_id: usize) -> GruVars {
        let t = self.tensors();
        let mut p = |k: usize| tape.param(first_id + k, t[k].clone());
        GruVars {
            w_xr: p(0),
            w_xz: p(1),
            w_xh: p(2),
            w_hr: p(3),
            w_hz: p(4),
            w_hh: p(5),
            b_r: p(6),
            b_z: p(7),
            b_h: p(8),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        if x.cols != self.input() || s.cols != self.hidden() || x.rows != s.rows {
            return Err(Error::Shape(format!(
                "gru expects x n×{} and s n×{}, got {:?} and {:?}",
                self.input(),
                self.hidden(),
                x.shape(),
                s.shape()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, 0);
        let xi = tape.input(x.clone());
        let si = tape.input(s.clone());
        let out = gru_tape(&mut tape, &vars, xi, si);
        Ok(tape.value(out).clone())
    }
}
