//! Learnable parameter set of the detector and its JSON checkpoint format.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::nn::layers::{Activation, GruVars, LayerVars};
use crate::nn::tape::Tape;
use crate::nn::tensor::Tensor;
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnHyper {
    #[serde(rename = "N_u")]
    pub n_u: usize,
    #[serde(rename = "N_h")]
    pub n_h: usize,
    #[serde(rename = "N_h1")]
    pub n_h1: usize,
    #[serde(rename = "N_h2")]
    pub n_h2: usize,
    pub qr_size: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "L")]
    pub l: usize,
}

impl GnnHyper {
    pub fn standard(qr_size: usize) -> Self {
        Self { n_u: 8, n_h: 12, n_h1: 16, n_h2: 12, qr_size, t: 15, l: 2 }
    }

    pub fn with_iterations(mut self, t: usize, l: usize) -> Self {
        self.t = t;
        self.l = l;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_u, self.n_h, self.n_h1, self.n_h2, self.qr_size, self.t, self.l];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("all hyperparameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub is_bias: bool,
}

/// Ordered parameter names and shapes for a set of hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
}

pub const THETA_ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Relu, Activation::Identity];
pub const OMEGA_ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Relu, Activation::Softmax];

impl ParamLayout {
    pub fn new(h: &GnnHyper) -> Self {
        let mut specs = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize, is_bias: bool| {
            specs.push(ParamSpec { name, rows, cols, is_bias });
        };
        push("W1".into(), h.n_u, 2, false);
        push("b1".into(), 1, h.n_u, true);
        let theta = [(h.n_h1, 2 * h.n_u + 1), (h.n_h2, h.n_h1), (h.n_u, h.n_h2)];
        for (k, &(o, i)) in theta.iter().enumerate() {
            push(format!("theta.W{k}"), o, i, false);
            push(format!("theta.b{k}"), 1, o, true);
        }
        let xin = h.n_u + 2;
        for g in ["xr", "xz", "xh"] {
            push(format!("phi.W_{g}"), h.n_h, xin, false);
        }
        for g in ["hr", "hz", "hh"] {
            push(format!("phi.W_{g}"), h.n_h, h.n_h, false);
        }
        for g in ["r", "z", "h"] {
            push(format!("phi.b_{g}"), 1, h.n_h, true);
        }
        push("W2".into(), h.n_u, h.n_h, false);
        push("b2".into(), 1, h.n_u, true);
        let omega = [(h.n_h1, h.n_u), (h.n_h2, h.n_h1), (h.qr_size, h.n_h2)];
        for (k, &(o, i)) in omega.iter().enumerate() {
            push(format!("omega.W{k}"), o, i, false);
            push(format!("omega.b{k}"), 1, o, true);
        }
        Self { specs }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn total_entries(&self) -> usize {
        self.specs.iter().map(|s| s.rows * s.cols).sum()
    }
}

// Fixed positions in `ParamLayout::new` order.
const W1: usize = 0;
const B1: usize = 1;
const THETA: usize = 2;
const PHI: usize = 8;
const W2: usize = 17;
const B2: usize = 18;
const OMEGA: usize = 19;

/// Every learnable tensor of the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams<T> {
    pub hyper: GnnHyper,
    pub layout: ParamLayout,
    pub tensors: Vec<Tensor<T>>,
    /// Free-form provenance stored alongside the tensors.
    pub meta: Value,
}

/// Tape handles of a bound parameter set.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub w1: crate::nn::Var,
    pub b1: crate::nn::Var,
    pub theta: Vec<LayerVars>,
    pub phi: GruVars,
    pub w2: crate::nn::Var,
    pub b2: crate::nn::Var,
    pub omega: Vec<LayerVars>,
}

/// `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::lit(rng.random_range(-a..a))).collect();
    Tensor::from_vec(rows, cols, data)
}

impl<T: Scalar> GnnParams<T> {
    pub fn init(hyper: GnnHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let layout = ParamLayout::new(&hyper);
        let mut rng = rng_from_seed(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|s| if s.is_bias { Tensor::zeros(s.rows, s.cols) } else { glorot_uniform(s.rows, s.cols, &mut rng) })
            .collect();
        Ok(Self { hyper, layout, tensors, meta: default_meta(seed) })
    }

    pub fn zeros(hyper: GnnHyper) -> Self {
        let layout = ParamLayout::new(&hyper);
        let tensors = layout.specs.iter().map(|s| Tensor::zeros(s.rows, s.cols)).collect();
        Self { hyper, layout, tensors, meta: Value::Null }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.layout.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.layout.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Flattened view of every entry, in layout order.
    pub fn flat(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[T]) {
        let mut it = values.iter().copied();
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = it.next().expect("flat parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "flat parameter vector too long");
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        let vars: Vec<_> = self.tensors.iter().enumerate().map(|(i, t)| tape.param(i, t.clone())).collect();
        let layer = |base: usize, acts: [Activation; 3]| {
            (0..3).map(|k| LayerVars { w: vars[base + 2 * k], b: vars[base + 2 * k + 1], activation: acts[k] }).collect()
        };
        BoundParams {
            w1: vars[W1],
            b1: vars[B1],
            theta: layer(THETA, THETA_ACTIVATIONS),
            phi: GruVars {
                w_xr: vars[PHI],
                w_xz: vars[PHI + 1],
                w_xh: vars[PHI + 2],
                w_hr: vars[PHI + 3],
                w_hz: vars[PHI + 4],
                w_hh: vars[PHI + 5],
                b_r: vars[PHI + 6],
                b_z: vars[PHI + 7],
                b_h: vars[PHI + 8],
            },
            w2: vars[W2],
            b2: vars[B2],
            omega: layer(OMEGA, OMEGA_ACTIVATIONS),
        }
    }

    pub fn cast<U: Scalar>(&self) -> GnnParams<U> {
        GnnParams {
            hyper: self.hyper,
            layout: self.layout.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn to_json(&self) -> Value {
        let mut params = Map::new();
        for (s, t) in self.layout.specs.iter().zip(&self.tensors) {
            let v = if s.is_bias {
                json!(t.data.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>())
            } else {
                json!((0..t.rows)
                    .map(|r| t.row(r).iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>())
                    .collect::<Vec<_>>())
            };
            params.insert(s.name.clone(), v);
        }
        json!({ "hyper": self.hyper, "params": params, "meta": self.meta })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let hyper: GnnHyper = serde_json::from_value(
            v.get("hyper").cloned().ok_or_else(|| Error::Checkpoint("missing \"hyper\"".into()))?,
        )?;
        hyper.validate()?;
        let layout = ParamLayout::new(&hyper);
        let params = v
            .get("params")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::Checkpoint("missing \"params\" object".into()))?;
        let mut tensors = Vec::with_capacity(layout.len());
        for s in &layout.specs {
            let entry = params.get(&s.name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", s.name)))?;
            let bad = || Error::Checkpoint(format!("parameter {} does not have shape {}×{}", s.name, s.rows, s.cols));
            let mut data = Vec::with_capacity(s.rows * s.cols);
            if s.is_bias {
                let arr = entry.as_array().ok_or_else(bad)?;
                for x in arr {
                    data.push(T::lit(x.as_f64().ok_or_else(bad)?));
                }
            } else {
                let rows = entry.as_array().ok_or_else(bad)?;
                if rows.len() != s.rows {
                    return Err(bad());
                }
                for row in rows {
                    let row = row.as_array().ok_or_else(bad)?;
                    if row.len() != s.cols {
                        return Err(bad());
                    }
                    for x in row {
                        data.push(T::lit(x.as_f64().ok_or_else(bad)?));
                    }
                }
            }
            if data.len() != s.rows * s.cols {
                return Err(bad());
            }
            tensors.push(Tensor::from_vec(s.rows, s.cols, data));
        }
        Ok(Self { hyper, layout, tensors, meta: v.get("meta").cloned().unwrap_or(Value::Null) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}

fn default_meta(seed: u64) -> Value {
    json!({
        "init": "glorot_uniform weights, zero biases",
        "init_seed": seed,
        "theta_activations": THETA_ACTIVATIONS,
        "omega_activations": OMEGA_ACTIVATIONS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_positions_match_constants() {
        let l = ParamLayout::new(&GnnHyper::standard(2));
        assert_eq!(l.index_of("W1"), Some(W1));
        assert_eq!(l.index_of("b1"), Some(B1));
        assert_eq!(l.index_of("theta.W0"), Some(THETA));
        assert_eq!(l.index_of("phi.W_xr"), Some(PHI));
        assert_eq!(l.index_of("phi.b_h"), Some(PHI + 8));
        assert_eq!(l.index_of("W2"), Some(W2));
        assert_eq!(l.index_of("b2"), Some(B2));
        assert_eq!(l.index_of("omega.W0"), Some(OMEGA));
        assert_eq!(l.len(), OMEGA + 6);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = GnnParams::<f64>::init(GnnHyper::standard(4), 3).unwrap();
        let back = GnnParams::<f64>::from_json(&p.to_json()).unwrap();
        assert_eq!(p.tensors, back.tensors);
        assert_eq!(p.hyper, back.hyper);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let p = GnnParams::<f64>::init(GnnHyper::standard(2), 1).unwrap();
        for (s, t) in p.layout.specs.iter().zip(&p.tensors) {
            if s.is_bias {
                assert!(t.data.iter().all(|&v| v == 0.0));
            } else {
                let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                assert!(t.data.iter().all(|v| v.abs() <= a), "{}", s.name);
            }
        }
    }

    #[test]
    fn malformed_checkpoint_is_rejected() {
        let p = GnnParams::<f64>::init(GnnHyper::standard(2), 1).unwrap();
        let mut v = p.to_json();
        v["params"]["W1"] = json!([[1.0]]);
        assert!(matches!(GnnParams::<f64>::from_json(&v), Err(Error::Checkpoint(_))));
        assert!(GnnParams::<f64>::from_json(&json!({})).is_err());
    }
}
