//! End-to-end training of the detector parameters by unrolled backpropagation.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channel::{build_effective_channel, sample_channel_with, EffectiveChannel, OtfsConfig};
use crate::detect::{unrolled_forward, DetectorConfig, Prepared, UnrollOptions, Variant};
use crate::error::{Error, Result};
use crate::frames::{db_to_linear, generate_frame_with, Constellation, Frame};
use crate::nn::{GnnHyper, GnnParams, Tape, Tensor};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::scalar::Scalar;

/// Consecutive non-finite steps tolerated before training aborts.
pub const MAX_BAD_STEPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Training noise variance in dB (`−15` means `σ² = 10^{−1.5}`).
    pub sigma_train_sq_db: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "L")]
    pub l: usize,
    /// Stop gradients at the AMP outputs.
    pub detach_amp: bool,
    /// Rescale the batch gradient to at most this norm.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(Variant::AmpGnn)
    }
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            sigma_train_sq_db: -15.0,
            batch_size: 16,
            steps: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            t: 5,
            l: 2,
            detach_amp: false,
            clip_grad_norm: None,
        }
    }

    pub fn noise_var(&self) -> f64 {
        db_to_linear(self.sigma_train_sq_db)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.variant.is_learned() {
            return Err(Error::InvalidConfig(format!("{} has no learnable parameters", self.variant)));
        }
        if self.batch_size == 0 || self.t == 0 || self.l == 0 {
            return Err(Error::InvalidConfig("batch size, T and L must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.beta1 >= 0.0 && self.beta1 < 1.0) || !(self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return Err(Error::InvalidConfig("learning rate must be nonnegative and decay rates in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !self.sigma_train_sq_db.is_finite() {
            return Err(Error::InvalidConfig("epsilon must be positive and the training noise finite".into()));
        }
        Ok(())
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig::new(self.variant, self.t, self.l)
    }
}

/// One training example: a fresh channel and a frame sent over it.
#[derive(Debug, Clone)]
pub struct Sample {
    pub channel: EffectiveChannel,
    pub frame: Frame,
}

pub fn gen_training_batch<R: Rng + ?Sized>(
    cfg: &OtfsConfig,
    tc: &TrainConfig,
    constellation: &Constellation,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..tc.batch_size)
        .map(|_| {
            let real = sample_channel_with(cfg, rng);
            let channel = build_effective_channel(&real, cfg)?;
            let frame = generate_frame_with(&channel, constellation, tc.noise_var(), rng);
            Ok(Sample { channel, frame })
        })
        .collect()
}

fn sample_loss_grad<T: Scalar>(
    s: &Sample,
    params: &GnnParams<T>,
    tc: &TrainConfig,
    support: &Arc<Vec<T>>,
    want_grad: bool,
) -> Result<(f64, Option<Vec<Tensor<T>>>)> {
    let prep = Prepared::<T>::new(&s.channel, tc.variant);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let y = tape.input(Tensor::column(s.frame.y_real().into_iter().map(T::lit).collect()));
    let opts = UnrollOptions { detach_amp: tc.detach_amp };
    let out = unrolled_forward(&mut tape, &prep, &bound, &tc.detector(), y, T::lit(s.frame.noise_var), support, opts)?;
    let target = Arc::new(s.frame.x_real().into_iter().map(T::lit).collect::<Vec<T>>());
    let loss = tape.squared_error(out.x_hat, &target);
    let value = tape.value(loss).data[0].to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    if !want_grad {
        return Ok((value, None));
    }
    let grads = tape.backward(loss, Tensor::scalar(T::one()));
    let mut acc = params.zeros_like();
    grads.accumulate_params(&mut acc);
    Ok((value, Some(acc)))
}

fn support_of<T: Scalar>(constellation: &Constellation) -> Arc<Vec<T>> {
    Arc::new(constellation.real_alphabet.iter().map(|&v| T::lit(v)).collect())
}

/// Mean over the batch of `‖x − x̂^{(T)}‖²` on the soft output.
pub fn loss<T: Scalar>(batch: &[Sample], params: &GnnParams<T>, tc: &TrainConfig, constellation: &Constellation) -> Result<f64> {
    let support = support_of(constellation);
    let per: Vec<f64> = batch
        .par_iter()
        .map(|s| sample_loss_grad(s, params, tc, &support, false).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / batch.len() as f64)
}

/// Batch loss and its gradient with respect to every parameter tensor.
///
/// Per-sample gradients are summed in batch order, so the result does not
/// depend on how samples were scheduled.
pub fn loss_and_grad<T: Scalar>(
    batch: &[Sample],
    params: &GnnParams<T>,
    tc: &TrainConfig,
    constellation: &Constellation,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let support = support_of(constellation);
    let per: Vec<(f64, Option<Vec<Tensor<T>>>)> =
        batch.par_iter().map(|s| sample_loss_grad(s, params, tc, &support, true)).collect::<Result<_>>()?;
    let scale = T::one() / T::lit(batch.len() as f64);
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in per {
        loss += l;
        for (acc, g) in total.iter_mut().zip(g.expect("gradient requested")) {
            acc.add_assign(&g);
        }
    }
    for t in &mut total {
        for v in &mut t.data {
            *v *= scale;
        }
    }
    Ok((loss / batch.len() as f64, total))
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &GnnParams<T>, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { lr, beta1, beta2, epsilon, m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn update(&mut self, params: &mut GnnParams<T>, grads: &[Tensor<T>]) {
        self.step += 1;
        if self.lr == 0.0 {
            return;
        }
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.step));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.epsilon));
        for (k, g) in grads.iter().enumerate() {
            let (m, v, p) = (&mut self.m[k].data, &mut self.v[k].data, &mut params.tensors[k].data);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: GnnParams<T>,
    pub curve: Vec<CurvePoint>,
    pub skipped_steps: usize,
}

/// Trains from a fresh initialization.
pub fn train<T: Scalar>(tc: &TrainConfig, otfs: &OtfsConfig) -> Result<TrainOutcome<T>> {
    let constellation = Constellation::new(otfs.qam_order)?;
    let hyper = GnnHyper::standard(constellation.real_alphabet.len()).with_iterations(tc.t, tc.l);
    let init = GnnParams::init(hyper, derive_seed(tc.seed, &[tag("init")]))?;
    train_from(init, tc, otfs)
}

/// Continues training from `params`.
pub fn train_from<T: Scalar>(mut params: GnnParams<T>, tc: &TrainConfig, otfs: &OtfsConfig) -> Result<TrainOutcome<T>> {
    tc.validate()?;
    otfs.validate()?;
    let constellation = Constellation::new(otfs.qam_order)?;
    if params.hyper.qr_size != constellation.real_alphabet.len() {
        return Err(Error::InvalidConfig("checkpoint readout size does not match the constellation".into()));
    }
    let mut opt = Adam::new(&params, tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon);
    let mut curve = Vec::with_capacity(tc.steps);
    let mut bad_run = 0;
    let mut skipped = 0;
    for step in 0..tc.steps {
        let mut rng = rng_from_seed(derive_seed(tc.seed, &[tag("batch"), step as u64]));
        let batch = gen_training_batch(otfs, tc, &constellation, &mut rng)?;
        let (loss, mut grads) = match loss_and_grad(&batch, &params, tc, &constellation) {
            Ok(v) => v,
            Err(Error::Diverged { .. }) | Err(Error::NonFinite(_)) => {
                skipped += 1;
                bad_run += 1;
                if bad_run >= MAX_BAD_STEPS {
                    return Err(Error::NonFinite("training loss"));
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let norm = grads.iter().map(|g| g.norm_sqr().to_f64_lossy()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            skipped += 1;
            bad_run += 1;
            if bad_run >= MAX_BAD_STEPS {
                return Err(Error::NonFinite("training gradient"));
            }
            continue;
        }
        bad_run = 0;
        if let Some(max) = tc.clip_grad_norm {
            if norm > max {
                let s = T::lit(max / norm);
                grads.iter_mut().flat_map(|g| g.data.iter_mut()).for_each(|v| *v *= s);
            }
        }
        opt.update(&mut params, &grads);
        curve.push(CurvePoint { step, loss, grad_norm: norm });
    }
    params.meta = json!({
        "init": params.meta.get("init").cloned().unwrap_or_default(),
        "theta_activations": crate::nn::params::THETA_ACTIVATIONS,
        "omega_activations": crate::nn::params::OMEGA_ACTIVATIONS,
        "optimizer": "adam",
        "loss": "mean over batch of squared error of the soft output",
        "train": tc,
        "otfs": otfs,
        "skipped_steps": skipped,
    });
    Ok(TrainOutcome { params, curve, skipped_steps: skipped })
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut w: W) -> Result<()> {
    writeln!(w, "step,loss,grad_norm")?;
    for p in curve {
        writeln!(w, "{},{},{}", p.step, p.loss, p.grad_norm)?;
    }
    Ok(())
}

/// Soft outputs `x̂^{(T)}` (real lift) of every sample, in batch order.
pub fn soft_outputs<T: Scalar>(
    batch: &[Sample],
    params: &GnnParams<T>,
    tc: &TrainConfig,
    constellation: &Constellation,
) -> Result<Vec<Vec<f64>>> {
    let support = support_of(constellation);
    batch
        .par_iter()
        .map(|s| {
            let prep = Prepared::<T>::new(&s.channel, tc.variant);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let y = tape.input(Tensor::column(s.frame.y_real().into_iter().map(T::lit).collect()));
            let out = unrolled_forward(
                &mut tape,
                &prep,
                &bound,
                &tc.detector(),
                y,
                T::lit(s.frame.noise_var),
                &support,
                UnrollOptions { detach_amp: tc.detach_amp },
            )?;
            Ok(tape.value(out.x_hat).data.iter().map(|v| v.to_f64_lossy()).collect())
        })
        .collect()
}

/// Outcome of a central-difference comparison against the analytic gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub entries: usize,
    pub worst_relative_error: f64,
    pub worst_parameter: String,
    pub analytic: f64,
    pub numeric: f64,
    /// Magnitude below which entries are compared on this absolute scale.
    pub floor: f64,
    /// `‖a − n‖ / ‖a‖` over all entries.
    pub normwise_relative_error: f64,
}

/// Checks every parameter entry with central differences of step `h`.
///
/// The loss difference is formed as `Σ (x̂⁻ − x̂⁺)(2x − x̂⁺ − x̂⁻)`, which equals
/// `L(θ+h) − L(θ−h)` without cancelling the large `Σ x²` term. Relative error
/// is `|a − n| / max(|a|, |n|, floor)` with `floor = floor_ratio · max_k |a_k|`.
pub fn gradient_check(
    batch: &[Sample],
    params: &GnnParams<f64>,
    tc: &TrainConfig,
    constellation: &Constellation,
    h: f64,
    floor_ratio: f64,
) -> Result<GradCheck> {
    let (_, grads) = loss_and_grad(batch, params, tc, constellation)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data.iter().copied()).collect();
    let names: Vec<&str> =
        params.layout.specs.iter().flat_map(|s| std::iter::repeat_n(s.name.as_str(), s.rows * s.cols)).collect();
    let floor = floor_ratio * analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let targets: Vec<Vec<f64>> = batch.iter().map(|s| s.frame.x_real()).collect();
    let base = params.flat();
    let mut report =
        GradCheck {
        entries: base.len(),
        worst_relative_error: 0.0,
        worst_parameter: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        floor,
        normwise_relative_error: 0.0,
    };
    let (mut err_sq, mut ref_sq) = (0.0, 0.0);
    let mut probe = params.clone();
    let mut v = base.clone();
    for k in 0..base.len() {
        v[k] = base[k] + h;
        probe.set_flat(&v);
        let up = soft_outputs(batch, &probe, tc, constellation)?;
        v[k] = base[k] - h;
        probe.set_flat(&v);
        let down = soft_outputs(batch, &probe, tc, constellation)?;
        v[k] = base[k];
        let mut diff = 0.0;
        for ((u, d), x) in up.iter().zip(&down).zip(&targets) {
            for i in 0..x.len() {
                diff += (d[i] - u[i]) * (2.0 * x[i] - u[i] - d[i]);
            }
        }
        let numeric = diff / batch.len() as f64 / (2.0 * h);
        let a = analytic[k];
        err_sq += (a - numeric) * (a - numeric);
        ref_sq += a * a;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if rel > report.worst_relative_error || report.worst_parameter.is_empty() {
            report.worst_relative_error = rel;
            report.worst_parameter = names[k].to_string();
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.normwise_relative_error = if ref_sq > 0.0 { (err_sq / ref_sq).sqrt() } else { err_sq.sqrt() };
    Ok(report)
}
