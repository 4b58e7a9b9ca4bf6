//! Approximate message passing over the lifted real channel.
//!
//! Two equivalent forms are provided: the per-entry recursion over the index
//! sets `I(j)` and `L(i)`, and the matrix form driven by the residual
//! `s = ν_s ⊙ (y − z)`. A third, tape-recorded form of the matrix recursion
//! lets gradients flow through AMP during training.

use crate::error::{Error, Result};
use crate::nn::{Stage, Tape, Tensor, Var};
use crate::real::RealChannel;
use crate::scalar::Scalar;

/// Lower clamp for every AMP denominator.
pub const AMP_EPS: f64 = 1e-12;

/// Prior variance used before the first detector estimate.
pub const INITIAL_VARIANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState<T> {
    pub z: Vec<T>,
    pub nu_z: Vec<T>,
    pub s: Vec<T>,
    pub nu_s: Vec<T>,
    pub r: Vec<T>,
    pub nu_r: Vec<T>,
    /// Number of completed steps.
    pub iteration: usize,
}

impl<T: Scalar> AmpState<T> {
    fn check_finite(&self) -> Result<()> {
        let all = [&self.z, &self.nu_z, &self.s, &self.nu_s, &self.r, &self.nu_r];
        if all.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            Ok(())
        } else {
            Err(Error::Diverged { iteration: self.iteration })
        }
    }
}

fn check_len<T>(what: &str, v: &[T], n: usize) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what} has length {} but the channel needs {n}", v.len())))
    }
}

/// `x̂ = 0`, `ν̂ = 0.5`, `z = y`, `ν_z = |H|^{∘2} ν̂`, `s = 0`.
pub fn amp_init<T: Scalar>(ch: &RealChannel<T>, y: &[T], noise_var: T) -> Result<AmpState<T>> {
    let n = ch.dim();
    check_len("y", y, n)?;
    let half = noise_var / T::lit(2.0);
    let eps = T::lit(AMP_EPS);
    let nu_z = ch.h_sq.mul_vec(&vec![T::lit(INITIAL_VARIANCE); n]);
    let nu_s: Vec<T> = nu_z.iter().map(|&v| T::one() / (v + half).max(eps)).collect();
    Ok(AmpState {
        z: y.to_vec(),
        nu_z,
        s: vec![T::zero(); n],
        nu_s,
        r: vec![T::zero(); n],
        nu_r: vec![T::zero(); n],
        iteration: 0,
    })
}

fn check_step_inputs<T: Scalar>(ch: &RealChannel<T>, y: &[T], x_hat: &[T], nu_x: &[T]) -> Result<()> {
    let n = ch.dim();
    check_len("y", y, n)?;
    check_len("x_hat", x_hat, n)?;
    check_len("nu_x", nu_x, n)
}

/// One AMP iteration evaluated entry by entry over the index sets.
///
/// The column sums use the `(j, i)` entry of the real channel.
pub fn amp_step<T: Scalar>(
    state: &AmpState<T>,
    ch: &RealChannel<T>,
    y: &[T],
    noise_var: T,
    x_hat: &[T],
    nu_x: &[T],
) -> Result<AmpState<T>> {
    check_step_inputs(ch, y, x_hat, nu_x)?;
    let n = ch.dim();
    let half = noise_var / T::lit(2.0);
    let eps = T::lit(AMP_EPS);
    let h = |j: usize, i: usize| ch.h.get(j, i).unwrap_or_else(T::zero);

    let mut nu_z = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    for j in 0..n {
        let mut v = T::zero();
        let mut m = T::zero();
        for &i in &ch.idx_in[j] {
            let hji = h(j, i);
            v += hji * hji * nu_x[i];
            m += hji * x_hat[i];
        }
        nu_z[j] = v;
        let onsager = v * (y[j] - state.z[j]) / (state.nu_z[j] + half).max(eps);
        z[j] = m - onsager;
    }
    let nu_s: Vec<T> = nu_z.iter().map(|&v| T::one() / (v + half).max(eps)).collect();
    let s: Vec<T> = (0..n).map(|j| nu_s[j] * (y[j] - z[j])).collect();

    let mut nu_r = vec![T::zero(); n];
    let mut r = vec![T::zero(); n];
    for i in 0..n {
        let mut prec = T::zero();
        let mut corr = T::zero();
        for &j in &ch.idx_out[i] {
            let hji = h(j, i);
            let denom = (nu_z[j] + half).max(eps);
            prec += hji * hji / denom;
            corr += hji * (y[j] - z[j]) / denom;
        }
        nu_r[i] = T::one() / prec.max(eps);
        r[i] = x_hat[i] + nu_r[i] * corr;
    }
    let out = AmpState { z, nu_z, s, nu_s, r, nu_r, iteration: state.iteration + 1 };
    out.check_finite()?;
    Ok(out)
}

/// One AMP iteration in matrix form.
pub fn amp_step_vectorized<T: Scalar>(
    state: &AmpState<T>,
    ch: &RealChannel<T>,
    y: &[T],
    noise_var: T,
    x_hat: &[T],
    nu_x: &[T],
) -> Result<AmpState<T>> {
    check_step_inputs(ch, y, x_hat, nu_x)?;
    let half = noise_var / T::lit(2.0);
    let eps = T::lit(AMP_EPS);
    let nu_z = ch.h_sq.mul_vec(nu_x);
    let hx = ch.h.mul_vec(x_hat);
    let z: Vec<T> = hx.iter().zip(&nu_z).zip(&state.s).map(|((&a, &v), &s)| a - v * s).collect();
    let nu_s: Vec<T> = nu_z.iter().map(|&v| T::one() / (v + half).max(eps)).collect();
    let s: Vec<T> = y.iter().zip(&z).zip(&nu_s).map(|((&yj, &zj), &w)| w * (yj - zj)).collect();
    let nu_r: Vec<T> = ch.ht_sq.mul_vec(&nu_s).into_iter().map(|p| T::one() / p.max(eps)).collect();
    let hts = ch.ht.mul_vec(&s);
    let r: Vec<T> = x_hat.iter().zip(&nu_r).zip(&hts).map(|((&x, &v), &c)| x + v * c).collect();
    let out = AmpState { z, nu_z, s, nu_s, r, nu_r, iteration: state.iteration + 1 };
    out.check_finite()?;
    Ok(out)
}

/// Tape handles carried between recorded AMP iterations.
#[derive(Debug, Clone, Copy)]
pub struct AmpVars {
    /// Residual `s` of the previous iteration.
    pub s: Var,
    pub r: Var,
    pub nu_r: Var,
}

/// Starting residual `s⁰ = 0` on the tape.
pub fn amp_init_tape<T: Scalar>(tape: &mut Tape<T>, ch: &RealChannel<T>) -> Var {
    tape.input(Tensor::zeros(ch.dim(), 1))
}

/// Matrix-form AMP iteration on the tape; costs `4·nnz(H) + 9·2MN` counted operations.
pub fn amp_step_tape<T: Scalar>(
    tape: &mut Tape<T>,
    ch: &RealChannel<T>,
    y: Var,
    noise_var: T,
    s_prev: Var,
    x_hat: Var,
    nu_x: Var,
) -> AmpVars {
    tape.set_stage(Stage::Amp);
    let half = noise_var / T::lit(2.0);
    let eps = T::lit(AMP_EPS);
    let nu_z = tape.spmm(&ch.h_sq, nu_x);
    let hx = tape.spmm(&ch.h, x_hat);
    let onsager = tape.mul(nu_z, s_prev);
    let z = tape.sub(hx, onsager);
    let nu_z_noisy = tape.add_const(nu_z, half);
    let nu_s = tape.recip(nu_z_noisy, eps);
    let resid = tape.sub(y, z);
    let s = tape.mul(nu_s, resid);
    let prec = tape.spmm(&ch.ht_sq, nu_s);
    let nu_r = tape.recip(prec, eps);
    let hts = tape.spmm(&ch.ht, s);
    let step = tape.mul(nu_r, hts);
    let r = tape.add(x_hat, step);
    AmpVars { s, r, nu_r }
}

/// Posterior mean and variance of a uniform prior on `alphabet` observed as `r ~ N(x, ν_r)`.
pub fn bayes_denoise<T: Scalar>(r: T, nu_r: T, alphabet: &[T]) -> (T, T) {
    let nu = nu_r.max(T::lit(AMP_EPS));
    let two = T::lit(2.0);
    let logits: Vec<T> = alphabet.iter().map(|&s| -(r - s) * (r - s) / (two * nu)).collect();
    let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let w: Vec<T> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let total: T = w.iter().copied().sum();
    let mean: T = w.iter().zip(alphabet).map(|(&p, &s)| p * s).sum::<T>() / total;
    let var: T = w.iter().zip(alphabet).map(|(&p, &s)| p * (s - mean) * (s - mean)).sum::<T>() / total;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_initial_state() {
        let ch = RealChannel::<f64>::identity(4);
        let y: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let st = amp_init(&ch, &y, 0.1).unwrap();
        assert_eq!(st.z, y);
        assert!(st.nu_z.iter().all(|&v| v == 0.5));
        assert!(st.s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_first_step_returns_observation() {
        let ch = RealChannel::<f64>::identity(4);
        let y: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let sigma = 0.2;
        let st = amp_init(&ch, &y, sigma).unwrap();
        let x0 = vec![0.0; 8];
        let v0 = vec![0.5; 8];
        for step in [amp_step::<f64>, amp_step_vectorized::<f64>] {
            let out = step(&st, &ch, &y, sigma, &x0, &v0).unwrap();
            for i in 0..8 {
                assert!((out.r[i] - y[i]).abs() < 1e-12);
                assert!((out.nu_r[i] - (0.5 + sigma / 2.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_prior_variance_collapses_to_noise() {
        let ch = RealChannel::<f64>::identity(2);
        let y = vec![0.3, -0.1, 0.7, 0.2];
        let sigma = 0.04;
        let st = amp_init(&ch, &y, sigma).unwrap();
        let out = amp_step(&st, &ch, &y, sigma, &[0.1, 0.2, 0.3, 0.4], &[0.0; 4]).unwrap();
        assert!(out.nu_z.iter().all(|&v| v == 0.0));
        assert!(out.nu_r.iter().all(|&v| (v - sigma / 2.0).abs() < 1e-15));
    }

    #[test]
    fn noiseless_fixed_point() {
        let ch = RealChannel::<f64>::identity(3);
        let x = vec![0.7, -0.7, 0.7, 0.7, -0.7, -0.7];
        let st = amp_init(&ch, &x, 1e-12).unwrap();
        let out = amp_step_vectorized(&st, &ch, &x, 1e-12, &x, &[0.5; 6]).unwrap();
        for i in 0..6 {
            assert!((out.r[i] - x[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_input_reports_divergence() {
        let ch = RealChannel::<f64>::identity(1);
        let y = vec![f64::NAN, 0.0];
        let st = amp_init(&ch, &y, 0.1).unwrap();
        let err = amp_step(&st, &ch, &y, 0.1, &[0.0; 2], &[0.5; 2]).unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 1 }));
    }

    #[test]
    fn shape_errors() {
        let ch = RealChannel::<f64>::identity(2);
        assert!(amp_init(&ch, &[0.0; 3], 0.1).is_err());
    }

    #[test]
    fn denoiser_limits_and_closed_form() {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let alphabet = [-a, a];
        let (m, _) = bayes_denoise(0.3, 1e12, &alphabet);
        assert!(m.abs() < 1e-9);
        let (m, v) = bayes_denoise(0.3, 1e-9, &alphabet);
        assert!((m - a).abs() < 1e-12 && v < 1e-12);
        let (m, v) = bayes_denoise(0.3, 0.5, &alphabet);
        // two-point posterior: a·tanh(r·a/ν_r)
        let expect = a * (0.3 * a / 0.5).tanh();
        assert!((m - expect).abs() < 1e-12);
        assert!((v - (0.5 - m * m)).abs() < 1e-12);
    }
}
