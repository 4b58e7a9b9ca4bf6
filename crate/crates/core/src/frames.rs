//! Constellations, frame generation and real/complex lifting.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{EffectiveChannel, OtfsConfig};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Square Gray-mapped QAM with unit average energy.
///
/// Point `i` carries the bits of `i`: the upper half select the in-phase
/// level and the lower half the quadrature level, each axis Gray-coded.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub order: usize,
    pub points: Vec<Complex64>,
    /// Distinct real parts, ascending.
    pub real_alphabet: Vec<f64>,
    bits_per_axis: u32,
}

/// Gray-coded amplitude level of an axis label, before scaling.
fn axis_level(label: usize, bits: u32) -> f64 {
    let side = 1usize << bits;
    // inverse Gray: position along the axis
    let mut pos = label;
    let mut shift = label >> 1;
    while shift != 0 {
        pos ^= shift;
        shift >>= 1;
    }
    2.0 * pos as f64 - (side as f64 - 1.0)
}

impl Constellation {
    pub fn new(order: usize) -> Result<Self> {
        let bits_per_axis = match order {
            4 => 1,
            16 => 2,
            other => return Err(Error::UnsupportedOrder(other)),
        };
        let side = 1usize << bits_per_axis;
        let levels: Vec<f64> = (0..side).map(|b| axis_level(b, bits_per_axis)).collect();
        let energy: f64 = 2.0 * levels.iter().map(|a| a * a).sum::<f64>() / side as f64;
        let scale = 1.0 / energy.sqrt();
        let points = (0..order)
            .map(|i| {
                let re = axis_level(i >> bits_per_axis, bits_per_axis);
                let im = axis_level(i & (side - 1), bits_per_axis);
                Complex64::new(re * scale, im * scale)
            })
            .collect();
        let mut real_alphabet: Vec<f64> = levels.iter().map(|a| a * scale).collect();
        real_alphabet.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(Self { order, points, real_alphabet, bits_per_axis })
    }

    pub fn bits_per_symbol(&self) -> u32 {
        2 * self.bits_per_axis
    }

    /// Nearest point; ties go to the lowest index.
    pub fn decide(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, s) in self.points.iter().enumerate() {
            let d = (z - s).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn bit_errors(&self, a: usize, b: usize) -> u32 {
        ((a ^ b) as u32).count_ones()
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.order as f64
    }
}

/// `σ_n² = 10^{−SNR/10}` for unit-energy symbols.
pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Converts a variance quoted in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Stacks real parts over imaginary parts.
pub fn lift(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect()
}

pub fn unlift(v: &[f64]) -> Result<Vec<Complex64>> {
    if v.len() % 2 != 0 {
        return Err(Error::Shape(format!("unlift expects an even length, got {}", v.len())));
    }
    let h = v.len() / 2;
    Ok((0..h).map(|i| Complex64::new(v[i], v[i + h])).collect())
}

/// One OTFS transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub symbols: Vec<usize>,
    pub x_bar: Vec<Complex64>,
    pub y_bar: Vec<Complex64>,
    /// Complex noise variance `σ_n²` (each real dimension carries half).
    pub noise_var: f64,
}

impl Frame {
    pub fn x_real(&self) -> Vec<f64> {
        lift(&self.x_bar)
    }

    pub fn y_real(&self) -> Vec<f64> {
        lift(&self.y_bar)
    }

    /// Flat little-endian `f64` record: `noise_var`, then `x̄` as `(re, im)` pairs,
    /// then `ȳ` as `(re, im)` pairs, `1 + 4MN` values in total.
    pub fn write_record<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.noise_var.to_le_bytes())?;
        for c in self.x_bar.iter().chain(&self.y_bar) {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a record written by [`Frame::write_record`]; symbol indices are recovered by decision.
    pub fn read_record<R: Read>(r: &mut R, mn: usize, constellation: &Constellation) -> Result<Self> {
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        };
        let noise_var = next(r)?;
        let mut read_vec = |r: &mut R| -> Result<Vec<Complex64>> {
            (0..mn).map(|_| Ok(Complex64::new(next(r)?, next(r)?))).collect()
        };
        let x_bar = read_vec(r)?;
        let y_bar = read_vec(r)?;
        let symbols = x_bar.iter().map(|&x| constellation.decide(x)).collect();
        Ok(Self { symbols, x_bar, y_bar, noise_var })
    }
}

/// Metadata written next to binary frame records.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameSidecar {
    pub config: OtfsConfig,
    pub seed: u64,
    pub noise_var: f64,
    pub frames: usize,
    pub layout: String,
    pub snr_convention: String,
}

impl FrameSidecar {
    pub const LAYOUT: &'static str = "f64le: noise_var, x_bar[re,im]*MN, y_bar[re,im]*MN";
    pub const SNR_CONVENTION: &'static str = "unit-energy symbols, noise_var = 10^(-snr_db/10) per complex sample";
}

/// Draws i.i.d. uniform symbols and `CN(0, σ_n²)` noise and forms `ȳ = H_eff x̄ + w̄`.
///
/// The noise is drawn at unit variance and scaled, so frames generated with the
/// same seed at different noise levels share symbols and noise direction.
pub fn generate_frame(
    channel: &EffectiveChannel,
    constellation: &Constellation,
    noise_var: f64,
    seed: u64,
) -> Frame {
    generate_frame_with(channel, constellation, noise_var, &mut rng_from_seed(seed))
}

pub fn generate_frame_with<R: Rng + ?Sized>(
    channel: &EffectiveChannel,
    constellation: &Constellation,
    noise_var: f64,
    rng: &mut R,
) -> Frame {
    let mn = channel.config.mn();
    let symbols: Vec<usize> = (0..mn).map(|_| rng.random_range(0..constellation.order)).collect();
    let x_bar: Vec<Complex64> = symbols.iter().map(|&s| constellation.points[s]).collect();
    let sigma = (noise_var / 2.0).sqrt();
    let noise: Vec<Complex64> = (0..mn)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        })
        .collect();
    let clean = channel.h_eff.mul_vec(&x_bar);
    let y_bar = clean.iter().zip(&noise).map(|(&c, &w)| if noise_var == 0.0 { c } else { c + w * sigma }).collect();
    Frame { symbols, x_bar, y_bar, noise_var }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_effective_channel, ChannelRealization, PathTap};

    #[test]
    fn qpsk_and_16qam_alphabets() {
        let q4 = Constellation::new(4).unwrap();
        let a = 1.0 / 2f64.sqrt();
        assert_eq!(q4.real_alphabet.len(), 2);
        assert!((q4.real_alphabet[0] + a).abs() < 1e-15 && (q4.real_alphabet[1] - a).abs() < 1e-15);
        for s in &q4.points {
            assert!((s.re.abs() - a).abs() < 1e-15 && (s.im.abs() - a).abs() < 1e-15);
        }
        let q16 = Constellation::new(16).unwrap();
        let b = 1.0 / 10f64.sqrt();
        let expect = [-3.0 * b, -b, b, 3.0 * b];
        for (x, e) in q16.real_alphabet.iter().zip(expect) {
            assert!((x - e).abs() < 1e-15);
        }
        assert!((q4.mean_energy() - 1.0).abs() < 1e-12);
        assert!((q16.mean_energy() - 1.0).abs() < 1e-12);
        assert!(matches!(Constellation::new(8), Err(Error::UnsupportedOrder(8))));
    }

    #[test]
    fn gray_neighbors_differ_by_one_bit() {
        let q16 = Constellation::new(16).unwrap();
        for (i, a) in q16.points.iter().enumerate() {
            for (j, b) in q16.points.iter().enumerate() {
                let d = (a - b).norm();
                if d > 1e-12 && d < 2.0 / 10f64.sqrt() + 1e-9 {
                    assert_eq!(q16.bit_errors(i, j), 1, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn decision_tie_breaks_to_lowest_index() {
        let q4 = Constellation::new(4).unwrap();
        assert_eq!(q4.decide(Complex64::new(0.0, 0.0)), 0);
        let z = Complex64::new(0.0, 0.7);
        let d = q4.decide(z);
        let tied: Vec<usize> = (0..4).filter(|&i| (q4.points[i] - z).norm_sqr() <= (q4.points[d] - z).norm_sqr()).collect();
        assert_eq!(d, tied[0]);
    }

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_to_noise_var(0.0), 1.0);
        assert!((snr_to_noise_var(20.0) - 0.01).abs() < 1e-15);
        assert!((snr_to_noise_var(-15.0) - 31.622776601683793).abs() < 1e-12);
    }

    #[test]
    fn lift_round_trip() {
        assert_eq!(lift(&[Complex64::new(1.0, 2.0)]), vec![1.0, 2.0]);
        let v = vec![Complex64::new(0.5, -1.0), Complex64::new(3.0, 0.25)];
        assert_eq!(unlift(&lift(&v)).unwrap(), v);
        assert!(unlift(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn noiseless_identity_channel_passes_symbols() {
        let cfg = OtfsConfig { paths: 1, ..OtfsConfig::tiny() };
        let real = ChannelRealization {
            paths: vec![PathTap { gain: Complex64::new(1.0, 0.0), delay: 0, doppler: 0, doppler_frac: 0.0 }],
        };
        let ch = build_effective_channel(&real, &cfg).unwrap();
        let c = Constellation::new(4).unwrap();
        let f = generate_frame(&ch, &c, 0.0, 4);
        assert_eq!(f.y_bar, f.x_bar);
        assert_eq!(f, generate_frame(&ch, &c, 0.0, 4));
    }

    #[test]
    fn binary_record_round_trip() {
        let cfg = OtfsConfig::tiny();
        let real = crate::channel::sample_channel(&cfg, 1).unwrap();
        let ch = build_effective_channel(&real, &cfg).unwrap();
        let c = Constellation::new(4).unwrap();
        let f = generate_frame(&ch, &c, 0.1, 2);
        let mut buf = Vec::new();
        f.write_record(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (1 + 4 * cfg.mn()));
        let back = Frame::read_record(&mut buf.as_slice(), cfg.mn(), &c).unwrap();
        assert_eq!(back, f);
    }
}
