//! Receive-side preprocessing and corruption operators.
//!
//! Preprocessing runs in a fixed order: time-gain compensation, head mute,
//! per-channel normalization, quantization noise. Corruptions (white noise,
//! per-channel phase rotation) act on raw frames.

use ndarray::{Array2, ArrayViewMut1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Setup, PAPER_CENTER_FREQ, PAPER_RX_RATE, REFERENCE_SOS};
use crate::rng::{self, sample_seed, Stream};
use crate::solver::{ProcessingStep, RfFrame};

pub const PAPER_MUTE_SAMPLES: usize = 100;
pub const DEFAULT_QUANT_BITS: u32 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocConfig {
    /// dB/(MHz cm)
    pub tgc_alpha: f64,
    pub tgc_sos: f64,
    /// Frequency the gain is evaluated at.
    pub center_freq: f64,
    pub mute_samples: usize,
    pub quant_bits: u32,
    pub add_quant_noise: bool,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            tgc_alpha: 0.75,
            tgc_sos: REFERENCE_SOS,
            center_freq: PAPER_CENTER_FREQ,
            mute_samples: PAPER_MUTE_SAMPLES,
            quant_bits: DEFAULT_QUANT_BITS,
            add_quant_noise: true,
        }
    }
}

impl PreprocConfig {
    /// Defaults with the mute length kept at the same duration and the gain
    /// evaluated at the setup's centre frequency.
    pub fn for_setup(setup: &Setup) -> Self {
        let t = &setup.transducer;
        let mute = (PAPER_MUTE_SAMPLES as f64 * t.rx_sample_rate / PAPER_RX_RATE).round() as usize;
        PreprocConfig {
            center_freq: t.center_freq,
            mute_samples: mute,
            ..Self::default()
        }
    }

    pub fn validate(&self, rx_samples: usize) -> Result<()> {
        if self.mute_samples >= rx_samples {
            return Err(Error::config(format!(
                "mute_samples {} must be below rx_samples {rx_samples}",
                self.mute_samples
            )));
        }
        if !(8..=16).contains(&self.quant_bits) {
            return Err(Error::config(format!("quant_bits {} outside [8, 16]", self.quant_bits)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub awgn_target_snr_db: Option<f64>,
    pub phase_range_rad: Option<f64>,
    pub noise_seed: u64,
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.phase_range_rad {
            if !(r >= 0.0) {
                return Err(Error::config(format!("phase_range_rad must be >= 0 (got {r})")));
            }
        }
        if let Some(s) = self.awgn_target_snr_db {
            if s.is_nan() {
                return Err(Error::config("awgn_target_snr_db is NaN"));
            }
        }
        Ok(())
    }
}

/// Gain at receive time `t`: `10^(alpha fc_MHz (c t in cm) / 20)`.
pub fn tgc_gain(t: f64, cfg: &PreprocConfig) -> f64 {
    let path_cm = cfg.tgc_sos * t * 100.0;
    10f64.powf(cfg.tgc_alpha * cfg.center_freq / 1e6 * path_cm / 20.0)
}

pub fn tgc(mut frame: RfFrame, cfg: &PreprocConfig) -> RfFrame {
    let rate = frame.sample_rate;
    let gains: Vec<f64> = (0..frame.n_samples()).map(|k| tgc_gain(k as f64 / rate, cfg)).collect();
    for mut row in frame.samples.rows_mut() {
        row.iter_mut().zip(&gains).for_each(|(v, g)| *v *= g);
    }
    frame.provenance.steps.push(ProcessingStep::Tgc {
        alpha_db_mhz_cm: cfg.tgc_alpha,
        sos: cfg.tgc_sos,
        center_freq: cfg.center_freq,
    });
    frame
}

pub fn mute_head(mut frame: RfFrame, n: usize) -> Result<RfFrame> {
    if n >= frame.n_samples() {
        return Err(Error::input(format!(
            "cannot mute {n} samples of a {}-sample frame",
            frame.n_samples()
        )));
    }
    frame.samples.slice_mut(ndarray::s![.., ..n]).fill(0.0);
    frame.provenance.steps.push(ProcessingStep::Mute { samples: n });
    Ok(frame)
}

/// Per channel: subtract the mean, divide by the largest magnitude.
///
/// Channels with nothing left after mean removal are zeroed and listed in
/// the provenance.
pub fn normalize_channels(mut frame: RfFrame) -> RfFrame {
    let mut zero = Vec::new();
    for (k, mut row) in frame.samples.rows_mut().into_iter().enumerate() {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            row.iter_mut().for_each(|v| *v /= peak);
        } else {
            row.fill(0.0);
            zero.push(k);
        }
    }
    frame.provenance.zero_channels = zero;
    frame.provenance.steps.push(ProcessingStep::Normalize);
    frame
}

/// Uniform noise in `[-q/2, q/2]` with `q = 2 / 2^bits`.
pub fn add_quant_noise(mut frame: RfFrame, bits: u32, seed: u64) -> Result<RfFrame> {
    if !(8..=16).contains(&bits) {
        return Err(Error::input(format!("quant bits {bits} outside [8, 16]")));
    }
    let peak = frame.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 + 1e-9 {
        return Err(Error::input(format!(
            "quantization noise expects a normalized frame (max |x| = {peak})"
        )));
    }
    let half = 1.0 / 2f64.powi(bits as i32);
    per_channel(&mut frame.samples, seed, Stream::QuantNoise, |mut row, rng| {
        row.iter_mut().for_each(|v| *v += rng.random_range(-half..=half));
    });
    frame.provenance.steps.push(ProcessingStep::QuantNoise { bits, seed });
    Ok(frame)
}

/// Mean square over samples that are not exactly zero, skipping the first
/// `skip` samples of each channel.
pub fn signal_power(frame: &RfFrame, skip: usize) -> f64 {
    let (sum, count) = frame
        .samples
        .rows()
        .into_iter()
        .flat_map(|row| row.into_iter().skip(skip).copied().collect::<Vec<_>>())
        .filter(|v| *v != 0.0)
        .fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// White Gaussian noise at `target_snr_db` relative to the frame's own
/// signal power (see [`signal_power`]). An infinite target is the identity.
pub fn add_awgn(frame: RfFrame, target_snr_db: f64, seed: u64) -> Result<RfFrame> {
    let power = signal_power(&frame, 0);
    add_awgn_at_power(frame, power, target_snr_db, seed)
}

/// White Gaussian noise at `target_snr_db` relative to `signal_power`.
pub fn add_awgn_at_power(
    mut frame: RfFrame,
    signal_power: f64,
    target_snr_db: f64,
    seed: u64,
) -> Result<RfFrame> {
    if target_snr_db == f64::INFINITY {
        return Ok(frame);
    }
    if !(signal_power > 0.0) {
        return Err(Error::input("cannot set an SNR on a frame with zero signal power"));
    }
    let sigma = (signal_power / 10f64.powf(target_snr_db / 10.0)).sqrt();
    let mut noise = Array2::<f64>::zeros(frame.samples.dim());
    per_channel(&mut noise, seed, Stream::Awgn, |mut row, rng| {
        row.iter_mut().for_each(|v| {
            let z: f64 = StandardNormal.sample(rng);
            *v = sigma * z;
        });
    });
    let noise_power = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    frame.samples += &noise;
    frame.provenance.steps.push(ProcessingStep::Awgn {
        target_snr_db,
        realized_snr_db: 10.0 * (signal_power / noise_power).log10(),
        signal_power,
        seed,
    });
    Ok(frame)
}

/// Rotate every channel by its own constant phase drawn from `[-range, range]`.
///
/// Positive-frequency bins are multiplied by `e^{i phi}` and negative ones by
/// the conjugate, which is the real part of the rotated analytic signal with
/// the (real) DC and Nyquist bins left alone, so magnitude spectra are kept.
pub fn add_phase_noise(mut frame: RfFrame, range_rad: f64, seed: u64) -> Result<RfFrame> {
    if !(range_rad >= 0.0) {
        return Err(Error::input(format!("phase range must be >= 0 (got {range_rad})")));
    }
    let n = frame.n_samples();
    let mut rng = rng::stream(seed, Stream::PhaseNoise);
    let phases: Vec<f64> = (0..frame.n_channels())
        .map(|_| if range_rad > 0.0 { rng.random_range(-range_rad..=range_rad) } else { 0.0 })
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    frame
        .samples
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(phases.par_iter())
        .for_each(|(mut row, &phi)| {
            let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fwd.process(&mut buf);
            let rot = Complex64::from_polar(1.0, phi);
            for (k, b) in buf.iter_mut().enumerate() {
                if k == 0 || 2 * k == n {
                    continue;
                }
                *b *= if 2 * k < n { rot } else { rot.conj() };
            }
            inv.process(&mut buf);
            row.iter_mut().zip(&buf).for_each(|(v, b)| *v = b.re / n as f64);
        });
    frame.provenance.steps.push(ProcessingStep::PhaseNoise { range_rad, seed });
    Ok(frame)
}

/// Analytic signal of a real sequence (one-sided spectrum).
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let h = if k == 0 || 2 * k == n {
            1.0
        } else if 2 * k < n {
            2.0
        } else {
            0.0
        };
        *b *= h / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Magnitude of the analytic signal.
pub fn envelope_1d(x: &[f64]) -> Vec<f64> {
    analytic_signal(x).iter().map(|a| a.norm()).collect()
}

/// Magnitude spectrum (`|FFT|`) of a real sequence.
pub fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    buf.iter().map(|b| b.norm()).collect()
}

/// The fixed preprocessing chain. `seed` keys the quantization noise.
pub fn preprocess(frame: RfFrame, cfg: &PreprocConfig, seed: u64) -> Result<RfFrame> {
    cfg.validate(frame.n_samples())?;
    let frame = tgc(frame, cfg);
    let frame = mute_head(frame, cfg.mute_samples)?;
    let frame = normalize_channels(frame);
    if cfg.add_quant_noise {
        add_quant_noise(frame, cfg.quant_bits, seed)
    } else {
        Ok(frame)
    }
}

/// Apply the configured corruptions to a raw frame: phase rotation first,
/// then white noise with signal power measured past the mute window.
pub fn corrupt(frame: RfFrame, cfg: &CorruptionConfig, mute_samples: usize) -> Result<RfFrame> {
    cfg.validate()?;
    let mut frame = frame;
    if let Some(range) = cfg.phase_range_rad {
        frame = add_phase_noise(frame, range, cfg.noise_seed)?;
    }
    if let Some(snr) = cfg.awgn_target_snr_db {
        let power = signal_power(&frame, mute_samples);
        frame = add_awgn_at_power(frame, power, snr, cfg.noise_seed)?;
    }
    Ok(frame)
}

/// Re-apply recorded processing steps to a frame.
///
/// Steps carry every parameter and seed they used, so replaying a frame's
/// provenance on its raw simulation reproduces it bit for bit.
pub fn replay(frame: RfFrame, steps: &[ProcessingStep]) -> Result<RfFrame> {
    steps.iter().try_fold(frame, |f, step| match *step {
        ProcessingStep::Tgc {
            alpha_db_mhz_cm,
            sos,
            center_freq,
        } => Ok(tgc(
            f,
            &PreprocConfig {
                tgc_alpha: alpha_db_mhz_cm,
                tgc_sos: sos,
                center_freq,
                ..PreprocConfig::default()
            },
        )),
        ProcessingStep::Mute { samples } => mute_head(f, samples),
        ProcessingStep::Normalize => Ok(normalize_channels(f)),
        ProcessingStep::QuantNoise { bits, seed } => add_quant_noise(f, bits, seed),
        ProcessingStep::Awgn {
            target_snr_db,
            signal_power,
            seed,
            ..
        } => add_awgn_at_power(f, signal_power, target_snr_db, seed),
        ProcessingStep::PhaseNoise { range_rad, seed } => add_phase_noise(f, range_rad, seed),
    })
}

/// Run `f` on every channel with a generator keyed by `(seed, channel)`, so
/// results do not depend on how channels are scheduled.
fn per_channel<F>(samples: &mut Array2<f64>, seed: u64, stream: Stream, f: F)
where
    F: Fn(ArrayViewMut1<f64>, &mut rand_chacha::ChaCha8Rng) + Sync,
{
    samples
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(k, row)| {
            let mut rng = rng::stream(sample_seed(seed, k as u64), stream);
            f(row, &mut rng);
        });
}

/// Realized SNR in dB between a clean and a noisy copy of the same frame.
pub fn realized_snr_db(clean: &RfFrame, noisy: &RfFrame, signal_power: f64) -> f64 {
    let noise = (&noisy.samples - &clean.samples).iter().map(|v| v * v).sum::<f64>()
        / clean.samples.len() as f64;
    10.0 * (signal_power / noise).log10()
}
