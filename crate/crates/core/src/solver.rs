//! Linear 2D acoustics on a staggered grid.
//!
//! Pressure lives on grid nodes, lateral velocity half a node to the right
//! and axial velocity half a node below. Spatial derivatives use the
//! fourth-order staggered stencil, time stepping is leapfrog. The physical
//! grid is surrounded by a split-field absorbing layer on all four sides.
//! Loss is a single relaxation mechanism whose strength is calibrated so the
//! background medium attenuates at the requested rate at the centre frequency.

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, TransducerSpec, RESAMPLE_HALF_WIDTH};
use crate::phantom::PhantomSample;

const C1: f64 = 9.0 / 8.0;
const C2: f64 = -1.0 / 24.0;

/// Largest stable Courant number of the scheme in 2D.
pub fn courant_limit() -> f64 {
    1.0 / (std::f64::consts::SQRT_2 * (C1 - C2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSignal {
    /// Pressure samples at the simulation rate, starting at `t = 0`.
    pub waveform: Vec<f64>,
    pub dt: f64,
    pub center_freq: f64,
    pub cycles: u32,
    pub envelope: Envelope,
}

impl SourceSignal {
    pub fn duration(&self) -> f64 {
        self.waveform.len() as f64 * self.dt
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.waveform.iter_mut().for_each(|v| *v *= k);
        out
    }
}

/// `sin(2 pi fc t)` for `t` in `[0, cycles / fc)`, sampled every `dt`.
pub fn make_tone_burst(grid: &GridSpec, transducer: &TransducerSpec) -> SourceSignal {
    let fc = transducer.center_freq;
    let length = transducer.tx_cycles as f64 / fc;
    let n = (length / grid.dt).ceil() as usize;
    let waveform = (0..n)
        .map(|i| (2.0 * PI * fc * i as f64 * grid.dt).sin())
        .collect();
    SourceSignal {
        waveform,
        dt: grid.dt,
        center_freq: fc,
        cycles: transducer.tx_cycles,
        envelope: Envelope::Rectangular,
    }
}

/// One processing stage applied to a frame after simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ProcessingStep {
    Tgc {
        alpha_db_mhz_cm: f64,
        sos: f64,
        center_freq: f64,
    },
    Mute {
        samples: usize,
    },
    Normalize,
    QuantNoise {
        bits: u32,
        seed: u64,
    },
    Awgn {
        target_snr_db: f64,
        realized_snr_db: f64,
        /// Power the target was measured against.
        signal_power: f64,
        seed: u64,
    },
    PhaseNoise {
        range_rad: f64,
        seed: u64,
    },
}

impl ProcessingStep {
    /// Bit used for this stage in the container header flags.
    pub fn flag(&self) -> u32 {
        match self {
            ProcessingStep::Tgc { .. } => 1,
            ProcessingStep::Mute { .. } => 1 << 1,
            ProcessingStep::Normalize => 1 << 2,
            ProcessingStep::QuantNoise { .. } => 1 << 3,
            ProcessingStep::Awgn { .. } => 1 << 4,
            ProcessingStep::PhaseNoise { .. } => 1 << 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub phantom_seed: u64,
    #[serde(default)]
    pub steps: Vec<ProcessingStep>,
    /// Channels that were all zero when normalized.
    #[serde(default)]
    pub zero_channels: Vec<usize>,
}

impl Provenance {
    pub fn flags(&self) -> u32 {
        let zero = if self.zero_channels.is_empty() { 0 } else { 1 << 8 };
        self.steps.iter().fold(zero, |f, s| f | s.flag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    /// `n_channels x rx_samples` receive pressure.
    pub samples: Array2<f64>,
    pub sample_rate: f64,
    pub provenance: Provenance,
}

impl RfFrame {
    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub attenuation: bool,
    pub pml_points: usize,
    /// Absorption at the outer edge of the layer, nepers per grid point.
    pub pml_alpha: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            attenuation: true,
            pml_points: 20,
            pml_alpha: 2.0,
        }
    }
}

impl SolverOptions {
    pub fn lossless() -> Self {
        SolverOptions {
            attenuation: false,
            ..Self::default()
        }
    }
}

/// Relaxation strength giving `alpha` nepers per metre at angular frequency
/// `omega` in a medium of speed `c`, with the relaxation time set to `1 / omega`.
///
/// The mechanism has modulus `K (1 + d i w t / (1 + i w t))`.
pub fn relaxation_strength(alpha: f64, c: f64, omega: f64) -> f64 {
    if alpha <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while model_attenuation(hi, c, omega, 1.0 / omega) < alpha {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if model_attenuation(mid, c, omega, 1.0 / omega) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Plane-wave attenuation (Np/m) of the relaxation model at `omega`.
pub fn model_attenuation(strength: f64, c: f64, omega: f64, tau: f64) -> f64 {
    let iwt = Complex64::new(0.0, omega * tau);
    let modulus = 1.0 + strength * iwt / (1.0 + iwt);
    -(omega / c * modulus.sqrt().inv()).im
}

pub fn db_mhz_cm_to_np_per_m(alpha: f64, freq: f64) -> f64 {
    alpha * (freq / 1e6) * 100.0 / (20.0 / std::f64::consts::LN_10)
}

/// Time-domain state of one simulation.
pub struct Simulation {
    nz: usize,
    nx: usize,
    pml: usize,
    dt: f64,
    dx: f64,
    /// `dt K (1 + d) / dx` at pressure nodes.
    kp: Vec<f64>,
    /// `dt K d / 2` at pressure nodes, empty when lossless.
    kloss: Vec<f64>,
    /// `dt / (rho dx)` at velocity faces.
    bx: Vec<f64>,
    bz: Vec<f64>,
    /// Damping factors `exp(-sigma dt / 2)` at nodes and half nodes.
    ax_p: Vec<f64>,
    ax_u: Vec<f64>,
    az_p: Vec<f64>,
    az_u: Vec<f64>,
    relax: f64,
    px: Vec<f64>,
    pz: Vec<f64>,
    p: Vec<f64>,
    ux: Vec<f64>,
    uz: Vec<f64>,
    mem: Vec<f64>,
    step: usize,
}

impl Simulation {
    pub fn new(sample: &PhantomSample, grid: &GridSpec, center_freq: f64, opts: &SolverOptions) -> Result<Self> {
        grid.validate()?;
        if sample.shape() != (grid.nz, grid.nx) {
            return Err(Error::input(format!(
                "phantom shape {:?} differs from grid {}x{}",
                sample.shape(),
                grid.nz,
                grid.nx
            )));
        }
        let positive = |a: &Array2<f64>| a.iter().all(|v| v.is_finite() && *v > 0.0);
        if !positive(&sample.sos) || !positive(&sample.density) {
            return Err(Error::input("sos and density must be finite and strictly positive"));
        }
        let c_max = sample.sos.iter().cloned().fold(0.0, f64::max);
        let omega = 2.0 * PI * center_freq;
        let strength_bg = if opts.attenuation {
            let alpha = db_mhz_cm_to_np_per_m(sample.attenuation_coeff, center_freq);
            relaxation_strength(alpha, sample.background_sos, omega)
        } else {
            0.0
        };
        // the relaxed modulus is the low-frequency one; the unrelaxed speed bounds stability
        let c_fast = c_max * (1.0 + strength_bg * c_max / sample.background_sos).sqrt();
        let courant = c_fast * grid.dt / grid.dx;
        if courant > courant_limit() {
            return Err(Error::Stability {
                courant,
                limit: courant_limit(),
            });
        }

        let l = opts.pml_points;
        let (nz, nx) = (grid.nz + 2 * l, grid.nx + 2 * l);
        let clamp = |q: usize, n: usize| q.saturating_sub(l).min(n - 1);
        let at = |a: &Array2<f64>, i: usize, j: usize| a[[clamp(i, grid.nz), clamp(j, grid.nx)]];
        let (dt, dx) = (grid.dt, grid.dx);

        let mut kp = vec![0.0; nz * nx];
        let mut kloss = if opts.attenuation { vec![0.0; nz * nx] } else { Vec::new() };
        let mut bx = vec![0.0; nz * nx];
        let mut bz = vec![0.0; nz * nx];
        for i in 0..nz {
            for j in 0..nx {
                let idx = i * nx + j;
                let c = at(&sample.sos, i, j);
                let rho = at(&sample.density, i, j);
                let k = rho * c * c;
                // keep the calibrated loss per wavelength under local speed changes
                let d = strength_bg * c / sample.background_sos;
                kp[idx] = dt * k * (1.0 + d) / dx;
                if opts.attenuation {
                    kloss[idx] = 0.5 * dt * k * d;
                }
                let rx = if j + 1 < nx { 0.5 * (rho + at(&sample.density, i, j + 1)) } else { rho };
                let rz = if i + 1 < nz { 0.5 * (rho + at(&sample.density, i + 1, j)) } else { rho };
                bx[idx] = dt / (rx * dx);
                bz[idx] = dt / (rz * dx);
            }
        }

        let sigma_max = opts.pml_alpha * c_max / dx;
        let profile = |n: usize, inner: usize, offset: f64| -> Vec<f64> {
            (0..n)
                .map(|q| {
                    let x = q as f64 + offset;
                    let lo = l as f64;
                    let hi = (l + inner - 1) as f64;
                    let depth = (lo - x).max(x - hi).max(0.0);
                    let sigma = if l == 0 { 0.0 } else { sigma_max * (depth / l as f64).powi(4) };
                    (-0.5 * sigma * dt).exp()
                })
                .collect()
        };

        Ok(Simulation {
            nz,
            nx,
            pml: l,
            dt,
            dx,
            kp,
            kloss,
            bx,
            bz,
            ax_p: profile(nx, grid.nx, 0.0),
            ax_u: profile(nx, grid.nx, 0.5),
            az_p: profile(nz, grid.nz, 0.0),
            az_u: profile(nz, grid.nz, 0.5),
            relax: (-dt * omega).exp(),
            px: vec![0.0; nz * nx],
            pz: vec![0.0; nz * nx],
            p: vec![0.0; nz * nx],
            ux: vec![0.0; nz * nx],
            uz: vec![0.0; nz * nx],
            mem: if opts.attenuation { vec![0.0; nz * nx] } else { Vec::new() },
            step: 0,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    fn index(&self, i: usize, j: usize) -> usize {
        (i + self.pml) * self.nx + j + self.pml
    }

    /// Pressure at physical node `(i, j)`.
    pub fn pressure_at(&self, i: usize, j: usize) -> f64 {
        self.p[self.index(i, j)]
    }

    /// Add `value` to the pressure at physical node `(i, j)`.
    pub fn add_pressure(&mut self, i: usize, j: usize, value: f64) {
        let idx = self.index(i, j);
        self.px[idx] += 0.5 * value;
        self.pz[idx] += 0.5 * value;
        self.p[idx] += value;
    }

    fn first_non_finite(&self) -> bool {
        self.p.iter().any(|v| !v.is_finite())
    }

    /// Advance one step.
    pub fn step(&mut self) {
        self.update_velocity(false);
        self.update_pressure();
        self.step += 1;
    }

    /// Advance one step and return the discrete acoustic energy (J/m) at the
    /// current time level, computed before the update.
    ///
    /// Kinetic energy pairs the velocities half a step either side, which is
    /// the quantity leapfrog conserves exactly in a lossless interior.
    pub fn step_with_energy(&mut self) -> f64 {
        let potential = self.potential_energy();
        let kinetic = self.update_velocity(true);
        self.update_pressure();
        self.step += 1;
        potential + kinetic
    }

    fn potential_energy(&self) -> f64 {
        let scale = self.dt / self.dx;
        let rows: Vec<f64> = self
            .p
            .par_chunks(self.nx)
            .zip(self.kp.par_chunks(self.nx))
            .map(|(p, k)| p.iter().zip(k).map(|(p, k)| p * p * scale / (2.0 * k)).sum())
            .collect();
        rows.iter().sum::<f64>() * self.dx * self.dx
    }

    fn update_velocity(&mut self, track: bool) -> f64 {
        let (nz, nx) = (self.nz, self.nx);
        let zero = vec![0.0; nx];
        let p = &self.p;
        let row = |i: isize| -> &[f64] {
            if i < 0 || i as usize >= nz {
                &zero
            } else {
                &p[i as usize * nx..(i as usize + 1) * nx]
            }
        };
        let (ax_u, az_u, bx, bz) = (&self.ax_u, &self.az_u, &self.bx, &self.bz);
        let to_rho = self.dt / self.dx;
        let rows: Vec<f64> = self
            .ux
            .par_chunks_mut(nx)
            .zip(self.uz.par_chunks_mut(nx))
            .enumerate()
            .map(|(i, (ux, uz))| {
                let ii = i as isize;
                let (pm, p0, p1, p2) = (row(ii - 1), row(ii), row(ii + 1), row(ii + 2));
                let (bx, bz) = (&bx[i * nx..(i + 1) * nx], &bz[i * nx..(i + 1) * nx]);
                let az = az_u[i];
                let mut kinetic = 0.0;
                for j in 0..nx {
                    let gx = if j >= 1 && j + 2 < nx {
                        C1 * (p0[j + 1] - p0[j]) + C2 * (p0[j + 2] - p0[j - 1])
                    } else {
                        let at = |q: isize| if q < 0 || q as usize >= nx { 0.0 } else { p0[q as usize] };
                        let jj = j as isize;
                        C1 * (at(jj + 1) - at(jj)) + C2 * (at(jj + 2) - at(jj - 1))
                    };
                    let gz = C1 * (p1[j] - p0[j]) + C2 * (p2[j] - pm[j]);
                    let ax = ax_u[j];
                    let (old_x, old_z) = (ux[j], uz[j]);
                    ux[j] = ax * (ax * old_x - bx[j] * gx);
                    uz[j] = az * (az * old_z - bz[j] * gz);
                    if track {
                        kinetic += 0.5 * to_rho * (old_x * ux[j] / bx[j] + old_z * uz[j] / bz[j]);
                    }
                }
                kinetic
            })
            .collect();
        rows.iter().sum::<f64>() * self.dx * self.dx
    }

    fn update_pressure(&mut self) {
        let (nz, nx) = (self.nz, self.nx);
        let zero = vec![0.0; nx];
        let (ux, uz) = (&self.ux, &self.uz);
        let row = |i: isize| -> &[f64] {
            if i < 0 || i as usize >= nz {
                &zero
            } else {
                &uz[i as usize * nx..(i as usize + 1) * nx]
            }
        };
        let (ax_p, az_p, kp, kloss) = (&self.ax_p, &self.az_p, &self.kp, &self.kloss);
        let relax = self.relax;
        let inv_dx = 1.0 / self.dx;
        let lossy = !kloss.is_empty();
        let mem_rows: Vec<&mut [f64]> = if lossy {
            self.mem.chunks_mut(nx).collect()
        } else {
            (0..nz).map(|_| <&mut [f64]>::default()).collect()
        };
        self.px
            .par_chunks_mut(nx)
            .zip(self.pz.par_chunks_mut(nx))
            .zip(self.p.par_chunks_mut(nx))
            .zip(mem_rows.into_par_iter())
            .enumerate()
            .for_each(|(i, (((px, pz), p), m))| {
                let ii = i as isize;
                let (um2, um1, u0, u1) = (row(ii - 2), row(ii - 1), row(ii), row(ii + 1));
                let ur = &ux[i * nx..(i + 1) * nx];
                let kp = &kp[i * nx..(i + 1) * nx];
                let az = az_p[i];
                for j in 0..nx {
                    let dux = if j >= 2 && j + 1 < nx {
                        C1 * (ur[j] - ur[j - 1]) + C2 * (ur[j + 1] - ur[j - 2])
                    } else {
                        let at = |q: isize| if q < 0 || q as usize >= nx { 0.0 } else { ur[q as usize] };
                        let jj = j as isize;
                        C1 * (at(jj) - at(jj - 1)) + C2 * (at(jj + 1) - at(jj - 2))
                    };
                    let duz = C1 * (u0[j] - um1[j]) + C2 * (u1[j] - um2[j]);
                    let mut loss = 0.0;
                    if lossy {
                        let div = (dux + duz) * inv_dx;
                        let next = relax * m[j] + (1.0 - relax) * div;
                        loss = kloss[i * nx + j] * 0.5 * (m[j] + next);
                        m[j] = next;
                    }
                    let ax = ax_p[j];
                    px[j] = ax * (ax * px[j] - kp[j] * dux + loss);
                    pz[j] = az * (az * pz[j] - kp[j] * duz + loss);
                    p[j] = px[j] + pz[j];
                }
            });
    }

    /// Fire all elements with `source` and record the element-averaged
    /// pressure on row 0 for `n_steps` steps, one column per step.
    pub fn run_transmit(
        &mut self,
        transducer: &TransducerSpec,
        grid: &GridSpec,
        source: &SourceSignal,
        n_steps: usize,
    ) -> Result<Array2<f64>> {
        let columns: Vec<_> = (0..transducer.n_channels)
            .map(|k| transducer.element_columns(grid, k))
            .collect();
        let mut traces = Array2::zeros((transducer.n_channels, n_steps));
        for n in 0..n_steps {
            if let Some(&s) = source.waveform.get(n) {
                for cols in &columns {
                    for j in cols.clone() {
                        self.add_pressure(0, j, s);
                    }
                }
            }
            for (k, cols) in columns.iter().enumerate() {
                let sum: f64 = cols.clone().map(|j| self.pressure_at(0, j)).sum();
                traces[[k, n]] = sum / cols.len() as f64;
            }
            if n % 64 == 0 || n + 1 == n_steps {
                if self.first_non_finite() {
                    return Err(Error::Divergence { step: n });
                }
            }
            self.step();
        }
        if traces.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: n_steps });
        }
        Ok(traces)
    }
}

/// Windowed-sinc resampler from rate `1 / dt` to `rate`, Hann window spanning
/// `half_width` output periods either side, weights normalized to unit sum.
#[derive(Debug, Clone)]
pub struct Resampler {
    taps: Vec<(isize, Vec<f64>)>,
}

impl Resampler {
    pub fn new(dt: f64, rate: f64, n_out: usize, half_width: usize) -> Self {
        let reach = half_width as f64 / rate;
        let taps = (0..n_out)
            .map(|k| {
                let t = k as f64 / rate;
                let first = ((t - reach) / dt).ceil() as isize;
                let last = ((t + reach) / dt).floor() as isize;
                let mut w: Vec<f64> = (first..=last)
                    .map(|n| {
                        let tau = (t - n as f64 * dt) * rate;
                        sinc(tau) * 0.5 * (1.0 + (PI * tau / half_width as f64).cos())
                    })
                    .collect();
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= total);
                (first, w)
            })
            .collect();
        Resampler { taps }
    }

    /// Input samples needed to evaluate every output sample.
    pub fn input_len(&self) -> usize {
        self.taps
            .last()
            .map(|(first, w)| (first + w.len() as isize).max(0) as usize)
            .unwrap_or(0)
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.taps
            .iter()
            .map(|(first, w)| {
                w.iter()
                    .enumerate()
                    .map(|(m, wm)| {
                        let n = first + m as isize;
                        if n < 0 || n as usize >= input.len() {
                            0.0
                        } else {
                            wm * input[n as usize]
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

pub fn simulate(
    sample: &PhantomSample,
    grid: &GridSpec,
    transducer: &TransducerSpec,
    source: &SourceSignal,
) -> Result<RfFrame> {
    simulate_with(sample, grid, transducer, source, &SolverOptions::default())
}

/// Single zero-degree plane-wave shot; returns the receive record at the
/// transducer's sample rate.
pub fn simulate_with(
    sample: &PhantomSample,
    grid: &GridSpec,
    transducer: &TransducerSpec,
    source: &SourceSignal,
    opts: &SolverOptions,
) -> Result<RfFrame> {
    transducer.validate(grid)?;
    if (source.dt - grid.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::input("source signal is sampled at a different time step than the grid"));
    }
    let mut sim = Simulation::new(sample, grid, transducer.center_freq, opts)?;
    let resampler = Resampler::new(
        grid.dt,
        transducer.rx_sample_rate,
        transducer.rx_samples,
        RESAMPLE_HALF_WIDTH,
    );
    let n_steps = resampler.input_len().min(grid.n_time_steps).max(1);
    let traces = sim.run_transmit(transducer, grid, source, n_steps)?;
    let mut samples = Array2::zeros((transducer.n_channels, transducer.rx_samples));
    for (k, trace) in traces.outer_iter().enumerate() {
        let out = resampler.apply(trace.as_slice().expect("row-major trace"));
        samples.row_mut(k).assign(&ndarray::ArrayView1::from(&out));
    }
    Ok(RfFrame {
        samples,
        sample_rate: transducer.rx_sample_rate,
        provenance: Provenance {
            phantom_seed: sample.seed,
            ..Provenance::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_desk_scale, make_paper_scale};
    use crate::phantom::BACKGROUND_DENSITY;

    #[test]
    fn paper_tone_burst() {
        let s = make_paper_scale();
        let src = make_tone_burst(&s.grid, &s.transducer);
        assert_eq!(src.waveform[0], 0.0);
        assert_eq!(src.waveform.iter().filter(|v| **v != 0.0).count(), 69);
        assert!((src.duration() - 0.4e-6).abs() <= s.grid.dt);
    }

    #[test]
    fn attenuation_calibration() {
        let omega = 2.0 * PI * 5e6;
        let alpha = db_mhz_cm_to_np_per_m(0.75, 5e6);
        // 3.75 dB/cm
        assert!((alpha * 20.0 / std::f64::consts::LN_10 - 375.0).abs() < 1e-9);
        let d = relaxation_strength(alpha, 1540.0, omega);
        assert!((model_attenuation(d, 1540.0, omega, 1.0 / omega) - alpha).abs() < 1e-9 * alpha);
        assert!(d > 0.0 && d < 0.05);
        assert_eq!(relaxation_strength(0.0, 1540.0, omega), 0.0);
    }

    #[test]
    fn resampler_passes_constants_and_tones() {
        let dt = 1e-8;
        let rate = 25e6;
        let r = Resampler::new(dt, rate, 200, 8);
        let n = r.input_len();
        let f = 2e6;
        let input: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 * dt).sin()).collect();
        let out = r.apply(&input);
        for (k, v) in out.iter().enumerate().skip(10) {
            let exact = (2.0 * PI * f * k as f64 / rate).sin();
            assert!((v - exact).abs() < 2e-3, "k={k} {v} {exact}");
        }
        let ones = r.apply(&vec![1.0; n]);
        assert!(ones.iter().skip(10).all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn stability_is_checked_before_stepping() {
        let mut s = make_desk_scale(8).unwrap();
        s.grid.dt *= 3.0;
        let ph = PhantomSample::homogeneous(&s.grid, 1540.0, BACKGROUND_DENSITY);
        let src = make_tone_burst(&s.grid, &s.transducer);
        match simulate(&ph, &s.grid, &s.transducer, &src) {
            Err(Error::Stability { courant, limit }) => assert!(courant > limit),
            other => panic!("expected stability error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_source_diverges() {
        let s = make_desk_scale(8).unwrap();
        let ph = PhantomSample::homogeneous(&s.grid, 1540.0, BACKGROUND_DENSITY);
        let mut src = make_tone_burst(&s.grid, &s.transducer);
        src.waveform[5] = f64::NAN;
        assert!(matches!(
            simulate(&ph, &s.grid, &s.transducer, &src),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn rejects_bad_media() {
        let s = make_desk_scale(8).unwrap();
        let mut ph = PhantomSample::homogeneous(&s.grid, 1540.0, BACKGROUND_DENSITY);
        ph.density[[3, 3]] = 0.0;
        let src = make_tone_burst(&s.grid, &s.transducer);
        assert!(matches!(
            simulate(&ph, &s.grid, &s.transducer, &src),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn interior_energy_is_conserved() {
        let s = make_desk_scale(8).unwrap();
        let g = &s.grid;
        let ph = PhantomSample::homogeneous(g, 1540.0, BACKGROUND_DENSITY);
        let mut sim = Simulation::new(&ph, g, s.transducer.center_freq, &SolverOptions::lossless()).unwrap();
        let (ci, cj) = (g.nz / 2, g.nx / 2);
        for i in ci - 10..ci + 10 {
            for j in cj - 10..cj + 10 {
                let r2 = ((i as f64 - ci as f64).powi(2) + (j as f64 - cj as f64).powi(2)) / 9.0;
                sim.add_pressure(i, j, (-r2).exp());
            }
        }
        let e0 = sim.step_with_energy();
        // stop well before the pulse reaches the absorbing layer
        let steps = (0.6 * (g.nz / 2 - 20) as f64 * g.dx / (1540.0 * g.dt)) as usize;
        for _ in 0..steps {
            let e = sim.step_with_energy();
            assert!((e - e0).abs() < 1e-9 * e0, "{e} vs {e0}");
        }
    }
}
