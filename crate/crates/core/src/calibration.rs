//! Calibration media and echo measurements for checking the solver and
//! beamformer against time-of-flight and reflection-coefficient arithmetic.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::geometry::{GridSpec, TransducerSpec};
use crate::phantom::PhantomSample;
use crate::sigproc::envelope_1d;

/// Homogeneous medium with a small disk of scaled density at `(i, j)`.
pub fn density_disk(
    grid: &GridSpec,
    sos: f64,
    density: f64,
    (i, j): (usize, usize),
    radius_points: usize,
    factor: f64,
) -> PhantomSample {
    let mut s = PhantomSample::homogeneous(grid, sos, density);
    add_density_disk(&mut s, (i, j), radius_points, factor);
    s
}

pub fn add_density_disk(s: &mut PhantomSample, (i, j): (usize, usize), radius_points: usize, factor: f64) {
    let r = radius_points as i64;
    let (nz, nx) = s.shape();
    for di in -r..=r {
        for dj in -r..=r {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            if di * di + dj * dj <= r * r && a >= 0 && b >= 0 && (a as usize) < nz && (b as usize) < nx {
                s.density[[a as usize, b as usize]] *= factor;
            }
        }
    }
}

/// Grid column under the middle of element `k`.
pub fn element_centre_column(t: &TransducerSpec, grid: &GridSpec, k: usize) -> usize {
    let cols = t.element_columns(grid, k);
    (cols.start + cols.end - 1) / 2
}

/// The transmit burst sampled at the receive rate.
pub fn burst_template(t: &TransducerSpec) -> Vec<f64> {
    let fs = t.rx_sample_rate;
    let n = (t.tx_cycles as f64 / t.center_freq * fs).ceil() as usize;
    (0..n)
        .map(|k| (2.0 * PI * t.center_freq * k as f64 / fs).sin())
        .collect()
}

/// Correlation of `trace` with `template` at lags `0..trace.len()`.
pub fn correlate(trace: &[f64], template: &[f64]) -> Vec<f64> {
    let n = trace.len();
    (0..n)
        .map(|l| {
            template
                .iter()
                .zip(&trace[l..])
                .map(|(t, v)| t * v)
                .sum()
        })
        .collect()
}

fn parabolic(a: f64, b: f64, c: f64) -> f64 {
    let d = a - 2.0 * b + c;
    if d == 0.0 {
        0.0
    } else {
        0.5 * (a - c) / d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoPeak {
    /// Start of the matched burst, seconds.
    pub time: f64,
    /// Envelope of the matched-filter output at the peak.
    pub amplitude: f64,
}

/// Matched-filter echo detection: the envelope of the correlation with the
/// transmit burst, maximised over `[t0, t1]`, refined by a parabola.
pub fn echo_peak(trace: &[f64], template: &[f64], fs: f64, (t0, t1): (f64, f64)) -> EchoPeak {
    let n = trace.len();
    let mut c = correlate(trace, template);
    // zero-pad so the analytic signal does not wrap
    c.resize(2 * n, 0.0);
    let env = envelope_1d(&c);
    let lo = ((t0 * fs).floor().max(1.0) as usize).min(n - 2);
    let hi = ((t1 * fs).ceil() as usize).clamp(lo + 1, n - 1);
    let (mut bi, mut best) = (lo, f64::NEG_INFINITY);
    for (i, &v) in env.iter().enumerate().take(hi).skip(lo) {
        if v > best {
            best = v;
            bi = i;
        }
    }
    let off = parabolic(env[bi - 1], env[bi], env[bi + 1]);
    EchoPeak {
        time: (bi as f64 + off) / fs,
        amplitude: best,
    }
}

/// Delay of `b` relative to `a` in samples, from the peak of their
/// cross-correlation over lags `0..max_lag`.
pub fn relative_delay(a: &[f64], b: &[f64], max_lag: usize) -> f64 {
    let xc = |l: usize| -> f64 { a.iter().zip(&b[l.min(b.len())..]).map(|(x, y)| x * y).sum() };
    let values: Vec<f64> = (0..=max_lag).map(xc).collect();
    let (bi, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    if bi == 0 || bi == max_lag {
        return bi as f64;
    }
    bi as f64 + parabolic(values[bi - 1], values[bi], values[bi + 1])
}

/// Brightest pixel within `half` metres of `(x0, z0)`.
pub fn local_peak(image: &Array2<f64>, xs: &[f64], zs: &[f64], (x0, z0): (f64, f64), half: f64) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, x0, z0);
    for (i, &z) in zs.iter().enumerate() {
        if (z - z0).abs() > half {
            continue;
        }
        for (j, &x) in xs.iter().enumerate() {
            if (x - x0).abs() <= half && image[[i, j]] > best.0 {
                best = (image[[i, j]], x, z);
            }
        }
    }
    (best.1, best.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_peak_finds_a_planted_burst() {
        let fs = 40e6;
        let tmpl: Vec<f64> = (0..16).map(|k| (2.0 * PI * 5e6 * k as f64 / fs).sin()).collect();
        let mut trace = vec![0.0; 512];
        for (k, v) in tmpl.iter().enumerate() {
            trace[200 + k] = 0.5 * v;
        }
        let p = echo_peak(&trace, &tmpl, fs, (100.0 / fs, 300.0 / fs));
        assert!((p.time * fs - 200.0).abs() < 0.5, "{}", p.time * fs);
    }

    #[test]
    fn relative_delay_of_shifted_pulse() {
        let g = |t: f64| (-(t / 4.0).powi(2)).exp();
        let a: Vec<f64> = (0..200).map(|i| g(i as f64 - 50.0)).collect();
        let b: Vec<f64> = (0..200).map(|i| g(i as f64 - 80.3)).collect();
        assert!((relative_delay(&a, &b, 60) - 30.3).abs() < 0.05);
    }

    #[test]
    fn disk_scales_density() {
        let g = crate::geometry::make_desk_scale(8).unwrap().grid;
        let s = density_disk(&g, 1540.0, 1000.0, (50, 60), 2, 2.0);
        assert_eq!(s.density[[50, 60]], 2000.0);
        assert_eq!(s.density[[52, 60]], 2000.0);
        assert_eq!(s.density[[52, 62]], 1000.0);
        assert_eq!(s.density.iter().filter(|v| **v > 1000.0).count(), 13);
    }
}
