//! Delay-and-sum b-mode reconstruction for a zero-degree plane-wave shot.

use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Setup;
use crate::sigproc::analytic_signal;
use crate::solver::RfFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformConfig {
    pub f_number: f64,
    pub dyn_range_db: f64,
    pub interpolation: Interpolation,
    /// Added to every delay; `None` uses half the transmit burst, which
    /// puts the envelope peak of a point echo at the reflector depth.
    pub time_offset: Option<f64>,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        BeamformConfig {
            f_number: 1.5,
            dyn_range_db: 45.0,
            interpolation: Interpolation::Linear,
            time_offset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BmodeImage {
    /// Decibels in `[-dyn_range, 0]`, depth along rows.
    pub pixels: Array2<f64>,
    pub dyn_range: f64,
    pub assumed_sos: f64,
}

impl BmodeImage {
    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|db| ((db + self.dyn_range) / self.dyn_range * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w) = self.pixels.dim();
        let img = image::GrayImage::from_raw(w as u32, h as u32, self.to_gray8())
            .ok_or_else(|| Error::input("image buffer size mismatch"))?;
        img.save(path)?;
        Ok(())
    }
}

/// Two-way delay for a pixel at lateral `x`, depth `z` and an element at `xe`.
pub fn two_way_delay(x: f64, z: f64, xe: f64, c: f64) -> f64 {
    (z + ((x - xe).powi(2) + z * z).sqrt()) / c
}

/// Pixel centres of the field-of-view lattice as `(lateral, depth)` in
/// metres, lateral relative to the array centre.
pub fn pixel_coordinates(setup: &Setup) -> (Vec<f64>, Vec<f64>) {
    let (g, t, fov) = (&setup.grid, &setup.transducer, &setup.fov);
    let centre = t.center_column(g);
    let xs = (0..fov.pixels)
        .map(|j| (fov.pixel_column(g, j) - centre) * g.dx)
        .collect();
    let zs = (0..fov.pixels).map(|i| fov.pixel_row(g, i) * g.dx).collect();
    (xs, zs)
}

fn sample_at(trace: &[f64], pos: f64, interp: Interpolation) -> f64 {
    let n = trace.len();
    if !(pos >= 0.0) || pos > (n - 1) as f64 {
        return 0.0;
    }
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    let at = |k: isize| -> f64 {
        if k < 0 || k as usize >= n {
            0.0
        } else {
            trace[k as usize]
        }
    };
    match interp {
        Interpolation::Linear => {
            let b = if i + 1 < n { trace[i + 1] } else { trace[i] };
            trace[i] + f * (b - trace[i])
        }
        Interpolation::Cubic => {
            let k = i as isize;
            let (p0, p1, p2, p3) = (at(k - 1), at(k), at(k + 1), at(k + 2));
            // Catmull-Rom
            p1 + 0.5
                * f
                * (p2 - p0 + f * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + f * (3.0 * (p1 - p2) + p3 - p0)))
        }
    }
}

/// Delay-and-sum image on the field-of-view lattice (rows = depth).
///
/// Each pixel sums, over the elements within the `f_number` receive
/// aperture, the channel sample at the plane-wave two-way delay.
pub fn das(frame: &RfFrame, setup: &Setup, assumed_sos: f64, cfg: &BeamformConfig) -> Result<Array2<f64>> {
    let t = &setup.transducer;
    if !(assumed_sos > 0.0) {
        return Err(Error::input(format!("assumed_sos must be positive (got {assumed_sos})")));
    }
    if frame.n_channels() != t.n_channels {
        return Err(Error::input(format!(
            "frame has {} channels, array has {}",
            frame.n_channels(),
            t.n_channels
        )));
    }
    let offset = cfg
        .time_offset
        .unwrap_or(0.5 * t.tx_cycles as f64 / t.center_freq);
    let (xs, zs) = pixel_coordinates(setup);
    let fs = frame.sample_rate;
    let traces: Vec<&[f64]> = frame
        .samples
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("row-major frame"))
        .collect();
    let mut image = Array2::zeros((zs.len(), xs.len()));
    image
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(zs.par_iter())
        .for_each(|(mut row, &z)| {
            let half_aperture = z / (2.0 * cfg.f_number);
            for (v, &x) in row.iter_mut().zip(&xs) {
                let mut acc = 0.0;
                for (trace, &xe) in traces.iter().zip(&t.element_positions) {
                    if (x - xe).abs() > half_aperture {
                        continue;
                    }
                    let tau = two_way_delay(x, z, xe, assumed_sos) + offset;
                    acc += sample_at(trace, tau * fs, cfg.interpolation);
                }
                *v = acc;
            }
        });
    Ok(image)
}

/// Magnitude of the analytic signal along depth, column by column.
pub fn envelope(image: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(image.dim());
    for (src, mut dst) in image.columns().into_iter().zip(out.columns_mut()) {
        let col: Vec<f64> = src.to_vec();
        for (d, a) in dst.iter_mut().zip(analytic_signal(&col)) {
            *d = a.norm();
        }
    }
    out
}

/// `20 log10(env / max)`, clipped below at `-dyn_range_db`.
pub fn log_compress(env: &Array2<f64>, dyn_range_db: f64, assumed_sos: f64) -> Result<BmodeImage> {
    if env.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::input("envelope must be finite and non-negative"));
    }
    let peak = env.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::input("cannot log-compress an all-zero envelope"));
    }
    let pixels = env.mapv(|v| {
        if v == 0.0 {
            -dyn_range_db
        } else {
            (20.0 * (v / peak).log10()).max(-dyn_range_db)
        }
    });
    Ok(BmodeImage {
        pixels,
        dyn_range: dyn_range_db,
        assumed_sos,
    })
}

/// DAS, envelope detection and log compression.
pub fn bmode(frame: &RfFrame, setup: &Setup, assumed_sos: f64, cfg: &BeamformConfig) -> Result<BmodeImage> {
    let rf = das(frame, setup, assumed_sos, cfg)?;
    log_compress(&envelope(&rf), cfg.dyn_range_db, assumed_sos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_desk_scale;
    use crate::solver::Provenance;
    use std::f64::consts::PI;

    #[test]
    fn delay_directly_below_element() {
        assert_eq!(two_way_delay(0.01, 0.02, 0.01, 1540.0), 2.0 * 0.02 / 1540.0);
    }

    #[test]
    fn zero_rf_gives_zero_image() {
        let s = make_desk_scale(8).unwrap();
        let frame = RfFrame {
            samples: Array2::zeros((s.transducer.n_channels, s.transducer.rx_samples)),
            sample_rate: s.transducer.rx_sample_rate,
            provenance: Provenance::default(),
        };
        let img = das(&frame, &s, 1540.0, &BeamformConfig::default()).unwrap();
        assert_eq!(img.dim(), (384, 384));
        assert!(img.iter().all(|v| *v == 0.0));
        assert!(matches!(
            log_compress(&envelope(&img), 45.0, 1540.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn envelope_of_tone_is_flat() {
        let n = 384;
        let col: Vec<f64> = (0..n).map(|i| (2.0 * PI * 24.0 * i as f64 / n as f64).sin()).collect();
        let img = Array2::from_shape_fn((n, 3), |(i, _)| col[i]);
        let env = envelope(&img);
        for i in 20..n - 20 {
            assert!((env[[i, 1]] - 1.0).abs() < 1e-9);
            assert!(env[[i, 1]] >= col[i].abs() - 1e-9);
        }
        assert!(envelope(&Array2::zeros((8, 2))).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn log_compress_clip_boundary() {
        let floor = 10f64.powf(-45.0 / 20.0);
        let env = Array2::from_shape_vec((1, 3), vec![1.0, floor, floor / 2.0]).unwrap();
        let b = log_compress(&env, 45.0, 1540.0).unwrap();
        assert_eq!(b.pixels[[0, 0]], 0.0);
        assert!((b.pixels[[0, 1]] + 45.0).abs() < 1e-12);
        assert_eq!(b.pixels[[0, 2]], -45.0);
        assert!(b.pixels.iter().all(|v| *v <= 0.0));
    }

    #[test]
    fn cubic_and_linear_agree_on_lines() {
        let trace: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        for pos in [1.25, 3.5, 6.75] {
            let l = sample_at(&trace, pos, Interpolation::Linear);
            let c = sample_at(&trace, pos, Interpolation::Cubic);
            assert!((l - (2.0 * pos + 1.0)).abs() < 1e-12);
            assert!((c - l).abs() < 1e-12);
        }
        assert_eq!(sample_at(&trace, -0.5, Interpolation::Linear), 0.0);
        assert_eq!(sample_at(&trace, 9.5, Interpolation::Linear), 0.0);
    }
}
