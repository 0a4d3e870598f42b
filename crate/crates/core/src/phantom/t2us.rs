//! Grayscale-image derived media.
//!
//! A random patch of a grayscale slice is smoothed, resized onto the grid
//! and rescaled linearly onto the SoS range. Optionally a tenth of the
//! pixels in the fast (> 1550 m/s) or slow (< 1450 m/s) tissue become
//! brighter scatterers.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apply_speckle, GeneratorParams, GeneratorTag, PhantomConfig, PhantomSample, SOS_RANGE};
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::rng::{self, Stream};

/// Grayscale image with intensities in `[0, 1]` (1 = full scale).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage(pub Array2<f64>);

impl GrayImage {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.into_luma16();
        let (w, h) = img.dimensions();
        let data = Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
            f64::from(img.get_pixel(j as u32, i as u32).0[0]) / f64::from(u16::MAX)
        });
        Ok(GrayImage(data))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct T2usConfig {
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub smoothing_sigma: f64,
    /// Intensity (fraction of full scale) below which a pixel counts as black.
    pub black_level: f64,
    /// Patches with more black pixels than this fraction are rejected.
    pub max_black_fraction: f64,
    pub max_attempts: usize,
    pub fast_threshold: f64,
    pub slow_threshold: f64,
}

impl Default for T2usConfig {
    fn default() -> Self {
        T2usConfig {
            patch_rows: 384,
            patch_cols: 768,
            smoothing_sigma: 4.0,
            black_level: 0.05,
            max_black_fraction: 0.20,
            max_attempts: 100,
            fast_threshold: 1550.0,
            slow_threshold: 1450.0,
        }
    }
}

pub fn gen_t2us(
    image: &GrayImage,
    seed: u64,
    grid: &GridSpec,
    hyper_fraction_coin: bool,
    cfg: &PhantomConfig,
) -> Result<PhantomSample> {
    gen_t2us_with(image, seed, grid, hyper_fraction_coin, cfg, &T2usConfig::default())
}

pub fn gen_t2us_with(
    image: &GrayImage,
    seed: u64,
    grid: &GridSpec,
    hyper_fraction_coin: bool,
    cfg: &PhantomConfig,
    t2us: &T2usConfig,
) -> Result<PhantomSample> {
    let (h, w) = image.dim();
    let (ph, pw) = (t2us.patch_rows, t2us.patch_cols);
    if h < ph || w < pw {
        return Err(Error::input(format!(
            "image of {h}x{w} pixels is smaller than the {ph}x{pw} patch"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Patch);
    let (row, col) = pick_patch(&image.0.view(), ph, pw, t2us, &mut rng).ok_or_else(|| {
        Error::Generation(format!(
            "no patch passed the black-region test after {} attempts",
            t2us.max_attempts
        ))
    })?;
    let patch = image.0.slice(s![row..row + ph, col..col + pw]);
    let smoothed = gaussian_smooth(&patch, t2us.smoothing_sigma);
    let resized = resize_nearest(&smoothed.view(), grid.nz, grid.nx);
    let base = rescale(&resized, SOS_RANGE);

    let background = base.mean().expect("non-empty grid");
    let mut sample = PhantomSample::homogeneous(grid, background, cfg.background_density);
    sample.base_sos = base;
    sample.attenuation_coeff = cfg.attenuation_coeff;
    sample.alpha_power = cfg.alpha_power;
    sample.bona = cfg.bona;
    sample.seed = seed;
    sample.generator_tag = GeneratorTag::T2us;
    sample.params = GeneratorParams::T2us {
        patch_row: row,
        patch_col: col,
        hyper_fraction_coin,
    };
    let mut sample = apply_speckle(sample, seed, cfg);

    if hyper_fraction_coin {
        let region: Vec<(usize, usize)> = sample
            .base_sos
            .indexed_iter()
            .filter(|&(_, &v)| v > t2us.fast_threshold || v < t2us.slow_threshold)
            .map(|(idx, _)| idx)
            .collect();
        let k = (cfg.echo_fraction * region.len() as f64).round() as usize;
        let mut rng = rng::stream(seed, Stream::Echogenicity);
        let mut chosen = index::sample(&mut rng, region.len(), k).into_vec();
        chosen.sort_unstable();
        let (lo, hi) = cfg.echo_factor_range;
        for c in chosen {
            sample.scatter[region[c]] = rng.random_range(lo..=hi);
        }
        sample.render_sos();
    }
    Ok(sample)
}

fn pick_patch(
    image: &ArrayView2<f64>,
    ph: usize,
    pw: usize,
    cfg: &T2usConfig,
    rng: &mut impl Rng,
) -> Option<(usize, usize)> {
    let (h, w) = image.dim();
    let limit = cfg.max_black_fraction * (ph * pw) as f64;
    for _ in 0..cfg.max_attempts {
        let row = rng.random_range(0..=h - ph);
        let col = rng.random_range(0..=w - pw);
        let black = image
            .slice(s![row..row + ph, col..col + pw])
            .iter()
            .filter(|&&v| v < cfg.black_level)
            .count();
        if black as f64 <= limit {
            return Some((row, col));
        }
    }
    None
}

/// Separable Gaussian blur, kernel half-width `ceil(2 sigma)`, edge replication.
pub(crate) fn gaussian_smooth(src: &ArrayView2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return src.to_owned();
    }
    let radius = (2.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = src.dim();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let rows = Array2::from_shape_fn((h, w), |(i, j)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &wt)| wt * src[[i, clamp(j as isize + k as isize - radius, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(i, j)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &wt)| wt * rows[[clamp(i as isize + k as isize - radius, h), j]])
            .sum::<f64>()
    })
}

pub(crate) fn resize_nearest(src: &ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let pick = |dst: usize, n_src: usize, n_dst: usize| {
        (((dst as f64 + 0.5) * n_src as f64 / n_dst as f64).floor() as usize).min(n_src - 1)
    };
    Array2::from_shape_fn((out_h, out_w), |(i, j)| src[[pick(i, h, out_h), pick(j, w, out_w)]])
}

/// Linear map of `[min, max]` onto `range`; a constant input maps to the midpoint.
pub(crate) fn rescale(src: &Array2<f64>, (lo, hi): (f64, f64)) -> Array2<f64> {
    let min = src.iter().copied().fold(f64::INFINITY, f64::min);
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Array2::from_elem(src.dim(), 0.5 * (lo + hi));
    }
    src.mapv(|v| {
        if v == max {
            hi
        } else {
            lo + (v - min) / (max - min) * (hi - lo)
        }
    })
}
