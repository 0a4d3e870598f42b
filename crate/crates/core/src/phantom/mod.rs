//! Digital phantoms: co-registered SoS and density media with speckle,
//! echogenicity classes and inclusion masks.
//!
//! A phantom keeps its structural SoS map (`base_sos`, the ground-truth
//! source) separate from the simulated medium (`sos`), which additionally
//! carries the SoS-domain scatterers. Scatterers live in a dense field of
//! multiplicative factors where `0.0` marks "no scatterer".

mod ellipse;
mod generators;
mod t2us;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FieldOfView, GridSpec, Setup};
use crate::rng::{self, Stream};

pub use ellipse::{
    Ellipse, AXIAL_RADIUS_RANGE, LATERAL_RADIUS_RANGE, ROTATION_RANGE_DEG,
};
pub use generators::{
    gen_ellipsoids, gen_layered, gen_single_inclusion, EllipsoidParams, InclusionSpec,
    LayerParams, MAX_ELLIPSOIDS, THICKNESS_RANGE,
};
pub use t2us::{gen_t2us, gen_t2us_with, GrayImage, T2usConfig};

pub const SOS_RANGE: (f64, f64) = (1300.0, 1700.0);
pub const BACKGROUND_DENSITY: f64 = 1020.0;
pub const ATTENUATION_COEFF: f64 = 0.75;
pub const ALPHA_POWER: f64 = 1.5;
pub const BONA: f64 = 9.63;

/// Lowest and highest SoS any generated medium may contain after speckle.
pub const PERTURBED_SOS_BOUNDS: (f64, f64) = (1300.0 * 0.944, 1700.0 * 1.055);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorTag {
    Ellipsoids,
    T2us,
    Layered,
    SingleInclusion,
    /// Hand-built media (tests, calibration targets).
    Custom,
}

impl fmt::Display for GeneratorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GeneratorTag::Ellipsoids => "ellipsoids",
            GeneratorTag::T2us => "t2us",
            GeneratorTag::Layered => "layered",
            GeneratorTag::SingleInclusion => "single_inclusion",
            GeneratorTag::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Echogenicity {
    Anechoic,
    Hypoechoic,
    Isoechoic,
    Hyperechoic,
}

impl Echogenicity {
    pub const ALL: [Echogenicity; 4] = [
        Echogenicity::Anechoic,
        Echogenicity::Hypoechoic,
        Echogenicity::Isoechoic,
        Echogenicity::Hyperechoic,
    ];
}

impl FromStr for Echogenicity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anechoic" => Ok(Echogenicity::Anechoic),
            "hypoechoic" => Ok(Echogenicity::Hypoechoic),
            "isoechoic" => Ok(Echogenicity::Isoechoic),
            "hyperechoic" => Ok(Echogenicity::Hyperechoic),
            other => Err(Error::input(format!("unknown echogenicity class `{other}`"))),
        }
    }
}

/// Parameter draws that produced a phantom; stored in dataset manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorParams {
    Ellipsoids {
        background_sos: f64,
        ellipsoids: Vec<EllipsoidParams>,
    },
    T2us {
        patch_row: usize,
        patch_col: usize,
        hyper_fraction_coin: bool,
    },
    Layered {
        background_sos: f64,
        layer: LayerParams,
    },
    SingleInclusion {
        background_sos: f64,
        spec: InclusionSpec,
    },
    Custom,
}

/// Medium and speckle constants shared by all generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// Frequency defining the speckle wavelength.
    pub center_freq: f64,
    pub background_density: f64,
    pub reflectors_per_wavelength_sq: f64,
    /// Relative density variation of a reflector (`0.03` = ±3 %).
    pub density_variation: f64,
    /// Fraction of grid points carrying SoS-domain scatterers.
    pub scatterer_fraction: f64,
    pub scatterer_factor_range: (f64, f64),
    /// Fraction of in-region scatterers touched by an echogenicity change.
    pub echo_fraction: f64,
    pub echo_factor_range: (f64, f64),
    pub attenuation_coeff: f64,
    pub alpha_power: f64,
    pub bona: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            center_freq: crate::geometry::PAPER_CENTER_FREQ,
            background_density: BACKGROUND_DENSITY,
            reflectors_per_wavelength_sq: 2.0,
            density_variation: 0.03,
            scatterer_fraction: 0.10,
            scatterer_factor_range: (1.00, 1.02),
            echo_fraction: 0.10,
            echo_factor_range: (1.044, 1.055),
            attenuation_coeff: ATTENUATION_COEFF,
            alpha_power: ALPHA_POWER,
            bona: BONA,
        }
    }
}

impl PhantomConfig {
    pub fn for_setup(setup: &Setup) -> Self {
        PhantomConfig {
            center_freq: setup.transducer.center_freq,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    /// Grid spacing the fields were generated on.
    pub dx: f64,
    /// Structural SoS before scatterers; the ground-truth source.
    pub base_sos: Array2<f64>,
    /// Simulated SoS: `base_sos` times the scatterer factor where present.
    pub sos: Array2<f64>,
    pub density: Array2<f64>,
    /// SoS-domain scatterer factors; `0.0` where there is none.
    pub scatter: Array2<f64>,
    pub density_reflectors: usize,
    pub background_sos: f64,
    pub attenuation_coeff: f64,
    pub alpha_power: f64,
    pub bona: f64,
    /// Inclusion interiors within the recovered region.
    pub inclusion_mask: Option<Array2<bool>>,
    pub skin_or_layer_mask: Option<Array2<bool>>,
    pub seed: u64,
    pub generator_tag: GeneratorTag,
    pub params: GeneratorParams,
}

impl PhantomSample {
    /// Homogeneous medium without speckle.
    pub fn homogeneous(grid: &GridSpec, sos: f64, density: f64) -> Self {
        let shape = (grid.nz, grid.nx);
        PhantomSample {
            dx: grid.dx,
            base_sos: Array2::from_elem(shape, sos),
            sos: Array2::from_elem(shape, sos),
            density: Array2::from_elem(shape, density),
            scatter: Array2::zeros(shape),
            density_reflectors: 0,
            background_sos: sos,
            attenuation_coeff: ATTENUATION_COEFF,
            alpha_power: ALPHA_POWER,
            bona: BONA,
            inclusion_mask: None,
            skin_or_layer_mask: None,
            seed: 0,
            generator_tag: GeneratorTag::Custom,
            params: GeneratorParams::Custom,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.sos.dim()
    }

    /// Recompute `sos` from `base_sos` and the scatterer field.
    pub fn render_sos(&mut self) {
        Zip::from(&mut self.sos)
            .and(&self.base_sos)
            .and(&self.scatter)
            .for_each(|s, &b, &f| *s = if f != 0.0 { b * f } else { b });
    }

    pub fn scatterer_count(&self) -> usize {
        self.scatter.iter().filter(|&&f| f != 0.0).count()
    }

    pub fn scatterers_in(&self, mask: &Array2<bool>) -> usize {
        Zip::from(&self.scatter)
            .and(mask)
            .fold(0, |n, &f, &m| n + usize::from(m && f != 0.0))
    }

    pub(crate) fn check_mask(&self, mask: &Array2<bool>) -> Result<()> {
        if mask.dim() != self.shape() {
            return Err(Error::input(format!(
                "mask shape {:?} differs from phantom shape {:?}",
                mask.dim(),
                self.shape()
            )));
        }
        Ok(())
    }
}

/// Add density-domain reflectors and SoS-domain scatterers.
///
/// Reflectors: Poisson count with mean `reflectors_per_wavelength_sq` per
/// wavelength squared (wavelength at the configured frequency and the
/// phantom's background SoS), uniform positions, each scaling the local
/// density by a factor uniform in `1 ± density_variation`.
/// Scatterers: each grid point independently with probability
/// `scatterer_fraction`, factor uniform in `scatterer_factor_range`.
pub fn apply_speckle(mut sample: PhantomSample, seed: u64, cfg: &PhantomConfig) -> PhantomSample {
    let (nz, nx) = sample.shape();
    sample.density.fill(cfg.background_density);
    let mut rng = rng::stream(seed, Stream::DensitySpeckle);
    let area = (nz * nx) as f64 * sample.dx * sample.dx;
    let mean = reflector_mean(sample.background_sos, area, cfg);
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize
    } else {
        0
    };
    let v = cfg.density_variation;
    for _ in 0..count {
        let i = rng.random_range(0..nz);
        let j = rng.random_range(0..nx);
        let factor = rng.random_range(1.0 - v..=1.0 + v);
        sample.density[[i, j]] = cfg.background_density * factor;
    }
    sample.density_reflectors = count;

    let mut rng = rng::stream(seed, Stream::SosSpeckle);
    fill_scatterers(&mut sample.scatter, None, cfg.scatterer_fraction, cfg, &mut rng);
    sample.render_sos();
    log::trace!(
        "speckle: {count} reflectors, {} scatterers",
        sample.scatterer_count()
    );
    sample
}

/// Expected reflector count over `area` square metres.
pub fn reflector_mean(background_sos: f64, area: f64, cfg: &PhantomConfig) -> f64 {
    let wavelength = background_sos / cfg.center_freq;
    cfg.reflectors_per_wavelength_sq * area / (wavelength * wavelength)
}

/// Redraw scatterers with probability `fraction` over `region` (or everywhere).
pub(crate) fn fill_scatterers(
    scatter: &mut Array2<f64>,
    region: Option<&Array2<bool>>,
    fraction: f64,
    cfg: &PhantomConfig,
    rng: &mut impl Rng,
) {
    let (lo, hi) = cfg.scatterer_factor_range;
    for (idx, f) in scatter.indexed_iter_mut() {
        if region.is_some_and(|m| !m[idx]) {
            continue;
        }
        *f = if rng.random::<f64>() < fraction {
            rng.random_range(lo..=hi)
        } else {
            0.0
        };
    }
}

/// Change the echogenicity of the region `mask`.
///
/// Hyper- and hypoechoic select exactly `round(echo_fraction * n)` of the
/// `n` in-mask scatterers and set their factor to `u` or `1/u` with `u`
/// uniform in `echo_factor_range`. Anechoic removes every in-mask scatterer
/// and density reflector. Isoechoic is the identity.
pub fn apply_echogenicity(
    mut sample: PhantomSample,
    mask: &Array2<bool>,
    class: Echogenicity,
    seed: u64,
    cfg: &PhantomConfig,
) -> Result<PhantomSample> {
    sample.check_mask(mask)?;
    match class {
        Echogenicity::Isoechoic => return Ok(sample),
        Echogenicity::Anechoic => {
            Zip::from(&mut sample.scatter)
                .and(&mut sample.density)
                .and(mask)
                .for_each(|f, d, &m| {
                    if m {
                        *f = 0.0;
                        *d = cfg.background_density;
                    }
                });
        }
        Echogenicity::Hyperechoic | Echogenicity::Hypoechoic => {
            let candidates: Vec<(usize, usize)> = sample
                .scatter
                .indexed_iter()
                .filter(|&(idx, &f)| mask[idx] && f != 0.0)
                .map(|(idx, _)| idx)
                .collect();
            let k = (cfg.echo_fraction * candidates.len() as f64).round() as usize;
            let mut rng = rng::stream(seed, Stream::Echogenicity);
            let mut chosen = index::sample(&mut rng, candidates.len(), k).into_vec();
            chosen.sort_unstable();
            let (lo, hi) = cfg.echo_factor_range;
            for c in chosen {
                let u: f64 = rng.random_range(lo..=hi);
                let factor = if class == Echogenicity::Hyperechoic { u } else { 1.0 / u };
                sample.scatter[candidates[c]] = factor;
            }
        }
    }
    sample.render_sos();
    Ok(sample)
}

/// Ground-truth SoS map at output resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SosMapGT {
    pub values: Array2<f64>,
    /// Metres per pixel.
    pub resolution: f64,
}

/// Crop the recovered `nz x nz` region of the structural SoS map and resize
/// it bilinearly to the field-of-view lattice.
pub fn gt_downsample(sample: &PhantomSample, fov: &FieldOfView) -> Result<SosMapGT> {
    let (nz, nx) = sample.shape();
    if fov.origin + nz > nx {
        return Err(Error::input(format!(
            "recovered region [{}, {}) exceeds phantom width {nx}",
            fov.origin,
            fov.origin + nz
        )));
    }
    let crop = sample
        .base_sos
        .slice(ndarray::s![.., fov.origin..fov.origin + nz]);
    let values = resize_bilinear(&crop, fov.pixels, fov.pixels);
    Ok(SosMapGT {
        values,
        resolution: fov.depth / fov.pixels as f64,
    })
}

/// Pixel-centre aligned bilinear resize, no antialiasing.
pub fn resize_bilinear(src: &ndarray::ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let rows: Vec<(usize, usize, f64)> = (0..out_h).map(|i| source_taps(i, h, out_h)).collect();
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|j| source_taps(j, w, out_w)).collect();
    Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let (r0, r1, wr) = rows[i];
        let (c0, c1, wc) = cols[j];
        let top = lerp(src[[r0, c0]], src[[r0, c1]], wc);
        let bottom = lerp(src[[r1, c0]], src[[r1, c1]], wc);
        lerp(top, bottom, wr)
    })
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    // exact when a == b
    a + w * (b - a)
}

fn source_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Nearest-node sampling of a grid mask on the field-of-view lattice.
pub fn mask_downsample(mask: &Array2<bool>, grid: &GridSpec, fov: &FieldOfView) -> Array2<bool> {
    Array2::from_shape_fn((fov.pixels, fov.pixels), |(i, j)| {
        let r = fov.pixel_row(grid, i).round().clamp(0.0, (grid.nz - 1) as f64) as usize;
        let c = fov.pixel_column(grid, j).round().clamp(0.0, (grid.nx - 1) as f64) as usize;
        mask[[r, c]]
    })
}

/// Restrict a full-grid mask to the recovered region's columns.
pub(crate) fn restrict_to_fov(mask: &Array2<bool>, fov: &FieldOfView) -> Array2<bool> {
    let (nz, _) = mask.dim();
    let mut out = mask.clone();
    for ((_, j), m) in out.indexed_iter_mut() {
        if j < fov.origin || j >= fov.origin + nz {
            *m = false;
        }
    }
    out
}
