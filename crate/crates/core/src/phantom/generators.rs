use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_echogenicity, apply_speckle, fill_scatterers, restrict_to_fov, Echogenicity, Ellipse,
    GeneratorParams, GeneratorTag, PhantomConfig, PhantomSample, AXIAL_RADIUS_RANGE,
    LATERAL_RADIUS_RANGE, ROTATION_RANGE_DEG, SOS_RANGE,
};
use crate::error::{Error, Result};
use crate::geometry::{FieldOfView, GridSpec};
use crate::rng::{self, Stream};

pub const MAX_ELLIPSOIDS: usize = 5;
pub const THICKNESS_RANGE: (f64, f64) = (0.005, 0.02);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsoidParams {
    #[serde(flatten)]
    pub ellipse: Ellipse,
    pub sos_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionSpec {
    pub echogenicity: Echogenicity,
    pub scatterer_fraction: f64,
    /// Offset of the inclusion SoS from its surroundings (m/s).
    pub sos_contrast: f64,
    #[serde(flatten)]
    pub ellipse: Ellipse,
}

impl InclusionSpec {
    /// Circular-ish inclusion centred in the recovered region.
    pub fn centered(
        grid: &GridSpec,
        echogenicity: Echogenicity,
        scatterer_fraction: f64,
        sos_contrast: f64,
        radius_lateral: f64,
        radius_axial: f64,
    ) -> Self {
        InclusionSpec {
            echogenicity,
            scatterer_fraction,
            sos_contrast,
            ellipse: Ellipse {
                center_z: 0.5 * (grid.nz - 1) as f64 * grid.dx,
                center_x: 0.5 * (grid.nx - 1) as f64 * grid.dx,
                radius_lateral,
                radius_axial,
                rotation_deg: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.6).contains(&self.scatterer_fraction) {
            return Err(Error::input(format!(
                "scatterer_fraction {} outside [0, 0.6]",
                self.scatterer_fraction
            )));
        }
        if !(self.ellipse.radius_lateral > 0.0 && self.ellipse.radius_axial > 0.0) {
            return Err(Error::input("inclusion radii must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    pub layer_top_depth: f64,
    pub thickness: f64,
    pub layer_sos: f64,
    pub layer_echogenicity: Echogenicity,
    pub embedded_inclusion: InclusionSpec,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

fn random_class(rng: &mut impl Rng) -> Echogenicity {
    Echogenicity::ALL[rng.random_range(0..Echogenicity::ALL.len())]
}

fn blank(grid: &GridSpec, background: f64, cfg: &PhantomConfig, seed: u64) -> PhantomSample {
    let mut s = PhantomSample::homogeneous(grid, background, cfg.background_density);
    s.attenuation_coeff = cfg.attenuation_coeff;
    s.alpha_power = cfg.alpha_power;
    s.bona = cfg.bona;
    s.seed = seed;
    s
}

/// Homogeneous background with one to five rotated elliptical inclusions
/// anywhere in the medium; later inclusions overwrite earlier ones.
/// Inclusions are hyperechoic.
pub fn gen_ellipsoids(seed: u64, grid: &GridSpec, cfg: &PhantomConfig) -> PhantomSample {
    let mut rng = rng::stream(seed, Stream::Geometry);
    let background = uniform(&mut rng, SOS_RANGE);
    let count = rng.random_range(1..=MAX_ELLIPSOIDS);
    let ellipsoids: Vec<EllipsoidParams> = (0..count)
        .map(|_| EllipsoidParams {
            ellipse: Ellipse {
                center_z: rng.random_range(0.0..grid.depth()),
                center_x: rng.random_range(0.0..grid.width()),
                radius_lateral: uniform(&mut rng, LATERAL_RADIUS_RANGE),
                radius_axial: uniform(&mut rng, AXIAL_RADIUS_RANGE),
                rotation_deg: uniform(&mut rng, ROTATION_RANGE_DEG),
            },
            sos_value: uniform(&mut rng, SOS_RANGE),
        })
        .collect();

    let mut sample = blank(grid, background, cfg, seed);
    let mut region = Array2::from_elem((grid.nz, grid.nx), false);
    for p in &ellipsoids {
        p.ellipse.for_each_inside(grid, |i, j| {
            sample.base_sos[[i, j]] = p.sos_value;
            region[[i, j]] = true;
        });
    }
    sample.generator_tag = GeneratorTag::Ellipsoids;
    sample.params = GeneratorParams::Ellipsoids {
        background_sos: background,
        ellipsoids,
    };

    let sample = apply_speckle(sample, seed, cfg);
    let mut sample = apply_echogenicity(sample, &region, Echogenicity::Hyperechoic, seed, cfg)
        .expect("region mask has the grid shape");
    sample.inclusion_mask = Some(restrict_to_fov(&region, &FieldOfView::for_grid(grid)));
    sample
}

/// One horizontal layer of random thickness with an elliptical inclusion
/// fully inside it. Layer and inclusion get independent random SoS and
/// echogenicity classes.
pub fn gen_layered(seed: u64, grid: &GridSpec, cfg: &PhantomConfig) -> PhantomSample {
    let fov = FieldOfView::for_grid(grid);
    let mut rng = rng::stream(seed, Stream::Geometry);
    let background = uniform(&mut rng, SOS_RANGE);
    let thickness = uniform(&mut rng, THICKNESS_RANGE);
    let top = rng.random_range(0.0..=grid.depth() - thickness);
    let layer_sos = uniform(&mut rng, SOS_RANGE);
    let layer_class = random_class(&mut rng);

    let half = 0.5 * thickness;
    let radius_axial = uniform(&mut rng, (AXIAL_RADIUS_RANGE.0, AXIAL_RADIUS_RANGE.1.min(half)));
    let rotation_deg = uniform(&mut rng, ROTATION_RANGE_DEG);
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    // largest lateral radius whose rotated axial extent still fits in the layer
    let lateral_cap = if sin.abs() > 1e-12 {
        ((half * half - (radius_axial * cos).powi(2)).max(0.0)).sqrt() / sin.abs()
    } else {
        f64::INFINITY
    };
    let radius_lateral = uniform(
        &mut rng,
        (
            LATERAL_RADIUS_RANGE.0.min(lateral_cap),
            LATERAL_RADIUS_RANGE.1.min(lateral_cap),
        ),
    );
    let mut ellipse = Ellipse {
        center_z: 0.0,
        center_x: 0.0,
        radius_lateral,
        radius_axial,
        rotation_deg,
    };
    let h = ellipse.axial_half_extent().min(half);
    ellipse.center_z = rng.random_range(top + h..=top + thickness - h);
    let fov_left = fov.origin as f64 * grid.dx;
    ellipse.center_x = rng.random_range(fov_left..=fov_left + fov.width);
    let inclusion_sos = uniform(&mut rng, SOS_RANGE);
    let inclusion_class = random_class(&mut rng);
    let layer = LayerParams {
        layer_top_depth: top,
        thickness,
        layer_sos,
        layer_echogenicity: layer_class,
        embedded_inclusion: InclusionSpec {
            echogenicity: inclusion_class,
            scatterer_fraction: cfg.scatterer_fraction,
            sos_contrast: inclusion_sos - layer_sos,
            ellipse,
        },
    };

    let mut sample = blank(grid, background, cfg, seed);
    let layer_mask = Array2::from_shape_fn((grid.nz, grid.nx), |(i, _)| {
        let z = i as f64 * grid.dx;
        z >= top && z <= top + thickness
    });
    Zip::from(&mut sample.base_sos)
        .and(&layer_mask)
        .for_each(|s, &m| {
            if m {
                *s = layer_sos;
            }
        });
    let inclusion = ellipse.mask(grid);
    ellipse.for_each_inside(grid, |i, j| sample.base_sos[[i, j]] = inclusion_sos);
    sample.generator_tag = GeneratorTag::Layered;
    sample.params = GeneratorParams::Layered {
        background_sos: background,
        layer,
    };

    let sample = apply_speckle(sample, seed, cfg);
    let layer_only = Zip::from(&layer_mask)
        .and(&inclusion)
        .map_collect(|&l, &i| l && !i);
    let sample = apply_echogenicity(sample, &layer_only, layer_class, seed.wrapping_add(1), cfg)
        .expect("mask shapes match");
    let mut sample =
        apply_echogenicity(sample, &inclusion, inclusion_class, seed.wrapping_add(2), cfg)
            .expect("mask shapes match");
    sample.inclusion_mask = Some(restrict_to_fov(&inclusion, &fov));
    sample.skin_or_layer_mask = Some(layer_mask);
    sample
}

/// Homogeneous background with one inclusion realising the requested
/// echogenicity class, scatterer fraction and SoS contrast. The background
/// keeps the default scatterer fraction.
pub fn gen_single_inclusion(
    spec: &InclusionSpec,
    background_sos: f64,
    seed: u64,
    grid: &GridSpec,
    cfg: &PhantomConfig,
) -> Result<PhantomSample> {
    spec.validate()?;
    let inside = background_sos + spec.sos_contrast;
    for v in [background_sos, inside] {
        if !(SOS_RANGE.0..=SOS_RANGE.1).contains(&v) {
            return Err(Error::input(format!(
                "SoS {v} m/s outside [{}, {}]",
                SOS_RANGE.0, SOS_RANGE.1
            )));
        }
    }
    let mut sample = blank(grid, background_sos, cfg, seed);
    let region = spec.ellipse.mask(grid);
    spec.ellipse
        .for_each_inside(grid, |i, j| sample.base_sos[[i, j]] = inside);
    sample.generator_tag = GeneratorTag::SingleInclusion;
    sample.params = GeneratorParams::SingleInclusion {
        background_sos,
        spec: *spec,
    };

    let mut sample = apply_speckle(sample, seed, cfg);
    let mut rng = rng::stream(seed, Stream::RegionScatter);
    fill_scatterers(
        &mut sample.scatter,
        Some(&region),
        spec.scatterer_fraction,
        cfg,
        &mut rng,
    );
    sample.render_sos();
    let mut sample = apply_echogenicity(sample, &region, spec.echogenicity, seed, cfg)?;
    sample.inclusion_mask = Some(restrict_to_fov(&region, &FieldOfView::for_grid(grid)));
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::super::PERTURBED_SOS_BOUNDS;
    use super::*;
    use crate::geometry::make_desk_scale;

    fn desk8() -> (GridSpec, PhantomConfig) {
        let s = make_desk_scale(8).unwrap();
        let cfg = PhantomConfig::for_setup(&s);
        (s.grid, cfg)
    }

    fn within_bounds(s: &PhantomSample) -> bool {
        let (lo, hi) = PERTURBED_SOS_BOUNDS;
        s.base_sos.iter().all(|&v| (SOS_RANGE.0..=SOS_RANGE.1).contains(&v))
            && s.sos.iter().all(|&v| v >= lo && v <= hi)
    }

    #[test]
    fn ellipsoids_are_deterministic() {
        let (g, cfg) = desk8();
        let a = gen_ellipsoids(42, &g, &cfg);
        let b = gen_ellipsoids(42, &g, &cfg);
        assert_eq!(a, b);
        assert_ne!(a.base_sos, gen_ellipsoids(43, &g, &cfg).base_sos);
        assert!(within_bounds(&a));
        assert_eq!(a.generator_tag, GeneratorTag::Ellipsoids);
    }

    #[test]
    fn ellipsoid_mask_matches_geometry() {
        let (g, cfg) = desk8();
        let fov = FieldOfView::for_grid(&g);
        for seed in 0..10 {
            let s = gen_ellipsoids(seed, &g, &cfg);
            let GeneratorParams::Ellipsoids { ellipsoids, .. } = &s.params else {
                panic!("wrong params");
            };
            let mask = s.inclusion_mask.as_ref().unwrap();
            for ((i, j), &m) in mask.indexed_iter() {
                let (z, x) = (i as f64 * g.dx, j as f64 * g.dx);
                let in_fov = j >= fov.origin && j < fov.origin + g.nz;
                let inside = ellipsoids.iter().any(|p| {
                    let e = &p.ellipse;
                    // independent re-evaluation of the rotated ellipse equation
                    let t = e.rotation_deg.to_radians();
                    let u = (x - e.center_x) * t.cos() + (z - e.center_z) * t.sin();
                    let v = -(x - e.center_x) * t.sin() + (z - e.center_z) * t.cos();
                    (u / e.radius_lateral).powi(2) + (v / e.radius_axial).powi(2) <= 1.0
                });
                assert_eq!(m, inside && in_fov, "seed {seed} at ({i},{j})");
            }
        }
    }

    #[test]
    fn later_ellipsoids_overwrite() {
        let (g, cfg) = desk8();
        for seed in 0..30 {
            let s = gen_ellipsoids(seed, &g, &cfg);
            let GeneratorParams::Ellipsoids { ellipsoids, .. } = &s.params else {
                unreachable!()
            };
            for ((i, j), &v) in s.base_sos.indexed_iter() {
                let (z, x) = (i as f64 * g.dx, j as f64 * g.dx);
                if let Some(last) = ellipsoids.iter().rev().find(|p| p.ellipse.contains(z, x)) {
                    assert_eq!(v, last.sos_value);
                }
            }
        }
    }

    #[test]
    fn layered_inclusion_stays_in_layer() {
        let (g, cfg) = desk8();
        for seed in 0..50 {
            let s = gen_layered(seed, &g, &cfg);
            let GeneratorParams::Layered { layer, .. } = s.params else {
                unreachable!()
            };
            assert!((0.005..=0.02).contains(&layer.thickness));
            let e = layer.embedded_inclusion.ellipse;
            assert!(e.center_z - e.axial_half_extent() >= layer.layer_top_depth - 1e-12);
            assert!(
                e.center_z + e.axial_half_extent()
                    <= layer.layer_top_depth + layer.thickness + 1e-12
            );
            let layer_mask = s.skin_or_layer_mask.as_ref().unwrap();
            for ((i, j), &m) in e.mask(&g).indexed_iter() {
                if m {
                    assert!(layer_mask[[i, j]]);
                }
            }
            assert!(within_bounds(&s));
        }
    }

    #[test]
    fn single_inclusion_zero_contrast_keeps_constant_structure() {
        let (g, cfg) = desk8();
        let spec = InclusionSpec::centered(&g, Echogenicity::Isoechoic, 0.10, 0.0, 6e-3, 6e-3);
        let s = gen_single_inclusion(&spec, 1540.0, 3, &g, &cfg).unwrap();
        assert!(s.base_sos.iter().all(|&v| v == 1540.0));
        let mask = s.inclusion_mask.as_ref().unwrap();
        assert!(mask.iter().any(|&m| m));
        assert_eq!(*mask, spec.ellipse.mask(&g));
    }

    #[test]
    fn single_inclusion_anechoic_has_no_scatterers() {
        let (g, cfg) = desk8();
        let spec = InclusionSpec::centered(&g, Echogenicity::Anechoic, 0.10, 30.0, 5e-3, 5e-3);
        let s = gen_single_inclusion(&spec, 1500.0, 3, &g, &cfg).unwrap();
        assert_eq!(s.scatterers_in(&spec.ellipse.mask(&g)), 0);
        assert!(s.scatterer_count() > 0);
    }

    #[test]
    fn single_inclusion_doubles_scatterers() {
        let (g, cfg) = desk8();
        let hyper = InclusionSpec::centered(&g, Echogenicity::Hyperechoic, 0.20, 50.0, 6e-3, 6e-3);
        let region = hyper.ellipse.mask(&g);
        let n_region = region.iter().filter(|&&m| m).count() as f64;
        let mut total = 0usize;
        for seed in 0..100 {
            let s = gen_single_inclusion(&hyper, 1500.0, seed, &g, &cfg).unwrap();
            total += s.scatterers_in(&region);
        }
        let mean = total as f64 / 100.0;
        let expected = 0.20 * n_region;
        // sd of the mean over 100 draws: sqrt(n p (1-p) / 100)
        let sd = (n_region * 0.2 * 0.8 / 100.0).sqrt();
        assert!((mean - expected).abs() < 4.0 * sd, "{mean} vs {expected}");
        let ratio = mean / (0.10 * n_region);
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn single_inclusion_validates_spec() {
        let (g, cfg) = desk8();
        let bad = InclusionSpec::centered(&g, Echogenicity::Isoechoic, 0.7, 0.0, 5e-3, 5e-3);
        assert!(gen_single_inclusion(&bad, 1500.0, 0, &g, &cfg).is_err());
        let out_of_range =
            InclusionSpec::centered(&g, Echogenicity::Isoechoic, 0.1, 80.0, 5e-3, 5e-3);
        assert!(gen_single_inclusion(&out_of_range, 1650.0, 0, &g, &cfg).is_err());
    }
}
