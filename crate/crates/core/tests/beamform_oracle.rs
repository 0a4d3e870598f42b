//! Point reflectors imaged through the full forward chain land where they
//! were placed, and move with the assumed speed of sound.

use std::sync::OnceLock;

use ndarray::Array2;
use sosgen_core::beamform::{das, envelope, pixel_coordinates, BeamformConfig};
use sosgen_core::calibration::{add_density_disk, local_peak};
use sosgen_core::geometry::{make_desk_scale, Setup};
use sosgen_core::phantom::{PhantomSample, BACKGROUND_DENSITY};
use sosgen_core::sigproc::{preprocess, PreprocConfig};
use sosgen_core::solver::{make_tone_burst, simulate, RfFrame};

const C0: f64 = 1540.0;
/// (lateral, depth) in mm.
const REFLECTORS: [(f64, f64); 6] = [(-10.0, 8.0), (8.0, 13.0), (0.0, 19.0), (-6.0, 26.0), (0.0, 30.0), (10.0, 34.0)];
const SEARCH: f64 = 3e-3;

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| make_desk_scale(4).unwrap())
}

fn frame() -> &'static RfFrame {
    static F: OnceLock<RfFrame> = OnceLock::new();
    F.get_or_init(|| {
        let s = setup();
        let (g, t) = (&s.grid, &s.transducer);
        let mut ph = PhantomSample::homogeneous(g, C0, BACKGROUND_DENSITY);
        for ij in indices() {
            add_density_disk(&mut ph, ij, 1, 2.0);
        }
        let raw = simulate(&ph, g, t, &make_tone_burst(g, t)).unwrap();
        let cfg = PreprocConfig {
            add_quant_noise: false,
            ..PreprocConfig::for_setup(s)
        };
        preprocess(raw, &cfg, 0).unwrap()
    })
}

fn image(sos: f64) -> Array2<f64> {
    envelope(&das(frame(), setup(), sos, &BeamformConfig::default()).unwrap())
}

/// Grid indices of each reflector centre.
fn indices() -> Vec<(usize, usize)> {
    let g = &setup().grid;
    let centre = setup().transducer.center_column(g);
    REFLECTORS
        .iter()
        .map(|&(x, z)| ((z * 1e-3 / g.dx).round() as usize, (centre + x * 1e-3 / g.dx).round() as usize))
        .collect()
}

/// Where the reflectors actually sit once snapped to the grid.
fn placed() -> Vec<(f64, f64)> {
    let g = &setup().grid;
    let centre = setup().transducer.center_column(g);
    indices()
        .into_iter()
        .map(|(i, j)| ((j as f64 - centre) * g.dx, i as f64 * g.dx))
        .collect()
}

#[test]
fn reflectors_are_localised_within_a_wavelength() {
    let s = setup();
    let lambda = s.transducer.wavelength(C0);
    let img = image(C0);
    let (xs, zs) = pixel_coordinates(s);
    for (x0, z0) in placed() {
        let (x, z) = local_peak(&img, &xs, &zs, (x0, z0), SEARCH);
        let err = (x - x0).hypot(z - z0);
        println!("reflector ({:.2}, {:.2}) mm imaged at ({:.2}, {:.2}) mm, error {:.3} mm", x0 * 1e3, z0 * 1e3, x * 1e3, z * 1e3, err * 1e3);
        assert!(err <= lambda, "error {err:e} m > wavelength {lambda:e} m");
    }
}

/// Depth centroid of the half-maximum lobe through the peak near `(x0, z0)`.
fn axial_centroid(img: &Array2<f64>, xs: &[f64], zs: &[f64], (x0, z0): (f64, f64)) -> f64 {
    let (x, z) = local_peak(img, xs, zs, (x0, z0), SEARCH);
    let j = xs.iter().position(|v| *v == x).unwrap();
    let i = zs.iter().position(|v| *v == z).unwrap();
    let half = 0.5 * img[[i, j]];
    let (mut lo, mut hi) = (i, i);
    while lo > 0 && img[[lo - 1, j]] >= half {
        lo -= 1;
    }
    while hi + 1 < zs.len() && img[[hi + 1, j]] >= half {
        hi += 1;
    }
    let (num, den) = (lo..=hi).fold((0.0, 0.0), |(n, d), k| (n + img[[k, j]] * zs[k], d + img[[k, j]]));
    num / den
}

#[test]
fn faster_assumed_speed_pushes_echoes_deeper() {
    let s = setup();
    let (xs, zs) = pixel_coordinates(s);
    let (slow, fast) = (image(C0), image(1.05 * C0));
    for (x0, z0) in placed().into_iter().skip(2) {
        let za = axial_centroid(&slow, &xs, &zs, (x0, z0));
        let zb = axial_centroid(&fast, &xs, &zs, (x0, 1.05 * z0));
        let ratio = zb / za;
        println!("x {:.1} mm: depth {:.2} mm -> {:.2} mm, ratio {ratio:.4}", x0 * 1e3, za * 1e3, zb * 1e3);
        assert!((ratio - 1.05).abs() <= 0.01);
    }
}

#[test]
fn das_is_linear_in_the_channel_data() {
    let s = make_desk_scale(8).unwrap();
    let (n, m) = (s.transducer.n_channels, s.transducer.rx_samples);
    let mk = |f: &dyn Fn(usize, usize) -> f64| RfFrame {
        samples: Array2::from_shape_fn((n, m), |(c, k)| f(c, k)),
        sample_rate: s.transducer.rx_sample_rate,
        provenance: Default::default(),
    };
    let a = mk(&|c, k| ((c * 7 + k) as f64 * 0.37).sin());
    let b = mk(&|c, k| ((c + 3 * k) as f64 * 0.11).cos());
    let (alpha, beta) = (1.7, -0.4);
    let mix = mk(&|c, k| alpha * a.samples[[c, k]] + beta * b.samples[[c, k]]);
    let cfg = BeamformConfig::default();
    let ia = das(&a, &s, C0, &cfg).unwrap();
    let ib = das(&b, &s, C0, &cfg).unwrap();
    let im = das(&mix, &s, C0, &cfg).unwrap();
    let expected = &ia * alpha + &ib * beta;
    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = (&im - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
    assert!(err < 1e-9, "{err:e}");
}

