//! Simulation grid, linear array and field-of-view conventions.
//!
//! Coordinates: grid node `(i, j)` sits at depth `i * dx` and lateral
//! position `j * dx`. The array lies on row 0. Lateral element positions are
//! reported relative to the array centre, which sits at column
//! [`TransducerSpec::center_column`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAPER_NZ: usize = 1536;
pub const PAPER_NX: usize = 3072;
pub const DEPTH_EXTENT: f64 = 0.038;
pub const LATERAL_EXTENT: f64 = 0.076;
pub const PAPER_DT: f64 = 5.7692e-9;
pub const DECLARED_CFL: f64 = 0.3;
/// Speed used to derive desk-scale time steps from [`DECLARED_CFL`].
pub const DESK_REFERENCE_SPEED: f64 = 1700.0;
pub const REFERENCE_SOS: f64 = 1540.0;

pub const PAPER_CHANNELS: usize = 192;
pub const PAPER_PITCH: f64 = 200e-6;
pub const ACTIVE_POINTS: usize = 7;
pub const KERF_POINTS: usize = 1;
pub const PAPER_CENTER_FREQ: f64 = 5e6;
pub const TX_CYCLES: u32 = 2;
pub const PAPER_RX_RATE: f64 = 40e6;
pub const PAPER_RX_SAMPLES: usize = 2048;

/// Side length of the ground-truth and b-mode lattices.
pub const IMAGE_PIXELS: usize = 384;

/// Half-width of the receive resampling kernel, in output samples.
pub(crate) const RESAMPLE_HALF_WIDTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nz: usize,
    pub nx: usize,
    pub dx: f64,
    pub dt: f64,
    pub cfl: f64,
    pub n_time_steps: usize,
}

impl GridSpec {
    pub fn depth(&self) -> f64 {
        self.dx * self.nz as f64
    }

    pub fn width(&self) -> f64 {
        self.dx * self.nx as f64
    }

    /// Courant number `c * dt / dx` realised at speed `c`.
    pub fn courant_at(&self, c: f64) -> f64 {
        c * self.dt / self.dx
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz == 0 || self.nx == 0 {
            return Err(Error::config("grid must have at least one point per axis"));
        }
        if !(self.dx > 0.0 && self.dt > 0.0) || !self.dx.is_finite() || !self.dt.is_finite() {
            return Err(Error::config("grid spacing and time step must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransducerSpec {
    pub n_channels: usize,
    /// Nominal pitch of the physical probe; the grid realises
    /// `(points_per_channel + kerf_points) * dx`.
    pub pitch: f64,
    pub points_per_channel: usize,
    pub kerf_points: usize,
    pub center_freq: f64,
    pub tx_cycles: u32,
    pub rx_sample_rate: f64,
    pub rx_samples: usize,
    /// Element centres relative to the array centre (metres).
    pub element_positions: Vec<f64>,
}

impl TransducerSpec {
    pub fn points_per_pitch(&self) -> usize {
        self.points_per_channel + self.kerf_points
    }

    pub fn aperture_points(&self) -> usize {
        self.n_channels * self.points_per_pitch()
    }

    /// First grid column of the array footprint.
    pub fn first_column(&self, grid: &GridSpec) -> usize {
        (grid.nx - self.aperture_points()) / 2
    }

    /// Grid columns covered by the active points of element `k`.
    pub fn element_columns(&self, grid: &GridSpec, k: usize) -> std::ops::Range<usize> {
        let start = self.first_column(grid) + k * self.points_per_pitch();
        start..start + self.points_per_channel
    }

    /// Column (possibly fractional) of the array centre.
    pub fn center_column(&self, grid: &GridSpec) -> f64 {
        let first = self.first_column(grid) as f64 + self.active_center_offset();
        let last = first + ((self.n_channels - 1) * self.points_per_pitch()) as f64;
        0.5 * (first + last)
    }

    fn active_center_offset(&self) -> f64 {
        (self.points_per_channel as f64 - 1.0) / 2.0
    }

    /// Receive window length in seconds.
    pub fn rx_duration(&self) -> f64 {
        self.rx_samples as f64 / self.rx_sample_rate
    }

    pub fn wavelength(&self, c: f64) -> f64 {
        c / self.center_freq
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.n_channels == 0 || self.points_per_channel == 0 {
            return Err(Error::config("transducer needs at least one active point"));
        }
        if self.aperture_points() > grid.nx {
            return Err(Error::config(format!(
                "array footprint of {} points exceeds the {}-point grid width",
                self.aperture_points(),
                grid.nx
            )));
        }
        if self.element_positions.len() != self.n_channels {
            return Err(Error::config("element_positions length differs from n_channels"));
        }
        if !(self.center_freq > 0.0 && self.rx_sample_rate > 0.0) || self.rx_samples == 0 {
            return Err(Error::config("frequencies and rx_samples must be positive"));
        }
        if self.element_positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("element positions must be strictly increasing"));
        }
        Ok(())
    }
}

/// Element centres for an array laid out on `grid`, relative to the array centre.
pub fn element_positions(
    grid: &GridSpec,
    n_channels: usize,
    points_per_channel: usize,
    kerf_points: usize,
) -> Vec<f64> {
    let per_pitch = (points_per_channel + kerf_points) as f64;
    let half_span = 0.5 * (n_channels as f64 - 1.0) * per_pitch;
    (0..n_channels)
        .map(|k| (k as f64 * per_pitch - half_span) * grid.dx)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldOfView {
    pub width: f64,
    pub depth: f64,
    /// First grid column of the recovered `nz x nz` region.
    pub origin: usize,
    /// Side length of the output lattice (ground truth, b-mode).
    pub pixels: usize,
}

impl FieldOfView {
    pub fn for_grid(grid: &GridSpec) -> Self {
        FieldOfView {
            width: grid.depth(),
            depth: grid.depth(),
            origin: (grid.nx - grid.nz) / 2,
            pixels: IMAGE_PIXELS,
        }
    }

    /// Grid points per output pixel along each axis.
    pub fn points_per_pixel(&self, grid: &GridSpec) -> f64 {
        grid.nz as f64 / self.pixels as f64
    }

    /// Fractional grid row of the centre of output row `i`.
    pub fn pixel_row(&self, grid: &GridSpec, i: usize) -> f64 {
        (i as f64 + 0.5) * self.points_per_pixel(grid) - 0.5
    }

    /// Fractional grid column of the centre of output column `j`.
    pub fn pixel_column(&self, grid: &GridSpec, j: usize) -> f64 {
        self.origin as f64 + (j as f64 + 0.5) * self.points_per_pixel(grid) - 0.5
    }
}

/// Grid, array and field of view used together by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub grid: GridSpec,
    pub transducer: TransducerSpec,
    pub fov: FieldOfView,
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.transducer.validate(&self.grid)?;
        if self.fov.origin + self.grid.nz > self.grid.nx {
            return Err(Error::config("field of view extends past the grid"));
        }
        Ok(())
    }

    /// Read a setup from JSON; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let setup: Setup = serde_json::from_str(text)?;
        setup.validate()?;
        Ok(setup)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Paper,
    Desk2,
    Desk4,
    Desk8,
}

impl Scale {
    pub fn divisor(self) -> usize {
        match self {
            Scale::Paper => 1,
            Scale::Desk2 => 2,
            Scale::Desk4 => 4,
            Scale::Desk8 => 8,
        }
    }

    pub fn setup(self) -> Setup {
        match self {
            Scale::Paper => make_paper_scale(),
            other => make_desk_scale(other.divisor()).expect("preset divisors are valid"),
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk2" => Ok(Scale::Desk2),
            "desk4" => Ok(Scale::Desk4),
            "desk8" => Ok(Scale::Desk8),
            other => Err(Error::config(format!("unknown scale `{other}`"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Scale::Paper => "paper",
            Scale::Desk2 => "desk2",
            Scale::Desk4 => "desk4",
            Scale::Desk8 => "desk8",
        };
        f.write_str(name)
    }
}

fn time_steps_for(dt: f64, rx_samples: usize, rx_rate: f64) -> usize {
    // the resampler reads a few output periods past the last sample
    let window = (rx_samples + RESAMPLE_HALF_WIDTH) as f64 / rx_rate;
    (window / dt).ceil() as usize + 1
}

fn build(divisor: usize, dt: f64, cfl: f64) -> Setup {
    let nz = PAPER_NZ / divisor;
    let nx = PAPER_NX / divisor;
    let dx = DEPTH_EXTENT / nz as f64;
    let rx_samples = PAPER_RX_SAMPLES / divisor;
    let rx_rate = PAPER_RX_RATE / divisor as f64;
    let n_channels = PAPER_CHANNELS / divisor;
    let grid = GridSpec {
        nz,
        nx,
        dx,
        dt,
        cfl,
        n_time_steps: time_steps_for(dt, rx_samples, rx_rate),
    };
    let transducer = TransducerSpec {
        n_channels,
        pitch: PAPER_PITCH * divisor as f64,
        points_per_channel: ACTIVE_POINTS,
        kerf_points: KERF_POINTS,
        center_freq: PAPER_CENTER_FREQ / divisor as f64,
        tx_cycles: TX_CYCLES,
        rx_sample_rate: rx_rate,
        rx_samples,
        element_positions: element_positions(&grid, n_channels, ACTIVE_POINTS, KERF_POINTS),
    };
    let fov = FieldOfView::for_grid(&grid);
    Setup {
        grid,
        transducer,
        fov,
    }
}

/// Full-resolution configuration: 1536 x 3072 grid, 192 channels, 2048 samples at 40 MHz.
///
/// The time step is taken as given; `cfl` carries the declared value and
/// [`GridSpec::courant_at`] reports what the step realises at a given speed.
pub fn make_paper_scale() -> Setup {
    build(1, PAPER_DT, DECLARED_CFL)
}

/// Reduced configuration preserving the physical extent and points per wavelength.
///
/// Grid counts, channel count, receive samples, centre frequency and receive
/// rate are all divided by `scale_divisor`; `dt` is derived from the declared
/// Courant number at [`DESK_REFERENCE_SPEED`].
pub fn make_desk_scale(scale_divisor: usize) -> Result<Setup> {
    if ![2, 4, 8].contains(&scale_divisor) {
        return Err(Error::config(format!(
            "scale divisor must be one of 2, 4, 8 (got {scale_divisor})"
        )));
    }
    let dx = DEPTH_EXTENT / (PAPER_NZ / scale_divisor) as f64;
    let dt = DECLARED_CFL * dx / DESK_REFERENCE_SPEED;
    Ok(build(scale_divisor, dt, DECLARED_CFL))
}
