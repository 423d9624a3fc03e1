//! Synthetic metasurface unit library and its layout over the sensor grid.
//!
//! Real devices ship measured transmission spectra for each unit type; here
//! each spectrum is a randomized mixture of Lorentzian resonances on a dense
//! 1 nm grid, box-averaged onto the band grid and affinely mapped (jointly
//! over the whole library) into `[0.05, 0.95]`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format;
use crate::types::{storage_precision, MaskStack, WavelengthGrid};

pub const DEFAULT_UNIT_COUNT: usize = 400;
pub const DEFAULT_LIBRARY_SEED: u64 = 400;
pub const TRANSMITTANCE_FLOOR: f64 = 0.05;
pub const TRANSMITTANCE_CEIL: f64 = 0.95;

const LIBRARY_STREAM: u64 = 0;
const LAYOUT_STREAM: u64 = 1;
const MAX_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct UnitLibrary {
    unit_count: usize,
    grid: WavelengthGrid,
    spectra: Vec<f64>,
    seed: u64,
}

impl UnitLibrary {
    pub fn unit_count(&self) -> usize {
        self.unit_count
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spectrum(&self, unit: usize) -> &[f64] {
        let b = self.grid.count();
        &self.spectra[unit * b..(unit + 1) * b]
    }

    pub fn spectra(&self) -> impl Iterator<Item = &[f64]> {
        self.spectra.chunks(self.grid.count())
    }
}

/// Spatial arrangement of unit types over the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayoutMode {
    /// Independent uniform draw per pixel.
    #[default]
    Random,
    /// One `period x period` super-pixel drawn once and tiled.
    Repeating { period: usize },
}

fn lorentzian_mixture(rng: &mut ChaCha8Rng, grid: &WavelengthGrid) -> Vec<f64> {
    let lo = grid.start_nm() - 20.0;
    let hi = grid.end_nm() + 20.0;
    let span = (grid.end_nm() - grid.start_nm()).max(1.0);
    let baseline = rng.random_range(0.2..0.8);
    let tilt = rng.random_range(-0.3..0.3);
    let terms: Vec<(f64, f64, f64)> = (0..rng.random_range(3..=8))
        .map(|_| {
            let centre = rng.random_range(lo..=hi);
            let half_width = rng.random_range(8.0..60.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let amplitude = sign * rng.random_range(0.3..1.0);
            (centre, half_width, amplitude)
        })
        .collect();
    let eval = |lambda: f64| {
        let t = (lambda - grid.start_nm()) / span;
        baseline
            + tilt * t
            + terms
                .iter()
                .map(|&(c, w, a)| a * w * w / ((lambda - c).powi(2) + w * w))
                .sum::<f64>()
    };
    // Box-average the 1 nm samples falling inside each band.
    let step = grid.step_nm();
    let samples = (step.floor() as usize).max(1);
    grid.wavelengths()
        .map(|centre| {
            if samples == 1 {
                return eval(centre);
            }
            let left = centre - step / 2.0;
            (0..samples).map(|s| eval(left + 0.5 + s as f64)).sum::<f64>() / samples as f64
        })
        .collect()
}

fn all_distinct(spectra: &[f64], bands: usize) -> bool {
    let rows: Vec<&[f64]> = spectra.chunks(bands).collect();
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            if rows[a] == rows[b] {
                return false;
            }
        }
    }
    true
}

fn to_transmittance(v: f64, min: f64, range: f64) -> f64 {
    let unit = if range > 0.0 { (v - min) / range } else { 0.5 };
    let t = TRANSMITTANCE_FLOOR + (TRANSMITTANCE_CEIL - TRANSMITTANCE_FLOOR) * unit;
    storage_precision(t).clamp(TRANSMITTANCE_FLOOR, TRANSMITTANCE_CEIL)
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Maps each spectrum onto the full transmittance range. With fewer than
/// three bands that would collapse every spectrum onto the same two or one
/// values, so short grids share one library-wide map instead.
fn rescale(raw: &[f64], bands: usize) -> Vec<f64> {
    if bands < 3 {
        let (min, max) = min_max(raw);
        return raw.iter().map(|&v| to_transmittance(v, min, max - min)).collect();
    }
    raw.chunks(bands)
        .flat_map(|s| {
            let (min, max) = min_max(s);
            s.iter().map(move |&v| to_transmittance(v, min, max - min))
        })
        .collect()
}

pub fn synthesize_library(unit_count: usize, grid: WavelengthGrid, seed: u64) -> Result<UnitLibrary> {
    if unit_count == 0 {
        return Err(Error::InvalidParameter("unit_count must be at least 1".into()));
    }
    let bands = grid.count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LIBRARY_STREAM);
    for _ in 0..MAX_ATTEMPTS {
        let mut raw: Vec<f64> = Vec::with_capacity(unit_count * bands);
        for _ in 0..unit_count {
            raw.extend(lorentzian_mixture(&mut rng, &grid));
        }
        let spectra = rescale(&raw, bands);
        if all_distinct(&spectra, bands) {
            return Ok(UnitLibrary {
                unit_count,
                grid,
                spectra,
                seed,
            });
        }
    }
    Err(Error::InvalidParameter(format!(
        "could not draw {unit_count} distinct spectra on a {bands}-band grid"
    )))
}

/// Mean cosine similarity over all unordered pairs of library spectra.
pub fn mean_pairwise_correlation(lib: &UnitLibrary) -> f64 {
    let norms: Vec<f64> = lib
        .spectra()
        .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let rows: Vec<&[f64]> = lib.spectra().collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            let dot: f64 = rows[a].iter().zip(rows[b]).map(|(x, y)| x * y).sum();
            total += dot / (norms[a] * norms[b]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        1.0
    } else {
        total / pairs as f64
    }
}

/// Unit type index for every pixel, row-major.
pub fn unit_layout(lib: &UnitLibrary, width: usize, height: usize, mode: LayoutMode) -> Result<Vec<u32>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "layout needs positive dimensions, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(lib.seed);
    rng.set_stream(LAYOUT_STREAM);
    let units = lib.unit_count as u32;
    match mode {
        LayoutMode::Random => Ok((0..width * height).map(|_| rng.random_range(0..units)).collect()),
        LayoutMode::Repeating { period } => {
            if period == 0 {
                return Err(Error::InvalidParameter("repeat period must be at least 1".into()));
            }
            let cells = period * period;
            let tile: Vec<u32> = if lib.unit_count >= cells {
                rand::seq::index::sample(&mut rng, lib.unit_count, cells)
                    .into_iter()
                    .map(|u| u as u32)
                    .collect()
            } else {
                (0..cells).map(|_| rng.random_range(0..units)).collect()
            };
            Ok((0..height)
                .flat_map(|j| (0..width).map(move |i| (i, j)))
                .map(|(i, j)| tile[(j % period) * period + (i % period)])
                .collect())
        }
    }
}

pub fn layout_masks(lib: &UnitLibrary, width: usize, height: usize) -> Result<MaskStack> {
    layout_masks_with(lib, width, height, LayoutMode::Random)
}

pub fn layout_masks_with(lib: &UnitLibrary, width: usize, height: usize, mode: LayoutMode) -> Result<MaskStack> {
    let layout = unit_layout(lib, width, height, mode)?;
    let mut data = Vec::with_capacity(width * height * lib.grid.count());
    for &unit in &layout {
        data.extend_from_slice(lib.spectrum(unit as usize));
    }
    MaskStack::new(width, height, lib.grid, data)
}

/// Loads a measured (or previously synthesized) calibration stack and checks
/// it against the expected band count.
pub fn load_calibration(path: impl AsRef<Path>, bands: usize) -> Result<MaskStack> {
    let masks = format::read_masks(path)?;
    if masks.bands() != bands {
        return Err(Error::DimensionMismatch(format!(
            "calibration has {} bands, expected {bands}",
            masks.bands()
        )));
    }
    Ok(masks)
}
