//! Procedural spectral scenes, augmentation and RGB rendering.

mod cie;

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use cie::{cmf_at, srgb_gamma, CMF_1931, D65_WHITE, XYZ_TO_SRGB};

use crate::error::{Error, Result};
use crate::types::{storage_precision, Dims, SpectralCube, WavelengthGrid};

pub const DEFAULT_SCENE_SEED: u64 = 7;
pub const DEFAULT_STEP_EDGE_SEED: u64 = 11;

/// Gaussian-mixture parameters for one region spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumModel {
    pub min_components: usize,
    pub max_components: usize,
    pub center_nm: (f64, f64),
    /// Gaussian standard deviation range.
    pub width_nm: (f64, f64),
    /// Peak value of the spectrum after scaling.
    pub peak: (f64, f64),
}

impl Default for SpectrumModel {
    fn default() -> Self {
        Self {
            min_components: 3,
            max_components: 5,
            center_nm: (450.0, 700.0),
            width_nm: (10.0, 80.0),
            peak: (0.3, 1.0),
        }
    }
}

impl SpectrumModel {
    fn validate(&self) -> Result<()> {
        let ranges = [self.center_nm, self.width_nm, self.peak];
        if self.min_components == 0
            || self.min_components > self.max_components
            || ranges.iter().any(|&(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite())
            || self.width_nm.0 <= 0.0
            || self.peak.0 <= 0.0
            || self.peak.1 > 1.0
        {
            return Err(Error::InvalidParameter(format!("invalid spectrum model {self:?}")));
        }
        Ok(())
    }

    /// Draws one spectrum sampled on `grid`.
    pub fn sample(&self, grid: &WavelengthGrid, rng: &mut impl Rng) -> Vec<f64> {
        let n = rng.random_range(self.min_components..=self.max_components);
        let comps: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(self.center_nm.0..=self.center_nm.1),
                    rng.random_range(self.width_nm.0..=self.width_nm.1),
                    rng.random_range(0.2..=1.0),
                )
            })
            .collect();
        let peak = rng.random_range(self.peak.0..=self.peak.1);
        let raw: Vec<f64> = grid
            .wavelengths()
            .map(|nm| {
                comps
                    .iter()
                    .map(|&(c, s, a)| a * (-0.5 * ((nm - c) / s).powi(2)).exp())
                    .sum()
            })
            .collect();
        let max = raw.iter().cloned().fold(0.0f64, f64::max);
        let scale = if max > 0.0 { peak / max } else { 0.0 };
        raw.iter().map(|v| storage_precision((v * scale).clamp(0.0, 1.0))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub grid: WavelengthGrid,
    pub regions: usize,
    pub spectra: SpectrumModel,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            grid: WavelengthGrid::default(),
            regions: 8,
            spectra: SpectrumModel::default(),
            seed: DEFAULT_SCENE_SEED,
        }
    }
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, bands: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            width,
            height,
            grid: WavelengthGrid::visible(bands)?,
            seed,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("scene must be at least 1x1".into()));
        }
        if self.regions == 0 {
            return Err(Error::InvalidParameter("scene needs at least one region".into()));
        }
        self.spectra.validate()
    }
}

/// A generated scene with its region partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cube: SpectralCube,
    /// Region index per pixel, row-major.
    pub labels: Vec<u32>,
    pub spectra: Vec<Vec<f64>>,
}

/// Voronoi partition with one Gaussian-mixture spectrum per cell.
pub fn generate_scene_detailed(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sites: Vec<(f64, f64)> = (0..spec.regions)
        .map(|_| {
            (
                rng.random_range(0.0..spec.width as f64),
                rng.random_range(0.0..spec.height as f64),
            )
        })
        .collect();
    let spectra: Vec<Vec<f64>> = (0..spec.regions).map(|_| spec.spectra.sample(&spec.grid, &mut rng)).collect();

    let mut labels = Vec::with_capacity(spec.width * spec.height);
    for j in 0..spec.height {
        for i in 0..spec.width {
            let (px, py) = (i as f64 + 0.5, j as f64 + 0.5);
            let mut best = (f64::INFINITY, 0u32);
            for (r, &(sx, sy)) in sites.iter().enumerate() {
                let d = (px - sx).powi(2) + (py - sy).powi(2);
                if d < best.0 {
                    best = (d, r as u32);
                }
            }
            labels.push(best.1);
        }
    }
    let mut data = Vec::with_capacity(spec.width * spec.height * spec.grid.count());
    for &l in &labels {
        data.extend_from_slice(&spectra[l as usize]);
    }
    let cube = SpectralCube::new(spec.width, spec.height, spec.grid, data)?;
    Ok(Scene { cube, labels, spectra })
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SpectralCube> {
    generate_scene_detailed(spec).map(|s| s.cube)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Two flat halves split by a vertical edge at `width / 2`.
///
/// The two spectra are redrawn until their cosine similarity is below 0.95.
pub fn step_edge_scene(width: usize, height: usize, grid: WavelengthGrid, seed: u64) -> Result<SpectralCube> {
    if width < 2 || height == 0 {
        return Err(Error::InvalidParameter("step-edge scene needs width >= 2".into()));
    }
    let model = SpectrumModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = model.sample(&grid, &mut rng);
    let mut right = model.sample(&grid, &mut rng);
    let mut tries = 0;
    while grid.count() > 1 && cosine(&left, &right) >= 0.95 {
        tries += 1;
        if tries > 1000 {
            return Err(Error::InvalidParameter("could not draw distinct step-edge spectra".into()));
        }
        right = model.sample(&grid, &mut rng);
    }
    let edge = width / 2;
    SpectralCube::from_fn(width, height, grid, |i, _, k| if i < edge { left[k] } else { right[k] })
}

/// Light-source spectrum used to re-light scenes during augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Illuminant {
    pub name: String,
    pub spectrum: Vec<f64>,
}

const ILLUMINANT_FLOOR: f64 = 1e-3;

impl Illuminant {
    pub fn flat(grid: &WavelengthGrid) -> Self {
        Self {
            name: "flat".into(),
            spectrum: vec![1.0; grid.count()],
        }
    }

    /// Narrow blue emitter at 455 nm plus a broad phosphor lobe at 550 nm.
    pub fn led_like(grid: &WavelengthGrid) -> Self {
        let g = |nm: f64, c: f64, s: f64| (-0.5 * ((nm - c) / s).powi(2)).exp();
        Self::normalized("led-like", grid.wavelengths().map(|nm| g(nm, 455.0, 10.0) + 0.6 * g(nm, 550.0, 50.0)))
    }

    /// Quadratic fit to a 6500 K daylight curve over 450–700 nm.
    pub fn daylight_like(grid: &WavelengthGrid) -> Self {
        Self::normalized(
            "daylight-like",
            grid.wavelengths().map(|nm| {
                let t = (nm - 450.0) / 250.0;
                (117.0 - 22.23 * t - 23.17 * t * t) / 117.0
            }),
        )
    }

    pub fn by_name(name: &str, grid: &WavelengthGrid) -> Result<Self> {
        match name {
            "flat" => Ok(Self::flat(grid)),
            "led-like" | "led" => Ok(Self::led_like(grid)),
            "daylight-like" | "daylight" => Ok(Self::daylight_like(grid)),
            other => Err(Error::InvalidParameter(format!(
                "unknown illuminant {other:?} (expected flat, led-like or daylight-like)"
            ))),
        }
    }

    fn normalized(name: &str, values: impl Iterator<Item = f64>) -> Self {
        let raw: Vec<f64> = values.collect();
        let peak = raw.iter().cloned().fold(0.0f64, f64::max);
        Self {
            name: name.into(),
            spectrum: raw.iter().map(|v| (v / peak).max(ILLUMINANT_FLOOR)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentOp {
    /// Crop to `width x height` at an offset drawn from the augmentation seed.
    Crop { width: usize, height: usize },
    /// Counter-clockwise rotation by `quarter_turns * 90°`.
    Rotate { quarter_turns: u8 },
    /// Rotation by a multiple of 90° drawn from the augmentation seed.
    RandomRotation,
    Illuminate(Illuminant),
}

fn crop(cube: &SpectralCube, x0: usize, y0: usize, width: usize, height: usize) -> Result<SpectralCube> {
    let b = cube.bands();
    let mut data = Vec::with_capacity(width * height * b);
    for j in y0..y0 + height {
        for i in x0..x0 + width {
            data.extend_from_slice(cube.spectrum(i, j));
        }
    }
    SpectralCube::new(width, height, *cube.grid(), data)
}

fn rotate_ccw(cube: &SpectralCube) -> Result<SpectralCube> {
    let (w, h) = (cube.width(), cube.height());
    let mut data = Vec::with_capacity(cube.data().len());
    // New image is h wide and w tall; new (i, j) reads old (w-1-j, i).
    for j in 0..w {
        for i in 0..h {
            data.extend_from_slice(cube.spectrum(w - 1 - j, i));
        }
    }
    SpectralCube::new(h, w, *cube.grid(), data)
}

/// Applies `ops` in order. Random choices come from one stream seeded by `seed`.
pub fn augment(cube: &SpectralCube, ops: &[AugmentOp], seed: u64) -> Result<SpectralCube> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = cube.clone();
    for op in ops {
        out = match op {
            AugmentOp::Crop { width, height } => {
                if *width == 0 || *height == 0 || *width > out.width() || *height > out.height() {
                    return Err(Error::InvalidParameter(format!(
                        "crop {width}x{height} does not fit in {}x{}",
                        out.width(),
                        out.height()
                    )));
                }
                let x0 = rng.random_range(0..=out.width() - width);
                let y0 = rng.random_range(0..=out.height() - height);
                crop(&out, x0, y0, *width, *height)?
            }
            AugmentOp::Rotate { quarter_turns } => {
                let mut c = out;
                for _ in 0..quarter_turns % 4 {
                    c = rotate_ccw(&c)?;
                }
                c
            }
            AugmentOp::RandomRotation => {
                let turns = rng.random_range(0..4u8);
                let mut c = out;
                for _ in 0..turns {
                    c = rotate_ccw(&c)?;
                }
                c
            }
            AugmentOp::Illuminate(ill) => {
                if ill.spectrum.len() != out.bands() {
                    return Err(Error::DimensionMismatch(format!(
                        "illuminant has {} samples, cube has {} bands",
                        ill.spectrum.len(),
                        out.bands()
                    )));
                }
                let mut c = out;
                let b = c.bands();
                for spectrum in c.data_mut().chunks_mut(b) {
                    for (v, l) in spectrum.iter_mut().zip(&ill.spectrum) {
                        *v = storage_precision((*v * l).clamp(0.0, 1.0));
                    }
                }
                c
            }
        };
    }
    Ok(out)
}

/// Per-band weights mapping a spectrum to XYZ. Each CMF channel is divided
/// by its sum over the grid and scaled to the D65 white, so a flat spectrum
/// of value `c` lands on `c * D65`.
fn xyz_weights(grid: &WavelengthGrid) -> Result<Vec<[f64; 3]>> {
    let mut w = Vec::with_capacity(grid.count());
    for nm in grid.wavelengths() {
        w.push(cmf_at(nm).ok_or_else(|| {
            Error::OutsideCmfSupport(format!(
                "{nm} nm lies outside {}..{} nm",
                cie::CMF_START_NM,
                cie::CMF_END_NM
            ))
        })?);
    }
    for c in 0..3 {
        let sum: f64 = w.iter().map(|r| r[c]).sum();
        for r in &mut w {
            r[c] = if sum > 0.0 { r[c] / sum * D65_WHITE[c] } else { 0.0 };
        }
    }
    Ok(w)
}

fn encode(linear: f64) -> u8 {
    (srgb_gamma(linear.clamp(0.0, 1.0)) * 255.0).round() as u8
}

pub fn spectrum_to_rgb(spectrum: &[f64], weights: &[[f64; 3]]) -> [u8; 3] {
    let mut xyz = [0.0; 3];
    for (v, w) in spectrum.iter().zip(weights) {
        for c in 0..3 {
            xyz[c] += v * w[c];
        }
    }
    XYZ_TO_SRGB.map(|row| encode(row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]))
}

pub fn render_rgb(cube: &SpectralCube) -> Result<RgbImage> {
    let weights = xyz_weights(cube.grid())?;
    let mut img = RgbImage::new(cube.width() as u32, cube.height() as u32);
    for j in 0..cube.height() {
        for i in 0..cube.width() {
            img.put_pixel(i as u32, j as u32, Rgb(spectrum_to_rgb(cube.spectrum(i, j), &weights)));
        }
    }
    Ok(img)
}

pub fn write_rgb_png(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    render_rgb(cube)?.save(path.as_ref())?;
    Ok(())
}

/// Channel `k` as an 8-bit grayscale image, values clipped to `[0, 1]`.
pub fn channel_image(cube: &SpectralCube, k: usize) -> Result<GrayImage> {
    if k >= cube.bands() {
        return Err(Error::InvalidParameter(format!("channel {k} out of range for {} bands", cube.bands())));
    }
    let d: Dims = cube.dims();
    let mut img = GrayImage::new(d.width as u32, d.height as u32);
    for j in 0..d.height {
        for i in 0..d.width {
            let v = (cube.get(i, j, k).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(i as u32, j as u32, Luma([v]));
        }
    }
    Ok(img)
}

/// Writes `channel_XX_<nm>nm.png` for every band into `dir`.
pub fn write_channel_pngs(cube: &SpectralCube, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(cube.bands());
    for k in 0..cube.bands() {
        let path = dir.join(format!("channel_{k:02}_{:.0}nm.png", cube.grid().wavelength(k)));
        channel_image(cube, k)?.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}
