//! Shared data model: wavelength grids, spectral cubes, mask stacks and
//! snapshot measurements.
//!
//! All three volume-like types use the same pixel-contiguous layout: the
//! spectrum of pixel `(i, j)` (column `i`, row `j`) occupies the contiguous
//! slice starting at `((j * width) + i) * bands`. In memory values are `f64`;
//! on disk they are stored as little-endian `f32`.

use crate::error::{Error, Result};

/// Rounds a value to the precision used by the on-disk containers.
#[inline]
pub fn storage_precision(v: f64) -> f64 {
    v as f32 as f64
}

/// Flat index of voxel `(i, j, k)` in a pixel-contiguous volume.
#[inline]
pub fn flat_index(dims: Dims, i: usize, j: usize, k: usize) -> usize {
    ((j * dims.width) + i) * dims.bands + k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize, bands: usize) -> Self {
        Self {
            width,
            height,
            bands,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.bands
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.bands)
    }
}

/// Uniformly spaced band centres, `start_nm + i * step_nm` for `i < count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavelengthGrid {
    start_nm: f64,
    step_nm: f64,
    count: usize,
}

impl WavelengthGrid {
    pub const VISIBLE_START_NM: f64 = 450.0;
    pub const VISIBLE_END_NM: f64 = 700.0;

    pub fn new(start_nm: f64, step_nm: f64, count: usize) -> Result<Self> {
        if !(step_nm > 0.0) || !step_nm.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "wavelength step must be positive, got {step_nm}"
            )));
        }
        if !start_nm.is_finite() {
            return Err(Error::NonFinite("wavelength grid start"));
        }
        if count == 0 {
            return Err(Error::InvalidParameter(
                "wavelength grid needs at least one band".into(),
            ));
        }
        Ok(Self {
            start_nm,
            step_nm,
            count,
        })
    }

    /// `count` bands evenly covering 450..=700 nm. A single band sits at
    /// 450 nm with the default 10 nm step.
    pub fn visible(count: usize) -> Result<Self> {
        let step = if count > 1 {
            (Self::VISIBLE_END_NM - Self::VISIBLE_START_NM) / (count - 1) as f64
        } else {
            10.0
        };
        Self::new(Self::VISIBLE_START_NM, step, count)
    }

    pub fn start_nm(&self) -> f64 {
        self.start_nm
    }

    pub fn step_nm(&self) -> f64 {
        self.step_nm
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn wavelength(&self, band: usize) -> f64 {
        self.start_nm + band as f64 * self.step_nm
    }

    pub fn wavelengths(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.wavelength(i))
    }

    pub fn end_nm(&self) -> f64 {
        self.wavelength(self.count - 1)
    }
}

impl Default for WavelengthGrid {
    /// 26 bands, 450 nm to 700 nm in 10 nm steps.
    fn default() -> Self {
        Self {
            start_nm: 450.0,
            step_nm: 10.0,
            count: 26,
        }
    }
}

fn check_finite(data: &[f64], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// An `Nx x Ny x Nλ` intensity volume.
///
/// Besides ground-truth scenes this type also carries solver intermediates,
/// which may go negative; only finiteness is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    dims: Dims,
    grid: WavelengthGrid,
    data: Vec<f64>,
}

impl SpectralCube {
    pub fn new(width: usize, height: usize, grid: WavelengthGrid, data: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(width, height, grid.count());
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "cube {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        check_finite(&data, "spectral cube")?;
        Ok(Self { dims, grid, data })
    }

    pub fn zeros(width: usize, height: usize, grid: WavelengthGrid) -> Self {
        let dims = Dims::new(width, height, grid.count());
        Self {
            dims,
            grid,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn filled(width: usize, height: usize, grid: WavelengthGrid, value: f64) -> Self {
        let mut cube = Self::zeros(width, height, grid);
        cube.data.fill(value);
        cube
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        grid: WavelengthGrid,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let bands = grid.count();
        let mut data = Vec::with_capacity(width * height * bands);
        for j in 0..height {
            for i in 0..width {
                for k in 0..bands {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(width, height, grid, data)
    }

    /// Builds a cube from solver output without re-validating finiteness.
    pub(crate) fn from_parts(dims: Dims, grid: WavelengthGrid, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.bands, grid.count());
        debug_assert_eq!(dims.len(), data.len());
        Self { dims, grid, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn bands(&self) -> usize {
        self.dims.bands
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[flat_index(self.dims, i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = flat_index(self.dims, i, j, k);
        self.data[idx] = value;
    }

    pub fn spectrum(&self, i: usize, j: usize) -> &[f64] {
        let start = flat_index(self.dims, i, j, 0);
        &self.data[start..start + self.dims.bands]
    }

    pub fn spectrum_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = flat_index(self.dims, i, j, 0);
        let bands = self.dims.bands;
        &mut self.data[start..start + bands]
    }

    /// Copies band `k` into a row-major `width x height` plane.
    pub fn frame(&self, k: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(k)
            .step_by(self.dims.bands)
            .copied()
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.dims, self.grid, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Rounds every value to on-disk precision.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.data {
            *v = storage_precision(*v);
        }
        self
    }
}

/// Per-channel transmittance images `M_k`, stored pixel-contiguously.
///
/// Every entry lies in `[0, 1]` and every pixel has a nonzero transmittance
/// vector, so the diagonal of `ΦΦᵀ` is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    dims: Dims,
    grid: WavelengthGrid,
    data: Vec<f64>,
}

impl MaskStack {
    pub fn new(width: usize, height: usize, grid: WavelengthGrid, data: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(width, height, grid.count());
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask stack {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        check_finite(&data, "mask stack")?;
        for j in 0..height {
            for i in 0..width {
                let start = flat_index(dims, i, j, 0);
                let row = &data[start..start + dims.bands];
                let mut energy = 0.0;
                for (k, &m) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&m) {
                        return Err(Error::TransmittanceOutOfRange { i, j, k, value: m });
                    }
                    energy += m * m;
                }
                if energy <= 0.0 {
                    return Err(Error::DegenerateMask { i, j });
                }
            }
        }
        Ok(Self { dims, grid, data })
    }

    /// A stack with the same transmittance at every pixel.
    pub fn uniform(width: usize, height: usize, grid: WavelengthGrid, spectrum: &[f64]) -> Result<Self> {
        if spectrum.len() != grid.count() {
            return Err(Error::DimensionMismatch(format!(
                "spectrum has {} bands, grid has {}",
                spectrum.len(),
                grid.count()
            )));
        }
        let data = spectrum
            .iter()
            .copied()
            .cycle()
            .take(width * height * grid.count())
            .collect();
        Self::new(width, height, grid, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn bands(&self) -> usize {
        self.dims.bands
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[flat_index(self.dims, i, j, k)]
    }

    /// Transmittance vector of pixel `(i, j)`: one row of the sensing matrix.
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let start = flat_index(self.dims, i, j, 0);
        &self.data[start..start + self.dims.bands]
    }
}

/// A snapshot image `y`, row-major `width x height`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Measurement {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "measurement {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        check_finite(&data, "measurement")?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.width + i]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Measurement noise: `σ ~ U[0, sigma_max]` per call, then i.i.d. Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_max: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub const DEFAULT_SIGMA_MAX: f64 = 0.05;

    pub fn new(sigma_max: f64, seed: u64) -> Result<Self> {
        if !(sigma_max >= 0.0) || !sigma_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma_max must be finite and non-negative, got {sigma_max}"
            )));
        }
        Ok(Self { sigma_max, seed })
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_max: Self::DEFAULT_SIGMA_MAX,
            seed: 0,
        }
    }
}
