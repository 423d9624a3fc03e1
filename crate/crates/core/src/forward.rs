//! The sensing operator Φ of a filter-array spectral imager, its adjoint, and
//! the measurement noise model.
//!
//! Φ is the horizontal concatenation of per-band diagonal matrices
//! `diag(M_k)`, so `y[i,j] = Σ_k M_k[i,j] · x_k[i,j]`. Because every column
//! block is diagonal, `ΦΦᵀ` is itself diagonal with entries `Σ_k M_k[i,j]²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{Measurement, MaskStack, NoiseSpec, SpectralCube};

const PIXELS_PER_TASK: usize = 256;

fn check_cube(cube: &SpectralCube, masks: &MaskStack) -> Result<()> {
    if cube.dims() != masks.dims() {
        return Err(Error::DimensionMismatch(format!(
            "cube is {} but masks are {}",
            cube.dims(),
            masks.dims()
        )));
    }
    Ok(())
}

fn check_measurement(y: &Measurement, masks: &MaskStack) -> Result<()> {
    if y.width() != masks.width() || y.height() != masks.height() {
        return Err(Error::DimensionMismatch(format!(
            "measurement is {}x{} but masks are {}",
            y.width(),
            y.height(),
            masks.dims()
        )));
    }
    Ok(())
}

/// `out = Φ x` on raw pixel-contiguous buffers.
pub(crate) fn forward_into(x: &[f64], masks: &MaskStack, out: &mut [f64]) {
    let bands = masks.bands();
    let m = masks.data();
    out.par_iter_mut()
        .with_min_len(PIXELS_PER_TASK)
        .enumerate()
        .for_each(|(p, o)| {
            let base = p * bands;
            *o = m[base..base + bands]
                .iter()
                .zip(&x[base..base + bands])
                .map(|(a, b)| a * b)
                .sum();
        });
}

/// `out = Φᵀ y` on raw buffers.
pub(crate) fn adjoint_into(y: &[f64], masks: &MaskStack, out: &mut [f64]) {
    let bands = masks.bands();
    let m = masks.data();
    out.par_chunks_mut(bands)
        .with_min_len(PIXELS_PER_TASK)
        .zip(m.par_chunks(bands))
        .zip(y.par_iter())
        .for_each(|((o, row), &yv)| {
            for (ok, &mk) in o.iter_mut().zip(row) {
                *ok = mk * yv;
            }
        });
}

pub fn forward(cube: &SpectralCube, masks: &MaskStack) -> Result<Measurement> {
    check_cube(cube, masks)?;
    let mut out = vec![0.0; masks.dims().pixels()];
    forward_into(cube.data(), masks, &mut out);
    Ok(Measurement::from_parts(masks.width(), masks.height(), out))
}

pub fn adjoint(y: &Measurement, masks: &MaskStack) -> Result<SpectralCube> {
    check_measurement(y, masks)?;
    let mut out = vec![0.0; masks.dims().len()];
    adjoint_into(y.data(), masks, &mut out);
    Ok(SpectralCube::from_parts(masks.dims(), *masks.grid(), out))
}

/// Diagonal of `ΦΦᵀ`: `d[i,j] = Σ_k M_k[i,j]²`, row-major over pixels.
pub fn phi_phit_diag(masks: &MaskStack) -> Vec<f64> {
    masks
        .data()
        .chunks(masks.bands())
        .map(|row| row.iter().map(|m| m * m).sum())
        .collect()
}

/// Adds Gaussian noise with a standard deviation drawn once from
/// `U[0, sigma_max]`. Returns the noisy measurement and the σ used.
pub fn add_noise(y: &Measurement, spec: &NoiseSpec) -> Result<(Measurement, f64)> {
    if !(spec.sigma_max >= 0.0) || !spec.sigma_max.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma_max must be finite and non-negative, got {}",
            spec.sigma_max
        )));
    }
    if spec.sigma_max == 0.0 {
        return Ok((y.clone(), 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma = rng.random_range(0.0..=spec.sigma_max);
    Ok((add_noise_rng(y, sigma, &mut rng), sigma))
}

/// Adds Gaussian noise with a fixed relative σ.
///
/// σ is relative to the max-normalized measurement: the effective standard
/// deviation is `sigma * max|y|`. An all-zero measurement uses scale 1.
/// No clipping is applied afterwards.
pub fn add_noise_with_sigma(y: &Measurement, sigma: f64, seed: u64) -> Result<Measurement> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be finite and non-negative, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(add_noise_rng(y, sigma, &mut rng))
}

fn add_noise_rng(y: &Measurement, sigma: f64, rng: &mut ChaCha8Rng) -> Measurement {
    if sigma == 0.0 {
        return y.clone();
    }
    let peak = y.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let normal = Normal::new(0.0, sigma * scale).expect("sigma is finite and positive");
    let data = y.data().iter().map(|&v| v + normal.sample(rng)).collect();
    Measurement::from_parts(y.width(), y.height(), data)
}
