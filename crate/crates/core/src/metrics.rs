//! Spectral fidelity, PSNR and the edge/flat mosaic probe.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::SpectralCube;

/// Default spectral-angle threshold (radians) for edge detection.
pub const EDGE_ANGLE_THRESHOLD: f64 = 0.05;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine of the angle between two spectra.
pub fn fidelity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "spectra have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !a.iter().chain(b).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("spectrum"));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn check_dims(truth: &SpectralCube, recon: &SpectralCube) -> Result<()> {
    if truth.dims() != recon.dims() {
        return Err(Error::DimensionMismatch(format!(
            "truth is {} but reconstruction is {}",
            truth.dims(),
            recon.dims()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityMap {
    pub width: usize,
    pub height: usize,
    /// Row-major; `NaN` where either spectrum has zero norm.
    pub values: Vec<f64>,
    pub mean: f64,
    /// Pixels in the region that were skipped for zero norm.
    pub excluded: usize,
    /// Pixels that contributed to `mean`.
    pub counted: usize,
}

/// Per-pixel fidelity, averaged over `region` (row-major pixel mask) or
/// over every pixel.
pub fn mean_fidelity_map(truth: &SpectralCube, recon: &SpectralCube, region: Option<&[bool]>) -> Result<FidelityMap> {
    check_dims(truth, recon)?;
    let d = truth.dims();
    if let Some(r) = region {
        if r.len() != d.pixels() {
            return Err(Error::DimensionMismatch(format!(
                "region mask has {} entries for {} pixels",
                r.len(),
                d.pixels()
            )));
        }
    }
    let values: Vec<f64> = truth
        .data()
        .par_chunks(d.bands)
        .zip(recon.data().par_chunks(d.bands))
        .map(|(a, b)| match fidelity(a, b) {
            Ok(f) => Ok(f),
            Err(Error::ZeroNorm) => Ok(f64::NAN),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let (mut sum, mut counted, mut excluded) = (0.0, 0usize, 0usize);
    for (p, &v) in values.iter().enumerate() {
        if region.is_some_and(|r| !r[p]) {
            continue;
        }
        if v.is_nan() {
            excluded += 1;
        } else {
            sum += v;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(if excluded > 0 { Error::ZeroNorm } else { Error::EmptyPartition("region") });
    }
    Ok(FidelityMap {
        width: d.width,
        height: d.height,
        values,
        mean: sum / counted as f64,
        excluded,
        counted,
    })
}

/// `10 log10(peak² / MSE)`; identical cubes give `f64::INFINITY`.
pub fn psnr(truth: &SpectralCube, recon: &SpectralCube, peak: f64) -> Result<f64> {
    check_dims(truth, recon)?;
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidParameter(format!("psnr peak must be positive, got {peak}")));
    }
    let sse: f64 = truth.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / truth.data().len() as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Pixels whose spectral angle to any 4-neighbour exceeds `threshold`.
pub fn edge_map(truth: &SpectralCube, threshold: f64) -> Vec<bool> {
    let (w, h) = (truth.width(), truth.height());
    let angle = |a: &[f64], b: &[f64]| match fidelity(a, b) {
        Ok(f) => f.acos(),
        Err(_) => {
            if norm(a) == norm(b) {
                0.0
            } else {
                std::f64::consts::FRAC_PI_2
            }
        }
    };
    let mut edges = vec![false; w * h];
    for j in 0..h {
        for i in 0..w {
            let s = truth.spectrum(i, j);
            if i + 1 < w && angle(s, truth.spectrum(i + 1, j)) > threshold {
                edges[j * w + i] = true;
                edges[j * w + i + 1] = true;
            }
            if j + 1 < h && angle(s, truth.spectrum(i, j + 1)) > threshold {
                edges[j * w + i] = true;
                edges[(j + 1) * w + i] = true;
            }
        }
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosaicProbe {
    pub edge_mean: f64,
    pub flat_mean: f64,
    pub edge_pixels: usize,
    pub flat_pixels: usize,
}

pub fn mosaic_probe(truth: &SpectralCube, recon: &SpectralCube, edge_dist: usize) -> Result<MosaicProbe> {
    mosaic_probe_with(truth, recon, edge_dist, EDGE_ANGLE_THRESHOLD)
}

/// Splits pixels into those within Chebyshev distance `edge_dist` of a truth
/// edge and the rest, and reports mean fidelity of each set.
pub fn mosaic_probe_with(
    truth: &SpectralCube,
    recon: &SpectralCube,
    edge_dist: usize,
    threshold: f64,
) -> Result<MosaicProbe> {
    check_dims(truth, recon)?;
    let (w, h) = (truth.width(), truth.height());
    let edges = edge_map(truth, threshold);
    if !edges.iter().any(|&e| e) {
        return Err(Error::NoEdges);
    }
    let r = edge_dist as isize;
    let mut near = vec![false; w * h];
    for j in 0..h as isize {
        for i in 0..w as isize {
            if !edges[(j * w as isize + i) as usize] {
                continue;
            }
            for jj in (j - r).max(0)..=(j + r).min(h as isize - 1) {
                for ii in (i - r).max(0)..=(i + r).min(w as isize - 1) {
                    near[(jj * w as isize + ii) as usize] = true;
                }
            }
        }
    }
    let far: Vec<bool> = near.iter().map(|&n| !n).collect();
    if !far.iter().any(|&f| f) {
        return Err(Error::EmptyPartition("flat"));
    }
    let edge = mean_fidelity_map(truth, recon, Some(&near))?;
    let flat = mean_fidelity_map(truth, recon, Some(&far))?;
    Ok(MosaicProbe {
        edge_mean: edge.mean,
        flat_mean: flat.mean,
        edge_pixels: edge.counted,
        flat_pixels: flat.counted,
    })
}

/// Rows of `(metric, region, value)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<(String, String, f64)>,
}

impl MetricReport {
    pub fn push(&mut self, metric: &str, region: &str, value: f64) {
        self.rows.push((metric.into(), region.into(), value));
    }

    pub fn get(&self, metric: &str, region: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == metric && r.1 == region).map(|r| r.2)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,region,value\n");
        for (m, r, v) in &self.rows {
            let _ = writeln!(out, "{m},{r},{v}");
        }
        out
    }
}

/// Mean fidelity, PSNR (peak 1) and, when the truth has edges, the mosaic probe.
pub fn evaluate(truth: &SpectralCube, recon: &SpectralCube, edge_dist: usize) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    let map = mean_fidelity_map(truth, recon, None)?;
    report.push("fidelity", "all", map.mean);
    report.push("excluded_pixels", "all", map.excluded as f64);
    report.push("psnr_db", "all", psnr(truth, recon, 1.0)?);
    match mosaic_probe(truth, recon, edge_dist) {
        Ok(p) => {
            report.push("fidelity", "edge", p.edge_mean);
            report.push("fidelity", "flat", p.flat_mean);
        }
        Err(Error::NoEdges | Error::EmptyPartition(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(report)
}
