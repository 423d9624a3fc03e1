//! Point-by-point spectral reconstruction, the classic filter-array baseline.
//!
//! Pixel `(i, j)` is recovered from the `(2n+1)²` measurements around it,
//! assuming all of them see the same spectrum:
//!
//! ```text
//! min_{x ≥ 0}  ‖M x − y‖² + λ ‖D₂ x‖²
//! ```
//!
//! where the rows of `M` are the neighbours' transmittance vectors and `D₂`
//! is the second difference along the spectral axis. The solve is FISTA with
//! a projection onto the nonnegative orthant and a function-value restart
//! that keeps accepted iterates monotone. The shared-spectrum assumption is
//! wrong next to spatial edges, which is where the mosaic effect comes from.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{MaskStack, Measurement, SpectralCube, WavelengthGrid};

const STALL_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerPixelConfig {
    /// Neighbourhood half-width; `N = (2n+1)²`.
    pub n: usize,
    pub reg_lambda: f64,
    pub max_iters: usize,
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    /// Solve on a grid `refine` times denser than the band grid, then sample
    /// back. 1 solves directly on the band grid.
    pub refine: usize,
}

impl Default for PerPixelConfig {
    fn default() -> Self {
        Self {
            n: 2,
            reg_lambda: 1e-2,
            max_iters: 500,
            tol: 1e-6,
            refine: 1,
        }
    }
}

impl PerPixelConfig {
    pub fn neighbourhood(&self) -> usize {
        (2 * self.n + 1).pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter("neighbourhood half-width n must be >= 1".into()));
        }
        if !(self.reg_lambda >= 0.0) || !self.reg_lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "reg_lambda must be finite and >= 0, got {}",
                self.reg_lambda
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be >= 0, got {}", self.tol)));
        }
        if self.refine == 0 {
            return Err(Error::InvalidParameter("refine must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// `‖Mx − y‖² + λ‖D₂x‖²` evaluated directly from the residuals.
pub fn pixel_objective(y: &[f64], m: &[f64], bands: usize, reg_lambda: f64, x: &[f64]) -> f64 {
    let fit: f64 = y
        .iter()
        .zip(m.chunks(bands))
        .map(|(yv, row)| {
            let r: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - yv;
            r * r
        })
        .sum();
    let smooth: f64 = x.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).powi(2)).sum();
    fit + reg_lambda * smooth
}

/// Normal-equation data for one pixel: `H = MᵀM + λD₂ᵀD₂`, `g = Mᵀy`.
struct Quadratic {
    bands: usize,
    h: Vec<f64>,
    g: Vec<f64>,
    c: f64,
}

impl Quadratic {
    fn new(y: &[f64], m: &[f64], bands: usize, reg_lambda: f64) -> Self {
        let mut h = vec![0.0; bands * bands];
        let mut g = vec![0.0; bands];
        for (yv, row) in y.iter().zip(m.chunks(bands)) {
            for a in 0..bands {
                g[a] += row[a] * yv;
                let ra = row[a];
                for b in a..bands {
                    h[a * bands + b] += ra * row[b];
                }
            }
        }
        // D₂ᵀD₂ is the pentadiagonal stencil of the row operator [1, -2, 1].
        if bands >= 3 && reg_lambda > 0.0 {
            for r in 0..bands - 2 {
                let taps = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
                for &(a, wa) in &taps {
                    for &(b, wb) in &taps {
                        if b >= a {
                            h[a * bands + b] += reg_lambda * wa * wb;
                        }
                    }
                }
            }
        }
        for a in 0..bands {
            for b in 0..a {
                h[a * bands + b] = h[b * bands + a];
            }
        }
        let c = y.iter().map(|v| v * v).sum();
        Self { bands, h, g, c }
    }

    fn hx(&self, x: &[f64], out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.h[a * self.bands..(a + 1) * self.bands]
                .iter()
                .zip(x)
                .map(|(p, q)| p * q)
                .sum();
        }
    }

    /// Objective given `x` and a precomputed `Hx`.
    fn value(&self, x: &[f64], hx: &[f64]) -> f64 {
        let quad: f64 = x.iter().zip(hx).map(|(a, b)| a * b).sum();
        let lin: f64 = x.iter().zip(&self.g).map(|(a, b)| a * b).sum();
        (quad - 2.0 * lin + self.c).max(0.0)
    }

    /// Largest eigenvalue of `H` by power iteration, padded slightly so the
    /// resulting step is safe.
    fn max_eigenvalue(&self) -> f64 {
        let n = self.bands;
        let frob = self.h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if frob == 0.0 {
            return 0.0;
        }
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut w = vec![0.0; n];
        let mut lambda = 0.0;
        for _ in 0..64 {
            self.hx(&v, &mut w);
            let norm = w.iter().map(|e| e * e).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            let next = norm;
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm;
            }
            if (next - lambda).abs() <= 1e-10 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        (lambda * 1.02).min(frob).max(lambda)
    }
}

/// Solves one pixel; `m` is `N x bands` row-major.
pub fn solve_pixel_detailed(y: &[f64], m: &[f64], bands: usize, cfg: &PerPixelConfig) -> Result<PixelSolution> {
    solve(y, m, bands, cfg, None)
}

/// As [`solve_pixel_detailed`], also returning the objective after every
/// accepted iterate (starting with the value at `x = 0`).
pub fn solve_pixel_traced(
    y: &[f64],
    m: &[f64],
    bands: usize,
    cfg: &PerPixelConfig,
) -> Result<(PixelSolution, Vec<f64>)> {
    let mut trace = Vec::new();
    let sol = solve(y, m, bands, cfg, Some(&mut trace))?;
    Ok((sol, trace))
}

fn solve(
    y: &[f64],
    m: &[f64],
    bands: usize,
    cfg: &PerPixelConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<PixelSolution> {
    if bands == 0 || m.len() != y.len() * bands {
        return Err(Error::DimensionMismatch(format!(
            "{} measurements need a {}x{bands} mask patch, got {} values",
            y.len(),
            y.len(),
            m.len()
        )));
    }
    if !y.iter().chain(m).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("pixel patch"));
    }
    let q = Quadratic::new(y, m, bands, cfg.reg_lambda);
    let lip = 2.0 * q.max_eigenvalue();
    let mut x = vec![0.0; bands];
    if lip == 0.0 || q.g.iter().all(|&g| g <= 0.0) && q.c == 0.0 {
        return Ok(PixelSolution {
            objective: pixel_objective(y, m, bands, cfg.reg_lambda, &x),
            x,
            iterations: 0,
        });
    }
    let step = 1.0 / lip;
    let mut z = x.clone();
    let mut hz = vec![0.0; bands];
    let mut hx = vec![0.0; bands];
    let mut x_new = vec![0.0; bands];
    let mut hx_new = vec![0.0; bands];
    let mut t = 1.0f64;
    let mut f_old = q.c;
    let mut iterations = 0;
    let mut quiet = 0;
    if let Some(t) = trace.as_deref_mut() {
        t.push(f_old);
    }

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        q.hx(&z, &mut hz);
        for k in 0..bands {
            x_new[k] = (z[k] - step * 2.0 * (hz[k] - q.g[k])).max(0.0);
        }
        q.hx(&x_new, &mut hx_new);
        let mut f_new = q.value(&x_new, &hx_new);
        let restarted = f_new > f_old;

        if restarted {
            // Momentum overshot: restart with a plain projected step from x.
            t = 1.0;
            for k in 0..bands {
                x_new[k] = (x[k] - step * 2.0 * (hx[k] - q.g[k])).max(0.0);
            }
            q.hx(&x_new, &mut hx_new);
            f_new = q.value(&x_new, &hx_new);
            z.copy_from_slice(&x_new);
        } else {
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_new;
            for k in 0..bands {
                z[k] = x_new[k] + beta * (x_new[k] - x[k]);
            }
            t = t_new;
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut hx, &mut hx_new);

        if let Some(t) = trace.as_deref_mut() {
            t.push(f_new);
        }
        let change = (f_old - f_new).abs();
        f_old = f_new;
        // FISTA can plateau for a step or two far from the optimum, so the
        // change must stay small over a short window of accelerated steps.
        if !restarted && change <= cfg.tol * f_new.abs() {
            quiet += 1;
        } else {
            quiet = 0;
        }
        if f_new == 0.0 || quiet >= STALL_WINDOW {
            break;
        }
    }
    Ok(PixelSolution {
        objective: pixel_objective(y, m, bands, cfg.reg_lambda, &x),
        x,
        iterations,
    })
}

pub fn solve_pixel(y: &[f64], m: &[f64], bands: usize, cfg: &PerPixelConfig) -> Result<Vec<f64>> {
    solve_pixel_detailed(y, m, bands, cfg).map(|s| s.x)
}

/// Linear interpolation of a band-grid row onto a grid `refine` times denser.
fn refine_row(row: &[f64], refine: usize, out: &mut Vec<f64>) {
    if row.len() == 1 {
        out.push(row[0] / refine as f64);
        return;
    }
    for k in 0..row.len() - 1 {
        for s in 0..refine {
            let t = s as f64 / refine as f64;
            out.push(((1.0 - t) * row[k] + t * row[k + 1]) / refine as f64);
        }
    }
    out.push(row[row.len() - 1] / refine as f64);
}

/// Reconstructs every pixel from its edge-clamped neighbourhood.
pub fn reconstruct_perpixel(y: &Measurement, masks: &MaskStack, cfg: &PerPixelConfig) -> Result<SpectralCube> {
    cfg.validate()?;
    if y.width() != masks.width() || y.height() != masks.height() {
        return Err(Error::DimensionMismatch(format!(
            "measurement is {}x{} but masks are {}",
            y.width(),
            y.height(),
            masks.dims()
        )));
    }
    let dims = masks.dims();
    let bands = dims.bands;
    let (w, h) = (dims.width as isize, dims.height as isize);
    let n = cfg.n as isize;
    let solve_bands = if bands == 1 { 1 } else { (bands - 1) * cfg.refine + 1 };

    let rows: Vec<Result<Vec<f64>>> = (0..dims.height)
        .into_par_iter()
        .map(|j| {
            let mut out = Vec::with_capacity(dims.width * bands);
            let mut yp = Vec::with_capacity(cfg.neighbourhood());
            let mut mp = Vec::with_capacity(cfg.neighbourhood() * solve_bands);
            for i in 0..dims.width {
                yp.clear();
                mp.clear();
                for dj in -n..=n {
                    let jj = (j as isize + dj).clamp(0, h - 1) as usize;
                    for di in -n..=n {
                        let ii = (i as isize + di).clamp(0, w - 1) as usize;
                        yp.push(y.get(ii, jj));
                        if cfg.refine == 1 {
                            mp.extend_from_slice(masks.row(ii, jj));
                        } else {
                            refine_row(masks.row(ii, jj), cfg.refine, &mut mp);
                        }
                    }
                }
                let x = solve_pixel(&yp, &mp, solve_bands, cfg)?;
                out.extend(x.iter().step_by(cfg.refine).take(bands));
            }
            Ok(out)
        })
        .collect();
    let mut data = Vec::with_capacity(dims.len());
    for r in rows {
        data.extend(r?);
    }
    Ok(SpectralCube::from_parts(dims, *masks.grid(), data))
}

/// The dense grid used when `refine > 1`.
pub fn refined_grid(grid: &WavelengthGrid, refine: usize) -> Result<WavelengthGrid> {
    if refine == 0 {
        return Err(Error::InvalidParameter("refine must be >= 1".into()));
    }
    let count = if grid.count() == 1 { 1 } else { (grid.count() - 1) * refine + 1 };
    WavelengthGrid::new(grid.start_nm(), grid.step_nm() / refine as f64, count)
}
