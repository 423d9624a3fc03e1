//! K-stage unfolded ADMM reconstruction of a spectral cube from one snapshot.
//!
//! Each stage runs
//!
//! ```text
//! x ← (ΦᵀΦ + γ_k I)⁻¹ (Φᵀy + (v + u))      linear projection
//! v ← D_k(x − u)                            denoiser
//! u ← u − (x − v)                           multiplier update
//! ```
//!
//! The projection is exact and costs one pass over the cube: since `ΦΦᵀ` is
//! diagonal (`d`), the Woodbury identity gives
//! `x = (b − Φᵀ(Φb / (γ + d))) / γ` per pixel.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::denoise::{Denoiser, IdentityDenoiser, TvDenoiser, TvSchedule};
use crate::error::{Error, Result};
use crate::forward::{adjoint_into, forward_into, phi_phit_diag};
use crate::types::{MaskStack, Measurement, SpectralCube};
use crate::unet::{LearnedDenoiser, WeightBundle};

pub const DEFAULT_STAGES: usize = 12;
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserKind {
    Tv,
    Learned,
    Identity,
}

impl std::str::FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tv" => Ok(Self::Tv),
            "learned" => Ok(Self::Learned),
            "identity" => Ok(Self::Identity),
            other => Err(Error::InvalidParameter(format!("unknown denoiser {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdmmConfig {
    pub stages: usize,
    /// Per-stage penalty γ_k; must have exactly `stages` entries.
    pub gamma: Vec<f64>,
    pub denoiser: DenoiserKind,
    /// Use `Φᵀy + (v+u)` as printed (true) or the textbook `Φᵀy + γ(v+u)`.
    pub literal_eq4: bool,
    pub tv: TvSchedule,
    pub weights: Option<Arc<WeightBundle>>,
}

impl AdmmConfig {
    pub fn tv(stages: usize) -> Self {
        Self {
            stages,
            gamma: vec![1.0; stages],
            denoiser: DenoiserKind::Tv,
            literal_eq4: true,
            tv: TvSchedule::default(),
            weights: None,
        }
    }

    pub fn identity(stages: usize) -> Self {
        Self {
            denoiser: DenoiserKind::Identity,
            ..Self::tv(stages)
        }
    }

    /// Stage count and γ schedule come from the bundle.
    pub fn learned(bundle: Arc<WeightBundle>) -> Self {
        Self {
            stages: bundle.stage_count(),
            gamma: bundle.gammas().iter().map(|&g| g as f64).collect(),
            denoiser: DenoiserKind::Learned,
            literal_eq4: true,
            tv: TvSchedule::default(),
            weights: Some(bundle),
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = vec![gamma; self.stages];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidParameter("ADMM needs at least one stage".into()));
        }
        if self.gamma.len() != self.stages {
            return Err(Error::InvalidParameter(format!(
                "{} gammas for {} stages",
                self.gamma.len(),
                self.stages
            )));
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {g}")));
        }
        if self.denoiser == DenoiserKind::Learned {
            match &self.weights {
                None => return Err(Error::MissingWeights),
                Some(b) if b.stage_count() < self.stages => {
                    return Err(Error::InvalidParameter(format!(
                        "weights cover {} stages, config asks for {}",
                        b.stage_count(),
                        self.stages
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self::tv(DEFAULT_STAGES)
    }
}

/// One row of the per-stage diagnostic trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    /// `‖Φv − y‖₂` after the stage.
    pub data_fidelity: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmOutput {
    pub cube: SpectralCube,
    pub trace: Vec<StageRecord>,
}

impl AdmmOutput {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("stage,data_fidelity,elapsed_ms\n");
        for r in &self.trace {
            out.push_str(&format!("{},{:.9e},{:.3}\n", r.stage, r.data_fidelity, r.elapsed_ms));
        }
        out
    }
}

fn check_dims(y: &Measurement, masks: &MaskStack) -> Result<()> {
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

fn check_volume(v: &SpectralCube, masks: &MaskStack, what: &'static str) -> Result<()> {
    if v.dims() != masks.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {} but masks are {}",
            v.dims(),
            masks.dims()
        )));
    }
    if !v.data().iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// Solves `(ΦᵀΦ + γI) x = phit_y + s·(v + u)` per pixel, `s = 1` for the
/// literal form and `s = γ` otherwise. Returns `‖residual‖ / ‖rhs‖` when
/// `check` is set.
#[allow(clippy::too_many_arguments)]
fn x_update_into(
    phit_y: &[f64],
    masks: &MaskStack,
    diag: &[f64],
    v: &[f64],
    u: &[f64],
    gamma: f64,
    literal: bool,
    x: &mut [f64],
    check: bool,
) -> Option<f64> {
    let bands = masks.bands();
    let scale = if literal { 1.0 } else { gamma };
    let m = masks.data();
    x.par_chunks_mut(bands)
        .with_min_len(128)
        .enumerate()
        .for_each(|(p, xp)| {
            let base = p * bands;
            let row = &m[base..base + bands];
            let mut proj = 0.0;
            for k in 0..bands {
                let b = phit_y[base + k] + scale * (v[base + k] + u[base + k]);
                xp[k] = b;
                proj += row[k] * b;
            }
            let coeff = proj / (gamma + diag[p]);
            for k in 0..bands {
                xp[k] = (xp[k] - row[k] * coeff) / gamma;
            }
        });
    if !check {
        return None;
    }
    let (res2, rhs2) = (0..diag.len())
        .into_par_iter()
        .with_min_len(128)
        .map(|p| {
            let base = p * bands;
            let row = &m[base..base + bands];
            let mx: f64 = row.iter().zip(&x[base..base + bands]).map(|(a, b)| a * b).sum();
            let mut r2 = 0.0;
            let mut b2 = 0.0;
            for k in 0..bands {
                let b = phit_y[base + k] + scale * (v[base + k] + u[base + k]);
                let r = row[k] * mx + gamma * x[base + k] - b;
                r2 += r * r;
                b2 += b * b;
            }
            (r2, b2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Some(if rhs2 > 0.0 { (res2 / rhs2).sqrt() } else { res2.sqrt() })
}

/// Closed-form linear projection of one ADMM stage.
///
/// Fails if any input is non-finite or if the solve residual exceeds
/// `1e-8 · ‖rhs‖`.
pub fn x_update(
    y: &Measurement,
    masks: &MaskStack,
    v: &SpectralCube,
    u: &SpectralCube,
    gamma: f64,
    literal_eq4: bool,
) -> Result<SpectralCube> {
    check_dims(y, masks)?;
    check_volume(v, masks, "v")?;
    check_volume(u, masks, "u")?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let dims = masks.dims();
    let mut phit_y = vec![0.0; dims.len()];
    adjoint_into(y.data(), masks, &mut phit_y);
    let diag = phi_phit_diag(masks);
    let mut x = vec![0.0; dims.len()];
    let rel = x_update_into(&phit_y, masks, &diag, v.data(), u.data(), gamma, literal_eq4, &mut x, true)
        .expect("residual requested");
    if !(rel <= RESIDUAL_TOLERANCE) {
        return Err(Error::InvalidData(format!(
            "x-update residual {rel:e} exceeds {RESIDUAL_TOLERANCE:e}"
        )));
    }
    Ok(SpectralCube::from_parts(dims, *masks.grid(), x))
}

/// `v = D_k(x − u)`.
pub fn v_update(x: &SpectralCube, u: &SpectralCube, denoiser: &dyn Denoiser, stage: usize) -> Result<SpectralCube> {
    if x.dims() != u.dims() {
        return Err(Error::DimensionMismatch(format!("x is {} but u is {}", x.dims(), u.dims())));
    }
    let diff: Vec<f64> = x.data().iter().zip(u.data()).map(|(a, b)| a - b).collect();
    denoiser.denoise(&SpectralCube::from_parts(x.dims(), *x.grid(), diff), stage)
}

/// `u_new = u − (x − v)`, elementwise.
pub fn u_update(u: &SpectralCube, x: &SpectralCube, v: &SpectralCube) -> Result<SpectralCube> {
    if u.dims() != x.dims() || u.dims() != v.dims() {
        return Err(Error::DimensionMismatch(format!(
            "u {} / x {} / v {} differ",
            u.dims(),
            x.dims(),
            v.dims()
        )));
    }
    let data = u
        .data()
        .iter()
        .zip(x.data())
        .zip(v.data())
        .map(|((&uu, &xx), &vv)| uu - (xx - vv))
        .collect();
    Ok(SpectralCube::from_parts(u.dims(), *u.grid(), data))
}

/// Matched-filter start: `v⁰ = Φᵀy / d` per pixel.
pub fn initial_estimate(y: &Measurement, masks: &MaskStack) -> Result<SpectralCube> {
    check_dims(y, masks)?;
    let diag = phi_phit_diag(masks);
    let mut v = vec![0.0; masks.dims().len()];
    adjoint_into(y.data(), masks, &mut v);
    let bands = masks.bands();
    for (chunk, d) in v.chunks_mut(bands).zip(&diag) {
        for e in chunk {
            *e /= d;
        }
    }
    Ok(SpectralCube::from_parts(masks.dims(), *masks.grid(), v))
}

fn build_denoiser(y: &Measurement, masks: &MaskStack, cfg: &AdmmConfig) -> Result<Box<dyn Denoiser>> {
    Ok(match cfg.denoiser {
        DenoiserKind::Tv => Box::new(TvDenoiser::new(cfg.tv)),
        DenoiserKind::Identity => Box::new(IdentityDenoiser),
        DenoiserKind::Learned => {
            let bundle = cfg.weights.clone().ok_or(Error::MissingWeights)?;
            Box::new(LearnedDenoiser::for_measurement(bundle, y, masks)?)
        }
    })
}

/// Runs the full unfolded reconstruction and returns `max(v^(K), 0)` with the
/// per-stage trace.
pub fn reconstruct(y: &Measurement, masks: &MaskStack, cfg: &AdmmConfig) -> Result<AdmmOutput> {
    check_dims(y, masks)?;
    cfg.validate()?;
    if !y.data().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("measurement"));
    }
    let denoiser = build_denoiser(y, masks, cfg)?;
    reconstruct_with(y, masks, cfg, denoiser.as_ref())
}

/// Same as [`reconstruct`] with a caller-supplied denoiser; `cfg.denoiser`
/// and `cfg.weights` are ignored.
pub fn reconstruct_with(
    y: &Measurement,
    masks: &MaskStack,
    cfg: &AdmmConfig,
    denoiser: &dyn Denoiser,
) -> Result<AdmmOutput> {
    check_dims(y, masks)?;
    let dims = masks.dims();
    let grid = *masks.grid();
    let started = Instant::now();

    let diag = phi_phit_diag(masks);
    let mut phit_y = vec![0.0; dims.len()];
    adjoint_into(y.data(), masks, &mut phit_y);

    let mut v = initial_estimate(y, masks)?;
    let mut u = vec![0.0; dims.len()];
    let mut x = vec![0.0; dims.len()];
    let mut projected = vec![0.0; dims.pixels()];
    let mut trace = Vec::with_capacity(cfg.stages);

    for stage in 0..cfg.stages {
        let rel = x_update_into(
            &phit_y,
            masks,
            &diag,
            v.data(),
            &u,
            cfg.gamma[stage],
            cfg.literal_eq4,
            &mut x,
            cfg!(debug_assertions),
        );
        if let Some(rel) = rel {
            if !(rel <= RESIDUAL_TOLERANCE) {
                return Err(Error::InvalidData(format!(
                    "stage {stage}: x-update residual {rel:e} exceeds {RESIDUAL_TOLERANCE:e}"
                )));
            }
        }

        let diff: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - b).collect();
        v = denoiser.denoise(&SpectralCube::from_parts(dims, grid, diff), stage)?;
        if v.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "denoiser {} returned {} for {dims}",
                denoiser.name(),
                v.dims()
            )));
        }
        if !v.data().iter().all(|e| e.is_finite()) {
            return Err(Error::NonFinite("denoiser output"));
        }

        for ((uu, &xx), &vv) in u.iter_mut().zip(&x).zip(v.data()) {
            *uu -= xx - vv;
        }

        forward_into(v.data(), masks, &mut projected);
        let fidelity = projected
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        trace.push(StageRecord {
            stage,
            data_fidelity: fidelity,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }

    let cube = v.map(|e| e.max(0.0));
    Ok(AdmmOutput { cube, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::WavelengthGrid;

    #[test]
    fn single_band_identity_mask_halves_measurement() {
        let g = WavelengthGrid::visible(1).unwrap();
        let masks = MaskStack::uniform(3, 3, g, &[1.0]).unwrap();
        let y = Measurement::new(3, 3, (0..9).map(|v| v as f64).collect()).unwrap();
        let zero = SpectralCube::zeros(3, 3, g);
        let x = x_update(&y, &masks, &zero, &zero, 1.0, true).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn literal_and_textbook_agree_at_unit_gamma() {
        let g = WavelengthGrid::visible(3).unwrap();
        let masks = MaskStack::uniform(2, 2, g, &[0.2, 0.5, 0.9]).unwrap();
        let y = Measurement::new(2, 2, vec![0.3, 0.1, 0.7, 0.4]).unwrap();
        let v = SpectralCube::filled(2, 2, g, 0.25);
        let u = SpectralCube::filled(2, 2, g, -0.05);
        let a = x_update(&y, &masks, &v, &u, 1.0, true).unwrap();
        let b = x_update(&y, &masks, &v, &u, 1.0, false).unwrap();
        assert_eq!(a, b);
        let c = x_update(&y, &masks, &v, &u, 3.0, false).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn x_update_rejects_nonfinite_and_bad_gamma() {
        let g = WavelengthGrid::visible(2).unwrap();
        let masks = MaskStack::uniform(2, 1, g, &[0.5, 0.5]).unwrap();
        let y = Measurement::new(2, 1, vec![1.0, 1.0]).unwrap();
        let zero = SpectralCube::zeros(2, 1, g);
        let mut bad = zero.clone();
        bad.data_mut()[1] = f64::INFINITY;
        assert!(matches!(
            x_update(&y, &masks, &bad, &zero, 1.0, true),
            Err(Error::NonFinite("v"))
        ));
        assert!(x_update(&y, &masks, &zero, &zero, 0.0, true).is_err());
    }

    #[test]
    fn u_update_cases() {
        let g = WavelengthGrid::visible(2).unwrap();
        let u = SpectralCube::filled(2, 2, g, 0.3);
        let x = SpectralCube::from_fn(2, 2, g, |i, j, k| (i + j + k) as f64).unwrap();
        assert_eq!(u_update(&u, &x, &x).unwrap(), u);
        let zero = SpectralCube::zeros(2, 2, g);
        let neg = u_update(&zero, &x, &zero).unwrap();
        assert_eq!(neg, x.map(|e| -e));
    }

    #[test]
    fn identity_v_update_with_zero_u_returns_x() {
        let g = WavelengthGrid::visible(2).unwrap();
        let x = SpectralCube::from_fn(3, 2, g, |i, j, k| (i * 5 + j + k) as f64 * 0.1).unwrap();
        let u = SpectralCube::zeros(3, 2, g);
        assert_eq!(v_update(&x, &u, &IdentityDenoiser, 0).unwrap(), x);
    }

    #[test]
    fn config_validation() {
        assert!(AdmmConfig::tv(0).validate().is_err());
        assert!(AdmmConfig::tv(3).with_gamma(-1.0).validate().is_err());
        let mut cfg = AdmmConfig::tv(3);
        cfg.gamma.pop();
        assert!(cfg.validate().is_err());
        let learned = AdmmConfig {
            denoiser: DenoiserKind::Learned,
            ..AdmmConfig::tv(2)
        };
        assert!(matches!(learned.validate(), Err(Error::MissingWeights)));
        assert_eq!("tv".parse::<DenoiserKind>().unwrap(), DenoiserKind::Tv);
        assert!("cnn".parse::<DenoiserKind>().is_err());
    }

    #[test]
    fn learned_without_weights_fails_cleanly() {
        let g = WavelengthGrid::visible(2).unwrap();
        let masks = MaskStack::uniform(8, 8, g, &[0.5, 0.5]).unwrap();
        let y = Measurement::zeros(8, 8);
        let cfg = AdmmConfig {
            denoiser: DenoiserKind::Learned,
            ..AdmmConfig::tv(2)
        };
        assert!(matches!(reconstruct(&y, &masks, &cfg), Err(Error::MissingWeights)));
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let g = WavelengthGrid::visible(2).unwrap();
        let masks = MaskStack::uniform(4, 4, g, &[0.4, 0.8]).unwrap();
        let y = Measurement::new(4, 4, vec![0.5; 16]).unwrap();
        let out = reconstruct(&y, &masks, &AdmmConfig::identity(3)).unwrap();
        let csv = out.trace_csv();
        assert!(csv.starts_with("stage,data_fidelity,elapsed_ms\n"));
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(out.cube.dims(), masks.dims());
    }
}
