//! Inference for the per-stage U-net denoiser.
//!
//! Architecture (per stage, `B` = band count):
//!
//! ```text
//! enc1  B→32→32      ─────────────────────────────┐ skip
//!   pool                                          │
//! enc2  32→64→64     ─────────────────────┐ skip  │
//!   pool                                  │       │
//! enc3  64→128→128   ─────────────┐ skip  │       │
//!   pool                          │       │       │
//! bottleneck 128→256→256          │       │       │
//!   up ── cat ── dec3 384→128→128 ┘       │       │
//!   up ── cat ── dec2 192→64→64 ──────────┘       │
//!   up ── cat ── dec1 96→32→32 ───────────────────┘
//! final 1x1 32→B (no activation)
//! ```
//!
//! All 3x3 convolutions are followed by a ReLU; pooling is 2x2 max,
//! upsampling is nearest-neighbour. Input height and width must be multiples
//! of 8.

mod conv;
mod weights;

use std::sync::Arc;

pub use conv::{concat, conv2d, max_pool2, relu_in_place, upsample2, FeatureMap, KernelRef};
pub use weights::{
    load_weights, manifest, save_weights, unet_layers, ConvSpec, Tensor, WeightBundle, BOTTLENECK_WIDTH,
    CONV_LAYERS, ENCODER_WIDTHS, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::forward::phi_phit_diag;
use crate::types::{Dims, MaskStack, Measurement, SpectralCube};

fn apply_conv(
    bundle: &WeightBundle,
    stage: usize,
    spec: &ConvSpec,
    input: &FeatureMap,
    relu: bool,
) -> Result<FeatureMap> {
    let wname = spec.key(stage, "weight");
    let bname = spec.key(stage, "bias");
    let w = bundle.tensor(&wname).ok_or(Error::MissingTensor(wname))?;
    let b = bundle.tensor(&bname).ok_or(Error::MissingTensor(bname))?;
    let mut out = conv2d(input, KernelRef::new(&w.shape, &w.data)?, &b.data)?;
    if relu {
        relu_in_place(&mut out);
    }
    Ok(out)
}

/// Forward pass of stage `stage` on a CHW feature map.
pub fn unet_forward(input: &FeatureMap, bundle: &WeightBundle, stage: usize) -> Result<FeatureMap> {
    if stage >= bundle.stage_count() {
        return Err(Error::InvalidParameter(format!(
            "stage {stage} out of range for a {}-stage bundle",
            bundle.stage_count()
        )));
    }
    if input.channels != bundle.bands() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, weights expect {}",
            input.channels,
            bundle.bands()
        )));
    }
    if !input.height.is_multiple_of(8) || !input.width.is_multiple_of(8) || input.height == 0 || input.width == 0 {
        return Err(Error::DimensionMismatch(format!(
            "U-net input {}x{} must be a positive multiple of 8 in both dimensions",
            input.height, input.width
        )));
    }
    let layers = unet_layers(bundle.bands());
    let conv = |i: usize, x: &FeatureMap, relu: bool| apply_conv(bundle, stage, &layers[i], x, relu);

    let e1 = conv(1, &conv(0, input, true)?, true)?;
    let e2 = conv(3, &conv(2, &max_pool2(&e1), true)?, true)?;
    let e3 = conv(5, &conv(4, &max_pool2(&e2), true)?, true)?;
    let b = conv(7, &conv(6, &max_pool2(&e3), true)?, true)?;
    let d3 = conv(9, &conv(8, &concat(&upsample2(&b), &e3)?, true)?, true)?;
    let d2 = conv(11, &conv(10, &concat(&upsample2(&d3), &e2)?, true)?, true)?;
    let d1 = conv(13, &conv(12, &concat(&upsample2(&d2), &e1)?, true)?, true)?;
    conv(14, &d1, false)
}

/// Pixel-contiguous cube → CHW feature map (rows = cube height).
pub fn cube_to_features(cube: &SpectralCube, scale: f64) -> FeatureMap {
    let d = cube.dims();
    let mut data = vec![0.0f32; d.len()];
    let plane = d.pixels();
    for (p, spectrum) in cube.data().chunks(d.bands).enumerate() {
        for (k, &v) in spectrum.iter().enumerate() {
            data[k * plane + p] = (v / scale) as f32;
        }
    }
    FeatureMap {
        channels: d.bands,
        height: d.height,
        width: d.width,
        data,
    }
}

fn features_to_cube(map: &FeatureMap, like: &SpectralCube, scale: f64) -> SpectralCube {
    let d: Dims = like.dims();
    let plane = d.pixels();
    let mut data = vec![0.0f64; d.len()];
    for (p, spectrum) in data.chunks_mut(d.bands).enumerate() {
        for (k, v) in spectrum.iter_mut().enumerate() {
            *v = map.data[k * plane + p] as f64 * scale;
        }
    }
    SpectralCube::from_parts(d, *like.grid(), data)
}

/// Runs stage `stage` of the bundle on a cube, without normalization.
pub fn denoise(input: &SpectralCube, bundle: &WeightBundle, stage: usize) -> Result<SpectralCube> {
    let out = unet_forward(&cube_to_features(input, 1.0), bundle, stage)?;
    Ok(features_to_cube(&out, input, 1.0))
}

/// Learned ADMM denoiser with the bundle's input normalization.
#[derive(Debug, Clone)]
pub struct LearnedDenoiser {
    bundle: Arc<WeightBundle>,
    scale: f64,
}

impl LearnedDenoiser {
    pub fn new(bundle: Arc<WeightBundle>, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!("normalization scale must be positive, got {scale}")));
        }
        Ok(Self { bundle, scale })
    }

    /// Normalization `max|y| / max(d)`, or 1 for an all-zero measurement.
    pub fn for_measurement(bundle: Arc<WeightBundle>, y: &Measurement, masks: &MaskStack) -> Result<Self> {
        if bundle.bands() != masks.bands() {
            return Err(Error::DimensionMismatch(format!(
                "weights are for {} bands, masks have {}",
                bundle.bands(),
                masks.bands()
            )));
        }
        let peak = y.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let dmax = phi_phit_diag(masks).into_iter().fold(0.0f64, f64::max);
        let scale = if peak > 0.0 && dmax > 0.0 { peak / dmax } else { 1.0 };
        Self::new(bundle, scale)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Denoiser for LearnedDenoiser {
    fn denoise(&self, input: &SpectralCube, stage: usize) -> Result<SpectralCube> {
        let out = unet_forward(&cube_to_features(input, self.scale), &self.bundle, stage)?;
        Ok(features_to_cube(&out, input, self.scale))
    }

    fn name(&self) -> &'static str {
        "learned"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::WavelengthGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cube(w: usize, h: usize, b: usize, seed: u64) -> SpectralCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpectralCube::from_fn(w, h, WavelengthGrid::visible(b).unwrap(), |_, _, _| rng.random_range(-1.0..1.0))
            .unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let bundle = WeightBundle::zeros(4, vec![0.01]).unwrap();
        let out = denoise(&random_cube(16, 8, 4, 1), &bundle, 0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_bias_zero_input_outputs_zero() {
        let mut bundle = WeightBundle::random(3, vec![0.01], 2).unwrap();
        let names: Vec<String> = bundle
            .tensors()
            .iter()
            .filter(|t| t.name.ends_with("/bias"))
            .map(|t| t.name.clone())
            .collect();
        for n in names {
            bundle.tensor_mut(&n).unwrap().data.fill(0.0);
        }
        let zero = SpectralCube::zeros(8, 8, WavelengthGrid::visible(3).unwrap());
        let out = denoise(&zero, &bundle, 0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_is_preserved_and_rejections() {
        let bundle = WeightBundle::random(2, vec![0.01, 0.02], 3).unwrap();
        let input = random_cube(24, 16, 2, 4);
        let out = denoise(&input, &bundle, 1).unwrap();
        assert_eq!(out.dims(), input.dims());
        assert!(denoise(&random_cube(12, 16, 2, 4), &bundle, 0).is_err());
        assert!(denoise(&input, &bundle, 2).is_err());
        assert!(denoise(&random_cube(16, 16, 3, 4), &bundle, 0).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let bundle = WeightBundle::random(2, vec![0.01], 9).unwrap();
        let input = random_cube(16, 16, 2, 10);
        assert_eq!(denoise(&input, &bundle, 0).unwrap(), denoise(&input, &bundle, 0).unwrap());
    }
}
