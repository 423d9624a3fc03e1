//! The `WUNB` weights bundle: K per-stage U-net parameter sets plus the γ
//! schedule.
//!
//! ```text
//! "WUNB" | u16 version | u32 stage_count | stage_count × f32 gamma
//!        | u32 tensor_count
//!        | per tensor: u16 name_len | name (UTF-8) | u8 rank | rank × u32 dim | f32 data
//! ```
//!
//! Little-endian throughout. Tensors are named `stage{k}/{block}/{layer}/{kind}`
//! and written in manifest order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"WUNB";
/// Version 1: architecture below, denoiser input divided by
/// `max|y| / max(d)` before the forward pass and rescaled after.
pub const WEIGHTS_VERSION: u16 = 1;

/// Encoder widths per level; the bottleneck doubles the last one.
pub const ENCODER_WIDTHS: [usize; 3] = [32, 64, 128];
pub const BOTTLENECK_WIDTH: usize = 256;
pub const KERNEL_SIZE: usize = 3;
pub const CONV_LAYERS: usize = 15;

/// One convolution in the fixed architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub block: &'static str,
    pub layer: &'static str,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
}

impl ConvSpec {
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn bias_shape(&self) -> Vec<usize> {
        vec![self.out_channels]
    }

    pub fn key(&self, stage: usize, kind: &str) -> String {
        format!("stage{stage}/{}/{}/{kind}", self.block, self.layer)
    }
}

/// The 15 convolutions of one stage's denoiser, in forward order.
pub fn unet_layers(bands: usize) -> Vec<ConvSpec> {
    let [c1, c2, c3] = ENCODER_WIDTHS;
    let cb = BOTTLENECK_WIDTH;
    let k = KERNEL_SIZE;
    let conv = |block, layer, out_channels, in_channels, kernel| ConvSpec {
        block,
        layer,
        out_channels,
        in_channels,
        kernel,
    };
    vec![
        conv("enc1", "conv1", c1, bands, k),
        conv("enc1", "conv2", c1, c1, k),
        conv("enc2", "conv1", c2, c1, k),
        conv("enc2", "conv2", c2, c2, k),
        conv("enc3", "conv1", c3, c2, k),
        conv("enc3", "conv2", c3, c3, k),
        conv("bottleneck", "conv1", cb, c3, k),
        conv("bottleneck", "conv2", cb, cb, k),
        conv("dec3", "conv1", c3, cb + c3, k),
        conv("dec3", "conv2", c3, c3, k),
        conv("dec2", "conv1", c2, c3 + c2, k),
        conv("dec2", "conv2", c2, c2, k),
        conv("dec1", "conv1", c1, c2 + c1, k),
        conv("dec1", "conv2", c1, c1, k),
        conv("final", "conv", bands, c1, 1),
    ]
}

/// Every `(name, shape)` a bundle must contain, in file order.
pub fn manifest(bands: usize, stages: usize) -> Vec<(String, Vec<usize>)> {
    let layers = unet_layers(bands);
    let mut out = Vec::with_capacity(stages * layers.len() * 2);
    for s in 0..stages {
        for l in &layers {
            out.push((l.key(s, "weight"), l.weight_shape()));
            out.push((l.key(s, "bias"), l.bias_shape()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    format_version: u16,
    bands: usize,
    gammas: Vec<f32>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl WeightBundle {
    /// Validates `tensors` against the manifest and stores them in manifest
    /// order.
    pub fn new(gammas: Vec<f32>, tensors: Vec<Tensor>) -> Result<Self> {
        Self::with_version(WEIGHTS_VERSION, gammas, tensors)
    }

    fn with_version(format_version: u16, gammas: Vec<f32>, tensors: Vec<Tensor>) -> Result<Self> {
        let stages = gammas.len();
        if stages == 0 {
            return Err(Error::InvalidParameter("bundle needs at least one stage".into()));
        }
        if let Some(g) = gammas.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {g}")));
        }
        for t in &tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::ShapeMismatch {
                    name: t.name.clone(),
                    expected: vec![t.data.len()],
                    found: t.shape.clone(),
                });
            }
        }
        let mut by_name: HashMap<&str, &Tensor> = HashMap::with_capacity(tensors.len());
        for t in &tensors {
            if by_name.insert(t.name.as_str(), t).is_some() {
                return Err(Error::InvalidData(format!("duplicate tensor {}", t.name)));
            }
        }
        let bands = Self::infer_bands(&by_name)?;
        let expected = manifest(bands, stages);
        let mut ordered = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let t = by_name
                .remove(name.as_str())
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if &t.shape != shape {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape.clone(),
                });
            }
            ordered.push(t.clone());
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::UnknownTensor(extra.to_string()));
        }
        let index = ordered
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
        Ok(Self {
            format_version,
            bands,
            gammas,
            tensors: ordered,
            index,
        })
    }

    fn infer_bands(by_name: &HashMap<&str, &Tensor>) -> Result<usize> {
        let key = "stage0/final/conv/bias";
        let t = by_name.get(key).ok_or_else(|| Error::MissingTensor(key.into()))?;
        match t.shape.as_slice() {
            [b] if *b > 0 => Ok(*b),
            other => Err(Error::ShapeMismatch {
                name: key.into(),
                expected: vec![0],
                found: other.to_vec(),
            }),
        }
    }

    /// Every weight and bias set to zero.
    pub fn zeros(bands: usize, gammas: Vec<f32>) -> Result<Self> {
        let tensors = manifest(bands, gammas.len())
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                Tensor {
                    name,
                    shape,
                    data: vec![0.0; n],
                }
            })
            .collect();
        Self::new(gammas, tensors)
    }

    /// He-uniform weights and small uniform biases, deterministic per seed.
    pub fn random(bands: usize, gammas: Vec<f32>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = manifest(bands, gammas.len())
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 4 {
                    let fan_in = (shape[1] * shape[2] * shape[3]) as f32;
                    let a = (6.0 / fan_in).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                } else {
                    (0..n).map(|_| rng.random_range(-0.05..0.05)).collect()
                };
                Tensor { name, shape, data }
            })
            .collect();
        Self::new(gammas, tensors)
    }

    pub fn format_version(&self) -> u16 {
        self.format_version
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn stage_count(&self) -> usize {
        self.gammas.len()
    }

    pub fn gammas(&self) -> &[f32] {
        &self.gammas
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(self.gammas.len() as u32).to_le_bytes());
        for g in &self.gammas {
            out.extend_from_slice(&g.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::NotAWeightsFile(String::from_utf8_lossy(magic).into_owned()));
        }
        let version = r.u16("version")?;
        if version != WEIGHTS_VERSION {
            return Err(Error::InvalidData(format!("unsupported weights version {version}")));
        }
        let stages = r.u32("stage count")? as usize;
        let mut gammas = Vec::with_capacity(stages.min(1 << 16));
        for _ in 0..stages {
            gammas.push(r.f32("gamma")?);
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| Error::InvalidData("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::InvalidData("tensor too large".into()))?, &name)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if !data.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidData(format!("non-finite value in tensor {name}")));
            }
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::InvalidData(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Self::with_version(version, gammas, tensors)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedWeights(format!("reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightBundle::from_bytes(&bytes)
}

pub fn save_weights(bundle: &WeightBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bundle.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifteen_convolutions_per_stage() {
        let layers = unet_layers(26);
        assert_eq!(layers.len(), CONV_LAYERS);
        assert_eq!(manifest(26, 12).len(), 12 * 15 * 2);
        assert_eq!(layers.last().unwrap().weight_shape(), vec![26, 32, 1, 1]);
    }

    #[test]
    fn byte_round_trip() {
        let b = WeightBundle::random(4, vec![0.01, 0.02], 5).unwrap();
        let bytes = b.to_bytes();
        let back = WeightBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn twelve_stage_bundle() {
        let b = WeightBundle::zeros(2, vec![0.01; 12]).unwrap();
        let back = WeightBundle::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(back.stage_count(), 12);
        assert_eq!(back.gammas().len(), 12);
    }

    fn tensors_of(b: &WeightBundle) -> Vec<Tensor> {
        b.tensors().to_vec()
    }

    #[test]
    fn missing_tensor_is_named() {
        let b = WeightBundle::zeros(3, vec![0.01]).unwrap();
        let tensors: Vec<Tensor> = tensors_of(&b)
            .into_iter()
            .filter(|t| t.name != "stage0/final/conv/bias")
            .collect();
        let err = WeightBundle::new(vec![0.01], tensors).unwrap_err();
        assert!(err.to_string().contains("stage0/final/conv/bias"), "{err}");

        let tensors: Vec<Tensor> = tensors_of(&b)
            .into_iter()
            .filter(|t| t.name != "stage0/dec2/conv1/weight")
            .collect();
        let err = WeightBundle::new(vec![0.01], tensors).unwrap_err();
        assert!(matches!(err, Error::MissingTensor(ref n) if n == "stage0/dec2/conv1/weight"));
    }

    #[test]
    fn unknown_and_misshaped_tensors() {
        let b = WeightBundle::zeros(3, vec![0.01]).unwrap();
        let mut tensors = tensors_of(&b);
        tensors.push(Tensor {
            name: "stage0/enc1/conv3/weight".into(),
            shape: vec![1],
            data: vec![0.0],
        });
        let err = WeightBundle::new(vec![0.01], tensors).unwrap_err();
        assert!(err.to_string().contains("unknown tensor stage0/enc1/conv3/weight"), "{err}");

        let mut tensors = tensors_of(&b);
        let t = tensors.iter_mut().find(|t| t.name == "stage0/enc2/conv2/bias").unwrap();
        t.shape = vec![63];
        t.data.pop();
        let err = WeightBundle::new(vec![0.01], tensors).unwrap_err();
        assert!(err.to_string().contains("shape mismatch for stage0/enc2/conv2/bias"), "{err}");
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = WeightBundle::zeros(2, vec![0.5]).unwrap().to_bytes();
        let err = WeightBundle::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated file"), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(WeightBundle::from_bytes(&bad), Err(Error::NotAWeightsFile(_))));
    }

    #[test]
    fn tensors_are_reordered_to_manifest_order() {
        let b = WeightBundle::random(2, vec![0.1], 1).unwrap();
        let mut shuffled = tensors_of(&b);
        shuffled.reverse();
        let again = WeightBundle::new(vec![0.1], shuffled).unwrap();
        assert_eq!(again.to_bytes(), b.to_bytes());
    }
}
