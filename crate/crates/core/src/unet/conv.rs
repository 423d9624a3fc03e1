//! Dense feature maps and the handful of layers the U-net needs.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// A `channels x height x width` feature volume, channel-major (CHW).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// A 4-axis convolution kernel laid out `[out, in, kh, kw]`.
#[derive(Debug, Clone, Copy)]
pub struct KernelRef<'a> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub size: usize,
    pub data: &'a [f32],
}

impl<'a> KernelRef<'a> {
    pub fn new(shape: &[usize], data: &'a [f32]) -> Result<Self> {
        if shape.len() != 4 || shape[2] != shape[3] || shape[2].is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "kernel must be [out, in, k, k] with odd k, got {shape:?}"
            )));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::DimensionMismatch(format!(
                "kernel {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self {
            out_channels: shape[0],
            in_channels: shape[1],
            size: shape[2],
            data,
        })
    }

    fn tap(&self, o: usize, c: usize, dy: usize, dx: usize) -> f32 {
        self.data[((o * self.in_channels + c) * self.size + dy) * self.size + dx]
    }
}

/// Zero-padded "same" cross-correlation followed by a bias add.
///
/// Each output plane is accumulated in `f64` before rounding back to `f32`.
pub fn conv2d(input: &FeatureMap, kernel: KernelRef<'_>, bias: &[f32]) -> Result<FeatureMap> {
    if kernel.in_channels != input.channels {
        return Err(Error::DimensionMismatch(format!(
            "kernel expects {} input channels, feature map has {}",
            kernel.in_channels, input.channels
        )));
    }
    if bias.len() != kernel.out_channels {
        return Err(Error::DimensionMismatch(format!(
            "bias has {} entries for {} output channels",
            bias.len(),
            kernel.out_channels
        )));
    }
    let (h, w) = (input.height, input.width);
    let r = kernel.size / 2;
    let plane = h * w;
    let mut out = vec![0.0f32; kernel.out_channels * plane];

    out.par_chunks_mut(plane).enumerate().for_each(|(o, out_plane)| {
        let mut acc = vec![bias[o] as f64; plane];
        for c in 0..input.channels {
            let src = input.plane(c);
            for dy in 0..kernel.size {
                for dx in 0..kernel.size {
                    let wt = kernel.tap(o, c, dy, dx) as f64;
                    if wt == 0.0 {
                        continue;
                    }
                    // Output (y, x) reads input (y + dy - r, x + dx - r).
                    let y0 = r.saturating_sub(dy);
                    let y1 = (h + r).saturating_sub(dy).min(h);
                    let x0 = r.saturating_sub(dx);
                    let x1 = (w + r).saturating_sub(dx).min(w);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = y + dy - r;
                        let dst = &mut acc[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + dx - r..sy * w + x1 + dx - r];
                        for (a, &v) in dst.iter_mut().zip(s) {
                            *a += wt * v as f64;
                        }
                    }
                }
            }
        }
        for (o, a) in out_plane.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    FeatureMap::new(kernel.out_channels, h, w, out)
}

pub fn relu_in_place(map: &mut FeatureMap) {
    for v in &mut map.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// 2x2 max pooling with stride 2. Height and width must be even.
pub fn max_pool2(input: &FeatureMap) -> FeatureMap {
    let (h, w) = (input.height / 2, input.width / 2);
    let mut out = FeatureMap::zeros(input.channels, h, w);
    for c in 0..input.channels {
        let src = input.plane(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let a = src[(2 * y) * input.width + 2 * x];
                let b = src[(2 * y) * input.width + 2 * x + 1];
                let cc = src[(2 * y + 1) * input.width + 2 * x];
                let d = src[(2 * y + 1) * input.width + 2 * x + 1];
                dst[y * w + x] = a.max(b).max(cc).max(d);
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(input: &FeatureMap) -> FeatureMap {
    let (h, w) = (input.height * 2, input.width * 2);
    let mut out = FeatureMap::zeros(input.channels, h, w);
    for c in 0..input.channels {
        let src = input.plane(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * input.width + x / 2];
            }
        }
    }
    out
}

/// Channel concatenation `[first, second]`.
pub fn concat(first: &FeatureMap, second: &FeatureMap) -> Result<FeatureMap> {
    if first.height != second.height || first.width != second.width {
        return Err(Error::DimensionMismatch(format!(
            "cannot concatenate {}x{} with {}x{}",
            first.height, first.width, second.height, second.width
        )));
    }
    let mut data = Vec::with_capacity(first.data.len() + second.data.len());
    data.extend_from_slice(&first.data);
    data.extend_from_slice(&second.data);
    FeatureMap::new(first.channels + second.channels, first.height, first.width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(input: &FeatureMap, shape: [usize; 4], k: &[f32], bias: &[f32]) -> Vec<f64> {
        let [oc, ic, ks, _] = shape;
        let r = ks as isize / 2;
        let (h, w) = (input.height as isize, input.width as isize);
        let mut out = vec![0.0f64; oc * (h * w) as usize];
        for o in 0..oc {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o] as f64;
                    for c in 0..ic {
                        for dy in 0..ks as isize {
                            for dx in 0..ks as isize {
                                let sy = y + dy - r;
                                let sx = x + dx - r;
                                if sy < 0 || sy >= h || sx < 0 || sx >= w {
                                    continue;
                                }
                                let kv = k[((o * ic + c) * ks + dy as usize) * ks + dx as usize] as f64;
                                acc += kv * input.get(c, sy as usize, sx as usize) as f64;
                            }
                        }
                    }
                    out[(o * h as usize + y as usize) * w as usize + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = FeatureMap::new(3, 4, 5, (0..60).map(|_| rng.random::<f32>()).collect()).unwrap();
        let mut k = vec![0.0f32; 9];
        for c in 0..3 {
            k[c * 3 + c] = 1.0;
        }
        let out = conv2d(&input, KernelRef::new(&[3, 3, 1, 1], &k).unwrap(), &[0.0; 3]).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn centred_delta_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = FeatureMap::new(2, 5, 5, (0..50).map(|_| rng.random::<f32>()).collect()).unwrap();
        let mut k = vec![0.0f32; 2 * 2 * 9];
        for c in 0..2 {
            k[(c * 2 + c) * 9 + 4] = 1.0;
        }
        let out = conv2d(&input, KernelRef::new(&[2, 2, 3, 3], &k).unwrap(), &[0.0; 2]).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn matches_naive_six_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(ic, oc, ks) in &[(1usize, 1usize, 3usize), (3, 4, 3), (2, 3, 5), (4, 2, 1)] {
            let input =
                FeatureMap::new(ic, 5, 5, (0..ic * 25).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let shape = [oc, ic, ks, ks];
            let k: Vec<f32> = (0..oc * ic * ks * ks).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..oc).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = conv2d(&input, KernelRef::new(&shape, &k).unwrap(), &b).unwrap();
            let slow = naive(&input, shape, &k, &b);
            for (f, s) in fast.data.iter().zip(&slow) {
                let tol = 1e-5 * s.abs().max(1.0);
                assert!((*f as f64 - s).abs() <= tol, "{f} vs {s}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let input = FeatureMap::zeros(2, 3, 3);
        let k = vec![0.0f32; 3 * 3 * 9];
        assert!(conv2d(&input, KernelRef::new(&[3, 3, 3, 3], &k).unwrap(), &[0.0; 3]).is_err());
        assert!(KernelRef::new(&[1, 1, 2, 2], &[0.0; 4]).is_err());
        let k = vec![0.0f32; 3 * 2 * 9];
        assert!(conv2d(&input, KernelRef::new(&[3, 2, 3, 3], &k).unwrap(), &[0.0; 2]).is_err());
    }

    #[test]
    fn pool_and_upsample() {
        let input = FeatureMap::new(1, 2, 4, vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 7.0]).unwrap();
        let p = max_pool2(&input);
        assert_eq!(p.data, vec![5.0, 7.0]);
        let u = upsample2(&p);
        assert_eq!(u.data, vec![5.0, 5.0, 7.0, 7.0, 5.0, 5.0, 7.0, 7.0]);
    }
}
