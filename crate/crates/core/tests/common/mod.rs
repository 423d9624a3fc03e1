//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

use cubesolve_core::types::{MaskStack, Measurement, SpectralCube, WavelengthGrid};
use cubesolve_core::unet::WeightBundle;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_masks(rng: &mut ChaCha8Rng, w: usize, h: usize, b: usize) -> MaskStack {
    let data = (0..w * h * b).map(|_| rng.random_range(0.05..0.95)).collect();
    MaskStack::new(w, h, WavelengthGrid::visible(b).unwrap(), data).unwrap()
}

pub fn random_cube(rng: &mut ChaCha8Rng, w: usize, h: usize, b: usize, lo: f64, hi: f64) -> SpectralCube {
    let data = (0..w * h * b).map(|_| rng.random_range(lo..hi)).collect();
    SpectralCube::new(w, h, WavelengthGrid::visible(b).unwrap(), data).unwrap()
}

pub fn random_measurement(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Measurement {
    Measurement::new(w, h, (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// The sensing matrix written out densely: row `p` holds `M_k(p)` at column
/// `p * B + k`, zero elsewhere.
pub fn dense_phi(masks: &MaskStack) -> DMatrix<f64> {
    let d = masks.dims();
    let mut phi = DMatrix::zeros(d.pixels(), d.len());
    for j in 0..d.height {
        for i in 0..d.width {
            let p = j * d.width + i;
            for k in 0..d.bands {
                phi[(p, p * d.bands + k)] = masks.get(i, j, k);
            }
        }
    }
    phi
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Objective of the per-pixel problem written with explicit loops.
pub fn pixel_objective_naive(y: &[f64], m: &[f64], b: usize, lambda: f64, x: &[f64]) -> f64 {
    let mut f = 0.0;
    for (r, &yv) in y.iter().enumerate() {
        let mut acc = 0.0;
        for k in 0..b {
            acc += m[r * b + k] * x[k];
        }
        f += (acc - yv) * (acc - yv);
    }
    for k in 0..b.saturating_sub(2) {
        let s = x[k] - 2.0 * x[k + 1] + x[k + 2];
        f += lambda * s * s;
    }
    f
}

/// Plain projected gradient on the per-pixel objective, gradient formed from
/// `M` directly, step from the Frobenius bound of the Hessian.
pub fn projected_gradient_oracle(y: &[f64], m: &[f64], b: usize, lambda: f64, iters: usize, tol: f64) -> Vec<f64> {
    let n = y.len();
    let mm = DMatrix::from_row_slice(n, b, m);
    let mut d2 = DMatrix::zeros(b.saturating_sub(2), b);
    for r in 0..b.saturating_sub(2) {
        d2[(r, r)] = 1.0;
        d2[(r, r + 1)] = -2.0;
        d2[(r, r + 2)] = 1.0;
    }
    let hess = 2.0 * (mm.transpose() * &mm + lambda * d2.transpose() * &d2);
    let step = 1.0 / hess.norm();
    let yv = dvec(y);
    let mut x = DVector::zeros(b);
    let mut f_old = f64::INFINITY;
    for _ in 0..iters {
        let grad = 2.0 * mm.transpose() * (&mm * &x - &yv) + 2.0 * lambda * d2.transpose() * (&d2 * &x);
        x = (&x - step * grad).map(|v| v.max(0.0));
        let f = pixel_objective_naive(y, m, b, lambda, x.as_slice());
        if (f_old - f).abs() <= tol * f.abs() {
            break;
        }
        f_old = f;
    }
    x.as_slice().to_vec()
}

/// U-net forward pass written independently of the library: f64 throughout,
/// explicit loops, layer list spelled out by hand.
pub fn naive_unet(bundle: &WeightBundle, stage: usize, input: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    type Map = Vec<Vec<Vec<f64>>>;
    let conv = |x: &Map, block: &str, layer: &str, relu: bool| -> Map {
        let w = bundle.tensor(&format!("stage{stage}/{block}/{layer}/weight")).unwrap();
        let bias = bundle.tensor(&format!("stage{stage}/{block}/{layer}/bias")).unwrap();
        let (oc, ic, k) = (w.shape[0], w.shape[1], w.shape[2]);
        assert_eq!(ic, x.len());
        let (h, wd) = (x[0].len() as isize, x[0][0].len() as isize);
        let r = (k / 2) as isize;
        let mut out = vec![vec![vec![0.0; wd as usize]; h as usize]; oc];
        for o in 0..oc {
            for yy in 0..h {
                for xx in 0..wd {
                    let mut acc = bias.data[o] as f64;
                    for c in 0..ic {
                        for dy in 0..k as isize {
                            for dx in 0..k as isize {
                                let (sy, sx) = (yy + dy - r, xx + dx - r);
                                if sy < 0 || sx < 0 || sy >= h || sx >= wd {
                                    continue;
                                }
                                let wi = ((o * ic + c) * k + dy as usize) * k + dx as usize;
                                acc += w.data[wi] as f64 * x[c][sy as usize][sx as usize];
                            }
                        }
                    }
                    out[o][yy as usize][xx as usize] = if relu { acc.max(0.0) } else { acc };
                }
            }
        }
        out
    };
    let pool = |x: &Map| -> Map {
        x.iter()
            .map(|p| {
                (0..p.len() / 2)
                    .map(|y| {
                        (0..p[0].len() / 2)
                            .map(|c| {
                                p[2 * y][2 * c].max(p[2 * y][2 * c + 1]).max(p[2 * y + 1][2 * c]).max(p[2 * y + 1][2 * c + 1])
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    };
    let up = |x: &Map| -> Map {
        x.iter()
            .map(|p| (0..p.len() * 2).map(|y| (0..p[0].len() * 2).map(|c| p[y / 2][c / 2]).collect()).collect())
            .collect()
    };
    let cat = |a: Map, b: &Map| -> Map { a.into_iter().chain(b.iter().cloned()).collect() };

    let x = input.to_vec();
    let e1 = conv(&conv(&x, "enc1", "conv1", true), "enc1", "conv2", true);
    let e2 = conv(&conv(&pool(&e1), "enc2", "conv1", true), "enc2", "conv2", true);
    let e3 = conv(&conv(&pool(&e2), "enc3", "conv1", true), "enc3", "conv2", true);
    let bn = conv(&conv(&pool(&e3), "bottleneck", "conv1", true), "bottleneck", "conv2", true);
    let d3 = conv(&conv(&cat(up(&bn), &e3), "dec3", "conv1", true), "dec3", "conv2", true);
    let d2 = conv(&conv(&cat(up(&d3), &e2), "dec2", "conv1", true), "dec2", "conv2", true);
    let d1 = conv(&conv(&cat(up(&d2), &e1), "dec1", "conv1", true), "dec1", "conv2", true);
    conv(&d1, "final", "conv", false)
}

/// A bundle whose every stage maps nonnegative input to itself: channel `c`
/// is routed enc1 → skip → dec1 → final through centre taps, everything
/// else is zero.
pub fn pass_through_bundle(bands: usize, stages: usize) -> WeightBundle {
    assert!(bands <= 32);
    let mut bundle = WeightBundle::zeros(bands, vec![1.0; stages]).unwrap();
    for s in 0..stages {
        let mut set = |name: &str, o: usize, i: usize| {
            let t = bundle.tensor_mut(&format!("stage{s}/{name}/weight")).unwrap();
            let (ic, k) = (t.shape[1], t.shape[2]);
            let centre = k / 2;
            t.data[((o * ic + i) * k + centre) * k + centre] = 1.0;
        };
        for c in 0..bands {
            set("enc1/conv1", c, c);
            set("enc1/conv2", c, c);
            set("dec1/conv1", c, 64 + c);
            set("dec1/conv2", c, c);
            set("final/conv", c, c);
        }
    }
    bundle
}
