mod common;

use common::*;
use cubesolve_core::dataset::{augment, generate_scene, render_rgb, AugmentOp, Illuminant, SceneSpec};
use cubesolve_core::denoise::{Denoiser, TvDenoiser};
use cubesolve_core::forward::{add_noise, adjoint, forward};
use cubesolve_core::masks::{layout_masks, synthesize_library};
use cubesolve_core::perpixel::{solve_pixel_traced, PerPixelConfig};
use cubesolve_core::types::{NoiseSpec, SpectralCube, WavelengthGrid};
use proptest::prelude::*;
use rand::Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_identity(w in 1usize..12, h in 1usize..12, b in 1usize..10, seed: u64) {
        let mut r = rng(seed);
        let masks = random_masks(&mut r, w, h, b);
        let x = random_cube(&mut r, w, h, b, -1.0, 1.0);
        let y = random_measurement(&mut r, w, h);
        let lhs = dot(forward(&x, &masks).unwrap().data(), y.data());
        let rhs = dot(x.data(), adjoint(&y, &masks).unwrap().data());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * norm(x.data()) * norm(y.data()));
    }

    #[test]
    fn forward_is_linear(w in 1usize..8, h in 1usize..8, b in 1usize..6, a in -3.0f64..3.0, seed: u64) {
        let mut r = rng(seed);
        let masks = random_masks(&mut r, w, h, b);
        let x1 = random_cube(&mut r, w, h, b, -1.0, 1.0);
        let x2 = random_cube(&mut r, w, h, b, -1.0, 1.0);
        let combo: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + q).collect();
        let combo = SpectralCube::new(w, h, *x1.grid(), combo).unwrap();
        let lhs = forward(&combo, &masks).unwrap();
        let f1 = forward(&x1, &masks).unwrap();
        let f2 = forward(&x2, &masks).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(f1.data()).zip(f2.data()) {
            prop_assert!((l - (a * p + q)).abs() <= 1e-12 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn zero_noise_is_identity(w in 1usize..10, h in 1usize..10, seed: u64) {
        let mut r = rng(seed);
        let y = random_measurement(&mut r, w, h);
        let (noisy, sigma) = add_noise(&y, &NoiseSpec::new(0.0, seed).unwrap()).unwrap();
        prop_assert_eq!(sigma, 0.0);
        prop_assert_eq!(noisy, y);
    }

    #[test]
    fn library_masks_are_valid(units in 1usize..40, bands in 1usize..30, seed: u64) {
        let grid = WavelengthGrid::visible(bands).unwrap();
        let lib = synthesize_library(units, grid, seed).unwrap();
        prop_assert!(lib.spectra().flatten().all(|&v| (0.05..=0.95).contains(&v)));
        let masks = layout_masks(&lib, 5, 4).unwrap();
        prop_assert!(masks.data().iter().all(|&v| (0.05..=0.95).contains(&v)));
    }

    #[test]
    fn scenes_lie_in_unit_range(regions in 1usize..12, bands in 1usize..27, seed: u64) {
        let spec = SceneSpec { width: 12, height: 9, grid: WavelengthGrid::visible(bands).unwrap(), regions, seed, ..Default::default() };
        let cube = generate_scene(&spec).unwrap();
        prop_assert!(cube.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(cube, generate_scene(&spec).unwrap());
    }

    #[test]
    fn augmentation_group_and_range(w in 1usize..9, h in 1usize..9, turns in 0u8..4, seed: u64) {
        let mut r = rng(seed);
        let cube = random_cube(&mut r, w, h, 5, 0.0, 1.0).quantized();
        prop_assert_eq!(&augment(&cube, &[], seed).unwrap(), &cube);
        let there = augment(&cube, &[AugmentOp::Rotate { quarter_turns: turns }], 0).unwrap();
        let back = augment(&there, &[AugmentOp::Rotate { quarter_turns: (4 - turns) % 4 }], 0).unwrap();
        prop_assert_eq!(&back, &cube);
        let grid = *cube.grid();
        let ops = [
            AugmentOp::Crop { width: w.div_ceil(2), height: h.div_ceil(2) },
            AugmentOp::RandomRotation,
            AugmentOp::Illuminate(Illuminant::daylight_like(&grid)),
        ];
        let out = augment(&cube, &ops, seed).unwrap();
        prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(out, augment(&cube, &ops, seed).unwrap());
    }

    #[test]
    fn render_is_scale_monotone(c in 0.0f64..=1.0, seed: u64) {
        let mut r = rng(seed);
        let cube = random_cube(&mut r, 4, 3, 26, 0.0, 1.0);
        let full = render_rgb(&cube).unwrap();
        let scaled = render_rgb(&cube.map(|v| v * c)).unwrap();
        for (a, b) in scaled.pixels().zip(full.pixels()) {
            for ch in 0..3 {
                prop_assert!(a.0[ch] <= b.0[ch]);
            }
        }
        prop_assert_eq!(full, render_rgb(&cube).unwrap());
    }

    #[test]
    fn perpixel_is_nonnegative_and_monotone(seed: u64, bands in 2usize..27) {
        let mut r = rng(seed);
        let m: Vec<f64> = (0..25 * bands).map(|_| r.random_range(0.05..0.95)).collect();
        let y: Vec<f64> = (0..25).map(|_| r.random_range(-0.5..2.0)).collect();
        let (sol, trace) = solve_pixel_traced(&y, &m, bands, &PerPixelConfig::default()).unwrap();
        prop_assert!(sol.x.iter().all(|&v| v >= 0.0));
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn tv_fixes_constants(value in -2.0f64..2.0, w in 1usize..10, h in 1usize..10) {
        let cube = SpectralCube::filled(w, h, WavelengthGrid::visible(3).unwrap(), value);
        let out = TvDenoiser::default().denoise(&cube, 0).unwrap();
        for v in out.data() {
            prop_assert!((v - value).abs() <= 1e-12);
        }
    }
}
