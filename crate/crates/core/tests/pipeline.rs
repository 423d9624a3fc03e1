//! End-to-end behaviour on the pinned default scenes.

mod common;

use common::*;
use cubesolve_core::admm::{reconstruct, AdmmConfig};
use cubesolve_core::dataset::{generate_scene_detailed, step_edge_scene, SceneSpec, DEFAULT_STEP_EDGE_SEED};
use cubesolve_core::forward::forward;
use cubesolve_core::masks::{
    layout_masks, mean_pairwise_correlation, synthesize_library, unit_layout, LayoutMode, DEFAULT_LIBRARY_SEED,
    DEFAULT_UNIT_COUNT,
};
use cubesolve_core::metrics::{fidelity, mean_fidelity_map, mosaic_probe};
use cubesolve_core::perpixel::{reconstruct_perpixel, PerPixelConfig};
use cubesolve_core::types::{SpectralCube, WavelengthGrid};
use std::collections::HashSet;

#[test]
fn default_library_is_diverse() {
    let lib = synthesize_library(DEFAULT_UNIT_COUNT, WavelengthGrid::default(), DEFAULT_LIBRARY_SEED).unwrap();
    assert!(mean_pairwise_correlation(&lib) < 0.995);

    let layout = unit_layout(&lib, 256, 256, LayoutMode::Random).unwrap();
    let seen: HashSet<u32> = layout.iter().copied().collect();
    assert_eq!(seen.len(), DEFAULT_UNIT_COUNT);

    let mut fewest = usize::MAX;
    for j in 0..256 - 4 {
        for i in 0..256 - 4 {
            let mut types = HashSet::new();
            for dj in 0..5 {
                for di in 0..5 {
                    types.insert(layout[(j + dj) * 256 + i + di]);
                }
            }
            fewest = fewest.min(types.len());
        }
    }
    assert!(fewest >= 15, "a 5x5 window has only {fewest} unit types");
}

#[test]
fn default_scene_has_dissimilar_regions() {
    let scene = generate_scene_detailed(&SceneSpec::default()).unwrap();
    let mut dissimilar = 0;
    for a in 0..scene.spectra.len() {
        for b in a + 1..scene.spectra.len() {
            if fidelity(&scene.spectra[a], &scene.spectra[b]).unwrap() < 0.95 {
                dissimilar += 1;
            }
        }
    }
    assert!(dissimilar >= 2, "{dissimilar} dissimilar pairs");
}

#[test]
fn identity_trace_is_non_increasing_after_stage_two() {
    let grid = WavelengthGrid::visible(8).unwrap();
    let truth = cubesolve_core::dataset::generate_scene(&SceneSpec { grid, ..Default::default() }).unwrap();
    let lib = synthesize_library(DEFAULT_UNIT_COUNT, grid, DEFAULT_LIBRARY_SEED).unwrap();
    let masks = layout_masks(&lib, 64, 64).unwrap();
    let y = forward(&truth, &masks).unwrap();
    let out = reconstruct(&y, &masks, &AdmmConfig::identity(12)).unwrap();
    assert_eq!(out.trace.len(), 12);
    // The matched-filter start already satisfies Φv = y and is a fixed point
    // of the identity-denoiser iteration, so the trace sits at roundoff.
    let y_norm = y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let slack = 1e-12 * y_norm;
    for w in out.trace[2..].windows(2) {
        assert!(w[1].data_fidelity <= w[0].data_fidelity + slack, "{}", out.trace_csv());
    }
    assert!(out.trace.iter().all(|r| r.data_fidelity <= slack));
}

#[test]
fn perpixel_constant_scene_is_accurate_everywhere() {
    let grid = WavelengthGrid::visible(8).unwrap();
    let spectrum: Vec<f64> = grid
        .wavelengths()
        .map(|nm| 0.2 + 0.6 * (-0.5 * ((nm - 560.0) / 60.0f64).powi(2)).exp())
        .collect();
    let truth = SpectralCube::from_fn(24, 24, grid, |_, _, k| spectrum[k]).unwrap();
    let lib = synthesize_library(DEFAULT_UNIT_COUNT, grid, DEFAULT_LIBRARY_SEED).unwrap();
    let masks = layout_masks(&lib, 24, 24).unwrap();
    let y = forward(&truth, &masks).unwrap();
    let recon = reconstruct_perpixel(&y, &masks, &PerPixelConfig::default()).unwrap();
    let map = mean_fidelity_map(&truth, &recon, None).unwrap();
    let worst = map.values.iter().cloned().fold(1.0, f64::min);
    assert!(worst >= 0.99, "worst pixel fidelity {worst}");
}

#[test]
fn perpixel_shows_mosaic_effect_and_admm_does_not() {
    let grid = WavelengthGrid::visible(8).unwrap();
    let truth = step_edge_scene(64, 64, grid, DEFAULT_STEP_EDGE_SEED).unwrap();
    let lib = synthesize_library(DEFAULT_UNIT_COUNT, grid, DEFAULT_LIBRARY_SEED).unwrap();
    let masks = layout_masks(&lib, 64, 64).unwrap();
    let y = forward(&truth, &masks).unwrap();
    let pp = reconstruct_perpixel(&y, &masks, &PerPixelConfig::default()).unwrap();
    let probe = mosaic_probe(&truth, &pp, 2).unwrap();
    assert!(probe.edge_mean < probe.flat_mean, "{probe:?}");
    let admm = reconstruct(&y, &masks, &AdmmConfig::default()).unwrap();
    let probe = mosaic_probe(&truth, &admm.cube, 2).unwrap();
    assert!((probe.edge_mean - probe.flat_mean).abs() <= 0.02, "{probe:?}");
}

#[test]
fn no_compression_with_every_denoiser() {
    let mut r = rng(300);
    let grid = WavelengthGrid::visible(1).unwrap();
    let truth = cubesolve_core::dataset::generate_scene(&SceneSpec { width: 16, height: 16, grid, ..Default::default() })
        .unwrap();
    let masks = random_masks(&mut r, 16, 16, 1);
    let y = forward(&truth, &masks).unwrap();
    let bundle = std::sync::Arc::new(pass_through_bundle(1, 12));
    for cfg in [AdmmConfig::tv(12), AdmmConfig::identity(12), AdmmConfig::learned(bundle)] {
        let out = reconstruct(&y, &masks, &cfg).unwrap();
        let f = mean_fidelity_map(&truth, &out.cube, None).unwrap();
        assert!(f.mean >= 0.999 && f.excluded == 0, "{:?}: {}", cfg.denoiser, f.mean);
    }
}
