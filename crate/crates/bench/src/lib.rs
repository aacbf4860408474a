//! Seeded fixtures shared by the benchmarks.

use cloudfill::detect::{detect_clouds, DetectorConfig};
use cloudfill::simulation::{
    composite_clouds, generate_cloud_alpha, synthetic_background, CloudSimParams,
};
use cloudfill::{DataMatrix, Dims, EntryMask, ImageSequence};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// A cloudy rank-3 sequence with 40% coverage.
pub fn cloudy_sequence(dims: Dims, seed: u64) -> ImageSequence {
    let clean = synthetic_background(dims, 3, seed).unwrap();
    let sim = CloudSimParams {
        coverage: 0.4,
        seed: seed.wrapping_add(1),
        ..CloudSimParams::default()
    };
    let alpha = generate_cloud_alpha(dims, &sim).unwrap();
    composite_clouds(
        &clean,
        &alpha,
        sim.cloud_intensity.clone(),
        seed.wrapping_add(2),
    )
    .unwrap()
    .0
}

/// Data matrix and detected mask, ready for a solver.
pub fn completion_problem(dims: Dims, seed: u64) -> (DataMatrix, EntryMask) {
    let cloudy = cloudy_sequence(dims, seed);
    let mask = detect_clouds(&cloudy, &DetectorConfig::default())
        .unwrap()
        .mask;
    (cloudy.to_matrix(), mask.to_entries(dims.c))
}
