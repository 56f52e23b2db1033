//! Fixtures shared by the benchmarks.

use mczsl_core::data::{synth_dataset, DatasetContainer, SynthSpec};
use mczsl_core::{Dense2D, Rng};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Dense2D<f32> {
    let mut rng = Rng::seed_from(seed);
    let data = (0..rows * cols).map(|_| rng.normal() as f32).collect();
    Dense2D::new(rows, cols, data).expect("shape matches data")
}

/// Desk-scale synthetic dataset: 25 classes, d=64, z=16.
pub fn small_dataset() -> DatasetContainer {
    synth_dataset(&SynthSpec::default(), &mut Rng::seed_from(0)).expect("default spec is valid")
}
