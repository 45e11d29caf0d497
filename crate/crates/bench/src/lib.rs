//! Shared fixtures for the benchmarks.

use std::f64::consts::PI;

use spm_core::{attractor::random_low_mode_field, Domain, NoiseOperator, Smoothness, SpectralField, WienerPath};

pub fn domain(n_modes: usize) -> Domain {
    Domain::new(PI, n_modes).expect("valid domain")
}

/// Unit-H random field on the first eight modes.
pub fn field(d: &Domain, seed: u64) -> SpectralField {
    random_low_mode_field(d, seed, 8.min(d.n_modes()), 1.0).expect("valid field")
}

/// Three-mode C²₀ noise and a path on `[-8, 8]`.
pub fn noise(d: &Domain, seed: u64) -> (NoiseOperator, WienerPath) {
    let q = NoiseOperator::modal(d, &[1, 2, 3], vec![1.0, 0.5, 1.0 / 3.0], Smoothness::C2).expect("valid noise");
    let path = WienerPath::new(seed, 3, 1e-2, -8.0, 8.0).expect("valid path");
    (q, path)
}
