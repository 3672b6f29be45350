//! Fixtures shared by the benchmarks.

use nsvgd_core::dynamics::initial_ensemble;
use nsvgd_core::{standard_gaussian, Ensemble, InitSpec, RngStream};

/// `n` standard-normal particles in `d` dimensions, fixed seed.
pub fn gaussian_cloud(n: usize, d: usize) -> Ensemble {
    let target = standard_gaussian(d).expect("d > 0");
    initial_ensemble(&InitSpec::StdNormal, n, d, &target, &RngStream::new(17)).expect("valid shape")
}
