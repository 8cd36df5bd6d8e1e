//! Shared fixtures for the benchmarks.

use ivrobust::montecarlo::{draw, rep_rng};
use ivrobust::{CrossProducts, DgpSpec, IvDataset};

/// One draw from the weak-nuisance simulation design.
pub fn simulated(n: usize, k: usize) -> IvDataset {
    draw(&DgpSpec::guggenberger(n, k), &mut rep_rng(1, 0)).expect("valid design")
}

pub fn cross_products(n: usize, k: usize) -> CrossProducts {
    CrossProducts::new(&simulated(n, k)).expect("full rank draw")
}
