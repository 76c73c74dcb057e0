//! Shared fixtures for the benchmarks.

use afdr_core::sim::{generate_synthetic, Scenario, Synthetic};

/// One replicate of a scenario with `n` rows and `p` columns.
pub fn fixture(n: usize, p: usize, s0: usize) -> Synthetic {
    let sc = Scenario {
        n,
        p,
        s0,
        replicates: 1,
        ..Scenario::default()
    };
    generate_synthetic(&sc, 0).expect("valid scenario")
}
