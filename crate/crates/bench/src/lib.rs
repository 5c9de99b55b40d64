//! Shared fixtures for the benchmarks.

use msvine::{scenarios, CopulaData, MsRVineModel};

/// Scenario-2 model and `n` simulated rows.
pub fn scenario_data(n: usize, seed: u64) -> (MsRVineModel, CopulaData) {
    let model = scenarios::scenario(2).expect("built-in scenario");
    let (data, _) = model.simulate(n, seed).expect("simulation");
    (model, data)
}

/// `n` points on a scrambled grid inside the unit square.
pub fn unit_points(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            let v = ((i * 7919) % n) as f64 / n as f64 + 0.5 / n as f64;
            (u, v)
        })
        .collect()
}
