#![allow(dead_code)]

use sgdm_harness::RunConfig;

pub const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");

/// Gaussian noise on a 2-d quadratic, every suite enabled, sized to run in seconds.
pub fn small_full() -> RunConfig {
    RunConfig::from_toml(
        r#"
        name = "small"
        seed = 99
        trajectories = 24
        steps = 400
        x0 = [3.0, -2.0]
        betas = [0.1]
        checks = ["descent", "decomposition", "supermartingale", "ville", "mgf", "tail", "coverage", "constants"]
        traces = 3

        [objective]
        kind = "quadratic"
        diag = [1.0, 0.25]
        center = [0.5, -0.5]

        [noise]
        kind = "gaussian"
        sigma = 1.0

        [schedule]
        kind = "theorem-main"

        [[rules]]
        kind = "iterate-delta"
        epsilon = 1e-2

        [[rules]]
        kind = "value-delta"
        epsilon = 1e-3

        [settings]
        supermartingale_steps = [1, 5]
        branches = 2000
        prefix_seeds = 2
        bootstrap_resamples = 50
        mgf_samples = 20000
        tail_runs = 5000
        tail_terms = 20
        "#,
    )
    .unwrap()
}
