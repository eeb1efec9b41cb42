//! Cross-module pipeline checks through the public API.

use polygrid::geom::{marching_cubes, volume_metrics, MetricsConfig, SdfOracle};
use polygrid::grid::{GridConfig, Variant};
use polygrid::poly::Degree;
use polygrid::train::{fit, TrainConfig};
use polygrid::{forward_streaming, Vec3};

#[test]
fn sphere_fit_meshes_and_scores() {
    let oracle = SdfOracle::sphere(0.5).unwrap();
    let grid_cfg = GridConfig::new(Variant::FuncInterp, Degree::D1, 4);
    let train_cfg = TrainConfig {
        iterations: 600,
        batch_volume: 2048,
        batch_near: 2048,
        seed: 17,
        ..Default::default()
    };
    let result = fit(&oracle, &grid_cfg, &train_cfg).unwrap();
    assert!(result.final_loss.is_finite());

    let metrics_cfg = MetricsConfig {
        volume_samples: 10_000,
        near_samples: 10_000,
        ..Default::default()
    };
    let metrics = volume_metrics(&result.grid, &oracle, &metrics_cfg).unwrap();
    assert!(metrics.volume_iou_pct > 90.0, "sphere IOU too low: {metrics:?}");

    let extraction = marching_cubes(
        |pts| forward_streaming(&result.grid, pts).unwrap().outputs().to_vec(),
        32,
    )
    .unwrap();
    assert!(!extraction.mesh.is_empty());
    // every extracted vertex is near the fitted zero set
    let values =
        forward_streaming(&result.grid, extraction.mesh.vertices()).unwrap();
    let cell_diag = 2.0 * 3.0f64.sqrt() / 32.0;
    for &v in values.outputs() {
        assert!(v.abs() < cell_diag, "vertex field value {v}");
    }
}

/// Wall-clock property: evaluation cost is linear in I*J. Timing on shared
/// machines is noisy, so this stays out of the default run.
#[test]
#[ignore = "timing-sensitive; run manually"]
fn forward_cost_scales_linearly() {
    use std::time::Instant;
    let oracle = SdfOracle::sphere(0.5).unwrap();
    let _ = oracle;
    let mut timings = Vec::new();
    for (res, j) in [(8u32, 2048usize), (8, 4096), (8, 8192)] {
        let cfg = GridConfig::new(Variant::FuncInterp, Degree::D1, res);
        let grid =
            polygrid::ParamGrid::init(cfg, &polygrid::InitSpec { seed: 1, value_stddev: 0.1 })
                .unwrap();
        let queries: Vec<Vec3> = (0..j)
            .map(|n| {
                let t = n as f64 / j as f64;
                Vec3::new(2.0 * t - 1.0, (7.0 * t).sin() * 0.9, (3.0 * t).cos() * 0.9)
            })
            .collect();
        let _ = forward_streaming(&grid, &queries).unwrap();
        let t0 = Instant::now();
        for _ in 0..5 {
            let _ = forward_streaming(&grid, &queries).unwrap();
        }
        timings.push(t0.elapsed().as_secs_f64());
    }
    // doubling J should roughly double the time
    for w in timings.windows(2) {
        let ratio = w[1] / w[0];
        assert!((1.6..=2.4).contains(&ratio), "timings {timings:?}");
    }
}
