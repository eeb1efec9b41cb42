//! Fit-quality metrics: Chamfer distance between point sets, absolute-error
//! and intersection-over-union statistics over volume and near-surface
//! samples, and per-vertex normal estimation.
//!
//! All metrics are computed in the normalized `[-1,1]^3` domain. Reporting
//! conventions follow the usual table units: AE is returned scaled by 1e4,
//! IOU as a percentage; the Chamfer helper returns raw domain units (CLI
//! output scales it by 1e3).

use super::oracle::{distance_batch_parallel, SdfOracle};
use crate::error::{Error, Result};
use crate::eval::{forward_streaming, query_gradient};
use crate::grid::ParamGrid;
use crate::vec3::Vec3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Balanced kd-tree over points for exact nearest-neighbor queries.
pub struct KdTree {
    /// Implicit binary tree: node i has children 2i+1, 2i+2.
    nodes: Vec<KdNode>,
}

#[derive(Clone, Copy)]
struct KdNode {
    point: Vec3,
    axis: u8,
    used: bool,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Result<KdTree> {
        if points.is_empty() {
            return Err(Error::input("cannot build a kd-tree over an empty set"));
        }
        let mut scratch: Vec<Vec3> = points.to_vec();
        let cap = scratch.len().next_power_of_two() * 2;
        let mut nodes =
            vec![KdNode { point: Vec3::ZERO, axis: 0, used: false }; cap.max(1)];
        build_kd(&mut scratch, 0, &mut nodes);
        Ok(KdTree { nodes })
    }

    /// Squared distance to the nearest stored point.
    pub fn nearest_sq(&self, q: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, idx: usize, q: Vec3, best: &mut f64) {
        if idx >= self.nodes.len() || !self.nodes[idx].used {
            return;
        }
        let node = self.nodes[idx];
        let d2 = (node.point - q).norm_sq();
        if d2 < *best {
            *best = d2;
        }
        let delta = q.component(node.axis as usize) - node.point.component(node.axis as usize);
        let (near, far) =
            if delta < 0.0 { (2 * idx + 1, 2 * idx + 2) } else { (2 * idx + 2, 2 * idx + 1) };
        self.search(near, q, best);
        if delta * delta < *best {
            self.search(far, q, best);
        }
    }
}

fn build_kd(points: &mut [Vec3], idx: usize, nodes: &mut Vec<KdNode>) {
    if points.is_empty() {
        return;
    }
    // split on the widest axis
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for &p in points.iter() {
        lo = lo.min_by_component(p);
        hi = hi.max_by_component(p);
    }
    let extent = hi - lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0usize
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| {
        a.component(axis).partial_cmp(&b.component(axis)).unwrap_or(std::cmp::Ordering::Equal)
    });
    if idx >= nodes.len() {
        nodes.resize(idx + 1, KdNode { point: Vec3::ZERO, axis: 0, used: false });
    }
    nodes[idx] = KdNode { point: points[mid], axis: axis as u8, used: true };
    let (left, rest) = points.split_at_mut(mid);
    let right = &mut rest[1..];
    build_kd(left, 2 * idx + 1, nodes);
    build_kd(right, 2 * idx + 2, nodes);
}

/// Symmetric Chamfer distance: mean nearest-neighbor distance from `a` to
/// `b` plus the mean from `b` to `a` (exact, via kd-trees).
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("chamfer distance needs two non-empty sets"));
    }
    let tree_a = KdTree::build(a)?;
    let tree_b = KdTree::build(b)?;
    let mean_to = |from: &[Vec3], tree: &KdTree| -> f64 {
        let sums: Vec<f64> = from
            .par_chunks(2048)
            .map(|chunk| chunk.iter().map(|&p| tree.nearest_sq(p).sqrt()).sum::<f64>())
            .collect();
        sums.iter().sum::<f64>() / from.len() as f64
    };
    Ok(mean_to(a, &tree_b) + mean_to(b, &tree_a))
}

/// Sampling budget for the volume/near metrics (desk-scale default 1e5;
/// the reference experiments use 5e6).
#[derive(Debug, Clone, Copy)]
pub struct MetricsConfig {
    pub volume_samples: usize,
    pub near_samples: usize,
    pub near_sigma: f64,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { volume_samples: 100_000, near_samples: 100_000, near_sigma: 0.01, seed: 7 }
    }
}

/// AE is reported in 1e-4 units, IOU in percent; see module docs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeMetrics {
    pub volume_ae_e4: f64,
    pub volume_iou_pct: f64,
    pub near_ae_e4: f64,
    pub near_iou_pct: f64,
}

/// Compare any predictor against the oracle on uniform-volume and
/// near-surface sample sets.
pub fn volume_metrics_fn(
    mut predict: impl FnMut(&[Vec3]) -> Result<Vec<f64>>,
    oracle: &SdfOracle,
    cfg: &MetricsConfig,
) -> Result<VolumeMetrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let volume: Vec<Vec3> = (0..cfg.volume_samples)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let near: Vec<Vec3> = oracle
        .sample_surface(cfg.near_samples, &mut rng)
        .into_iter()
        .map(|s| {
            s + Vec3::new(
                cfg.near_sigma * rng.sample::<f64, _>(StandardNormal),
                cfg.near_sigma * rng.sample::<f64, _>(StandardNormal),
                cfg.near_sigma * rng.sample::<f64, _>(StandardNormal),
            )
        })
        .collect();

    let (vol_ae, vol_iou) = ae_iou(&mut predict, oracle, &volume)?;
    let (near_ae, near_iou) = ae_iou(&mut predict, oracle, &near)?;
    Ok(VolumeMetrics {
        volume_ae_e4: vol_ae * 1e4,
        volume_iou_pct: vol_iou * 100.0,
        near_ae_e4: near_ae * 1e4,
        near_iou_pct: near_iou * 100.0,
    })
}

/// Grid-backed wrapper around [`volume_metrics_fn`].
pub fn volume_metrics(
    grid: &ParamGrid,
    oracle: &SdfOracle,
    cfg: &MetricsConfig,
) -> Result<VolumeMetrics> {
    volume_metrics_fn(
        |pts| Ok(forward_streaming(grid, pts)?.outputs().to_vec()),
        oracle,
        cfg,
    )
}

fn ae_iou(
    predict: &mut impl FnMut(&[Vec3]) -> Result<Vec<f64>>,
    oracle: &SdfOracle,
    points: &[Vec3],
) -> Result<(f64, f64)> {
    let predicted = predict(points)?;
    let truth = distance_batch_parallel(oracle, points);
    let mut abs_err = 0.0;
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (&p, &t) in predicted.iter().zip(truth.iter()) {
        abs_err += (p - t).abs();
        let inside_p = p < 0.0;
        let inside_t = t < 0.0;
        if inside_p && inside_t {
            intersection += 1;
        }
        if inside_p || inside_t {
            union += 1;
        }
    }
    let iou = if union == 0 { 1.0 } else { intersection as f64 / union as f64 };
    Ok((abs_err / points.len() as f64, iou))
}

/// Per-vertex unit normals from the analytic field gradient. Vertices where
/// the gradient vanishes are flagged instead of producing garbage.
pub fn estimate_normals(grid: &ParamGrid, vertices: &[Vec3]) -> Result<(Vec<Vec3>, Vec<bool>)> {
    let batch = query_gradient(grid, vertices)?;
    let grads = batch.gradients().expect("query_gradient populates gradients");
    let mut normals = Vec::with_capacity(vertices.len());
    let mut flagged = Vec::with_capacity(vertices.len());
    for g in grads {
        match g.normalized() {
            Some(n) => {
                normals.push(n);
                flagged.push(false);
            }
            None => {
                normals.push(Vec3::ZERO);
                flagged.push(true);
            }
        }
    }
    Ok((normals, flagged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_points(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn chamfer_identity_and_symmetry() {
        let a = random_points(1, 50);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let b = random_points(2, 70);
        let ab = chamfer(&a, &b).unwrap();
        let ba = chamfer(&b, &a).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn chamfer_two_singletons() {
        let a = vec![Vec3::ZERO];
        let b = vec![Vec3::new(0.3, 0.0, 0.0)];
        assert!((chamfer(&a, &b).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let a = random_points(3, 50);
        let b = random_points(4, 50);
        let fast = chamfer(&a, &b).unwrap();
        let brute_dir = |from: &[Vec3], to: &[Vec3]| -> f64 {
            from.iter()
                .map(|&p| {
                    to.iter().map(|&q| (p - q).norm()).fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / from.len() as f64
        };
        let brute = brute_dir(&a, &b) + brute_dir(&b, &a);
        assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
    }

    #[test]
    fn empty_sets_are_rejected() {
        assert!(chamfer(&[], &[Vec3::ZERO]).is_err());
    }

    #[test]
    fn perfect_predictor_scores_zero_ae_full_iou() {
        let oracle = SdfOracle::sphere(0.5).unwrap();
        let cfg = MetricsConfig { volume_samples: 2000, near_samples: 2000, ..Default::default() };
        let metrics =
            volume_metrics_fn(|pts| Ok(distance_batch_parallel(&oracle, pts)), &oracle, &cfg)
                .unwrap();
        assert_eq!(metrics.volume_ae_e4, 0.0);
        assert_eq!(metrics.volume_iou_pct, 100.0);
        assert_eq!(metrics.near_iou_pct, 100.0);
    }

    #[test]
    fn constant_offset_moves_ae_by_its_magnitude() {
        let oracle = SdfOracle::sphere(0.5).unwrap();
        let cfg = MetricsConfig { volume_samples: 2000, near_samples: 100, ..Default::default() };
        let metrics = volume_metrics_fn(
            |pts| Ok(distance_batch_parallel(&oracle, pts).iter().map(|d| d + 1e-4).collect()),
            &oracle,
            &cfg,
        )
        .unwrap();
        assert!((metrics.volume_ae_e4 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iou_ignores_monotone_rescaling() {
        let oracle = SdfOracle::torus(0.6, 0.25).unwrap();
        let cfg = MetricsConfig { volume_samples: 3000, near_samples: 500, ..Default::default() };
        let plain =
            volume_metrics_fn(|pts| Ok(distance_batch_parallel(&oracle, pts)), &oracle, &cfg)
                .unwrap();
        let squashed = volume_metrics_fn(
            |pts| {
                Ok(distance_batch_parallel(&oracle, pts)
                    .iter()
                    .map(|d| d.signum() * d.abs().sqrt() * 3.0)
                    .collect())
            },
            &oracle,
            &cfg,
        )
        .unwrap();
        assert_eq!(plain.volume_iou_pct, squashed.volume_iou_pct);
        assert_eq!(plain.near_iou_pct, squashed.near_iou_pct);
    }
}
