//! Ground-truth signed distance sources: analytic shapes and meshes.
//!
//! Analytic shapes are first-class so every pipeline stage can be exercised
//! without external assets. Shape spec strings give the CLI (and tests) a
//! compact notation:
//!
//! * `sphere:r=0.5`
//! * `box:hx=0.5,hy=0.4,hz=0.3` (or `box:h=0.5` for a cube)
//! * `torus:major=0.6,minor=0.2`

use super::mesh::{MeshDistance, TriMesh};
use crate::error::{Error, Result};
use crate::vec3::Vec3;
use rand::Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

pub enum SdfOracle {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
    Torus { major: f64, minor: f64 },
    Mesh(MeshDistance),
}

impl std::fmt::Debug for SdfOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SdfOracle::Sphere { radius } => write!(f, "Sphere(r={radius})"),
            SdfOracle::Box { half_extents } => write!(f, "Box(h={half_extents:?})"),
            SdfOracle::Torus { major, minor } => write!(f, "Torus(R={major}, r={minor})"),
            SdfOracle::Mesh(m) => {
                write!(f, "Mesh({} triangles)", m.mesh().triangles().len())
            }
        }
    }
}

impl SdfOracle {
    pub fn sphere(radius: f64) -> Result<SdfOracle> {
        if !(radius > 0.0) || radius > 1.0 {
            return Err(Error::config("sphere radius must lie in (0, 1]"));
        }
        Ok(SdfOracle::Sphere { radius })
    }

    pub fn cuboid(half_extents: Vec3) -> Result<SdfOracle> {
        let h = half_extents;
        if !(h.x > 0.0 && h.y > 0.0 && h.z > 0.0) || h.x > 1.0 || h.y > 1.0 || h.z > 1.0 {
            return Err(Error::config("box half-extents must lie in (0, 1]"));
        }
        Ok(SdfOracle::Box { half_extents })
    }

    pub fn torus(major: f64, minor: f64) -> Result<SdfOracle> {
        if !(major > 0.0 && minor > 0.0) || major + minor > 1.0 {
            return Err(Error::config("torus radii must be positive with major+minor <= 1"));
        }
        Ok(SdfOracle::Torus { major, minor })
    }

    /// Wrap a mesh already living in the normalized domain.
    pub fn from_mesh(mesh: TriMesh) -> Result<SdfOracle> {
        Ok(SdfOracle::Mesh(MeshDistance::new(mesh)?))
    }

    /// Parse a shape spec string (see module docs).
    pub fn parse_spec(spec: &str) -> Result<SdfOracle> {
        let (kind, params) = spec.split_once(':').unwrap_or((spec, ""));
        let mut kv = std::collections::HashMap::new();
        for field in params.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::config(format!("bad shape parameter '{field}'")))?;
            let value: f64 = v
                .parse()
                .map_err(|_| Error::config(format!("bad numeric value in '{field}'")))?;
            if !value.is_finite() {
                return Err(Error::config(format!("non-finite value in '{field}'")));
            }
            kv.insert(k.trim().to_string(), value);
        }
        match kind {
            "sphere" => SdfOracle::sphere(*kv.get("r").unwrap_or(&0.5)),
            "box" => {
                let h = *kv.get("h").unwrap_or(&0.5);
                SdfOracle::cuboid(Vec3::new(
                    *kv.get("hx").unwrap_or(&h),
                    *kv.get("hy").unwrap_or(&h),
                    *kv.get("hz").unwrap_or(&h),
                ))
            }
            "torus" => SdfOracle::torus(
                *kv.get("major").unwrap_or(&0.6),
                *kv.get("minor").unwrap_or(&0.2),
            ),
            other => Err(Error::config(format!("unknown shape kind '{other}'"))),
        }
    }

    /// Signed distance at one point (negative inside).
    pub fn distance(&self, q: Vec3) -> f64 {
        match self {
            SdfOracle::Sphere { radius } => q.norm() - radius,
            SdfOracle::Box { half_extents } => {
                let p = Vec3::new(
                    q.x.abs() - half_extents.x,
                    q.y.abs() - half_extents.y,
                    q.z.abs() - half_extents.z,
                );
                let outside = p.max_by_component(Vec3::ZERO).norm();
                let inside = p.x.max(p.y).max(p.z).min(0.0);
                outside + inside
            }
            SdfOracle::Torus { major, minor } => {
                let ring = (q.x * q.x + q.z * q.z).sqrt() - major;
                (ring * ring + q.y * q.y).sqrt() - minor
            }
            SdfOracle::Mesh(mesh) => mesh.signed_distance(q),
        }
    }

    pub fn distance_batch(&self, queries: &[Vec3]) -> Vec<f64> {
        match self {
            // analytic shapes are cheap; meshes get the parallel path
            SdfOracle::Mesh(mesh) => mesh.signed_distance_batch(queries),
            _ => queries.iter().map(|&q| self.distance(q)).collect(),
        }
    }

    /// Uniform surface samples (area-weighted for meshes, closed-form or
    /// rejection sampling for analytic shapes).
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
        match self {
            SdfOracle::Sphere { radius } => (0..n)
                .map(|_| loop {
                    let v = Vec3::new(
                        standard_normal(rng),
                        standard_normal(rng),
                        standard_normal(rng),
                    );
                    if let Some(unit) = v.normalized() {
                        break unit * *radius;
                    }
                })
                .collect(),
            SdfOracle::Box { half_extents } => {
                let h = *half_extents;
                // face areas: +-x, +-y, +-z
                let areas = [h.y * h.z, h.y * h.z, h.x * h.z, h.x * h.z, h.x * h.y, h.x * h.y];
                let total: f64 = areas.iter().sum();
                (0..n)
                    .map(|_| {
                        let mut pick = rng.gen_range(0.0..total);
                        let mut face = 0;
                        for (i, &a) in areas.iter().enumerate() {
                            if pick < a {
                                face = i;
                                break;
                            }
                            pick -= a;
                        }
                        let u = rng.gen_range(-1.0..1.0);
                        let v = rng.gen_range(-1.0..1.0);
                        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                        match face / 2 {
                            0 => Vec3::new(sign * h.x, u * h.y, v * h.z),
                            1 => Vec3::new(u * h.x, sign * h.y, v * h.z),
                            _ => Vec3::new(u * h.x, v * h.y, sign * h.z),
                        }
                    })
                    .collect()
            }
            SdfOracle::Torus { major, minor } => (0..n)
                .map(|_| {
                    // area element ~ (R + r cos t); rejection against the max
                    let tube = loop {
                        let t = rng.gen_range(0.0..2.0 * PI);
                        let accept = (major + minor * t.cos()) / (major + minor);
                        if rng.gen::<f64>() < accept {
                            break t;
                        }
                    };
                    let around = rng.gen_range(0.0..2.0 * PI);
                    let ring = major + minor * tube.cos();
                    Vec3::new(ring * around.cos(), minor * tube.sin(), ring * around.sin())
                })
                .collect(),
            SdfOracle::Mesh(mesh) => mesh.mesh().sample_surface(n, rng),
        }
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    use rand_distr::StandardNormal;
    rng.sample(StandardNormal)
}

/// Evaluate the oracle on chunks in parallel with a deterministic output
/// order (chunked map, ordered collect).
pub fn distance_batch_parallel(oracle: &SdfOracle, queries: &[Vec3]) -> Vec<f64> {
    match oracle {
        SdfOracle::Mesh(_) => oracle.distance_batch(queries),
        _ => queries
            .par_chunks(4096)
            .flat_map_iter(|chunk| chunk.iter().map(|&q| oracle.distance(q)).collect::<Vec<_>>())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_surface_samples_have_the_radius() {
        let oracle = SdfOracle::sphere(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in oracle.sample_surface(200, &mut rng) {
            assert!((s.norm() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_samples_have_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shapes = [
            SdfOracle::sphere(0.6).unwrap(),
            SdfOracle::cuboid(Vec3::new(0.5, 0.4, 0.7)).unwrap(),
            SdfOracle::torus(0.6, 0.25).unwrap(),
        ];
        for oracle in &shapes {
            for s in oracle.sample_surface(100, &mut rng) {
                assert!(
                    oracle.distance(s).abs() < 1e-12,
                    "{oracle:?} sample {s:?} -> {}",
                    oracle.distance(s)
                );
            }
        }
    }

    #[test]
    fn analytic_oracles_satisfy_the_eikonal_property() {
        // |grad d| = 1 away from the medial axis, by finite differences
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        let shapes = [
            SdfOracle::sphere(0.5).unwrap(),
            SdfOracle::cuboid(Vec3::new(0.5, 0.5, 0.5)).unwrap(),
            SdfOracle::torus(0.6, 0.2).unwrap(),
        ];
        for oracle in &shapes {
            let mut checked = 0;
            while checked < 100 {
                let q = Vec3::new(
                    rng.gen_range(-0.95..0.95),
                    rng.gen_range(-0.95..0.95),
                    rng.gen_range(-0.95..0.95),
                );
                // keep clear of surfaces' medial axes and corners
                let d = oracle.distance(q);
                if d.abs() < 0.05 || q.norm() < 0.05 {
                    continue;
                }
                if matches!(oracle, SdfOracle::Box { .. })
                    && (q.x.abs().max(q.y.abs()).max(q.z.abs()) < 0.55)
                {
                    continue; // interior medial structure of the cube
                }
                let g = Vec3::new(
                    (oracle.distance(q + Vec3::new(h, 0.0, 0.0))
                        - oracle.distance(q - Vec3::new(h, 0.0, 0.0)))
                        / (2.0 * h),
                    (oracle.distance(q + Vec3::new(0.0, h, 0.0))
                        - oracle.distance(q - Vec3::new(0.0, h, 0.0)))
                        / (2.0 * h),
                    (oracle.distance(q + Vec3::new(0.0, 0.0, h))
                        - oracle.distance(q - Vec3::new(0.0, 0.0, h)))
                        / (2.0 * h),
                );
                assert!(
                    (g.norm() - 1.0).abs() < 1e-4,
                    "{oracle:?} at {q:?}: |grad| = {}",
                    g.norm()
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn spec_strings_parse() {
        assert!(matches!(
            SdfOracle::parse_spec("sphere:r=0.5").unwrap(),
            SdfOracle::Sphere { radius } if radius == 0.5
        ));
        assert!(matches!(SdfOracle::parse_spec("box:h=0.4").unwrap(), SdfOracle::Box { .. }));
        assert!(matches!(
            SdfOracle::parse_spec("torus:major=0.6,minor=0.2").unwrap(),
            SdfOracle::Torus { .. }
        ));
        assert!(SdfOracle::parse_spec("pyramid:x=1").is_err());
        assert!(SdfOracle::parse_spec("sphere:r=nan").is_err());
        assert!(SdfOracle::parse_spec("sphere:r=-1").is_err());
    }

    #[test]
    fn box_distance_signs() {
        let oracle = SdfOracle::cuboid(Vec3::new(0.5, 0.5, 0.5)).unwrap();
        assert!(oracle.distance(Vec3::ZERO) < 0.0);
        assert!((oracle.distance(Vec3::ZERO) + 0.5).abs() < 1e-12);
        assert!((oracle.distance(Vec3::new(1.0, 0.0, 0.0)) - 0.5).abs() < 1e-12);
        // corner distance
        let corner = Vec3::new(1.0, 1.0, 1.0);
        assert!((oracle.distance(corner) - (3.0f64.sqrt() * 0.5)).abs() < 1e-12);
    }
}
