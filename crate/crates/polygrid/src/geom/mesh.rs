//! Triangle meshes: ingestion, sampling, closest-point queries and the
//! generalized-winding-number sign used for ground-truth signed distances.

use crate::error::{Error, Result};
use crate::vec3::Vec3;
use rand::Rng;
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Triangles with area below this are dropped on ingestion.
const DEGENERATE_AREA: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    /// Cumulative triangle areas for area-weighted sampling.
    cumulative_area: Vec<f64>,
}

/// Transform applied when a mesh is normalized into `[-1,1]^3`:
/// `q_norm = (q - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshNormalization {
    pub center: Vec3,
    pub scale: f64,
}

impl TriMesh {
    /// Build a mesh, checking indices and dropping degenerate triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<TriMesh> {
        let n = vertices.len() as u32;
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("mesh vertices must be finite"));
        }
        let mut kept = Vec::with_capacity(triangles.len());
        for t in triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::input(format!("triangle index {t:?} out of range (n={n})")));
            }
            let [a, b, c] = [
                vertices[t[0] as usize],
                vertices[t[1] as usize],
                vertices[t[2] as usize],
            ];
            if 0.5 * (b - a).cross(c - a).norm() > DEGENERATE_AREA {
                kept.push(t);
            }
        }
        if kept.is_empty() {
            return Err(Error::input("mesh has no non-degenerate triangles"));
        }
        let mut mesh = TriMesh { vertices, triangles: kept, cumulative_area: Vec::new() };
        mesh.rebuild_area_table();
        Ok(mesh)
    }

    /// An empty mesh (no triangles). Valid output of isosurfacing a field
    /// with no zero crossing; not valid as an oracle.
    pub fn empty() -> TriMesh {
        TriMesh { vertices: Vec::new(), triangles: Vec::new(), cumulative_area: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn triangle_points(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    fn rebuild_area_table(&mut self) {
        let mut acc = 0.0;
        self.cumulative_area = self
            .triangles
            .iter()
            .map(|_| 0.0)
            .collect();
        for (i, t) in self.triangles.iter().enumerate() {
            let [a, b, c] = [
                self.vertices[t[0] as usize],
                self.vertices[t[1] as usize],
                self.vertices[t[2] as usize],
            ];
            acc += 0.5 * (b - a).cross(c - a).norm();
            self.cumulative_area[i] = acc;
        }
    }

    pub fn total_area(&self) -> f64 {
        self.cumulative_area.last().copied().unwrap_or(0.0)
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for &v in &self.vertices {
            lo = lo.min_by_component(v);
            hi = hi.max_by_component(v);
        }
        (lo, hi)
    }

    /// Uniformly scale and center the mesh so its bounding box fits inside
    /// `[-1,1]^3` with the given margin (0.05 leaves 5% headroom).
    pub fn normalized_to_domain(&self, margin: f64) -> (TriMesh, MeshNormalization) {
        let (lo, hi) = self.bounds();
        let center = (lo + hi) * 0.5;
        let half_extent = ((hi - lo) * 0.5).to_array().into_iter().fold(0.0f64, f64::max);
        let scale = if half_extent > 0.0 { (1.0 - margin) / half_extent } else { 1.0 };
        let vertices = self.vertices.iter().map(|&v| (v - center) * scale).collect();
        let mut mesh =
            TriMesh { vertices, triangles: self.triangles.clone(), cumulative_area: Vec::new() };
        mesh.rebuild_area_table();
        (mesh, MeshNormalization { center, scale })
    }

    /// Area-weighted per-vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::ZERO; self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = [
                self.vertices[t[0] as usize],
                self.vertices[t[1] as usize],
                self.vertices[t[2] as usize],
            ];
            let n = (b - a).cross(c - a); // length ~ 2*area
            for &i in t {
                normals[i as usize] += n;
            }
        }
        for n in &mut normals {
            *n = n.normalized().unwrap_or(Vec3::ZERO);
        }
        normals
    }

    /// Area-weighted uniform surface samples.
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
        let total = self.total_area();
        (0..n)
            .map(|_| {
                let target = rng.gen_range(0.0..total);
                let t = self.cumulative_area.partition_point(|&a| a < target);
                let t = t.min(self.triangles.len() - 1);
                let [a, b, c] = self.triangle_points(t);
                // sqrt trick for uniform barycentric coordinates
                let r1: f64 = rng.gen::<f64>().sqrt();
                let r2: f64 = rng.gen();
                a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
            })
            .collect()
    }

    /// Per-triangle sample counts for the same draw (used by statistics
    /// tests on the sampler).
    pub fn sample_surface_with_triangles(
        &self,
        n: usize,
        rng: &mut impl Rng,
    ) -> (Vec<Vec3>, Vec<usize>) {
        let total = self.total_area();
        let mut points = Vec::with_capacity(n);
        let mut tri_ids = Vec::with_capacity(n);
        for _ in 0..n {
            let target = rng.gen_range(0.0..total);
            let t =
                self.cumulative_area.partition_point(|&a| a < target).min(self.triangles.len() - 1);
            let [a, b, c] = self.triangle_points(t);
            let r1: f64 = rng.gen::<f64>().sqrt();
            let r2: f64 = rng.gen();
            points.push(a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2));
            tri_ids.push(t);
        }
        (points, tri_ids)
    }

    /// Parse a Wavefront OBJ: `v` records and `f` records (polygons are
    /// fan-triangulated, negative indices resolved relative to the end).
    pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
        let reader = BufReader::new(File::open(path)?);
        let mut vertices: Vec<Vec3> = Vec::new();
        let mut triangles: Vec<[u32; 3]> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("v") => {
                    let mut coord = [0.0f64; 3];
                    for c in coord.iter_mut() {
                        *c = fields
                            .next()
                            .and_then(|f| f.parse().ok())
                            .ok_or_else(|| bad_obj(lineno, "vertex needs 3 coordinates"))?;
                    }
                    vertices.push(coord.into());
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for field in fields {
                        let first = field.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|_| bad_obj(lineno, "bad face index"))?;
                        let resolved = if i > 0 {
                            i - 1
                        } else if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            return Err(bad_obj(lineno, "face index 0"));
                        };
                        if resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(bad_obj(lineno, "face index out of range"));
                        }
                        idx.push(resolved as u32);
                    }
                    if idx.len() < 3 {
                        return Err(bad_obj(lineno, "face with fewer than 3 vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        TriMesh::new(vertices, triangles)
    }

    /// Write an OBJ, optionally with per-vertex normals (`vn` records and
    /// `v//vn` face references).
    pub fn save_obj(&self, path: impl AsRef<Path>, normals: Option<&[Vec3]>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        if let Some(n) = normals {
            if n.len() != self.vertices.len() {
                return Err(Error::contract("normal count must match vertex count"));
            }
        }
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        if let Some(normals) = normals {
            for n in normals {
                writeln!(w, "vn {} {} {}", n.x, n.y, n.z)?;
            }
            for t in &self.triangles {
                writeln!(
                    w,
                    "f {0}//{0} {1}//{1} {2}//{2}",
                    t[0] + 1,
                    t[1] + 1,
                    t[2] + 1
                )?;
            }
        } else {
            for t in &self.triangles {
                writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn bad_obj(lineno: usize, msg: &str) -> Error {
    Error::format(format!("OBJ line {}: {msg}", lineno + 1))
}

/// Unit icosphere: an icosahedron subdivided `subdivisions` times with the
/// vertices reprojected onto the sphere. Used as a zero-asset mesh fixture.
pub fn icosphere(subdivisions: u32) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|(x, y, z)| Vec3::new(x, y, z).normalized().unwrap())
    .collect();

    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    use std::collections::HashMap;
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let mut mid = |i: u32, j: u32, vertices: &mut Vec<Vec3>| -> u32 {
                let key = (i.min(j), i.max(j));
                *midpoint.entry(key).or_insert_with(|| {
                    let m = ((vertices[i as usize] + vertices[j as usize]) * 0.5)
                        .normalized()
                        .unwrap();
                    vertices.push(m);
                    (vertices.len() - 1) as u32
                })
            };
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    TriMesh::new(vertices, faces).expect("icosphere is well-formed")
}

/// Closest point on triangle `(a, b, c)` to `p` (Ericson's region test).
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }

    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// AABB tree over triangles for closest-point queries.
#[derive(Debug, Clone)]
pub struct TriBvh {
    nodes: Vec<BvhNode>,
    /// Triangle order after the build's partitioning.
    tri_ids: Vec<u32>,
}

#[derive(Debug, Clone)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    /// Child node indices; a leaf (`count > 0`) leaves them unused.
    left: u32,
    right: u32,
    start: u32,
    count: u32,
}

const BVH_LEAF: usize = 8;

impl TriBvh {
    pub fn build(mesh: &TriMesh) -> TriBvh {
        let centroids: Vec<Vec3> = (0..mesh.triangles().len())
            .map(|t| {
                let [a, b, c] = mesh.triangle_points(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut tri_ids: Vec<u32> = (0..mesh.triangles().len() as u32).collect();
        let mut nodes = Vec::new();
        build_node(mesh, &centroids, &mut tri_ids, 0, mesh.triangles().len(), &mut nodes);
        TriBvh { nodes, tri_ids }
    }

    /// Squared distance to the nearest triangle.
    pub fn closest_distance_sq(&self, mesh: &TriMesh, q: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.descend(mesh, q, 0, &mut best);
        best
    }

    fn descend(&self, mesh: &TriMesh, q: Vec3, node_idx: usize, best: &mut f64) {
        let node = &self.nodes[node_idx];
        if aabb_distance_sq(q, node.lo, node.hi) >= *best {
            return;
        }
        if node.count > 0 {
            for &t in
                &self.tri_ids[node.start as usize..(node.start + node.count) as usize]
            {
                let [a, b, c] = mesh.triangle_points(t as usize);
                let d2 = (closest_point_on_triangle(q, a, b, c) - q).norm_sq();
                if d2 < *best {
                    *best = d2;
                }
            }
            return;
        }
        let l = node.left as usize;
        let r = node.right as usize;
        let dl = aabb_distance_sq(q, self.nodes[l].lo, self.nodes[l].hi);
        let dr = aabb_distance_sq(q, self.nodes[r].lo, self.nodes[r].hi);
        if dl <= dr {
            self.descend(mesh, q, l, best);
            self.descend(mesh, q, r, best);
        } else {
            self.descend(mesh, q, r, best);
            self.descend(mesh, q, l, best);
        }
    }
}

fn aabb_distance_sq(q: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let dx = (lo.x - q.x).max(0.0).max(q.x - hi.x);
    let dy = (lo.y - q.y).max(0.0).max(q.y - hi.y);
    let dz = (lo.z - q.z).max(0.0).max(q.z - hi.z);
    dx * dx + dy * dy + dz * dz
}

fn build_node(
    mesh: &TriMesh,
    centroids: &[Vec3],
    tri_ids: &mut [u32],
    start: usize,
    count: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for &t in &tri_ids[start..start + count] {
        for p in mesh.triangle_points(t as usize) {
            lo = lo.min_by_component(p);
            hi = hi.max_by_component(p);
        }
    }
    let idx = nodes.len();
    nodes.push(BvhNode { lo, hi, left: 0, right: 0, start: start as u32, count: 0 });

    if count <= BVH_LEAF {
        nodes[idx].count = count as u32;
        return idx;
    }

    let extent = hi - lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    tri_ids[start..start + count].sort_unstable_by(|&a, &b| {
        centroids[a as usize]
            .component(axis)
            .partial_cmp(&centroids[b as usize].component(axis))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let half = count / 2;
    let left = build_node(mesh, centroids, tri_ids, start, half, nodes);
    let right = build_node(mesh, centroids, tri_ids, start + half, count - half, nodes);
    nodes[idx].left = left as u32;
    nodes[idx].right = right as u32;
    idx
}

/// Generalized winding number of the mesh around `q` (1 inside a closed
/// surface, 0 outside), via exact per-triangle solid angles.
pub fn winding_number(mesh: &TriMesh, q: Vec3) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.triangles().len() {
        let [pa, pb, pc] = mesh.triangle_points(t);
        total += solid_angle(pa - q, pb - q, pc - q);
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Signed solid angle of triangle (a,b,c) seen from the origin
/// (van Oosterom & Strackee).
#[inline]
fn solid_angle(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let la = a.norm();
    let lb = b.norm();
    let lc = c.norm();
    let numerator = a.dot(b.cross(c));
    let denominator = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    2.0 * numerator.atan2(denominator)
}

/// Unsigned-to-signed mesh distance: nearest-triangle distance, negated
/// where the generalized winding number says inside.
pub struct MeshDistance {
    mesh: TriMesh,
    bvh: TriBvh,
}

impl MeshDistance {
    pub fn new(mesh: TriMesh) -> Result<MeshDistance> {
        if mesh.is_empty() {
            return Err(Error::input("cannot build a distance oracle from an empty mesh"));
        }
        let bvh = TriBvh::build(&mesh);
        Ok(MeshDistance { mesh, bvh })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn signed_distance(&self, q: Vec3) -> f64 {
        let d = self.bvh.closest_distance_sq(&self.mesh, q).sqrt();
        if winding_number(&self.mesh, q) > 0.5 {
            -d
        } else {
            d
        }
    }

    pub fn signed_distance_batch(&self, queries: &[Vec3]) -> Vec<f64> {
        queries.par_iter().map(|&q| self.signed_distance(q)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn icosphere_distance_matches_the_analytic_sphere() {
        let sphere = MeshDistance::new(icosphere(4)).unwrap();
        // the faceting error bounds the disagreement with the exact SDF
        assert!((sphere.signed_distance(Vec3::ZERO) + 1.0).abs() < 2e-3);
        assert!((sphere.signed_distance(Vec3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 2e-3);
        // on a vertex the distance vanishes
        let v = sphere.mesh().vertices()[0];
        assert!(sphere.signed_distance(v).abs() < 1e-9);
    }

    #[test]
    fn icosphere_error_halves_per_subdivision() {
        // chordal faceting error is O(h^2); one subdivision halves h
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probes: Vec<Vec3> = (0..64)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let mut errors = Vec::new();
        for subdiv in [2, 3, 4] {
            let mesh = MeshDistance::new(icosphere(subdiv)).unwrap();
            let err = probes
                .iter()
                .map(|&q| {
                    let exact = q.norm() - 1.0;
                    (mesh.signed_distance(q) - exact).abs()
                })
                .fold(0.0f64, f64::max);
            errors.push(err);
        }
        // quadratic convergence: expect ~4x shrink, accept anything >= 2x
        assert!(errors[0] / errors[1] > 2.0, "{errors:?}");
        assert!(errors[1] / errors[2] > 2.0, "{errors:?}");
    }

    #[test]
    fn surface_samples_lie_on_their_triangles() {
        let mesh = icosphere(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (points, tri_ids) = mesh.sample_surface_with_triangles(500, &mut rng);
        for (p, &t) in points.iter().zip(tri_ids.iter()) {
            let [a, b, c] = mesh.triangle_points(t);
            let n = (b - a).cross(c - a).normalized().unwrap();
            assert!(n.dot(*p - a).abs() < 1e-9);
        }
    }

    #[test]
    fn sample_counts_track_triangle_areas() {
        // multinomial check at N = 1e5: per-triangle counts within 3 sigma
        let mesh = icosphere(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000usize;
        let (_, tri_ids) = mesh.sample_surface_with_triangles(n, &mut rng);
        let mut counts = vec![0usize; mesh.triangles().len()];
        for t in tri_ids {
            counts[t] += 1;
        }
        let total = mesh.total_area();
        let mut outliers = 0;
        for (t, &count) in counts.iter().enumerate() {
            let [a, b, c] = mesh.triangle_points(t);
            let p = 0.5 * (b - a).cross(c - a).norm() / total;
            let mean = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            if (count as f64 - mean).abs() > 3.0 * sigma {
                outliers += 1;
            }
        }
        // ~0.3% of 80 triangles may exceed 3 sigma; allow a couple
        assert!(outliers <= 2, "{outliers} triangles outside 3 sigma");
    }

    #[test]
    fn closest_point_regions() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        // face region
        let p = closest_point_on_triangle(Vec3::new(0.2, 0.2, 1.0), a, b, c);
        assert!((p - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
        // vertex region
        let p = closest_point_on_triangle(Vec3::new(-1.0, -1.0, 0.0), a, b, c);
        assert!((p - a).norm() < 1e-12);
        // edge region
        let p = closest_point_on_triangle(Vec3::new(0.5, -1.0, 0.0), a, b, c);
        assert!((p - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mesh = icosphere(2);
        let bvh = TriBvh::build(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let q = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let fast = bvh.closest_distance_sq(&mesh, q);
            let brute = (0..mesh.triangles().len())
                .map(|t| {
                    let [a, b, c] = mesh.triangle_points(t);
                    (closest_point_on_triangle(q, a, b, c) - q).norm_sq()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((fast - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn winding_number_classifies_inside_and_outside() {
        let mesh = icosphere(2);
        assert!(winding_number(&mesh, Vec3::ZERO) > 0.9);
        assert!(winding_number(&mesh, Vec3::new(1.5, 0.0, 0.0)).abs() < 0.1);
    }

    #[test]
    fn normalization_fits_the_domain_with_margin() {
        let mesh = TriMesh::new(
            vec![
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(30.0, 0.0, 0.0),
                Vec3::new(10.0, 8.0, 4.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let (norm, xform) = mesh.normalized_to_domain(0.05);
        let (lo, hi) = norm.bounds();
        for v in [lo, hi] {
            assert!(v.x.abs() <= 0.95 + 1e-12);
            assert!(v.y.abs() <= 0.95 + 1e-12);
            assert!(v.z.abs() <= 0.95 + 1e-12);
        }
        assert!((hi.x - lo.x - 2.0 * 0.95).abs() < 1e-12); // longest axis spans the margin box
        assert!(xform.scale > 0.0);
    }

    #[test]
    fn degenerate_triangles_are_dropped() {
        let mesh = TriMesh::new(
            vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2], [0, 1, 1]],
        )
        .unwrap();
        assert_eq!(mesh.triangles().len(), 1);
    }

    #[test]
    fn obj_roundtrip() {
        let dir = std::env::temp_dir().join("polygrid_obj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ico.obj");
        let mesh = icosphere(1);
        mesh.save_obj(&path, Some(&mesh.vertex_normals())).unwrap();
        let loaded = TriMesh::load_obj(&path).unwrap();
        assert_eq!(loaded.vertices().len(), mesh.vertices().len());
        assert_eq!(loaded.triangles().len(), mesh.triangles().len());
        for (a, b) in loaded.vertices().iter().zip(mesh.vertices()) {
            assert!((*a - *b).norm() < 1e-12);
        }
    }
}
