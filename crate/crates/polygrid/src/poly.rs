//! Polynomial value functions attached to grid keys.
//!
//! Each key carries a truncated polynomial `f(x; phi)` evaluated at the
//! relative offset `x = q - k`:
//!
//! ```text
//! f(x) = c + x.lin + 1/2 x' Q x + 1/6 T[x,x,x]
//! ```
//!
//! Coefficient layout (shared by in-memory storage, `.efg` files and
//! gradient buffers):
//!
//! | index  | block                                                        |
//! |--------|--------------------------------------------------------------|
//! | 0      | constant                                                     |
//! | 1..4   | linear `(x, y, z)`                                           |
//! | 4..10  | symmetric quadratic, unique entries `(xx, xy, xz, yy, yz, zz)` |
//! | 10..20 | symmetric cubic, unique entries in lexicographic order        |
//!
//! The quadratic block is contracted as `1/2 x' Q x`, the cubic block as the
//! symmetric three-tensor contraction `1/6 T[x,x,x]`, so off-diagonal basis
//! functions carry their multiplicities (e.g. the `xy` basis function is
//! `x*y`, the `xxy` one is `x^2 y / 2`).
//!
//! The `cube` form stores the 8 trilinear coefficients
//! `(1, x, y, z, xy, xz, yz, xyz)` instead.

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Maximum coefficient count across all degrees (degree 3).
pub const MAX_COEFFS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Degree {
    D0,
    D1,
    D2,
    D3,
    /// Trilinear-coefficient form `a0 + a1 x + ... + a7 xyz`.
    Cube,
}

impl Degree {
    pub fn coeff_count(self) -> usize {
        match self {
            Degree::D0 => 1,
            Degree::D1 => 4,
            Degree::D2 => 10,
            Degree::D3 => 20,
            Degree::Cube => 8,
        }
    }

    pub fn from_order(order: u8) -> Result<Degree> {
        match order {
            0 => Ok(Degree::D0),
            1 => Ok(Degree::D1),
            2 => Ok(Degree::D2),
            3 => Ok(Degree::D3),
            _ => Err(Error::config(format!("unsupported polynomial degree {order}"))),
        }
    }
}

impl std::fmt::Display for Degree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Degree::D0 => write!(f, "0"),
            Degree::D1 => write!(f, "1"),
            Degree::D2 => write!(f, "2"),
            Degree::D3 => write!(f, "3"),
            Degree::Cube => write!(f, "cube"),
        }
    }
}

/// One polynomial value function: degree plus its flat coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyValue {
    degree: Degree,
    coeffs: Vec<f64>,
}

impl PolyValue {
    pub fn new(degree: Degree, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != degree.coeff_count() {
            return Err(Error::config(format!(
                "degree {degree} expects {} coefficients, got {}",
                degree.coeff_count(),
                coeffs.len()
            )));
        }
        Ok(PolyValue { degree, coeffs })
    }

    pub fn constant(value: f64) -> Self {
        PolyValue { degree: Degree::D0, coeffs: vec![value] }
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        eval(x, self.degree, &self.coeffs)
    }

    pub fn grad(&self, x: Vec3) -> Vec3 {
        grad(x, self.degree, &self.coeffs)
    }
}

/// Evaluate `f(x; phi)` for a coefficient slice laid out as documented above.
#[inline(always)]
pub fn eval(x: Vec3, degree: Degree, c: &[f64]) -> f64 {
    debug_assert_eq!(c.len(), degree.coeff_count());
    match degree {
        Degree::D0 => c[0],
        Degree::D1 => c[0] + c[1] * x.x + c[2] * x.y + c[3] * x.z,
        Degree::D2 => {
            let lin = c[0] + c[1] * x.x + c[2] * x.y + c[3] * x.z;
            lin + quad_term(x, &c[4..10])
        }
        Degree::D3 => {
            let lin = c[0] + c[1] * x.x + c[2] * x.y + c[3] * x.z;
            lin + quad_term(x, &c[4..10]) + cubic_term(x, &c[10..20])
        }
        Degree::Cube => {
            c[0] + c[1] * x.x
                + c[2] * x.y
                + c[3] * x.z
                + c[4] * x.x * x.y
                + c[5] * x.x * x.z
                + c[6] * x.y * x.z
                + c[7] * x.x * x.y * x.z
        }
    }
}

#[inline(always)]
fn quad_term(x: Vec3, q: &[f64]) -> f64 {
    // 1/2 x'Qx with Q symmetric, unique entries (xx, xy, xz, yy, yz, zz).
    0.5 * (q[0] * x.x * x.x + q[3] * x.y * x.y + q[5] * x.z * x.z)
        + q[1] * x.x * x.y
        + q[2] * x.x * x.z
        + q[4] * x.y * x.z
}

#[inline(always)]
fn cubic_term(x: Vec3, t: &[f64]) -> f64 {
    // 1/6 T[x,x,x], unique entries (xxx, xxy, xxz, xyy, xyz, xzz, yyy, yyz, yzz, zzz).
    let (xx, yy, zz) = (x.x * x.x, x.y * x.y, x.z * x.z);
    (t[0] * xx * x.x + t[6] * yy * x.y + t[9] * zz * x.z) / 6.0
        + 0.5
            * (t[1] * xx * x.y
                + t[2] * xx * x.z
                + t[3] * x.x * yy
                + t[5] * x.x * zz
                + t[7] * yy * x.z
                + t[8] * x.y * zz)
        + t[4] * x.x * x.y * x.z
}

/// Analytic gradient of `eval` with respect to `x`.
#[inline(always)]
pub fn grad(x: Vec3, degree: Degree, c: &[f64]) -> Vec3 {
    debug_assert_eq!(c.len(), degree.coeff_count());
    match degree {
        Degree::D0 => Vec3::ZERO,
        Degree::D1 => Vec3::new(c[1], c[2], c[3]),
        Degree::D2 => Vec3::new(c[1], c[2], c[3]) + quad_grad(x, &c[4..10]),
        Degree::D3 => {
            Vec3::new(c[1], c[2], c[3]) + quad_grad(x, &c[4..10]) + cubic_grad(x, &c[10..20])
        }
        Degree::Cube => Vec3::new(
            c[1] + c[4] * x.y + c[5] * x.z + c[7] * x.y * x.z,
            c[2] + c[4] * x.x + c[6] * x.z + c[7] * x.x * x.z,
            c[3] + c[5] * x.x + c[6] * x.y + c[7] * x.x * x.y,
        ),
    }
}

#[inline(always)]
fn quad_grad(x: Vec3, q: &[f64]) -> Vec3 {
    // (Qx) with the symmetric expansion.
    Vec3::new(
        q[0] * x.x + q[1] * x.y + q[2] * x.z,
        q[1] * x.x + q[3] * x.y + q[4] * x.z,
        q[2] * x.x + q[4] * x.y + q[5] * x.z,
    )
}

#[inline(always)]
fn cubic_grad(x: Vec3, t: &[f64]) -> Vec3 {
    let (xx, yy, zz) = (x.x * x.x, x.y * x.y, x.z * x.z);
    let (xy, xz, yz) = (x.x * x.y, x.x * x.z, x.y * x.z);
    Vec3::new(
        0.5 * (t[0] * xx + t[3] * yy + t[5] * zz) + t[1] * xy + t[2] * xz + t[4] * yz,
        0.5 * (t[1] * xx + t[6] * yy + t[8] * zz) + t[3] * xy + t[4] * xz + t[7] * yz,
        0.5 * (t[2] * xx + t[7] * yy + t[9] * zz) + t[4] * xy + t[5] * xz + t[8] * yz,
    )
}

/// Write the coefficient basis `df/dphi` at `x` into `out[..coeff_count]`.
///
/// `eval(x, d, c)` equals the dot product of `c` with this basis, which is
/// what the backward pass accumulates against.
#[inline(always)]
pub fn basis(x: Vec3, degree: Degree, out: &mut [f64; MAX_COEFFS]) {
    out[0] = 1.0;
    match degree {
        Degree::D0 => {}
        Degree::D1 => {
            out[1] = x.x;
            out[2] = x.y;
            out[3] = x.z;
        }
        Degree::D2 => {
            basis(x, Degree::D1, out);
            quad_basis(x, out);
        }
        Degree::D3 => {
            basis(x, Degree::D2, out);
            let (xx, yy, zz) = (x.x * x.x, x.y * x.y, x.z * x.z);
            out[10] = xx * x.x / 6.0;
            out[11] = 0.5 * xx * x.y;
            out[12] = 0.5 * xx * x.z;
            out[13] = 0.5 * x.x * yy;
            out[14] = x.x * x.y * x.z;
            out[15] = 0.5 * x.x * zz;
            out[16] = yy * x.y / 6.0;
            out[17] = 0.5 * yy * x.z;
            out[18] = 0.5 * x.y * zz;
            out[19] = zz * x.z / 6.0;
        }
        Degree::Cube => {
            out[1] = x.x;
            out[2] = x.y;
            out[3] = x.z;
            out[4] = x.x * x.y;
            out[5] = x.x * x.z;
            out[6] = x.y * x.z;
            out[7] = x.x * x.y * x.z;
        }
    }
}

#[inline(always)]
fn quad_basis(x: Vec3, out: &mut [f64; MAX_COEFFS]) {
    out[4] = 0.5 * x.x * x.x;
    out[5] = x.x * x.y;
    out[6] = x.x * x.z;
    out[7] = 0.5 * x.y * x.y;
    out[8] = x.y * x.z;
    out[9] = 0.5 * x.z * x.z;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DEGREES: [Degree; 5] = [Degree::D0, Degree::D1, Degree::D2, Degree::D3, Degree::Cube];

    fn random_poly(rng: &mut impl Rng, degree: Degree) -> PolyValue {
        let coeffs = (0..degree.coeff_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        PolyValue::new(degree, coeffs).unwrap()
    }

    #[test]
    fn origin_leaves_only_the_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for degree in DEGREES {
            let mut coeffs = vec![0.0; degree.coeff_count()];
            coeffs[0] = 2.5;
            for c in coeffs.iter_mut().skip(1) {
                *c = rng.gen_range(-5.0..5.0);
            }
            let f = PolyValue::new(degree, coeffs).unwrap();
            assert_eq!(f.eval(Vec3::ZERO), 2.5);
        }
    }

    #[test]
    fn degree0_is_constant_everywhere() {
        let f = PolyValue::constant(-1.0);
        assert_eq!(f.eval(Vec3::new(9.0, 9.0, 9.0)), -1.0);
        assert_eq!(f.grad(Vec3::new(9.0, 9.0, 9.0)), Vec3::ZERO);
    }

    #[test]
    fn degree1_is_a_dot_product() {
        let f = PolyValue::new(Degree::D1, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(f.eval(Vec3::new(1.0, 2.0, 3.0)), 6.0);
        // linear gradient is constant
        let g = f.grad(Vec3::new(7.0, -2.0, 0.3));
        assert_eq!(g, Vec3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn degree2_identity_quadratic() {
        // Q = I stored as (xx, xy, xz, yy, yz, zz) = (1,0,0,1,0,1); 1/2 x'x.
        let mut coeffs = vec![0.0; 10];
        coeffs[4] = 1.0;
        coeffs[7] = 1.0;
        coeffs[9] = 1.0;
        let f = PolyValue::new(Degree::D2, coeffs).unwrap();
        assert!((f.eval(Vec3::new(1.0, 1.0, 0.0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coefficient_length_mismatch_is_an_error() {
        assert!(PolyValue::new(Degree::D2, vec![0.0; 4]).is_err());
    }

    #[test]
    fn eval_equals_basis_dot_coeffs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut b = [0.0; MAX_COEFFS];
        for degree in DEGREES {
            for _ in 0..50 {
                let f = random_poly(&mut rng, degree);
                let x = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                basis(x, degree, &mut b);
                let dot: f64 =
                    f.coeffs().iter().zip(b.iter()).map(|(c, bi)| c * bi).sum();
                assert!((f.eval(x) - dot).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        // Finite-difference oracle, step 1e-5, double precision.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 1000 {
            let degree = DEGREES[rng.gen_range(0..DEGREES.len())];
            let f = random_poly(&mut rng, degree);
            let x = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let g = f.grad(x);
            for axis in 0..3 {
                let mut xp = x;
                let mut xm = x;
                match axis {
                    0 => {
                        xp.x += h;
                        xm.x -= h;
                    }
                    1 => {
                        xp.y += h;
                        xm.y -= h;
                    }
                    _ => {
                        xp.z += h;
                        xm.z -= h;
                    }
                }
                let fd = (f.eval(xp) - f.eval(xm)) / (2.0 * h);
                let analytic = g.component(axis);
                let scale = analytic.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (analytic - fd).abs() / scale <= 1e-6,
                    "degree {degree} axis {axis}: analytic {analytic} vs fd {fd}"
                );
            }
            checked += 1;
        }
    }
}
