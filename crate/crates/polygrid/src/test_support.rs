//! Shared helpers for the test suites: random instance generation and the
//! finite-difference oracles the gradient checks are measured against.
//!
//! Lives in the crate (hidden from docs) so integration and acceptance
//! suites can drive the exact same instance distribution as the unit tests.

#![doc(hidden)]

use crate::backward::GradBuffer;
use crate::eval::forward_naive;
use crate::grid::{GridConfig, ParamGrid, Variant};
use crate::poly::Degree;
use crate::vec3::Vec3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative error with the denominator floored at the O(1) scale of a
/// normalized-domain distance field.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Random query positions, slightly overspilling the domain on purpose.
pub fn random_queries(seed: u64, n: usize) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ab_917e);
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-1.1..1.1),
                rng.gen_range(-1.1..1.1),
                rng.gen_range(-1.1..1.1),
            )
        })
        .collect()
}

/// Variants exercised by the randomized equivalence sweeps.
pub const RANDOM_VARIANTS: [Variant; 5] = [
    Variant::Trilinear,
    Variant::Nrbf,
    Variant::FuncInterp,
    Variant::OffsetOnly,
    Variant::Combined,
];

/// A random small instance: random variant (unless pinned by `degree`),
/// resolution in {1,2,4,8}, scales bounded so the naive oracle cannot
/// underflow, dense random coefficients and offsets.
pub fn random_grid(rng: &mut impl Rng, degree: Option<Degree>) -> ParamGrid {
    let variant = loop {
        let v = RANDOM_VARIANTS[rng.gen_range(0..RANDOM_VARIANTS.len())];
        match (v, degree) {
            (Variant::Trilinear | Variant::Nrbf, Some(d)) if d != Degree::D0 => continue,
            _ => break v,
        }
    };
    let degree = degree.unwrap_or_else(|| match variant {
        Variant::Trilinear | Variant::Nrbf => Degree::D0,
        _ => [Degree::D0, Degree::D1, Degree::D2, Degree::D3][rng.gen_range(0..4)],
    });
    let resolution = match variant {
        Variant::Trilinear => [2u32, 4, 8][rng.gen_range(0..3)],
        _ => [1u32, 2, 4, 8][rng.gen_range(0..4)],
    };
    let mut config = GridConfig::new(variant, degree, resolution);
    if matches!(variant, Variant::FuncInterp | Variant::OffsetOnly | Variant::Combined) {
        config.scale_learnable = rng.gen_bool(0.75);
    }
    if variant.stores_offsets() {
        config.keys_learnable = rng.gen_bool(0.75);
    }
    randomize_grid(config, rng)
}

/// Fill a grid of the given config with bounded random parameters.
pub fn randomize_grid(config: GridConfig, rng: &mut impl Rng) -> ParamGrid {
    let mut grid = ParamGrid::init_with_rng(config, 0.1, rng).expect("valid random config");
    for bank in grid.banks_mut() {
        for c in bank.coeffs.iter_mut() {
            *c = rng.gen_range(-1.0..1.0);
        }
        if config.variant.is_rbf() {
            for ls in bank.log_scales.iter_mut() {
                *ls = rng.gen_range(-1.0..4.0);
            }
        }
        if let Some(offsets) = &mut bank.offsets {
            for o in offsets.iter_mut() {
                *o = Vec3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                );
            }
        }
    }
    grid.refresh_derived();
    grid
}

/// Learnable-parameter views in a fixed enumeration order (per bank:
/// offsets xyz, log scales, coefficients), mirrored by the setters below.
pub fn flatten_learnable_params(grid: &ParamGrid) -> Vec<f64> {
    let cfg = *grid.config();
    let mut out = Vec::new();
    for bank in grid.banks() {
        if cfg.keys_learnable {
            if let Some(offsets) = &bank.offsets {
                for o in offsets {
                    out.extend_from_slice(&[o.x, o.y, o.z]);
                }
            }
        }
        if cfg.scale_learnable && cfg.variant.is_rbf() {
            out.extend_from_slice(&bank.log_scales);
        }
        out.extend_from_slice(&bank.coeffs);
    }
    out
}

pub fn set_learnable_params(grid: &mut ParamGrid, values: &[f64]) {
    let cfg = *grid.config();
    let mut cursor = 0usize;
    for bank in grid.banks_mut() {
        if cfg.keys_learnable {
            if let Some(offsets) = &mut bank.offsets {
                for o in offsets.iter_mut() {
                    *o = Vec3::new(values[cursor], values[cursor + 1], values[cursor + 2]);
                    cursor += 3;
                }
            }
        }
        if cfg.scale_learnable && cfg.variant.is_rbf() {
            let n = bank.log_scales.len();
            bank.log_scales.copy_from_slice(&values[cursor..cursor + n]);
            cursor += n;
        }
        let n = bank.coeffs.len();
        bank.coeffs.copy_from_slice(&values[cursor..cursor + n]);
        cursor += n;
    }
    assert_eq!(cursor, values.len());
    grid.refresh_derived();
}

/// Analytic gradients flattened in the same order as
/// `flatten_learnable_params`.
pub fn flatten_learnable_grads(grid: &ParamGrid, buf: &GradBuffer) -> Vec<f64> {
    let cfg = *grid.config();
    let mut out = Vec::new();
    for bank in buf.banks() {
        if cfg.keys_learnable {
            if let Some(offsets) = &bank.d_offsets {
                for o in offsets {
                    out.extend_from_slice(&[o.x, o.y, o.z]);
                }
            }
        }
        if cfg.scale_learnable && cfg.variant.is_rbf() {
            out.extend_from_slice(&bank.d_log_scales);
        }
        out.extend_from_slice(&bank.d_coeffs);
    }
    out
}

/// Central finite differences of the scalar loss `sum_j upstream_j * O(q_j)`
/// through the naive-oracle forward pass, for every learnable parameter.
pub fn fd_loss_gradient(
    grid: &ParamGrid,
    queries: &[Vec3],
    upstream: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut scratch = grid.clone();
    let params = flatten_learnable_params(grid);
    let mut fd = Vec::with_capacity(params.len());
    let loss = |g: &ParamGrid| -> f64 {
        forward_naive(g, queries)
            .expect("oracle forward")
            .outputs()
            .iter()
            .zip(upstream.iter())
            .map(|(o, u)| o * u)
            .sum()
    };
    for p in 0..params.len() {
        let mut perturbed = params.clone();
        perturbed[p] = params[p] + step;
        set_learnable_params(&mut scratch, &perturbed);
        let plus = loss(&scratch);
        perturbed[p] = params[p] - step;
        set_learnable_params(&mut scratch, &perturbed);
        let minus = loss(&scratch);
        fd.push((plus - minus) / (2.0 * step));
    }
    fd
}
