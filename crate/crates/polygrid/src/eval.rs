//! Forward evaluation of the field.
//!
//! Two routes exist for the softmax-RBF variants:
//!
//! * [`forward_naive`] materializes every key/query term, costing
//!   `Theta(I*J)` memory. It exists as the correctness oracle.
//! * [`forward_streaming`] keeps one set of running accumulators per query
//!   (denominator, numerator and a running maximum of the exponent for
//!   stability), so transient memory is `Theta(J)` regardless of the key
//!   count.
//!
//! Both compute, per query `q`:
//!
//! ```text
//! O(q) = sum_i softmax(-beta_i |q - k_i|^2) * f(q - k_i; phi_i)
//! ```
//!
//! with the sum running over both banks of a combined grid. The streaming
//! kernel drops a term once its exponent falls more than [`TERM_CUTOFF`]
//! nats below the per-query running maximum: such a term's relative weight
//! is below `exp(-45) ~ 3e-20`, far under the accumulator's resolution.
//!
//! The per-query accumulation order is fixed (bank 0 then bank 1, keys
//! ascending), so results are bitwise reproducible for any worker count.

use crate::error::{Error, Result};
use crate::grid::{ParamGrid, Variant};
use crate::poly::{self, Degree};
use crate::vec3::Vec3;
use rayon::prelude::*;

/// Streamed terms whose exponent trails the running maximum by more than
/// this many nats are dropped; their relative weight is below `3e-20`.
pub const TERM_CUTOFF: f64 = 45.0;

/// Queries per work unit for the parallel loops.
const QUERY_CHUNK: usize = 64;

/// Forward-pass results plus the per-query state the backward pass needs.
#[derive(Debug, Clone)]
pub struct EvalBatch {
    queries: Vec<Vec3>,
    outputs: Vec<f64>,
    /// Saved denominators in shifted form: the true softmax denominator of
    /// query `j` is `denoms[j] * exp(max_exponents[j])`.
    denoms: Vec<f64>,
    max_exponents: Vec<f64>,
    gradients: Option<Vec<Vec3>>,
    /// Per-query out-of-hull flags (trilinear only).
    clamped: Option<Vec<bool>>,
}

impl EvalBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn queries(&self) -> &[Vec3] {
        &self.queries
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// True softmax denominator of query `j` (may underflow for queries far
    /// outside every kernel's reach; the shifted pair never does).
    pub fn denominator(&self, j: usize) -> f64 {
        self.denoms[j] * self.max_exponents[j].exp()
    }

    pub fn shifted_denominators(&self) -> &[f64] {
        &self.denoms
    }

    pub fn max_exponents(&self) -> &[f64] {
        &self.max_exponents
    }

    pub fn gradients(&self) -> Option<&[Vec3]> {
        self.gradients.as_deref()
    }

    pub fn clamped(&self) -> Option<&[bool]> {
        self.clamped.as_deref()
    }
}

fn validate_queries(grid: &ParamGrid, queries: &[Vec3]) -> Result<()> {
    if grid.key_count() == 0 {
        return Err(Error::contract("grid has no keys"));
    }
    if queries.iter().any(|q| !q.is_finite()) {
        return Err(Error::input("queries must be finite"));
    }
    Ok(())
}

/// Deterministic space-filling-curve order of the queries. Evaluating in
/// this order makes each query chunk spatially compact, which is what lets
/// the kernels cull key blocks; per-query results do not depend on chunk
/// membership, so reordering never changes any output bit.
pub(crate) fn spatial_order(queries: &[Vec3]) -> Vec<u32> {
    #[inline]
    fn spread(v: u32) -> u64 {
        // interleave 10 bits with two-zero gaps
        let mut x = v as u64 & 0x3ff;
        x = (x | (x << 16)) & 0x030000ff;
        x = (x | (x << 8)) & 0x0300f00f;
        x = (x | (x << 4)) & 0x030c30c3;
        x = (x | (x << 2)) & 0x09249249;
        x
    }
    let quant = |c: f64| -> u32 { (((c + 1.2) / 2.4).clamp(0.0, 1.0) * 1023.0) as u32 };
    let mut order: Vec<u32> = (0..queries.len() as u32).collect();
    order.sort_unstable_by_key(|&i| {
        let q = queries[i as usize];
        let key = spread(quant(q.x)) | (spread(quant(q.y)) << 1) | (spread(quant(q.z)) << 2);
        (key, i)
    });
    order
}

/// Oracle forward pass materializing all `I*J` weight and value terms.
pub fn forward_naive(grid: &ParamGrid, queries: &[Vec3]) -> Result<EvalBatch> {
    validate_queries(grid, queries)?;
    if grid.config().variant == Variant::Trilinear {
        return trilinear_naive(grid, queries);
    }

    let j_count = queries.len();
    let degree = grid.config().degree;
    let i_total: usize = grid.banks().len() * grid.key_count();

    // The point of this route is the full term matrix; keep it explicit.
    let mut weights = vec![0.0f64; i_total * j_count];
    let mut values = vec![0.0f64; i_total * j_count];

    for (j, &q) in queries.iter().enumerate() {
        let mut col = 0usize;
        for (bank_idx, bank) in grid.banks().iter().enumerate() {
            let stride = degree.coeff_count();
            for key in 0..grid.key_count() {
                let k = grid.key_position(bank_idx, key);
                let d = q - k;
                let t = -bank.betas()[key] * d.norm_sq();
                weights[col * j_count + j] = t.exp();
                values[col * j_count + j] =
                    poly::eval(d, degree, &bank.coeffs[key * stride..(key + 1) * stride]);
                col += 1;
            }
        }
    }

    let mut outputs = vec![0.0f64; j_count];
    let mut denoms = vec![0.0f64; j_count];
    for j in 0..j_count {
        let mut e = 0.0;
        let mut num = 0.0;
        for col in 0..i_total {
            let l = weights[col * j_count + j];
            e += l;
            num += l * values[col * j_count + j];
        }
        denoms[j] = e;
        outputs[j] = num / e;
    }

    Ok(EvalBatch {
        queries: queries.to_vec(),
        outputs,
        denoms,
        max_exponents: vec![0.0; j_count],
        gradients: None,
        clamped: None,
    })
}

/// Memory-lean forward pass: running accumulators per query, one pass over
/// the keys, nothing sized `I*J` anywhere.
pub fn forward_streaming(grid: &ParamGrid, queries: &[Vec3]) -> Result<EvalBatch> {
    validate_queries(grid, queries)?;
    if grid.config().variant == Variant::Trilinear {
        return forward_trilinear(grid, queries);
    }

    let j_count = queries.len();
    let order = spatial_order(queries);
    let sorted: Vec<Vec3> = order.iter().map(|&i| queries[i as usize]).collect();
    let mut outputs = vec![0.0f64; j_count];
    let mut denoms = vec![0.0f64; j_count];
    let mut max_exponents = vec![0.0f64; j_count];

    // Two phases per query block: an exact maximum-reduce over all
    // exponents, then accumulation against the fixed shift. Key blocks
    // whose exponent bound cannot raise any maximum (phase 1) or clear the
    // term cutoff (phase 2) are skipped; both tests are conservative, so
    // outputs are bitwise identical to the uncalled sweep and independent
    // of the worker count.
    outputs
        .par_chunks_mut(QUERY_CHUNK)
        .zip(denoms.par_chunks_mut(QUERY_CHUNK))
        .zip(max_exponents.par_chunks_mut(QUERY_CHUNK))
        .zip(sorted.par_chunks(QUERY_CHUNK))
        .for_each(|(((out, den), mex), qs)| {
            let n = qs.len();
            let mut qlo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
            let mut qhi = -qlo;
            for &q in qs {
                qlo = qlo.min_by_component(q);
                qhi = qhi.max_by_component(q);
            }

            let degree = grid.config().degree;
            let stride = degree.coeff_count();
            let base = grid.base_keys();

            // phase 1: m[j] = max_i -beta_i |q_j - k_i|^2, exactly
            let mut m = [f64::NEG_INFINITY; QUERY_CHUNK];
            let mut min_m = f64::NEG_INFINITY;
            for bank in grid.banks() {
                let betas = bank.betas();
                let offsets = bank.offsets.as_deref();
                for (bi, block) in bank.blocks().iter().enumerate() {
                    if block.exponent_bound(qlo, qhi) <= min_m {
                        continue;
                    }
                    let start = bi * crate::grid::KEY_BLOCK;
                    let end = (start + crate::grid::KEY_BLOCK).min(base.len());
                    for i in start..end {
                        let k = match offsets {
                            Some(o) => base[i] + o[i],
                            None => base[i],
                        };
                        let beta = betas[i];
                        for jq in 0..n {
                            let d = qs[jq] - k;
                            let t = -beta * d.norm_sq();
                            if t > m[jq] {
                                m[jq] = t;
                            }
                        }
                    }
                    min_m = m[..n].iter().copied().fold(f64::INFINITY, f64::min);
                }
            }
            let cull_floor =
                m[..n].iter().copied().fold(f64::INFINITY, f64::min) - TERM_CUTOFF;

            // phase 2: accumulate denominators and numerators
            let mut e = [0.0f64; QUERY_CHUNK];
            let mut num = [0.0f64; QUERY_CHUNK];
            for bank in grid.banks() {
                let betas = bank.betas();
                let offsets = bank.offsets.as_deref();
                for (bi, block) in bank.blocks().iter().enumerate() {
                    if block.exponent_bound(qlo, qhi) < cull_floor {
                        continue;
                    }
                    let start = bi * crate::grid::KEY_BLOCK;
                    let end = (start + crate::grid::KEY_BLOCK).min(base.len());
                    for i in start..end {
                        let k = match offsets {
                            Some(o) => base[i] + o[i],
                            None => base[i],
                        };
                        let beta = betas[i];
                        let coeffs = &bank.coeffs[i * stride..(i + 1) * stride];
                        for jq in 0..n {
                            let d = qs[jq] - k;
                            let t = -beta * d.norm_sq();
                            let dt = t - m[jq];
                            if dt >= -TERM_CUTOFF {
                                let l = dt.exp();
                                e[jq] += l;
                                num[jq] += l * poly::eval(d, degree, coeffs);
                            }
                        }
                    }
                }
            }
            for jq in 0..n {
                out[jq] = num[jq] / e[jq];
                den[jq] = e[jq];
                mex[jq] = m[jq];
            }
        });

    // scatter back to input order
    let mut final_outputs = vec![0.0f64; j_count];
    let mut final_denoms = vec![0.0f64; j_count];
    let mut final_max = vec![0.0f64; j_count];
    for (s, &src) in order.iter().enumerate() {
        final_outputs[src as usize] = outputs[s];
        final_denoms[src as usize] = denoms[s];
        final_max[src as usize] = max_exponents[s];
    }

    Ok(EvalBatch {
        queries: queries.to_vec(),
        outputs: final_outputs,
        denoms: final_denoms,
        max_exponents: final_max,
        gradients: None,
        clamped: None,
    })
}

/// Direct realization of the normalized-RBF formula over scalar values.
///
/// Uses the same max-reduce-then-accumulate scheme (and term cutoff) as the
/// streaming kernel so that a degree-0 grid reduces to it bit-for-bit.
pub fn nrbf_reference(keys: &[Vec3], betas: &[f64], values: &[f64], queries: &[Vec3]) -> Vec<f64> {
    queries
        .iter()
        .map(|&q| {
            let mut m = f64::NEG_INFINITY;
            for i in 0..keys.len() {
                let d = q - keys[i];
                let t = -betas[i] * d.norm_sq();
                if t > m {
                    m = t;
                }
            }
            let mut e = 0.0f64;
            let mut num = 0.0f64;
            for i in 0..keys.len() {
                let d = q - keys[i];
                let t = -betas[i] * d.norm_sq();
                let dt = t - m;
                if dt >= -TERM_CUTOFF {
                    let l = dt.exp();
                    e += l;
                    num += l * values[i];
                }
            }
            num / e
        })
        .collect()
}

/// 8-corner trilinear interpolation on a value grid.
///
/// Queries outside the lattice hull are clamped onto it and flagged.
pub fn forward_trilinear(grid: &ParamGrid, queries: &[Vec3]) -> Result<EvalBatch> {
    validate_queries(grid, queries)?;
    if grid.config().variant != Variant::Trilinear {
        return Err(Error::contract("forward_trilinear requires a trilinear grid"));
    }

    let j_count = queries.len();
    let mut outputs = vec![0.0f64; j_count];
    let mut clamped = vec![false; j_count];

    outputs
        .par_chunks_mut(QUERY_CHUNK)
        .zip(clamped.par_chunks_mut(QUERY_CHUNK))
        .zip(queries.par_chunks(QUERY_CHUNK))
        .for_each(|((out, cl), qs)| {
            for ((o, c), &q) in out.iter_mut().zip(cl.iter_mut()).zip(qs.iter()) {
                let (value, was_clamped) = trilinear_value(grid, q);
                *o = value;
                *c = was_clamped;
            }
        });

    Ok(EvalBatch {
        queries: queries.to_vec(),
        outputs,
        denoms: vec![1.0; j_count],
        max_exponents: vec![0.0; j_count],
        gradients: None,
        clamped: Some(clamped),
    })
}

/// Cell lookup shared by the trilinear value, gradient and backward paths.
/// Returns (cell index, local coordinates in [0,1]^3, clamped?).
pub(crate) fn trilinear_cell(resolution: u32, q: Vec3) -> ([usize; 3], Vec3, bool) {
    let r = resolution as usize;
    let h = 2.0 / (resolution - 1) as f64;
    let mut clamped = false;
    let mut cell = [0usize; 3];
    let mut local = [0.0f64; 3];
    for axis in 0..3 {
        let x = q.component(axis);
        let clamped_x = x.clamp(-1.0, 1.0);
        if clamped_x != x {
            clamped = true;
        }
        let mut c = ((clamped_x + 1.0) / h).floor() as isize;
        c = c.clamp(0, r as isize - 2);
        cell[axis] = c as usize;
        local[axis] = ((clamped_x + 1.0) - c as f64 * h) / h;
    }
    (cell, Vec3::new(local[0], local[1], local[2]), clamped)
}

#[inline]
pub(crate) fn corner_key(resolution: u32, cell: [usize; 3], corner: usize) -> usize {
    let ix = cell[0] + ((corner >> 2) & 1);
    let iy = cell[1] + ((corner >> 1) & 1);
    let iz = cell[2] + (corner & 1);
    crate::grid::lattice_index(resolution, ix, iy, iz)
}

#[inline]
pub(crate) fn corner_weight(local: Vec3, corner: usize) -> f64 {
    let wx = if (corner >> 2) & 1 == 1 { local.x } else { 1.0 - local.x };
    let wy = if (corner >> 1) & 1 == 1 { local.y } else { 1.0 - local.y };
    let wz = if corner & 1 == 1 { local.z } else { 1.0 - local.z };
    wx * wy * wz
}

fn trilinear_value(grid: &ParamGrid, q: Vec3) -> (f64, bool) {
    let resolution = grid.config().resolution;
    let (cell, local, clamped) = trilinear_cell(resolution, q);
    let values = &grid.banks()[0].coeffs;
    let mut acc = 0.0;
    for corner in 0..8 {
        acc += corner_weight(local, corner) * values[corner_key(resolution, cell, corner)];
    }
    (acc, clamped)
}

/// Oracle route for the trilinear variant: convert the 8 cell corners into
/// trilinear-cube polynomial coefficients and evaluate that polynomial.
fn trilinear_naive(grid: &ParamGrid, queries: &[Vec3]) -> Result<EvalBatch> {
    let resolution = grid.config().resolution;
    let values = &grid.banks()[0].coeffs;
    let j_count = queries.len();
    let mut outputs = vec![0.0f64; j_count];
    let mut clamped_flags = vec![false; j_count];

    for (j, &q) in queries.iter().enumerate() {
        let (cell, local, clamped) = trilinear_cell(resolution, q);
        let v = |corner: usize| values[corner_key(resolution, cell, corner)];
        // corners indexed bit-wise as (x<<2 | y<<1 | z)
        let (v000, v001, v010, v011) = (v(0), v(1), v(2), v(3));
        let (v100, v101, v110, v111) = (v(4), v(5), v(6), v(7));
        let cube = [
            v000,
            v100 - v000,
            v010 - v000,
            v001 - v000,
            v110 - v100 - v010 + v000,
            v101 - v100 - v001 + v000,
            v011 - v010 - v001 + v000,
            v111 - v110 - v101 - v011 + v100 + v010 + v001 - v000,
        ];
        outputs[j] = poly::eval(local, Degree::Cube, &cube);
        clamped_flags[j] = clamped;
    }

    Ok(EvalBatch {
        queries: queries.to_vec(),
        outputs,
        denoms: vec![1.0; j_count],
        max_exponents: vec![0.0; j_count],
        gradients: None,
        clamped: Some(clamped_flags),
    })
}

/// Analytic gradient of the field with respect to the query position,
/// streamed with the same accumulation structure as the forward pass:
///
/// ```text
/// dO/dq = sum_i softmax_i * [ df/dq + 2 beta_i (q - k_i) (O(q) - f_i) ]
/// ```
///
/// Returns a batch whose `gradients()` is populated (outputs included; the
/// pass computes them anyway).
pub fn query_gradient(grid: &ParamGrid, queries: &[Vec3]) -> Result<EvalBatch> {
    validate_queries(grid, queries)?;
    if grid.config().variant == Variant::Trilinear {
        return trilinear_gradient(grid, queries);
    }

    let j_count = queries.len();
    let mut outputs = vec![0.0f64; j_count];
    let mut denoms = vec![0.0f64; j_count];
    let mut max_exponents = vec![0.0f64; j_count];
    let mut gradients = vec![Vec3::ZERO; j_count];

    outputs
        .par_chunks_mut(QUERY_CHUNK)
        .zip(denoms.par_chunks_mut(QUERY_CHUNK))
        .zip(max_exponents.par_chunks_mut(QUERY_CHUNK))
        .zip(gradients.par_chunks_mut(QUERY_CHUNK))
        .zip(queries.par_chunks(QUERY_CHUNK))
        .for_each(|((((out, den), mex), grads), qs)| {
            for ((((o, e), m), g), &q) in out
                .iter_mut()
                .zip(den.iter_mut())
                .zip(mex.iter_mut())
                .zip(grads.iter_mut())
                .zip(qs.iter())
            {
                let (value, grad, e_j, m_j) = stream_gradient(grid, q);
                *o = value;
                *g = grad;
                *e = e_j;
                *m = m_j;
            }
        });

    Ok(EvalBatch {
        queries: queries.to_vec(),
        outputs,
        denoms,
        max_exponents,
        gradients: Some(gradients),
        clamped: None,
    })
}

#[inline]
fn stream_gradient(grid: &ParamGrid, q: Vec3) -> (f64, Vec3, f64, f64) {
    let degree = grid.config().degree;
    let stride = degree.coeff_count();
    let base = grid.base_keys();

    // phase 1: exact maximum exponent, with block culling
    let mut m = f64::NEG_INFINITY;
    for bank in grid.banks() {
        let betas = bank.betas();
        let offsets = bank.offsets.as_deref();
        for (bi, block) in bank.blocks().iter().enumerate() {
            if -block.beta_min * block.distance_sq(q) <= m {
                continue;
            }
            let start = bi * crate::grid::KEY_BLOCK;
            let end = (start + crate::grid::KEY_BLOCK).min(base.len());
            for i in start..end {
                let k = match offsets {
                    Some(o) => base[i] + o[i],
                    None => base[i],
                };
                let t = -betas[i] * (q - k).norm_sq();
                if t > m {
                    m = t;
                }
            }
        }
    }

    // phase 2: accumulate value and gradient terms against the fixed shift
    let mut e = 0.0f64;
    let mut num = 0.0f64;
    // sum l * df/dq, sum l * 2 beta r f, sum l * 2 beta r
    let mut grad_f = Vec3::ZERO;
    let mut rbf_f = Vec3::ZERO;
    let mut rbf = Vec3::ZERO;
    for bank in grid.banks() {
        let betas = bank.betas();
        let offsets = bank.offsets.as_deref();
        for (bi, block) in bank.blocks().iter().enumerate() {
            if -block.beta_min * block.distance_sq(q) < m - TERM_CUTOFF {
                continue;
            }
            let start = bi * crate::grid::KEY_BLOCK;
            let end = (start + crate::grid::KEY_BLOCK).min(base.len());
            for i in start..end {
                let k = match offsets {
                    Some(o) => base[i] + o[i],
                    None => base[i],
                };
                let d = q - k;
                let t = -betas[i] * d.norm_sq();
                let dt = t - m;
                if dt >= -TERM_CUTOFF {
                    let l = dt.exp();
                    let c = &bank.coeffs[i * stride..(i + 1) * stride];
                    let f = poly::eval(d, degree, c);
                    let two_beta_r = d * (2.0 * betas[i]);
                    e += l;
                    num += l * f;
                    grad_f += poly::grad(d, degree, c) * l;
                    rbf_f += two_beta_r * (l * f);
                    rbf += two_beta_r * l;
                }
            }
        }
    }

    let value = num / e;
    let gradient = (grad_f - rbf_f + rbf * value) / e;
    (value, gradient, e, m)
}

/// Piecewise-analytic gradient inside each trilinear cell.
fn trilinear_gradient(grid: &ParamGrid, queries: &[Vec3]) -> Result<EvalBatch> {
    let resolution = grid.config().resolution;
    let h = 2.0 / (resolution - 1) as f64;
    let values = &grid.banks()[0].coeffs;
    let j_count = queries.len();
    let mut outputs = vec![0.0f64; j_count];
    let mut gradients = vec![Vec3::ZERO; j_count];
    let mut clamped_flags = vec![false; j_count];

    for (j, &q) in queries.iter().enumerate() {
        let (cell, local, clamped) = trilinear_cell(resolution, q);
        let mut value = 0.0;
        let mut grad = Vec3::ZERO;
        for corner in 0..8 {
            let v = values[corner_key(resolution, cell, corner)];
            let sx = if (corner >> 2) & 1 == 1 { 1.0 } else { -1.0 };
            let sy = if (corner >> 1) & 1 == 1 { 1.0 } else { -1.0 };
            let sz = if corner & 1 == 1 { 1.0 } else { -1.0 };
            let wx = if sx > 0.0 { local.x } else { 1.0 - local.x };
            let wy = if sy > 0.0 { local.y } else { 1.0 - local.y };
            let wz = if sz > 0.0 { local.z } else { 1.0 - local.z };
            value += wx * wy * wz * v;
            grad += Vec3::new(sx * wy * wz, wx * sy * wz, wx * wy * sz) * (v / h);
        }
        outputs[j] = value;
        gradients[j] = grad;
        clamped_flags[j] = clamped;
    }

    Ok(EvalBatch {
        queries: queries.to_vec(),
        outputs,
        denoms: vec![1.0; j_count],
        max_exponents: vec![0.0; j_count],
        gradients: Some(gradients),
        clamped: Some(clamped_flags),
    })
}
