//! Manual backward pass: gradients of a scalar loss with respect to every
//! stored parameter, streamed from the forward pass's saved denominators.
//!
//! For each key the contributions are, with `l` the softmax weight of the
//! (key, query) pair, `d = q - k`, `f` the key's polynomial at `d` and `O`
//! the query's blended output:
//!
//! ```text
//! dO/dk    = l * ( -df/dx + 2 beta (f - O) d ) ... sign via x = q - k
//! dO/dbeta = l * ( -|d|^2 (f - O) )
//! dO/dphi  = l * dphi_basis(d)
//! ```
//!
//! The scale gradient is chained through the log parameterization
//! (`d log_scale = beta * d beta`). Work is parallelized over keys so each
//! worker writes a disjoint slice of the gradient buffer: no partial buffer
//! copies, and the query loop order per key is fixed, so results are
//! bitwise identical for any worker count.

use crate::error::{Error, Result};
use crate::eval::{EvalBatch, TERM_CUTOFF};
use crate::eval::{corner_key, corner_weight, trilinear_cell};
use crate::grid::{ParamGrid, Variant, KEY_BLOCK};
use crate::poly::{self, MAX_COEFFS};
use crate::vec3::Vec3;
use rayon::prelude::*;

/// Keys per parallel work unit in the backward sweep; matches the culling
/// block granularity so each work unit has one exponent-bound summary.
const KEY_CHUNK: usize = KEY_BLOCK;
/// Queries per cache tile in the backward sweep.
const QUERY_TILE: usize = 256;

/// Gradients for one bank, congruent with the bank's stored tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BankGrads {
    pub d_offsets: Option<Vec<Vec3>>,
    pub d_log_scales: Vec<f64>,
    pub d_coeffs: Vec<f64>,
}

/// Accumulated parameter gradients matching a [`ParamGrid`]'s layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    banks: Vec<BankGrads>,
    accumulated_queries: usize,
}

impl GradBuffer {
    pub fn for_grid(grid: &ParamGrid) -> GradBuffer {
        let banks = grid
            .banks()
            .iter()
            .map(|bank| BankGrads {
                d_offsets: bank.offsets.as_ref().map(|o| vec![Vec3::ZERO; o.len()]),
                d_log_scales: vec![0.0; bank.log_scales.len()],
                d_coeffs: vec![0.0; bank.coeffs.len()],
            })
            .collect();
        GradBuffer { banks, accumulated_queries: 0 }
    }

    pub fn banks(&self) -> &[BankGrads] {
        &self.banks
    }

    pub fn banks_mut(&mut self) -> &mut [BankGrads] {
        &mut self.banks
    }

    pub fn accumulated_queries(&self) -> usize {
        self.accumulated_queries
    }

    pub fn clear(&mut self) {
        for bank in &mut self.banks {
            if let Some(offsets) = &mut bank.d_offsets {
                offsets.fill(Vec3::ZERO);
            }
            bank.d_log_scales.fill(0.0);
            bank.d_coeffs.fill(0.0);
        }
        self.accumulated_queries = 0;
    }

    /// Elementwise sum, used when gradients are accumulated over sub-batches.
    pub fn add(&mut self, other: &GradBuffer) -> Result<()> {
        if self.banks.len() != other.banks.len() {
            return Err(Error::contract("gradient buffers have different bank counts"));
        }
        for (a, b) in self.banks.iter_mut().zip(other.banks.iter()) {
            match (&mut a.d_offsets, &b.d_offsets) {
                (Some(x), Some(y)) if x.len() == y.len() => {
                    for (xi, yi) in x.iter_mut().zip(y.iter()) {
                        *xi += *yi;
                    }
                }
                (None, None) => {}
                _ => return Err(Error::contract("offset gradient shapes differ")),
            }
            if a.d_log_scales.len() != b.d_log_scales.len()
                || a.d_coeffs.len() != b.d_coeffs.len()
            {
                return Err(Error::contract("gradient tensor shapes differ"));
            }
            for (xi, yi) in a.d_log_scales.iter_mut().zip(b.d_log_scales.iter()) {
                *xi += *yi;
            }
            for (xi, yi) in a.d_coeffs.iter_mut().zip(b.d_coeffs.iter()) {
                *xi += *yi;
            }
        }
        self.accumulated_queries += other.accumulated_queries;
        Ok(())
    }

    pub fn is_all_finite(&self) -> bool {
        self.banks.iter().all(|bank| {
            bank.d_offsets.as_ref().map_or(true, |o| o.iter().all(|v| v.is_finite()))
                && bank.d_log_scales.iter().all(|v| v.is_finite())
                && bank.d_coeffs.iter().all(|v| v.is_finite())
        })
    }

    fn congruent_with(&self, grid: &ParamGrid) -> bool {
        self.banks.len() == grid.banks().len()
            && self.banks.iter().zip(grid.banks()).all(|(g, b)| {
                g.d_offsets.as_ref().map(Vec::len) == b.offsets.as_ref().map(Vec::len)
                    && g.d_log_scales.len() == b.log_scales.len()
                    && g.d_coeffs.len() == b.coeffs.len()
            })
    }
}

/// Mean squared error over a batch and its per-query upstream gradient
/// `dL/dO_j = 2/J (O_j - o_j)`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != targets.len() {
        return Err(Error::contract(format!(
            "prediction/target length mismatch: {} vs {}",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::contract("mse_loss needs at least one sample"));
    }
    let j = predictions.len() as f64;
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(predictions.len());
    for (&p, &t) in predictions.iter().zip(targets.iter()) {
        let diff = p - t;
        loss += diff * diff;
        upstream.push(2.0 / j * diff);
    }
    Ok((loss / j, upstream))
}

/// Accumulate `dL/dtheta` into a fresh buffer.
pub fn backward(grid: &ParamGrid, batch: &EvalBatch, upstream: &[f64]) -> Result<GradBuffer> {
    let mut buf = GradBuffer::for_grid(grid);
    backward_into(grid, batch, upstream, &mut buf)?;
    Ok(buf)
}

/// Accumulate `dL/dtheta` into an existing congruent buffer. Gradients for
/// non-learnable tensors (fixed keys, fixed scales) are left untouched.
pub fn backward_into(
    grid: &ParamGrid,
    batch: &EvalBatch,
    upstream: &[f64],
    buf: &mut GradBuffer,
) -> Result<()> {
    if upstream.len() != batch.len() {
        return Err(Error::contract("upstream length does not match the batch"));
    }
    if !buf.congruent_with(grid) {
        return Err(Error::contract("gradient buffer shape does not match the grid"));
    }
    if batch.shifted_denominators().len() != batch.len() {
        return Err(Error::contract("batch is missing saved denominators"));
    }

    if grid.config().variant == Variant::Trilinear {
        backward_trilinear(grid, batch, upstream, buf);
    } else {
        backward_rbf(grid, batch, upstream, buf);
    }
    buf.accumulated_queries += batch.len();
    Ok(())
}

fn backward_rbf(grid: &ParamGrid, batch: &EvalBatch, upstream_in: &[f64], buf: &mut GradBuffer) {
    let degree = grid.config().degree;
    let stride = degree.coeff_count();
    let base = grid.base_keys();
    let keys_learnable = grid.config().keys_learnable;
    let scale_learnable = grid.config().scale_learnable;

    // Evaluate in spatial order so query tiles are compact and the block
    // culling below can fire. The per-key accumulation order over queries
    // is this deterministic order, independent of worker count.
    let order = crate::eval::spatial_order(batch.queries());
    let queries: Vec<Vec3> = order.iter().map(|&i| batch.queries()[i as usize]).collect();
    let outputs: Vec<f64> = order.iter().map(|&i| batch.outputs()[i as usize]).collect();
    let denoms: Vec<f64> =
        order.iter().map(|&i| batch.shifted_denominators()[i as usize]).collect();
    let max_exps: Vec<f64> = order.iter().map(|&i| batch.max_exponents()[i as usize]).collect();
    let upstream: Vec<f64> = order.iter().map(|&i| upstream_in[i as usize]).collect();

    // per-tile query bounds and smallest saved shift, for block culling
    let tiles: Vec<(Vec3, Vec3, f64)> = (0..queries.len())
        .step_by(QUERY_TILE)
        .map(|tile_start| {
            let tile_end = (tile_start + QUERY_TILE).min(queries.len());
            let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
            let mut hi = -lo;
            let mut min_m = f64::INFINITY;
            for j in tile_start..tile_end {
                lo = lo.min_by_component(queries[j]);
                hi = hi.max_by_component(queries[j]);
                min_m = min_m.min(max_exps[j]);
            }
            (lo, hi, min_m)
        })
        .collect();

    for (bank, grads) in grid.banks().iter().zip(buf.banks.iter_mut()) {
        let betas = bank.betas();
        let offsets = bank.offsets.as_deref();
        let blocks = bank.blocks();

        // Disjoint per-chunk views over every gradient tensor.
        let coeff_chunks = grads.d_coeffs.par_chunks_mut(KEY_CHUNK * stride);
        let scale_chunks = grads.d_log_scales.par_chunks_mut(KEY_CHUNK);
        let offset_chunks: Vec<Option<&mut [Vec3]>> = match grads.d_offsets.as_mut() {
            Some(o) => o.chunks_mut(KEY_CHUNK).map(Some).collect(),
            None => (0..base.len().div_ceil(KEY_CHUNK)).map(|_| None).collect(),
        };

        coeff_chunks
            .zip(scale_chunks)
            .zip(offset_chunks.into_par_iter())
            .enumerate()
            .for_each(|(chunk_idx, ((d_coeffs, d_scales), mut d_offsets))| {
                let key0 = chunk_idx * KEY_CHUNK;
                let keys_here = d_scales.len();
                let mut phi_basis = [0.0f64; MAX_COEFFS];

                for (tile_idx, tile_start) in (0..queries.len()).step_by(QUERY_TILE).enumerate()
                {
                    let (tile_lo, tile_hi, tile_min_m) = tiles[tile_idx];
                    // every term of this (block, tile) pair underflows
                    if blocks[chunk_idx].exponent_bound(tile_lo, tile_hi)
                        < tile_min_m - TERM_CUTOFF
                    {
                        continue;
                    }
                    let tile_end = (tile_start + QUERY_TILE).min(queries.len());
                    for local in 0..keys_here {
                        let i = key0 + local;
                        let k = match offsets {
                            Some(o) => base[i] + o[i],
                            None => base[i],
                        };
                        let beta = betas[i];
                        let mut acc_offset = Vec3::ZERO;
                        let mut acc_scale = 0.0f64;
                        let mut acc_coeffs = [0.0f64; MAX_COEFFS];

                        for j in tile_start..tile_end {
                            let d = queries[j] - k;
                            let r2 = d.norm_sq();
                            let dt = -beta * r2 - max_exps[j];
                            if dt < -TERM_CUTOFF {
                                continue;
                            }
                            let l = dt.exp() / denoms[j];
                            let ul = upstream[j] * l;
                            if ul == 0.0 {
                                continue;
                            }
                            let c = &bank.coeffs[i * stride..(i + 1) * stride];
                            let f = poly::eval(d, degree, c);
                            let f_minus_o = f - outputs[j];
                            if keys_learnable && offsets.is_some() {
                                let gk =
                                    d * (2.0 * beta * f_minus_o) - poly::grad(d, degree, c);
                                acc_offset += gk * ul;
                            }
                            if scale_learnable {
                                // chain rule through beta = exp(log_scale)
                                acc_scale += ul * (-r2 * f_minus_o) * beta;
                            }
                            poly::basis(d, degree, &mut phi_basis);
                            for (a, b) in
                                acc_coeffs[..stride].iter_mut().zip(phi_basis[..stride].iter())
                            {
                                *a += ul * b;
                            }
                        }

                        if let Some(off) = d_offsets.as_mut() {
                            off[local] += acc_offset;
                        }
                        d_scales[local] += acc_scale;
                        for (dst, src) in d_coeffs[local * stride..(local + 1) * stride]
                            .iter_mut()
                            .zip(acc_coeffs[..stride].iter())
                        {
                            *dst += src;
                        }
                    }
                }
            });
    }
}

fn backward_trilinear(grid: &ParamGrid, batch: &EvalBatch, upstream: &[f64], buf: &mut GradBuffer) {
    let resolution = grid.config().resolution;
    let d_values = &mut buf.banks[0].d_coeffs;
    for (j, &q) in batch.queries().iter().enumerate() {
        let u = upstream[j];
        if u == 0.0 {
            continue;
        }
        let (cell, local, _) = trilinear_cell(resolution, q);
        for corner in 0..8 {
            d_values[corner_key(resolution, cell, corner)] += u * corner_weight(local, corner);
        }
    }
}
