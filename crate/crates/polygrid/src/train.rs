//! Fitting loop: point sampling, mean-shift offset initialization, AdamW
//! updates and convergence tracking.
//!
//! Reference hyperparameters: learning rate 6e-4 with AdamW, and per
//! iteration 16384 uniform samples in the bounding volume plus 16384
//! samples in the near-surface region. Every random draw of a run flows
//! from the single seed in [`TrainConfig`], so identical configs produce
//! bitwise-identical grids for any worker count.

use crate::backward::{backward_into, mse_loss, GradBuffer};
use crate::error::{Error, Result};
use crate::eval::{forward_streaming, TERM_CUTOFF};
use crate::geom::{distance_batch_parallel, SdfOracle};
use crate::grid::{GridConfig, ParamGrid, QueryPoint};
use crate::vec3::Vec3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// How stored offsets are initialized before the first iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetInit {
    /// Keys start on the lattice.
    Zero,
    /// Kernel-weighted mean of surface samples around each key.
    MeanShift,
    /// One surface sample per key (point-cloud style ablations).
    SurfaceSamples,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_volume: usize,
    pub batch_near: usize,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub near_surface_sigma: f64,
    /// Loss-history stride (the final iteration is always recorded).
    pub log_every: usize,
    /// Surface points used by the mean-shift initialization.
    pub mean_shift_points: usize,
    pub offset_init: OffsetInit,
    /// Stddev of the constant-coefficient init draw.
    pub init_stddev: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 6e-4,
            batch_volume: 16384,
            batch_near: 16384,
            iterations: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-2,
            seed: 0,
            near_surface_sigma: 0.01,
            log_every: 50,
            mean_shift_points: 16384,
            offset_init: OffsetInit::MeanShift,
            init_stddev: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_volume + self.batch_near == 0 {
            return Err(Error::config("at least one sample per batch is required"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.near_surface_sigma < 0.0 {
            return Err(Error::config("near_surface_sigma must be non-negative"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        Ok(())
    }

    /// Apply one `key=value` override (the plain-text config file format).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_volume" => self.batch_volume = num(key, value)?,
            "batch_near" => self.batch_near = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "near_surface_sigma" => self.near_surface_sigma = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "mean_shift_points" => self.mean_shift_points = num(key, value)?,
            "init_stddev" => self.init_stddev = num(key, value)?,
            "offset_init" => {
                self.offset_init = match value {
                    "zero" | "none" => OffsetInit::Zero,
                    "mean-shift" | "mean_shift" => OffsetInit::MeanShift,
                    "surface" => OffsetInit::SurfaceSamples,
                    _ => return Err(Error::config(format!("unknown offset_init '{value}'"))),
                }
            }
            _ => return Err(Error::config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parse a whole `key=value` config file body (`#` comments allowed).
    pub fn apply_file(&mut self, body: &str) -> Result<()> {
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("config line {} is not key=value", lineno + 1))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// First/second-moment accumulators congruent with the grid's learnable
/// tensors, plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first: GradBuffer,
    second: GradBuffer,
    step: usize,
}

impl OptimizerState {
    pub fn for_grid(grid: &ParamGrid) -> OptimizerState {
        OptimizerState {
            first: GradBuffer::for_grid(grid),
            second: GradBuffer::for_grid(grid),
            step: 0,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// One decoupled AdamW update. Weight decay touches only the polynomial
/// coefficients; keys, offsets and scales are geometric quantities and
/// decaying them toward zero would bias the geometry.
pub fn adamw_step(
    grid: &mut ParamGrid,
    grads: &GradBuffer,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.banks().len() != grid.banks().len() {
        return Err(Error::contract("gradient buffer does not match the grid"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    let keys_learnable = grid.config().keys_learnable;
    let scale_learnable = grid.config().scale_learnable;

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, decay: f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.epsilon) + decay * *p);
    };

    for (((bank, grad), m_bank), v_bank) in grid
        .banks_mut()
        .iter_mut()
        .zip(grads.banks())
        .zip(state.first.banks_mut())
        .zip(state.second.banks_mut())
    {
        if keys_learnable {
            if let (Some(offsets), Some(d_offsets), Some(m_off), Some(v_off)) = (
                bank.offsets.as_mut(),
                grad.d_offsets.as_ref(),
                m_bank.d_offsets.as_mut(),
                v_bank.d_offsets.as_mut(),
            ) {
                for i in 0..offsets.len() {
                    let (mut p, g) = (offsets[i].to_array(), d_offsets[i].to_array());
                    let mut m = m_off[i].to_array();
                    let mut v = v_off[i].to_array();
                    for axis in 0..3 {
                        update(&mut p[axis], g[axis], &mut m[axis], &mut v[axis], 0.0);
                    }
                    offsets[i] = p.into();
                    m_off[i] = m.into();
                    v_off[i] = v.into();
                }
            }
        }
        if scale_learnable {
            for i in 0..bank.log_scales.len() {
                update(
                    &mut bank.log_scales[i],
                    grad.d_log_scales[i],
                    &mut m_bank.d_log_scales[i],
                    &mut v_bank.d_log_scales[i],
                    0.0,
                );
            }
        }
        for i in 0..bank.coeffs.len() {
            update(
                &mut bank.coeffs[i],
                grad.d_coeffs[i],
                &mut m_bank.d_coeffs[i],
                &mut v_bank.d_coeffs[i],
                cfg.weight_decay,
            );
        }
    }
    grid.refresh_derived();
    Ok(())
}

/// A sampled training batch of point/target pairs.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub points: Vec<QueryPoint>,
}

impl TrainingBatch {
    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.target.unwrap_or(0.0)).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draw `batch_volume` uniform points in the cube plus `batch_near`
/// Gaussian-perturbed surface points, with oracle targets.
pub fn sample_batch(
    oracle: &SdfOracle,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainingBatch> {
    let mut positions = Vec::with_capacity(cfg.batch_volume + cfg.batch_near);
    for _ in 0..cfg.batch_volume {
        positions.push(Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
    }
    if cfg.batch_near > 0 {
        for s in oracle.sample_surface(cfg.batch_near, rng) {
            positions.push(
                s + Vec3::new(
                    cfg.near_surface_sigma * rng.sample::<f64, _>(StandardNormal),
                    cfg.near_surface_sigma * rng.sample::<f64, _>(StandardNormal),
                    cfg.near_surface_sigma * rng.sample::<f64, _>(StandardNormal),
                ),
            );
        }
    }
    let targets = distance_batch_parallel(oracle, &positions);
    let points = positions
        .into_iter()
        .zip(targets)
        .map(|(p, t)| QueryPoint::with_target(p, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingBatch { points })
}

/// Mean-shift initialization of the offset bank: each offset moves its key
/// to the `exp(-100 |k - s|^2)`-weighted mean of the surface samples.
///
/// The weight kernel underflows for keys far from every sample, so the
/// weighted mean is accumulated with the same running-maximum shift as the
/// evaluation kernels.
pub fn mean_shift_init(grid: &mut ParamGrid, surface_points: &[Vec3]) -> Result<()> {
    if surface_points.is_empty() {
        return Err(Error::input("mean-shift initialization needs surface points"));
    }
    let bank_idx = grid
        .banks()
        .iter()
        .position(|b| b.offsets.is_some())
        .ok_or_else(|| Error::contract("grid has no offset bank to initialize"))?;
    let base: Vec<Vec3> = grid.base_keys().to_vec();

    let offsets = grid.banks_mut()[bank_idx].offsets.as_mut().expect("offset bank");
    offsets
        .par_chunks_mut(64)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            for (local, offset) in chunk.iter_mut().enumerate() {
                let k = base[chunk_idx * 64 + local];
                let mut m = f64::NEG_INFINITY;
                let mut weight_sum = 0.0;
                let mut weighted = Vec3::ZERO;
                for &s in surface_points {
                    let t = -100.0 * (k - s).norm_sq();
                    if t > m {
                        let scale = (m - t).exp();
                        weight_sum *= scale;
                        weighted = weighted * scale;
                        m = t;
                    }
                    let dt = t - m;
                    if dt >= -TERM_CUTOFF {
                        let w = dt.exp();
                        weight_sum += w;
                        weighted += s * w;
                    }
                }
                *offset = weighted / weight_sum - k;
            }
        });
    Ok(())
}

/// Assign each key's offset from one surface sample (ablation-style
/// point-cloud keys). Samples are drawn uniformly by area.
pub fn surface_sample_init(
    grid: &mut ParamGrid,
    oracle: &SdfOracle,
    rng: &mut impl Rng,
) -> Result<()> {
    let bank_idx = grid
        .banks()
        .iter()
        .position(|b| b.offsets.is_some())
        .ok_or_else(|| Error::contract("grid has no offset bank to initialize"))?;
    let samples = oracle.sample_surface(grid.key_count(), rng);
    let base: Vec<Vec3> = grid.base_keys().to_vec();
    let offsets = grid.banks_mut()[bank_idx].offsets.as_mut().expect("offset bank");
    for ((offset, &s), &k) in offsets.iter_mut().zip(samples.iter()).zip(base.iter()) {
        *offset = s - k;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug)]
pub struct FitResult {
    pub grid: ParamGrid,
    pub history: Vec<LossSample>,
    pub final_loss: f64,
}

/// Full optimization loop:
/// sample -> forward (streaming) -> MSE -> backward -> AdamW.
pub fn fit(oracle: &SdfOracle, grid_cfg: &GridConfig, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    grid_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grid = ParamGrid::init_with_rng(*grid_cfg, cfg.init_stddev, &mut rng)?;

    if grid_cfg.variant.stores_offsets() {
        match cfg.offset_init {
            OffsetInit::Zero => {}
            OffsetInit::MeanShift => {
                let surface = oracle.sample_surface(cfg.mean_shift_points, &mut rng);
                mean_shift_init(&mut grid, &surface)?;
            }
            OffsetInit::SurfaceSamples => {
                surface_sample_init(&mut grid, oracle, &mut rng)?;
            }
        }
    }

    let mut state = OptimizerState::for_grid(&grid);
    let mut grads = GradBuffer::for_grid(&grid);
    let mut history = Vec::new();
    let mut final_loss = f64::NAN;

    for iteration in 0..cfg.iterations {
        let batch = sample_batch(oracle, cfg, &mut rng)?;
        let eval = forward_streaming(&grid, &batch.positions())?;
        let (loss, upstream) = mse_loss(eval.outputs(), &batch.targets())?;
        if !loss.is_finite() {
            return Err(Error::Numeric { iteration, loss });
        }
        grads.clear();
        backward_into(&grid, &eval, &upstream, &mut grads)?;
        adamw_step(&mut grid, &grads, &mut state, cfg)?;

        if iteration % cfg.log_every == 0 || iteration + 1 == cfg.iterations {
            history.push(LossSample { iteration, loss });
        }
        final_loss = loss;
    }

    Ok(FitResult { grid, history, final_loss })
}
