//! The dense parameter grid: keys, scales, polynomial coefficients and
//! optional offsets for every representation variant.
//!
//! Keys live on the regular lattice of the normalized domain `[-1,1]^3`
//! (inclusive endpoints; a resolution-1 grid has its single key at the
//! origin). Variants that move keys store a per-key offset relative to that
//! base lattice, so the lattice itself is never mutated.
//!
//! Channel counting follows the stored-parameter convention: implicit
//! lattice keys and fixed scales contribute no channels, stored offsets
//! contribute 3, a learnable scale contributes 1, and the polynomial block
//! contributes `coeff_count(degree)`. Total parameter count is `R^3 * C`.

use crate::error::{Error, Result};
use crate::poly::Degree;
use crate::vec3::Vec3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Scale initialization from the reference setup: `log beta = 7`, i.e. a
/// kernel radius of `1/exp(7) ~ 0.009` in domain units.
pub const INIT_LOG_SCALE: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Plain value grid blended with 8-corner trilinear weights.
    Trilinear,
    /// Normalized RBF over scalar values (degree-0 polynomials).
    Nrbf,
    /// Softmax-RBF interpolation of per-key polynomials, keys on the lattice.
    FuncInterp,
    /// Single bank whose keys carry stored offsets (free-moving keys).
    OffsetOnly,
    /// Lattice bank plus offset bank evaluated as one softmax over both.
    Combined,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Trilinear => 0,
            Variant::Nrbf => 1,
            Variant::FuncInterp => 2,
            Variant::OffsetOnly => 3,
            Variant::Combined => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Variant> {
        Ok(match code {
            0 => Variant::Trilinear,
            1 => Variant::Nrbf,
            2 => Variant::FuncInterp,
            3 => Variant::OffsetOnly,
            4 => Variant::Combined,
            _ => return Err(Error::format(format!("unknown variant code {code}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Trilinear => "trilinear",
            Variant::Nrbf => "nrbf",
            Variant::FuncInterp => "func-interp",
            Variant::OffsetOnly => "offset",
            Variant::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Ok(match s {
            "trilinear" => Variant::Trilinear,
            "nrbf" => Variant::Nrbf,
            "func-interp" | "funcinterp" => Variant::FuncInterp,
            "offset" | "offset-only" => Variant::OffsetOnly,
            "combined" => Variant::Combined,
            _ => return Err(Error::config(format!("unknown variant '{s}'"))),
        })
    }

    /// Does this variant store per-key offsets (bank 1 for Combined)?
    pub fn stores_offsets(self) -> bool {
        matches!(self, Variant::OffsetOnly | Variant::Combined)
    }

    pub fn is_rbf(self) -> bool {
        !matches!(self, Variant::Trilinear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub variant: Variant,
    pub degree: Degree,
    pub resolution: u32,
    /// Scale (`beta`) stored and trained per key. Fixed-scale grids keep
    /// `beta = exp(7)` and contribute no scale channel.
    pub scale_learnable: bool,
    /// Stored offsets updated during training (ignored when no offsets).
    pub keys_learnable: bool,
}

impl GridConfig {
    pub fn new(variant: Variant, degree: Degree, resolution: u32) -> GridConfig {
        GridConfig {
            variant,
            degree,
            resolution,
            scale_learnable: variant.is_rbf(),
            keys_learnable: variant.stores_offsets(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::config("resolution must be at least 1"));
        }
        match self.variant {
            Variant::Trilinear => {
                if self.resolution < 2 {
                    return Err(Error::config("trilinear grids need resolution >= 2"));
                }
                if self.degree != Degree::D0 {
                    return Err(Error::config("trilinear grids store scalar values (degree 0)"));
                }
                if self.scale_learnable {
                    return Err(Error::config("trilinear grids have no scale channel"));
                }
            }
            Variant::Nrbf => {
                if self.degree != Degree::D0 {
                    return Err(Error::config("nrbf stores scalar values (degree 0)"));
                }
                if !self.scale_learnable {
                    return Err(Error::config("nrbf carries a learnable scale channel"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Stored channels per key, bank 0 then bank 1.
    pub fn channels(&self) -> u32 {
        let coeffs = self.degree.coeff_count() as u32;
        match self.variant {
            Variant::Trilinear => 1,
            Variant::Nrbf => 2,
            Variant::FuncInterp => coeffs + u32::from(self.scale_learnable),
            Variant::OffsetOnly => 3 + coeffs + u32::from(self.scale_learnable),
            Variant::Combined => 3 + 2 * (coeffs + u32::from(self.scale_learnable)),
        }
    }

    pub fn key_count(&self) -> usize {
        let r = self.resolution as usize;
        r * r * r
    }

    /// Total stored parameters `R^3 * C`.
    pub fn param_count(&self) -> usize {
        self.key_count() * self.channels() as usize
    }
}

/// Stored parameter count for a variant/degree/resolution triple.
pub fn param_count(
    variant: Variant,
    degree: Degree,
    resolution: u32,
    scale_learnable: bool,
) -> usize {
    GridConfig { variant, degree, resolution, scale_learnable, keys_learnable: true }.param_count()
}

/// Initialization knobs for `init_grid`.
#[derive(Debug, Clone, Copy)]
pub struct InitSpec {
    pub seed: u64,
    /// Stddev of the zero-mean draw for the constant coefficient; all
    /// higher-order coefficients start at zero.
    pub value_stddev: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec { seed: 0, value_stddev: 0.1 }
    }
}

/// Keys per culling block in the evaluation kernels.
pub const KEY_BLOCK: usize = 64;

/// Conservative summary of one block of consecutive keys, used by the
/// kernels to skip whole blocks whose every term underflows the softmax
/// cutoff. Skipping is exact: a culled term would have contributed nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyBlockSummary {
    pub lo: Vec3,
    pub hi: Vec3,
    pub beta_min: f64,
}

impl KeyBlockSummary {
    /// Squared distance from `q` to the block's bounding box.
    #[inline(always)]
    pub fn distance_sq(&self, q: Vec3) -> f64 {
        let dx = (self.lo.x - q.x).max(0.0).max(q.x - self.hi.x);
        let dy = (self.lo.y - q.y).max(0.0).max(q.y - self.hi.y);
        let dz = (self.lo.z - q.z).max(0.0).max(q.z - self.hi.z);
        dx * dx + dy * dy + dz * dz
    }

    /// Squared distance between the block box and another box.
    #[inline(always)]
    pub fn distance_sq_box(&self, lo: Vec3, hi: Vec3) -> f64 {
        let dx = (self.lo.x - hi.x).max(0.0).max(lo.x - self.hi.x);
        let dy = (self.lo.y - hi.y).max(0.0).max(lo.y - self.hi.y);
        let dz = (self.lo.z - hi.z).max(0.0).max(lo.z - self.hi.z);
        dx * dx + dy * dy + dz * dz
    }

    /// Upper bound on any exponent `-beta_i |q - k_i|^2` this block can
    /// produce for queries inside the `(lo, hi)` box.
    #[inline(always)]
    pub fn exponent_bound(&self, lo: Vec3, hi: Vec3) -> f64 {
        -self.beta_min * self.distance_sq_box(lo, hi)
    }
}

/// One bank of per-key parameters. `Combined` grids have two banks; all
/// other variants have one.
///
/// Mutating `offsets` or `log_scales` in place requires a
/// `ParamGrid::refresh_derived` call before the next evaluation; the
/// cached `betas` and block summaries are rebuilt there.
#[derive(Debug, Clone, PartialEq)]
pub struct Bank {
    /// Offsets from the base lattice, present when the variant stores keys.
    pub offsets: Option<Vec<Vec3>>,
    pub log_scales: Vec<f64>,
    /// Cached `exp(log_scale)`, refreshed after every parameter mutation.
    betas: Vec<f64>,
    /// Key-major coefficient storage, `coeff_count` entries per key.
    pub coeffs: Vec<f64>,
    /// Per-`KEY_BLOCK` culling summaries.
    blocks: Vec<KeyBlockSummary>,
}

impl Bank {
    fn new(key_count: usize, degree: Degree, with_offsets: bool) -> Bank {
        Bank {
            offsets: with_offsets.then(|| vec![Vec3::ZERO; key_count]),
            log_scales: vec![INIT_LOG_SCALE; key_count],
            betas: vec![INIT_LOG_SCALE.exp(); key_count],
            coeffs: vec![0.0; key_count * degree.coeff_count()],
            blocks: Vec::new(),
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn blocks(&self) -> &[KeyBlockSummary] {
        &self.blocks
    }

    fn refresh(&mut self, base_keys: &[Vec3]) {
        for (b, ls) in self.betas.iter_mut().zip(self.log_scales.iter()) {
            *b = ls.exp();
        }
        let n_blocks = base_keys.len().div_ceil(KEY_BLOCK);
        self.blocks.clear();
        self.blocks.reserve(n_blocks);
        for block in 0..n_blocks {
            let start = block * KEY_BLOCK;
            let end = (start + KEY_BLOCK).min(base_keys.len());
            let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
            let mut hi = -lo;
            let mut beta_min = f64::INFINITY;
            for i in start..end {
                let k = match &self.offsets {
                    Some(o) => base_keys[i] + o[i],
                    None => base_keys[i],
                };
                lo = lo.min_by_component(k);
                hi = hi.max_by_component(k);
                beta_min = beta_min.min(self.betas[i]);
            }
            self.blocks.push(KeyBlockSummary { lo, hi, beta_min });
        }
    }
}

/// The full parameter set for one fitted field.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    config: GridConfig,
    base_keys: Vec<Vec3>,
    banks: Vec<Bank>,
}

/// Lattice coordinate of index `n` along one axis.
#[inline]
pub fn lattice_coord(n: usize, resolution: u32) -> f64 {
    if resolution == 1 {
        0.0
    } else {
        -1.0 + 2.0 * n as f64 / (resolution - 1) as f64
    }
}

/// Lattice tile edge: keys are stored grouped in `4^3` sub-cubes so that
/// each consecutive [`KEY_BLOCK`] of storage is spatially compact (the
/// culling blocks inherit tight bounding boxes from this).
const TILE: usize = 4;

/// Storage index of lattice site `(ix, iy, iz)` under the tiled order:
/// tiles x-major, then x-major within the tile.
#[inline]
pub fn lattice_index(resolution: u32, ix: usize, iy: usize, iz: usize) -> usize {
    let r = resolution as usize;
    let size = |t: usize| TILE.min(r - TILE * t); // only the last tile is ragged
    let (tx, ty, tz) = (ix / TILE, iy / TILE, iz / TILE);
    let (lx, ly, lz) = (ix % TILE, iy % TILE, iz % TILE);
    let (sx, sy, sz) = (size(tx), size(ty), size(tz));
    TILE * tx * r * r
        + sx * TILE * ty * r
        + sx * sy * TILE * tz
        + (lx * sy + ly) * sz
        + lz
}

/// Base lattice in the tiled storage order of [`lattice_index`].
pub fn lattice_points(resolution: u32) -> Vec<Vec3> {
    let r = resolution as usize;
    let mut pts = vec![Vec3::ZERO; r * r * r];
    for ix in 0..r {
        for iy in 0..r {
            for iz in 0..r {
                pts[lattice_index(resolution, ix, iy, iz)] = Vec3::new(
                    lattice_coord(ix, resolution),
                    lattice_coord(iy, resolution),
                    lattice_coord(iz, resolution),
                );
            }
        }
    }
    pts
}

impl ParamGrid {
    /// Build a grid with lattice keys, `log beta = 7`, constant coefficients
    /// drawn from `N(0, stddev^2)` and zero offsets.
    pub fn init(config: GridConfig, init: &InitSpec) -> Result<ParamGrid> {
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        Self::init_with_rng(config, init.value_stddev, &mut rng)
    }

    /// Same as `init` but drawing from a caller-owned RNG so a whole
    /// training run can flow from a single seed.
    pub fn init_with_rng(
        config: GridConfig,
        value_stddev: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamGrid> {
        config.validate()?;
        let key_count = config.key_count();
        let n_banks = if config.variant == Variant::Combined { 2 } else { 1 };
        let normal = Normal::new(0.0, value_stddev)
            .map_err(|_| Error::config("value stddev must be finite and non-negative"))?;

        let mut banks = Vec::with_capacity(n_banks);
        for bank_idx in 0..n_banks {
            let with_offsets = config.variant.stores_offsets()
                && (config.variant != Variant::Combined || bank_idx == 1);
            let mut bank = Bank::new(key_count, config.degree, with_offsets);
            let stride = config.degree.coeff_count();
            for key in 0..key_count {
                bank.coeffs[key * stride] = normal.sample(rng);
            }
            banks.push(bank);
        }

        let mut grid =
            ParamGrid { config, base_keys: lattice_points(config.resolution), banks };
        grid.refresh_derived();
        Ok(grid)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn base_keys(&self) -> &[Vec3] {
        &self.base_keys
    }

    pub fn banks(&self) -> &[Bank] {
        &self.banks
    }

    pub fn banks_mut(&mut self) -> &mut [Bank] {
        &mut self.banks
    }

    pub fn key_count(&self) -> usize {
        self.base_keys.len()
    }

    /// Effective key position of `key` in `bank`: base lattice plus offset.
    #[inline]
    pub fn key_position(&self, bank: usize, key: usize) -> Vec3 {
        let base = self.base_keys[key];
        match &self.banks[bank].offsets {
            Some(offsets) => base + offsets[key],
            None => base,
        }
    }

    /// Re-derive cached quantities (betas, culling blocks) after mutating
    /// raw parameters.
    pub fn refresh_derived(&mut self) {
        for bank in &mut self.banks {
            bank.refresh(&self.base_keys);
        }
    }

    /// Flatten stored channels of one key in `.efg` channel order:
    /// bank 0 then bank 1, each as `[offset xyz][log_scale][coeffs]`.
    pub fn stored_channels(&self, key: usize, out: &mut Vec<f64>) {
        out.clear();
        for bank in &self.banks {
            if let Some(offsets) = &bank.offsets {
                let o = offsets[key];
                out.extend_from_slice(&[o.x, o.y, o.z]);
            }
            if self.config.scale_learnable && self.config.variant.is_rbf() {
                out.push(bank.log_scales[key]);
            }
            let stride = self.config.degree.coeff_count();
            out.extend_from_slice(&bank.coeffs[key * stride..(key + 1) * stride]);
        }
    }

    /// Inverse of `stored_channels`.
    pub fn set_stored_channels(&mut self, key: usize, channels: &[f64]) -> Result<()> {
        if channels.len() != self.config.channels() as usize {
            return Err(Error::contract(format!(
                "expected {} channels, got {}",
                self.config.channels(),
                channels.len()
            )));
        }
        let stride = self.config.degree.coeff_count();
        let scale_stored = self.config.scale_learnable && self.config.variant.is_rbf();
        let mut cursor = 0usize;
        for bank in &mut self.banks {
            if let Some(offsets) = &mut bank.offsets {
                offsets[key] = Vec3::new(channels[cursor], channels[cursor + 1], channels[cursor + 2]);
                cursor += 3;
            }
            if scale_stored {
                bank.log_scales[key] = channels[cursor];
                cursor += 1;
            }
            bank.coeffs[key * stride..(key + 1) * stride]
                .copy_from_slice(&channels[cursor..cursor + stride]);
            cursor += stride;
        }
        debug_assert_eq!(cursor, channels.len());
        Ok(())
    }
}

/// A query position with an optional training target distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryPoint {
    pub position: Vec3,
    pub target: Option<f64>,
}

/// Diameter of the normalized domain; targets beyond it are suspect.
pub const DOMAIN_DIAMETER: f64 = 2.0 * 1.7320508075688772; // 2 * sqrt(3)

impl QueryPoint {
    pub fn new(position: Vec3) -> Result<QueryPoint> {
        if !position.is_finite() {
            return Err(Error::input("query position must be finite"));
        }
        Ok(QueryPoint { position, target: None })
    }

    pub fn with_target(position: Vec3, target: f64) -> Result<QueryPoint> {
        if !position.is_finite() {
            return Err(Error::input("query position must be finite"));
        }
        if !target.is_finite() || target.abs() > DOMAIN_DIAMETER {
            return Err(Error::input(format!(
                "target distance {target} outside the plausible range"
            )));
        }
        Ok(QueryPoint { position, target: Some(target) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_parameter_counts() {
        // Point-cloud style single banks with stored keys.
        assert_eq!(param_count(Variant::OffsetOnly, Degree::D0, 32, true), 163_840);
        assert_eq!(param_count(Variant::OffsetOnly, Degree::D1, 32, true), 262_144);
        // Lattice grids, fixed scale.
        assert_eq!(param_count(Variant::FuncInterp, Degree::D0, 32, false), 32_768);
        assert_eq!(param_count(Variant::FuncInterp, Degree::D1, 32, false), 131_072);
        assert_eq!(param_count(Variant::FuncInterp, Degree::D2, 32, false), 327_680);
        assert_eq!(param_count(Variant::FuncInterp, Degree::D3, 32, false), 655_360);
        // Lattice grids, learnable scale.
        assert_eq!(param_count(Variant::FuncInterp, Degree::D0, 32, true), 65_536);
        assert_eq!(param_count(Variant::FuncInterp, Degree::D1, 32, true), 163_840);
        assert_eq!(param_count(Variant::FuncInterp, Degree::D2, 32, true), 360_448);
        assert_eq!(param_count(Variant::FuncInterp, Degree::D3, 32, true), 688_128);
        // Free keys at higher resolution.
        assert_eq!(param_count(Variant::OffsetOnly, Degree::D1, 64, true), 2_097_152);
        // Lattice bank + offset bank.
        assert_eq!(param_count(Variant::Combined, Degree::D1, 32, true), 425_984);
        assert_eq!(param_count(Variant::Combined, Degree::D1, 8, true), 6_656);
        // Degenerate sanity: one key, value + scale.
        assert_eq!(param_count(Variant::Nrbf, Degree::D0, 1, true), 2);
        // Trilinear float-count match-up used by the capacity comparison.
        assert_eq!(param_count(Variant::Trilinear, Degree::D0, 19, false), 6_859);
    }

    #[test]
    fn lattice_r2_is_the_cube_corners() {
        let pts = lattice_points(2);
        assert_eq!(pts.len(), 8);
        for p in &pts {
            assert_eq!(p.x.abs(), 1.0);
            assert_eq!(p.y.abs(), 1.0);
            assert_eq!(p.z.abs(), 1.0);
        }
        // r=1 collapses to the domain center
        assert_eq!(lattice_points(1), vec![Vec3::ZERO]);
    }

    #[test]
    fn init_sets_scales_to_exp7() {
        let cfg = GridConfig::new(Variant::FuncInterp, Degree::D1, 4);
        let grid = ParamGrid::init(cfg, &InitSpec::default()).unwrap();
        for bank in grid.banks() {
            for (ls, b) in bank.log_scales.iter().zip(bank.betas().iter()) {
                assert_eq!(*ls, 7.0);
                assert_eq!(*b, 7.0f64.exp());
            }
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = GridConfig::new(Variant::Combined, Degree::D1, 3);
        let spec = InitSpec { seed: 99, value_stddev: 0.1 };
        let a = ParamGrid::init(cfg, &spec).unwrap();
        let b = ParamGrid::init(cfg, &spec).unwrap();
        assert_eq!(a, b);
        let c = ParamGrid::init(cfg, &InitSpec { seed: 100, value_stddev: 0.1 }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_resolution_is_rejected() {
        let cfg = GridConfig::new(Variant::Nrbf, Degree::D0, 0);
        assert!(ParamGrid::init(cfg, &InitSpec::default()).is_err());
    }

    #[test]
    fn higher_order_coefficients_start_at_zero() {
        let cfg = GridConfig::new(Variant::FuncInterp, Degree::D2, 3);
        let grid = ParamGrid::init(cfg, &InitSpec::default()).unwrap();
        let stride = Degree::D2.coeff_count();
        for key in 0..grid.key_count() {
            let c = &grid.banks()[0].coeffs[key * stride..(key + 1) * stride];
            assert!(c[0] != 0.0);
            assert!(c[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stored_channel_roundtrip() {
        let cfg = GridConfig::new(Variant::Combined, Degree::D1, 2);
        let mut grid = ParamGrid::init(cfg, &InitSpec { seed: 3, value_stddev: 0.2 }).unwrap();
        let mut chans = Vec::new();
        grid.stored_channels(5, &mut chans);
        assert_eq!(chans.len(), cfg.channels() as usize);
        let mut edited = chans.clone();
        edited[0] = 0.25;
        grid.set_stored_channels(5, &edited).unwrap();
        let mut back = Vec::new();
        grid.stored_channels(5, &mut back);
        assert_eq!(back, edited);
    }

    #[test]
    fn query_point_validation() {
        assert!(QueryPoint::new(Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(QueryPoint::with_target(Vec3::ZERO, 100.0).is_err());
        assert!(QueryPoint::with_target(Vec3::ZERO, -0.5).is_ok());
    }
}
