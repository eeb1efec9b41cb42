use crate::manifest::RunManifest;
use clap::Args;
use polygrid::compose::{
    band_contribution, cosine_fit, splice_grids, CosineStack, SplicePlane,
};
use polygrid::efg;
use polygrid::error::{Error, Result};
use polygrid::eval::forward_streaming;
use polygrid::geom::{
    chamfer, estimate_normals, marching_cubes, volume_metrics, MetricsConfig, SdfOracle, TriMesh,
};
use polygrid::grid::{GridConfig, ParamGrid, Variant};
use polygrid::poly::Degree;
use polygrid::train::{fit, OffsetInit, TrainConfig};
use polygrid::vec3::Vec3;
use polygrid::{alloc_stats, backward_into, mse_loss, GradBuffer};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Shape source shared by fit-like commands: an analytic spec or an OBJ
/// file normalized into the domain.
#[derive(Args, Debug)]
pub struct ShapeSource {
    /// Analytic shape spec: sphere:r=0.5 | box:h=0.5 | torus:major=0.6,minor=0.2
    #[arg(long, conflicts_with = "mesh")]
    shape: Option<String>,
    /// Triangle mesh (OBJ); scaled into [-1,1]^3 with a 5% margin
    #[arg(long)]
    mesh: Option<PathBuf>,
}

impl ShapeSource {
    fn oracle(&self) -> Result<SdfOracle> {
        match (&self.shape, &self.mesh) {
            (Some(spec), None) => SdfOracle::parse_spec(spec),
            (None, Some(path)) => {
                let mesh = TriMesh::load_obj(path)?;
                let (normalized, _) = mesh.normalized_to_domain(0.05);
                SdfOracle::from_mesh(normalized)
            }
            _ => Err(Error::config("exactly one of --shape or --mesh is required")),
        }
    }

    fn describe(&self) -> String {
        match (&self.shape, &self.mesh) {
            (Some(spec), _) => spec.clone(),
            (_, Some(path)) => path.display().to_string(),
            _ => String::from("<none>"),
        }
    }
}

/// Training hyperparameters as CLI flags (all optional; flags override the
/// config file, which overrides the defaults).
#[derive(Args, Debug)]
pub struct TrainFlags {
    /// Plain-text key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_volume: Option<usize>,
    #[arg(long)]
    batch_near: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    near_sigma: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Offset initialization: mean-shift | zero | surface
    #[arg(long)]
    offset_init: Option<String>,
}

impl TrainFlags {
    fn build(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let body = std::fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_file(&body)?;
        }
        if let Some(v) = self.iters {
            cfg.iterations = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_volume {
            cfg.batch_volume = v;
        }
        if let Some(v) = self.batch_near {
            cfg.batch_near = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.near_sigma {
            cfg.near_surface_sigma = v;
        }
        if let Some(v) = self.log_every {
            cfg.log_every = v;
        }
        if let Some(v) = &self.offset_init {
            cfg.offset_init = match v.as_str() {
                "mean-shift" => OffsetInit::MeanShift,
                "zero" | "none" => OffsetInit::Zero,
                "surface" => OffsetInit::SurfaceSamples,
                other => return Err(Error::config(format!("unknown offset init '{other}'"))),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn record(cfg: &TrainConfig, manifest: &mut RunManifest) {
        manifest.put("learning_rate", cfg.learning_rate);
        manifest.put("batch_volume", cfg.batch_volume);
        manifest.put("batch_near", cfg.batch_near);
        manifest.put("iterations", cfg.iterations);
        manifest.put("beta1", cfg.beta1);
        manifest.put("beta2", cfg.beta2);
        manifest.put("epsilon", cfg.epsilon);
        manifest.put("weight_decay", cfg.weight_decay);
        manifest.put("seed", cfg.seed);
        manifest.put("near_surface_sigma", cfg.near_surface_sigma);
        manifest.put("mean_shift_points", cfg.mean_shift_points);
        manifest.put(
            "offset_init",
            match cfg.offset_init {
                OffsetInit::Zero => "zero",
                OffsetInit::MeanShift => "mean-shift",
                OffsetInit::SurfaceSamples => "surface",
            },
        );
    }
}

fn parse_variant_flags(
    variant: &str,
    deg: u8,
    res: u32,
    fixed_scale: bool,
    fixed_keys: bool,
) -> Result<GridConfig> {
    let variant = Variant::parse(variant)?;
    let degree = Degree::from_order(deg)?;
    if res == 0 {
        return Err(Error::config("--res must be at least 1"));
    }
    let mut cfg = GridConfig::new(variant, degree, res);
    if fixed_scale {
        if variant == Variant::Nrbf {
            return Err(Error::config("nrbf always carries a learnable scale"));
        }
        cfg.scale_learnable = false;
    }
    if fixed_keys {
        cfg.keys_learnable = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest_path(explicit: &Option<PathBuf>, primary_output: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut p = primary_output.as_os_str().to_owned();
        p.push(".manifest");
        PathBuf::from(p)
    })
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    source: ShapeSource,
    /// trilinear | nrbf | func-interp | offset | combined
    #[arg(long, default_value = "combined")]
    variant: String,
    /// Polynomial degree of the value functions (0-3)
    #[arg(long, default_value_t = 1)]
    deg: u8,
    /// Lattice resolution per axis
    #[arg(long, default_value_t = 8)]
    res: u32,
    /// Keep scales fixed at exp(7) (no scale channel)
    #[arg(long)]
    fixed_scale: bool,
    /// Do not train stored key offsets
    #[arg(long)]
    fixed_keys: bool,
    #[command(flatten)]
    train: TrainFlags,
    /// Output parameter file
    #[arg(long, default_value = "fit.efg")]
    out: PathBuf,
    /// Loss history CSV (default: <out>.loss.csv)
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn cmd_fit(args: FitArgs) -> Result<()> {
    let started = Instant::now();
    let oracle = args.source.oracle()?;
    let grid_cfg =
        parse_variant_flags(&args.variant, args.deg, args.res, args.fixed_scale, args.fixed_keys)?;
    let train_cfg = args.train.build()?;

    let result = fit(&oracle, &grid_cfg, &train_cfg)?;
    efg::save(&result.grid, &args.out)?;

    let loss_csv = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| args.out.with_extension("loss.csv"));
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&loss_csv)?);
        writeln!(w, "iteration,loss")?;
        for sample in &result.history {
            writeln!(w, "{},{}", sample.iteration, sample.loss)?;
        }
    }

    let mut manifest = RunManifest::new("fit");
    manifest.put("input", args.source.describe());
    manifest.put("variant", grid_cfg.variant.name());
    manifest.put("degree", grid_cfg.degree);
    manifest.put("resolution", grid_cfg.resolution);
    manifest.put("scale_learnable", grid_cfg.scale_learnable);
    manifest.put("keys_learnable", grid_cfg.keys_learnable);
    manifest.put("param_count", grid_cfg.param_count());
    TrainFlags::record(&train_cfg, &mut manifest);
    manifest.put("out", args.out.display());
    manifest.put("loss_csv", loss_csv.display());
    manifest.put("final_loss", result.final_loss);
    manifest.put("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    manifest.write_to(&manifest_path(&args.manifest, &args.out))?;

    println!(
        "fit: {} params, final loss {:.3e}, wrote {}",
        grid_cfg.param_count(),
        result.final_loss,
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct MeshArgs {
    /// Fitted parameter file
    #[arg(long)]
    efg: PathBuf,
    /// Marching cubes cells per axis
    #[arg(long, default_value_t = 64)]
    res: u32,
    /// Also write per-vertex normals from the field gradient
    #[arg(long)]
    normals: bool,
    #[arg(long, default_value = "mesh.obj")]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn cmd_mesh(args: MeshArgs) -> Result<()> {
    let started = Instant::now();
    let grid = efg::load(&args.efg)?;
    let extraction =
        marching_cubes(|pts| forward_streaming(&grid, pts).expect("field evaluation").outputs().to_vec(), args.res)?;
    if extraction.no_crossing {
        eprintln!("warning: field has no zero crossing; writing an empty mesh");
    }

    let normals = if args.normals && !extraction.mesh.is_empty() {
        let (normals, flagged) = estimate_normals(&grid, extraction.mesh.vertices())?;
        let n_flagged = flagged.iter().filter(|&&f| f).count();
        if n_flagged > 0 {
            eprintln!("warning: {n_flagged} vertices had a vanishing gradient");
        }
        Some(normals)
    } else {
        None
    };
    extraction.mesh.save_obj(&args.out, normals.as_deref())?;

    let mut manifest = RunManifest::new("mesh");
    manifest.put("efg", args.efg.display());
    manifest.put("mc_cells", args.res);
    manifest.put("normals", args.normals);
    manifest.put("vertices", extraction.mesh.vertices().len());
    manifest.put("triangles", extraction.mesh.triangles().len());
    manifest.put("no_crossing", extraction.no_crossing);
    manifest.put("out", args.out.display());
    manifest.put("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    manifest.write_to(&manifest_path(&args.manifest, &args.out))?;

    println!(
        "mesh: {} vertices, {} triangles, wrote {}",
        extraction.mesh.vertices().len(),
        extraction.mesh.triangles().len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Fitted parameter file
    #[arg(long)]
    efg: PathBuf,
    #[command(flatten)]
    reference: ShapeSource,
    /// AE/IOU sample budget per region
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Surface samples per side for the Chamfer metric
    #[arg(long, default_value_t = 100_000)]
    cd_samples: usize,
    /// Marching cubes cells for the Chamfer extraction
    #[arg(long, default_value_t = 64)]
    mc_res: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Also write the metrics as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let started = Instant::now();
    let grid = efg::load(&args.efg)?;
    let oracle = args.reference.oracle()?;

    let metrics_cfg = MetricsConfig {
        volume_samples: args.samples,
        near_samples: args.samples,
        seed: args.seed,
        ..Default::default()
    };
    let metrics = volume_metrics(&grid, &oracle, &metrics_cfg)?;
    let cd = chamfer_against_oracle(&grid, &oracle, args.mc_res, args.cd_samples, args.seed)?;

    println!("cd (x1e3):       {:.3}", cd * 1e3);
    println!("volume-ae (x1e4): {:.3}", metrics.volume_ae_e4);
    println!("volume-iou (%):   {:.3}", metrics.volume_iou_pct);
    println!("near-ae (x1e4):   {:.3}", metrics.near_ae_e4);
    println!("near-iou (%):     {:.3}", metrics.near_iou_pct);

    if let Some(csv) = &args.csv {
        let mut w = std::io::BufWriter::new(std::fs::File::create(csv)?);
        writeln!(w, "cd,vol_ae,vol_iou,near_ae,near_iou")?;
        writeln!(
            w,
            "{},{},{},{},{}",
            cd * 1e3,
            metrics.volume_ae_e4,
            metrics.volume_iou_pct,
            metrics.near_ae_e4,
            metrics.near_iou_pct
        )?;
    }

    let mut manifest = RunManifest::new("metrics");
    manifest.put("efg", args.efg.display());
    manifest.put("reference", args.reference.describe());
    manifest.put("samples", args.samples);
    manifest.put("cd_samples", args.cd_samples);
    manifest.put("mc_cells", args.mc_res);
    manifest.put("seed", args.seed);
    manifest.put("cd_x1e3", cd * 1e3);
    manifest.put("volume_ae_x1e4", metrics.volume_ae_e4);
    manifest.put("volume_iou_pct", metrics.volume_iou_pct);
    manifest.put("near_ae_x1e4", metrics.near_ae_e4);
    manifest.put("near_iou_pct", metrics.near_iou_pct);
    manifest.put("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    let primary = args.csv.clone().unwrap_or_else(|| args.efg.with_extension("metrics"));
    manifest.write_to(&manifest_path(&args.manifest, &primary))?;
    Ok(())
}

/// Chamfer distance between surface samples of the extracted zero set and
/// surface samples of the reference shape.
pub fn chamfer_against_oracle(
    grid: &ParamGrid,
    oracle: &SdfOracle,
    mc_cells: u32,
    samples_per_side: usize,
    seed: u64,
) -> Result<f64> {
    use rand::SeedableRng;
    let extraction = marching_cubes(
        |pts| forward_streaming(grid, pts).expect("field evaluation").outputs().to_vec(),
        mc_cells,
    )?;
    if extraction.mesh.is_empty() {
        return Err(Error::Input("fitted field has no zero level set".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xcd);
    let ours = extraction.mesh.sample_surface(samples_per_side, &mut rng);
    let reference = oracle.sample_surface(samples_per_side, &mut rng);
    chamfer(&ours, &reference)
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[command(flatten)]
    source: ShapeSource,
    /// Highest frequency band B (bands 0..=B are stored)
    #[arg(long, default_value_t = 3)]
    bands: usize,
    /// Band lattice resolution
    #[arg(long, default_value_t = 16)]
    res: u32,
    /// Band polynomial degree
    #[arg(long, default_value_t = 1)]
    deg: u8,
    #[command(flatten)]
    train: TrainFlags,
    /// Output stack file
    #[arg(long, default_value = "stack.efgs")]
    out: PathBuf,
    /// Slice CSV of per-band and partial-sum fields on the z=0 plane
    #[arg(long)]
    slices: Option<PathBuf>,
    /// Slice sampling resolution per axis
    #[arg(long, default_value_t = 64)]
    slice_res: usize,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn cmd_decompose(args: DecomposeArgs) -> Result<()> {
    let started = Instant::now();
    let oracle = args.source.oracle()?;
    let band_cfg = parse_variant_flags("func-interp", args.deg, args.res, false, false)?;
    let train_cfg = args.train.build()?;

    let result = cosine_fit(&oracle, args.bands, &band_cfg, &train_cfg)?;
    efg::save_stack(result.stack.bands(), &args.out)?;

    if let Some(slices) = &args.slices {
        write_band_slices(&result.stack, slices, args.slice_res)?;
    }

    let mut manifest = RunManifest::new("decompose");
    manifest.put("input", args.source.describe());
    manifest.put("bands", args.bands);
    manifest.put("band_resolution", args.res);
    manifest.put("band_degree", args.deg);
    manifest.put("param_count", result.stack.param_count());
    TrainFlags::record(&train_cfg, &mut manifest);
    manifest.put("out", args.out.display());
    manifest.put("final_loss", result.final_loss);
    manifest.put("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    manifest.write_to(&manifest_path(&args.manifest, &args.out))?;

    println!(
        "decompose: {} bands, {} params, final loss {:.3e}, wrote {}",
        args.bands + 1,
        result.stack.param_count(),
        result.final_loss,
        args.out.display()
    );
    Ok(())
}

/// Sample each band's weighted contribution and the partial sums on the
/// z=0 slicing plane.
fn write_band_slices(stack: &CosineStack, path: &Path, res: usize) -> Result<()> {
    let n_bands = stack.bands().len();
    let mut points = Vec::with_capacity(res * res);
    for xi in 0..res {
        for yi in 0..res {
            let x = -1.0 + 2.0 * xi as f64 / (res - 1) as f64;
            let y = -1.0 + 2.0 * yi as f64 / (res - 1) as f64;
            points.push(Vec3::new(x, y, 0.0));
        }
    }
    let contributions: Vec<Vec<f64>> = (0..n_bands)
        .map(|b| band_contribution(stack, b, &points))
        .collect::<Result<_>>()?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "x,y")?;
    for b in 0..n_bands {
        write!(w, ",band{b}")?;
    }
    for b in 0..n_bands {
        write!(w, ",partial{b}")?;
    }
    writeln!(w)?;
    for (i, p) in points.iter().enumerate() {
        write!(w, "{},{}", p.x, p.y)?;
        for contribution in &contributions {
            write!(w, ",{}", contribution[i])?;
        }
        let mut partial = 0.0;
        for contribution in &contributions {
            partial += contribution[i];
            write!(w, ",{partial}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SpliceArgs {
    /// Grid providing the keys below the threshold
    #[arg(long)]
    a: PathBuf,
    /// Grid providing the keys at or above the threshold
    #[arg(long)]
    b: PathBuf,
    /// Splitting axis: x | y | z
    #[arg(long, default_value = "x")]
    axis: String,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long, default_value = "spliced.efg")]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn cmd_splice(args: SpliceArgs) -> Result<()> {
    let started = Instant::now();
    let a = efg::load(&args.a)?;
    let b = efg::load(&args.b)?;
    let axis = match args.axis.as_str() {
        "x" => 0,
        "y" => 1,
        "z" => 2,
        other => return Err(Error::config(format!("bad axis '{other}'"))),
    };
    let spliced = splice_grids(&a, &b, SplicePlane { axis, threshold: args.threshold })?;
    efg::save(&spliced, &args.out)?;

    let mut manifest = RunManifest::new("splice");
    manifest.put("a", args.a.display());
    manifest.put("b", args.b.display());
    manifest.put("axis", &args.axis);
    manifest.put("threshold", args.threshold);
    manifest.put("out", args.out.display());
    manifest.put("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    manifest.write_to(&manifest_path(&args.manifest, &args.out))?;

    println!("splice: wrote {}", args.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Lattice resolutions to time, comma-separated
    #[arg(long, default_value = "4,8,16,32", value_delimiter = ',')]
    res_list: Vec<u32>,
    #[arg(long, default_value_t = 16384)]
    queries: usize,
    #[arg(long, default_value = "combined")]
    variant: String,
    #[arg(long, default_value_t = 1)]
    deg: u8,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 99)]
    seed: u64,
    #[arg(long, default_value = "bench.csv")]
    csv: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn cmd_bench(args: BenchArgs) -> Result<()> {
    use polygrid::grid::InitSpec;
    use rand::Rng;
    use rand::SeedableRng;
    let started = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let mut rows = Vec::new();

    for &res in &args.res_list {
        let cfg = parse_variant_flags(&args.variant, args.deg, res, false, false)?;
        let grid = ParamGrid::init(cfg, &InitSpec { seed: args.seed, value_stddev: 0.1 })?;
        let queries: Vec<Vec3> = (0..args.queries)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let targets: Vec<f64> = queries.iter().map(|q| q.norm() - 0.5).collect();

        // steady-state transient workspace: the gradient buffer is a
        // persistent training allocation, so it lives outside the probe
        let mut grads = GradBuffer::for_grid(&grid);
        let warm = forward_streaming(&grid, &queries)?;
        let (_, upstream) = mse_loss(warm.outputs(), &targets)?;
        grads.clear();
        backward_into(&grid, &warm, &upstream, &mut grads)?;

        let (_, peak_bytes) = alloc_stats::measure_transient(|| -> Result<()> {
            let batch = forward_streaming(&grid, &queries)?;
            let (_, upstream) = mse_loss(batch.outputs(), &targets)?;
            grads.clear();
            backward_into(&grid, &batch, &upstream, &mut grads)?;
            Ok(())
        });

        let mut fwd_s = f64::INFINITY;
        let mut bwd_s = f64::INFINITY;
        for _ in 0..args.reps.max(1) {
            let t0 = Instant::now();
            let batch = forward_streaming(&grid, &queries)?;
            fwd_s = fwd_s.min(t0.elapsed().as_secs_f64());
            let (_, upstream) = mse_loss(batch.outputs(), &targets)?;
            let t0 = Instant::now();
            grads.clear();
            backward_into(&grid, &batch, &upstream, &mut grads)?;
            bwd_s = bwd_s.min(t0.elapsed().as_secs_f64());
        }

        let key_count = grid.key_count() * grid.banks().len();
        println!(
            "I={key_count:6} J={}: fwd {:8.3} ms, bwd {:8.3} ms, peak workspace {} bytes",
            args.queries,
            fwd_s * 1e3,
            bwd_s * 1e3,
            peak_bytes
        );
        rows.push((key_count, args.queries, fwd_s * 1e3, bwd_s * 1e3, peak_bytes));
    }

    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.csv)?);
    writeln!(w, "I,J,fwd_ms,bwd_ms,peak_bytes")?;
    for (i, j, fwd, bwd, peak) in &rows {
        writeln!(w, "{i},{j},{fwd},{bwd},{peak}")?;
    }
    drop(w);

    let mut manifest = RunManifest::new("bench");
    manifest.put("res_list", args.res_list.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(","));
    manifest.put("queries", args.queries);
    manifest.put("variant", &args.variant);
    manifest.put("degree", args.deg);
    manifest.put("reps", args.reps);
    manifest.put("seed", args.seed);
    manifest.put("csv", args.csv.display());
    manifest.put("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    manifest.write_to(&manifest_path(&args.manifest, &args.csv))?;
    Ok(())
}
