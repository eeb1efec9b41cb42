//! Command-line frontend for the polygrid SDF toolkit.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical abort.

use clap::{Parser, Subcommand};
use polygrid::alloc_stats::TrackingAllocator;

mod commands;
mod manifest;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[derive(Parser)]
#[command(name = "polygrid", version, about = "Fit and evaluate polynomial-RBF distance fields")]
struct Cli {
    /// Worker threads for the parallel kernels (default: all cores).
    /// Results are identical for any worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a field to a shape and write the parameters as .efg
    Fit(commands::FitArgs),
    /// Extract a triangle mesh from a fitted .efg via marching cubes
    Mesh(commands::MeshArgs),
    /// Evaluate Chamfer/AE/IOU metrics of a fitted field
    Metrics(commands::MetricsArgs),
    /// Fit a cosine frequency stack and emit per-band slice data
    Decompose(commands::DecomposeArgs),
    /// Combine two fitted grids across an axis-aligned plane
    Splice(commands::SpliceArgs),
    /// Time the kernels and report transient workspace
    Bench(commands::BenchArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be at least 1");
            std::process::exit(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .expect("worker pool is configured once at startup");
    }

    let outcome = match cli.command {
        Command::Fit(args) => commands::cmd_fit(args),
        Command::Mesh(args) => commands::cmd_mesh(args),
        Command::Metrics(args) => commands::cmd_metrics(args),
        Command::Decompose(args) => commands::cmd_decompose(args),
        Command::Splice(args) => commands::cmd_splice(args),
        Command::Bench(args) => commands::cmd_bench(args),
    };

    match outcome {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                polygrid::Error::Numeric { .. } => 3,
                _ => 2,
            };
            std::process::exit(code);
        }
    }
}
