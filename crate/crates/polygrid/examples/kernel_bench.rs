use polygrid::grid::{GridConfig, InitSpec, ParamGrid, Variant};
use polygrid::poly::Degree;
use polygrid::{backward_into, forward_streaming, mse_loss, GradBuffer};
use polygrid::vec3::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (res, j) in [(8u32, 32768usize), (16, 16384), (32, 16384)] {
        let cfg = GridConfig::new(Variant::Combined, Degree::D1, res);
        let grid = ParamGrid::init(cfg, &InitSpec::default()).unwrap();
        let queries: Vec<Vec3> = (0..j)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let targets: Vec<f64> = queries.iter().map(|q| q.norm() - 0.5).collect();
        let mut gbuf = GradBuffer::for_grid(&grid);
        // warmup
        let batch = forward_streaming(&grid, &queries).unwrap();
        let (_, upstream) = mse_loss(batch.outputs(), &targets).unwrap();
        backward_into(&grid, &batch, &upstream, &mut gbuf).unwrap();

        let reps = 5;
        let t0 = Instant::now();
        for _ in 0..reps {
            let _ = forward_streaming(&grid, &queries).unwrap();
        }
        let fwd = t0.elapsed().as_secs_f64() / reps as f64;
        let t0 = Instant::now();
        for _ in 0..reps {
            gbuf.clear();
            backward_into(&grid, &batch, &upstream, &mut gbuf).unwrap();
        }
        let bwd = t0.elapsed().as_secs_f64() / reps as f64;
        println!("R={res:2} I={:6} J={j}: fwd {:7.2} ms  bwd {:7.2} ms", 2*(res as usize).pow(3), fwd*1e3, bwd*1e3);
    }
}
