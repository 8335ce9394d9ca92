//! Generates a small labeled dataset, saves it and splits it.
//!
//! cargo run --release --example dataset -- [n_s] [n]

use muq::dataset::{generate, Dataset, GenerateConfig, GridRecipe, SampleInputBounds};
use muq::fft::SolverConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let mut args = args.iter();
    let n_s: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(60);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);

    let cfg = GenerateConfig {
        n_s,
        recipe: GridRecipe::fiber(n),
        base_seed: 11,
        solver: SolverConfig::default(),
        embed_grids: false,
    };
    let t = std::time::Instant::now();
    let ds = generate(&SampleInputBounds::example1(), &cfg)?;
    println!("{} samples in {:.2?}, strain states {:?}", ds.len(), t.elapsed(), ds.strain_histogram());

    let s = &ds.samples[0];
    println!(
        "first: c_f={:.3} K_M={:.0} G_M={:.0} strain {} -> {:?}",
        s.c_f, s.k_m, s.g_m, s.strain_index, s.label.map(|v| v.round())
    );

    let path = std::env::temp_dir().join("muq_example.muqd");
    ds.save(&path)?;
    let back = Dataset::load(&path)?;
    assert_eq!(back, ds);

    let [train, val, test] = ds.split([0.8, 0.1, 0.1], 0)?;
    println!("split {} / {} / {}", train.len(), val.len(), test.len());
    Ok(())
}
