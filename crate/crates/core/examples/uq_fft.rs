//! Uncertainty of the transversely isotropic constants of a fiber composite,
//! propagated with the FFT solver: polynomial chaos against Monte Carlo.
//!
//! cargo run --release --example uq_fft -- [n] [n_w] [mc_samples]

use muq::dataset::GridRecipe;
use muq::fft::SolverConfig;
use muq::uq::{compare_results, run_mc, run_uq, PropertySet, Solver, UqConfig, UqInputs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let mut args = args.iter();
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let n_w: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let mc: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);

    let cfg = UqConfig {
        inputs: UqInputs::example1(),
        n_w,
        n_pce: n_w - 1,
        recipe: GridRecipe::fiber(n),
        solver: Solver::Fft(SolverConfig::default()),
        properties: PropertySet::TransverseIso,
        seed: 0,
        cdf_samples: 10_000,
        smooth_cdf: false,
    };
    let pce = run_uq(&cfg)?;
    let mc = run_mc(&cfg, mc)?;
    println!(
        "pce: {} solves in {:.1}s, mc: {} solves in {:.1}s",
        pce.meta.solver_calls, pce.meta.wall_seconds, mc.meta.solver_calls, mc.meta.wall_seconds
    );
    println!("{:<5} {:>12} {:>12} {:>12} {:>12} {:>6}", "", "pce mean", "mc mean", "pce std", "mc std", "KS");
    for (o, row) in compare_results(&pce, &mc)?.iter().enumerate() {
        println!(
            "{:<5} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>6.3}",
            row.name, pce.mean[o], mc.mean[o], pce.std[o], mc.std[o], row.kolmogorov
        );
    }

    let dir = std::env::temp_dir();
    pce.write_csvs(&dir, "muq_pce")?;
    println!("tables in {}", dir.display());
    Ok(())
}
