//! Trains a network surrogate and uses it inside the cubature, then checks
//! the result against a Monte Carlo run on the FFT solver.
//!
//! cargo run --release --example uq_surrogate -- [n_s] [epochs] [mc_samples] [properties]
//!
//! A poorly trained network can predict tensors that are not positive
//! definite; `raw_tensor` skips the engineering-constant extraction.

use std::sync::Arc;

use muq::ann::{evaluate, train, ArchParams, Topology, TrainConfig};
use muq::dataset::{generate, GenerateConfig, GridRecipe, MatrixBounds, SampleInputBounds, N_FEATURES};
use muq::fft::SolverConfig;
use muq::uq::{compare_results, run_mc, run_uq, PropertySet, Solver, UqConfig, UqInputs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let mut args = args.iter();
    let n_s: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(600);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let mc: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let properties: PropertySet = args.next().map(|s| s.parse()).transpose()?.unwrap_or(PropertySet::TransverseIso);
    let n = 8;

    // training ranges that cover the UQ inputs with some margin
    let bounds = SampleInputBounds {
        c_f: (0.5, 0.75),
        matrix: MatrixBounds::ENu {
            e: (2500.0, 3700.0),
            nu: (0.25, 0.48),
        },
        ..SampleInputBounds::example1()
    };
    let ds = generate(
        &bounds,
        &GenerateConfig {
            n_s,
            recipe: GridRecipe::fiber(n),
            base_seed: 2,
            solver: SolverConfig::default(),
            embed_grids: false,
        },
    )?;
    let [tr, va, te] = ds.split([0.8, 0.1, 0.1], 2)?;
    let (tr, va, te) = (tr.to_train_samples()?, va.to_train_samples()?, te.to_train_samples()?);
    let topo = Topology::alexnet_lite(n, N_FEATURES, 6, &ArchParams::default(), 0.0);
    let cfg = TrainConfig {
        max_epochs: epochs,
        batch_size: 16.min(tr.len() / 2),
        seed: 2,
        ..TrainConfig::default()
    };
    let net = train(&tr, &va, &topo, &cfg)?.net;
    println!("surrogate test error {:.2}%", 100.0 * evaluate(&net, &te)?);

    let uq = |solver| UqConfig {
        inputs: UqInputs::example1(),
        n_w: 6,
        n_pce: 5,
        recipe: GridRecipe::fiber(n),
        solver,
        properties,
        seed: 0,
        cdf_samples: 10_000,
        smooth_cdf: false,
    };
    let pce = run_uq(&uq(Solver::Ann(Arc::new(net))))?;
    let reference = run_mc(&uq(Solver::Fft(SolverConfig::default())), mc)?;
    println!(
        "network cubature: {} evaluations in {:.2}s; FFT Monte Carlo: {} solves in {:.1}s",
        pce.meta.solver_calls, pce.meta.wall_seconds, reference.meta.solver_calls, reference.meta.wall_seconds
    );
    for row in compare_results(&pce, &reference)? {
        println!(
            "{:<5} mean diff {:>6.2}%  std diff {:>6.1}%  KS {:.3}",
            row.name,
            100.0 * row.mean_rel_diff,
            100.0 * row.std_rel_diff,
            row.kolmogorov
        );
    }
    Ok(())
}
