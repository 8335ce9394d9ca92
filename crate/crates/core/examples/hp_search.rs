//! Random hyperparameter search over learning rate, L2 factor and layer sizes.
//!
//! cargo run --release --example hp_search -- [trials]

use muq::ann::{hp_random_search, HpSearchSpace, TopologyTemplate, TrainConfig};
use muq::dataset::{generate, GenerateConfig, GridRecipe, SampleInputBounds, N_FEATURES};
use muq::fft::SolverConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let trials: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let ds = generate(
        &SampleInputBounds::example1(),
        &GenerateConfig {
            n_s: 120,
            recipe: GridRecipe::fiber(8),
            base_seed: 5,
            solver: SolverConfig::default(),
            embed_grids: false,
        },
    )?;
    let [tr, va, _] = ds.split([0.8, 0.2, 0.0], 5)?;
    let (tr, va) = (tr.to_train_samples()?, va.to_train_samples()?);

    let space = HpSearchSpace {
        n_u: vec![32, 64, 128],
        n_f: vec![4, 8],
        n_l: vec![1, 2],
        trials,
        seed: 5,
        ..HpSearchSpace::default()
    };
    let base = TrainConfig {
        batch_size: 16,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let template = TopologyTemplate {
        grid_n: 8,
        n_numeric: N_FEATURES,
        n_out: 6,
    };
    let (best, all) = hp_random_search(&space, &base, &template, &tr, &va)?;
    for t in &all {
        println!(
            "trial {}: alpha {:.2e} lambda {:.2e} dropout {} {:?} -> {:?}",
            t.index, t.config.alpha, t.config.lambda_l2, t.config.beta_dropout, t.arch, t.outcome
        );
    }
    println!("best: trial {}", best.index);
    Ok(())
}
