//! Trains the convolutional surrogate on FFT labels and reports its error.
//!
//! cargo run --release --example train_surrogate -- [n_s] [epochs]
//!
//! The defaults (600 samples of 16³ cells) take a few minutes on one core.

use muq::ann::{evaluate, train, ArchParams, Network, Topology, TrainConfig};
use muq::dataset::{generate, GenerateConfig, GridRecipe, SampleInputBounds, N_FEATURES};
use muq::fft::SolverConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let mut args = args.iter();
    let n_s: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(600);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let n = 16;

    let ds = generate(
        &SampleInputBounds::example1(),
        &GenerateConfig {
            n_s,
            recipe: GridRecipe::fiber(n),
            base_seed: 1,
            solver: SolverConfig::default(),
            embed_grids: false,
        },
    )?;
    let [tr, va, te] = ds.split([0.8, 0.1, 0.1], 1)?;
    let (tr, va, te) = (tr.to_train_samples()?, va.to_train_samples()?, te.to_train_samples()?);

    let topo = Topology::alexnet_lite(n, N_FEATURES, 6, &ArchParams::default(), 0.0);
    let cfg = TrainConfig {
        max_epochs: epochs,
        batch_size: 16.min(tr.len() / 2),
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&tr, &va, &topo, &cfg)?;
    let last = out.log.last().unwrap();
    println!("{} epochs, final train loss {:.3e}, val loss {:.3e}", out.log.len(), last.train_loss, last.val_loss);
    println!("test mean relative error {:.2}%", 100.0 * evaluate(&out.net, &te)?);

    let path = std::env::temp_dir().join("muq_surrogate.muqm");
    out.net.save(&path)?;
    assert_eq!(Network::load(&path)?.params(), out.net.params());
    println!("checkpoint {}", path.display());
    Ok(())
}
