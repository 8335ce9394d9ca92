//! Times a full six-direction homogenization with the FFT solver and with an
//! (untrained) network of the same size; inference cost does not depend on
//! the weights.
//!
//! cargo run --release --example bench -- [sizes...]

use std::sync::Arc;

use muq::ann::{ArchParams, Network, Topology};
use muq::dataset::N_FEATURES;
use muq::fft::SolverConfig;
use muq::uq::{bench_timing, write_bench_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let mut sizes: Vec<usize> = args.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    if sizes.is_empty() {
        sizes = vec![16, 32];
    }
    let nets = sizes
        .iter()
        .map(|&n| {
            let topo = Topology::alexnet_lite(n, N_FEATURES, 6, &ArchParams::default(), 0.0);
            Network::init_glorot(topo, 0).map(Arc::new)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows = bench_timing(&sizes, &nets, true, &SolverConfig::default(), 3)?;
    write_bench_csv(std::io::stdout().lock(), &rows)?;
    Ok(())
}
