//! Effective stiffness of a unidirectional fiber composite.
//!
//! cargo run --release --example homogenize -- [n]

use muq::fft::{MicroSolver, SolverConfig};
use muq::microstructure::gen_single_fiber;
use muq::tensor::{extract_transverse_isotropic, MaterialParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(16);
    let matrix = MaterialParams::ENu { e: 3101.0, nu: 0.41 };
    let fiber = MaterialParams::ENu { e: 2.31e5, nu: 0.1 };

    let grid = gen_single_fiber(n, 0.6335)?;
    let t = std::time::Instant::now();
    let c = MicroSolver::new(n).homogenize(&grid, &matrix, &fiber, &SolverConfig::default())?;
    println!("{n}^3 grid, {:.2?}", t.elapsed());
    for i in 0..6 {
        let row: Vec<String> = (0..6).map(|j| format!("{:>11.4e}", c.get(i, j))).collect();
        println!("{}", row.join(" "));
    }

    let p = extract_transverse_isotropic(&c)?;
    println!(
        "E1 {:.1}  E2 {:.1}  G12 {:.1}  G23 {:.1}  nu12 {:.4}  nu23 {:.4}",
        p.e1, p.e2, p.g12, p.g23, p.nu12, p.nu23
    );
    Ok(())
}
