//! Polynomial chaos of a closed-form model: quadrature, projection, moments, CDF.
//!
//! cargo run --release --example polynomial_chaos

use muq::pce::{
    cdf_table, gauss_hermite, moments, multi_indices, pseudospectral_fit, surrogate_eval, tensor_rule,
    InputDistribution,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(_args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let g = gauss_hermite(5)?;
    println!("5-point rule nodes {:.4?}", g.nodes);
    println!("             weights {:.4?}", g.weights);

    // Y = exp(0.5 θ1) + θ1 θ2 with two standard-normal germs
    let rule = tensor_rule(10, 2)?;
    let basis = multi_indices(2, 9)?;
    let s = pseudospectral_fit(
        |_, t: &[f64]| Ok::<_, String>(vec![(0.5 * t[0]).exp() + t[0] * t[1]]),
        &rule,
        &basis,
        vec!["Y".into()],
    )?;
    let (mean, var) = moments(&s);
    println!("{} nodes, {} basis terms", rule.n_q(), basis.len());
    println!("mean {:.8} (exact {:.8})", mean[0], 0.125f64.exp());
    println!("var  {:.8} (exact {:.8})", var[0], 0.25f64.exp() * (0.25f64.exp() - 1.0) + 1.0);
    println!("Y(1, -1) = {:.6}", surrogate_eval(&s, &[1.0, -1.0])?[0]);

    let germ = InputDistribution::untruncated(0.0, 1.0);
    let cdf = &cdf_table(&s, &[germ, germ], 20_000, 3, false)?[0];
    for p in [0.05, 0.5, 0.95] {
        println!("quantile {p}: {:.4}", cdf.quantile(p));
    }
    Ok(())
}
