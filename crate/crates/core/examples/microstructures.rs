//! Builds the two microstructure families and writes one of them to disk.
//!
//! cargo run --release --example microstructures -- [n]

use muq::microstructure::{gen_single_fiber, gen_spheres_rsa, volume_fraction, RsaConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(32);

    for c_f in [0.1, 0.3, 0.6335, 0.9] {
        let g = gen_single_fiber(n, c_f)?;
        println!("fiber   c_f={c_f:<7} voxel fraction {:.4}", volume_fraction(&g));
    }

    let rsa = RsaConfig {
        sphere_radius: 0.12,
        seed: 7,
        ..RsaConfig::default()
    };
    for c_f in [0.05, 0.2, 0.35] {
        let g = gen_spheres_rsa(n, c_f, &rsa)?;
        println!("spheres c_f={c_f:<7} voxel fraction {:.4}", volume_fraction(&g));
    }

    let path = std::env::temp_dir().join("muq_fiber.muqg");
    gen_single_fiber(n, 0.6335)?.write_to(std::fs::File::create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
