#![allow(dead_code)]

use muq::microstructure::VoxelGrid;
use muq::tensor::{MaterialParams, VoigtMatrix};
use nalgebra::{Matrix3, Matrix6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Layers normal to axis 1: voxels with `x < n·frac` are inclusion.
pub fn laminate(n: usize, frac: f64) -> VoxelGrid {
    let mut g = VoxelGrid::new(n).unwrap();
    let cut = (n as f64 * frac).round() as usize;
    for z in 0..n {
        for y in 0..n {
            for x in 0..cut {
                g.set(x, y, z, 1);
            }
        }
    }
    g
}

/// Exact stiffness of a laminate with normal along axis 1.
///
/// Traction components (σ11, σ13, σ12) are uniform across the layers and
/// so are the in-plane strains (ε22, ε33, γ23).
pub fn laminate_oracle(c_a: &VoigtMatrix, c_b: &VoigtMatrix, frac_b: f64) -> VoigtMatrix {
    const N: [usize; 3] = [0, 4, 5];
    const T: [usize; 3] = [1, 2, 3];
    let block = |c: &VoigtMatrix, r: [usize; 3], s: [usize; 3]| Matrix3::from_fn(|i, j| c.get(r[i], s[j]));
    let phases = [(c_a, 1.0 - frac_b), (c_b, frac_b)];
    let mut inv_nn = Matrix3::zeros();
    let mut inv_nt = Matrix3::zeros();
    for (c, w) in phases {
        let nn_inv = block(c, N, N).try_inverse().unwrap();
        inv_nn += w * nn_inv;
        inv_nt += w * nn_inv * block(c, N, T);
    }
    let a = inv_nn.try_inverse().unwrap();
    let mut out = Matrix6::zeros();
    for k in 0..6 {
        let mut e = [0.0; 6];
        e[k] = 1.0;
        let e_n = Vector3::new(e[N[0]], e[N[1]], e[N[2]]);
        let e_t = Vector3::new(e[T[0]], e[T[1]], e[T[2]]);
        let s_n = a * (e_n + inv_nt * e_t);
        let mut s_t = Vector3::zeros();
        for (c, w) in phases {
            let nn_inv = block(c, N, N).try_inverse().unwrap();
            let local_n = nn_inv * (s_n - block(c, N, T) * e_t);
            s_t += w * (block(c, T, N) * local_n + block(c, T, T) * e_t);
        }
        for i in 0..3 {
            out[(N[i], k)] = s_n[i];
            out[(T[i], k)] = s_t[i];
        }
    }
    VoigtMatrix(out)
}

pub fn max_rel_entry_error(a: &VoigtMatrix, b: &VoigtMatrix) -> f64 {
    let scale = b.0.amax();
    (a.0 - b.0).amax() / scale
}

pub fn stiffness(m: &MaterialParams) -> VoigtMatrix {
    m.stiffness().unwrap()
}

/// Grid with independently drawn voxels.
pub fn random_grid(n: usize, p: f64, seed: u64) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * n * n).map(|_| u8::from(rng.random::<f64>() < p)).collect();
    VoxelGrid::from_data(n, data).unwrap()
}
