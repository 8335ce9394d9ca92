//! Binary voxel unit cells: a centered long fiber and RSA sphere packings.
//!
//! Grids are stored x-fastest: voxel `(x, y, z)` lives at `x + n (y + n z)`,
//! and axis 1 of the mechanics is the x axis. Voxel membership is decided by
//! the voxel center.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::io::{read_u32, read_u8_vec, write_u32};

pub const GRID_MAGIC: &[u8; 4] = b"MUQG";
pub const GRID_VERSION: u32 = 1;

/// ChaCha stream used for sphere placement, kept apart from the stream that
/// draws sample inputs from the same seed.
pub const RSA_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum MicroError {
    #[error("volume fraction {0} out of range")]
    OutOfRange(f64),
    #[error("invalid RSA configuration: {0}")]
    InvalidConfig(String),
    #[error("RSA reached volume fraction {reached:.4} of target {target:.4} after {attempts} attempts")]
    TargetUnreachable {
        target: f64,
        reached: f64,
        attempts: usize,
    },
    #[error("grid needs n >= 2, got {0}")]
    BadSize(usize),
    #[error("corrupt grid file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cubic binary phase indicator (0 = matrix, 1 = inclusion).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    n: usize,
    data: Vec<u8>,
}

impl VoxelGrid {
    /// All-matrix grid.
    pub fn new(n: usize) -> Result<Self, MicroError> {
        if n < 2 {
            return Err(MicroError::BadSize(n));
        }
        Ok(VoxelGrid {
            n,
            data: vec![0; n * n * n],
        })
    }

    pub fn from_data(n: usize, data: Vec<u8>) -> Result<Self, MicroError> {
        if n < 2 {
            return Err(MicroError::BadSize(n));
        }
        if data.len() != n * n * n {
            return Err(MicroError::CorruptFile(format!(
                "expected {} voxels, got {}",
                n * n * n,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(MicroError::CorruptFile("phase indicator must be 0 or 1".into()));
        }
        Ok(VoxelGrid { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.n * (y + self.n * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, phase: u8) {
        let i = self.index(x, y, z);
        self.data[i] = phase.min(1);
    }

    /// Swaps matrix and inclusion labels.
    pub fn inverted(&self) -> VoxelGrid {
        VoxelGrid {
            n: self.n,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Periodic translation: voxel `(x, y, z)` moves to `(x + sx, y + sy, z + sz) mod n`.
    pub fn shifted(&self, shift: [usize; 3]) -> VoxelGrid {
        let n = self.n;
        let mut data = vec![0u8; self.data.len()];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    data[(x + shift[0]) % n + n * ((y + shift[1]) % n + n * ((z + shift[2]) % n))] =
                        self.data[self.index(x, y, z)];
                }
            }
        }
        VoxelGrid { n, data }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), MicroError> {
        w.write_all(GRID_MAGIC)?;
        write_u32(&mut w, GRID_VERSION)?;
        write_u32(&mut w, self.n as u32)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, MicroError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| MicroError::CorruptFile("missing magic".into()))?;
        if &magic != GRID_MAGIC {
            return Err(MicroError::CorruptFile("bad magic".into()));
        }
        let version = read_u32(&mut r).map_err(|_| MicroError::CorruptFile("truncated".into()))?;
        if version != GRID_VERSION {
            return Err(MicroError::CorruptFile(format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r).map_err(|_| MicroError::CorruptFile("truncated".into()))? as usize;
        if !(2..=2048).contains(&n) {
            return Err(MicroError::CorruptFile(format!("bad grid size {n}")));
        }
        let data = read_u8_vec(&mut r, n * n * n)
            .map_err(|_| MicroError::CorruptFile("truncated voxel payload".into()))?;
        VoxelGrid::from_data(n, data)
    }
}

/// Fraction of inclusion voxels.
pub fn volume_fraction(g: &VoxelGrid) -> f64 {
    let count = g.data.iter().filter(|&&v| v == 1).count();
    count as f64 / g.data.len() as f64
}

#[inline]
fn voxel_center(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

/// Cylinder of radius `sqrt(c_f / π)` along axis 1 through the cell center.
///
/// The cylinder is clipped at the cell faces, so for `c_f` close to one the
/// voxel volume fraction falls short of `c_f`.
pub fn gen_single_fiber(n: usize, c_f: f64) -> Result<VoxelGrid, MicroError> {
    if !(0.0..=1.0).contains(&c_f) {
        return Err(MicroError::OutOfRange(c_f));
    }
    let mut grid = VoxelGrid::new(n)?;
    let r2 = c_f / std::f64::consts::PI;
    if c_f == 0.0 {
        return Ok(grid);
    }
    for z in 0..n {
        let dz = voxel_center(z, n) - 0.5;
        for y in 0..n {
            let dy = voxel_center(y, n) - 0.5;
            if dy * dy + dz * dz <= r2 {
                for x in 0..n {
                    grid.set(x, y, z, 1);
                }
            }
        }
    }
    Ok(grid)
}

/// Random sequential adsorption settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsaConfig {
    /// Sphere radius as a fraction of the cell edge.
    pub sphere_radius: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for RsaConfig {
    fn default() -> Self {
        RsaConfig {
            sphere_radius: 0.1,
            max_attempts: 20_000,
            seed: 0,
        }
    }
}

impl RsaConfig {
    pub fn validate(&self) -> Result<(), MicroError> {
        if !(self.sphere_radius > 0.0 && self.sphere_radius < 0.5) {
            return Err(MicroError::InvalidConfig(format!(
                "sphere radius {} must lie in (0, 0.5)",
                self.sphere_radius
            )));
        }
        if self.max_attempts == 0 {
            return Err(MicroError::InvalidConfig("max_attempts must be > 0".into()));
        }
        Ok(())
    }
}

/// Voxel indices of a sphere with periodic wrap-around.
pub fn sphere_voxels(n: usize, center: [f64; 3], radius: f64) -> Vec<usize> {
    let h = 1.0 / n as f64;
    let r2 = radius * radius;
    let reach = (radius / h).ceil() as i64 + 1;
    let mut out = Vec::new();
    // voxel whose center is nearest the sphere center, per axis
    let base: [i64; 3] = std::array::from_fn(|d| (center[d] / h - 0.5).round() as i64);
    for dz in -reach..=reach {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let idx = [base[0] + dx, base[1] + dy, base[2] + dz];
                let mut d2 = 0.0;
                for d in 0..3 {
                    let c = (idx[d] as f64 + 0.5) * h;
                    let diff = c - center[d];
                    d2 += diff * diff;
                }
                if d2 <= r2 {
                    let w: [usize; 3] = std::array::from_fn(|d| idx[d].rem_euclid(n as i64) as usize);
                    out.push(w[0] + n * (w[1] + n * w[2]));
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Places non-overlapping spheres until the voxel volume fraction reaches `c_f`.
///
/// Candidates sharing any voxel with an already placed sphere are rejected.
/// The sequence of candidate centers is a pure function of `cfg.seed`.
pub fn gen_spheres_rsa(n: usize, c_f: f64, cfg: &RsaConfig) -> Result<VoxelGrid, MicroError> {
    if !(0.0..0.5).contains(&c_f) {
        return Err(MicroError::OutOfRange(c_f));
    }
    cfg.validate()?;
    let mut grid = VoxelGrid::new(n)?;
    if c_f == 0.0 {
        return Ok(grid);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(RSA_STREAM);
    let total = grid.len() as f64;
    let mut filled = 0usize;
    let mut attempts = 0usize;
    while (filled as f64) / total < c_f {
        if attempts >= cfg.max_attempts {
            let reached = filled as f64 / total;
            if reached < c_f - 0.02 {
                return Err(MicroError::TargetUnreachable {
                    target: c_f,
                    reached,
                    attempts,
                });
            }
            log::debug!("RSA stopped at {reached:.4} (target {c_f:.4}) after {attempts} attempts");
            break;
        }
        attempts += 1;
        let center = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let voxels = sphere_voxels(n, center, cfg.sphere_radius);
        if voxels.is_empty() || voxels.iter().any(|&i| grid.data[i] == 1) {
            continue;
        }
        for &i in &voxels {
            grid.data[i] = 1;
        }
        filled += voxels.len();
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent count of voxel centers inside the clipped cylinder.
    fn fiber_count_oracle(n: usize, c_f: f64) -> usize {
        let r = (c_f / std::f64::consts::PI).sqrt();
        let mut count = 0;
        for j in 0..n {
            for k in 0..n {
                let y = (2 * j + 1) as f64 / (2 * n) as f64;
                let z = (2 * k + 1) as f64 / (2 * n) as f64;
                if ((y - 0.5).powi(2) + (z - 0.5).powi(2)).sqrt() <= r {
                    count += 1;
                }
            }
        }
        count * n
    }

    #[test]
    fn empty_fiber() {
        let g = gen_single_fiber(16, 0.0).unwrap();
        assert_eq!(volume_fraction(&g), 0.0);
    }

    #[test]
    fn full_fiber_is_clipped() {
        let g = gen_single_fiber(16, 1.0).unwrap();
        let vf = volume_fraction(&g);
        let expected = fiber_count_oracle(16, 1.0) as f64 / 4096.0;
        assert_eq!(vf, expected);
        assert!(vf < 1.0);
        assert_eq!(g.get(0, 0, 0), 0);
        assert_eq!(g.get(0, 8, 8), 1);
    }

    #[test]
    fn example_one_fiber_fraction() {
        let g = gen_single_fiber(32, 0.6335).unwrap();
        let vf = volume_fraction(&g);
        assert_eq!(vf, fiber_count_oracle(32, 0.6335) as f64 / 32768.0);
        assert!((vf - 0.6335).abs() < 0.02, "vf = {vf}");
    }

    #[test]
    fn fiber_is_translation_invariant_along_axis_one() {
        let g = gen_single_fiber(12, 0.3).unwrap();
        for z in 0..12 {
            for y in 0..12 {
                let first = g.get(0, y, z);
                assert!((1..12).all(|x| g.get(x, y, z) == first));
            }
        }
    }

    #[test]
    fn fiber_converges_with_resolution() {
        for c in [0.1, 0.25, 0.4, 0.55, 0.7] {
            let vf = volume_fraction(&gen_single_fiber(64, c).unwrap());
            assert!((vf - c).abs() < 0.01, "c_f = {c}, vf = {vf}");
        }
    }

    #[test]
    fn fiber_rejects_bad_fraction() {
        assert!(matches!(gen_single_fiber(8, 1.1), Err(MicroError::OutOfRange(_))));
        assert!(matches!(gen_single_fiber(8, -0.1), Err(MicroError::OutOfRange(_))));
    }

    #[test]
    fn volume_fraction_basics() {
        let mut g = VoxelGrid::new(4).unwrap();
        assert_eq!(volume_fraction(&g), 0.0);
        assert_eq!(volume_fraction(&g.inverted()), 1.0);
        for i in 0..32 {
            g.data[i] = 1;
        }
        assert_eq!(volume_fraction(&g), 0.5);
    }

    #[test]
    fn rsa_zero_fraction() {
        let g = gen_spheres_rsa(16, 0.0, &RsaConfig::default()).unwrap();
        assert_eq!(volume_fraction(&g), 0.0);
    }

    #[test]
    fn rsa_reaches_target_deterministically() {
        let cfg = RsaConfig {
            sphere_radius: 0.1,
            seed: 7,
            ..RsaConfig::default()
        };
        let a = gen_spheres_rsa(32, 0.2, &cfg).unwrap();
        let b = gen_spheres_rsa(32, 0.2, &cfg).unwrap();
        assert_eq!(a, b);
        let vf = volume_fraction(&a);
        assert!((0.18..=0.24).contains(&vf), "vf = {vf}");
    }

    #[test]
    fn rsa_spheres_are_disjoint() {
        // replay the placement and check no voxel is claimed twice
        let cfg = RsaConfig {
            sphere_radius: 0.12,
            seed: 3,
            ..RsaConfig::default()
        };
        let n = 24;
        let grid = gen_spheres_rsa(n, 0.25, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(RSA_STREAM);
        let mut owner = vec![usize::MAX; n * n * n];
        let mut placed = 0;
        let mut filled = 0;
        while (filled as f64) / ((n * n * n) as f64) < 0.25 {
            let c = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let vox = sphere_voxels(n, c, cfg.sphere_radius);
            if vox.is_empty() || vox.iter().any(|&i| owner[i] != usize::MAX) {
                continue;
            }
            for &i in &vox {
                assert_eq!(owner[i], usize::MAX);
                owner[i] = placed;
            }
            placed += 1;
            filled += vox.len();
        }
        let replay: Vec<u8> = owner.iter().map(|&o| (o != usize::MAX) as u8).collect();
        assert_eq!(replay, grid.data);
        assert!(placed > 5);
    }

    #[test]
    fn rsa_wraps_periodically() {
        let vox = sphere_voxels(16, [0.0, 0.0, 0.0], 0.1);
        // a sphere centered on a corner touches all eight corner octants
        assert!(vox.contains(&0));
        assert!(vox.contains(&(15 + 16 * (15 + 16 * 15))));
    }

    #[test]
    fn rsa_unreachable_target() {
        let cfg = RsaConfig {
            sphere_radius: 0.2,
            max_attempts: 50,
            seed: 1,
        };
        assert!(matches!(
            gen_spheres_rsa(16, 0.45, &cfg),
            Err(MicroError::TargetUnreachable { .. })
        ));
    }

    #[test]
    fn rsa_rejects_bad_config() {
        let cfg = RsaConfig {
            sphere_radius: 0.6,
            ..RsaConfig::default()
        };
        assert!(matches!(
            gen_spheres_rsa(16, 0.1, &cfg),
            Err(MicroError::InvalidConfig(_))
        ));
        assert!(matches!(
            gen_spheres_rsa(16, 0.6, &RsaConfig::default()),
            Err(MicroError::OutOfRange(_))
        ));
    }

    #[test]
    fn grid_file_round_trip() {
        let g = gen_single_fiber(8, 0.4).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MUQG");
        assert_eq!(buf.len(), 12 + 512);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 8);
        assert_eq!(VoxelGrid::read_from(buf.as_slice()).unwrap(), g);

        assert!(matches!(
            VoxelGrid::read_from(&buf[..100]),
            Err(MicroError::CorruptFile(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            VoxelGrid::read_from(bad.as_slice()),
            Err(MicroError::CorruptFile(_))
        ));
    }
}
