//! Labeled training data for the homogenization surrogate.
//!
//! Each sample pairs a microstructure recipe `(kind, c_f, grid_seed)` and
//! matrix/inclusion moduli with one unit macro strain; its label is the
//! resulting volume-averaged stress from the FFT solver. Samples are
//! generated strain-major (`n_s / 6` per strain state) and shuffled at the
//! end. Sample `k` draws its inputs from seed `base_seed + k`.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ann::TrainSample;
use crate::fft::{average_stress, FftError, MicroSolver, SolverConfig};
use crate::io::*;
use crate::microstructure::{gen_single_fiber, gen_spheres_rsa, MicroError, RsaConfig, VoxelGrid};
use crate::tensor::{unit_strain, MaterialParams, TensorError};

pub const DATASET_MAGIC: &[u8; 4] = b"MUQD";
pub const DATASET_VERSION: u32 = 1;

/// Stream used for the final row shuffle.
const SHUFFLE_STREAM: u64 = 3;

/// Length of the numeric network input: `ln K_M, ln G_M` and a one-hot strain state.
pub const N_FEATURES: usize = 8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("n_s = {0} must be a multiple of 6 so every strain state is equally represented")]
    NotMultipleOfSix(usize),
    #[error("sample {index} failed: {message}")]
    SampleFailed { index: usize, message: String },
    #[error("{failed} of {total} samples failed (first: sample {first}: {message})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: usize,
        message: String,
    },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("corrupt dataset file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Micro(#[from] MicroError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicroKind {
    Fiber,
    Spheres,
}

impl MicroKind {
    pub fn code(self) -> u8 {
        match self {
            MicroKind::Fiber => 0,
            MicroKind::Spheres => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(MicroKind::Fiber),
            1 => Some(MicroKind::Spheres),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MicroKind::Fiber => "fiber",
            MicroKind::Spheres => "spheres",
        }
    }
}

impl std::str::FromStr for MicroKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fiber" => Ok(MicroKind::Fiber),
            "spheres" => Ok(MicroKind::Spheres),
            other => Err(format!("unknown microstructure kind '{other}' (fiber|spheres)")),
        }
    }
}

/// Everything needed to rebuild a grid from `(c_f, seed)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRecipe {
    pub n: usize,
    pub kind: MicroKind,
    pub sphere_radius: f64,
    pub rsa_max_attempts: usize,
}

impl GridRecipe {
    pub fn fiber(n: usize) -> Self {
        GridRecipe {
            n,
            kind: MicroKind::Fiber,
            sphere_radius: RsaConfig::default().sphere_radius,
            rsa_max_attempts: RsaConfig::default().max_attempts,
        }
    }

    pub fn spheres(n: usize) -> Self {
        GridRecipe {
            kind: MicroKind::Spheres,
            ..GridRecipe::fiber(n)
        }
    }

    pub fn build(&self, c_f: f64, seed: u64) -> Result<VoxelGrid, MicroError> {
        match self.kind {
            MicroKind::Fiber => gen_single_fiber(self.n, c_f),
            MicroKind::Spheres => gen_spheres_rsa(
                self.n,
                c_f,
                &RsaConfig {
                    sphere_radius: self.sphere_radius,
                    max_attempts: self.rsa_max_attempts,
                    seed,
                },
            ),
        }
    }
}

/// Uniform sampling ranges of the matrix parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixBounds {
    ENu { e: (f64, f64), nu: (f64, f64) },
    KG { k: (f64, f64), g: (f64, f64) },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleInputBounds {
    pub c_f: (f64, f64),
    pub matrix: MatrixBounds,
    /// Fixed inclusion parameters.
    pub inclusion: MaterialParams,
}

impl SampleInputBounds {
    /// Fiber volume fraction in `[0, 1]`, `E_M ∈ [10³, 10⁴]` MPa,
    /// `ν_M ∈ [0.1, 0.48]`; inclusion `E = 2.31·10⁵` MPa, `ν = 0.1`.
    pub fn example1() -> Self {
        SampleInputBounds {
            c_f: (0.0, 1.0),
            matrix: MatrixBounds::ENu {
                e: (1e3, 1e4),
                nu: (0.1, 0.48),
            },
            inclusion: MaterialParams::ENu { e: 2.31e5, nu: 0.1 },
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let check = |name: &str, (lo, hi): (f64, f64), min: f64, max: f64, open: bool| {
            let inside = |v: f64| if open { v > min && v < max } else { v >= min && v <= max };
            if !(lo <= hi) || !inside(lo) || !inside(hi) {
                return Err(DatasetError::InvalidBounds(format!(
                    "{name} bounds [{lo}, {hi}] must be ordered and within {}{min}, {max}{}",
                    if open { "(" } else { "[" },
                    if open { ")" } else { "]" }
                )));
            }
            Ok(())
        };
        check("c_f", self.c_f, 0.0, 1.0, false)?;
        match self.matrix {
            MatrixBounds::ENu { e, nu } => {
                check("E_M", e, 0.0, f64::INFINITY, true)?;
                check("nu_M", nu, -1.0, 0.5, true)?;
                if nu.0 <= 0.0 {
                    return Err(DatasetError::InvalidBounds(format!(
                        "nu_M lower bound {} must be > 0",
                        nu.0
                    )));
                }
            }
            MatrixBounds::KG { k, g } => {
                check("K_M", k, 0.0, f64::INFINITY, true)?;
                check("G_M", g, 0.0, f64::INFINITY, true)?;
            }
        }
        self.inclusion
            .validate()
            .map_err(|e| DatasetError::InvalidBounds(format!("inclusion: {e}")))
    }
}

/// One labeled sample. Moduli are stored as bulk/shear pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub c_f: f64,
    pub k_m: f64,
    pub g_m: f64,
    pub k_i: f64,
    pub g_i: f64,
    /// Unit strain state, 1..=6.
    pub strain_index: u8,
    pub grid_seed: u64,
    /// Mean stress in MPa.
    pub label: [f64; 6],
}

impl Sample {
    pub fn mat_m(&self) -> MaterialParams {
        MaterialParams::KG {
            k: self.k_m,
            g: self.g_m,
        }
    }

    pub fn mat_i(&self) -> MaterialParams {
        MaterialParams::KG {
            k: self.k_i,
            g: self.g_i,
        }
    }

    /// Numeric network input `[ln K_M, ln G_M, one-hot strain state]`.
    pub fn features(&self) -> Vec<f64> {
        features(self.k_m, self.g_m, self.strain_index as usize)
    }
}

/// `[ln k_m, ln g_m, e_i]` with `e_i` the one-hot encoding of strain state `i` (1-based).
///
/// Stresses scale with the moduli, so logarithms keep that dependence
/// close to linear for the network.
pub fn features(k_m: f64, g_m: f64, strain_index: usize) -> Vec<f64> {
    let mut f = vec![0.0; N_FEATURES];
    f[0] = k_m.ln();
    f[1] = g_m.ln();
    f[1 + strain_index] = 1.0;
    f
}

/// Unlabeled sample inputs drawn from `base_seed + k`; the grid seed is the same value.
pub fn sample_inputs(
    bounds: &SampleInputBounds,
    k: usize,
    base_seed: u64,
) -> Result<Sample, DatasetError> {
    bounds.validate()?;
    let seed = base_seed.wrapping_add(k as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let c_f = uniform(bounds.c_f);
    let (k_m, g_m) = match bounds.matrix {
        MatrixBounds::ENu { e, nu } => {
            let m = MaterialParams::ENu {
                e: uniform(e),
                nu: uniform(nu),
            };
            m.to_kg().map_err(|e| DatasetError::InvalidBounds(e.to_string()))?
        }
        MatrixBounds::KG { k, g } => (uniform(k), uniform(g)),
    };
    let (k_i, g_i) = bounds
        .inclusion
        .to_kg()
        .map_err(|e| DatasetError::InvalidBounds(e.to_string()))?;
    Ok(Sample {
        c_f,
        k_m,
        g_m,
        k_i,
        g_i,
        strain_index: 0,
        grid_seed: seed,
        label: [0.0; 6],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub recipe: GridRecipe,
    pub samples: Vec<Sample>,
    /// Raw grids, one per sample, when embedded.
    pub grids: Option<Vec<VoxelGrid>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateConfig {
    pub n_s: usize,
    pub recipe: GridRecipe,
    pub base_seed: u64,
    pub solver: SolverConfig,
    pub embed_grids: bool,
}

#[derive(Debug)]
enum SampleFailure {
    Micro(MicroError),
    Solver(FftError),
    Tensor(TensorError),
}

impl std::fmt::Display for SampleFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleFailure::Micro(e) => write!(f, "{e}"),
            SampleFailure::Solver(e) => write!(f, "{e}"),
            SampleFailure::Tensor(e) => write!(f, "{e}"),
        }
    }
}

/// Labels one sample: builds its grid and solves for its strain state.
pub fn label_sample(
    solver: &MicroSolver,
    recipe: &GridRecipe,
    sample: &Sample,
    cfg: &SolverConfig,
) -> Result<([f64; 6], VoxelGrid), String> {
    label_inner(solver, recipe, sample, cfg).map_err(|e| e.to_string())
}

fn label_inner(
    solver: &MicroSolver,
    recipe: &GridRecipe,
    s: &Sample,
    cfg: &SolverConfig,
) -> Result<([f64; 6], VoxelGrid), SampleFailure> {
    let grid = recipe.build(s.c_f, s.grid_seed).map_err(SampleFailure::Micro)?;
    let eps = unit_strain(s.strain_index as usize).map_err(SampleFailure::Tensor)?;
    let field = solver
        .solve(&grid, &s.mat_m(), &s.mat_i(), &eps, cfg)
        .map_err(SampleFailure::Solver)?;
    let sigma = average_stress(&grid, &s.mat_m(), &s.mat_i(), &field).map_err(SampleFailure::Solver)?;
    Ok((sigma.0, grid))
}

/// Draws and labels `n_s` samples.
///
/// A sample whose grid or solve fails is redrawn from seed
/// `base_seed + k + r·n_s` (retry `r`), keeping every strain state equally
/// represented; generation aborts when more than 1% of the samples needed a
/// retry.
pub fn generate(
    bounds: &SampleInputBounds,
    cfg: &GenerateConfig,
) -> Result<Dataset, DatasetError> {
    if cfg.n_s % 6 != 0 {
        return Err(DatasetError::NotMultipleOfSix(cfg.n_s));
    }
    bounds.validate()?;
    if cfg.recipe.kind == MicroKind::Spheres && bounds.c_f.1 >= 0.5 {
        return Err(DatasetError::InvalidBounds(format!(
            "sphere packings need c_f < 0.5, upper bound is {}",
            bounds.c_f.1
        )));
    }
    cfg.solver
        .validate()
        .map_err(|e| DatasetError::InvalidBounds(e.to_string()))?;
    let per_state = cfg.n_s / 6;
    let solver = MicroSolver::new(cfg.recipe.n);
    const MAX_RETRIES: usize = 3;

    type Labeled = (Sample, VoxelGrid, usize, Option<(usize, String)>);
    let results: Vec<Result<Labeled, DatasetError>> = (0..cfg.n_s)
        .into_par_iter()
        .map(|k| {
            let strain = (k / per_state + 1) as u8;
            let mut first_failure = None;
            for r in 0..=MAX_RETRIES {
                let offset = k + r * cfg.n_s;
                let mut s = sample_inputs(bounds, offset, cfg.base_seed)?;
                s.strain_index = strain;
                match label_inner(&solver, &cfg.recipe, &s, &cfg.solver) {
                    Ok((label, grid)) => {
                        s.label = label;
                        return Ok((s, grid, r, first_failure));
                    }
                    Err(e) => {
                        log::warn!("sample {k} (attempt {r}) failed: {e}");
                        first_failure.get_or_insert((k, e.to_string()));
                    }
                }
            }
            let (index, message) = first_failure.unwrap();
            Err(DatasetError::SampleFailed { index, message })
        })
        .collect();

    let mut samples = Vec::with_capacity(cfg.n_s);
    let mut grids = Vec::with_capacity(if cfg.embed_grids { cfg.n_s } else { 0 });
    let mut retried = Vec::new();
    for res in results {
        let (s, g, retries, failure) = res?;
        if retries > 0 {
            retried.push(failure.unwrap());
        }
        samples.push(s);
        if cfg.embed_grids {
            grids.push(g);
        }
    }
    if retried.len() * 100 > cfg.n_s {
        let (first, message) = retried[0].clone();
        return Err(DatasetError::TooManyFailures {
            failed: retried.len(),
            total: cfg.n_s,
            first,
            message,
        });
    }
    if !retried.is_empty() {
        log::warn!("{} of {} samples were redrawn", retried.len(), cfg.n_s);
    }

    let mut order: Vec<usize> = (0..cfg.n_s).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed);
    rng.set_stream(SHUFFLE_STREAM);
    order.shuffle(&mut rng);
    let samples = order.iter().map(|&i| samples[i]).collect();
    let grids = cfg
        .embed_grids
        .then(|| order.iter().map(|&i| grids[i].clone()).collect());
    Ok(Dataset {
        recipe: cfg.recipe,
        samples,
        grids,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Histogram of strain states 1..=6.
    pub fn strain_histogram(&self) -> [usize; 6] {
        let mut h = [0; 6];
        for s in &self.samples {
            h[s.strain_index as usize - 1] += 1;
        }
        h
    }

    /// Grid of sample `i`, embedded or rebuilt from its recipe.
    pub fn grid(&self, i: usize) -> Result<VoxelGrid, DatasetError> {
        match &self.grids {
            Some(g) => Ok(g[i].clone()),
            None => Ok(self.recipe.build(self.samples[i].c_f, self.samples[i].grid_seed)?),
        }
    }

    /// Network examples `(features, grid, label)`; identical fiber grids are shared.
    pub fn to_train_samples(&self) -> Result<Vec<TrainSample>, DatasetError> {
        let grids: Vec<Arc<VoxelGrid>> = (0..self.len())
            .into_par_iter()
            .map(|i| self.grid(i).map(Arc::new))
            .collect::<Result<_, _>>()?;
        Ok(self
            .samples
            .iter()
            .zip(grids)
            .map(|(s, g)| TrainSample {
                numeric: s.features(),
                grid: Some(g),
                target: s.label.to_vec(),
            })
            .collect())
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            recipe: self.recipe,
            samples: idx.iter().map(|&i| self.samples[i]).collect(),
            grids: self
                .grids
                .as_ref()
                .map(|g| idx.iter().map(|&i| g[i].clone()).collect()),
        }
    }

    /// Seeded disjoint partition into train/validation/test.
    ///
    /// Train and validation sizes are `round(n · fraction)`; the test set takes the rest.
    pub fn split(&self, fractions: [f64; 3], seed: u64) -> Result<[Dataset; 3], DatasetError> {
        if fractions.iter().any(|f| !(*f >= 0.0))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(DatasetError::BadFractions(fractions));
        }
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((n as f64 * fractions[0]).round() as usize).min(n);
        let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
        Ok([
            self.subset(&order[..n_train]),
            self.subset(&order[n_train..n_train + n_val]),
            self.subset(&order[n_train + n_val..]),
        ])
    }

    /// Concatenation of two datasets on the same grid size, without embedded grids.
    pub fn merged(&self, other: &Dataset) -> Result<Vec<TrainSample>, DatasetError> {
        if self.recipe.n != other.recipe.n {
            return Err(DatasetError::InvalidBounds(format!(
                "grid sizes {} and {} differ",
                self.recipe.n, other.recipe.n
            )));
        }
        let mut a = self.to_train_samples()?;
        a.extend(other.to_train_samples()?);
        Ok(a)
    }

    /// Writes the `MUQD` file.
    ///
    /// Header: magic, version, `n_s`, `n`, kind, embed flag, sphere radius
    /// (f64) and RSA attempt limit (u32). Records follow in order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        let w = &mut w;
        w.write_all(DATASET_MAGIC)?;
        write_u32(w, DATASET_VERSION)?;
        write_u32(w, self.samples.len() as u32)?;
        write_u32(w, self.recipe.n as u32)?;
        write_u8(w, self.recipe.kind.code())?;
        write_u8(w, u8::from(self.grids.is_some()))?;
        write_f64(w, self.recipe.sphere_radius)?;
        write_u32(w, self.recipe.rsa_max_attempts as u32)?;
        for (i, s) in self.samples.iter().enumerate() {
            write_f64s(w, &[s.c_f, s.k_m, s.g_m, s.k_i, s.g_i])?;
            write_u8(w, s.strain_index)?;
            write_u64(w, s.grid_seed)?;
            write_f64s(w, &s.label)?;
            if let Some(g) = &self.grids {
                w.write_all(g[i].data())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Dataset, DatasetError> {
        let r = &mut r;
        let corrupt = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                DatasetError::CorruptFile("truncated file".into())
            } else {
                DatasetError::Io(e)
            }
        };
        let mut body = || -> std::io::Result<Result<Dataset, DatasetError>> {
            let mut magic = [0u8; 4];
            r.read_exact(&mut magic)?;
            if &magic != DATASET_MAGIC {
                return Ok(Err(DatasetError::CorruptFile("bad magic".into())));
            }
            let version = read_u32(r)?;
            if version != DATASET_VERSION {
                return Ok(Err(DatasetError::CorruptFile(format!(
                    "unsupported version {version}"
                ))));
            }
            let n_s = read_u32(r)? as usize;
            let n = read_u32(r)? as usize;
            let Some(kind) = MicroKind::from_code(read_u8(r)?) else {
                return Ok(Err(DatasetError::CorruptFile("unknown microstructure kind".into())));
            };
            let embed = match read_u8(r)? {
                0 => false,
                1 => true,
                v => return Ok(Err(DatasetError::CorruptFile(format!("bad embed flag {v}")))),
            };
            let recipe = GridRecipe {
                n,
                kind,
                sphere_radius: read_f64(r)?,
                rsa_max_attempts: read_u32(r)? as usize,
            };
            if n < 2 {
                return Ok(Err(DatasetError::CorruptFile(format!("grid size {n}"))));
            }
            let mut samples = Vec::with_capacity(n_s.min(1 << 20));
            let mut grids = Vec::new();
            for _ in 0..n_s {
                let v = read_f64_vec(r, 5)?;
                let strain_index = read_u8(r)?;
                if !(1..=6).contains(&strain_index) {
                    return Ok(Err(DatasetError::CorruptFile(format!(
                        "strain index {strain_index}"
                    ))));
                }
                let grid_seed = read_u64(r)?;
                let label = read_f64_vec(r, 6)?;
                samples.push(Sample {
                    c_f: v[0],
                    k_m: v[1],
                    g_m: v[2],
                    k_i: v[3],
                    g_i: v[4],
                    strain_index,
                    grid_seed,
                    label: label.try_into().unwrap(),
                });
                if embed {
                    let data = read_u8_vec(r, n * n * n)?;
                    match VoxelGrid::from_data(n, data) {
                        Ok(g) => grids.push(g),
                        Err(e) => return Ok(Err(DatasetError::CorruptFile(e.to_string()))),
                    }
                }
            }
            let mut probe = [0u8; 1];
            if r.read(&mut probe)? != 0 {
                return Ok(Err(DatasetError::CorruptFile("trailing bytes".into())));
            }
            Ok(Ok(Dataset {
                recipe,
                samples,
                grids: embed.then_some(grids),
            }))
        };
        body().map_err(corrupt)?
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DatasetError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Dataset, DatasetError> {
        Dataset::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
