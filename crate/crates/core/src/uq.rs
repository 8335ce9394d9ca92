//! Propagation of input uncertainty to effective elastic properties.
//!
//! [`run_uq`] maps every tensor Gauss-Hermite node to physical inputs,
//! homogenizes the node's microstructure with the chosen solver, extracts
//! the requested properties and projects them onto a Hermite chaos.
//! [`run_mc`] is the sampling baseline, [`bench_timing`] compares solver
//! cost and [`compare_results`] reports distances between two results.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ann::Network;
use crate::dataset::{features, GridRecipe, N_FEATURES};
use crate::fft::{MicroSolver, SolverConfig};
use crate::microstructure::VoxelGrid;
use crate::pce::{
    self, moments, multi_indices, pseudospectral_fit, sample_germs, surrogate_eval, tensor_rule,
    write_cdf_csv, write_moments_csv, CdfTable, InputDistribution, PceError, PceSurrogate,
};
use crate::tensor::{
    extract_isotropic, extract_transverse_isotropic, MaterialParams, TransverseIsoProps, VoigtMatrix,
    VoigtVector,
};

#[derive(Debug, Error)]
pub enum UqError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("solver failed at {what} {index}: {message}")]
    SolverFailure {
        what: &'static str,
        index: usize,
        message: String,
    },
    #[error("results describe different properties: {0}")]
    PropertyMismatch(String),
    #[error(transparent)]
    Pce(#[from] PceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertySet {
    /// `E1, E2, G12, G23, nu12, nu23` with the fiber along axis 1.
    TransverseIso,
    /// `E, nu`.
    Iso,
    /// The 21 upper-triangle entries of the effective stiffness.
    RawTensor,
}

impl PropertySet {
    pub fn names(self) -> Vec<String> {
        match self {
            PropertySet::TransverseIso => TransverseIsoProps::NAMES.iter().map(|s| s.to_string()).collect(),
            PropertySet::Iso => vec!["E".into(), "nu".into()],
            PropertySet::RawTensor => {
                let mut v = Vec::with_capacity(21);
                for i in 1..=6 {
                    for j in i..=6 {
                        v.push(format!("C{i}{j}"));
                    }
                }
                v
            }
        }
    }

    pub fn extract(self, c: &VoigtMatrix) -> Result<Vec<f64>, String> {
        match self {
            PropertySet::TransverseIso => extract_transverse_isotropic(c)
                .map(|p| p.as_array().to_vec())
                .map_err(|e| e.to_string()),
            PropertySet::Iso => extract_isotropic(c)
                .map(|p| vec![p.e, p.nu])
                .map_err(|e| e.to_string()),
            PropertySet::RawTensor => Ok(c.upper_triangle()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PropertySet::TransverseIso => "transverse_iso",
            PropertySet::Iso => "iso",
            PropertySet::RawTensor => "raw_tensor",
        }
    }
}

impl std::str::FromStr for PropertySet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "transverse_iso" => Ok(PropertySet::TransverseIso),
            "iso" => Ok(PropertySet::Iso),
            "raw_tensor" => Ok(PropertySet::RawTensor),
            other => Err(format!(
                "unknown property set '{other}' (transverse_iso|iso|raw_tensor)"
            )),
        }
    }
}

/// Deterministic model evaluated at physical points.
#[derive(Debug, Clone)]
pub enum Solver {
    Fft(SolverConfig),
    Ann(Arc<Network>),
    /// A fitted surrogate of the properties, evaluated at the standard-normal germ.
    Pce(Arc<PceSurrogate>),
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Fft(_) => "fft",
            Solver::Ann(_) => "ann",
            Solver::Pce(_) => "pce",
        }
    }
}

/// Effective stiffness from a trained network: one prediction per unit
/// strain state, with the voxel branch evaluated once.
pub fn ann_homogenize(
    net: &Network,
    grid: &VoxelGrid,
    mat_m: &MaterialParams,
) -> Result<VoigtMatrix, String> {
    let (k, g) = mat_m.to_kg().map_err(|e| e.to_string())?;
    let inputs: Vec<Vec<f64>> = (1..=6).map(|i| features(k, g, i)).collect();
    let cols = net
        .forward_shared_grid(&inputs, Some(grid))
        .map_err(|e| e.to_string())?;
    let cols: [VoigtVector; 6] = std::array::from_fn(|i| VoigtVector(cols[i].clone().try_into().unwrap()));
    Ok(VoigtMatrix::from_columns(&cols).symmetrized())
}

/// Random inputs of a UQ run, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct UqInputs {
    pub c_f: InputDistribution,
    pub e_m: InputDistribution,
    pub nu_m: InputDistribution,
    pub inclusion: MaterialParams,
}

impl UqInputs {
    /// Fiber fraction `N(0.6335, 0.0264²)`, `E_M ~ N(3101, 111²)` MPa,
    /// `ν_M ~ N(0.41, 0.044²)`; inclusion `E = 2.31·10⁵` MPa, `ν = 0.1`.
    pub fn example1() -> Self {
        UqInputs {
            c_f: InputDistribution {
                mean: 0.6335,
                std: 0.0264,
                lo: 0.0,
                hi: 1.0,
            },
            e_m: InputDistribution {
                mean: 3101.0,
                std: 111.0,
                lo: 1.0,
                hi: f64::INFINITY,
            },
            nu_m: InputDistribution {
                mean: 0.41,
                std: 0.044,
                lo: 0.0,
                hi: 0.499,
            },
            inclusion: MaterialParams::ENu { e: 2.31e5, nu: 0.1 },
        }
    }

    /// Fiber fraction `N(0.2, 0.02²)`, `E_M ~ N(5000, 500²)` MPa, `ν_M ~ N(0.3, 0.03²)`.
    pub fn example2() -> Self {
        UqInputs {
            c_f: InputDistribution {
                mean: 0.2,
                std: 0.02,
                ..Self::example1().c_f
            },
            e_m: InputDistribution {
                mean: 5000.0,
                std: 500.0,
                ..Self::example1().e_m
            },
            nu_m: InputDistribution {
                mean: 0.3,
                std: 0.03,
                ..Self::example1().nu_m
            },
            inclusion: Self::example1().inclusion,
        }
    }

    pub fn all(&self) -> [InputDistribution; 3] {
        [self.c_f, self.e_m, self.nu_m]
    }

    pub const NAMES: [&'static str; 3] = ["c_f", "E_M", "nu_M"];

    /// Indices of inputs with nonzero spread; only these become germ dimensions.
    pub fn varying(&self) -> Vec<usize> {
        (0..3).filter(|&i| !self.all()[i].is_degenerate()).collect()
    }

    pub fn validate(&self) -> Result<(), UqError> {
        for (d, name) in self.all().iter().zip(Self::NAMES) {
            d.validate()
                .map_err(|e| UqError::InvalidConfig(format!("{name}: {e}")))?;
        }
        if self.c_f.lo < 0.0 || self.c_f.hi > 1.0 {
            return Err(UqError::InvalidConfig("c_f bounds must lie in [0, 1]".into()));
        }
        if self.e_m.lo <= 0.0 {
            return Err(UqError::InvalidConfig("E_M lower bound must be > 0".into()));
        }
        if self.nu_m.lo <= -1.0 || self.nu_m.hi >= 0.5 {
            return Err(UqError::InvalidConfig("nu_M bounds must lie in (-1, 0.5)".into()));
        }
        self.inclusion
            .validate()
            .map_err(|e| UqError::InvalidConfig(format!("inclusion: {e}")))
    }

    /// Physical point for germ `theta` (one entry per varying input), clamped
    /// into the truncation bounds. Also reports whether any input was clamped.
    pub fn map_germ(&self, theta: &[f64]) -> ([f64; 3], bool) {
        let all = self.all();
        let mut x = [all[0].mean, all[1].mean, all[2].mean];
        let mut clamped = false;
        for (&i, &t) in self.varying().iter().zip(theta) {
            let v = all[i].map(t);
            let c = all[i].clamp(v);
            clamped |= c != v;
            x[i] = c;
        }
        (x, clamped)
    }
}

#[derive(Debug, Clone)]
pub struct UqConfig {
    pub inputs: UqInputs,
    pub n_w: usize,
    pub n_pce: usize,
    pub recipe: GridRecipe,
    pub solver: Solver,
    pub properties: PropertySet,
    pub seed: u64,
    /// Surrogate samples behind each CDF table.
    pub cdf_samples: usize,
    pub smooth_cdf: bool,
}

impl UqConfig {
    pub fn validate(&self) -> Result<(), UqError> {
        self.inputs.validate()?;
        if !(1..=50).contains(&self.n_w) {
            return Err(UqError::InvalidConfig(format!("n_w = {} outside 1..=50", self.n_w)));
        }
        if self.n_pce + 1 > self.n_w {
            log::warn!(
                "n_pce = {} exceeds n_w - 1 = {}; high-order coefficients will alias",
                self.n_pce,
                self.n_w - 1
            );
        }
        if self.cdf_samples < 1000 {
            return Err(UqError::InvalidConfig("cdf_samples must be >= 1000".into()));
        }
        if self.recipe.kind == crate::dataset::MicroKind::Spheres && self.inputs.c_f.hi >= 0.5 {
            return Err(UqError::InvalidConfig(
                "sphere packings need an upper c_f bound below 0.5".into(),
            ));
        }
        match &self.solver {
            Solver::Fft(cfg) => cfg
                .validate()
                .map_err(|e| UqError::InvalidConfig(e.to_string()))?,
            Solver::Ann(net) => {
                let t = net.topology();
                if t.grid_n != self.recipe.n || t.n_numeric != N_FEATURES || net.n_out() != 6 {
                    return Err(UqError::InvalidConfig(format!(
                        "network expects {}³ grids, {} features and {} outputs; run needs {}³, {N_FEATURES}, 6",
                        t.grid_n,
                        t.n_numeric,
                        net.n_out(),
                        self.recipe.n
                    )));
                }
            }
            Solver::Pce(s) => {
                if s.basis().n_x() != self.inputs.varying().len().max(1)
                    || s.labels() != self.properties.names().as_slice()
                {
                    return Err(UqError::InvalidConfig(
                        "surrogate dimension or outputs do not match the run".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqMeta {
    pub solver_calls: usize,
    pub wall_seconds: f64,
    pub solver: String,
    /// Cubature weight of nodes with at least one clamped input.
    pub clamped_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqResult {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub cdfs: Vec<CdfTable>,
    pub meta: UqMeta,
    pub surrogate: Option<PceSurrogate>,
}

impl UqResult {
    /// Writes `<prefix>_moments.csv` and `<prefix>_cdf.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path, prefix: &str) -> Result<(), UqError> {
        let mut m = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{prefix}_moments.csv")))?);
        write_moments_csv(&mut m, &self.names, &self.mean, &self.std)?;
        m.flush()?;
        let mut c = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{prefix}_cdf.csv")))?);
        write_cdf_csv(&mut c, &self.cdfs)?;
        c.flush()?;
        Ok(())
    }
}

/// Evaluates the configured model at physical point `x = [c_f, E_M, ν_M]`.
fn evaluate_point(
    cfg: &UqConfig,
    fft: Option<&MicroSolver>,
    x: [f64; 3],
    germ: &[f64],
    grid_seed: u64,
) -> Result<Vec<f64>, String> {
    if let Solver::Pce(s) = &cfg.solver {
        let theta = if germ.is_empty() { vec![0.0] } else { germ.to_vec() };
        return surrogate_eval(s, &theta).map_err(|e| e.to_string());
    }
    let grid = cfg.recipe.build(x[0], grid_seed).map_err(|e| e.to_string())?;
    let mat_m = MaterialParams::ENu { e: x[1], nu: x[2] };
    let c = match &cfg.solver {
        Solver::Fft(scfg) => fft
            .expect("fft solver prepared")
            .homogenize(&grid, &mat_m, &cfg.inputs.inclusion, scfg)
            .map_err(|e| e.to_string())?,
        Solver::Ann(net) => ann_homogenize(net, &grid, &mat_m)?,
        Solver::Pce(_) => unreachable!(),
    };
    cfg.properties.extract(&c)
}

fn germ_distributions(inputs: &UqInputs) -> Vec<InputDistribution> {
    let all = inputs.all();
    inputs.varying().iter().map(|&i| all[i]).collect()
}

fn point_result(cfg: &UqConfig, values: Vec<f64>, wall: f64) -> UqResult {
    let names = cfg.properties.names();
    let cdfs = names
        .iter()
        .zip(&values)
        .map(|(n, &v)| CdfTable {
            name: n.clone(),
            points: vec![(v, 1.0)],
        })
        .collect();
    UqResult {
        std: vec![0.0; values.len()],
        mean: values,
        names,
        cdfs,
        meta: UqMeta {
            solver_calls: 1,
            wall_seconds: wall,
            solver: cfg.solver.name().into(),
            clamped_mass: 0.0,
        },
        surrogate: None,
    }
}

/// Pseudospectral PCE of the requested properties.
///
/// Node `j` uses microstructure seed `cfg.seed + j`. With no varying input
/// the model is evaluated once and the variance is exactly zero.
pub fn run_uq(cfg: &UqConfig) -> Result<UqResult, UqError> {
    cfg.validate()?;
    let start = Instant::now();
    let fft = matches!(cfg.solver, Solver::Fft(_)).then(|| MicroSolver::new(cfg.recipe.n));
    let varying = cfg.inputs.varying();
    if varying.is_empty() {
        let (x, _) = cfg.inputs.map_germ(&[]);
        let v = evaluate_point(cfg, fft.as_ref(), x, &[], cfg.seed).map_err(|message| {
            UqError::SolverFailure {
                what: "node",
                index: 0,
                message,
            }
        })?;
        return Ok(point_result(cfg, v, start.elapsed().as_secs_f64()));
    }
    let n_x = varying.len();
    let rule = tensor_rule(cfg.n_w, n_x)?;
    let basis = multi_indices(n_x, cfg.n_pce)?;
    let mut clamped_mass = 0.0;
    for j in 0..rule.n_q() {
        if cfg.inputs.map_germ(rule.node(j)).1 {
            clamped_mass += rule.weights()[j];
        }
    }
    if clamped_mass > 1e-3 {
        log::warn!("{:.3}% of the cubature mass was clamped into the input bounds", 100.0 * clamped_mass);
    }
    let names = cfg.properties.names();
    let surrogate = pseudospectral_fit(
        |j, theta: &[f64]| {
            let (x, _) = cfg.inputs.map_germ(theta);
            evaluate_point(cfg, fft.as_ref(), x, theta, cfg.seed.wrapping_add(j as u64))
        },
        &rule,
        &basis,
        names.clone(),
    )
    .map_err(|e| match e {
        PceError::ModelFailure { node, message } => UqError::SolverFailure {
            what: "node",
            index: node,
            message,
        },
        other => UqError::Pce(other),
    })?;
    let (mean, var) = moments(&surrogate);
    let cdfs = pce::cdf_table(
        &surrogate,
        &germ_distributions(&cfg.inputs),
        cfg.cdf_samples,
        cfg.seed,
        cfg.smooth_cdf,
    )?;
    Ok(UqResult {
        names,
        mean,
        std: var.iter().map(|v| v.max(0.0).sqrt()).collect(),
        cdfs,
        meta: UqMeta {
            solver_calls: rule.n_q(),
            wall_seconds: start.elapsed().as_secs_f64(),
            solver: cfg.solver.name().into(),
            clamped_mass,
        },
        surrogate: Some(surrogate),
    })
}

/// Monte Carlo with truncated-normal inputs (rejection sampling).
///
/// Sample `s` uses microstructure seed `cfg.seed + s`; germs come from
/// [`sample_germs`] seeded with `cfg.seed`.
pub fn run_mc(cfg: &UqConfig, n_samples: usize) -> Result<UqResult, UqError> {
    cfg.validate()?;
    if n_samples < 2 {
        return Err(UqError::InvalidConfig("Monte Carlo needs at least 2 samples".into()));
    }
    let start = Instant::now();
    let fft = matches!(cfg.solver, Solver::Fft(_)).then(|| MicroSolver::new(cfg.recipe.n));
    let germs = sample_germs(&germ_distributions(&cfg.inputs), n_samples, cfg.seed);
    let values: Vec<Vec<f64>> = germs
        .par_iter()
        .enumerate()
        .map(|(s, theta)| {
            let (x, _) = cfg.inputs.map_germ(theta);
            evaluate_point(cfg, fft.as_ref(), x, theta, cfg.seed.wrapping_add(s as u64)).map_err(
                |message| UqError::SolverFailure {
                    what: "sample",
                    index: s,
                    message,
                },
            )
        })
        .collect::<Result<_, _>>()?;
    let names = cfg.properties.names();
    let n = n_samples as f64;
    let mut mean = vec![0.0; names.len()];
    let mut std = vec![0.0; names.len()];
    let mut cdfs = Vec::with_capacity(names.len());
    for (o, name) in names.iter().enumerate() {
        let col: Vec<f64> = values.iter().map(|v| v[o]).collect();
        let m = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        mean[o] = m;
        std[o] = var.sqrt();
        cdfs.push(if cfg.smooth_cdf {
            CdfTable::smoothed(name, &col)
        } else {
            CdfTable::empirical(name, &col)
        });
    }
    Ok(UqResult {
        names,
        mean,
        std,
        cdfs,
        meta: UqMeta {
            solver_calls: n_samples,
            wall_seconds: start.elapsed().as_secs_f64(),
            solver: cfg.solver.name().into(),
            clamped_mass: 0.0,
        },
        surrogate: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub fft_seconds: Option<f64>,
    pub ann_seconds: Option<f64>,
}

impl BenchRow {
    pub fn ratio(&self) -> Option<f64> {
        Some(self.fft_seconds? / self.ann_seconds?)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time over `repetitions` of `f`.
pub fn time_median<F: FnMut()>(repetitions: usize, mut f: F) -> f64 {
    let times = (0..repetitions.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(times)
}

/// Median time of a full six-direction homogenization of a single-fiber cell
/// (`c_f = 0.6335`, matrix `E = 3101` MPa, `ν = 0.41`) per grid size.
///
/// `nets` supplies a network per size; sizes without one get no network
/// timing, and `with_fft = false` skips the FFT column.
pub fn bench_timing(
    sizes: &[usize],
    nets: &[Arc<Network>],
    with_fft: bool,
    solver: &SolverConfig,
    repetitions: usize,
) -> Result<Vec<BenchRow>, UqError> {
    let inputs = UqInputs::example1();
    let mat_m = MaterialParams::ENu {
        e: inputs.e_m.mean,
        nu: inputs.nu_m.mean,
    };
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let grid = crate::microstructure::gen_single_fiber(n, inputs.c_f.mean)
            .map_err(|e| UqError::InvalidConfig(e.to_string()))?;
        let fft_seconds = if with_fft {
            let s = MicroSolver::new(n);
            let mut failure = None;
            let t = time_median(repetitions, || {
                if let Err(e) = s.homogenize(&grid, &mat_m, &inputs.inclusion, solver) {
                    failure = Some(e.to_string());
                }
            });
            if let Some(message) = failure {
                return Err(UqError::SolverFailure {
                    what: "grid size",
                    index: n,
                    message,
                });
            }
            Some(t)
        } else {
            None
        };
        let ann_seconds = match nets.iter().find(|net| net.topology().grid_n == n) {
            Some(net) => {
                let mut failure = None;
                let t = time_median(repetitions, || {
                    if let Err(e) = ann_homogenize(net, &grid, &mat_m) {
                        failure = Some(e);
                    }
                });
                if let Some(message) = failure {
                    return Err(UqError::SolverFailure {
                        what: "grid size",
                        index: n,
                        message,
                    });
                }
                Some(t)
            }
            None => None,
        };
        rows.push(BenchRow {
            n,
            fft_seconds,
            ann_seconds,
        });
    }
    Ok(rows)
}

/// `size,fft_seconds,ann_seconds,ratio`; absent entries are empty.
pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    writeln!(w, "size,fft_seconds,ann_seconds,ratio")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.n, opt(r.fft_seconds), opt(r.ann_seconds), opt(r.ratio()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub mean_rel_diff: f64,
    pub std_rel_diff: f64,
    /// Largest CDF gap over the merged support.
    pub kolmogorov: f64,
}

/// `|a − b| / min(|a|, |b|)`, zero when both vanish.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().min(b.abs())
    }
}

/// Largest `|F_a − F_b|` over the union of both tables' support points.
pub fn kolmogorov_distance(a: &CdfTable, b: &CdfTable) -> f64 {
    a.points
        .iter()
        .chain(&b.points)
        .map(|&(x, _)| (a.eval(x) - b.eval(x)).abs())
        .fold(0.0, f64::max)
}

pub fn compare_results(a: &UqResult, b: &UqResult) -> Result<Vec<ComparisonRow>, UqError> {
    if a.names != b.names {
        return Err(UqError::PropertyMismatch(format!(
            "{:?} vs {:?}",
            a.names, b.names
        )));
    }
    Ok((0..a.names.len())
        .map(|o| ComparisonRow {
            name: a.names[o].clone(),
            mean_rel_diff: rel_diff(a.mean[o], b.mean[o]),
            std_rel_diff: rel_diff(a.std[o], b.std[o]),
            kolmogorov: kolmogorov_distance(&a.cdfs[o], &b.cdfs[o]),
        })
        .collect())
}

/// `output_name,mean_rel_diff,std_rel_diff,kolmogorov`.
pub fn write_comparison_csv<W: Write>(mut w: W, rows: &[ComparisonRow]) -> std::io::Result<()> {
    writeln!(w, "output_name,mean_rel_diff,std_rel_diff,kolmogorov")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.name, r.mean_rel_diff, r.std_rel_diff, r.kolmogorov)?;
    }
    Ok(())
}

/// Reads the two CSV tables written by [`UqResult::write_csvs`].
pub fn read_result_csvs(dir: &Path, prefix: &str) -> Result<UqResult, UqError> {
    let bad = |m: String| UqError::InvalidConfig(m);
    let moments_text = std::fs::read_to_string(dir.join(format!("{prefix}_moments.csv")))?;
    let mut names = Vec::new();
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for (i, line) in moments_text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(format!("moments line {}: expected 3 fields", i + 1)));
        }
        names.push(f[0].to_string());
        mean.push(f[1].parse().map_err(|_| bad(format!("moments line {}: bad mean", i + 1)))?);
        std.push(f[2].parse().map_err(|_| bad(format!("moments line {}: bad std", i + 1)))?);
    }
    let cdf_text = std::fs::read_to_string(dir.join(format!("{prefix}_cdf.csv")))?;
    let mut cdfs: Vec<CdfTable> = names
        .iter()
        .map(|n| CdfTable {
            name: n.clone(),
            points: Vec::new(),
        })
        .collect();
    for (i, line) in cdf_text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(format!("cdf line {}: expected 3 fields", i + 1)));
        }
        let Some(t) = cdfs.iter_mut().find(|t| t.name == f[0]) else {
            return Err(bad(format!("cdf line {}: unknown output {}", i + 1, f[0])));
        };
        let v = f[1].parse().map_err(|_| bad(format!("cdf line {}: bad value", i + 1)))?;
        let p = f[2].parse().map_err(|_| bad(format!("cdf line {}: bad cdf", i + 1)))?;
        t.points.push((v, p));
    }
    Ok(UqResult {
        names,
        mean,
        std,
        cdfs,
        meta: UqMeta {
            solver_calls: 0,
            wall_seconds: 0.0,
            solver: String::new(),
            clamped_mass: 0.0,
        },
        surrogate: None,
    })
}

/// Flat `key=value` run record, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Hex SHA-256 of the given configuration text.
    pub fn hash_config(text: &str) -> String {
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "{k}={v}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fft_cfg(inputs: UqInputs, n_w: usize, n_pce: usize) -> UqConfig {
        UqConfig {
            inputs,
            n_w,
            n_pce,
            recipe: GridRecipe::fiber(8),
            solver: Solver::Fft(SolverConfig::default()),
            properties: PropertySet::TransverseIso,
            seed: 3,
            cdf_samples: 2000,
            smooth_cdf: false,
        }
    }

    fn frozen(mut i: UqInputs) -> UqInputs {
        i.c_f.std = 0.0;
        i.e_m.std = 0.0;
        i.nu_m.std = 0.0;
        i
    }

    #[test]
    fn degenerate_inputs_give_the_deterministic_solve() {
        let cfg = fft_cfg(frozen(UqInputs::example1()), 4, 3);
        let r = run_uq(&cfg).unwrap();
        assert_eq!(r.meta.solver_calls, 1);
        assert!(r.std.iter().all(|&s| s == 0.0));
        let grid = crate::microstructure::gen_single_fiber(8, 0.6335).unwrap();
        let c = crate::fft::homogenize(
            &grid,
            &MaterialParams::ENu { e: 3101.0, nu: 0.41 },
            &cfg.inputs.inclusion,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(r.mean, PropertySet::TransverseIso.extract(&c).unwrap());

        let mc = run_mc(&cfg, 5).unwrap();
        assert!(mc.std.iter().all(|&s| s == 0.0));
        assert_eq!(mc.mean, r.mean);
        assert_eq!(mc.cdfs[0].points.len(), 5);
    }

    #[test]
    fn node_count_and_reproducibility() {
        let mut inputs = UqInputs::example1();
        inputs.nu_m.std = 0.0;
        let cfg = fft_cfg(inputs, 3, 2);
        let a = run_uq(&cfg).unwrap();
        assert_eq!(a.meta.solver_calls, 9);
        let b = run_uq(&cfg).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.std, b.std);
        assert_eq!(a.cdfs, b.cdfs);
        assert!(a.std.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn clamping_metric_shrinks_with_wider_bounds() {
        let mut narrow = UqInputs::example1();
        narrow.c_f.lo = 0.60;
        narrow.c_f.hi = 0.66;
        let mut wide = narrow.clone();
        wide.c_f.lo = 0.55;
        wide.c_f.hi = 0.72;
        let mass = |inputs: &UqInputs| {
            let rule = tensor_rule(10, inputs.varying().len()).unwrap();
            (0..rule.n_q())
                .filter(|&j| inputs.map_germ(rule.node(j)).1)
                .map(|j| rule.weights()[j])
                .sum::<f64>()
        };
        assert!(mass(&wide) <= mass(&narrow));
        assert!(mass(&narrow) > 0.0);
    }

    #[test]
    fn pce_solver_reproduces_its_own_moments() {
        let rule = tensor_rule(4, 2).unwrap();
        let basis = multi_indices(2, 3).unwrap();
        let s = pseudospectral_fit(
            |_, t: &[f64]| Ok::<_, String>(vec![1.0 + 0.5 * t[0] - 0.2 * t[0] * t[1], 2.0 + t[1]]),
            &rule,
            &basis,
            vec!["E".into(), "nu".into()],
        )
        .unwrap();
        let mut inputs = UqInputs::example2();
        inputs.nu_m.std = 0.0;
        let cfg = UqConfig {
            solver: Solver::Pce(Arc::new(s.clone())),
            properties: PropertySet::Iso,
            ..fft_cfg(inputs, 4, 3)
        };
        let mc = run_mc(&cfg, 100_000).unwrap();
        let (mean, var) = moments(&s);
        for o in 0..2 {
            let se = (var[o] / 100_000.0).sqrt();
            assert!((mc.mean[o] - mean[o]).abs() < 3.0 * se, "output {o}");
        }
    }

    #[test]
    fn comparisons() {
        let table = |name: &str, xs: &[f64]| CdfTable::empirical(name, xs);
        let res = |mean: f64, std: f64, xs: &[f64]| UqResult {
            names: vec!["E".into()],
            mean: vec![mean],
            std: vec![std],
            cdfs: vec![table("E", xs)],
            meta: UqMeta {
                solver_calls: 0,
                wall_seconds: 0.0,
                solver: "fft".into(),
                clamped_mass: 0.0,
            },
            surrogate: None,
        };
        let a = res(2.0, 1.0, &[1.0, 2.0, 3.0, 4.0]);
        let same = compare_results(&a, &a).unwrap();
        assert_eq!(same[0].mean_rel_diff, 0.0);
        assert_eq!(same[0].std_rel_diff, 0.0);
        assert_eq!(same[0].kolmogorov, 0.0);

        let b = res(2.1, 1.0, &[1.5, 2.5, 3.5, 4.5]);
        let r = compare_results(&a, &b).unwrap();
        assert!((r[0].mean_rel_diff - 0.05).abs() < 1e-12);
        // brute force on a fine grid spanning both supports
        let brute = (0..=1000)
            .map(|i| {
                let x = 0.5 + 5.0 * i as f64 / 1000.0;
                (a.cdfs[0].eval(x) - b.cdfs[0].eval(x)).abs()
            })
            .fold(0.0, f64::max);
        assert_eq!(r[0].kolmogorov, brute);
        assert_eq!(r, compare_results(&b, &a).unwrap());

        let mut c = a.clone();
        c.names = vec!["nu".into()];
        assert!(matches!(compare_results(&a, &c), Err(UqError::PropertyMismatch(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = UqResult {
            names: vec!["E1".into(), "E2".into()],
            mean: vec![1.5, 2.5],
            std: vec![0.1, 0.2],
            cdfs: vec![
                CdfTable::empirical("E1", &[1.0, 2.0]),
                CdfTable::empirical("E2", &[2.0, 3.0, 2.5]),
            ],
            meta: UqMeta {
                solver_calls: 0,
                wall_seconds: 0.0,
                solver: String::new(),
                clamped_mass: 0.0,
            },
            surrogate: None,
        };
        r.write_csvs(dir.path(), "x").unwrap();
        let back = read_result_csvs(dir.path(), "x").unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn manifest_format() {
        let mut m = Manifest::new("uq");
        m.set("seed", 4);
        m.set("seed", 5);
        let mut out = Vec::new();
        m.write_to(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("command=uq\nversion="));
        assert!(text.ends_with("seed=5\n"));
        assert_eq!(Manifest::hash_config("").len(), 64);
    }

    #[test]
    fn property_names() {
        assert_eq!(PropertySet::RawTensor.names().len(), 21);
        assert_eq!(PropertySet::RawTensor.names()[1], "C12");
        assert_eq!("iso".parse::<PropertySet>().unwrap(), PropertySet::Iso);
    }

    #[test]
    fn rel_diff_uses_smaller_magnitude() {
        assert!((rel_diff(2.0, 2.1) - 0.05).abs() < 1e-12);
        assert_eq!(rel_diff(0.0, 0.0), 0.0);
    }
}
