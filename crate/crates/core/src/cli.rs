//! Command-line front end.
//!
//! Every subcommand reads a flat `key=value` configuration (one assignment
//! per line, `#` starts a comment), writes its outputs plus a
//! `<command>_manifest.txt` into the output directory and maps failures to
//! exit code 2 (usage or configuration) or 3 (runtime).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::ann::{
    evaluate, hp_random_search, train, ArchParams, EpochLog, HpSearchSpace, Network, TopologyTemplate,
    TrainConfig,
};
use crate::dataset::{
    generate, DatasetError, Dataset, GenerateConfig, GridRecipe, MatrixBounds, MicroKind, SampleInputBounds,
    N_FEATURES,
};
use crate::fft::{MicroSolver, SolverConfig};
use crate::microstructure::{volume_fraction, VoxelGrid};
use crate::pce::InputDistribution;
use crate::tensor::{MaterialParams, VoigtMatrix};
use crate::uq::{
    bench_timing, compare_results, read_result_csvs, run_mc, run_uq, write_bench_csv, write_comparison_csv,
    Manifest, PropertySet, Solver, UqConfig, UqInputs,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

fn runtime(m: impl std::fmt::Display) -> CliError {
    CliError::Runtime(m.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "muq", version, about = "FFT homogenization, neural surrogates and PCE uncertainty quantification")]
pub struct Cli {
    /// key=value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// overrides the `seed` key
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// worker threads, 0 = all cores; overrides the `threads` key
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// output directory
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate one microstructure and write it as a grid file
    GenMicro,
    /// Homogenize one microstructure and print the effective stiffness
    Homogenize,
    /// Generate a labeled training dataset with the FFT solver
    GenData,
    /// Train a surrogate network on a dataset
    Train,
    /// Random hyperparameter search
    HpSearch,
    /// Polynomial chaos uncertainty quantification
    Uq,
    /// Monte Carlo uncertainty quantification
    Mc,
    /// Time the FFT solver against trained networks
    Bench,
    /// Compare two UQ results
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenMicro => "gen-micro",
            Command::Homogenize => "homogenize",
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::HpSearch => "hp-search",
            Command::Uq => "uq",
            Command::Mc => "mc",
            Command::Bench => "bench",
            Command::Compare => "compare",
        }
    }
}

/// Recognized keys and their defaults. Relative paths resolve against `--out`.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("threads", "0"),
    // microstructure
    ("grid.n", "16"),
    ("grid.kind", "fiber"),
    ("grid.c_f", "0.6335"),
    ("grid.sphere_radius", "0.1"),
    ("grid.rsa_max_attempts", "20000"),
    ("grid.file", ""),
    // constituents for a single homogenization
    ("matrix.E", "3101"),
    ("matrix.nu", "0.41"),
    ("inclusion.E", "231000"),
    ("inclusion.nu", "0.1"),
    // FFT solver
    ("solver.rel_tol", "1e-8"),
    ("solver.max_iter", "500"),
    // dataset generation
    ("data.n_s", "600"),
    ("data.c_f_min", "0"),
    ("data.c_f_max", "1"),
    ("data.E_min", "1000"),
    ("data.E_max", "10000"),
    ("data.nu_min", "0.1"),
    ("data.nu_max", "0.48"),
    ("data.embed_grids", "false"),
    ("data.file", "dataset.muqd"),
    // training
    ("train.split", "0.8,0.1,0.1"),
    ("train.alpha", "1e-3"),
    ("train.lambda_l2", "0"),
    ("train.dropout", "0"),
    ("train.batch_size", "32"),
    ("train.max_epochs", "300"),
    ("train.patience", "30"),
    ("train.lr_decay", "0.5"),
    ("train.relative_loss", "false"),
    ("train.log_labels", "true"),
    ("train.shift_augment", "false"),
    ("train.n_u", "256"),
    ("train.n_f", "16"),
    ("train.n_l", "2"),
    ("train.checkpoint", "model.muqm"),
    // hyperparameter search
    ("hp.trials", "10"),
    ("hp.alpha_min", "1e-4"),
    ("hp.alpha_max", "1e-2"),
    ("hp.lambda_min", "1e-6"),
    ("hp.lambda_max", "1e-2"),
    ("hp.lambda_zero_prob", "0.25"),
    ("hp.n_u", "64,128,256,512,1024,2048"),
    ("hp.n_f", "8,16,32"),
    ("hp.n_l", "1,2,3"),
    ("hp.dropout", "0,0.1,0.2"),
    // uncertainty quantification
    ("uq.c_f_mean", "0.6335"),
    ("uq.c_f_std", "0.0264"),
    ("uq.c_f_min", "0"),
    ("uq.c_f_max", "1"),
    ("uq.E_mean", "3101"),
    ("uq.E_std", "111"),
    ("uq.E_min", "1"),
    ("uq.E_max", "inf"),
    ("uq.nu_mean", "0.41"),
    ("uq.nu_std", "0.044"),
    ("uq.nu_min", "0"),
    ("uq.nu_max", "0.499"),
    ("uq.n_w", "10"),
    ("uq.n_pce", "9"),
    ("uq.solver", "fft"),
    ("uq.checkpoint", "model.muqm"),
    ("uq.properties", "transverse_iso"),
    ("uq.cdf_samples", "10000"),
    ("uq.smooth_cdf", "false"),
    ("mc.samples", "1000"),
    // benchmark
    ("bench.sizes", "16,32"),
    ("bench.repetitions", "5"),
    ("bench.fft", "true"),
    ("bench.checkpoints", ""),
    // comparison: result prefixes such as `runs/uq` for `runs/uq_moments.csv`
    ("compare.a", "uq"),
    ("compare.b", "mc"),
];

/// Parsed configuration with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    out: PathBuf,
}

impl RunConfig {
    /// Parses `key=value` text; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(usage(format!("config line {}: expected key=value, got '{line}'", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if !values.contains_key(k) {
                return Err(usage(format!("config line {}: unknown key '{k}'", i + 1)));
            }
            if !seen.insert(k.to_string()) {
                return Err(usage(format!("config line {}: key '{k}' set twice", i + 1)));
            }
            values.insert(k.to_string(), v.to_string());
        }
        Ok(RunConfig {
            values,
            out: PathBuf::from("."),
        })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(usage(format!("unknown key '{key}'"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key '{key}' missing from the key table"))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| usage(format!("{key} = '{}': {e}", self.raw(key))))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| usage(format!("{key}: '{s}': {e}"))))
            .collect()
    }

    /// Path value resolved against the output directory.
    fn path(&self, key: &str) -> PathBuf {
        self.out.join(self.raw(key))
    }

    /// Canonical `key=value` text of every resolved key, sorted.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn manifest(&self, command: Command) -> Manifest {
        let mut m = Manifest::new(command.name());
        m.set("config_hash", Manifest::hash_config(&self.canonical()));
        for (k, v) in &self.values {
            m.set(k, v);
        }
        m
    }

    fn recipe(&self) -> Result<GridRecipe, CliError> {
        let kind: MicroKind = self.get("grid.kind")?;
        let recipe = GridRecipe {
            n: self.get("grid.n")?,
            kind,
            sphere_radius: self.get("grid.sphere_radius")?,
            rsa_max_attempts: self.get("grid.rsa_max_attempts")?,
        };
        if recipe.n < 2 {
            return Err(usage("grid.n must be >= 2"));
        }
        Ok(recipe)
    }

    fn solver(&self) -> Result<SolverConfig, CliError> {
        let s = SolverConfig {
            rel_tol: self.get("solver.rel_tol")?,
            max_iter: self.get("solver.max_iter")?,
        };
        s.validate().map_err(usage)?;
        Ok(s)
    }

    fn material(&self, prefix: &str) -> Result<MaterialParams, CliError> {
        let m = MaterialParams::ENu {
            e: self.get(&format!("{prefix}.E"))?,
            nu: self.get(&format!("{prefix}.nu"))?,
        };
        m.validate().map_err(|e| usage(format!("{prefix}: {e}")))?;
        Ok(m)
    }

    fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            alpha: self.get("train.alpha")?,
            beta_dropout: self.get("train.dropout")?,
            lambda_l2: self.get("train.lambda_l2")?,
            batch_size: self.get("train.batch_size")?,
            max_epochs: self.get("train.max_epochs")?,
            patience: self.get("train.patience")?,
            lr_decay: self.get("train.lr_decay")?,
            seed: self.get("seed")?,
            relative_loss: self.get("train.relative_loss")?,
            log_labels: self.get("train.log_labels")?,
            shift_augment: self.get("train.shift_augment")?,
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    fn split(&self) -> Result<[f64; 3], CliError> {
        let v: Vec<f64> = self.list("train.split")?;
        v.try_into()
            .map_err(|_| usage("train.split needs three comma-separated fractions"))
    }

    fn uq_inputs(&self) -> Result<UqInputs, CliError> {
        let dist = |p: &str| -> Result<InputDistribution, CliError> {
            Ok(InputDistribution {
                mean: self.get(&format!("uq.{p}_mean"))?,
                std: self.get(&format!("uq.{p}_std"))?,
                lo: self.get(&format!("uq.{p}_min"))?,
                hi: self.get(&format!("uq.{p}_max"))?,
            })
        };
        let inputs = UqInputs {
            c_f: dist("c_f")?,
            e_m: dist("E")?,
            nu_m: dist("nu")?,
            inclusion: self.material("inclusion")?,
        };
        inputs.validate().map_err(usage)?;
        Ok(inputs)
    }

    fn uq_config(&self) -> Result<UqConfig, CliError> {
        let recipe = self.recipe()?;
        let solver = match self.raw("uq.solver") {
            "fft" => Solver::Fft(self.solver()?),
            "ann" => Solver::Ann(Arc::new(load_network(&self.path("uq.checkpoint"))?)),
            other => return Err(usage(format!("uq.solver = '{other}' (fft|ann)"))),
        };
        let properties: PropertySet = self.get("uq.properties")?;
        let cfg = UqConfig {
            inputs: self.uq_inputs()?,
            n_w: self.get("uq.n_w")?,
            n_pce: self.get("uq.n_pce")?,
            recipe,
            solver,
            properties,
            seed: self.get("seed")?,
            cdf_samples: self.get("uq.cdf_samples")?,
            smooth_cdf: self.get("uq.smooth_cdf")?,
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

fn load_network(path: &Path) -> Result<Network, CliError> {
    if !path.exists() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Network::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(usage(format!("dataset {} does not exist", path.display())));
    }
    Dataset::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn finish(mut w: impl Write, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Prints a stiffness matrix with six significant digits.
pub fn format_stiffness(c: &VoigtMatrix) -> String {
    let mut s = String::new();
    for i in 0..6 {
        let row: Vec<String> = (0..6).map(|j| format!("{:>13.5e}", c.get(i, j))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_train_log<W: Write>(mut w: W, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss,lr")?;
    for l in log {
        writeln!(w, "{},{},{},{}", l.epoch, l.train_loss, l.val_loss, l.lr)?;
    }
    Ok(())
}

fn build_grid(cfg: &RunConfig) -> Result<VoxelGrid, CliError> {
    let file = cfg.raw("grid.file");
    if !file.is_empty() {
        let path = cfg.path("grid.file");
        let f = std::fs::File::open(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        return VoxelGrid::read_from(std::io::BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", path.display())));
    }
    let recipe = cfg.recipe()?;
    let c_f: f64 = cfg.get("grid.c_f")?;
    recipe.build(c_f, cfg.get("seed")?).map_err(usage)
}

fn cmd_gen_micro(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let grid = build_grid(cfg)?;
    let path = cfg.out.join("grid.muqg");
    let mut w = create(&path)?;
    grid.write_to(&mut w).map_err(runtime)?;
    finish(w, &path)?;
    let vf = volume_fraction(&grid);
    println!("wrote {} ({}^3 voxels, inclusion fraction {vf:.6})", path.display(), grid.n());
    let mut m = cfg.manifest(Command::GenMicro);
    m.set("volume_fraction", vf);
    m.set("output", path.display());
    Ok(m)
}

fn cmd_homogenize(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let mat_m = cfg.material("matrix")?;
    let mat_i = cfg.material("inclusion")?;
    let solver_cfg = cfg.solver()?;
    let grid = build_grid(cfg)?;
    let c = MicroSolver::new(grid.n())
        .homogenize(&grid, &mat_m, &mat_i, &solver_cfg)
        .map_err(runtime)?;
    print!("{}", format_stiffness(&c));
    let mut m = cfg.manifest(Command::Homogenize);
    for set in [PropertySet::TransverseIso, PropertySet::Iso] {
        if let Ok(v) = set.extract(&c) {
            for (name, v) in set.names().iter().zip(v) {
                println!("{name} = {v:.6e}");
                m.set(&format!("result.{name}"), v);
            }
        }
    }
    let path = cfg.out.join("stiffness.csv");
    let mut w = create(&path)?;
    for i in 0..6 {
        let row: Vec<String> = (0..6).map(|j| c.get(i, j).to_string()).collect();
        writeln!(w, "{}", row.join(",")).map_err(runtime)?;
    }
    finish(w, &path)?;
    Ok(m)
}

fn cmd_gen_data(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let bounds = SampleInputBounds {
        c_f: (cfg.get("data.c_f_min")?, cfg.get("data.c_f_max")?),
        matrix: MatrixBounds::ENu {
            e: (cfg.get("data.E_min")?, cfg.get("data.E_max")?),
            nu: (cfg.get("data.nu_min")?, cfg.get("data.nu_max")?),
        },
        inclusion: cfg.material("inclusion")?,
    };
    bounds.validate().map_err(usage)?;
    let gen = GenerateConfig {
        n_s: cfg.get("data.n_s")?,
        recipe: cfg.recipe()?,
        base_seed: cfg.get("seed")?,
        solver: cfg.solver()?,
        embed_grids: cfg.get("data.embed_grids")?,
    };
    let ds = generate(&bounds, &gen).map_err(|e| match e {
        DatasetError::InvalidBounds(_) | DatasetError::NotMultipleOfSix(_) | DatasetError::Micro(_) => usage(e),
        other => runtime(other),
    })?;
    let path = cfg.path("data.file");
    ds.save(&path).map_err(runtime)?;
    println!("wrote {} samples to {}", ds.len(), path.display());
    let mut m = cfg.manifest(Command::GenData);
    m.set("output", path.display());
    m.set("samples", ds.len());
    Ok(m)
}

fn split_dataset(
    cfg: &RunConfig,
) -> Result<[Vec<crate::ann::TrainSample>; 3], CliError> {
    let ds = load_dataset(&cfg.path("data.file"))?;
    let parts = ds.split(cfg.split()?, cfg.get("seed")?).map_err(usage)?;
    let mut out: [Vec<_>; 3] = Default::default();
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.to_train_samples().map_err(runtime)?;
    }
    Ok(out)
}

fn template(cfg: &RunConfig) -> Result<TopologyTemplate, CliError> {
    Ok(TopologyTemplate {
        grid_n: cfg.recipe()?.n,
        n_numeric: N_FEATURES,
        n_out: 6,
    })
}

fn ann_error(e: crate::ann::AnnError) -> CliError {
    use crate::ann::AnnError::*;
    match e {
        InvalidConfig(_) | InvalidTopology(_) | DatasetTooSmall(_) | EmptySet => usage(e),
        other => runtime(other),
    }
}

fn cmd_train(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let tcfg = cfg.train_config()?;
    let arch = ArchParams {
        n_u: cfg.get("train.n_u")?,
        n_f: cfg.get("train.n_f")?,
        n_l: cfg.get("train.n_l")?,
    };
    let [tr, va, te] = split_dataset(cfg)?;
    let topo = template(cfg)?.build(&arch, tcfg.beta_dropout);
    let out = train(&tr, &va, &topo, &tcfg).map_err(ann_error)?;
    let ckpt = cfg.path("train.checkpoint");
    out.net.save(&ckpt).map_err(runtime)?;
    let log_path = cfg.out.join("train_log.csv");
    let mut w = create(&log_path)?;
    write_train_log(&mut w, &out.log).map_err(runtime)?;
    finish(w, &log_path)?;
    let mut m = cfg.manifest(Command::Train);
    m.set("epochs", out.log.len());
    m.set("best_val_loss", out.net.meta.best_val_loss);
    m.set("checkpoint", ckpt.display());
    if !te.is_empty() {
        let err = evaluate(&out.net, &te).map_err(runtime)?;
        println!("test mean relative error: {:.4}%", 100.0 * err);
        m.set("test_error", err);
    }
    Ok(m)
}

fn cmd_hp_search(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let base = cfg.train_config()?;
    let space = HpSearchSpace {
        alpha: (cfg.get("hp.alpha_min")?, cfg.get("hp.alpha_max")?),
        lambda_l2: (cfg.get("hp.lambda_min")?, cfg.get("hp.lambda_max")?),
        lambda_zero_prob: cfg.get("hp.lambda_zero_prob")?,
        n_u: cfg.list("hp.n_u")?,
        n_f: cfg.list("hp.n_f")?,
        n_l: cfg.list("hp.n_l")?,
        dropout: cfg.list("hp.dropout")?,
        trials: cfg.get("hp.trials")?,
        seed: cfg.get("seed")?,
    };
    space.validate().map_err(usage)?;
    let [tr, va, _] = split_dataset(cfg)?;
    let (best, trials) = hp_random_search(&space, &base, &template(cfg)?, &tr, &va).map_err(ann_error)?;
    let path = cfg.out.join("hp_trials.csv");
    let mut w = create(&path)?;
    let io = (|| -> std::io::Result<()> {
        writeln!(w, "trial,alpha,lambda_l2,dropout,n_u,n_f,n_l,val_loss")?;
        for t in &trials {
            let loss = t.outcome.as_ref().map_or(String::new(), |l| l.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                t.index, t.config.alpha, t.config.lambda_l2, t.config.beta_dropout, t.arch.n_u, t.arch.n_f, t.arch.n_l, loss
            )?;
        }
        Ok(())
    })();
    io.map_err(runtime)?;
    finish(w, &path)?;
    println!(
        "best trial {}: alpha={} lambda_l2={} dropout={} n_u={} n_f={} n_l={}",
        best.index, best.config.alpha, best.config.lambda_l2, best.config.beta_dropout, best.arch.n_u, best.arch.n_f, best.arch.n_l
    );
    let mut m = cfg.manifest(Command::HpSearch);
    m.set("best.trial", best.index);
    m.set("best.alpha", best.config.alpha);
    m.set("best.lambda_l2", best.config.lambda_l2);
    m.set("best.dropout", best.config.beta_dropout);
    m.set("best.n_u", best.arch.n_u);
    m.set("best.n_f", best.arch.n_f);
    m.set("best.n_l", best.arch.n_l);
    Ok(m)
}

fn uq_error(e: crate::uq::UqError) -> CliError {
    match e {
        crate::uq::UqError::InvalidConfig(_) | crate::uq::UqError::PropertyMismatch(_) => usage(e),
        other => runtime(other),
    }
}

fn cmd_uq(cfg: &RunConfig, command: Command) -> Result<Manifest, CliError> {
    let ucfg = cfg.uq_config()?;
    let (res, prefix) = if command == Command::Mc {
        (run_mc(&ucfg, cfg.get("mc.samples")?).map_err(uq_error)?, "mc")
    } else {
        (run_uq(&ucfg).map_err(uq_error)?, "uq")
    };
    res.write_csvs(&cfg.out, prefix).map_err(runtime)?;
    let mut m = cfg.manifest(command);
    m.set("solver_calls", res.meta.solver_calls);
    m.set("clamped_mass", res.meta.clamped_mass);
    for ((n, mean), std) in res.names.iter().zip(&res.mean).zip(&res.std) {
        println!("{n}: mean {mean:.6e} std {std:.6e}");
        m.set(&format!("result.{n}.mean"), mean);
        m.set(&format!("result.{n}.std"), std);
    }
    Ok(m)
}

fn cmd_bench(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let sizes: Vec<usize> = cfg.list("bench.sizes")?;
    if sizes.is_empty() {
        return Err(usage("bench.sizes is empty"));
    }
    let nets: Vec<Arc<Network>> = cfg
        .list::<String>("bench.checkpoints")?
        .iter()
        .map(|p| load_network(&cfg.out.join(p)).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let rows = bench_timing(
        &sizes,
        &nets,
        cfg.get("bench.fft")?,
        &cfg.solver()?,
        cfg.get("bench.repetitions")?,
    )
    .map_err(uq_error)?;
    let path = cfg.out.join("bench.csv");
    let mut w = create(&path)?;
    write_bench_csv(&mut w, &rows).map_err(runtime)?;
    finish(w, &path)?;
    let mut m = cfg.manifest(Command::Bench);
    m.set("rows", rows.len());
    Ok(m)
}

fn cmd_compare(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let load = |key: &str| {
        let p = cfg.path(key);
        let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
        let prefix = p
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| usage(format!("{key} is not a file prefix")))?
            .to_string();
        read_result_csvs(&dir, &prefix).map_err(|e| usage(format!("{key}: {e}")))
    };
    let (a, b) = (load("compare.a")?, load("compare.b")?);
    let rows = compare_results(&a, &b).map_err(uq_error)?;
    let path = cfg.out.join("compare.csv");
    let mut w = create(&path)?;
    write_comparison_csv(&mut w, &rows).map_err(runtime)?;
    finish(w, &path)?;
    for r in &rows {
        println!(
            "{}: mean {:.3e} std {:.3e} ks {:.3e}",
            r.name, r.mean_rel_diff, r.std_rel_diff, r.kolmogorov
        );
    }
    Ok(cfg.manifest(Command::Compare))
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::parse("")?,
    };
    if let Some(s) = cli.seed {
        cfg.set("seed", s)?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", t)?;
    }
    cfg.out = cli.out.clone();
    std::fs::create_dir_all(&cfg.out).map_err(|e| usage(format!("{}: {e}", cfg.out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.get("threads")?)
        .build()
        .map_err(runtime)?;
    let command = cli.command;
    let manifest = pool.install(|| match command {
        Command::GenMicro => cmd_gen_micro(&cfg),
        Command::Homogenize => cmd_homogenize(&cfg),
        Command::GenData => cmd_gen_data(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::HpSearch => cmd_hp_search(&cfg),
        Command::Uq | Command::Mc => cmd_uq(&cfg, command),
        Command::Bench => cmd_bench(&cfg),
        Command::Compare => cmd_compare(&cfg),
    })?;
    let path = cfg.out.join(format!("{}_manifest.txt", command.name()));
    manifest.save(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Entry point for a binary: parses `args` (including the program name).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}
