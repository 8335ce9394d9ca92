//! A small deep-learning engine sized for the homogenization surrogate.
//!
//! A [`Network`] has three parts: a voxel branch (3D convolutions over the
//! microstructure), a numeric branch (standardized material parameters and
//! strain state) and a trunk that starts by concatenating both branch
//! outputs. All parameters live in one flat `f64` vector so optimizers and
//! finite-difference checks can treat them uniformly. Labels are
//! standardized per component for training; [`Network::forward`] returns
//! values in label units.

mod checkpoint;
mod layers;
mod optim;
mod train;

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::microstructure::VoxelGrid;
use layers::ConvGeom;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adam_amsgrad_step, sgd_step, AdamState};
pub use train::{
    evaluate, hp_random_search, train, ArchParams, EpochLog, HpSearchSpace, HpTrial,
    TopologyTemplate, TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty evaluation set")]
    EmptySet,
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv3D { filters: usize, kernel: usize, stride: usize },
    ReLU,
    MaxPool3D { window: usize },
    Flatten,
    Dropout { rate: f64 },
    /// Joins the voxel and numeric branch outputs; first layer of the trunk.
    Concat,
    /// Fixed per-feature input standardization; first layer of the numeric branch.
    Standardize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Volume { channels: usize, side: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Volume { channels, side } => channels * side * side * side,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// Side of the voxel input; 0 when there is no voxel branch.
    pub grid_n: usize,
    pub n_numeric: usize,
    pub cnn: Vec<LayerSpec>,
    pub numeric: Vec<LayerSpec>,
    pub trunk: Vec<LayerSpec>,
}

impl Topology {
    /// Number of conv/pool blocks that fit a grid of side `n` (at most 3).
    pub fn auto_blocks(n: usize) -> usize {
        let mut side = n;
        let mut blocks = 0;
        while blocks < 3 && side >= 3 && (side - 2) / 2 >= 2 {
            side = (side - 2) / 2;
            blocks += 1;
        }
        blocks.max(usize::from(n >= 4))
    }

    /// Convolution blocks `{Conv3D(n_F, 3), ReLU, MaxPool3D(2)}`, flatten,
    /// standardized numeric input, then `n_l` hidden dense layers.
    pub fn alexnet_lite(
        grid_n: usize,
        n_numeric: usize,
        n_out: usize,
        arch: &ArchParams,
        dropout: f64,
    ) -> Topology {
        let mut cnn = Vec::new();
        if grid_n > 0 {
            for _ in 0..Self::auto_blocks(grid_n) {
                cnn.push(LayerSpec::Conv3D {
                    filters: arch.n_f,
                    kernel: 3,
                    stride: 1,
                });
                cnn.push(LayerSpec::ReLU);
                cnn.push(LayerSpec::MaxPool3D { window: 2 });
            }
            cnn.push(LayerSpec::Flatten);
        }
        let mut trunk = vec![LayerSpec::Concat];
        for _ in 0..arch.n_l {
            trunk.push(LayerSpec::Dense { units: arch.n_u });
            trunk.push(LayerSpec::ReLU);
            if dropout > 0.0 {
                trunk.push(LayerSpec::Dropout { rate: dropout });
            }
        }
        trunk.push(LayerSpec::Dense { units: n_out });
        Topology {
            grid_n,
            n_numeric,
            cnn,
            numeric: vec![LayerSpec::Standardize],
            trunk,
        }
    }
}

/// Elementwise map applied to labels before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LabelTransform {
    #[default]
    Identity,
    /// `sign(y) · ln(1 + |y| / scale)`: compresses labels spanning several
    /// decades so that absolute errors in the transformed space are close
    /// to relative errors in label units.
    SignedLog { scale: f64 },
}

impl LabelTransform {
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        match *self {
            LabelTransform::Identity => y.to_vec(),
            LabelTransform::SignedLog { scale } => y
                .iter()
                .map(|&v| v.signum() * (v.abs() / scale).ln_1p())
                .collect(),
        }
    }

    /// `dy/dt` at label value `y`.
    pub fn slope(&self, y: f64) -> f64 {
        match *self {
            LabelTransform::Identity => 1.0,
            LabelTransform::SignedLog { scale } => scale + y.abs(),
        }
    }

    pub fn invert(&self, t: &[f64]) -> Vec<f64> {
        match *self {
            LabelTransform::Identity => t.to_vec(),
            LabelTransform::SignedLog { scale } => t
                .iter()
                .map(|&v| v.signum() * scale * v.abs().exp_m1())
                .collect(),
        }
    }
}

/// Per-feature affine map `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Standardizer {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Column statistics of `rows`; zero-spread features get std 1.
    pub fn fit<'a, I: IntoIterator<Item = &'a [f64]>>(n: usize, rows: I) -> Self {
        let mut count = 0usize;
        let mut mean = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        for row in rows {
            count += 1;
            for j in 0..n {
                let d = row[j] - mean[j];
                mean[j] += d / count as f64;
                m2[j] += d * (row[j] - mean[j]);
            }
        }
        let std = m2
            .iter()
            .map(|&s| {
                let sd = if count > 0 { (s / count as f64).sqrt() } else { 0.0 };
                if sd > 1e-12 * 1f64.max(sd) && sd.is_finite() && sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub epochs: u32,
    pub best_val_loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Weighting {
    Uniform,
    Relative { scale: f64 },
}

/// One supervised example; grids are shared between examples through `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub numeric: Vec<f64>,
    pub grid: Option<Arc<VoxelGrid>>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Plan {
    spec: LayerSpec,
    input: Shape,
    output: Shape,
    offset: usize,
    /// Regularized weights come first, then biases.
    n_weights: usize,
    n_biases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    topology: Topology,
    n_out: usize,
    cnn: Vec<Plan>,
    numeric: Vec<Plan>,
    trunk: Vec<Plan>,
    params: Vec<f64>,
    pub input_std: Standardizer,
    pub label_std: Standardizer,
    pub label_transform: LabelTransform,
    pub meta: TrainingMeta,
}

pub type NetworkCheckpoint = Network;

fn plan_branch(
    specs: &[LayerSpec],
    input: Shape,
    offset: &mut usize,
    branch: &str,
) -> Result<Vec<Plan>, AnnError> {
    let bad = |i: usize, msg: String| AnnError::InvalidTopology(format!("{branch} layer {i}: {msg}"));
    let mut plans = Vec::with_capacity(specs.len());
    let mut shape = input;
    for (i, &spec) in specs.iter().enumerate() {
        let (output, n_weights, n_biases) = match spec {
            LayerSpec::Dense { units } => {
                let Shape::Flat(n_in) = shape else {
                    return Err(bad(i, "Dense needs a flat input".into()));
                };
                if units == 0 {
                    return Err(bad(i, "Dense needs at least one unit".into()));
                }
                (Shape::Flat(units), units * n_in, units)
            }
            LayerSpec::Conv3D {
                filters,
                kernel,
                stride,
            } => {
                let Shape::Volume { channels, side } = shape else {
                    return Err(bad(i, "Conv3D needs a volume input".into()));
                };
                if filters == 0 || kernel == 0 || stride == 0 {
                    return Err(bad(i, "Conv3D sizes must be positive".into()));
                }
                if kernel > side {
                    return Err(bad(i, format!("kernel {kernel} larger than input side {side}")));
                }
                let side_out = (side - kernel) / stride + 1;
                (
                    Shape::Volume {
                        channels: filters,
                        side: side_out,
                    },
                    filters * channels * kernel.pow(3),
                    filters,
                )
            }
            LayerSpec::MaxPool3D { window } => {
                let Shape::Volume { channels, side } = shape else {
                    return Err(bad(i, "MaxPool3D needs a volume input".into()));
                };
                if window == 0 || side / window == 0 {
                    return Err(bad(i, format!("window {window} does not fit side {side}")));
                }
                (
                    Shape::Volume {
                        channels,
                        side: side / window,
                    },
                    0,
                    0,
                )
            }
            LayerSpec::Flatten => (Shape::Flat(shape.len()), 0, 0),
            LayerSpec::ReLU => (shape, 0, 0),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(bad(i, format!("dropout rate {rate} outside [0, 1)")));
                }
                (shape, 0, 0)
            }
            LayerSpec::Concat => {
                if branch != "trunk" || i != 0 {
                    return Err(bad(i, "Concat must be the first trunk layer".into()));
                }
                (shape, 0, 0)
            }
            LayerSpec::Standardize => {
                if branch != "numeric" || i != 0 {
                    return Err(bad(i, "Standardize must be the first numeric layer".into()));
                }
                (shape, 0, 0)
            }
        };
        plans.push(Plan {
            spec,
            input: shape,
            output,
            offset: *offset,
            n_weights,
            n_biases,
        });
        *offset += n_weights + n_biases;
        shape = output;
    }
    Ok(plans)
}

fn branch_output(plans: &[Plan], input: Shape) -> Shape {
    plans.last().map_or(input, |p| p.output)
}

/// Cached activations of one branch: `acts[i]` feeds layer `i`.
#[derive(Debug, Clone, Default)]
struct BranchTrace {
    acts: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone)]
struct Trace {
    cnn: BranchTrace,
    numeric: BranchTrace,
    trunk: BranchTrace,
}

impl Network {
    /// Network with Glorot-uniform weights, zero biases and identity standardizers.
    pub fn init_glorot(topology: Topology, seed: u64) -> Result<Network, AnnError> {
        let mut net = Network::zeros(topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for plan in net.cnn.iter().chain(&net.numeric).chain(&net.trunk) {
            let (fan_in, fan_out) = match (plan.spec, plan.input) {
                (LayerSpec::Dense { units }, Shape::Flat(n_in)) => (n_in, units),
                (
                    LayerSpec::Conv3D {
                        filters, kernel, ..
                    },
                    Shape::Volume { channels, .. },
                ) => (channels * kernel.pow(3), filters * kernel.pow(3)),
                _ => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut net.params[plan.offset..plan.offset + plan.n_weights] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        net.meta.seed = seed;
        Ok(net)
    }

    /// Network with all parameters zero.
    pub fn zeros(topology: Topology) -> Result<Network, AnnError> {
        let mut offset = 0;
        if topology.grid_n == 0 && !topology.cnn.is_empty() {
            return Err(AnnError::InvalidTopology(
                "voxel layers given without a grid size".into(),
            ));
        }
        let cnn_in = Shape::Volume {
            channels: 1,
            side: topology.grid_n,
        };
        let cnn = plan_branch(&topology.cnn, cnn_in, &mut offset, "cnn")?;
        let cnn_out = if topology.grid_n == 0 {
            0
        } else {
            let out = branch_output(&cnn, cnn_in);
            if !matches!(out, Shape::Flat(_)) {
                return Err(AnnError::InvalidTopology(
                    "voxel branch must end flat".into(),
                ));
            }
            out.len()
        };
        let num_in = Shape::Flat(topology.n_numeric);
        let numeric = plan_branch(&topology.numeric, num_in, &mut offset, "numeric")?;
        let num_out = branch_output(&numeric, num_in);
        if !matches!(num_out, Shape::Flat(_)) {
            return Err(AnnError::InvalidTopology("numeric branch must be flat".into()));
        }
        if topology.trunk.first() != Some(&LayerSpec::Concat) {
            return Err(AnnError::InvalidTopology(
                "trunk must start with Concat".into(),
            ));
        }
        let trunk_in = Shape::Flat(cnn_out + num_out.len());
        let trunk = plan_branch(&topology.trunk, trunk_in, &mut offset, "trunk")?;
        let n_out = match trunk.last().map(|p| p.output) {
            Some(Shape::Flat(n)) if n > 0 => n,
            _ => {
                return Err(AnnError::InvalidTopology(
                    "trunk must end with a flat output".into(),
                ))
            }
        };
        Ok(Network {
            input_std: Standardizer::identity(topology.n_numeric),
            label_std: Standardizer::identity(n_out),
            label_transform: LabelTransform::Identity,
            topology,
            n_out,
            cnn,
            numeric,
            trunk,
            params: vec![0.0; offset],
            meta: TrainingMeta::default(),
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Ranges of regularized parameters (dense weights and conv kernels).
    pub fn weight_ranges(&self) -> Vec<Range<usize>> {
        self.cnn
            .iter()
            .chain(&self.numeric)
            .chain(&self.trunk)
            .filter(|p| p.n_weights > 0)
            .map(|p| p.offset..p.offset + p.n_weights)
            .collect()
    }

    /// Sum of squared weights and kernels (biases excluded).
    pub fn l2_norm_sq(&self) -> f64 {
        self.weight_ranges()
            .into_iter()
            .map(|r| self.params[r].iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    fn check_inputs(&self, x1: &[f64], grid: Option<&VoxelGrid>) -> Result<(), AnnError> {
        if x1.len() != self.topology.n_numeric {
            return Err(AnnError::ShapeMismatch(format!(
                "numeric input has {} entries, network expects {}",
                x1.len(),
                self.topology.n_numeric
            )));
        }
        match (self.topology.grid_n, grid) {
            (0, _) => Ok(()),
            (n, Some(g)) if g.n() == n => Ok(()),
            (n, Some(g)) => Err(AnnError::ShapeMismatch(format!(
                "grid side {} differs from network input side {n}",
                g.n()
            ))),
            (n, None) => Err(AnnError::ShapeMismatch(format!(
                "network expects a {n}³ grid"
            ))),
        }
    }

    /// Prediction in label units. Dropout is active only when `train_rng` is given.
    pub fn forward(
        &self,
        x1: &[f64],
        grid: Option<&VoxelGrid>,
        train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<f64>, AnnError> {
        self.check_inputs(x1, grid)?;
        let trace = self.trace(x1, grid, train_rng);
        Ok(self.decode_label(trace.trunk.acts.last().unwrap()))
    }

    /// Predictions for several numeric inputs sharing one grid; the voxel
    /// branch runs once.
    pub fn forward_shared_grid(
        &self,
        x1s: &[Vec<f64>],
        grid: Option<&VoxelGrid>,
    ) -> Result<Vec<Vec<f64>>, AnnError> {
        for x1 in x1s {
            self.check_inputs(x1, grid)?;
        }
        let features = self.voxel_features(grid);
        Ok(x1s
            .iter()
            .map(|x1| {
                let num = run_branch(&self.numeric, &self.params, &self.input_std, x1.clone(), None);
                let mut joined = features.clone();
                joined.extend_from_slice(num.acts.last().unwrap());
                let out = run_branch(&self.trunk, &self.params, &self.input_std, joined, None);
                self.decode_label(out.acts.last().unwrap())
            })
            .collect())
    }

    /// Label units to the standardized space the output layer works in.
    pub fn encode_label(&self, y: &[f64]) -> Vec<f64> {
        self.label_std.apply(&self.label_transform.apply(y))
    }

    pub fn decode_label(&self, out: &[f64]) -> Vec<f64> {
        self.label_transform.invert(&self.label_std.invert(out))
    }

    fn voxel_features(&self, grid: Option<&VoxelGrid>) -> Vec<f64> {
        match grid {
            Some(g) if self.topology.grid_n > 0 => {
                let x: Vec<f64> = g.data().iter().map(|&v| f64::from(v)).collect();
                let t = run_branch(&self.cnn, &self.params, &self.input_std, x, None);
                t.acts.into_iter().last().unwrap()
            }
            _ => Vec::new(),
        }
    }

    fn trace(
        &self,
        x1: &[f64],
        grid: Option<&VoxelGrid>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Trace {
        let cnn = match grid {
            Some(g) if self.topology.grid_n > 0 => {
                let x: Vec<f64> = g.data().iter().map(|&v| f64::from(v)).collect();
                run_branch(&self.cnn, &self.params, &self.input_std, x, rng.as_deref_mut())
            }
            _ => BranchTrace {
                acts: vec![Vec::new()],
                masks: Vec::new(),
            },
        };
        let numeric = run_branch(
            &self.numeric,
            &self.params,
            &self.input_std,
            x1.to_vec(),
            rng.as_deref_mut(),
        );
        let mut joined = cnn.acts.last().unwrap().clone();
        joined.extend_from_slice(numeric.acts.last().unwrap());
        let trunk = run_branch(&self.trunk, &self.params, &self.input_std, joined, rng);
        Trace {
            cnn,
            numeric,
            trunk,
        }
    }

    /// Loss of one sample in standardized label space plus its gradient,
    /// accumulated into `grad` with factor `scale`.
    fn sample_grad(
        &self,
        s: &TrainSample,
        rng: Option<&mut ChaCha8Rng>,
        scale: f64,
        weighting: Weighting,
        grad: &mut [f64],
    ) -> f64 {
        let trace = self.trace(&s.numeric, s.grid.as_deref(), rng);
        let pred = trace.trunk.acts.last().unwrap();
        let target = self.encode_label(&s.target);
        let w = self.output_weights(&s.target, weighting);
        let mut g_out = vec![0.0; pred.len()];
        let mut err = 0.0;
        for i in 0..pred.len() {
            let d = pred[i] - target[i];
            err += w[i] * d * d;
            g_out[i] = 2.0 * w[i] * d * scale;
        }
        let g_joined = back_branch(&self.trunk, &self.params, &self.input_std, &trace.trunk, g_out, grad, true);
        let g_joined = g_joined.unwrap();
        let n_cnn = trace.cnn.acts.last().unwrap().len();
        if n_cnn > 0 {
            back_branch(&self.cnn, &self.params, &self.input_std, &trace.cnn, g_joined[..n_cnn].to_vec(), grad, false);
        }
        back_branch(&self.numeric, &self.params, &self.input_std, &trace.numeric, g_joined[n_cnn..].to_vec(), grad, false);
        err
    }

    fn check_batch(&self, batch: &[TrainSample]) -> Result<(), AnnError> {
        if batch.is_empty() {
            return Err(AnnError::EmptySet);
        }
        for s in batch {
            self.check_inputs(&s.numeric, s.grid.as_deref())?;
            if s.target.len() != self.n_out {
                return Err(AnnError::ShapeMismatch(format!(
                    "target has {} entries, network outputs {}",
                    s.target.len(),
                    self.n_out
                )));
            }
        }
        Ok(())
    }

    /// Batch mean of squared errors in standardized label space plus
    /// `lambda_l2` times the squared weight norm. Dropout is inactive.
    pub fn loss(&self, batch: &[TrainSample], lambda_l2: f64) -> Result<f64, AnnError> {
        self.weighted_loss(batch, lambda_l2, Weighting::Uniform)
    }

    /// Per-output factors on the squared standardized error of one sample.
    pub(crate) fn output_weights(&self, target: &[f64], weighting: Weighting) -> Vec<f64> {
        match weighting {
            Weighting::Uniform => vec![1.0; target.len()],
            // to first order the standardized error times label std times the
            // transform's slope is the error in label units; dividing by the
            // target norm turns the sum into a squared relative error. The
            // floor keeps near-zero components from drifting, where the first
            // order picture fails.
            Weighting::Relative { scale } => {
                const FLOOR: f64 = 0.3;
                let norm_sq = target.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
                self.label_std
                    .std
                    .iter()
                    .zip(target)
                    .map(|(s, &y)| {
                        let slope = self.label_transform.slope(y);
                        scale * s * s * (slope * slope / norm_sq).max(FLOOR * FLOOR)
                    })
                    .collect()
            }
        }
    }

    pub(crate) fn weighted_loss(
        &self,
        batch: &[TrainSample],
        lambda_l2: f64,
        weighting: Weighting,
    ) -> Result<f64, AnnError> {
        self.check_batch(batch)?;
        let err: f64 = batch
            .par_iter()
            .map(|s| {
                let pred = self.trace(&s.numeric, s.grid.as_deref(), None).trunk.acts.pop().unwrap();
                let target = self.encode_label(&s.target);
                let w = self.output_weights(&s.target, weighting);
                pred.iter()
                    .zip(&target)
                    .zip(&w)
                    .map(|((a, b), w)| w * (a - b).powi(2))
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        let penalty = if lambda_l2 > 0.0 { lambda_l2 * self.l2_norm_sq() } else { 0.0 };
        Ok(err / batch.len() as f64 + penalty)
    }

    /// Loss and exact gradient with respect to every parameter.
    ///
    /// With `dropout_seed` set, sample `i` of the batch draws its dropout
    /// masks from a generator seeded with `dropout_seed + i`; without it the
    /// network runs in inference mode.
    pub fn gradients(
        &self,
        batch: &[TrainSample],
        lambda_l2: f64,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<f64>), AnnError> {
        self.weighted_gradients(batch, lambda_l2, dropout_seed, Weighting::Uniform)
    }

    pub(crate) fn weighted_gradients(
        &self,
        batch: &[TrainSample],
        lambda_l2: f64,
        dropout_seed: Option<u64>,
        weighting: Weighting,
    ) -> Result<(f64, Vec<f64>), AnnError> {
        self.check_batch(batch)?;
        const CHUNK: usize = 4;
        let scale = 1.0 / batch.len() as f64;
        let partials: Vec<(f64, Vec<f64>)> = batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut g = vec![0.0; self.params.len()];
                let mut err = 0.0;
                for (i, s) in chunk.iter().enumerate() {
                    let mut rng = dropout_seed
                        .map(|seed| ChaCha8Rng::seed_from_u64(seed.wrapping_add((c * CHUNK + i) as u64)));
                    err += self.sample_grad(s, rng.as_mut(), scale, weighting, &mut g);
                }
                (err, g)
            })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut err = 0.0;
        for (e, g) in partials {
            err += e;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let mut loss = err * scale;
        if lambda_l2 > 0.0 {
            loss += lambda_l2 * self.l2_norm_sq();
            for r in self.weight_ranges() {
                for i in r {
                    grad[i] += 2.0 * lambda_l2 * self.params[i];
                }
            }
        }
        Ok((loss, grad))
    }
}

/// Free-function form of [`Network::init_glorot`].
pub fn init_glorot(topology: Topology, seed: u64) -> Result<Network, AnnError> {
    Network::init_glorot(topology, seed)
}

/// Free-function form of [`Network::forward`].
pub fn forward(
    net: &Network,
    x1: &[f64],
    x2: Option<&VoxelGrid>,
    train_rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>, AnnError> {
    net.forward(x1, x2, train_rng)
}

fn conv_geom(plan: &Plan) -> ConvGeom {
    let (LayerSpec::Conv3D { filters, kernel, stride }, Shape::Volume { channels, side }, Shape::Volume { side: side_out, .. }) =
        (plan.spec, plan.input, plan.output)
    else {
        unreachable!("conv plan with non-volume shapes")
    };
    ConvGeom {
        c_in: channels,
        side_in: side,
        filters,
        kernel,
        stride,
        side_out,
    }
}

fn run_branch(
    plans: &[Plan],
    params: &[f64],
    input_std: &Standardizer,
    input: Vec<f64>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> BranchTrace {
    let mut acts = Vec::with_capacity(plans.len() + 1);
    let mut masks = Vec::with_capacity(plans.len());
    acts.push(input);
    for plan in plans {
        let x = acts.last().unwrap();
        let mut mask = None;
        let y = match plan.spec {
            LayerSpec::Dense { .. } => {
                let w = &params[plan.offset..plan.offset + plan.n_weights];
                let b = &params[plan.offset + plan.n_weights..plan.offset + plan.n_weights + plan.n_biases];
                let mut y = vec![0.0; plan.output.len()];
                layers::dense_forward(plan.input.len(), x, w, b, &mut y);
                y
            }
            LayerSpec::Conv3D { .. } => {
                let w = &params[plan.offset..plan.offset + plan.n_weights];
                let b = &params[plan.offset + plan.n_weights..plan.offset + plan.n_weights + plan.n_biases];
                let mut y = vec![0.0; plan.output.len()];
                layers::conv_forward(&conv_geom(plan), x, w, b, &mut y);
                y
            }
            LayerSpec::ReLU => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::MaxPool3D { window } => {
                let Shape::Volume { channels, side } = plan.input else { unreachable!() };
                let mut y = vec![0.0; plan.output.len()];
                layers::maxpool_forward(channels, side, window, x, &mut y);
                y
            }
            LayerSpec::Flatten | LayerSpec::Concat => x.clone(),
            LayerSpec::Dropout { rate } => match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let m: Vec<f64> = (0..x.len())
                        .map(|_| if r.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    let y = x.iter().zip(&m).map(|(a, b)| a * b).collect();
                    mask = Some(m);
                    y
                }
                _ => x.clone(),
            },
            LayerSpec::Standardize => input_std.apply(x),
        };
        masks.push(mask);
        acts.push(y);
    }
    BranchTrace { acts, masks }
}

/// Backpropagates `g` through a branch, accumulating parameter gradients.
/// Returns the gradient with respect to the branch input when requested.
fn back_branch(
    plans: &[Plan],
    params: &[f64],
    input_std: &Standardizer,
    trace: &BranchTrace,
    mut g: Vec<f64>,
    grad: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    for (i, plan) in plans.iter().enumerate().rev() {
        let x = &trace.acts[i];
        let want_gx = need_input_grad || i > 0;
        if !want_gx && plan.n_weights == 0 {
            return None;
        }
        g = match plan.spec {
            LayerSpec::Dense { .. } | LayerSpec::Conv3D { .. } => {
                let (w_range, b_range) = (
                    plan.offset..plan.offset + plan.n_weights,
                    plan.offset + plan.n_weights..plan.offset + plan.n_weights + plan.n_biases,
                );
                let w = &params[w_range.clone()];
                let (gw, gb) = grad[plan.offset..b_range.end].split_at_mut(plan.n_weights);
                let mut gx = if want_gx { vec![0.0; x.len()] } else { Vec::new() };
                let gx_opt = if want_gx { Some(gx.as_mut_slice()) } else { None };
                if matches!(plan.spec, LayerSpec::Dense { .. }) {
                    layers::dense_backward(plan.input.len(), x, w, &g, gw, gb, gx_opt);
                } else {
                    layers::conv_backward(&conv_geom(plan), x, w, &g, gw, gb, gx_opt);
                }
                gx
            }
            LayerSpec::ReLU => g
                .iter()
                .zip(x)
                .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                .collect(),
            LayerSpec::MaxPool3D { window } => {
                let Shape::Volume { channels, side } = plan.input else { unreachable!() };
                let mut gx = vec![0.0; x.len()];
                layers::maxpool_backward(channels, side, window, x, &g, &mut gx);
                gx
            }
            LayerSpec::Flatten | LayerSpec::Concat => g,
            LayerSpec::Dropout { .. } => match &trace.masks[i] {
                Some(m) => g.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => g,
            },
            LayerSpec::Standardize => g.iter().zip(&input_std.std).map(|(a, s)| a / s).collect(),
        };
    }
    Some(g)
}
