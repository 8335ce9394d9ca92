use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{adam_amsgrad_step, LabelTransform, Weighting, AdamState, AnnError, Network, Standardizer, Topology, TrainSample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    /// Rate used when a topology is built from a template; layers carry their own rate.
    pub beta_dropout: f64,
    pub lambda_l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_decay: f64,
    pub seed: u64,
    /// Weight each output's squared error by its share of the label norm
    /// (floored), so the objective tracks relative rather than absolute error.
    pub relative_loss: bool,
    /// Train on signed-log labels (see [`LabelTransform::SignedLog`]).
    pub log_labels: bool,
    /// Shift every training grid by a random periodic translation each time
    /// it enters a batch. Effective properties of a periodic cell do not
    /// change under translation, so labels stay exact.
    pub shift_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e-3,
            beta_dropout: 0.0,
            lambda_l2: 0.0,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            lr_decay: 0.5,
            seed: 0,
            relative_loss: false,
            log_labels: true,
            shift_augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AnnError> {
        let bad = |m: String| Err(AnnError::InvalidConfig(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be > 0", self.alpha));
        }
        if !(self.lambda_l2 >= 0.0 && self.lambda_l2.is_finite()) {
            return bad(format!("lambda_l2 = {} must be >= 0", self.lambda_l2));
        }
        if !(0.0..1.0).contains(&self.beta_dropout) {
            return bad(format!("beta_dropout = {} outside [0, 1)", self.beta_dropout));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay = {} outside (0, 1]", self.lr_decay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub log: Vec<EpochLog>,
}

/// Mini-batch AMSGrad with early stopping on the validation loss.
///
/// Input and label standardizers are fitted on `train_set`. The learning
/// rate is multiplied by `lr_decay` after every `max(1, patience / 2)`
/// epochs without improvement, and training stops after `patience` such
/// epochs. The returned network holds the best validation weights. When
/// `val_set` is empty the training loss drives early stopping.
pub fn train(
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    topology: &Topology,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, AnnError> {
    cfg.validate()?;
    if train_set.len() < 2 * cfg.batch_size {
        return Err(AnnError::DatasetTooSmall(format!(
            "{} training samples for batch size {} (need at least twice the batch)",
            train_set.len(),
            cfg.batch_size
        )));
    }
    let mut net = Network::init_glorot(topology.clone(), cfg.seed)?;
    net.check_batch(train_set)?;
    if !val_set.is_empty() {
        net.check_batch(val_set)?;
    }
    net.input_std = Standardizer::fit(
        topology.n_numeric,
        train_set.iter().map(|s| s.numeric.as_slice()),
    );
    if cfg.log_labels {
        // the knee sits well below typical label magnitudes
        let mean_abs = train_set
            .iter()
            .flat_map(|s| s.target.iter().map(|v| v.abs()))
            .sum::<f64>()
            / (train_set.len() * net.n_out()) as f64;
        net.label_transform = LabelTransform::SignedLog {
            scale: if mean_abs > 0.0 { 1e-3 * mean_abs } else { 1.0 },
        };
    }
    let encoded: Vec<Vec<f64>> = train_set.iter().map(|s| net.label_transform.apply(&s.target)).collect();
    net.label_std = Standardizer::fit(net.n_out(), encoded.iter().map(|t| t.as_slice()));
    let weighting = if cfg.relative_loss {
        // normalized so the average sample keeps unit total weight per output
        let unit = Weighting::Relative { scale: 1.0 };
        let mean_w = train_set
            .iter()
            .map(|s| net.output_weights(&s.target, unit).iter().sum::<f64>())
            .sum::<f64>()
            / train_set.len() as f64;
        Weighting::Relative {
            scale: net.n_out() as f64 / mean_w,
        }
    } else {
        Weighting::Uniform
    };

    // the shuffling stream is kept apart from the initialization stream
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut state = AdamState::new(net.n_params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = cfg.alpha;
    let mut best = (f64::INFINITY, net.params().to_vec(), 0usize);
    let mut since_best = 0;
    let decay_every = (cfg.patience / 2).max(1);
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainSample> = chunk
                .iter()
                .map(|&i| {
                    let mut s = train_set[i].clone();
                    if cfg.shift_augment {
                        if let Some(g) = &s.grid {
                            let n = g.n();
                            let shift = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
                            s.grid = Some(Arc::new(g.shifted(shift)));
                        }
                    }
                    s
                })
                .collect();
            let (loss, grad) = net.weighted_gradients(&batch, cfg.lambda_l2, Some(rng.next_u64()), weighting)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(AnnError::Diverged { epoch });
            }
            adam_amsgrad_step(&mut state, net.params_mut(), &grad, lr);
            sum += loss * batch.len() as f64;
        }
        let train_loss = sum / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            net.weighted_loss(train_set, 0.0, weighting)?
        } else {
            net.weighted_loss(val_set, 0.0, weighting)?
        };
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(AnnError::Diverged { epoch });
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e} lr {lr:.3e}");
        if val_loss < best.0 {
            best = (val_loss, net.params().to_vec(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
            if since_best % decay_every == 0 {
                lr *= cfg.lr_decay;
            }
        }
    }
    net.params_mut().copy_from_slice(&best.1);
    net.meta.epochs = log.len() as u32;
    net.meta.best_val_loss = best.0;
    net.meta.seed = cfg.seed;
    Ok(TrainOutcome { net, log })
}

/// Mean of `‖y − ŷ‖ / ‖y‖` over samples with `‖y‖ ≥ 1e-12`.
pub fn evaluate(net: &Network, test_set: &[TrainSample]) -> Result<f64, AnnError> {
    use rayon::prelude::*;
    if test_set.is_empty() {
        return Err(AnnError::EmptySet);
    }
    let errs: Vec<Option<f64>> = test_set
        .par_iter()
        .map(|s| {
            let norm = s.target.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Ok(None);
            }
            let pred = net.forward(&s.numeric, s.grid.as_deref(), None)?;
            let diff = pred
                .iter()
                .zip(&s.target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok(Some(diff / norm))
        })
        .collect::<Result<_, AnnError>>()?;
    let kept: Vec<f64> = errs.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(AnnError::EmptySet);
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchParams {
    /// Units per hidden dense layer.
    pub n_u: usize,
    /// Filters per convolution.
    pub n_f: usize,
    /// Hidden dense layers.
    pub n_l: usize,
}

impl Default for ArchParams {
    fn default() -> Self {
        ArchParams {
            n_u: 128,
            n_f: 8,
            n_l: 2,
        }
    }
}

/// Input/output sizes that, with [`ArchParams`] and a dropout rate, fix a topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologyTemplate {
    pub grid_n: usize,
    pub n_numeric: usize,
    pub n_out: usize,
}

impl TopologyTemplate {
    pub fn build(&self, arch: &ArchParams, dropout: f64) -> Topology {
        Topology::alexnet_lite(self.grid_n, self.n_numeric, self.n_out, arch, dropout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpSearchSpace {
    /// Log-uniform range of the learning rate.
    pub alpha: (f64, f64),
    /// Log-uniform range of the L2 factor.
    pub lambda_l2: (f64, f64),
    /// Probability of drawing `lambda_l2 = 0` instead.
    pub lambda_zero_prob: f64,
    pub n_u: Vec<usize>,
    pub n_f: Vec<usize>,
    pub n_l: Vec<usize>,
    pub dropout: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for HpSearchSpace {
    fn default() -> Self {
        HpSearchSpace {
            alpha: (1e-4, 1e-2),
            lambda_l2: (1e-6, 1e-2),
            lambda_zero_prob: 0.25,
            n_u: vec![64, 128, 256, 512, 1024, 2048],
            n_f: vec![8, 16, 32],
            n_l: vec![1, 2, 3],
            dropout: vec![0.0, 0.1, 0.2],
            trials: 10,
            seed: 0,
        }
    }
}

impl HpSearchSpace {
    pub fn validate(&self) -> Result<(), AnnError> {
        let bad = |m: &str| Err(AnnError::InvalidConfig(m.into()));
        if self.trials == 0 {
            return bad("trials must be >= 1");
        }
        if !(self.alpha.0 > 0.0 && self.alpha.0 <= self.alpha.1) {
            return bad("alpha range must satisfy 0 < lo <= hi");
        }
        if !(self.lambda_l2.0 > 0.0 && self.lambda_l2.0 <= self.lambda_l2.1) {
            return bad("lambda_l2 range must satisfy 0 < lo <= hi");
        }
        if !(0.0..=1.0).contains(&self.lambda_zero_prob) {
            return bad("lambda_zero_prob outside [0, 1]");
        }
        if self.n_u.is_empty() || self.n_f.is_empty() || self.n_l.is_empty() || self.dropout.is_empty() {
            return bad("every discrete set needs at least one value");
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, base: &TrainConfig) -> (TrainConfig, ArchParams) {
        fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..hi.ln()).exp()
            }
        }
        fn pick<T: Copy>(rng: &mut ChaCha8Rng, v: &[T]) -> T {
            v[rng.random_range(0..v.len())]
        }
        let alpha = log_uniform(rng, self.alpha);
        let zero = rng.random::<f64>() < self.lambda_zero_prob;
        let lambda = log_uniform(rng, self.lambda_l2);
        let arch = ArchParams {
            n_u: pick(rng, &self.n_u),
            n_f: pick(rng, &self.n_f),
            n_l: pick(rng, &self.n_l),
        };
        let dropout = pick(rng, &self.dropout);
        let cfg = TrainConfig {
            alpha,
            beta_dropout: dropout,
            lambda_l2: if zero { 0.0 } else { lambda },
            ..*base
        };
        (cfg, arch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpTrial {
    pub index: usize,
    pub config: TrainConfig,
    pub arch: ArchParams,
    /// Best validation loss, or the training error message.
    pub outcome: Result<f64, String>,
}

/// Random search over `space`; trial `t` trains with seed `space.seed + t`.
///
/// Failed trials are logged and skipped. Returns the best trial and the
/// full trial list, or the last error when every trial fails.
pub fn hp_random_search(
    space: &HpSearchSpace,
    base: &TrainConfig,
    template: &TopologyTemplate,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
) -> Result<(HpTrial, Vec<HpTrial>), AnnError> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    let mut trials = Vec::with_capacity(space.trials);
    let mut last_err = None;
    for t in 0..space.trials {
        let (mut cfg, arch) = space.sample(&mut rng, base);
        cfg.seed = space.seed.wrapping_add(t as u64);
        let topo = template.build(&arch, cfg.beta_dropout);
        let outcome = match train(train_set, val_set, &topo, &cfg) {
            Ok(o) => Ok(o.net.meta.best_val_loss),
            Err(e) => {
                let msg = e.to_string();
                last_err = Some(e);
                Err(msg)
            }
        };
        log::info!(
            "trial {t}: alpha={:.3e} lambda_l2={:.3e} dropout={} n_u={} n_f={} n_l={} -> {:?}",
            cfg.alpha,
            cfg.lambda_l2,
            cfg.beta_dropout,
            arch.n_u,
            arch.n_f,
            arch.n_l,
            outcome
        );
        trials.push(HpTrial {
            index: t,
            config: cfg,
            arch,
            outcome,
        });
    }
    let best = trials
        .iter()
        .filter_map(|t| t.outcome.as_ref().ok().map(|l| (*l, t)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, t)| t.clone());
    match best {
        Some(b) => Ok((b, trials)),
        None => Err(last_err.unwrap_or(AnnError::InvalidConfig("no trials ran".into()))),
    }
}
