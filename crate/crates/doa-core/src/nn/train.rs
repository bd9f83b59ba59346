//! Mini-batch Adam training with early stopping, and network inference.
//!
//! Training is single-threaded and fully deterministic for a given seed:
//! sequence order, dropout masks, and the gradient reduction order are all
//! fixed, so identical configurations reproduce identical parameters.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::layers::{losses, BN_MOMENTUM};
use super::model::{DoaNet, Phase};
use super::params::{Grads, ParamStore};
use super::tensor::Tensor;
use crate::features::SpectrogramTensor;
use crate::geometry::{Direction, DirectionGrid};
use crate::metrics::doa_error;
use crate::subspace::PseudoSpectrum;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Early-stop patience on the held-out DOA metric; 0 means a single
    /// epoch.
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Weights for the (MSE, BCE) loss terms.
    pub loss_weights: (f64, f64),
    /// Feed the target pseudo-spectrum to stage 2 instead of the stage-1
    /// prediction (ablation switch).
    pub teacher_forcing: bool,
    /// Stop once the epoch-mean training BCE falls below this value; handy
    /// for bounded smoke runs.
    pub target_bce: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            seed: 0,
            loss_weights: (1.0, 1.0),
            teacher_forcing: false,
            target_bce: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(
                "batch size and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One training example: input tensor plus aligned targets. Frames past
/// `valid_frames` are padding and carry no loss.
#[derive(Debug, Clone)]
pub struct TrainSequence {
    pub input: Tensor<f32>,
    pub sps_target: Tensor<f32>,
    pub doa_target: Tensor<f32>,
    pub valid_frames: usize,
}

/// Source of training sequences; lets the caller keep large datasets on
/// disk and load per batch.
pub trait SequenceStore {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn load(&self, index: usize) -> Result<TrainSequence>;
}

pub struct InMemoryStore(pub Vec<TrainSequence>);

impl SequenceStore for InMemoryStore {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn load(&self, index: usize) -> Result<TrainSequence> {
        Ok(self.0[index].clone())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mse: f64,
    pub bce: f64,
    pub total: f64,
    /// Held-out top-O DOA error in degrees; infinity when undefined.
    pub doa_metric: f64,
    pub best: bool,
}

pub fn write_history_csv<W: Write>(records: &[EpochRecord], mut w: W) -> Result<()> {
    writeln!(w, "epoch,mse,bce,total,doa_metric,best_flag")?;
    for r in records {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{},{}",
            r.epoch,
            r.mse,
            r.bce,
            r.total,
            if r.doa_metric.is_finite() {
                format!("{:.4}", r.doa_metric)
            } else {
                "inf".into()
            },
            u8::from(r.best)
        )?;
    }
    Ok(())
}

struct Adam {
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
    steps: u64,
}

impl Adam {
    fn new(params: &ParamStore<f32>) -> Self {
        let zeros = |p: &ParamStore<f32>| -> BTreeMap<String, Vec<f32>> {
            p.iter()
                .filter(|(_, b)| b.trainable)
                .map(|(n, b)| (n.clone(), vec![0.0; b.data.len()]))
                .collect()
        };
        Self {
            m: zeros(params),
            v: zeros(params),
            steps: 0,
        }
    }

    fn step(&mut self, params: &mut ParamStore<f32>, grads: &Grads<f32>, cfg: &TrainConfig) {
        self.steps += 1;
        let b1 = cfg.beta1 as f32;
        let b2 = cfg.beta2 as f32;
        let lr = cfg.learning_rate as f32;
        let eps = cfg.epsilon as f32;
        let bias1 = 1.0 - (cfg.beta1).powi(self.steps as i32) as f32;
        let bias2 = 1.0 - (cfg.beta2).powi(self.steps as i32) as f32;
        for (name, m) in self.m.iter_mut() {
            let v = self.v.get_mut(name).unwrap();
            let g = grads.block(name);
            let theta = &mut params.get_mut(name).data;
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Direction estimates for one frame of head probabilities.
///
/// `Threshold` keeps every node above 0.5; `TopO` keeps the `o` most
/// probable nodes (ties to the lower index) regardless of probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferMode {
    Threshold,
    TopO,
}

pub fn select_directions(
    probabilities: &[f32],
    grid: &DirectionGrid,
    mode: InferMode,
    o: usize,
) -> Vec<Direction> {
    debug_assert_eq!(probabilities.len(), grid.len());
    match mode {
        InferMode::Threshold => probabilities
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.5)
            .map(|(i, _)| *grid.direction(i))
            .collect(),
        InferMode::TopO => {
            let o = o.min(probabilities.len());
            let mut idx: Vec<usize> = (0..probabilities.len()).collect();
            idx.sort_by(|&a, &b| {
                probabilities[b]
                    .partial_cmp(&probabilities[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut out: Vec<Direction> = idx[..o].iter().map(|&i| *grid.direction(i)).collect();
            // Keep a deterministic presentation order.
            out.sort_by(|a, b| {
                a.elevation_deg()
                    .partial_cmp(&b.elevation_deg())
                    .unwrap()
                    .then(a.azimuth_deg().partial_cmp(&b.azimuth_deg()).unwrap())
            });
            out
        }
    }
}

fn truth_from_target_row(row: &[f32], grid: &DirectionGrid) -> Vec<Direction> {
    row.iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.5)
        .map(|(i, _)| *grid.direction(i))
        .collect()
}

/// Held-out DOA metric: top-O error against the target activity matrix,
/// with the per-frame O taken from the targets themselves.
fn validation_metric(
    net: &DoaNet,
    params: &ParamStore<f32>,
    data: &dyn SequenceStore,
    doa_grid: &DirectionGrid,
) -> Result<f64> {
    let mut estimates: Vec<Vec<Direction>> = Vec::new();
    let mut truths: Vec<Vec<Direction>> = Vec::new();
    for i in 0..data.len() {
        let seq = data.load(i)?;
        let (out, _) = net.forward(params, &seq.input, Phase::Infer, None, None);
        let width = out.doa.shape()[1];
        for t in 0..seq.valid_frames {
            let probs: Vec<f32> = (0..width).map(|f| out.doa.at(t, f, 0)).collect();
            let t_width = seq.doa_target.shape()[1];
            let truth_row: Vec<f32> = (0..t_width).map(|f| seq.doa_target.at(t, f, 0)).collect();
            let truth = truth_from_target_row(&truth_row, doa_grid);
            estimates.push(select_directions(&probs, doa_grid, InferMode::TopO, truth.len()));
            truths.push(truth);
        }
    }
    Ok(doa_error(&estimates, &truths).unwrap_or(f64::INFINITY))
}

/// Train the network. Returns the best-metric parameters and the per-epoch
/// history.
pub fn train(
    net: &DoaNet,
    train_data: &dyn SequenceStore,
    val_data: &dyn SequenceStore,
    doa_grid: &DirectionGrid,
    config: &TrainConfig,
) -> Result<(ParamStore<f32>, Vec<EpochRecord>)> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut params: ParamStore<f32> = net.init_params(config.seed);
    let mut adam = Adam::new(&params);
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x5345_5155);
    let mut dropout_rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x44_524f_50);
    let momentum = BN_MOMENTUM as f32;

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_params = params.clone();
    let mut best_metric = f64::INFINITY;
    let mut best_epoch = 0usize;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        for batch in order.chunks(config.batch_size) {
            let mut grads = Grads::zeros_like(&params);
            for &index in batch {
                let seq = train_data.load(index)?;
                let teacher = config.teacher_forcing.then_some(&seq.sps_target);
                let (out, cache) =
                    net.forward(&params, &seq.input, Phase::Train, Some(&mut dropout_rng), teacher);
                let cache = cache.expect("training forward returns a cache");
                let (vals, g_sps, g_doa) = losses(
                    &out.sps,
                    &seq.sps_target,
                    &out.doa,
                    &seq.doa_target,
                    seq.valid_frames,
                    config.loss_weights,
                );
                if !vals.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch} (sequence {index})"
                    )));
                }
                sums.0 += vals.mse;
                sums.1 += vals.bce;
                sums.2 += vals.total;
                net.backward(&params, &cache, &g_sps, &g_doa, &mut grads);
                for update in &cache.stats_updates {
                    update.apply(&mut params, momentum);
                }
            }
            grads.scale(1.0 / batch.len() as f32);
            adam.step(&mut params, &grads, config);
        }
        let n = train_data.len() as f64;
        let (mse, bce, total) = (sums.0 / n, sums.1 / n, sums.2 / n);

        let metric = validation_metric(net, &params, val_data, doa_grid)?;
        let improved = metric < best_metric;
        if improved {
            best_metric = metric;
            best_epoch = epoch;
            best_params = params.clone();
        }
        history.push(EpochRecord {
            epoch,
            mse,
            bce,
            total,
            doa_metric: metric,
            best: improved,
        });

        if config.target_bce.is_some_and(|t| bce < t) {
            break;
        }
        if epoch - best_epoch >= config.patience {
            break;
        }
    }
    Ok((best_params, history))
}

/// Inference over a recording's sequences.
pub struct InferOutput {
    /// Stage-1 pseudo-spectrum over all valid frames.
    pub sps: PseudoSpectrum,
    /// Raw head probabilities per valid frame.
    pub probabilities: Vec<Vec<f32>>,
    /// Selected directions per valid frame.
    pub estimates: Vec<Vec<Direction>>,
}

/// Run the network over a recording and decode DOA estimates. `TopO` mode
/// needs one source count per (valid) frame.
pub fn infer(
    net: &DoaNet,
    params: &ParamStore<f32>,
    sequences: &[SpectrogramTensor],
    sps_grid: &DirectionGrid,
    doa_grid: &DirectionGrid,
    mode: InferMode,
    counts: Option<&[usize]>,
) -> Result<InferOutput> {
    let config = net.config();
    if sps_grid.len() != config.sps_width || doa_grid.len() != config.doa_width {
        return Err(Error::InvalidArgument(format!(
            "grids ({}, {}) do not match network outputs ({}, {})",
            sps_grid.len(),
            doa_grid.len(),
            config.sps_width,
            config.doa_width
        )));
    }
    net.validate_params(params)?;
    let total_frames: usize = sequences.iter().map(|s| s.valid_frames).sum();
    let counts = match (mode, counts) {
        (InferMode::TopO, None) => {
            return Err(Error::InvalidArgument(
                "top-O inference needs per-frame source counts".into(),
            ))
        }
        (_, Some(c)) if c.len() != total_frames => {
            return Err(Error::InvalidArgument(format!(
                "got {} per-frame counts for {} frames",
                c.len(),
                total_frames
            )));
        }
        (_, c) => c,
    };

    let mut sps = PseudoSpectrum::new(sps_grid.clone(), total_frames);
    let mut probabilities = Vec::with_capacity(total_frames);
    let mut estimates = Vec::with_capacity(total_frames);
    let mut frame = 0usize;
    for seq in sequences {
        if seq.seq_len != config.sequence_len
            || seq.bins != config.input_bins
            || seq.channels != config.input_channels
        {
            return Err(Error::InvalidArgument(format!(
                "sequence shape ({}, {}, {}) does not match network input ({}, {}, {})",
                seq.seq_len,
                seq.bins,
                seq.channels,
                config.sequence_len,
                config.input_bins,
                config.input_channels
            )));
        }
        let input = Tensor::from_vec(
            [seq.seq_len, seq.bins, seq.channels],
            seq.data.clone(),
        );
        let (out, _) = net.forward(params, &input, Phase::Infer, None, None);
        for t in 0..seq.valid_frames {
            let row: Vec<f32> = (0..config.sps_width).map(|f| out.sps.at(t, f, 0)).collect();
            for (dst, &v) in sps.row_mut(frame).iter_mut().zip(&row) {
                *dst = v as f64;
            }
            let probs: Vec<f32> = (0..config.doa_width).map(|f| out.doa.at(t, f, 0)).collect();
            let o = counts.map_or(0, |c| c[frame]);
            estimates.push(select_directions(&probs, doa_grid, mode, o));
            probabilities.push(probs);
            frame += 1;
        }
    }
    Ok(InferOutput {
        sps,
        probabilities,
        estimates,
    })
}
