//! The two-stage convolutional-recurrent DOA network.
//!
//! Stage 1 maps the magnitude/phase spectrogram tensor through conv blocks
//! (3x3 conv, ReLU, batch norm, frequency max-pool), a reshape onto the time
//! axis, bidirectional GRU layers, and a linear time-distributed FC into the
//! pseudo-spectrum. Stage 2 treats that map as a one-channel image, runs a
//! smaller conv stack, an FC dimension reducer, a bidirectional GRU, and a
//! sigmoid FC producing per-node DOA probabilities. Dropout follows every
//! conv block, GRU layer, and the hidden FC while training.

use rand_chacha::ChaCha12Rng;

use super::gru::{BiGru, BiGruCache};
use super::layers::{
    relu_backward, relu_forward, BatchNorm, BatchNormCache, Conv2d, Dense, DenseActivation,
    DenseCache, Dropout, EdgePadFreq, MaxPoolCache, MaxPoolFreq,
};
use super::params::{Grads, ParamStore, StatsUpdate};
use super::tensor::Tensor;
use super::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockConfig {
    pub filters: usize,
    pub freq_pool: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    pub conv_blocks: Vec<ConvBlockConfig>,
    pub gru_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Config {
    pub conv_blocks: Vec<ConvBlockConfig>,
    /// The pseudo-spectrum axis is edge-padded to this width before the
    /// stage-2 conv stack so the pool sizes divide evenly.
    pub padded_width: usize,
    pub fc_reduce: usize,
    pub gru_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub sequence_len: usize,
    pub input_bins: usize,
    pub input_channels: usize,
    pub sps_width: usize,
    pub doa_width: usize,
    pub dropout: f64,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
}

impl Default for NetworkConfig {
    /// Default architecture: four 64-filter conv blocks with frequency pools
    /// (8, 8, 4, 2) reducing 1024 bins to 2, two bidirectional GRU layers of
    /// 64 units per direction, and a linear FC onto the 614-node grid;
    /// stage 2 pads 614 to 625, runs two 16-filter blocks with (5, 5) pools,
    /// reduces to 32, one bidirectional GRU of 32 per direction, and a
    /// sigmoid FC onto the 432-node grid. About 400 K trainable weights.
    fn default() -> Self {
        NetworkConfig {
            sequence_len: 100,
            input_bins: 1024,
            input_channels: 8,
            sps_width: 614,
            doa_width: 432,
            dropout: 0.25,
            stage1: Stage1Config {
                conv_blocks: vec![
                    ConvBlockConfig { filters: 64, freq_pool: 8 },
                    ConvBlockConfig { filters: 64, freq_pool: 8 },
                    ConvBlockConfig { filters: 64, freq_pool: 4 },
                    ConvBlockConfig { filters: 64, freq_pool: 2 },
                ],
                gru_hidden: vec![64, 64],
            },
            stage2: Stage2Config {
                conv_blocks: vec![
                    ConvBlockConfig { filters: 16, freq_pool: 5 },
                    ConvBlockConfig { filters: 16, freq_pool: 5 },
                ],
                padded_width: 625,
                fc_reduce: 32,
                gru_hidden: vec![32],
            },
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.sequence_len == 0 || self.input_bins == 0 || self.input_channels == 0 {
            return bad("zero input dimension".into());
        }
        if self.stage1.conv_blocks.is_empty()
            || self.stage1.gru_hidden.is_empty()
            || self.stage2.conv_blocks.is_empty()
            || self.stage2.gru_hidden.is_empty()
        {
            return bad("each stage needs at least one conv block and one GRU layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let pool1: usize = self.stage1.conv_blocks.iter().map(|b| b.freq_pool).product();
        if pool1 == 0 || self.input_bins % pool1 != 0 {
            return bad(format!(
                "stage-1 pools {pool1} do not divide {} input bins",
                self.input_bins
            ));
        }
        if self.stage2.padded_width < self.sps_width {
            return bad("stage-2 padded width below the pseudo-spectrum width".into());
        }
        let pool2: usize = self.stage2.conv_blocks.iter().map(|b| b.freq_pool).product();
        if pool2 == 0 || self.stage2.padded_width % pool2 != 0 {
            return bad(format!(
                "stage-2 pools {pool2} do not divide padded width {}",
                self.stage2.padded_width
            ));
        }
        Ok(())
    }

    pub fn stage1_final_freq(&self) -> usize {
        let pool: usize = self.stage1.conv_blocks.iter().map(|b| b.freq_pool).product();
        self.input_bins / pool
    }

    pub fn stage1_reshaped_width(&self) -> usize {
        self.stage1_final_freq() * self.stage1.conv_blocks.last().unwrap().filters
    }

    pub fn stage2_final_freq(&self) -> usize {
        let pool: usize = self.stage2.conv_blocks.iter().map(|b| b.freq_pool).product();
        self.stage2.padded_width / pool
    }

    pub fn stage2_reshaped_width(&self) -> usize {
        self.stage2_final_freq() * self.stage2.conv_blocks.last().unwrap().filters
    }

    /// Analytic trainable-parameter count; the reported store count must
    /// match this exactly.
    pub fn parameter_count(&self) -> usize {
        let conv = |in_ch: usize, out: usize| 9 * in_ch * out + out;
        let bn = |ch: usize| 2 * ch;
        let gru = |input: usize, hidden: usize| 2 * 3 * (input * hidden + hidden * hidden + 2 * hidden);
        let dense = |input: usize, out: usize| input * out + out;

        let mut total = 0;
        let mut in_ch = self.input_channels;
        for block in &self.stage1.conv_blocks {
            total += conv(in_ch, block.filters) + bn(block.filters);
            in_ch = block.filters;
        }
        let mut width = self.stage1_reshaped_width();
        for &hidden in &self.stage1.gru_hidden {
            total += gru(width, hidden);
            width = 2 * hidden;
        }
        total += dense(width, self.sps_width);

        let mut in_ch = 1;
        for block in &self.stage2.conv_blocks {
            total += conv(in_ch, block.filters) + bn(block.filters);
            in_ch = block.filters;
        }
        total += dense(self.stage2_reshaped_width(), self.stage2.fc_reduce);
        let mut width = self.stage2.fc_reduce;
        for &hidden in &self.stage2.gru_hidden {
            total += gru(width, hidden);
            width = 2 * hidden;
        }
        total += dense(width, self.doa_width);
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

struct ConvStack {
    convs: Vec<Conv2d>,
    bns: Vec<BatchNorm>,
    pools: Vec<MaxPoolFreq>,
}

pub struct DoaNet {
    config: NetworkConfig,
    dropout: Dropout,
    s1: ConvStack,
    s1_grus: Vec<BiGru>,
    s1_fc: Dense,
    s2_pad: EdgePadFreq,
    s2: ConvStack,
    s2_fc_reduce: Dense,
    s2_grus: Vec<BiGru>,
    s2_fc_out: Dense,
}

pub struct ForwardOutput<T> {
    /// Pseudo-spectrum regression head, `(L, sps_width, 1)`.
    pub sps: Tensor<T>,
    /// Per-node DOA probabilities, `(L, doa_width, 1)`.
    pub doa: Tensor<T>,
}

struct ConvStackCache<T> {
    conv_inputs: Vec<Tensor<T>>,
    relu_outputs: Vec<Tensor<T>>,
    bn_caches: Vec<BatchNormCache<T>>,
    pool_caches: Vec<MaxPoolCache>,
    drop_masks: Vec<Vec<bool>>,
}

pub struct ForwardCache<T> {
    s1_stack: ConvStackCache<T>,
    s1_gru_caches: Vec<BiGruCache<T>>,
    s1_gru_drop_masks: Vec<Vec<bool>>,
    s1_fc_cache: DenseCache<T>,
    stage2_teacher_forced: bool,
    s2_input_shape: [usize; 3],
    s2_stack: ConvStackCache<T>,
    s2_fc_reduce_cache: DenseCache<T>,
    s2_fc_drop_mask: Vec<bool>,
    s2_gru_caches: Vec<BiGruCache<T>>,
    s2_gru_drop_masks: Vec<Vec<bool>>,
    s2_fc_out_cache: DenseCache<T>,
    pub stats_updates: Vec<StatsUpdate<T>>,
}

impl DoaNet {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let build_stack = |prefix: &str, first_in: usize, blocks: &[ConvBlockConfig]| {
            let mut convs = Vec::new();
            let mut bns = Vec::new();
            let mut pools = Vec::new();
            let mut in_ch = first_in;
            for (i, block) in blocks.iter().enumerate() {
                convs.push(Conv2d::new(format!("{prefix}.conv{i}"), in_ch, block.filters));
                bns.push(BatchNorm::new(format!("{prefix}.bn{i}"), block.filters));
                pools.push(MaxPoolFreq::new(block.freq_pool));
                in_ch = block.filters;
            }
            ConvStack { convs, bns, pools }
        };

        let s1 = build_stack("s1", config.input_channels, &config.stage1.conv_blocks);
        let mut s1_grus = Vec::new();
        let mut width = config.stage1_reshaped_width();
        for (i, &hidden) in config.stage1.gru_hidden.iter().enumerate() {
            s1_grus.push(BiGru::new(format!("s1.gru{i}"), width, hidden));
            width = 2 * hidden;
        }
        let s1_fc = Dense::new("s1.fc", width, config.sps_width, DenseActivation::Linear);

        let s2 = build_stack("s2", 1, &config.stage2.conv_blocks);
        let s2_fc_reduce = Dense::new(
            "s2.fc_reduce",
            config.stage2_reshaped_width(),
            config.stage2.fc_reduce,
            DenseActivation::Linear,
        );
        let mut s2_grus = Vec::new();
        let mut width = config.stage2.fc_reduce;
        for (i, &hidden) in config.stage2.gru_hidden.iter().enumerate() {
            s2_grus.push(BiGru::new(format!("s2.gru{i}"), width, hidden));
            width = 2 * hidden;
        }
        let s2_fc_out = Dense::new("s2.fc_out", width, config.doa_width, DenseActivation::Sigmoid);

        Ok(Self {
            dropout: Dropout::new(config.dropout),
            s2_pad: EdgePadFreq::new(config.stage2.padded_width),
            config,
            s1,
            s1_grus,
            s1_fc,
            s2,
            s2_fc_reduce,
            s2_grus,
            s2_fc_out,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Freshly initialized parameters: weights uniform with a 1/sqrt(fan-in)
    /// bound, biases zero, batch-norm gamma 1 / beta 0, running stats (0, 1).
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (conv, bn) in self.s1.convs.iter().zip(&self.s1.bns) {
            conv.init(&mut store, &mut rng);
            bn.init(&mut store);
        }
        for gru in &self.s1_grus {
            gru.init(&mut store, &mut rng);
        }
        self.s1_fc.init(&mut store, &mut rng);
        for (conv, bn) in self.s2.convs.iter().zip(&self.s2.bns) {
            conv.init(&mut store, &mut rng);
            bn.init(&mut store);
        }
        self.s2_fc_reduce.init(&mut store, &mut rng);
        for gru in &self.s2_grus {
            gru.init(&mut store, &mut rng);
        }
        self.s2_fc_out.init(&mut store, &mut rng);
        store
    }

    /// Check that a loaded store carries exactly the blocks this
    /// architecture expects.
    pub fn validate_params<T: Scalar>(&self, params: &ParamStore<T>) -> Result<()> {
        let mut expected: Vec<(String, Vec<usize>, bool)> = Vec::new();
        for (conv, bn) in self.s1.convs.iter().zip(&self.s1.bns) {
            expected.extend(conv.block_shapes());
            expected.extend(bn.block_shapes());
        }
        for gru in &self.s1_grus {
            expected.extend(gru.block_shapes());
        }
        expected.extend(self.s1_fc.block_shapes());
        for (conv, bn) in self.s2.convs.iter().zip(&self.s2.bns) {
            expected.extend(conv.block_shapes());
            expected.extend(bn.block_shapes());
        }
        expected.extend(self.s2_fc_reduce.block_shapes());
        for gru in &self.s2_grus {
            expected.extend(gru.block_shapes());
        }
        expected.extend(self.s2_fc_out.block_shapes());

        if expected.len() != params.len() {
            return Err(Error::Format(format!(
                "parameter store has {} blocks, architecture expects {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape, _) in expected {
            if !params.contains(&name) {
                return Err(Error::Format(format!("missing parameter block {name}")));
            }
            if params.get(&name).shape != shape {
                return Err(Error::Format(format!(
                    "block {name}: shape {:?} does not match expected {:?}",
                    params.get(&name).shape,
                    shape
                )));
            }
        }
        Ok(())
    }

    fn conv_stack_forward<T: Scalar>(
        stack: &ConvStack,
        dropout: &Dropout,
        p: &ParamStore<T>,
        input: Tensor<T>,
        phase: Phase,
        mut rng: Option<&mut ChaCha12Rng>,
        updates: &mut Vec<StatsUpdate<T>>,
    ) -> (Tensor<T>, ConvStackCache<T>) {
        let mut cache = ConvStackCache {
            conv_inputs: Vec::new(),
            relu_outputs: Vec::new(),
            bn_caches: Vec::new(),
            pool_caches: Vec::new(),
            drop_masks: Vec::new(),
        };
        let mut x = input;
        for i in 0..stack.convs.len() {
            cache.conv_inputs.push(x.clone());
            let conv_out = stack.convs[i].forward(p, &x);
            let relu_out = relu_forward(&conv_out);
            cache.relu_outputs.push(relu_out.clone());
            let bn_out = match phase {
                Phase::Train => {
                    let (y, bn_cache, update) = stack.bns[i].forward_train(p, &relu_out);
                    cache.bn_caches.push(bn_cache);
                    updates.push(update);
                    y
                }
                Phase::Infer => stack.bns[i].forward_infer(p, &relu_out),
            };
            let (pooled, pool_cache) = stack.pools[i].forward(&bn_out);
            cache.pool_caches.push(pool_cache);
            x = match phase {
                Phase::Train => {
                    let (y, mask) = dropout.forward_train(&pooled, rng.as_deref_mut().unwrap());
                    cache.drop_masks.push(mask);
                    y
                }
                Phase::Infer => pooled,
            };
        }
        (x, cache)
    }

    /// Run the network. `Phase::Train` requires a dropout rng and returns a
    /// cache; inference is deterministic and cache-free. When `teacher_sps`
    /// is given, stage 2 consumes it instead of the stage-1 prediction and
    /// no gradient flows between the stages.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        phase: Phase,
        mut rng: Option<&mut ChaCha12Rng>,
        teacher_sps: Option<&Tensor<T>>,
    ) -> (ForwardOutput<T>, Option<ForwardCache<T>>) {
        let [l, bins, ch] = x.shape();
        assert_eq!(l, self.config.sequence_len, "sequence length mismatch");
        assert_eq!(bins, self.config.input_bins, "input bins mismatch");
        assert_eq!(ch, self.config.input_channels, "input channels mismatch");
        assert!(
            phase == Phase::Infer || rng.is_some(),
            "training forward needs a dropout rng"
        );
        let mut updates = Vec::new();

        // Stage 1: conv stack, reshape onto the time axis, GRUs, linear FC.
        let (conv_out, s1_stack) = Self::conv_stack_forward(
            &self.s1,
            &self.dropout,
            p,
            x.clone(),
            phase,
            rng.as_deref_mut(),
            &mut updates,
        );
        let mut h = conv_out.reshaped([l, self.config.stage1_reshaped_width(), 1]);
        let mut s1_gru_caches = Vec::new();
        let mut s1_gru_drop_masks = Vec::new();
        for gru in &self.s1_grus {
            let (y, gru_cache) = gru.forward(p, &h);
            s1_gru_caches.push(gru_cache);
            h = match phase {
                Phase::Train => {
                    let (y, mask) = self.dropout.forward_train(&y, rng.as_deref_mut().unwrap());
                    s1_gru_drop_masks.push(mask);
                    y
                }
                Phase::Infer => y,
            };
        }
        let (sps, s1_fc_cache) = self.s1_fc.forward(p, &h);

        // Stage 2: the pseudo-spectrum map as a one-channel image.
        let stage2_teacher_forced = teacher_sps.is_some();
        let s2_source = teacher_sps.unwrap_or(&sps);
        let s2_input = s2_source.clone().reshaped([l, self.config.sps_width, 1]);
        let s2_input_shape = s2_input.shape();
        let padded = self.s2_pad.forward(&s2_input);
        let (conv_out, s2_stack) = Self::conv_stack_forward(
            &self.s2,
            &self.dropout,
            p,
            padded,
            phase,
            rng.as_deref_mut(),
            &mut updates,
        );
        let reshaped = conv_out.reshaped([l, self.config.stage2_reshaped_width(), 1]);
        let (reduced, s2_fc_reduce_cache) = self.s2_fc_reduce.forward(p, &reshaped);
        let (mut h, s2_fc_drop_mask) = match phase {
            Phase::Train => {
                let (y, mask) = self
                    .dropout
                    .forward_train(&reduced, rng.as_deref_mut().unwrap());
                (y, mask)
            }
            Phase::Infer => (reduced, Vec::new()),
        };
        let mut s2_gru_caches = Vec::new();
        let mut s2_gru_drop_masks = Vec::new();
        for gru in &self.s2_grus {
            let (y, gru_cache) = gru.forward(p, &h);
            s2_gru_caches.push(gru_cache);
            h = match phase {
                Phase::Train => {
                    let (y, mask) = self.dropout.forward_train(&y, rng.as_deref_mut().unwrap());
                    s2_gru_drop_masks.push(mask);
                    y
                }
                Phase::Infer => y,
            };
        }
        let (doa, s2_fc_out_cache) = self.s2_fc_out.forward(p, &h);

        let output = ForwardOutput { sps: sps.clone(), doa };
        let cache = match phase {
            Phase::Train => Some(ForwardCache {
                s1_stack,
                s1_gru_caches,
                s1_gru_drop_masks,
                s1_fc_cache,
                stage2_teacher_forced,
                s2_input_shape,
                s2_stack,
                s2_fc_reduce_cache,
                s2_fc_drop_mask,
                s2_gru_caches,
                s2_gru_drop_masks,
                s2_fc_out_cache,
                stats_updates: updates,
            }),
            Phase::Infer => None,
        };
        (output, cache)
    }

    fn conv_stack_backward<T: Scalar>(
        stack: &ConvStack,
        dropout: &Dropout,
        p: &ParamStore<T>,
        cache: &ConvStackCache<T>,
        mut gout: Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Tensor<T> {
        for i in (0..stack.convs.len()).rev() {
            if !cache.drop_masks.is_empty() {
                gout = dropout.backward(&cache.drop_masks[i], &gout);
            }
            let g_bn_out = stack.pools[i].backward(&cache.pool_caches[i], &gout);
            let g_relu_out = stack.bns[i].backward(p, &cache.bn_caches[i], &g_bn_out, grads);
            let g_conv_out = relu_backward(&cache.relu_outputs[i], &g_relu_out);
            gout = stack.convs[i].backward(p, &cache.conv_inputs[i], &g_conv_out, grads);
        }
        gout
    }

    /// Backpropagate both heads; parameter gradients accumulate into
    /// `grads`.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &ForwardCache<T>,
        grad_sps: &Tensor<T>,
        grad_doa: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let l = self.config.sequence_len;

        // Stage 2 back to its input map.
        let mut g = self.s2_fc_out.backward(p, &cache.s2_fc_out_cache, grad_doa, grads);
        for (i, gru) in self.s2_grus.iter().enumerate().rev() {
            if !cache.s2_gru_drop_masks.is_empty() {
                g = self.dropout.backward(&cache.s2_gru_drop_masks[i], &g);
            }
            g = gru.backward(p, &cache.s2_gru_caches[i], &g, grads);
        }
        if !cache.s2_fc_drop_mask.is_empty() {
            g = self.dropout.backward(&cache.s2_fc_drop_mask, &g);
        }
        g = self
            .s2_fc_reduce
            .backward(p, &cache.s2_fc_reduce_cache, &g, grads);
        let g = g.reshaped([
            l,
            self.config.stage2_final_freq(),
            self.config.stage2.conv_blocks.last().unwrap().filters,
        ]);
        let g = Self::conv_stack_backward(&self.s2, &self.dropout, p, &cache.s2_stack, g, grads);
        let g_s2_input = self.s2_pad.backward(cache.s2_input_shape, &g);

        // Total gradient at the stage-1 SPS head.
        let mut g_sps = grad_sps.clone();
        if !cache.stage2_teacher_forced {
            for (a, &b) in g_sps.data_mut().iter_mut().zip(g_s2_input.data()) {
                *a += b;
            }
        }

        // Stage 1.
        let mut g = self.s1_fc.backward(p, &cache.s1_fc_cache, &g_sps, grads);
        for (i, gru) in self.s1_grus.iter().enumerate().rev() {
            if !cache.s1_gru_drop_masks.is_empty() {
                g = self.dropout.backward(&cache.s1_gru_drop_masks[i], &g);
            }
            g = gru.backward(p, &cache.s1_gru_caches[i], &g, grads);
        }
        let g = g.reshaped([
            l,
            self.config.stage1_final_freq(),
            self.config.stage1.conv_blocks.last().unwrap().filters,
        ]);
        Self::conv_stack_backward(&self.s1, &self.dropout, p, &cache.s1_stack, g, grads);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::losses;
    use crate::nn::testutil::relative_error;
    use rand::{Rng, SeedableRng};

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            sequence_len: 4,
            input_bins: 16,
            input_channels: 3,
            sps_width: 6,
            doa_width: 4,
            dropout: 0.2,
            stage1: Stage1Config {
                conv_blocks: vec![
                    ConvBlockConfig { filters: 4, freq_pool: 4 },
                    ConvBlockConfig { filters: 6, freq_pool: 4 },
                ],
                gru_hidden: vec![5],
            },
            stage2: Stage2Config {
                conv_blocks: vec![ConvBlockConfig { filters: 3, freq_pool: 5 }],
                padded_width: 10,
                fc_reduce: 3,
                gru_hidden: vec![4],
            },
        }
    }

    fn random_input(config: &NetworkConfig, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n = config.sequence_len * config.input_bins * config.input_channels;
        Tensor::from_vec(
            [config.sequence_len, config.input_bins, config.input_channels],
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn random_targets(config: &NetworkConfig, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n_sps = config.sequence_len * config.sps_width;
        let sps = Tensor::from_vec(
            [config.sequence_len, config.sps_width, 1],
            (0..n_sps).map(|_| rng.random_range(0.0..1.0)).collect(),
        );
        let n_doa = config.sequence_len * config.doa_width;
        let doa = Tensor::from_vec(
            [config.sequence_len, config.doa_width, 1],
            (0..n_doa)
                .map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 })
                .collect(),
        );
        (sps, doa)
    }

    #[test]
    fn default_config_parameter_count() {
        let config = NetworkConfig::default();
        let net = DoaNet::new(config.clone()).unwrap();
        let params: ParamStore<f32> = net.init_params(1);
        let reported = params.parameter_count(true);
        assert_eq!(reported, config.parameter_count());
        assert!(
            (400_000..=900_000).contains(&reported),
            "parameter count {reported} outside the sanity band"
        );
        net.validate_params(&params).unwrap();
    }

    #[test]
    fn output_shapes_and_probability_range() {
        let config = tiny_config();
        let net = DoaNet::new(config.clone()).unwrap();
        let params: ParamStore<f64> = net.init_params(3);
        let x = random_input(&config, 5);
        let (out, cache) = net.forward(&params, &x, Phase::Infer, None, None);
        assert!(cache.is_none());
        assert_eq!(out.sps.shape(), [4, 6, 1]);
        assert_eq!(out.doa.shape(), [4, 4, 1]);
        assert!(out.doa.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zeroed_doa_head_gives_half_probabilities() {
        let config = tiny_config();
        let net = DoaNet::new(config.clone()).unwrap();
        let mut params: ParamStore<f64> = net.init_params(4);
        for v in &mut params.get_mut("s2.fc_out.weight").data {
            *v = 0.0;
        }
        for v in &mut params.get_mut("s2.fc_out.bias").data {
            *v = 0.0;
        }
        let x = random_input(&config, 6);
        let (out, _) = net.forward(&params, &x, Phase::Infer, None, None);
        assert!(out.doa.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn infer_forward_is_deterministic() {
        let config = tiny_config();
        let net = DoaNet::new(config.clone()).unwrap();
        let params: ParamStore<f64> = net.init_params(9);
        let x = random_input(&config, 10);
        let (a, _) = net.forward(&params, &x, Phase::Infer, None, None);
        let (b, _) = net.forward(&params, &x, Phase::Infer, None, None);
        assert_eq!(a.sps, b.sps);
        assert_eq!(a.doa, b.doa);
    }

    /// End-to-end gradient check through both stages and the summed loss,
    /// dropout included (the rng is re-seeded per evaluation so the masks
    /// are frozen).
    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let config = tiny_config();
        let net = DoaNet::new(config.clone()).unwrap();
        let params: ParamStore<f64> = net.init_params(11);
        let x = random_input(&config, 12);
        let (sps_t, doa_t) = random_targets(&config, 13);
        let valid = 3;

        let loss_of = |p: &ParamStore<f64>| -> f64 {
            let mut rng = ChaCha12Rng::seed_from_u64(555);
            let (out, _) = net.forward(p, &x, Phase::Train, Some(&mut rng), None);
            losses(&out.sps, &sps_t, &out.doa, &doa_t, valid, (1.0, 1.0))
                .0
                .total
        };

        let mut rng = ChaCha12Rng::seed_from_u64(555);
        let (out, cache) = net.forward(&params, &x, Phase::Train, Some(&mut rng), None);
        let cache = cache.unwrap();
        let (_, g_sps, g_doa) = losses(&out.sps, &sps_t, &out.doa, &doa_t, valid, (1.0, 1.0));
        let mut grads = Grads::zeros_like(&params);
        net.backward(&params, &cache, &g_sps, &g_doa, &mut grads);

        let mut check_rng = ChaCha12Rng::seed_from_u64(77);
        let names: Vec<String> = params
            .iter()
            .filter(|(_, b)| b.trainable)
            .map(|(n, _)| n.clone())
            .collect();
        let mut checked = 0;
        for name in names {
            let len = params.get(&name).data.len();
            for _ in 0..3.min(len) {
                let idx = check_rng.random_range(0..len);
                let theta = params.get(&name).data[idx];
                let h = 1e-5 * theta.abs().max(1.0);
                let mut plus = params.clone();
                plus.get_mut(&name).data[idx] = theta + h;
                let mut minus = params.clone();
                minus.get_mut(&name).data[idx] = theta - h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = grads.block(&name)[idx];
                let err = relative_error(analytic, fd);
                assert!(
                    err < 1e-4,
                    "{name}[{idx}]: analytic {analytic:.4e} vs fd {fd:.4e} (rel {err:.2e})"
                );
                checked += 1;
            }
        }
        assert!(checked >= 60, "only {checked} coordinates checked");
    }

    #[test]
    fn teacher_forcing_blocks_inter_stage_gradient() {
        let config = tiny_config();
        let net = DoaNet::new(config.clone()).unwrap();
        let params: ParamStore<f64> = net.init_params(21);
        let x = random_input(&config, 22);
        let (sps_t, doa_t) = random_targets(&config, 23);

        // With teacher forcing, stage-1 gradients must equal the MSE-only
        // gradients (no path from the BCE head into stage 1).
        let run = |teacher: bool, weights: (f64, f64)| -> Grads<f64> {
            let mut rng = ChaCha12Rng::seed_from_u64(99);
            let teacher_ref = teacher.then_some(&sps_t);
            let (out, cache) =
                net.forward(&params, &x, Phase::Train, Some(&mut rng), teacher_ref);
            let cache = cache.unwrap();
            let (_, g_sps, g_doa) = losses(&out.sps, &sps_t, &out.doa, &doa_t, 4, weights);
            let mut grads = Grads::zeros_like(&params);
            net.backward(&params, &cache, &g_sps, &g_doa, &mut grads);
            grads
        };
        let forced = run(true, (1.0, 1.0));
        let mse_only = run(true, (1.0, 0.0));
        for (name, block) in forced.iter() {
            if name.starts_with("s1.") {
                assert_eq!(block, mse_only.block(name), "stage-1 grads differ in {name}");
            }
        }
        // Sanity: without teacher forcing the BCE head does reach stage 1.
        let free = run(false, (1.0, 1.0));
        let with_bce = free.block("s1.fc.bias");
        let without = run(false, (1.0, 0.0));
        assert_ne!(with_bce, without.block("s1.fc.bias"));
    }
}
