//! DenseNet-BC assembly.
//!
//! The `densenet21` preset uses four dense blocks of two bottleneck layers
//! each. Counting weighted layers the usual DenseNet way (stem conv, two convs
//! per bottleneck layer, one conv per transition, classifier) gives
//! 1 + 2·8 + 3 + 1 = 21.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    avgpool2x2_bwd, avgpool2x2_fwd, global_avgpool_bwd, global_avgpool_fwd, maxpool_bwd, maxpool_fwd, relu_bwd,
    relu_fwd, BatchNorm2d, BnCache, Conv2d, Linear, MaxPoolCache, Mode, Param, Real, Tensor4,
};
use crate::NUM_CLASSES;

pub const PRESET_DENSENET21: &str = "densenet21";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// 7×7 stride-2 conv, BN, ReLU, 3×3 stride-2 max pool (4× reduction).
    Standard,
    /// 3×3 stride-1 conv, BN, ReLU; for tiny inputs and gradient checks.
    Compact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub preset: String,
    pub block_config: Vec<usize>,
    pub growth_rate: usize,
    pub compression: f64,
    pub num_classes: usize,
    pub input_size: usize,
    pub stem: StemKind,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig::densenet21(32, 0.5)
    }
}

impl ArchitectureConfig {
    pub fn densenet21(growth_rate: usize, compression: f64) -> Self {
        ArchitectureConfig {
            preset: PRESET_DENSENET21.into(),
            block_config: vec![2, 2, 2, 2],
            growth_rate,
            compression,
            num_classes: NUM_CLASSES,
            input_size: 224,
            stem: StemKind::Standard,
        }
    }

    /// Small variant for desk-scale checks.
    pub fn tiny(growth_rate: usize, input_size: usize, stem: StemKind) -> Self {
        ArchitectureConfig { input_size, stem, ..ArchitectureConfig::densenet21(growth_rate, 0.5) }
    }

    fn stem_reduction(&self) -> usize {
        match self.stem {
            StemKind::Standard => 4,
            StemKind::Compact => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.preset == PRESET_DENSENET21 && self.block_config != [2, 2, 2, 2] {
            return bad(format!("preset {} requires block config (2,2,2,2)", self.preset));
        }
        if self.block_config.is_empty() || self.block_config.contains(&0) {
            return bad(format!("invalid block config {:?}", self.block_config));
        }
        if self.growth_rate == 0 {
            return bad("growth rate must be at least 1".into());
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression must be in (0, 1], got {}", self.compression));
        }
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        let factor = self.stem_reduction() << (self.block_config.len() - 1);
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            return bad(format!("input size {} must be a positive multiple of {factor}", self.input_size));
        }
        for c in self.channel_trace().windows(2).skip(1).step_by(2) {
            if c[1] == 0 {
                return bad("compression leaves a transition with zero channels".into());
            }
        }
        Ok(())
    }

    /// Channels after the stem, then after each block and each transition.
    pub fn channel_trace(&self) -> Vec<usize> {
        let k = self.growth_rate;
        let mut c = 2 * k;
        let mut trace = vec![c];
        for (i, &layers) in self.block_config.iter().enumerate() {
            c += layers * k;
            trace.push(c);
            if i + 1 < self.block_config.len() {
                c = (self.compression * c as f64).floor() as usize;
                trace.push(c);
            }
        }
        trace
    }

    /// Input side, after the stem conv, after the stem pool, after each
    /// transition, and after global pooling.
    pub fn spatial_trace(&self) -> Vec<usize> {
        let mut s = self.input_size;
        let mut t = vec![s];
        if self.stem == StemKind::Standard {
            s /= 2;
            t.push(s);
            s /= 2;
            t.push(s);
        }
        for _ in 1..self.block_config.len() {
            s /= 2;
            t.push(s);
        }
        t.push(1);
        t
    }

    pub fn weighted_layer_count(&self) -> usize {
        1 + 2 * self.block_config.iter().sum::<usize>() + (self.block_config.len() - 1) + 1
    }

    /// Trainable scalar count, computed from the configuration alone.
    pub fn param_count(&self) -> usize {
        let k = self.growth_rate;
        let stem_k = match self.stem {
            StemKind::Standard => 7,
            StemKind::Compact => 3,
        };
        let bn = |c: usize| 2 * c;
        let mut c = 2 * k;
        let mut total = 3 * c * stem_k * stem_k + bn(c);
        for (i, &layers) in self.block_config.iter().enumerate() {
            for _ in 0..layers {
                total += bn(c) + c * 4 * k + bn(4 * k) + 4 * k * k * 9;
                c += k;
            }
            if i + 1 < self.block_config.len() {
                let out = (self.compression * c as f64).floor() as usize;
                total += bn(c) + c * out;
                c = out;
            }
        }
        total + bn(c) + c * self.num_classes + self.num_classes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub bn1: BatchNorm2d<T>,
    pub conv1: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub bn: BatchNorm2d<T>,
    pub conv: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<T> {
    pub config: ArchitectureConfig,
    pub stem_conv: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    pub blocks: Vec<Vec<DenseLayer<T>>>,
    pub transitions: Vec<Transition<T>>,
    pub final_bn: BatchNorm2d<T>,
    pub classifier: Linear<T>,
}

struct BnReluCache<T> {
    bn: BnCache<T>,
    pre: Tensor4<T>,
    post: Tensor4<T>,
}

struct LayerTape<T> {
    input: Tensor4<T>,
    a1: BnReluCache<T>,
    a2: BnReluCache<T>,
}

struct TransitionTape<T> {
    a: BnReluCache<T>,
    conv_out_shape: [usize; 4],
}

/// Activations retained by a training forward pass.
pub struct Tape<T> {
    input: Tensor4<T>,
    stem: BnReluCache<T>,
    stem_pool: Option<MaxPoolCache>,
    layers: Vec<Vec<LayerTape<T>>>,
    transitions: Vec<TransitionTape<T>>,
    head: BnReluCache<T>,
    pooled: Tensor4<T>,
}

impl<T: Real> Tape<T> {
    /// Shapes of the tensors actually produced at each stage boundary:
    /// input, stem, each block output and transition output, head pool.
    pub fn stage_shapes(&self) -> Vec<(String, [usize; 4])> {
        let mut out =
            vec![("input".to_string(), self.input.shape()), ("stem.conv".to_string(), self.stem.post.shape())];
        for (bi, block) in self.layers.iter().enumerate() {
            if let Some(first) = block.first() {
                let name = if bi == 0 { "stem.out".to_string() } else { format!("transition{bi}") };
                out.push((name, first.input.shape()));
            }
            let block_out = match self.transitions.get(bi) {
                Some(t) => t.a.pre.shape(),
                None => self.head.pre.shape(),
            };
            out.push((format!("block{}", bi + 1), block_out));
        }
        out.push(("global_pool".to_string(), self.pooled.shape()));
        out
    }
}

fn bn_relu_train<T: Real>(bn: &mut BatchNorm2d<T>, x: &Tensor4<T>) -> Result<BnReluCache<T>> {
    let (pre, cache) = bn.forward(x, Mode::Train)?;
    let post = relu_fwd(&pre);
    Ok(BnReluCache { bn: cache, pre, post })
}

fn bn_relu_back<T: Real>(bn: &mut BatchNorm2d<T>, c: &BnReluCache<T>, d_post: &Tensor4<T>) -> Result<Tensor4<T>> {
    let d_pre = relu_bwd(&c.pre, d_post);
    bn.backward(&c.bn, &d_pre)
}

fn bn_relu_eval<T: Real>(bn: &BatchNorm2d<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    Ok(relu_fwd(&bn.infer(x)?))
}

impl<T: Real> DenseNet<T> {
    pub fn build(config: ArchitectureConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let k = config.growth_rate;
        let stem_conv = match config.stem {
            StemKind::Standard => Conv2d::new(3, 2 * k, 7, 2, 3, &mut rng),
            StemKind::Compact => Conv2d::new(3, 2 * k, 3, 1, 1, &mut rng),
        };
        let mut c = 2 * k;
        let stem_bn = BatchNorm2d::new(c);
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (i, &layers) in config.block_config.iter().enumerate() {
            let mut block = Vec::new();
            for _ in 0..layers {
                block.push(DenseLayer {
                    bn1: BatchNorm2d::new(c),
                    conv1: Conv2d::new(c, 4 * k, 1, 1, 0, &mut rng),
                    bn2: BatchNorm2d::new(4 * k),
                    conv2: Conv2d::new(4 * k, k, 3, 1, 1, &mut rng),
                });
                c += k;
            }
            blocks.push(block);
            if i + 1 < config.block_config.len() {
                let out = (config.compression * c as f64).floor() as usize;
                transitions.push(Transition { bn: BatchNorm2d::new(c), conv: Conv2d::new(c, out, 1, 1, 0, &mut rng) });
                c = out;
            }
        }
        let final_bn = BatchNorm2d::new(c);
        let classifier = Linear::new(c, config.num_classes, &mut rng);
        Ok(DenseNet { config, stem_conv, stem_bn, blocks, transitions, final_bn, classifier })
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = self.config.input_size;
        if x.c() != 3 || x.h() != s || x.w() != s {
            let trace: Vec<String> = self.config.spatial_trace().iter().map(|v| v.to_string()).collect();
            return Err(Error::Shape(format!(
                "expected N×3×{s}×{s} input (spatial trace {}), got {:?}",
                trace.join("→"),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode forward; batch statistics are used and running
    /// statistics updated. Returns logits (N × classes) and the tape.
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Vec<T>, Tape<T>)> {
        self.check_input(x)?;
        let stem = bn_relu_train(&mut self.stem_bn, &self.stem_conv.forward(x)?)?;
        let (mut feat, stem_pool) = match self.config.stem {
            StemKind::Standard => {
                let (y, c) = maxpool_fwd(&stem.post, 3, 2, 1)?;
                (y, Some(c))
            }
            StemKind::Compact => (stem.post.clone(), None),
        };
        let mut layers = Vec::new();
        let mut transitions = Vec::new();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            let mut tapes = Vec::new();
            for layer in block.iter_mut() {
                let a1 = bn_relu_train(&mut layer.bn1, &feat)?;
                let mid = layer.conv1.forward(&a1.post)?;
                let a2 = bn_relu_train(&mut layer.bn2, &mid)?;
                let new = layer.conv2.forward(&a2.post)?;
                let next = Tensor4::concat_channels(&feat, &new)?;
                tapes.push(LayerTape { input: feat, a1, a2 });
                feat = next;
            }
            layers.push(tapes);
            if let Some(t) = self.transitions.get_mut(bi) {
                let a = bn_relu_train(&mut t.bn, &feat)?;
                let conv_out = t.conv.forward(&a.post)?;
                feat = avgpool2x2_fwd(&conv_out)?;
                transitions.push(TransitionTape { a, conv_out_shape: conv_out.shape() });
            }
        }
        let head = bn_relu_train(&mut self.final_bn, &feat)?;
        let pooled = global_avgpool_fwd(&head.post);
        let logits = self.classifier.forward(pooled.data(), pooled.n())?;
        let tape = Tape { input: x.clone(), stem, stem_pool, layers, transitions, head, pooled };
        Ok((logits, tape))
    }

    /// Accumulates parameter gradients from `d_logits`; returns the input gradient.
    pub fn backward(&mut self, tape: Tape<T>, d_logits: &[T]) -> Result<Tensor4<T>> {
        let n = tape.pooled.n();
        let d_pooled = self.classifier.backward(tape.pooled.data(), n, d_logits);
        let d_pooled = Tensor4::from_vec(tape.pooled.shape(), d_pooled)?;
        let d_head = global_avgpool_bwd(&d_pooled, tape.head.post.shape());
        let mut d_feat = bn_relu_back(&mut self.final_bn, &tape.head, &d_head)?;

        let mut layer_tapes = tape.layers;
        let mut trans_tapes = tape.transitions;
        for bi in (0..self.blocks.len()).rev() {
            if bi < self.transitions.len() {
                let tt = trans_tapes.pop().expect("transition tape");
                let t = &mut self.transitions[bi];
                let d_conv = avgpool2x2_bwd(&d_feat, tt.conv_out_shape);
                let d_a = t.conv.backward(&tt.a.post, &d_conv)?;
                d_feat = bn_relu_back(&mut t.bn, &tt.a, &d_a)?;
            }
            let tapes = layer_tapes.pop().expect("block tape");
            for (layer, lt) in self.blocks[bi].iter_mut().zip(tapes).rev() {
                let (d_prev, d_new) = d_feat.split_channels(lt.input.c());
                let d_a2 = layer.conv2.backward(&lt.a2.post, &d_new)?;
                let d_mid = bn_relu_back(&mut layer.bn2, &lt.a2, &d_a2)?;
                let d_a1 = layer.conv1.backward(&lt.a1.post, &d_mid)?;
                let mut d_in = bn_relu_back(&mut layer.bn1, &lt.a1, &d_a1)?;
                d_in.add_assign(&d_prev);
                d_feat = d_in;
            }
        }
        let d_stem_post = match &tape.stem_pool {
            Some(c) => maxpool_bwd(c, &d_feat),
            None => d_feat,
        };
        let d_conv = bn_relu_back(&mut self.stem_bn, &tape.stem, &d_stem_post)?;
        self.stem_conv.backward(&tape.input, &d_conv)
    }

    /// Eval-mode forward using running statistics; the model is not mutated.
    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        let stem = bn_relu_eval(&self.stem_bn, &self.stem_conv.forward(x)?)?;
        let mut feat = match self.config.stem {
            StemKind::Standard => maxpool_fwd(&stem, 3, 2, 1)?.0,
            StemKind::Compact => stem,
        };
        for (bi, block) in self.blocks.iter().enumerate() {
            for layer in block {
                let a1 = bn_relu_eval(&layer.bn1, &feat)?;
                let a2 = bn_relu_eval(&layer.bn2, &layer.conv1.forward(&a1)?)?;
                let new = layer.conv2.forward(&a2)?;
                feat = Tensor4::concat_channels(&feat, &new)?;
            }
            if let Some(t) = self.transitions.get(bi) {
                let a = bn_relu_eval(&t.bn, &feat)?;
                feat = avgpool2x2_fwd(&t.conv.forward(&a)?)?;
            }
        }
        let pooled = global_avgpool_fwd(&bn_relu_eval(&self.final_bn, &feat)?);
        self.classifier.forward(pooled.data(), pooled.n())
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Vec<T>> {
        match mode {
            Mode::Train => Ok(self.forward_train(x)?.0),
            Mode::Eval => self.forward_eval(x),
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn batchnorms(&self) -> Vec<(String, &BatchNorm2d<T>)> {
        let mut v = vec![("stem.bn".to_string(), &self.stem_bn)];
        for (bi, block) in self.blocks.iter().enumerate() {
            for (li, l) in block.iter().enumerate() {
                v.push((format!("block{}.layer{}.bn1", bi + 1, li + 1), &l.bn1));
                v.push((format!("block{}.layer{}.bn2", bi + 1, li + 1), &l.bn2));
            }
            if let Some(t) = self.transitions.get(bi) {
                v.push((format!("transition{}.bn", bi + 1), &t.bn));
            }
        }
        v.push(("final.bn".to_string(), &self.final_bn));
        v
    }

    fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        let mut v = vec![&mut self.stem_bn];
        let mut trans = self.transitions.iter_mut();
        for block in self.blocks.iter_mut() {
            for l in block.iter_mut() {
                v.push(&mut l.bn1);
                v.push(&mut l.bn2);
            }
            if let Some(t) = trans.next() {
                v.push(&mut t.bn);
            }
        }
        v.push(&mut self.final_bn);
        v
    }

    /// Trainable parameters with stable names, in optimizer order.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = vec![
            ("stem.conv.weight".to_string(), &self.stem_conv.weight),
            ("stem.bn.gamma".to_string(), &self.stem_bn.gamma),
            ("stem.bn.beta".to_string(), &self.stem_bn.beta),
        ];
        for (bi, block) in self.blocks.iter().enumerate() {
            for (li, l) in block.iter().enumerate() {
                let p = format!("block{}.layer{}", bi + 1, li + 1);
                v.push((format!("{p}.bn1.gamma"), &l.bn1.gamma));
                v.push((format!("{p}.bn1.beta"), &l.bn1.beta));
                v.push((format!("{p}.conv1.weight"), &l.conv1.weight));
                v.push((format!("{p}.bn2.gamma"), &l.bn2.gamma));
                v.push((format!("{p}.bn2.beta"), &l.bn2.beta));
                v.push((format!("{p}.conv2.weight"), &l.conv2.weight));
            }
            if let Some(t) = self.transitions.get(bi) {
                let p = format!("transition{}", bi + 1);
                v.push((format!("{p}.bn.gamma"), &t.bn.gamma));
                v.push((format!("{p}.bn.beta"), &t.bn.beta));
                v.push((format!("{p}.conv.weight"), &t.conv.weight));
            }
        }
        v.push(("final.bn.gamma".to_string(), &self.final_bn.gamma));
        v.push(("final.bn.beta".to_string(), &self.final_bn.beta));
        v.push(("classifier.weight".to_string(), &self.classifier.weight));
        v.push(("classifier.bias".to_string(), &self.classifier.bias));
        v
    }

    /// Same order as [`DenseNet::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.stem_conv.weight, &mut self.stem_bn.gamma, &mut self.stem_bn.beta];
        let mut trans = self.transitions.iter_mut();
        for block in self.blocks.iter_mut() {
            for l in block.iter_mut() {
                v.push(&mut l.bn1.gamma);
                v.push(&mut l.bn1.beta);
                v.push(&mut l.conv1.weight);
                v.push(&mut l.bn2.gamma);
                v.push(&mut l.bn2.beta);
                v.push(&mut l.conv2.weight);
            }
            if let Some(t) = trans.next() {
                v.push(&mut t.bn.gamma);
                v.push(&mut t.bn.beta);
                v.push(&mut t.conv.weight);
            }
        }
        v.push(&mut self.final_bn.gamma);
        v.push(&mut self.final_bn.beta);
        v.push(&mut self.classifier.weight);
        v.push(&mut self.classifier.bias);
        v
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Running mean/var of every batchnorm as named buffers.
    pub fn named_buffers(&self) -> Vec<(String, Vec<T>)> {
        self.batchnorms()
            .into_iter()
            .flat_map(|(name, bn)| {
                [
                    (format!("{name}.running_mean"), bn.running_mean.clone()),
                    (format!("{name}.running_var"), bn.running_var.clone()),
                ]
            })
            .collect()
    }

    /// Restores buffers in [`DenseNet::named_buffers`] order and marks the
    /// statistics as tracked.
    pub fn set_buffers(&mut self, buffers: Vec<Vec<T>>, tracked: u64) -> Result<()> {
        let mut it = buffers.into_iter();
        for bn in self.batchnorms_mut() {
            let (Some(m), Some(v)) = (it.next(), it.next()) else {
                return Err(Error::Checkpoint("too few batchnorm buffers".into()));
            };
            if m.len() != bn.channels() || v.len() != bn.channels() {
                return Err(Error::Checkpoint("batchnorm buffer length mismatch".into()));
            }
            bn.running_mean = m;
            bn.running_var = v;
            bn.tracked = tracked;
        }
        if it.next().is_some() {
            return Err(Error::Checkpoint("too many batchnorm buffers".into()));
        }
        Ok(())
    }

    pub fn stats_tracked(&self) -> u64 {
        self.stem_bn.tracked
    }

    /// Input channel count of every dense layer, per block.
    pub fn dense_layer_inputs(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|b| b.iter().map(|l| l.conv1.in_channels()).collect()).collect()
    }

    pub fn cast<U: Real>(&self) -> DenseNet<U> {
        DenseNet {
            config: self.config.clone(),
            stem_conv: self.stem_conv.cast(),
            stem_bn: self.stem_bn.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|l| DenseLayer {
                            bn1: l.bn1.cast(),
                            conv1: l.conv1.cast(),
                            bn2: l.bn2.cast(),
                            conv2: l.conv2.cast(),
                        })
                        .collect()
                })
                .collect(),
            transitions: self.transitions.iter().map(|t| Transition { bn: t.bn.cast(), conv: t.conv.cast() }).collect(),
            final_bn: self.final_bn.cast(),
            classifier: self.classifier.cast(),
        }
    }
}

/// Index of the largest logit per row; ties go to the lowest index.
pub fn argmax_rows<T: Real>(logits: &[T], k: usize) -> Vec<usize> {
    logits
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
