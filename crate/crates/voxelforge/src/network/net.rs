//! The completion network: a 2-channel (surface + edge) encoder-decoder
//! predicting 12 class logits at quarter resolution, with three fusion
//! schemes that spend an identical channel budget at every level.
//!
//! Early fusion feeds both modalities to one input branch. Middle fusion
//! gives each modality a half-width branch and fuses before the shared
//! encoder. Late fusion also duplicates the encoder and fuses before the
//! decoder. The decoder upsamples (nearest + conv), merges the skip tap
//! from quarter resolution, and maps to class logits.

use super::blocks::{
    relu_backward, relu_forward, upsample_nearest, upsample_nearest_backward, ResBlock, ResCache,
};
use super::conv::{conv3d_backward, conv3d_forward, Conv3Params, ConvGrads};
use super::tensor::{Scalar, Tensor5};
use super::NetworkError;
use crate::geometry::VoxelGridSpec;
use crate::metrics::LabelVolume;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionScheme {
    Early,
    Middle,
    Late,
}

impl FusionScheme {
    pub fn name(self) -> &'static str {
        match self {
            FusionScheme::Early => "ef",
            FusionScheme::Middle => "mf",
            FusionScheme::Late => "lf",
        }
    }
}

/// Number of semantic classes plus empty.
pub const CLASS_COUNT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub class_count: usize,
    pub fusion: FusionScheme,
    /// Input spatial dims as (d, h, w) = (z, y, x) voxel counts.
    pub input_dims: [usize; 3],
    /// Dilation per ResNet module at the lowest resolution.
    pub encoder_dilations: Vec<usize>,
}

impl NetworkConfig {
    pub fn toy(fusion: FusionScheme, input_dims: [usize; 3]) -> Self {
        Self {
            base_channels: 16,
            class_count: CLASS_COUNT,
            fusion,
            input_dims,
            encoder_dilations: vec![1, 2],
        }
    }

    /// Output spatial dims: input reduced by 4.
    pub fn output_dims(&self) -> [usize; 3] {
        [self.input_dims[0] / 4, self.input_dims[1] / 4, self.input_dims[2] / 4]
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if self.class_count != CLASS_COUNT {
            return Err(NetworkError::BadClassCount(self.class_count));
        }
        if self.input_dims.iter().any(|d| *d == 0 || d % 4 != 0) {
            return Err(NetworkError::InvalidDims(self.input_dims));
        }
        if self.encoder_dilations.is_empty() {
            return Err(NetworkError::NoDilations);
        }
        let b = self.base_channels;
        let needs_even = !matches!(self.fusion, FusionScheme::Early);
        if b == 0 || (needs_even && b % 2 != 0) {
            return Err(NetworkError::BadBaseChannels(b));
        }
        Ok(())
    }
}

/// Two stride-2 convolutions: full resolution to 1/4.
#[derive(Debug, Clone, PartialEq)]
struct Branch<T> {
    conv1: Conv3Params<T>,
    conv2: Conv3Params<T>,
}

/// One stride-2 convolution to 1/8 plus dilated ResNet modules.
#[derive(Debug, Clone, PartialEq)]
struct Encoder<T> {
    down: Conv3Params<T>,
    blocks: Vec<ResBlock<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Decoder<T> {
    conv_up: Conv3Params<T>,
    conv_merge: Conv3Params<T>,
    block: ResBlock<T>,
    head: Conv3Params<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionNet<T> {
    cfg: NetworkConfig,
    branches: Vec<Branch<T>>,
    encoders: Vec<Encoder<T>>,
    decoder: Decoder<T>,
}

struct BranchCache<T> {
    x: Tensor5<T>,
    a1: Tensor5<T>,
    r1: Tensor5<T>,
    a2: Tensor5<T>,
}

struct EncCache<T> {
    x: Tensor5<T>,
    a_down: Tensor5<T>,
    blocks: Vec<ResCache<T>>,
}

struct DecCache<T> {
    bott_shape: [usize; 5],
    up_out: Tensor5<T>,
    a_up: Tensor5<T>,
    concat: Tensor5<T>,
    a_merge: Tensor5<T>,
    block: ResCache<T>,
    block_out: Tensor5<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct NetCache<T> {
    branch: Vec<BranchCache<T>>,
    enc: Vec<EncCache<T>>,
    dec: DecCache<T>,
}

/// Per-convolution gradients in the same order as [`CompletionNet`]
/// parameter iteration.
pub struct NetGrads<T> {
    pub per_conv: Vec<ConvGrads<T>>,
}

impl<T: Scalar> NetGrads<T> {
    /// Flattens to one slice-aligned vec per parameter tensor, weights then
    /// bias per convolution.
    pub fn flatten(self) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(self.per_conv.len() * 2);
        for g in self.per_conv {
            out.push(g.weights);
            out.push(g.bias);
        }
        out
    }
}

impl<T: Scalar> CompletionNet<T> {
    /// Builds the network with He-initialized weights drawn from a seeded
    /// generator in declaration order.
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = cfg.base_channels;
        let k = [3, 3, 3];
        let branch = |c_in: usize, c_mid: usize, c_out: usize, rng: &mut ChaCha8Rng| {
            Ok::<_, NetworkError>(Branch {
                conv1: Conv3Params::he_init(c_mid, c_in, k, 2, 1, 1, rng)?,
                conv2: Conv3Params::he_init(c_out, c_mid, k, 2, 1, 1, rng)?,
            })
        };
        let encoder = |c_in: usize, c_out: usize, rng: &mut ChaCha8Rng| {
            Ok::<_, NetworkError>(Encoder {
                down: Conv3Params::he_init(c_out, c_in, k, 2, 1, 1, rng)?,
                blocks: cfg
                    .encoder_dilations
                    .iter()
                    .map(|&d| ResBlock::he_init(c_out, d, rng))
                    .collect::<Result<_, _>>()?,
            })
        };
        let (branches, encoders) = match cfg.fusion {
            FusionScheme::Early => (
                vec![branch(2, b, 2 * b, &mut rng)?],
                vec![encoder(2 * b, 4 * b, &mut rng)?],
            ),
            FusionScheme::Middle => (
                vec![branch(1, b / 2, b, &mut rng)?, branch(1, b / 2, b, &mut rng)?],
                vec![encoder(2 * b, 4 * b, &mut rng)?],
            ),
            FusionScheme::Late => (
                vec![branch(1, b / 2, b, &mut rng)?, branch(1, b / 2, b, &mut rng)?],
                vec![encoder(b, 2 * b, &mut rng)?, encoder(b, 2 * b, &mut rng)?],
            ),
        };
        let decoder = Decoder {
            conv_up: Conv3Params::he_init(2 * b, 4 * b, k, 1, 1, 1, &mut rng)?,
            conv_merge: Conv3Params::he_init(2 * b, 4 * b, k, 1, 1, 1, &mut rng)?,
            block: ResBlock::he_init(2 * b, 1, &mut rng)?,
            head: Conv3Params::he_init(cfg.class_count, 2 * b, k, 1, 1, 1, &mut rng)?,
        };
        Ok(Self { cfg, branches, encoders, decoder })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    fn conv_list(&self) -> Vec<&Conv3Params<T>> {
        let mut out = Vec::new();
        for b in &self.branches {
            out.push(&b.conv1);
            out.push(&b.conv2);
        }
        for e in &self.encoders {
            out.push(&e.down);
            for r in &e.blocks {
                out.push(&r.conv1);
                out.push(&r.conv2);
            }
        }
        out.push(&self.decoder.conv_up);
        out.push(&self.decoder.conv_merge);
        out.push(&self.decoder.block.conv1);
        out.push(&self.decoder.block.conv2);
        out.push(&self.decoder.head);
        out
    }

    fn conv_list_mut(&mut self) -> Vec<&mut Conv3Params<T>> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            out.push(&mut b.conv1);
            out.push(&mut b.conv2);
        }
        for e in &mut self.encoders {
            out.push(&mut e.down);
            for r in &mut e.blocks {
                out.push(&mut r.conv1);
                out.push(&mut r.conv2);
            }
        }
        out.push(&mut self.decoder.conv_up);
        out.push(&mut self.decoder.conv_merge);
        out.push(&mut self.decoder.block.conv1);
        out.push(&mut self.decoder.block.conv2);
        out.push(&mut self.decoder.head);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_list().iter().map(|c| c.parameter_count()).sum()
    }

    /// Lengths of the flat parameter tensors, weights then bias per conv.
    pub fn param_lens(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for c in self.conv_list() {
            out.push(c.weights.len());
            out.push(c.bias.len());
        }
        out
    }

    /// Mutable views of every parameter tensor, aligned with
    /// [`Self::param_lens`] and [`NetGrads::flatten`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for c in self.conv_list_mut() {
            let Conv3Params { weights, bias, .. } = c;
            out.push(weights.as_mut_slice());
            out.push(bias.as_mut_slice());
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for c in self.conv_list() {
            out.push(c.weights.as_slice());
            out.push(c.bias.as_slice());
        }
        out
    }

    /// Total channels at 1/2, 1/4, and 1/8 resolution summed across
    /// parallel paths; identical for every fusion scheme at even widths.
    pub fn channel_widths(&self) -> [usize; 3] {
        [
            self.branches.iter().map(|b| b.conv1.c_out).sum(),
            self.branches.iter().map(|b| b.conv2.c_out).sum(),
            self.encoders.iter().map(|e| e.down.c_out).sum(),
        ]
    }

    fn branch_forward(
        b: &Branch<T>,
        x: Tensor5<T>,
    ) -> Result<(Tensor5<T>, BranchCache<T>), NetworkError> {
        let a1 = conv3d_forward(&x, &b.conv1)?;
        let r1 = relu_forward(&a1);
        let a2 = conv3d_forward(&r1, &b.conv2)?;
        let out = relu_forward(&a2);
        Ok((out, BranchCache { x, a1, r1, a2 }))
    }

    fn branch_backward(
        b: &Branch<T>,
        cache: &BranchCache<T>,
        grad_out: &Tensor5<T>,
    ) -> Result<(ConvGrads<T>, ConvGrads<T>), NetworkError> {
        let g_a2 = relu_backward(&cache.a2, grad_out);
        let (g_r1, g_conv2) = conv3d_backward(&cache.r1, &b.conv2, &g_a2)?;
        let g_a1 = relu_backward(&cache.a1, &g_r1);
        let (_, g_conv1) = conv3d_backward(&cache.x, &b.conv1, &g_a1)?;
        Ok((g_conv1, g_conv2))
    }

    fn encoder_forward(
        e: &Encoder<T>,
        x: Tensor5<T>,
    ) -> Result<(Tensor5<T>, EncCache<T>), NetworkError> {
        let a_down = conv3d_forward(&x, &e.down)?;
        let mut cur = relu_forward(&a_down);
        let mut blocks = Vec::with_capacity(e.blocks.len());
        for blk in &e.blocks {
            let (y, c) = blk.forward(&cur)?;
            blocks.push(c);
            cur = y;
        }
        Ok((cur, EncCache { x, a_down, blocks }))
    }

    /// Returns (grad wrt encoder input, grads for down conv then each block
    /// conv pair in declaration order).
    fn encoder_backward(
        e: &Encoder<T>,
        cache: &EncCache<T>,
        grad_out: &Tensor5<T>,
    ) -> Result<(Tensor5<T>, Vec<ConvGrads<T>>), NetworkError> {
        let mut g = grad_out.clone();
        let mut block_grads = Vec::with_capacity(e.blocks.len());
        for (blk, c) in e.blocks.iter().zip(cache.blocks.iter()).rev() {
            let (g_in, bg) = blk.backward(c, &g)?;
            block_grads.push(bg);
            g = g_in;
        }
        block_grads.reverse();
        let g_a_down = relu_backward(&cache.a_down, &g);
        let (g_x, g_down) = conv3d_backward(&cache.x, &e.down, &g_a_down)?;
        let mut grads = vec![g_down];
        for bg in block_grads {
            grads.push(bg.conv1);
            grads.push(bg.conv2);
        }
        Ok((g_x, grads))
    }

    /// Forward pass; input is always the 2-channel tensor, split internally
    /// for the two-branch schemes.
    pub fn forward(&self, x: &Tensor5<T>) -> Result<(Tensor5<T>, NetCache<T>), NetworkError> {
        let [_, c, d, h, w] = x.shape();
        if c != 2 {
            return Err(NetworkError::ChannelMismatch { got: c, expected: 2 });
        }
        if [d, h, w] != self.cfg.input_dims {
            return Err(NetworkError::ShapeMismatch {
                got: vec![d, h, w],
                expected: self.cfg.input_dims.to_vec(),
            });
        }
        let inputs: Vec<Tensor5<T>> = if self.branches.len() == 1 {
            vec![x.clone()]
        } else {
            let (surface, edge) = x.split_channels(1);
            vec![surface, edge]
        };
        let mut branch_caches = Vec::with_capacity(self.branches.len());
        let mut branch_outs = Vec::with_capacity(self.branches.len());
        for (b, xb) in self.branches.iter().zip(inputs) {
            let (out, cache) = Self::branch_forward(b, xb)?;
            branch_outs.push(out);
            branch_caches.push(cache);
        }
        let skip = if branch_outs.len() == 1 {
            branch_outs[0].clone()
        } else {
            Tensor5::concat_channels(&branch_outs[0], &branch_outs[1])?
        };
        let enc_inputs: Vec<Tensor5<T>> = if self.encoders.len() == 1 {
            vec![skip.clone()]
        } else {
            branch_outs.clone()
        };
        let mut enc_caches = Vec::with_capacity(self.encoders.len());
        let mut enc_outs = Vec::with_capacity(self.encoders.len());
        for (e, xe) in self.encoders.iter().zip(enc_inputs) {
            let (out, cache) = Self::encoder_forward(e, xe)?;
            enc_outs.push(out);
            enc_caches.push(cache);
        }
        let bott = if enc_outs.len() == 1 {
            enc_outs.into_iter().next().unwrap()
        } else {
            Tensor5::concat_channels(&enc_outs[0], &enc_outs[1])?
        };
        let skip_dims = {
            let s = skip.shape();
            [s[2], s[3], s[4]]
        };
        let up_out = upsample_nearest(&bott, skip_dims)?;
        let a_up = conv3d_forward(&up_out, &self.decoder.conv_up)?;
        let r_up = relu_forward(&a_up);
        let concat = Tensor5::concat_channels(&r_up, &skip)?;
        let a_merge = conv3d_forward(&concat, &self.decoder.conv_merge)?;
        let r_merge = relu_forward(&a_merge);
        let (block_out, block_cache) = self.decoder.block.forward(&r_merge)?;
        let logits = conv3d_forward(&block_out, &self.decoder.head)?;
        let cache = NetCache {
            branch: branch_caches,
            enc: enc_caches,
            dec: DecCache {
                bott_shape: bott.shape(),
                up_out,
                a_up,
                concat,
                a_merge,
                block: block_cache,
                block_out,
            },
        };
        Ok((logits, cache))
    }

    /// Backward pass from the logit gradient; returns parameter gradients
    /// aligned with [`Self::param_slices_mut`].
    pub fn backward(
        &self,
        cache: &NetCache<T>,
        grad_logits: &Tensor5<T>,
    ) -> Result<NetGrads<T>, NetworkError> {
        let dec = &self.decoder;
        let dc = &cache.dec;
        let (g_block_out, g_head) = conv3d_backward(&dc.block_out, &dec.head, grad_logits)?;
        let (g_r_merge, g_block) = dec.block.backward(&dc.block, &g_block_out)?;
        let g_a_merge = relu_backward(&dc.a_merge, &g_r_merge);
        let (g_concat, g_merge) = conv3d_backward(&dc.concat, &dec.conv_merge, &g_a_merge)?;
        let c_up = dec.conv_up.c_out;
        let (g_r_up, g_skip) = g_concat.split_channels(c_up);
        let g_a_up = relu_backward(&dc.a_up, &g_r_up);
        let (g_up_out, g_conv_up) = conv3d_backward(&dc.up_out, &dec.conv_up, &g_a_up)?;
        let g_bott = upsample_nearest_backward(dc.bott_shape, &g_up_out);

        let g_enc_outs: Vec<Tensor5<T>> = if self.encoders.len() == 1 {
            vec![g_bott]
        } else {
            let half = dc.bott_shape[1] / 2;
            let (a, b) = g_bott.split_channels(half);
            vec![a, b]
        };
        let mut enc_grads = Vec::with_capacity(self.encoders.len());
        let mut g_enc_inputs = Vec::with_capacity(self.encoders.len());
        for (e, (c, g)) in self.encoders.iter().zip(cache.enc.iter().zip(g_enc_outs.iter())) {
            let (g_in, grads) = Self::encoder_backward(e, c, g)?;
            g_enc_inputs.push(g_in);
            enc_grads.push(grads);
        }

        // Skip gradient joins the encoder-input gradient at each branch.
        let g_branch_outs: Vec<Tensor5<T>> = if self.branches.len() == 1 {
            vec![g_skip.add(&g_enc_inputs[0])?]
        } else {
            let half = self.branches[0].conv2.c_out;
            let (gs0, gs1) = g_skip.split_channels(half);
            if self.encoders.len() == 1 {
                let (ge0, ge1) = g_enc_inputs[0].split_channels(half);
                vec![gs0.add(&ge0)?, gs1.add(&ge1)?]
            } else {
                vec![gs0.add(&g_enc_inputs[0])?, gs1.add(&g_enc_inputs[1])?]
            }
        };
        let mut branch_grads = Vec::with_capacity(self.branches.len());
        for (b, (c, g)) in self.branches.iter().zip(cache.branch.iter().zip(g_branch_outs.iter()))
        {
            branch_grads.push(Self::branch_backward(b, c, g)?);
        }

        // Assemble in conv_list declaration order.
        let mut per_conv = Vec::new();
        for (g1, g2) in branch_grads {
            per_conv.push(g1);
            per_conv.push(g2);
        }
        for grads in enc_grads {
            per_conv.extend(grads);
        }
        per_conv.push(g_conv_up);
        per_conv.push(g_merge);
        per_conv.push(g_block.conv1);
        per_conv.push(g_block.conv2);
        per_conv.push(g_head);
        Ok(NetGrads { per_conv })
    }
}

/// Argmax over channels, mapped back to label volumes on `spec`. The
/// tensor's (d, h, w) axes must equal the grid's (z, y, x) dims.
pub fn logits_to_labels(
    logits: &Tensor5<f32>,
    spec: &VoxelGridSpec,
) -> Result<Vec<LabelVolume>, NetworkError> {
    let [n, c, d, h, w] = logits.shape();
    if [w, h, d] != spec.dims {
        return Err(NetworkError::ShapeMismatch {
            got: vec![d, h, w],
            expected: vec![spec.dims[2], spec.dims[1], spec.dims[0]],
        });
    }
    let plane = d * h * w;
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let mut labels = vec![0u8; plane];
        for v in 0..plane {
            let (mut best_c, mut best) = (0usize, logits.data()[ni * c * plane + v]);
            for ci in 1..c {
                let val = logits.data()[(ni * c + ci) * plane + v];
                if val > best {
                    best = val;
                    best_c = ci;
                }
            }
            labels[v] = best_c as u8;
        }
        out.push(LabelVolume::new(*spec, labels).expect("argmax labels are valid classes"));
    }
    Ok(out)
}
