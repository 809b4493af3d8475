//! Encoder/classifier network with a flat parameter vector, plus EMA shadowing.
//!
//! The encoder is a stack of 3x3 conv + ReLU blocks grouped into stages; a 2x2
//! max pool separates stages and a global average pool after the last stage
//! yields the embedding. The head is a single linear layer. Parameters,
//! gradients, EMA shadows and optimizer state all share one [`ParamLayout`].

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageShape};
use crate::nn;
use crate::rng::{derive_seed, Rng, Stream};
use crate::scalar::Scalar;

/// Encoder architecture: conv widths per stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub arch: String,
    pub stages: Vec<Vec<usize>>,
}

impl EncoderSpec {
    /// Six conv blocks, widths 32-64-128, embedding dim 128 (~290k parameters).
    pub fn cnn6() -> Self {
        Self { arch: "cnn6".into(), stages: vec![vec![32, 32], vec![64, 64], vec![128, 128]] }
    }

    /// Three conv blocks, widths 8-16-32. Used for desk-scale experiments.
    pub fn cnn3_tiny() -> Self {
        Self { arch: "cnn3-tiny".into(), stages: vec![vec![8], vec![16], vec![32]] }
    }

    /// Three conv blocks, widths 16-32-64.
    pub fn cnn3_small() -> Self {
        Self { arch: "cnn3-small".into(), stages: vec![vec![16], vec![32], vec![64]] }
    }

    /// One conv layer feeding the head: the two-layer instance used for gradient checks.
    pub fn toy2(width: usize) -> Self {
        Self { arch: format!("toy2-{width}"), stages: vec![vec![width]] }
    }

    pub fn by_id(arch: &str) -> Result<Self> {
        match arch {
            "cnn6" => Ok(Self::cnn6()),
            "cnn3-tiny" => Ok(Self::cnn3_tiny()),
            "cnn3-small" => Ok(Self::cnn3_small()),
            other => match other.strip_prefix("toy2-").and_then(|w| w.parse().ok()) {
                Some(w) => Ok(Self::toy2(w)),
                None => Err(Error::InvalidArgument(format!("unknown architecture `{arch}`"))),
            },
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.stages.last().and_then(|s| s.last()).copied().unwrap_or(0)
    }

    fn validate(&self, input: ImageShape) -> Result<()> {
        if self.stages.is_empty() || self.stages.iter().any(|s| s.is_empty() || s.contains(&0)) {
            return Err(Error::InvalidArgument(format!("architecture `{}` has an empty stage", self.arch)));
        }
        let pools = self.stages.len() - 1;
        if input.height >> pools == 0 || input.width >> pools == 0 {
            return Err(Error::InvalidArgument(format!("{input} is too small for {} pooling stages", pools)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub offset: usize,
    pub len: usize,
    pub decay: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayer {
    ci: usize,
    co: usize,
    weight: ParamBlock,
    bias: ParamBlock,
}

/// Where every tensor lives inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub total: usize,
    /// End of the encoder prefix; the head occupies `encoder_len..total`.
    pub encoder_len: usize,
    pub blocks: Vec<ParamBlock>,
}

impl ParamLayout {
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for b in &self.blocks {
            mask[b.offset..b.offset + b.len].iter_mut().for_each(|m| *m = b.decay);
        }
        mask
    }
}

/// Network architecture bound to an input shape and head width.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoder: EncoderSpec,
    pub input: ImageShape,
    pub head_width: usize,
    convs: Vec<Vec<ConvLayer>>,
    head_weight: ParamBlock,
    head_bias: ParamBlock,
    layout: ParamLayout,
}

/// Intermediate values retained for the backward pass.
pub struct Tape<T> {
    n: usize,
    /// Per stage, per conv: (im2col matrix, post-ReLU output, spatial h, w).
    convs: Vec<Vec<(Vec<T>, Vec<T>, usize, usize)>>,
    pools: Vec<Vec<u32>>,
    embedding: Vec<T>,
}

impl Network {
    pub fn new(encoder: EncoderSpec, input: ImageShape, head_width: usize) -> Result<Self> {
        encoder.validate(input)?;
        if head_width == 0 {
            return Err(Error::InvalidArgument("head width must be positive".into()));
        }
        let mut offset = 0;
        let mut blocks = Vec::new();
        let mut block = |len: usize, decay: bool, offset: &mut usize| {
            let b = ParamBlock { offset: *offset, len, decay };
            *offset += len;
            blocks.push(b);
            b
        };
        let mut ci = input.channels;
        let mut convs = Vec::new();
        for stage in &encoder.stages {
            let mut layers = Vec::new();
            for &co in stage {
                let weight = block(co * ci * 9, true, &mut offset);
                let bias = block(co, false, &mut offset);
                layers.push(ConvLayer { ci, co, weight, bias });
                ci = co;
            }
            convs.push(layers);
        }
        let encoder_len = offset;
        let head_weight = block(head_width * ci, true, &mut offset);
        let head_bias = block(head_width, false, &mut offset);
        Ok(Self {
            encoder,
            input,
            head_width,
            convs,
            head_weight,
            head_bias,
            layout: ParamLayout { total: offset, encoder_len, blocks },
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.embedding_dim()
    }

    /// Same encoder, new head width.
    pub fn with_head(&self, head_width: usize) -> Result<Self> {
        Self::new(self.encoder.clone(), self.input, head_width)
    }

    /// He-normal conv weights, zero biases, and a small-variance head.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Vec<T> {
        let mut params = vec![T::zero(); self.layout.total];
        let mut rng = Rng::seed_from_u64(derive_seed(seed, Stream::Init, 0));
        for layer in self.convs.iter().flatten() {
            let std = (2.0 / (layer.ci * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[layer.weight.offset..][..layer.weight.len] {
                *p = T::lit(normal.sample(&mut rng));
            }
        }
        self.init_head(&mut params, derive_seed(seed, Stream::HeadInit, self.head_width as u64));
        params
    }

    const HEAD_INIT_STD: f64 = 0.01;

    fn init_head<T: Scalar>(&self, params: &mut [T], seed: u64) {
        let mut rng = Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, Self::HEAD_INIT_STD).expect("positive std");
        for p in &mut params[self.head_weight.offset..][..self.head_weight.len] {
            *p = T::lit(normal.sample(&mut rng));
        }
        for p in &mut params[self.head_bias.offset..][..self.head_bias.len] {
            *p = T::zero();
        }
    }

    /// Build a network with a fresh `head_width`-way head on top of the encoder
    /// weights in `params`. Encoder weights are copied bit-for-bit.
    pub fn swap_head<T: Scalar>(&self, params: &[T], head_width: usize, seed: u64) -> Result<(Network, Vec<T>)> {
        self.check_params(params)?;
        let target = self.with_head(head_width)?;
        let mut fresh = vec![T::zero(); target.layout.total];
        fresh[..target.layout.encoder_len].copy_from_slice(&params[..self.layout.encoder_len]);
        target.init_head(&mut fresh, derive_seed(seed, Stream::HeadInit, 1 << 32 | head_width as u64));
        Ok((target, fresh))
    }

    pub fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::LayoutMismatch(format!(
                "{} parameters supplied for `{}` which needs {}",
                params.len(),
                self.encoder.arch,
                self.layout.total
            )));
        }
        Ok(())
    }

    fn check_images(&self, images: &[&Image]) -> Result<()> {
        images.iter().try_for_each(|img| img.check_shape(self.input))
    }

    fn encode<T: Scalar>(&self, params: &[T], images: &[&Image], keep: bool) -> Result<(Vec<T>, Option<Tape<T>>)> {
        self.check_params(params)?;
        self.check_images(images)?;
        let n = images.len();
        let (mut h, mut w) = (self.input.height, self.input.width);
        let raw: Vec<&[f32]> = images.iter().map(|i| i.data()).collect();
        let mut x: Vec<T> = nn::to_channel_major(&raw, self.input.channels, h * w);
        let mut tape_convs = Vec::new();
        let mut pools = Vec::new();
        for (s, stage) in self.convs.iter().enumerate() {
            let mut stage_tape = Vec::new();
            for (l, layer) in stage.iter().enumerate() {
                let cols = nn::im2col(&x, layer.ci, n, h, w);
                let m = n * h * w;
                let mut y = vec![T::zero(); layer.co * m];
                let wts = &params[layer.weight.offset..][..layer.weight.len];
                T::gemm(layer.co, layer.ci * 9, m, T::one(), wts, (layer.ci * 9) as isize, 1, &cols, m as isize, 1, T::zero(), &mut y, m as isize, 1);
                let bias = &params[layer.bias.offset..][..layer.co];
                let mut finite = true;
                for (row, &b) in y.chunks_exact_mut(m).zip(bias) {
                    for v in row {
                        let pre = *v + b;
                        finite &= pre.is_finite();
                        *v = pre.max(T::zero());
                    }
                }
                if !finite {
                    return Err(Error::NumericalFault {
                        location: format!("encoder stage {s} conv {l}"),
                        detail: "non-finite activation".into(),
                    });
                }
                if keep {
                    stage_tape.push((cols, y.clone(), h, w));
                }
                x = y;
            }
            let co = stage.last().expect("validated").co;
            if s + 1 < self.convs.len() {
                let (pooled, arg) = nn::max_pool2(&x, co * n, h, w);
                x = pooled;
                h /= 2;
                w /= 2;
                if keep {
                    pools.push(arg);
                }
            }
            tape_convs.push(stage_tape);
        }
        let e = self.embedding_dim();
        let embedding = nn::global_avg_pool(&x, e * n, h * w);
        let tape = keep.then(|| Tape { n, convs: tape_convs, pools, embedding: Vec::new() });
        Ok((embedding, tape))
    }

    /// Encoder output, row-major `N x E`.
    pub fn embed<T: Scalar>(&self, params: &[T], images: &[&Image]) -> Result<Vec<T>> {
        let (emb, _) = self.encode(params, images, false)?;
        Ok(transpose(&emb, self.embedding_dim(), images.len()))
    }

    fn head<T: Scalar>(&self, params: &[T], emb_cn: &[T], n: usize) -> Result<Vec<T>> {
        let e = self.embedding_dim();
        let k = self.head_width;
        let mut logits = vec![T::zero(); n * k];
        for row in logits.chunks_exact_mut(k) {
            row.copy_from_slice(&params[self.head_bias.offset..][..k]);
        }
        let wts = &params[self.head_weight.offset..][..self.head_weight.len];
        // logits (N x K) += emb^T (N x E) * W^T (E x K)
        T::gemm(n, e, k, T::one(), emb_cn, 1, n as isize, wts, 1, e as isize, T::one(), &mut logits, k as isize, 1);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFault { location: "classifier head".into(), detail: "non-finite logit".into() });
        }
        Ok(logits)
    }

    /// Logits, row-major `N x head_width`, without retaining a tape.
    pub fn logits<T: Scalar>(&self, params: &[T], images: &[&Image]) -> Result<Vec<T>> {
        let (emb, _) = self.encode(params, images, false)?;
        self.head(params, &emb, images.len())
    }

    /// Logits plus everything needed to backpropagate through them.
    pub fn forward<T: Scalar>(&self, params: &[T], images: &[&Image]) -> Result<(Vec<T>, Tape<T>)> {
        let (emb, tape) = self.encode(params, images, true)?;
        let logits = self.head(params, &emb, images.len())?;
        let mut tape = tape.expect("tape requested");
        tape.embedding = emb;
        Ok((logits, tape))
    }

    /// Accumulate `d loss / d params` into `grad` given `d loss / d logits`.
    pub fn backward<T: Scalar>(&self, params: &[T], tape: &Tape<T>, dlogits: &[T], grad: &mut [T]) -> Result<()> {
        self.check_params(params)?;
        self.check_params(grad)?;
        let n = tape.n;
        let e = self.embedding_dim();
        let k = self.head_width;
        assert_eq!(dlogits.len(), n * k, "dlogits shape");

        // head
        {
            let gw = &mut grad[self.head_weight.offset..][..self.head_weight.len];
            // dW (K x E) += dlogits^T (K x N) * emb^T (N x E)
            T::gemm(k, n, e, T::one(), dlogits, 1, k as isize, &tape.embedding, 1, n as isize, T::one(), gw, e as isize, 1);
        }
        {
            let gb = &mut grad[self.head_bias.offset..][..k];
            for row in dlogits.chunks_exact(k) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let wts = &params[self.head_weight.offset..][..self.head_weight.len];
        let mut demb = vec![T::zero(); e * n];
        // demb (E x N) = W^T (E x K) * dlogits^T (K x N)
        T::gemm(e, k, n, T::one(), wts, 1, e as isize, dlogits, 1, k as isize, T::zero(), &mut demb, n as isize, 1);

        // global average pool
        let (last_h, last_w) = tape.convs.last().and_then(|s| s.last()).map(|c| (c.2, c.3)).expect("non-empty");
        let plane = last_h * last_w;
        let scale = T::one() / T::of_usize(plane);
        let mut dx = vec![T::zero(); e * n * plane];
        for (chunk, &g) in dx.chunks_exact_mut(plane).zip(&demb) {
            chunk.iter_mut().for_each(|v| *v = g * scale);
        }

        for s in (0..self.convs.len()).rev() {
            if s + 1 < self.convs.len() {
                let (h, w) = {
                    let c = tape.convs[s].last().expect("non-empty");
                    (c.2, c.3)
                };
                let co = self.convs[s].last().expect("non-empty").co;
                dx = nn::max_pool2_backward(&dx, &tape.pools[s], co * n * h * w);
            }
            for l in (0..self.convs[s].len()).rev() {
                let layer = self.convs[s][l];
                let (cols, out, h, w) = &tape.convs[s][l];
                let m = n * h * w;
                for (d, &o) in dx.iter_mut().zip(out) {
                    if o <= T::zero() {
                        *d = T::zero();
                    }
                }
                {
                    let gw = &mut grad[layer.weight.offset..][..layer.weight.len];
                    // dW (co x ci*9) += dY (co x M) * cols^T (M x ci*9)
                    T::gemm(layer.co, m, layer.ci * 9, T::one(), &dx, m as isize, 1, cols, 1, m as isize, T::one(), gw, (layer.ci * 9) as isize, 1);
                }
                {
                    let gb = &mut grad[layer.bias.offset..][..layer.co];
                    for (g, row) in gb.iter_mut().zip(dx.chunks_exact(m)) {
                        *g += row.iter().copied().sum::<T>();
                    }
                }
                let is_input = s == 0 && l == 0;
                if !is_input {
                    let wts = &params[layer.weight.offset..][..layer.weight.len];
                    let mut dcols = vec![T::zero(); layer.ci * 9 * m];
                    // dcols (ci*9 x M) = W^T (ci*9 x co) * dY (co x M)
                    T::gemm(layer.ci * 9, layer.co, m, T::one(), wts, 1, (layer.ci * 9) as isize, &dx, m as isize, 1, T::zero(), &mut dcols, m as isize, 1);
                    dx = nn::col2im(&dcols, layer.ci, n, *h, *w);
                }
            }
        }
        Ok(())
    }
}

fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Exponential moving average of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaShadow<T> {
    pub decay: T,
    pub params: Vec<T>,
}

impl<T: Scalar> EmaShadow<T> {
    pub fn new(decay: T, params: &[T]) -> Result<Self> {
        if !(decay >= T::zero() && decay <= T::one()) {
            return Err(Error::InvalidArgument(format!("EMA decay {decay} is outside [0, 1]")));
        }
        Ok(Self { decay, params: params.to_vec() })
    }

    /// `shadow <- decay * shadow + (1 - decay) * params`.
    pub fn update(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LayoutMismatch(format!(
                "EMA shadow holds {} values, update has {}",
                self.params.len(),
                params.len()
            )));
        }
        let keep = self.decay;
        let take = T::one() - self.decay;
        for (s, &p) in self.params.iter_mut().zip(params) {
            *s = keep * *s + take * p;
        }
        Ok(())
    }
}
