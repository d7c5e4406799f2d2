//! Encoder-decoder networks with per-block latents and U-Net style skips.
//!
//! Encoder block e: two 3×3 conv + ReLU layers whose output X^e (spatial
//! size H/2^(e-1)) is both the anchor-loss latent and the skip tensor, then
//! 2×2 average pooling into the next block. Decoder stage k = E..1: 2×2
//! transposed conv + ReLU, concat with X^k when skips are on, then two 3×3
//! conv + ReLU; a final linear 1×1 conv restores the input channel count.
//! The deepest stage starts from the pooled X^E at H/2^E.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, concat, relu_backward, relu_inplace, Conv2d, ConvCache, ConvTranspose2x2, UpCache,
};
use super::{NnError, Real, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub in_channels: usize,
    pub depth: usize,
    pub channels: Vec<usize>,
    pub skip_connections: bool,
    /// Trainable conv biases. Without them every layer is positively
    /// homogeneous, so the network commutes with exposure scaling like the
    /// raw responses it maps; bias tensors then stay at zero.
    #[serde(default = "default_bias")]
    pub bias: bool,
}

fn default_bias() -> bool {
    true
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        ArchitectureSpec { in_channels: 4, depth: 4, channels: vec![24, 48, 96, 192], skip_connections: true, bias: true }
    }
}

impl ArchitectureSpec {
    pub fn new(in_channels: usize, channels: Vec<usize>, skip_connections: bool) -> Result<Self> {
        let a = ArchitectureSpec { in_channels, depth: channels.len(), channels, skip_connections, bias: true };
        a.validate()?;
        Ok(a)
    }

    pub fn with_bias(self, bias: bool) -> Self {
        ArchitectureSpec { bias, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 3 | 4) {
            return Err(NnError::Arch(format!("in_channels must be 3 or 4, got {}", self.in_channels)));
        }
        if self.depth == 0 || self.channels.len() != self.depth {
            return Err(NnError::Arch(format!("depth {} with {} widths", self.depth, self.channels.len())));
        }
        if self.channels.contains(&0) {
            return Err(NnError::Arch("channel widths must be positive".into()));
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn alignment(&self) -> usize {
        1 << self.depth
    }

    pub fn check_input(&self, shape: (usize, usize, usize)) -> Result<()> {
        let (c, h, w) = shape;
        if c != self.in_channels {
            return Err(NnError::Shape(format!("expected {} channels, got {c}", self.in_channels)));
        }
        let a = self.alignment();
        if h == 0 || w == 0 || h % a != 0 || w % a != 0 {
            return Err(NnError::Shape(format!("{h}x{w} is not divisible by 2^{} = {a}", self.depth)));
        }
        Ok(())
    }
}

/// Per-block encoder outputs X¹…X^E of one sample, each (C, H, W).
pub type LatentStack<T> = Vec<Array3<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub blocks: Vec<EncoderBlock<T>>,
}

struct EncBlockCache<T> {
    conv1: ConvCache<T>,
    conv1_out: Array3<T>,
    conv2: ConvCache<T>,
}

pub struct EncoderCache<T> {
    blocks: Vec<EncBlockCache<T>>,
    latents: LatentStack<T>,
}

impl<T: Real> Encoder<T> {
    fn build(arch: &ArchitectureSpec, mut make: impl FnMut(usize, usize) -> Conv2d<T>) -> Self {
        let mut c_in = arch.in_channels;
        let blocks = arch
            .channels
            .iter()
            .map(|&w| {
                let b = EncoderBlock { conv1: make(c_in, w), conv2: make(w, w) };
                c_in = w;
                b
            })
            .collect();
        Encoder { blocks }
    }

    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        Self::build(arch, |a, b| Conv2d::zeros(a, b, 3, 1))
    }

    pub fn init<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Self {
        Self::build(arch, |a, b| Conv2d::he(rng, a, b, 3, 1))
    }

    pub fn forward_cached(&self, x: &Array3<T>) -> EncoderCache<T> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut latents: Vec<Array3<T>> = Vec::with_capacity(self.blocks.len());
        for (e, b) in self.blocks.iter().enumerate() {
            let pooled = (e > 0).then(|| avg_pool2(&latents[e - 1]));
            let (mut a, conv1) = b.conv1.forward(pooled.as_ref().unwrap_or(x).view());
            relu_inplace(&mut a);
            let (mut out, conv2) = b.conv2.forward(a.view());
            relu_inplace(&mut out);
            blocks.push(EncBlockCache { conv1, conv1_out: a, conv2 });
            latents.push(out);
        }
        EncoderCache { blocks, latents }
    }

    pub fn forward(&self, x: &Array3<T>) -> LatentStack<T> {
        self.forward_cached(x).latents
    }

    /// Backpropagates latent gradients (one per block, `None` = zero) and
    /// accumulates parameter gradients. Returns dL/dx.
    pub fn backward(&self, cache: &EncoderCache<T>, mut d_latents: Vec<Option<Array3<T>>>, grad: &mut Encoder<T>) -> Array3<T> {
        let mut carry: Option<Array3<T>> = None;
        for e in (0..self.blocks.len()).rev() {
            let mut d = match (d_latents[e].take(), carry.take()) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => Array3::zeros(cache.latents[e].dim()),
            };
            let (b, c, g) = (&self.blocks[e], &cache.blocks[e], &mut grad.blocks[e]);
            relu_backward(&cache.latents[e], &mut d);
            let mut da = b.conv2.backward(&c.conv2, &d, &mut g.conv2);
            relu_backward(&c.conv1_out, &mut da);
            let dx = b.conv1.backward(&c.conv1, &da, &mut g.conv1);
            carry = Some(if e > 0 { avg_pool2_backward(&dx) } else { dx });
        }
        carry.expect("at least one block")
    }
}

impl<T> EncoderCache<T> {
    pub fn latents(&self) -> &LatentStack<T> {
        &self.latents
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStage<T> {
    pub up: ConvTranspose2x2<T>,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

/// Stages are stored in execution order (deepest first).
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub stages: Vec<DecoderStage<T>>,
    pub head: Conv2d<T>,
    pub skips: bool,
}

struct DecStageCache<T> {
    up: UpCache<T>,
    up_out: Array3<T>,
    conv1: ConvCache<T>,
    conv1_out: Array3<T>,
    conv2: ConvCache<T>,
    conv2_out: Array3<T>,
    skip_channels: usize,
}

pub struct DecoderCache<T> {
    stages: Vec<DecStageCache<T>>,
    head: ConvCache<T>,
}

impl<T: Real> Decoder<T> {
    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        let mut stages = Vec::with_capacity(arch.depth);
        let mut c_in = arch.channels[arch.depth - 1];
        for k in (1..=arch.depth).rev() {
            let u = arch.channels[k - 1];
            let cat = if arch.skip_connections { 2 * u } else { u };
            stages.push(DecoderStage {
                up: ConvTranspose2x2::zeros(c_in, u),
                conv1: Conv2d::zeros(cat, u, 3, 1),
                conv2: Conv2d::zeros(u, u, 3, 1),
            });
            c_in = u;
        }
        let head = Conv2d::zeros(arch.channels[0], arch.in_channels, 1, 1);
        Decoder { stages, head, skips: arch.skip_connections }
    }

    pub fn init<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Self {
        let mut d = Self::zeros(arch);
        for s in &mut d.stages {
            s.up = ConvTranspose2x2::he(rng, s.up.c_in(), s.up.c_out());
            s.conv1 = Conv2d::he(rng, s.conv1.c_in(), s.conv1.c_out(), 3, 1);
            s.conv2 = Conv2d::he(rng, s.conv2.c_in(), s.conv2.c_out(), 3, 1);
        }
        d.head = Conv2d::he(rng, d.head.c_in(), d.head.c_out(), 1, 1);
        d
    }

    fn check_stack(&self, latents: &LatentStack<T>) -> Result<()> {
        let depth = self.stages.len();
        if latents.len() != depth {
            return Err(NnError::Shape(format!("{} latents for a depth-{depth} decoder", latents.len())));
        }
        for (e, x) in latents.iter().enumerate() {
            let expected = self.stages[depth - 1 - e].up.c_out();
            let (c, h, w) = x.dim();
            if c != expected {
                return Err(NnError::Shape(format!("latent {} has {c} channels, expected {expected}", e + 1)));
            }
            let halves = match latents.get(e + 1) {
                Some(next) => next.dim().1 * 2 == h && next.dim().2 * 2 == w,
                None => h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0,
            };
            if !halves {
                return Err(NnError::Shape(format!("latent {} has inconsistent size {h}x{w}", e + 1)));
            }
        }
        Ok(())
    }

    pub fn forward_cached(&self, latents: &LatentStack<T>) -> Result<(Array3<T>, DecoderCache<T>)> {
        self.check_stack(latents)?;
        let depth = self.stages.len();
        let mut cur = avg_pool2(&latents[depth - 1]);
        let mut caches = Vec::with_capacity(depth);
        for (i, st) in self.stages.iter().enumerate() {
            let k = depth - i;
            let (mut up_out, up) = st.up.forward(cur.view());
            relu_inplace(&mut up_out);
            let (input, skip_channels) = if self.skips {
                let skip = &latents[k - 1];
                (concat(&up_out, skip), skip.dim().0)
            } else {
                (up_out.clone(), 0)
            };
            let (mut conv1_out, conv1) = st.conv1.forward(input.view());
            relu_inplace(&mut conv1_out);
            let (mut conv2_out, conv2) = st.conv2.forward(conv1_out.view());
            relu_inplace(&mut conv2_out);
            cur = conv2_out.clone();
            caches.push(DecStageCache { up, up_out, conv1, conv1_out, conv2, conv2_out, skip_channels });
        }
        let (out, head) = self.head.forward(cur.view());
        Ok((out, DecoderCache { stages: caches, head }))
    }

    pub fn forward(&self, latents: &LatentStack<T>) -> Result<Array3<T>> {
        Ok(self.forward_cached(latents)?.0)
    }

    /// Returns dL/dX^e for every block and accumulates parameter gradients.
    pub fn backward(&self, cache: &DecoderCache<T>, d_out: &Array3<T>, grad: &mut Decoder<T>) -> Vec<Option<Array3<T>>> {
        let depth = self.stages.len();
        let mut d_latents: Vec<Option<Array3<T>>> = vec![None; depth];
        let mut d = self.head.backward(&cache.head, d_out, &mut grad.head);
        for i in (0..depth).rev() {
            let (st, c, g) = (&self.stages[i], &cache.stages[i], &mut grad.stages[i]);
            let k = depth - i;
            relu_backward(&c.conv2_out, &mut d);
            let mut d1 = st.conv2.backward(&c.conv2, &d, &mut g.conv2);
            relu_backward(&c.conv1_out, &mut d1);
            let d_in = st.conv1.backward(&c.conv1, &d1, &mut g.conv1);
            let u = c.up_out.dim().0;
            let mut d_up = if c.skip_channels > 0 {
                d_latents[k - 1] = Some(d_in.slice(ndarray::s![u.., .., ..]).to_owned());
                d_in.slice(ndarray::s![..u, .., ..]).to_owned()
            } else {
                d_in
            };
            relu_backward(&c.up_out, &mut d_up);
            d = st.up.backward(&c.up, &d_up, &mut g.up);
        }
        let d_deep = avg_pool2_backward(&d);
        d_latents[depth - 1] = Some(match d_latents[depth - 1].take() {
            Some(prev) => prev + d_deep,
            None => d_deep,
        });
        d_latents
    }
}

/// One camera's encoder-decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}

impl<T: Real> Network<T> {
    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        Network { encoder: Encoder::zeros(arch), decoder: Decoder::zeros(arch) }
    }

    pub fn init<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Self {
        Network { encoder: Encoder::init(arch, rng), decoder: Decoder::init(arch, rng) }
    }

    pub fn reconstruct(&self, x: &Array3<T>) -> Result<Array3<T>> {
        self.decoder.forward(&self.encoder.forward(x))
    }
}

/// Visits every parameter tensor with a stable name, in a fixed order.
pub trait Parameters<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [T]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [T]));
}

fn conv_visit<'a, T>(c: &'a Conv2d<T>, name: String, f: &mut dyn FnMut(String, &'a [T])) {
    f(format!("{name}.w"), c.w.as_slice().expect("standard layout"));
    f(format!("{name}.b"), c.b.as_slice().expect("standard layout"));
}

fn conv_visit_mut<T>(c: &mut Conv2d<T>, name: String, f: &mut dyn FnMut(String, &mut [T])) {
    f(format!("{name}.w"), c.w.as_slice_mut().expect("standard layout"));
    f(format!("{name}.b"), c.b.as_slice_mut().expect("standard layout"));
}

impl<T> Parameters<T> for Encoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [T])) {
        for (i, b) in self.blocks.iter().enumerate() {
            conv_visit(&b.conv1, format!("{prefix}.block{}.conv1", i + 1), f);
            conv_visit(&b.conv2, format!("{prefix}.block{}.conv2", i + 1), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [T])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            conv_visit_mut(&mut b.conv1, format!("{prefix}.block{}.conv1", i + 1), f);
            conv_visit_mut(&mut b.conv2, format!("{prefix}.block{}.conv2", i + 1), f);
        }
    }
}

impl<T> Parameters<T> for Decoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [T])) {
        let depth = self.stages.len();
        for (i, s) in self.stages.iter().enumerate() {
            let n = format!("{prefix}.stage{}", depth - i);
            f(format!("{n}.up.w"), s.up.w.as_slice().expect("standard layout"));
            f(format!("{n}.up.b"), s.up.b.as_slice().expect("standard layout"));
            conv_visit(&s.conv1, format!("{n}.conv1"), f);
            conv_visit(&s.conv2, format!("{n}.conv2"), f);
        }
        conv_visit(&self.head, format!("{prefix}.head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [T])) {
        let depth = self.stages.len();
        for (i, s) in self.stages.iter_mut().enumerate() {
            let n = format!("{prefix}.stage{}", depth - i);
            f(format!("{n}.up.w"), s.up.w.as_slice_mut().expect("standard layout"));
            f(format!("{n}.up.b"), s.up.b.as_slice_mut().expect("standard layout"));
            conv_visit_mut(&mut s.conv1, format!("{n}.conv1"), f);
            conv_visit_mut(&mut s.conv2, format!("{n}.conv2"), f);
        }
        conv_visit_mut(&mut self.head, format!("{prefix}.head"), f);
    }
}

impl<T> Parameters<T> for Network<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [T])) {
        self.encoder.visit(&format!("{prefix}.encoder"), f);
        self.decoder.visit(&format!("{prefix}.decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [T])) {
        self.encoder.visit_mut(&format!("{prefix}.encoder"), f);
        self.decoder.visit_mut(&format!("{prefix}.decoder"), f);
    }
}

/// Total number of scalar parameters.
pub fn parameter_count<T, P: Parameters<T>>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, s| n += s.len());
    n
}
