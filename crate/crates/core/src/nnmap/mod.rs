//! Raw-to-raw mapping learned from mostly unpaired data: one encoder-decoder network per
//! camera, trained with reconstruction on unpaired images plus latent
//! alignment and cross-mapping on a small anchor set. Inference routes one
//! camera's encoder through the other camera's decoder.

pub mod batch;
pub mod infer;
pub mod layers;
pub mod loss;
pub mod model_io;
pub mod network;
pub mod train;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array3, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use loss::{sq_dist_grad, LossComponents, LossSwitches};
use network::{ArchitectureSpec, LatentStack, Network, Parameters};

pub use batch::{sample_batch, MiniBatch, TrainData};
pub use infer::{map_image, map_image_with, postprocess, Direction, InferConfig};
pub use loss::{loss_a, loss_m, loss_r, total_loss};
pub use train::{resume, train, Adam, EpochLog, TrainConfig, TrainError, TrainOptions, TrainOutcome, TrainState};

/// Scalar type of network tensors: f32 for training, f64 for gradient checks.
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("architecture error: {0}")]
    Arch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("model file error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

fn is_bias(name: &str) -> bool {
    name.ends_with(".b")
}

/// Settings a model was trained with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TrainingFingerprint {
    pub seed: u64,
    pub epochs: usize,
    pub switches: LossSwitches,
}

/// Both cameras' networks.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingModel<T> {
    pub arch: ArchitectureSpec,
    pub net_a: Network<T>,
    pub net_b: Network<T>,
    pub fingerprint: TrainingFingerprint,
}

impl<T: Real> MappingModel<T> {
    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        MappingModel {
            arch: arch.clone(),
            net_a: Network::zeros(arch),
            net_b: Network::zeros(arch),
            fingerprint: TrainingFingerprint::default(),
        }
    }

    /// He-normal weights and zero biases from a seeded generator.
    pub fn init(arch: &ArchitectureSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let net_a = Network::init(arch, &mut rng);
        let net_b = Network::init(arch, &mut rng);
        Ok(MappingModel {
            arch: arch.clone(),
            net_a,
            net_b,
            fingerprint: TrainingFingerprint { seed, ..Default::default() },
        })
    }

    pub fn init_with<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Self {
        MappingModel {
            arch: arch.clone(),
            net_a: Network::init(arch, rng),
            net_b: Network::init(arch, rng),
            fingerprint: TrainingFingerprint::default(),
        }
    }

    /// Same-shaped model with every parameter zero, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        MappingModel { fingerprint: self.fingerprint.clone(), ..Self::zeros(&self.arch) }
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> MappingModel<U> {
        let mut values: Vec<Vec<U>> = Vec::new();
        self.visit("", &mut |_, s| values.push(s.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect()));
        let mut out = MappingModel::<U>::zeros(&self.arch);
        out.fingerprint = self.fingerprint.clone();
        let mut it = values.into_iter();
        out.visit_mut("", &mut |_, s| s.copy_from_slice(&it.next().expect("same layout")));
        out
    }

    /// Loss terms of one mini-batch, forward only.
    pub fn batch_loss(&self, batch: &MiniBatch<T>, switches: LossSwitches) -> Result<LossComponents> {
        let (c, _) = self.evaluate(batch, switches, false)?;
        Ok(c)
    }

    /// Loss terms and parameter gradients of their enabled sum.
    pub fn batch_gradients(&self, batch: &MiniBatch<T>, switches: LossSwitches) -> Result<(LossComponents, Self)> {
        let (c, g) = self.evaluate(batch, switches, true)?;
        let mut g = g.expect("gradients requested");
        if !self.arch.bias {
            g.visit_mut("", &mut |name, s| {
                if is_bias(&name) {
                    s.fill(T::zero());
                }
            });
        }
        Ok((c, g))
    }

    /// Whether bias tensors are zero wherever the architecture has none.
    pub fn respects_bias_setting(&self) -> bool {
        let mut ok = true;
        if !self.arch.bias {
            self.visit("", &mut |name, s| ok &= !is_bias(&name) || s.iter().all(|v| v.is_zero()));
        }
        ok
    }

    fn evaluate(&self, batch: &MiniBatch<T>, switches: LossSwitches, want_grad: bool) -> Result<(LossComponents, Option<Self>)> {
        switches.validate()?;
        let mut grad = want_grad.then(|| self.zeros_like());
        let mut comps = LossComponents::default();
        let to_f = |v: T| v.to_f64().expect("finite");

        let n_u = batch.unpaired_a.len() + batch.unpaired_b.len();
        if switches.use_r {
            if n_u == 0 {
                return Err(NnError::Data("reconstruction term enabled but the batch has no unpaired samples".into()));
            }
            let scale = T::one() / T::from_usize(n_u).unwrap();
            let mut total = T::zero();
            for (imgs, camera_b) in [(&batch.unpaired_a, false), (&batch.unpaired_b, true)] {
                let net = if camera_b { &self.net_b } else { &self.net_a };
                for x in imgs.iter() {
                    self.arch.check_input(x.dim())?;
                    let enc = net.encoder.forward_cached(x);
                    let (out, dec) = net.decoder.forward_cached(enc.latents())?;
                    total += sq(&out, x);
                    if let Some(g) = grad.as_mut() {
                        let gn = if camera_b { &mut g.net_b } else { &mut g.net_a };
                        let d_lat = net.decoder.backward(&dec, &sq_dist_grad(&out, x, scale), &mut gn.decoder);
                        net.encoder.backward(&enc, d_lat, &mut gn.encoder);
                    }
                }
            }
            comps.r = to_f(total * scale);
        }

        if switches.uses_anchors() {
            let n_p = batch.anchors_a.len();
            if n_p == 0 || batch.anchors_b.len() != n_p {
                return Err(NnError::Data("anchor terms enabled but the batch has no aligned anchor pairs".into()));
            }
            let inv_p = T::one() / T::from_usize(n_p).unwrap();
            let half_p = inv_p / T::from_f64(2.0).unwrap();
            let (mut la, mut lm) = (T::zero(), T::zero());
            for (xa, xb) in batch.anchors_a.iter().zip(&batch.anchors_b) {
                self.arch.check_input(xa.dim())?;
                if xa.dim() != xb.dim() {
                    return Err(NnError::Shape(format!("anchor pair {:?} vs {:?}", xa.dim(), xb.dim())));
                }
                let ea = self.net_a.encoder.forward_cached(xa);
                let eb = self.net_b.encoder.forward_cached(xb);
                let depth = self.arch.depth;
                let mut d_a: Vec<Option<Array3<T>>> = vec![None; depth];
                let mut d_b: Vec<Option<Array3<T>>> = vec![None; depth];
                if switches.use_a {
                    for (e, (pa, pb)) in ea.latents().iter().zip(eb.latents()).enumerate() {
                        la += sq(pa, pb);
                        if grad.is_some() {
                            let g = sq_dist_grad(pa, pb, inv_p);
                            d_b[e] = Some(g.mapv(|v| -v));
                            d_a[e] = Some(g);
                        }
                    }
                }
                if switches.use_m {
                    // A → B through decoder B, B → A through decoder A
                    for (lat, target, to_b) in [(ea.latents(), xb, true), (eb.latents(), xa, false)] {
                        let dec_net = if to_b { &self.net_b } else { &self.net_a };
                        let (out, dec) = dec_net.decoder.forward_cached(lat)?;
                        lm += sq(&out, target);
                        if let Some(g) = grad.as_mut() {
                            let gd = if to_b { &mut g.net_b.decoder } else { &mut g.net_a.decoder };
                            let d_lat = dec_net.decoder.backward(&dec, &sq_dist_grad(&out, target, half_p), gd);
                            let acc = if to_b { &mut d_a } else { &mut d_b };
                            add_latent_grads(acc, d_lat);
                        }
                    }
                }
                if let Some(g) = grad.as_mut() {
                    self.net_a.encoder.backward(&ea, d_a, &mut g.net_a.encoder);
                    self.net_b.encoder.backward(&eb, d_b, &mut g.net_b.encoder);
                }
            }
            if switches.use_a {
                comps.a = to_f(la * inv_p);
            }
            if switches.use_m {
                comps.m = to_f(lm * half_p);
            }
        }
        Ok((comps, grad))
    }
}

fn sq<T: Real>(x: &Array3<T>, y: &Array3<T>) -> T {
    ndarray::Zip::from(x).and(y).fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b))
}

fn add_latent_grads<T: Real>(acc: &mut [Option<Array3<T>>], add: Vec<Option<Array3<T>>>) {
    for (slot, g) in acc.iter_mut().zip(add) {
        if let Some(g) = g {
            *slot = Some(match slot.take() {
                Some(prev) => prev + g,
                None => g,
            });
        }
    }
}

impl<T> Parameters<T> for MappingModel<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [T])) {
        self.net_a.visit(&format!("{prefix}a"), f);
        self.net_b.visit(&format!("{prefix}b"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [T])) {
        self.net_a.visit_mut(&format!("{prefix}a"), f);
        self.net_b.visit_mut(&format!("{prefix}b"), f);
    }
}

/// Encoder outputs of camera A and B networks for one aligned pair.
pub fn encode_pair<T: Real>(model: &MappingModel<T>, xa: &Array3<T>, xb: &Array3<T>) -> (LatentStack<T>, LatentStack<T>) {
    (model.net_a.encoder.forward(xa), model.net_b.encoder.forward(xb))
}
