//! Reconstruction, anchor and mapping losses with their gradients.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::network::LatentStack;
use super::{NnError, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub use_r: bool,
    pub use_a: bool,
    pub use_m: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        LossSwitches { use_r: true, use_a: true, use_m: true }
    }
}

impl LossSwitches {
    pub fn validate(&self) -> Result<()> {
        if !(self.use_r || self.use_a || self.use_m) {
            return Err(NnError::Config("all loss terms are switched off".into()));
        }
        Ok(())
    }

    /// Whether anchor pairs are needed at all.
    pub fn uses_anchors(&self) -> bool {
        self.use_a || self.use_m
    }

    /// Ablation by name: `full`, `no-Lr`, `no-La`, `no-Lm`, or `m-only`
    /// (alias `no-La-Lr`).
    pub fn ablation(name: &str) -> Result<Self> {
        let full = LossSwitches::default();
        let s = match name {
            "full" => full,
            "no-Lr" => LossSwitches { use_r: false, ..full },
            "no-La" => LossSwitches { use_a: false, ..full },
            "no-Lm" => LossSwitches { use_m: false, ..full },
            "m-only" | "no-La-Lr" | "no-Lr-La" => LossSwitches { use_r: false, use_a: false, use_m: true },
            other => return Err(NnError::Config(format!("unknown ablation '{other}'"))),
        };
        Ok(s)
    }
}

/// Per-term loss values for one step or epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub r: f64,
    pub a: f64,
    pub m: f64,
}

fn sq_dist<T: Real>(x: &Array3<T>, y: &Array3<T>) -> Result<T> {
    if x.dim() != y.dim() {
        return Err(NnError::Shape(format!("{:?} vs {:?}", x.dim(), y.dim())));
    }
    Ok(ndarray::Zip::from(x).and(y).fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b)))
}

fn check_batch<T>(a: &[Array3<T>], b: &[Array3<T>]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(NnError::Shape(format!("batch sizes {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// (1/N_u) Σ_n ‖I_n − Î_n‖²_F
pub fn loss_r<T: Real>(inputs: &[Array3<T>], recons: &[Array3<T>]) -> Result<T> {
    check_batch(inputs, recons)?;
    let mut total = T::zero();
    for (i, r) in inputs.iter().zip(recons) {
        total += sq_dist(i, r)?;
    }
    Ok(total / T::from_usize(inputs.len()).expect("small count"))
}

/// (1/N_p) Σ_e Σ_n ‖X^e_A,n − X^e_B,n‖²_F
pub fn loss_a<T: Real>(stacks_a: &[LatentStack<T>], stacks_b: &[LatentStack<T>]) -> Result<T> {
    if stacks_a.len() != stacks_b.len() || stacks_a.is_empty() {
        return Err(NnError::Shape(format!("batch sizes {} and {}", stacks_a.len(), stacks_b.len())));
    }
    let mut total = T::zero();
    for (sa, sb) in stacks_a.iter().zip(stacks_b) {
        if sa.len() != sb.len() {
            return Err(NnError::Arch(format!("latent stacks with {} and {} blocks", sa.len(), sb.len())));
        }
        for (xa, xb) in sa.iter().zip(sb) {
            total += sq_dist(xa, xb)?;
        }
    }
    Ok(total / T::from_usize(stacks_a.len()).expect("small count"))
}

/// (1/2N_p) Σ_n (‖I_A − Î_A‖²_F + ‖I_B − Î_B‖²_F)
pub fn loss_m<T: Real>(
    mapped_a: &[Array3<T>],
    gt_a: &[Array3<T>],
    mapped_b: &[Array3<T>],
    gt_b: &[Array3<T>],
) -> Result<T> {
    check_batch(mapped_a, gt_a)?;
    check_batch(mapped_b, gt_b)?;
    check_batch(mapped_a, mapped_b)?;
    let mut total = T::zero();
    for n in 0..mapped_a.len() {
        total += sq_dist(&mapped_a[n], &gt_a[n])? + sq_dist(&mapped_b[n], &gt_b[n])?;
    }
    Ok(total / T::from_usize(2 * mapped_a.len()).expect("small count"))
}

/// Unweighted sum of the enabled terms.
pub fn total_loss(c: LossComponents, switches: LossSwitches) -> Result<f64> {
    switches.validate()?;
    let mut l = 0.0;
    if switches.use_r {
        l += c.r;
    }
    if switches.use_a {
        l += c.a;
    }
    if switches.use_m {
        l += c.m;
    }
    Ok(l)
}

/// d/dŷ of scale·‖y − ŷ‖² = 2·scale·(ŷ − y).
pub fn sq_dist_grad<T: Real>(pred: &Array3<T>, target: &Array3<T>, scale: T) -> Array3<T> {
    let two = scale + scale;
    ndarray::Zip::from(pred).and(target).map_collect(|&p, &t| two * (p - t))
}
