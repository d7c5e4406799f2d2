//! Raw-RGB color mapping between camera sensors.
//!
//! Frames are read and normalized by [`rawio`], synthetic paired data comes
//! from [`synthcam`], per-pair calibration lives in [`calibfit`], the
//! semi-supervised mapping network in [`nnmap`], metrics in [`evalkit`] and
//! comparison methods in [`baselines`].

pub mod annotation;
pub mod baselines;
pub mod calibfit;
pub mod evalkit;
pub mod nnmap;
pub mod rawio;
pub mod synthcam;
