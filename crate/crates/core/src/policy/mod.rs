//! Discrete action space, the rule-based expert labeler, the training loss,
//! and the behavior-cloned classifier.
//!
//! Yaw and pitch are each one of seven classes. Class `c` asks for a relative
//! change of `(3 − c)·δ` degrees, so class 3 holds course; for yaw a positive
//! change is clockwise, for pitch it is nose-up.

mod dataset;
mod expert;
mod loss;
mod net;
mod train;

pub use dataset::{load_dataset, write_dataset, DatasetMeta, LabeledSample, ManifestLine, Provenance, MANIFEST_FILE};
pub use expert::{expert_policy, ExpertConfig};
pub use loss::{
    categorical_cross_entropy, entropy, kl_divergence, loss, loss_grad_logits, loss_grad_probs, softmax, LossTerms,
};
pub use net::{Architecture, PolicyModel, Prediction, MODEL_FILE_VERSION};
pub use train::{evaluate, mean_target_entropy, sample_targets, train_bc, EpochStats, EvalStats, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 7;
pub const HOLD_CLASS: u8 = 3;
pub const DEFAULT_DELTA_DEG: f64 = 5.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("class {0} outside 0..=6")]
    ClassOutOfRange(u8),
    #[error("not a probability simplex: {0}")]
    NotSimplex(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PolicyError> = std::result::Result<T, E>;

/// Relative change in degrees for class `c` with step `delta_deg`.
pub fn decode_action(c: u8, delta_deg: f64) -> Result<f64> {
    if c as usize >= NUM_CLASSES {
        return Err(PolicyError::ClassOutOfRange(c));
    }
    Ok((HOLD_CLASS as f64 - c as f64) * delta_deg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionClass {
    pub c_yaw: u8,
    pub c_pitch: u8,
    pub delta_yaw_deg: f64,
    pub delta_pitch_deg: f64,
}

impl ActionClass {
    pub fn new(c_yaw: u8, c_pitch: u8) -> Result<Self> {
        Self::with_deltas(c_yaw, c_pitch, DEFAULT_DELTA_DEG, DEFAULT_DELTA_DEG)
    }

    pub fn with_deltas(c_yaw: u8, c_pitch: u8, delta_yaw_deg: f64, delta_pitch_deg: f64) -> Result<Self> {
        for c in [c_yaw, c_pitch] {
            if c as usize >= NUM_CLASSES {
                return Err(PolicyError::ClassOutOfRange(c));
            }
        }
        Ok(Self { c_yaw, c_pitch, delta_yaw_deg, delta_pitch_deg })
    }

    pub fn hold() -> Self {
        Self::new(HOLD_CLASS, HOLD_CLASS).expect("hold class is valid")
    }

    /// Clockwise yaw change, degrees.
    pub fn yaw_change_deg(&self) -> f64 {
        (HOLD_CLASS as f64 - self.c_yaw as f64) * self.delta_yaw_deg
    }

    /// Nose-up pitch change, degrees.
    pub fn pitch_change_deg(&self) -> f64 {
        (HOLD_CLASS as f64 - self.c_pitch as f64) * self.delta_pitch_deg
    }
}

/// Seven-way categorical distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution(pub [f64; NUM_CLASSES]);

impl ClassDistribution {
    pub const SIMPLEX_TOL: f64 = 1e-9;

    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self> {
        let d = Self(p);
        d.validate()?;
        Ok(d)
    }

    pub fn one_hot(c: u8) -> Result<Self> {
        if c as usize >= NUM_CLASSES {
            return Err(PolicyError::ClassOutOfRange(c));
        }
        let mut p = [0.0; NUM_CLASSES];
        p[c as usize] = 1.0;
        Ok(Self(p))
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(PolicyError::NotSimplex(format!("{:?} has negative or non-finite entries", self.0)));
        }
        let s: f64 = self.0.iter().sum();
        if (s - 1.0).abs() > Self::SIMPLEX_TOL {
            return Err(PolicyError::NotSimplex(format!("{:?} sums to {s}", self.0)));
        }
        Ok(())
    }

    /// Most probable class; ties go to the lower index.
    pub fn argmax(&self) -> u8 {
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if self.0[k] > self.0[best] {
                best = k;
            }
        }
        best as u8
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }
}

/// Label smoothing: 0.8 on the class, 0.1 on each neighbor; a missing
/// neighbor's share folds back onto the class.
pub fn smooth_label(c: u8) -> Result<ClassDistribution> {
    if c as usize >= NUM_CLASSES {
        return Err(PolicyError::ClassOutOfRange(c));
    }
    let c = c as usize;
    let mut p = [0.0; NUM_CLASSES];
    p[c] = 0.8;
    for n in [c.checked_sub(1), Some(c + 1).filter(|&n| n < NUM_CLASSES)] {
        match n {
            Some(n) => p[n] = 0.1,
            None => p[c] += 0.1,
        }
    }
    Ok(ClassDistribution(p))
}
