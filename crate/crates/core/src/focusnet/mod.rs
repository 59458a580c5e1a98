//! Toy three-branch focus network: an encoder / distiller / decoder base,
//! a segmentation focus, a global-density focus and their fusion.
//!
//! Every convolution is followed by a ReLU and a learnable per-channel
//! affine (scale, shift) in place of batch normalization.

mod data;
mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

pub use data::samples_from_scenes;
pub use model::{FocusNet, FocusNetOutput};
pub use train::{mean_abs_count_error, sample_loss, split_indices, train, EpochLog, Sample, TrainConfig, TrainLog};

/// Which focus branches take part in the fusion and in the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Both focus branches.
    #[default]
    None,
    /// Global-density focus only.
    NoSeg,
    /// Segmentation focus only.
    NoDensity,
    /// Neither branch; the density head reads the base features directly.
    BaseOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::None,
        Ablation::NoSeg,
        Ablation::NoDensity,
        Ablation::BaseOnly,
    ];

    pub fn uses_seg(self) -> bool {
        matches!(self, Ablation::None | Ablation::NoDensity)
    }

    pub fn uses_density(self) -> bool {
        matches!(self, Ablation::None | Ablation::NoSeg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoSeg => "no-seg",
            Ablation::NoDensity => "no-density",
            Ablation::BaseOnly => "base-only",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusNetConfig {
    /// Side of the square input, in pixels. Must be divisible by 8.
    pub input_size: usize,
    /// Feature width `C` used throughout the network.
    pub base_channels: usize,
    /// Number of density levels `M`; the classifier has `M + 1` outputs.
    pub num_levels: usize,
    /// Fixed factor between the density head and the density map: the head
    /// predicts `density_scale` times the per-pixel object density, and the
    /// regression loss is taken in those units.
    pub density_scale: f64,
    pub weights: LossWeights,
    pub gamma_s: f64,
    pub gamma_c: f64,
    pub seed: u64,
}

impl Default for FocusNetConfig {
    fn default() -> Self {
        FocusNetConfig {
            input_size: 64,
            base_channels: 16,
            num_levels: 4,
            density_scale: 100.0,
            weights: LossWeights::default(),
            gamma_s: 2.0,
            gamma_c: 2.0,
            seed: 0,
        }
    }
}

impl FocusNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {} is not a positive multiple of 8",
                self.input_size
            )));
        }
        if self.base_channels == 0 || self.num_levels == 0 {
            return Err(Error::InvalidConfig(
                "channel count and number of levels must be positive".into(),
            ));
        }
        if !(self.density_scale > 0.0 && self.density_scale.is_finite()) {
            return Err(Error::InvalidConfig("density scale must be positive".into()));
        }
        if !(self.gamma_s >= 0.0 && self.gamma_c >= 0.0) {
            return Err(Error::InvalidConfig("focal gammas must be >= 0".into()));
        }
        LossWeights::new(self.weights.lambda_r, self.weights.lambda_s, self.weights.lambda_c)?;
        Ok(())
    }
}
