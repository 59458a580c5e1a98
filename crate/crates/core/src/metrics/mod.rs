//! Counting metrics: MAE / RMSE / NMAE, grid-averaged error (GAME), PSNR
//! and SSIM of density maps, and scale / crowding stratification.

mod game;
mod quality;
mod report;
mod stratify;

pub use game::{game, GAME_MAX_LEVEL};
pub use quality::{psnr_ssim, ssim_window, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{image_metrics, Aggregate, ImageMetrics, MetricReport, StratumSummary};
pub use stratify::{stratify, Stratification, StratifyMode, Stratum, StratumIndex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountErrors {
    pub mae: f64,
    pub rmse: f64,
    /// Mean of `|pred - truth| / truth` over images with a positive true
    /// count; 0 when there are none.
    pub nmae: f64,
}

pub fn count_errors(truth: &[f64], pred: &[f64]) -> Result<CountErrors> {
    if truth.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} true counts and {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::NoData("no counts to compare".into()));
    }
    let n = truth.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut rel = 0.0;
    let mut positive = 0usize;
    for (&t, &p) in truth.iter().zip(pred) {
        let d = (p - t).abs();
        abs += d;
        sq += d * d;
        if t > 0.0 {
            rel += d / t;
            positive += 1;
        }
    }
    Ok(CountErrors {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        nmae: if positive == 0 { 0.0 } else { rel / positive as f64 },
    })
}
