use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use super::{count_errors, game, psnr_ssim, Stratification, Stratum};
use crate::error::{Error, Result};
use crate::supervision::DensityMap;

/// JSON has no infinities; write them as the strings `"inf"` / `"-inf"`.
fn finite_or_tag<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_infinite() => s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" }),
        Some(x) if x.is_nan() => s.serialize_str("nan"),
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub image: String,
    pub truth: f64,
    pub pred: f64,
    pub abs_err: f64,
    /// GAME at levels `0..=game_max`.
    pub game: Vec<f64>,
    /// Undefined when the true map is all zero.
    #[serde(serialize_with = "finite_or_tag")]
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

/// Metrics of one predicted density map against its ground truth.
pub fn image_metrics(
    image: impl Into<String>,
    truth: &DensityMap,
    pred: &DensityMap,
    game_max: u32,
) -> Result<ImageMetrics> {
    truth.same_shape(pred)?;
    let (t, p) = (truth.sum(), pred.sum());
    let game = (0..=game_max)
        .map(|l| game(truth, pred, l))
        .collect::<Result<Vec<f64>>>()?;
    let (psnr, ssim) = match psnr_ssim(truth, pred) {
        Ok((a, b)) => (Some(a), Some(b)),
        Err(Error::UndefinedPeak) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(ImageMetrics {
        image: image.into(),
        truth: t,
        pred: p,
        abs_err: (p - t).abs(),
        game,
        psnr,
        ssim,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub images: usize,
    pub mae: f64,
    pub rmse: f64,
    pub nmae: f64,
    /// Mean GAME over images at levels `0..=game_max`.
    pub game: Vec<f64>,
    /// Mean over images with a defined value.
    #[serde(serialize_with = "finite_or_tag")]
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StratumSummary {
    pub stratum: String,
    pub images: usize,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<Vec<StratumSummary>>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        total += v;
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

impl MetricReport {
    pub fn new(per_image: Vec<ImageMetrics>) -> Result<Self> {
        let first = per_image
            .first()
            .ok_or_else(|| Error::NoData("no images to evaluate".into()))?;
        let levels = first.game.len();
        if per_image.iter().any(|m| m.game.len() != levels) {
            return Err(Error::shape("images evaluated at different GAME levels"));
        }
        let truth: Vec<f64> = per_image.iter().map(|m| m.truth).collect();
        let pred: Vec<f64> = per_image.iter().map(|m| m.pred).collect();
        let errors = count_errors(&truth, &pred)?;
        let n = per_image.len() as f64;
        let game = (0..levels)
            .map(|l| per_image.iter().map(|m| m.game[l]).sum::<f64>() / n)
            .collect();
        let aggregate = Aggregate {
            images: per_image.len(),
            mae: errors.mae,
            rmse: errors.rmse,
            nmae: errors.nmae,
            game,
            psnr: mean_defined(per_image.iter().map(|m| m.psnr)),
            ssim: mean_defined(per_image.iter().map(|m| m.ssim)),
        };
        Ok(MetricReport {
            per_image,
            aggregate,
            strata: None,
        })
    }

    /// Adds per-stratum count errors. Every evaluated image must appear in
    /// the stratification.
    pub fn with_strata(mut self, strata: &Stratification) -> Result<Self> {
        let mut groups: [(Vec<f64>, Vec<f64>); 3] = Default::default();
        for m in &self.per_image {
            let entry = strata
                .images
                .iter()
                .find(|s| s.image == m.image)
                .ok_or_else(|| Error::InvalidAnnotation(format!("no annotation for image {}", m.image)))?;
            let g = &mut groups[entry.stratum as usize];
            g.0.push(m.truth);
            g.1.push(m.pred);
        }
        let mut out = Vec::new();
        for (st, (t, p)) in Stratum::ALL.into_iter().zip(groups) {
            let (mae, rmse) = if t.is_empty() {
                (0.0, 0.0)
            } else {
                let e = count_errors(&t, &p)?;
                (e.mae, e.rmse)
            };
            out.push(StratumSummary {
                stratum: st.label(strata.mode).to_owned(),
                images: t.len(),
                mae,
                rmse,
            });
        }
        self.strata = Some(out);
        Ok(self)
    }

    /// `image,truth,pred,abs_err,game1..gameN`, one row per image.
    pub fn to_csv(&self) -> String {
        let levels = self.aggregate.game.len();
        let mut out = String::from("image,truth,pred,abs_err");
        for l in 1..levels {
            write!(out, ",game{l}").expect("writing to a string");
        }
        out.push('\n');
        for m in &self.per_image {
            write!(out, "{},{},{},{}", m.image, m.truth, m.pred, m.abs_err).expect("writing to a string");
            for g in &m.game[1..] {
                write!(out, ",{g}").expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
