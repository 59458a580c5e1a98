use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyMode {
    /// Index `F_s / F_n`: mean box area over object count.
    Scale,
    /// Index `(F_s / I_s) * (F_n / I_s)` with `I_s` the image area.
    Crowding,
}

impl FromStr for StratifyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scale" => Ok(StratifyMode::Scale),
            "crowding" => Ok(StratifyMode::Crowding),
            _ => Err(Error::InvalidConfig(format!("unknown stratification {s:?}"))),
        }
    }
}

/// Lower, middle or upper third of the sorted index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Low,
    Medium,
    High,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Low, Stratum::Medium, Stratum::High];

    /// `small / medium / large` for scale, `sparse / medium / dense` for crowding.
    pub fn label(self, mode: StratifyMode) -> &'static str {
        match (mode, self) {
            (_, Stratum::Medium) => "medium",
            (StratifyMode::Scale, Stratum::Low) => "small",
            (StratifyMode::Scale, Stratum::High) => "large",
            (StratifyMode::Crowding, Stratum::Low) => "sparse",
            (StratifyMode::Crowding, Stratum::High) => "dense",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumIndex {
    pub image: String,
    pub index: f64,
    pub stratum: Stratum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub mode: StratifyMode,
    /// One entry per input image, in input order.
    pub images: Vec<StratumIndex>,
}

impl Stratification {
    /// Image ids of one stratum, in ascending index order.
    pub fn members(&self, stratum: Stratum) -> Vec<&str> {
        let mut m: Vec<&StratumIndex> = self.images.iter().filter(|s| s.stratum == stratum).collect();
        m.sort_by(|a, b| a.index.total_cmp(&b.index).then_with(|| a.image.cmp(&b.image)));
        m.into_iter().map(|s| s.image.as_str()).collect()
    }
}

fn index_of(id: &str, ps: &PointSet, mode: StratifyMode) -> Result<f64> {
    let boxes = ps.boxes().ok_or(Error::MissingBoxes)?;
    if boxes.is_empty() {
        return Err(Error::InvalidAnnotation(format!(
            "image {id} has no annotations to stratify by"
        )));
    }
    let f_n = boxes.len() as f64;
    let f_s = boxes.iter().map(|b| b.area()).sum::<f64>() / f_n;
    let i_s = ps.pixel_count() as f64;
    Ok(match mode {
        StratifyMode::Scale => f_s / f_n,
        StratifyMode::Crowding => (f_s / i_s) * (f_n / i_s),
    })
}

/// Sorts images by their scale or crowding index (ties broken by image id)
/// and cuts the order into thirds at ranks `floor(n / 3)` and `floor(2n / 3)`.
pub fn stratify(images: &[(&str, &PointSet)], mode: StratifyMode) -> Result<Stratification> {
    let indices = images
        .iter()
        .map(|(id, ps)| index_of(id, ps, mode))
        .collect::<Result<Vec<f64>>>()?;
    let n = images.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        indices[a]
            .total_cmp(&indices[b])
            .then_with(|| images[a].0.cmp(images[b].0))
    });
    let mut stratum = vec![Stratum::Low; n];
    for (rank, &i) in order.iter().enumerate() {
        stratum[i] = if rank < n / 3 {
            Stratum::Low
        } else if rank < 2 * n / 3 {
            Stratum::Medium
        } else {
            Stratum::High
        };
    }
    Ok(Stratification {
        mode,
        images: images
            .iter()
            .zip(indices)
            .zip(stratum)
            .map(|((&(id, _), index), stratum)| StratumIndex {
                image: id.to_owned(),
                index,
                stratum,
            })
            .collect(),
    })
}
