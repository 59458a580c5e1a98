//! JSON annotation files.
//!
//! One object per image:
//! `{"image": "<id>", "width": W, "height": H, "points": [[x,y],...], "boxes": [[x,y,w,h],...]}`
//! with `boxes` optional. A dataset file is a JSON array of such objects.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoundingBox, Point, PointSet};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<[f64; 4]>>,
}

impl Annotation {
    pub fn from_point_set(image: impl Into<String>, ps: &PointSet) -> Self {
        Annotation {
            image: image.into(),
            width: ps.width(),
            height: ps.height(),
            points: ps.points().iter().map(|p| [p.x, p.y]).collect(),
            boxes: ps
                .boxes()
                .map(|bs| bs.iter().map(|b| [b.x, b.y, b.w, b.h]).collect()),
        }
    }

    /// Validates the annotation and converts it to a [`PointSet`].
    pub fn to_point_set(&self) -> Result<PointSet> {
        let points = self.points.iter().map(|&[x, y]| Point::new(x, y)).collect();
        let boxes = self.boxes.as_ref().map(|bs| {
            bs.iter()
                .map(|&[x, y, w, h]| BoundingBox::new(x, y, w, h))
                .collect()
        });
        PointSet::new(self.width, self.height, points, boxes).map_err(|e| match e {
            crate::Error::InvalidAnnotation(msg) => {
                crate::Error::InvalidAnnotation(format!("image {:?}: {msg}", self.image))
            }
            other => other,
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<Annotation>),
    One(Annotation),
}

/// Parses a dataset: either a JSON array of annotations or a single object.
pub fn parse_dataset(text: &str) -> Result<Vec<Annotation>> {
    // Try the array form first so serde reports line/column for real syntax errors.
    match serde_json::from_str::<Vec<Annotation>>(text) {
        Ok(v) => Ok(v),
        Err(array_err) => match serde_json::from_str::<OneOrMany>(text) {
            Ok(OneOrMany::Many(v)) => Ok(v),
            Ok(OneOrMany::One(a)) => Ok(vec![a]),
            Err(_) => Err(array_err.into()),
        },
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text)
}
