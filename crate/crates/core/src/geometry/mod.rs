//! Annotation data model, neighbor search and the per-point kernel
//! bandwidth estimators.

mod annotation;
mod kernels;
mod knn;

pub use annotation::{load_dataset, parse_dataset, Annotation};
pub use kernels::{
    estimate_sigma_gak, estimate_sigma_nonuniform, fixed_sigma, sigma_error, sigma_from_boxes,
    EstimatorTag, KernelChoice, SigmaAssignment, DEFAULT_REGION_FRACTION, FALLBACK_SIGMA, MIN_SIGMA,
};
pub use knn::{knn_distances, mean_knn_distances, GridIndex};

use crate::error::{Error, Result};

/// A point annotation in pixel coordinates. Pixel centers sit at integer
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn distance(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Axis-aligned box `(x, y, w, h)` with `(x, y)` the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Per-image object annotations.
///
/// Every point lies inside `[0, width) x [0, height)`. When boxes are
/// present there is exactly one box per point, each with positive extent.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    width: usize,
    height: usize,
    points: Vec<Point>,
    boxes: Option<Vec<BoundingBox>>,
}

impl PointSet {
    pub fn new(
        width: usize,
        height: usize,
        points: Vec<Point>,
        boxes: Option<Vec<BoundingBox>>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyCanvas { width, height });
        }
        for (i, p) in points.iter().enumerate() {
            let inside = p.x >= 0.0 && p.y >= 0.0 && p.x < width as f64 && p.y < height as f64;
            if !inside {
                return Err(Error::InvalidAnnotation(format!(
                    "point {i} ({}, {}) outside {width}x{height} image",
                    p.x, p.y
                )));
            }
        }
        if let Some(boxes) = &boxes {
            if boxes.len() != points.len() {
                return Err(Error::InvalidAnnotation(format!(
                    "{} boxes for {} points",
                    boxes.len(),
                    points.len()
                )));
            }
            if let Some(i) = boxes.iter().position(|b| !(b.w > 0.0 && b.h > 0.0)) {
                return Err(Error::InvalidAnnotation(format!(
                    "box {i} has non-positive extent"
                )));
            }
        }
        Ok(PointSet {
            width,
            height,
            points,
            boxes,
        })
    }

    /// Point-only annotations.
    pub fn from_points(width: usize, height: usize, points: Vec<Point>) -> Result<Self> {
        Self::new(width, height, points, None)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn boxes(&self) -> Option<&[BoundingBox]> {
        self.boxes.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Annotations falling inside the window `[x, x+w) x [y, y+h)`, shifted
    /// into window coordinates. Boxes are clipped to the window.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<PointSet> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::shape(format!(
                "crop ({x},{y},{w},{h}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let (x0, y0) = (x as f64, y as f64);
        let (x1, y1) = ((x + w) as f64, (y + h) as f64);
        let mut points = Vec::new();
        let mut boxes = self.boxes.as_ref().map(|_| Vec::new());
        for (i, p) in self.points.iter().enumerate() {
            if p.x < x0 || p.x >= x1 || p.y < y0 || p.y >= y1 {
                continue;
            }
            points.push(Point::new(p.x - x0, p.y - y0));
            if let (Some(out), Some(src)) = (boxes.as_mut(), self.boxes.as_ref()) {
                let b = src[i];
                let bx0 = b.x.max(x0);
                let by0 = b.y.max(y0);
                let bx1 = (b.x + b.w).min(x1);
                let by1 = (b.y + b.h).min(y1);
                // a box always contains its own point, so the clipped box is non-empty
                // unless the point sits on its edge; keep a sliver in that case
                let bw = (bx1 - bx0).max(f64::EPSILON);
                let bh = (by1 - by0).max(f64::EPSILON);
                out.push(BoundingBox::new(bx0 - x0, by0 - y0, bw, bh));
            }
        }
        PointSet::new(w, h, points, boxes)
    }
}
