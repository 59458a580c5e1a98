use crate::error::{Error, Result};
use crate::geometry::{PointSet, SigmaAssignment};

/// Kernels are truncated at this many sigmas.
pub const TRUNCATION_RADIUS: f64 = 3.0;

/// Row-major `height x width` field of objects per pixel.
///
/// Maps produced by [`rasterize_density`] are non-negative and sum to the
/// number of annotations. Maps read from disk or predicted by a network
/// carry no sign guarantee.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyCanvas { width, height });
        }
        Ok(DensityMap {
            width,
            height,
            values: vec![0.0; width * height],
        })
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyCanvas { width, height });
        }
        if values.len() != width * height {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        Ok(DensityMap {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Estimated object count: the plain sum over all pixels.
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_shape(&self, other: &DensityMap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape(format!(
                "{}x{} map vs {}x{} map",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Places one unit-mass Gaussian per annotation.
///
/// Each kernel is sampled at integer pixel centers within `3 sigma` of the
/// point and renormalized so its discrete mass is exactly one, including
/// kernels clipped by the image border. A kernel too narrow to reach any
/// pixel center puts its whole mass on the nearest pixel.
pub fn rasterize_density(ps: &PointSet, sigmas: &SigmaAssignment) -> Result<DensityMap> {
    if sigmas.len() != ps.len() {
        return Err(Error::shape(format!(
            "{} sigmas for {} points",
            sigmas.len(),
            ps.len()
        )));
    }
    let (w, h) = (ps.width(), ps.height());
    let mut map = DensityMap::zeros(w, h)?;
    let mut weights: Vec<(usize, f64)> = Vec::new();
    for (p, &sigma) in ps.points().iter().zip(sigmas.sigmas()) {
        let r = TRUNCATION_RADIUS * sigma;
        let r2 = r * r;
        let inv_two_var = 1.0 / (2.0 * sigma * sigma);
        let x0 = (p.x - r).ceil().max(0.0) as usize;
        let y0 = (p.y - r).ceil().max(0.0) as usize;
        let x1 = (p.x + r).floor().min((w - 1) as f64);
        let y1 = (p.y + r).floor().min((h - 1) as f64);

        weights.clear();
        let mut total = 0.0;
        if x1 >= 0.0 && y1 >= 0.0 {
            for iy in y0..=y1 as usize {
                let dy = iy as f64 - p.y;
                for ix in x0..=x1 as usize {
                    let dx = ix as f64 - p.x;
                    let d2 = dx * dx + dy * dy;
                    if d2 <= r2 {
                        let v = (-d2 * inv_two_var).exp();
                        total += v;
                        weights.push((iy * w + ix, v));
                    }
                }
            }
        }
        if total > 0.0 {
            let norm = 1.0 / total;
            for &(i, v) in &weights {
                map.values[i] += v * norm;
            }
        } else {
            let ix = (p.x.round() as usize).min(w - 1);
            let iy = (p.y.round() as usize).min(h - 1);
            map.values[iy * w + ix] += 1.0;
        }
    }
    Ok(map)
}
