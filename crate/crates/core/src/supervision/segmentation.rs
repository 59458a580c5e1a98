use crate::error::{Error, Result};
use crate::geometry::{PointSet, SigmaAssignment};

/// Row-major binary mask; 1 marks pixels within sigma of some annotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl SegmentationMap {
    pub fn from_values(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyCanvas { width, height });
        }
        if values.len() != width * height {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height} mask",
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidAnnotation("mask values must be 0 or 1".into()));
        }
        Ok(SegmentationMap {
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

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Pixel `p` is foreground iff some annotation `P` has `|p - P| <= sigma_P`.
pub fn rasterize_segmentation(ps: &PointSet, sigmas: &SigmaAssignment) -> Result<SegmentationMap> {
    if sigmas.len() != ps.len() {
        return Err(Error::shape(format!(
            "{} sigmas for {} points",
            sigmas.len(),
            ps.len()
        )));
    }
    let (w, h) = (ps.width(), ps.height());
    let mut values = vec![0u8; w * h];
    for (p, &sigma) in ps.points().iter().zip(sigmas.sigmas()) {
        let x0 = (p.x - sigma).ceil().max(0.0) as usize;
        let y0 = (p.y - sigma).ceil().max(0.0) as usize;
        let x1 = (p.x + sigma).floor().min((w - 1) as f64);
        let y1 = (p.y + sigma).floor().min((h - 1) as f64);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for iy in y0..=y1 as usize {
            let dy = iy as f64 - p.y;
            for ix in x0..=x1 as usize {
                let dx = ix as f64 - p.x;
                if (dx * dx + dy * dy).sqrt() <= sigma {
                    values[iy * w + ix] = 1;
                }
            }
        }
    }
    SegmentationMap::from_values(w, h, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fixed_sigma, EstimatorTag, Point};
    use proptest::prelude::*;

    fn brute(ps: &PointSet, sigmas: &[f64]) -> Vec<u8> {
        let mut out = vec![0u8; ps.pixel_count()];
        for y in 0..ps.height() {
            for x in 0..ps.width() {
                for (p, s) in ps.points().iter().zip(sigmas) {
                    if ((x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2)).sqrt() <= *s {
                        out[y * ps.width() + x] = 1;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn disk_of_radius_two_has_13_pixels() {
        let ps = PointSet::from_points(21, 21, vec![Point::new(10.0, 10.0)]).unwrap();
        let m = rasterize_segmentation(&ps, &fixed_sigma(&ps, 2.0).unwrap()).unwrap();
        assert_eq!(m.foreground_count(), 13);
        let mut expected = 0;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let on = dx * dx + dy * dy <= 4;
                expected += on as usize;
                assert_eq!(m.get((10 + dx) as usize, (10 + dy) as usize), on as u8);
            }
        }
        assert_eq!(expected, 13);
    }

    #[test]
    fn empty_points_give_empty_mask() {
        let ps = PointSet::from_points(5, 5, vec![]).unwrap();
        let m = rasterize_segmentation(&ps, &fixed_sigma(&ps, 2.0).unwrap()).unwrap();
        assert_eq!(m.foreground_count(), 0);
    }

    #[test]
    fn overlapping_disks_union() {
        let ps = PointSet::from_points(
            30,
            20,
            vec![Point::new(10.0, 10.0), Point::new(13.5, 9.2)],
        )
        .unwrap();
        let s = SigmaAssignment::new(vec![4.0, 3.3], EstimatorTag::Fixed).unwrap();
        let m = rasterize_segmentation(&ps, &s).unwrap();
        assert_eq!(m.values(), brute(&ps, s.sigmas()).as_slice());
    }

    #[test]
    fn rejects_non_binary_values() {
        assert!(SegmentationMap::from_values(2, 1, vec![0, 2]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec((0.0f64..24.0, 0.0f64..16.0, 0.2f64..6.0), 0..8)
        ) {
            let ps = PointSet::from_points(24, 16, pts.iter().map(|&(x, y, _)| Point::new(x, y)).collect()).unwrap();
            let sig: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let m = rasterize_segmentation(&ps, &SigmaAssignment::new(sig.clone(), EstimatorTag::Fixed).unwrap()).unwrap();
            let want = brute(&ps, &sig);
            prop_assert_eq!(m.values(), want.as_slice());
        }

        #[test]
        fn growing_sigma_is_monotone(
            pts in prop::collection::vec((0.0f64..24.0, 0.0f64..16.0, 0.2f64..6.0), 1..8),
            grow in 0.0f64..4.0,
            which in 0usize..8,
        ) {
            let ps = PointSet::from_points(24, 16, pts.iter().map(|&(x, y, _)| Point::new(x, y)).collect()).unwrap();
            let sig: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let mut bigger = sig.clone();
            bigger[which % sig.len()] += grow;
            let a = rasterize_segmentation(&ps, &SigmaAssignment::new(sig, EstimatorTag::Fixed).unwrap()).unwrap();
            let b = rasterize_segmentation(&ps, &SigmaAssignment::new(bigger, EstimatorTag::Fixed).unwrap()).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!(x <= y);
            }
        }
    }
}
