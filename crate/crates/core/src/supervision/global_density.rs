use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;

/// Dataset-wide quantization of per-patch counts into `num_levels + 1`
/// classes `0..=num_levels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalDensitySpec {
    pub step_size: usize,
    pub num_levels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GlobalDensityLabel(pub usize);

impl GlobalDensityLabel {
    pub fn level(self) -> usize {
        self.0
    }
}

/// Step size `L = floor(max_i(|P_i| / Z_i * Z_patch_i) / M) + 1`.
///
/// Each entry pairs a full image annotation with the pixel count of the
/// patches cut from it; the image count is scaled to patch size.
pub fn compute_step_size(
    training_patches: &[(PointSet, usize)],
    num_levels: usize,
) -> Result<GlobalDensitySpec> {
    if training_patches.is_empty() {
        return Err(Error::NoData("step size needs at least one patch".into()));
    }
    if num_levels == 0 {
        return Err(Error::InvalidConfig("number of levels must be at least 1".into()));
    }
    let max_term = training_patches
        .iter()
        .map(|(ps, patch_pixels)| ps.len() as f64 / ps.pixel_count() as f64 * *patch_pixels as f64)
        .fold(0.0, f64::max);
    let step_size = (max_term / num_levels as f64).floor() as usize + 1;
    Ok(GlobalDensitySpec {
        step_size,
        num_levels,
    })
}

/// `min(floor(count / L), M)`.
pub fn level_for_count(count: usize, spec: &GlobalDensitySpec) -> GlobalDensityLabel {
    GlobalDensityLabel((count / spec.step_size.max(1)).min(spec.num_levels))
}

pub fn density_label(patch: &PointSet, spec: &GlobalDensitySpec) -> GlobalDensityLabel {
    level_for_count(patch.len(), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use proptest::prelude::*;

    fn with_count(n: usize, w: usize, h: usize) -> PointSet {
        let pts = (0..n)
            .map(|i| Point::new((i % w) as f64, ((i / w) % h) as f64))
            .collect();
        PointSet::from_points(w, h, pts).unwrap()
    }

    #[test]
    fn empty_patches_give_unit_step() {
        let spec = compute_step_size(&[(with_count(0, 10, 10), 25)], 4).unwrap();
        assert_eq!(spec.step_size, 1);
    }

    #[test]
    fn hand_evaluated_step() {
        // 80 / 10000 * 2500 = 20; floor(20 / 4) + 1 = 6
        let spec = compute_step_size(&[(with_count(80, 100, 100), 2500)], 4).unwrap();
        assert_eq!(spec, GlobalDensitySpec { step_size: 6, num_levels: 4 });
    }

    #[test]
    fn many_levels_give_unit_step() {
        let spec = compute_step_size(&[(with_count(3, 10, 10), 100)], 8).unwrap();
        assert_eq!(spec.step_size, 1);
    }

    #[test]
    fn maximum_is_taken_over_images() {
        let patches = [
            (with_count(10, 100, 100), 2500),
            (with_count(80, 100, 100), 2500),
            (with_count(5, 50, 50), 2500),
        ];
        assert_eq!(compute_step_size(&patches, 4).unwrap().step_size, 6);
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_step_size(&[], 4), Err(Error::NoData(_))));
        assert!(compute_step_size(&[(with_count(1, 4, 4), 4)], 0).is_err());
    }

    #[test]
    fn labels() {
        let spec = GlobalDensitySpec { step_size: 6, num_levels: 4 };
        assert_eq!(density_label(&with_count(0, 10, 10), &spec), GlobalDensityLabel(0));
        assert_eq!(density_label(&with_count(13, 10, 10), &spec), GlobalDensityLabel(2));
        assert_eq!(level_for_count(1000, &spec), GlobalDensityLabel(4));
    }

    proptest! {
        #[test]
        fn label_monotone_and_bounded(a in 0usize..500, b in 0usize..500, l in 1usize..20, m in 1usize..10) {
            let spec = GlobalDensitySpec { step_size: l, num_levels: m };
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(level_for_count(lo, &spec) <= level_for_count(hi, &spec));
            prop_assert!(level_for_count(hi, &spec).level() <= m);
        }

        #[test]
        fn step_at_least_one(n in 0usize..300, patch in 1usize..10_000, m in 1usize..16) {
            let spec = compute_step_size(&[(with_count(n, 100, 100), patch)], m).unwrap();
            prop_assert!(spec.step_size >= 1);
        }
    }
}
