//! Per-point Gaussian bandwidth (sigma) estimators.

use serde::{Deserialize, Serialize};

use super::knn::{mean_knn_distances, GridIndex};
use super::PointSet;
use crate::error::{Error, Result};

/// Sigma given to the lone point of a single-annotation image, where no
/// neighbor distance exists.
pub const FALLBACK_SIGMA: f64 = 15.0;

/// Lower bound applied to estimated sigmas. Only coincident annotations
/// (zero neighbor distance) ever reach it.
pub const MIN_SIGMA: f64 = 0.1;

/// Default side of the local averaging region, as a fraction of the image side.
pub const DEFAULT_REGION_FRACTION: f64 = 0.125;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    Fixed,
    Gak,
    Nonuniform,
    FromBoxes,
}

/// One sigma per annotation, parallel to [`PointSet::points`].
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaAssignment {
    sigmas: Vec<f64>,
    tag: EstimatorTag,
}

impl SigmaAssignment {
    pub fn new(sigmas: Vec<f64>, tag: EstimatorTag) -> Result<Self> {
        if let Some(i) = sigmas.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "sigma {i} = {} is not positive and finite",
                sigmas[i]
            )));
        }
        Ok(SigmaAssignment { sigmas, tag })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn tag(&self) -> EstimatorTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
}

/// A sigma estimator together with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelChoice {
    Fixed { sigma: f64 },
    Gak { k: usize, beta: f64 },
    Nonuniform { k: usize, beta: f64, region_fraction: f64 },
    Boxes,
}

impl KernelChoice {
    /// Default neighbor count for the adaptive estimators.
    pub const DEFAULT_K: usize = 5;
    /// Default proportionality factor for the adaptive estimators.
    pub const DEFAULT_BETA: f64 = 0.3;

    pub fn gak() -> Self {
        KernelChoice::Gak {
            k: Self::DEFAULT_K,
            beta: Self::DEFAULT_BETA,
        }
    }

    pub fn nonuniform() -> Self {
        KernelChoice::Nonuniform {
            k: Self::DEFAULT_K,
            beta: Self::DEFAULT_BETA,
            region_fraction: DEFAULT_REGION_FRACTION,
        }
    }

    pub fn assign(&self, ps: &PointSet) -> Result<SigmaAssignment> {
        match *self {
            KernelChoice::Fixed { sigma } => fixed_sigma(ps, sigma),
            KernelChoice::Gak { k, beta } => estimate_sigma_gak(ps, k, beta),
            KernelChoice::Nonuniform {
                k,
                beta,
                region_fraction,
            } => estimate_sigma_nonuniform(ps, k, beta, region_fraction),
            KernelChoice::Boxes => sigma_from_boxes(ps),
        }
    }
}

fn check_params(k: usize, beta: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// The same sigma for every point.
pub fn fixed_sigma(ps: &PointSet, sigma: f64) -> Result<SigmaAssignment> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("fixed sigma must be positive, got {sigma}")));
    }
    SigmaAssignment::new(vec![sigma; ps.len()], EstimatorTag::Fixed)
}

/// Geometry-adaptive kernel: `sigma_P = beta * mean distance from P to its
/// k nearest neighbors` over the whole image.
pub fn estimate_sigma_gak(ps: &PointSet, k: usize, beta: f64) -> Result<SigmaAssignment> {
    check_params(k, beta)?;
    let tag = EstimatorTag::Gak;
    match ps.len() {
        0 => return SigmaAssignment::new(Vec::new(), tag),
        1 => return SigmaAssignment::new(vec![FALLBACK_SIGMA], tag),
        _ => {}
    }
    let mean_d = mean_knn_distances(ps.points(), k)?;
    SigmaAssignment::new(
        mean_d.iter().map(|d| (beta * d).max(MIN_SIGMA)).collect(),
        tag,
    )
}

/// Local-region kernel: `sigma_P` is the average of `beta * dbar_a` over the
/// annotations `a` inside a rectangle centered at P whose sides are
/// `region_fraction` times the image sides. `dbar_a` is the mean distance
/// from `a` to its k nearest neighbors anywhere in the image.
pub fn estimate_sigma_nonuniform(
    ps: &PointSet,
    k: usize,
    beta: f64,
    region_fraction: f64,
) -> Result<SigmaAssignment> {
    check_params(k, beta)?;
    if !(region_fraction > 0.0 && region_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "region fraction must lie in (0, 1], got {region_fraction}"
        )));
    }
    let tag = EstimatorTag::Nonuniform;
    match ps.len() {
        0 => return SigmaAssignment::new(Vec::new(), tag),
        1 => return SigmaAssignment::new(vec![FALLBACK_SIGMA], tag),
        _ => {}
    }
    let points = ps.points();
    let mean_d = mean_knn_distances(points, k)?;
    let half_w = 0.5 * region_fraction * ps.width() as f64;
    let half_h = 0.5 * region_fraction * ps.height() as f64;
    let index = GridIndex::new(points);

    let mut sigmas = Vec::with_capacity(points.len());
    let mut members: Vec<usize> = Vec::new();
    for p in points {
        members.clear();
        members.extend(index.in_rect(p, half_w, half_h));
        // Sum in coordinate order so the result is independent of annotation order.
        members.sort_unstable_by(|&a, &b| {
            points[a]
                .x
                .total_cmp(&points[b].x)
                .then(points[a].y.total_cmp(&points[b].y))
        });
        let total: f64 = members.iter().map(|&a| beta * mean_d[a]).sum();
        sigmas.push((total / members.len() as f64).max(MIN_SIGMA));
    }
    SigmaAssignment::new(sigmas, tag)
}

/// Reference sigma from box annotations: half the shorter box side.
pub fn sigma_from_boxes(ps: &PointSet) -> Result<SigmaAssignment> {
    let boxes = ps.boxes().ok_or(Error::MissingBoxes)?;
    SigmaAssignment::new(
        boxes.iter().map(|b| 0.5 * b.w.min(b.h)).collect(),
        EstimatorTag::FromBoxes,
    )
}

/// Mean absolute difference between two parallel sigma assignments.
pub fn sigma_error(estimated: &SigmaAssignment, reference: &SigmaAssignment) -> Result<f64> {
    if estimated.len() != reference.len() {
        return Err(Error::shape(format!(
            "sigma assignments of length {} and {}",
            estimated.len(),
            reference.len()
        )));
    }
    if estimated.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = estimated
        .sigmas
        .iter()
        .zip(&reference.sigmas)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / estimated.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingBox, Point};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lattice(n: usize, spacing: f64, offset: f64) -> PointSet {
        let mut pts = Vec::new();
        for j in 0..n {
            for i in 0..n {
                pts.push(Point::new(offset + i as f64 * spacing, offset + j as f64 * spacing));
            }
        }
        let side = (offset * 2.0 + n as f64 * spacing).ceil() as usize;
        PointSet::from_points(side, side, pts).unwrap()
    }

    fn random_set(n: usize, seed: u64, side: usize) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Point::new(
                    rng.random::<f64>() * side as f64,
                    rng.random::<f64>() * side as f64,
                )
            })
            .collect();
        PointSet::from_points(side, side, pts).unwrap()
    }

    // Nested loops straight from the definition, no index structure.
    fn brute_mean_knn(pts: &[Point], k: usize) -> Vec<f64> {
        pts.iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<f64> = pts
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt())
                    .collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                d.truncate(k);
                d.iter().sum::<f64>() / d.len() as f64
            })
            .collect()
    }

    fn brute_nonuniform(ps: &PointSet, k: usize, beta: f64, frac: f64) -> Vec<f64> {
        let dbar = brute_mean_knn(ps.points(), k);
        let hw = 0.5 * frac * ps.width() as f64;
        let hh = 0.5 * frac * ps.height() as f64;
        ps.points()
            .iter()
            .map(|p| {
                let mut sum = 0.0;
                let mut count = 0usize;
                for (a, q) in ps.points().iter().enumerate() {
                    if (q.x - p.x).abs() <= hw && (q.y - p.y).abs() <= hh {
                        sum += beta * dbar[a];
                        count += 1;
                    }
                }
                sum / count as f64
            })
            .collect()
    }

    #[test]
    fn unit_grid_gak() {
        let ps = lattice(10, 1.0, 0.5);
        let s = estimate_sigma_gak(&ps, 1, 0.3).unwrap();
        assert_eq!(s.tag(), EstimatorTag::Gak);
        for v in s.sigmas() {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_midpoint() {
        let ps = PointSet::from_points(
            10,
            10,
            vec![Point::new(0.0, 0.0), Point::new(3.0, 4.0), Point::new(6.0, 8.0)],
        )
        .unwrap();
        let s = estimate_sigma_gak(&ps, 2, 0.3).unwrap();
        assert!((s.sigmas()[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn gak_matches_brute_force() {
        let ps = random_set(200, 5, 100);
        let s = estimate_sigma_gak(&ps, 5, 0.3).unwrap();
        let oracle = brute_mean_knn(ps.points(), 5);
        for (a, b) in s.sigmas().iter().zip(&oracle) {
            assert!((a - 0.3 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_point_falls_back() {
        let ps = PointSet::from_points(20, 20, vec![Point::new(3.0, 3.0)]).unwrap();
        assert_eq!(estimate_sigma_gak(&ps, 5, 0.3).unwrap().sigmas(), &[FALLBACK_SIGMA]);
        assert_eq!(
            estimate_sigma_nonuniform(&ps, 5, 0.3, 0.125).unwrap().sigmas(),
            &[FALLBACK_SIGMA]
        );
    }

    #[test]
    fn empty_set_gives_empty_assignment() {
        let ps = PointSet::from_points(20, 20, vec![]).unwrap();
        assert!(estimate_sigma_gak(&ps, 5, 0.3).unwrap().is_empty());
        assert!(estimate_sigma_nonuniform(&ps, 5, 0.3, 0.125).unwrap().is_empty());
    }

    #[test]
    fn bad_parameters_rejected() {
        let ps = random_set(10, 1, 50);
        assert!(estimate_sigma_gak(&ps, 0, 0.3).is_err());
        assert!(estimate_sigma_gak(&ps, 3, 0.0).is_err());
        assert!(estimate_sigma_nonuniform(&ps, 3, 0.3, 0.0).is_err());
        assert!(estimate_sigma_nonuniform(&ps, 3, 0.3, 1.5).is_err());
    }

    #[test]
    fn coincident_points_hit_the_floor() {
        let ps = PointSet::from_points(10, 10, vec![Point::new(2.0, 2.0); 3]).unwrap();
        let s = estimate_sigma_gak(&ps, 2, 0.3).unwrap();
        assert_eq!(s.sigmas(), &[MIN_SIGMA; 3]);
    }

    #[test]
    fn lattice_nonuniform_equals_gak() {
        // On a finite lattice every point shares the same k-NN distances only for
        // k <= 2; larger k differs at the borders.
        let ps = lattice(12, 7.0, 3.0);
        for k in [1, 2] {
            let g = estimate_sigma_gak(&ps, k, 0.3).unwrap();
            let n = estimate_sigma_nonuniform(&ps, k, 0.3, 0.125).unwrap();
            for (a, b) in n.sigmas().iter().zip(g.sigmas()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn isolated_point_degenerates_to_gak() {
        let mut pts: Vec<Point> = (0..20)
            .map(|i| Point::new(5.0 + (i % 5) as f64 * 2.0, 5.0 + (i / 5) as f64 * 2.0))
            .collect();
        pts.push(Point::new(190.0, 100.0));
        let ps = PointSet::from_points(200, 200, pts).unwrap();
        let g = estimate_sigma_gak(&ps, 5, 0.3).unwrap();
        let n = estimate_sigma_nonuniform(&ps, 5, 0.3, 0.125).unwrap();
        assert_eq!(n.sigmas()[20], g.sigmas()[20]);
    }

    #[test]
    fn two_cluster_matches_nested_loops() {
        let mut pts = Vec::new();
        for i in 0..20 {
            pts.push(Point::new(10.0 + (i % 5) as f64 * 2.0, 20.0 + (i / 5) as f64 * 2.0));
        }
        for i in 0..20 {
            pts.push(Point::new(60.0 + (i % 5) as f64 * 20.0, 15.0 + (i / 5) as f64 * 20.0));
        }
        let ps = PointSet::from_points(160, 120, pts).unwrap();
        let n = estimate_sigma_nonuniform(&ps, 5, 0.3, 0.125).unwrap();
        let oracle = brute_nonuniform(&ps, 5, 0.3, 0.125);
        for (a, b) in n.sigmas().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn random_nonuniform_matches_nested_loops() {
        let ps = random_set(300, 21, 128);
        let n = estimate_sigma_nonuniform(&ps, 5, 0.3, 0.25).unwrap();
        let oracle = brute_nonuniform(&ps, 5, 0.3, 0.25);
        for (a, b) in n.sigmas().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn boxes_give_half_min_side() {
        let pts = vec![Point::new(5.0, 5.0), Point::new(4.0, 10.0)];
        let boxes = vec![
            BoundingBox::new(0.0, 0.0, 10.0, 10.0),
            BoundingBox::new(0.0, 0.0, 8.0, 20.0),
        ];
        let ps = PointSet::new(30, 30, pts, Some(boxes)).unwrap();
        let s = sigma_from_boxes(&ps).unwrap();
        assert_eq!(s.sigmas(), &[5.0, 4.0]);
        assert_eq!(s.tag(), EstimatorTag::FromBoxes);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sides: Vec<(f64, f64)> = (0..30)
            .map(|_| (rng.random_range(1.0..40.0), rng.random_range(1.0..40.0)))
            .collect();
        let pts = vec![Point::new(1.0, 1.0); sides.len()];
        let boxes = sides
            .iter()
            .map(|&(w, h)| BoundingBox::new(0.5, 0.5, w, h))
            .collect();
        let s = sigma_from_boxes(&PointSet::new(50, 50, pts, Some(boxes)).unwrap()).unwrap();
        for (v, (w, h)) in s.sigmas().iter().zip(&sides) {
            assert_eq!(*v, w.min(*h) / 2.0);
        }
    }

    #[test]
    fn missing_boxes_error() {
        let ps = random_set(3, 1, 10);
        assert!(matches!(sigma_from_boxes(&ps), Err(Error::MissingBoxes)));
    }

    #[test]
    fn sigma_error_values() {
        let a = SigmaAssignment::new(vec![1.0, 2.0], EstimatorTag::Gak).unwrap();
        let b = SigmaAssignment::new(vec![2.0, 4.0], EstimatorTag::FromBoxes).unwrap();
        assert_eq!(sigma_error(&a, &a).unwrap(), 0.0);
        assert_eq!(sigma_error(&a, &b).unwrap(), 1.5);
        let c = SigmaAssignment::new(vec![1.0], EstimatorTag::Gak).unwrap();
        assert!(matches!(sigma_error(&a, &c), Err(Error::ShapeMismatch(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..100).map(|_| rng.random_range(0.1..10.0)).collect();
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(0.1..10.0)).collect();
        let mut acc = 0.0;
        for i in 0..100 {
            acc += (x[i] - y[i]).abs();
        }
        let got = sigma_error(
            &SigmaAssignment::new(x, EstimatorTag::Gak).unwrap(),
            &SigmaAssignment::new(y, EstimatorTag::Gak).unwrap(),
        )
        .unwrap();
        assert!((got - acc / 100.0).abs() < 1e-12);
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..60.0, 0.0f64..60.0), 2..60)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn knn_sorted_and_nonnegative(cloud in arb_cloud(), k in 1usize..8) {
            let pts: Vec<Point> = cloud.iter().map(|&(x, y)| Point::new(x, y)).collect();
            for q in 0..pts.len() {
                let d = crate::geometry::knn_distances(&pts, q, k).unwrap();
                prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(d.iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn translation_invariant(cloud in arb_cloud(), dx in 0.0f64..30.0, dy in 0.0f64..30.0) {
            let pts: Vec<Point> = cloud.iter().map(|&(x, y)| Point::new(x, y)).collect();
            let moved: Vec<Point> = pts.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
            let a = PointSet::from_points(100, 100, pts).unwrap();
            let b = PointSet::from_points(100, 100, moved).unwrap();
            let (ga, gb) = (estimate_sigma_gak(&a, 3, 0.3).unwrap(), estimate_sigma_gak(&b, 3, 0.3).unwrap());
            let (na, nb) = (
                estimate_sigma_nonuniform(&a, 3, 0.3, 0.2).unwrap(),
                estimate_sigma_nonuniform(&b, 3, 0.3, 0.2).unwrap(),
            );
            for i in 0..a.len() {
                prop_assert!((ga.sigmas()[i] - gb.sigmas()[i]).abs() < 1e-9);
                prop_assert!((na.sigmas()[i] - nb.sigmas()[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn scales_linearly(cloud in arb_cloud(), s in 1.1f64..4.0) {
            let pts: Vec<Point> = cloud.iter().map(|&(x, y)| Point::new(x, y)).collect();
            let scaled: Vec<Point> = pts.iter().map(|p| Point::new(p.x * s, p.y * s)).collect();
            let a = PointSet::from_points(64, 64, pts).unwrap();
            let b = PointSet::from_points((64.0 * s).ceil() as usize, (64.0 * s).ceil() as usize, scaled).unwrap();
            // region scaled with the same factor: fractions of matching absolute size
            let fa = 0.2;
            let fb = 0.2 * 64.0 * s / b.width() as f64;
            let (ga, gb) = (estimate_sigma_gak(&a, 3, 0.3).unwrap(), estimate_sigma_gak(&b, 3, 0.3).unwrap());
            let (na, nb) = (
                estimate_sigma_nonuniform(&a, 3, 0.3, fa).unwrap(),
                estimate_sigma_nonuniform(&b, 3, 0.3, fb).unwrap(),
            );
            for i in 0..a.len() {
                let floor_hit = ga.sigmas()[i] <= MIN_SIGMA * s;
                if !floor_hit {
                    prop_assert!((ga.sigmas()[i] * s - gb.sigmas()[i]).abs() <= 1e-9 * gb.sigmas()[i]);
                }
                if na.sigmas()[i] > MIN_SIGMA * s {
                    prop_assert!((na.sigmas()[i] * s - nb.sigmas()[i]).abs() <= 1e-9 * nb.sigmas()[i]);
                }
            }
        }

        #[test]
        fn permutation_equivariant(cloud in arb_cloud(), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let pts: Vec<Point> = cloud.iter().map(|&(x, y)| Point::new(x, y)).collect();
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<Point> = perm.iter().map(|&i| pts[i]).collect();
            let a = PointSet::from_points(64, 64, pts).unwrap();
            let b = PointSet::from_points(64, 64, shuffled).unwrap();
            let ga = estimate_sigma_gak(&a, 4, 0.3).unwrap();
            let gb = estimate_sigma_gak(&b, 4, 0.3).unwrap();
            let na = estimate_sigma_nonuniform(&a, 4, 0.3, 0.3).unwrap();
            let nb = estimate_sigma_nonuniform(&b, 4, 0.3, 0.3).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(ga.sigmas()[i], gb.sigmas()[j]);
                prop_assert_eq!(na.sigmas()[i], nb.sigmas()[j]);
            }
        }
    }
}
