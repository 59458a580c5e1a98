//! Deterministic synthetic counting scenes.
//!
//! A scene is a grayscale image of soft round blobs on a noisy background,
//! annotated with the exact blob centers and `2r x 2r` boxes. Output is a
//! pure function of the spec and the scene index.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Annotation, BoundingBox, Point, PointSet};
use crate::supervision::io::write_gray_png;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layout {
    /// Centers uniform over the image.
    Uniform,
    /// Gaussian clusters. Each cluster draws one object radius `r_c`; its
    /// `n_c` members get radii near `r_c` and scatter around the center with
    /// standard deviation `spread * r_c * sqrt(n_c)`. Object spacing inside a
    /// cluster is therefore proportional to object size, and `spread` sets
    /// how tightly objects pack.
    Clustered { clusters: usize, spread: f64 },
    /// Even scene indices are dense scenes of small objects (upper part of
    /// the count range, lower part of the radius range); odd indices are
    /// sparse scenes of large objects.
    Bimodal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Side of the square image in pixels.
    pub size: usize,
    pub count_min: usize,
    pub count_max: usize,
    pub layout: Layout,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Standard deviation of the additive background noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 64,
            count_min: 5,
            count_max: 30,
            layout: Layout::Uniform,
            radius_min: 2.0,
            radius_max: 4.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// One generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// Row-major `size x size` intensities in `[0, 1]`.
    pub image: Vec<f32>,
    pub size: usize,
    pub annotation: PointSet,
}

const BACKGROUND: f64 = 0.1;
const RADIUS_JITTER: f64 = 0.1;
const MAX_REDRAWS: usize = 64;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.size < 4 {
            return bad(format!("scene size {} is too small", self.size));
        }
        if self.count_min > self.count_max {
            return bad(format!("count range {}..{} is empty", self.count_min, self.count_max));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max.is_finite()) {
            return bad(format!("radius range {}..{} is invalid", self.radius_min, self.radius_max));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be >= 0", self.noise));
        }
        if let Layout::Clustered { clusters, spread } = self.layout {
            if clusters == 0 || !(spread > 0.0 && spread.is_finite()) {
                return bad("clustered layout needs clusters >= 1 and spread > 0".into());
            }
        }
        Ok(())
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Places the centers and radii for one scene.
fn place(spec: &SceneSpec, index: u64, rng: &mut ChaCha8Rng) -> Vec<(Point, f64)> {
    let side = spec.size as f64;
    // keep centers at least one pixel from the border
    let lo = 1.0;
    let hi = side - 1.0;
    let uniform_point = |rng: &mut ChaCha8Rng| Point::new(rng.random_range(lo..hi), rng.random_range(lo..hi));
    let (rmin, rmax) = (spec.radius_min, spec.radius_max);
    match spec.layout {
        Layout::Uniform => {
            let n = rng.random_range(spec.count_min..=spec.count_max);
            (0..n)
                .map(|_| (uniform_point(rng), rng.random_range(rmin..=rmax)))
                .collect()
        }
        Layout::Bimodal => {
            let dense = index % 2 == 0;
            let mid_count = (spec.count_min + spec.count_max).div_ceil(2);
            let mid_radius = 0.5 * (rmin + rmax);
            let (counts, radii) = if dense {
                (mid_count..=spec.count_max, rmin..=mid_radius)
            } else {
                (spec.count_min.max(1).min(mid_count)..=mid_count, mid_radius..=rmax)
            };
            let n = rng.random_range(counts);
            (0..n)
                .map(|_| (uniform_point(rng), rng.random_range(radii.clone())))
                .collect()
        }
        Layout::Clustered { clusters, spread } => {
            let n = rng.random_range(spec.count_min..=spec.count_max);
            let centers: Vec<(Point, f64)> = (0..clusters)
                .map(|_| (uniform_point(rng), rng.random_range(rmin..=rmax)))
                .collect();
            let members: Vec<usize> = (0..n).map(|_| rng.random_range(0..clusters)).collect();
            let mut sizes = vec![0usize; clusters];
            members.iter().for_each(|&c| sizes[c] += 1);
            let unit = Normal::new(0.0, 1.0).expect("unit normal");
            members
                .into_iter()
                .map(|m| {
                    let (c, rc) = centers[m];
                    let s = spread * rc * (sizes[m] as f64).sqrt();
                    let mut p = c;
                    for _ in 0..MAX_REDRAWS {
                        p = Point::new(c.x + s * unit.sample(rng), c.y + s * unit.sample(rng));
                        if (lo..hi).contains(&p.x) && (lo..hi).contains(&p.y) {
                            break;
                        }
                    }
                    let p = Point::new(p.x.clamp(lo, hi - 1e-9), p.y.clamp(lo, hi - 1e-9));
                    let r = rc * (1.0 + rng.random_range(-RADIUS_JITTER..=RADIUS_JITTER));
                    (p, r)
                })
                .collect()
        }
    }
}

/// Renders scene `index` of `spec`.
pub fn generate(spec: &SceneSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = spec.rng(index);
    let objects = place(spec, index, &mut rng);
    let size = spec.size;
    let side = size as f64;

    let mut image = vec![BACKGROUND; size * size];
    if spec.noise > 0.0 {
        let noise = Normal::new(0.0, spec.noise).expect("valid noise level");
        for v in &mut image {
            *v += noise.sample(&mut rng);
        }
    }
    let mut points = Vec::with_capacity(objects.len());
    let mut boxes = Vec::with_capacity(objects.len());
    for &(p, r) in &objects {
        let amplitude = rng.random_range(0.6..=1.0);
        let x0 = (p.x - r).floor().max(0.0) as usize;
        let y0 = (p.y - r).floor().max(0.0) as usize;
        let x1 = ((p.x + r).ceil() as usize).min(size - 1);
        let y1 = ((p.y + r).ceil() as usize).min(size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = Point::new(x as f64, y as f64).distance(&p);
                if d < r {
                    image[y * size + x] += amplitude * 0.5 * (1.0 + (std::f64::consts::PI * d / r).cos());
                }
            }
        }
        let bx0 = (p.x - r).max(0.0);
        let by0 = (p.y - r).max(0.0);
        let bx1 = (p.x + r).min(side);
        let by1 = (p.y + r).min(side);
        points.push(p);
        boxes.push(BoundingBox::new(bx0, by0, bx1 - bx0, by1 - by0));
    }
    let image = image.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    Ok(Scene {
        image,
        size,
        annotation: PointSet::new(size, size, points, Some(boxes))?,
    })
}

impl Scene {
    /// 8-bit grayscale PNG of the image.
    pub fn write_png<W: std::io::Write>(&self, out: W) -> Result<()> {
        let pixels: Vec<u8> = self
            .image
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_gray_png(self.size, self.size, &pixels, out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_png(std::io::BufWriter::new(file))
    }

    pub fn to_annotation(&self, image_id: impl Into<String>) -> Annotation {
        Annotation::from_point_set(image_id, &self.annotation)
    }
}

impl fmt::Display for SceneSpec {
    /// The compact `layout,key=value,...` form accepted by `from_str`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layout {
            Layout::Uniform => write!(f, "uniform")?,
            Layout::Bimodal => write!(f, "bimodal")?,
            Layout::Clustered { clusters, spread } => {
                write!(f, "clustered,clusters={clusters},spread={spread}")?
            }
        }
        write!(
            f,
            ",size={},count={}-{},radius={}-{},noise={},seed={}",
            self.size, self.count_min, self.count_max, self.radius_min, self.radius_max, self.noise, self.seed
        )
    }
}

fn parse_range<T: FromStr + Copy>(v: &str) -> Option<(T, T)> {
    match v.split_once('-') {
        Some((a, b)) => Some((a.trim().parse().ok()?, b.trim().parse().ok()?)),
        None => {
            let x = v.trim().parse().ok()?;
            Some((x, x))
        }
    }
}

impl FromStr for SceneSpec {
    type Err = Error;

    /// Parses `layout[,key=value]*` where layout is `uniform`, `clustered`
    /// or `bimodal` and keys are `size`, `count` (`N` or `A-B`), `radius`
    /// (`R` or `A-B`), `noise`, `seed`, and for clustered scenes `clusters`
    /// and `spread`. Unset keys keep their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidConfig(format!("scene spec {s:?}: {m}"));
        let mut parts = s.split(',').map(str::trim).filter(|p| !p.is_empty());
        let layout = parts.next().ok_or_else(|| bad("empty".into()))?;
        let mut spec = SceneSpec::default();
        let (mut clusters, mut spread) = (3usize, 1.0f64);
        let mut pairs = Vec::new();
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
            pairs.push((k.trim(), v.trim()));
        }
        for (k, v) in pairs {
            let invalid = || bad(format!("bad value {v:?} for {k}"));
            match k {
                "size" => spec.size = v.parse().map_err(|_| invalid())?,
                "count" => (spec.count_min, spec.count_max) = parse_range(v).ok_or_else(invalid)?,
                "radius" => (spec.radius_min, spec.radius_max) = parse_range(v).ok_or_else(invalid)?,
                "noise" => spec.noise = v.parse().map_err(|_| invalid())?,
                "seed" => spec.seed = v.parse().map_err(|_| invalid())?,
                "clusters" => clusters = v.parse().map_err(|_| invalid())?,
                "spread" => spread = v.parse().map_err(|_| invalid())?,
                _ => return Err(bad(format!("unknown key {k:?}"))),
            }
        }
        spec.layout = match layout {
            "uniform" => Layout::Uniform,
            "bimodal" => Layout::Bimodal,
            "clustered" => Layout::Clustered { clusters, spread },
            other => return Err(bad(format!("unknown layout {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(layout: Layout, count: (usize, usize)) -> SceneSpec {
        SceneSpec {
            layout,
            count_min: count.0,
            count_max: count.1,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn empty_count_gives_noise_only() {
        let s = generate(&spec(Layout::Uniform, (0, 0)), 3).unwrap();
        assert!(s.annotation.is_empty());
        assert_eq!(s.annotation.boxes().unwrap().len(), 0);
        // background level plus noise, nothing near blob intensity
        assert!(s.image.iter().all(|&v| v < 0.5));
    }

    #[test]
    fn fixed_count_gives_exact_points_and_boxes() {
        for layout in [
            Layout::Uniform,
            Layout::Clustered {
                clusters: 2,
                spread: 1.5,
            },
        ] {
            let s = generate(&spec(layout, (5, 5)), 0).unwrap();
            assert_eq!(s.annotation.len(), 5);
            assert_eq!(s.annotation.boxes().unwrap().len(), 5);
        }
    }

    #[test]
    fn bimodal_alternates_dense_and_sparse() {
        let sp = SceneSpec {
            count_min: 4,
            count_max: 40,
            ..spec(Layout::Bimodal, (4, 40))
        };
        for i in 0..10 {
            let s = generate(&sp, i).unwrap();
            let n = s.annotation.len();
            let mean_side: f64 = s.annotation.boxes().unwrap().iter().map(|b| b.w.min(b.h)).sum::<f64>() / n as f64;
            if i % 2 == 0 {
                assert!(n >= 22, "dense scene {i} has {n}");
            } else {
                assert!((1..=22).contains(&n), "sparse scene {i} has {n}");
                assert!(mean_side > 3.0);
            }
        }
    }

    #[test]
    fn spec_string_roundtrip() {
        let s: SceneSpec = "uniform,count=10".parse().unwrap();
        assert_eq!((s.count_min, s.count_max), (10, 10));
        assert_eq!(s.layout, Layout::Uniform);
        let c: SceneSpec = "clustered,clusters=4,spread=1.5,size=32,radius=1-3,seed=9".parse().unwrap();
        assert_eq!(
            c.layout,
            Layout::Clustered {
                clusters: 4,
                spread: 1.5
            }
        );
        assert_eq!(c.to_string().parse::<SceneSpec>().unwrap(), c);
        assert!("blobs".parse::<SceneSpec>().is_err());
        assert!("uniform,count=9-3".parse::<SceneSpec>().is_err());
        assert!("uniform,colour=red".parse::<SceneSpec>().is_err());
    }

    #[test]
    fn png_export_has_signature() {
        let s = generate(&SceneSpec::default(), 0).unwrap();
        let mut buf = Vec::new();
        s.write_png(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"\x89PNG\r\n\x1a\n");
        let ann = s.to_annotation("scene_0");
        assert_eq!(ann.to_point_set().unwrap(), s.annotation);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn deterministic_and_inside(seed in 0u64..1000, index in 0u64..1000, which in 0usize..3) {
            let layout = [
                Layout::Uniform,
                Layout::Clustered { clusters: 3, spread: 2.0 },
                Layout::Bimodal,
            ][which];
            let sp = SceneSpec { seed, ..spec(layout, (0, 25)) };
            let a = generate(&sp, index).unwrap();
            let b = generate(&sp, index).unwrap();
            prop_assert_eq!(&a, &b);
            let side = sp.size as f64;
            for p in a.annotation.points() {
                prop_assert!(p.x > 0.0 && p.x < side && p.y > 0.0 && p.y < side);
            }
            for bx in a.annotation.boxes().unwrap() {
                prop_assert!(bx.x >= 0.0 && bx.y >= 0.0 && bx.x + bx.w <= side && bx.y + bx.h <= side);
                prop_assert!(bx.w > 0.0 && bx.h > 0.0);
            }
            prop_assert!(a.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
