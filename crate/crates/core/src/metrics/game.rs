use crate::error::{Error, Result};
use crate::supervision::DensityMap;

/// Largest supported grid level (a `2^16 x 2^16` grid).
pub const GAME_MAX_LEVEL: u32 = 16;

/// Cell boundaries `floor(i * n / cells)` for `i = 0..=cells`. Boundaries of
/// level `L` are a subset of those of level `L + 1`, so finer grids refine
/// coarser ones.
fn boundaries(n: usize, cells: usize) -> Vec<usize> {
    (0..=cells).map(|i| i * n / cells).collect()
}

/// Grid-averaged absolute error of one image at level `level`: the image is
/// cut into a `2^L x 2^L` grid and the absolute count differences of the
/// cells are summed. Level 0 is the absolute count error.
pub fn game(truth: &DensityMap, pred: &DensityMap, level: u32) -> Result<f64> {
    truth.same_shape(pred)?;
    if level > GAME_MAX_LEVEL {
        return Err(Error::InvalidConfig(format!(
            "GAME level {level} above {GAME_MAX_LEVEL}"
        )));
    }
    let cells = 1usize << level;
    let (w, h) = (truth.width(), truth.height());
    let xs = boundaries(w, cells);
    let ys = boundaries(h, cells);
    let (t, p) = (truth.values(), pred.values());
    let mut total = 0.0;
    for cy in 0..cells {
        for cx in 0..cells {
            let mut diff = 0.0;
            for y in ys[cy]..ys[cy + 1] {
                let row = y * w;
                for x in xs[cx]..xs[cx + 1] {
                    diff += t[row + x] - p[row + x];
                }
            }
            total += diff.abs();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, v: Vec<f64>) -> DensityMap {
        DensityMap::from_values(w, h, v).unwrap()
    }

    #[test]
    fn level_zero_is_count_difference() {
        let t = map(3, 2, vec![1.0, 0.5, 0.0, 0.0, 2.0, 0.5]);
        let p = map(3, 2, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!((game(&t, &p, 0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_maps_score_zero() {
        let t = map(5, 7, (0..35).map(|i| i as f64 * 0.1).collect());
        for l in 0..=4 {
            assert_eq!(game(&t, &t, l).unwrap(), 0.0);
        }
    }

    #[test]
    fn moved_mass_shows_at_finer_levels() {
        let mut t = vec![0.0; 64];
        let mut p = vec![0.0; 64];
        t[0] = 1.0; // top-left corner
        p[63] = 1.0; // bottom-right corner
        let (t, p) = (map(8, 8, t), map(8, 8, p));
        assert_eq!(game(&t, &p, 0).unwrap(), 0.0);
        assert!((game(&t, &p, 1).unwrap() - 2.0).abs() < 1e-12);
        assert!((game(&t, &p, 2).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn uneven_sizes_match_cell_oracle() {
        // 7x5 at level 1: columns split at 3, rows at 2
        let t = map(7, 5, (0..35).map(|i| ((i * 13) % 7) as f64).collect());
        let p = map(7, 5, (0..35).map(|i| ((i * 5) % 3) as f64).collect());
        let mut want = 0.0;
        for (x0, x1) in [(0, 3), (3, 7)] {
            for (y0, y1) in [(0, 2), (2, 5)] {
                let mut d = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        d += t.get(x, y) - p.get(x, y);
                    }
                }
                want += f64::abs(d);
            }
        }
        assert!((game(&t, &p, 1).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn grid_finer_than_image_is_pixelwise() {
        let t = map(3, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let p = map(3, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((game(&t, &p, 3).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = map(2, 2, vec![0.0; 4]);
        let b = map(4, 1, vec![0.0; 4]);
        assert!(matches!(game(&a, &b, 1), Err(Error::ShapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn monotone_in_level(
            w in 1usize..20,
            h in 1usize..20,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = map(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect());
            let p = map(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect());
            let mut prev = game(&t, &p, 0).unwrap();
            for l in 1..=5 {
                let g = game(&t, &p, l).unwrap();
                prop_assert!(g >= prev - 1e-9, "level {} gives {} < {}", l, g, prev);
                prev = g;
            }
        }
    }
}
