use crate::error::{Error, Result};
use crate::supervision::DensityMap;

/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
/// Standard deviation of the Gaussian SSIM window.
pub const SSIM_SIGMA: f64 = 1.5;
/// `(0.01 L)^2` with dynamic range `L = 1`.
pub const SSIM_C1: f64 = 1e-4;
/// `(0.03 L)^2` with dynamic range `L = 1`.
pub const SSIM_C2: f64 = 9e-4;

/// Normalized 1D Gaussian window of odd length `n`.
pub fn ssim_window(n: usize) -> Vec<f64> {
    let c = (n / 2) as f64;
    let w: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Window side for a `w x h` image: 11, or the largest odd side that fits.
fn window_side(w: usize, h: usize) -> usize {
    let n = SSIM_WINDOW.min(w).min(h);
    if n % 2 == 0 {
        n - 1
    } else {
        n
    }
}

/// Separable valid-mode filtering of a `w x h` field.
fn filter(field: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let src = &field[y * w + x..y * w + x + n];
            rows[y * ow + x] = src.iter().zip(g).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| rows[(y + i) * ow + x] * g[i]).sum();
        }
    }
    out
}

/// PSNR (dB) and mean SSIM of `pred` against `truth`.
///
/// Both maps are divided by the maximum of `truth`, so the peak signal is
/// 1. Identical maps give a PSNR of `+inf`. SSIM uses an 11 x 11 Gaussian
/// window (sigma 1.5) over all positions where the window fits inside the
/// image, shrinking the window for images smaller than 11 pixels.
pub fn psnr_ssim(truth: &DensityMap, pred: &DensityMap) -> Result<(f64, f64)> {
    truth.same_shape(pred)?;
    let peak = truth.max();
    if !(peak > 0.0) {
        return Err(Error::UndefinedPeak);
    }
    let x: Vec<f64> = truth.values().iter().map(|v| v / peak).collect();
    let y: Vec<f64> = pred.values().iter().map(|v| v / peak).collect();

    let mse = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    };

    let (w, h) = (truth.width(), truth.height());
    let g = ssim_window(window_side(w, h));
    let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let mx = filter(&x, w, h, &g);
    let my = filter(&y, w, h, &g);
    let exx = filter(&xx, w, h, &g);
    let eyy = filter(&yy, w, h, &g);
    let exy = filter(&xy, w, h, &g);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (a, b) = (mx[i], my[i]);
        let vx = exx[i] - a * a;
        let vy = eyy[i] - b * b;
        let cov = exy[i] - a * b;
        let num = (2.0 * a * b + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (a * a + b * b + SSIM_C1) * (vx + vy + SSIM_C2);
        total += num / den;
    }
    Ok((psnr, total / mx.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DensityMap {
        DensityMap::from_values(w, h, (0..w * h).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap()
    }

    /// Direct 2D-window SSIM.
    fn ssim_oracle(t: &DensityMap, p: &DensityMap) -> f64 {
        let peak = t.max();
        let (w, h) = (t.width(), t.height());
        let n = window_side(w, h);
        let c = (n / 2) as f64;
        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
                kernel[i * n + j] = (-r2 / (2.0 * 1.5 * 1.5)).exp();
            }
        }
        let ks: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|v| *v /= ks);
        let mut total = 0.0;
        let mut count = 0.0;
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let k = kernel[i * n + j];
                        let a = t.get(x0 + j, y0 + i) / peak;
                        let b = p.get(x0 + j, y0 + i) / peak;
                        mx += k * a;
                        my += k * b;
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let k = kernel[i * n + j];
                        let a = t.get(x0 + j, y0 + i) / peak - mx;
                        let b = p.get(x0 + j, y0 + i) / peak - my;
                        sxx += k * a * a;
                        syy += k * b * b;
                        sxy += k * a * b;
                    }
                }
                total += ((2.0 * mx * my + 1e-4) * (2.0 * sxy + 9e-4))
                    / ((mx * mx + my * my + 1e-4) * (sxx + syy + 9e-4));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn identical_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_map(&mut rng, 20, 17);
        let (psnr, ssim) = psnr_ssim(&t, &t).unwrap();
        assert_eq!(psnr, f64::INFINITY);
        assert_eq!(ssim, 1.0);
    }

    #[test]
    fn constant_offset_gives_twenty_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_map(&mut rng, 16, 16);
        let peak = t.max();
        let p = DensityMap::from_values(16, 16, t.values().iter().map(|v| v + 0.1 * peak).collect()).unwrap();
        let (psnr, _) = psnr_ssim(&t, &p).unwrap();
        assert!((psnr - 20.0).abs() < 1e-6, "{psnr}");
    }

    #[test]
    fn matches_direct_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (w, h) in [(24, 19), (11, 11), (7, 30), (4, 5)] {
            let t = random_map(&mut rng, w, h);
            let p = random_map(&mut rng, w, h);
            let (_, ssim) = psnr_ssim(&t, &p).unwrap();
            let want = ssim_oracle(&t, &p);
            assert!((ssim - want).abs() < 1e-6, "{w}x{h}: {ssim} vs {want}");
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_map(&mut rng, 15, 15);
        let mut b = random_map(&mut rng, 15, 15);
        // same peak so the normalization matches both ways
        let (pa, pb) = (a.max(), b.max());
        b.values_mut().iter_mut().for_each(|v| *v *= pa / pb);
        let (_, s1) = psnr_ssim(&a, &b).unwrap();
        let (_, s2) = psnr_ssim(&b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn zero_truth_has_no_peak() {
        let z = DensityMap::zeros(4, 4).unwrap();
        assert!(matches!(psnr_ssim(&z, &z), Err(Error::UndefinedPeak)));
    }
}
