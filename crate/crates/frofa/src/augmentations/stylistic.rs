//! Value-level kernels: brightness, contrast, posterize, equalize,
//! sharpness blending, solarize, invert, uniform noise.
//!
//! Mapped-space kernels take and return values in [0, 1]; callers clip
//! afterwards where the kernel itself can overshoot (brightness, contrast,
//! sharpness, noise).

use crate::feature_store::FeatureTensor;

/// Adds `z` to every value of a slice.
pub fn brightness_values(values: &mut [f32], z: f64) {
    for v in values {
        *v = (*v as f64 + z) as f32;
    }
}

/// Scales every value of a slice by `z`.
pub fn contrast_values(values: &mut [f32], z: f64) {
    for v in values {
        *v = (*v as f64 * z) as f32;
    }
}

pub const POSTERIZE_LEVELS: u32 = 256;

/// 8-bit posterization: quantize, shift right then left by `z` bits,
/// dequantize.
pub fn posterize_values(values: &mut [f32], z: u32) {
    debug_assert!(z <= 8);
    for v in values {
        let q = quantize_u8(*v);
        let q = if z >= 8 { 0 } else { (q >> z) << z };
        *v = q as f32 / 255.0;
    }
}

pub(crate) fn quantize_u8(x: f32) -> u8 {
    (x as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub const EQUALIZE_LEVELS: usize = 196;

/// Cumulative-histogram equalization over `EQUALIZE_LEVELS` integer bins.
///
/// Values are quantized to {0, ..., 195}, remapped through the usual
/// cdf-offset rule `(cdf(q) - cdf_min) / (count - cdf_min) * 195`, and
/// dequantized. A grid occupying a single bin is returned unchanged.
pub fn equalize_values(values: &mut [f32]) {
    let levels = EQUALIZE_LEVELS;
    let top = (levels - 1) as f64;
    let quant: Vec<usize> = values
        .iter()
        .map(|&x| (x as f64 * top).round().clamp(0.0, top) as usize)
        .collect();
    let mut hist = vec![0u64; levels];
    for &q in &quant {
        hist[q] += 1;
    }
    let mut cdf = vec![0u64; levels];
    let mut running = 0u64;
    for (level, &h) in hist.iter().enumerate() {
        running += h;
        cdf[level] = running;
    }
    let total = running;
    let cdf_min = hist
        .iter()
        .zip(&cdf)
        .find(|(&h, _)| h > 0)
        .map(|(_, &c)| c)
        .unwrap_or(0);
    if cdf_min == total {
        return; // single occupied bin
    }
    let denom = (total - cdf_min) as f64;
    let lut: Vec<f32> = cdf
        .iter()
        .map(|&c| {
            let mapped = ((c.saturating_sub(cdf_min)) as f64 / denom * top).round();
            (mapped / top) as f32
        })
        .collect();
    for (v, &q) in values.iter_mut().zip(&quant) {
        *v = lut[q];
    }
}

/// Blends a plane toward its 3x3 box-filtered version:
/// `out = x + z * (smooth - x)`. `z = 0` is the identity, `z = 1` the
/// filtered plane, `z > 1` extrapolates past it.
pub fn sharpness_plane(plane: &mut [f32], side: usize, z: f64) {
    let smooth = super::geometry::box3_plane(plane, side);
    for (v, s) in plane.iter_mut().zip(&smooth) {
        *v = (*v as f64 + z * (*s as f64 - *v as f64)) as f32;
    }
}

/// Solarize in raw feature space: values below `0.5 * f_min` are reflected
/// off `f_min`, values above `0.5 * f_max` off `f_max`.
pub fn solarize_values(values: &mut [f32], f_min: f32, f_max: f32) {
    let lo_threshold = 0.5 * f_min;
    let hi_threshold = 0.5 * f_max;
    for v in values {
        if *v < lo_threshold {
            *v = f_min - *v;
        } else if *v > hi_threshold {
            *v = f_max - *v;
        }
    }
}

/// Sign flip in raw feature space.
pub fn invert_tensor(t: &mut FeatureTensor) {
    for v in t.data_mut() {
        *v = -*v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brightness_shifts() {
        let mut v = vec![0.5f32; 4];
        brightness_values(&mut v, 0.2);
        for x in v {
            assert!((x - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn contrast_scales() {
        let mut v = vec![0.2f32, 0.8];
        contrast_values(&mut v, 2.0);
        assert!((v[0] - 0.4).abs() < 1e-6);
        // 1.6 before the caller clips
        assert!((v[1] - 1.6).abs() < 1e-6);
        let mut w = vec![0.2f32, 0.8];
        contrast_values(&mut w, 0.5);
        assert!((w[0] - 0.1).abs() < 1e-6);
        assert!((w[1] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn posterize_bit_arithmetic() {
        // 200 = 0b11001000; shifting by 4 keeps the top nibble: 0b11000000 = 192
        let mut v = vec![200.0f32 / 255.0];
        posterize_values(&mut v, 4);
        assert!((v[0] - 192.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn posterize_full_shift_zeroes() {
        let mut v: Vec<f32> = (0..=255).map(|q| q as f32 / 255.0).collect();
        posterize_values(&mut v, 8);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn posterize_one_bit_halves_levels() {
        let mut v: Vec<f32> = (0..=255).map(|q| q as f32 / 255.0).collect();
        posterize_values(&mut v, 1);
        let mut levels: Vec<u8> = v.iter().map(|&x| quantize_u8(x)).collect();
        levels.sort_unstable();
        levels.dedup();
        assert!(levels.len() <= 128);
        assert!(levels.iter().all(|&q| q % 2 == 0));
    }

    #[test]
    fn equalize_constant_unchanged() {
        let mut v = vec![0.37f32; 32];
        let before = v.clone();
        equalize_values(&mut v);
        assert_eq!(v, before);
    }

    #[test]
    fn equalize_two_level_grid_matches_oracle() {
        // independent oracle: quantize, histogram, cdf remap in plain f64
        let mut v: Vec<f32> = vec![0.0; 8];
        v.extend(vec![1.0; 8]);
        let quant: Vec<usize> = v.iter().map(|&x| (x as f64 * 195.0).round() as usize).collect();
        let mut hist = [0u64; 196];
        for &q in &quant {
            hist[q] += 1;
        }
        let cdf = |level: usize| -> u64 { hist[..=level].iter().sum() };
        let cdf_min = (0..196).find(|&l| hist[l] > 0).map(cdf).unwrap();
        let total = v.len() as u64;
        let oracle: Vec<f32> = quant
            .iter()
            .map(|&q| {
                let mapped =
                    ((cdf(q) - cdf_min) as f64 / (total - cdf_min) as f64 * 195.0).round();
                (mapped / 195.0) as f32
            })
            .collect();

        equalize_values(&mut v);
        assert_eq!(v, oracle);
        // exactly two output levels, order preserved
        let mut levels: Vec<f32> = v.clone();
        levels.sort_by(f32::total_cmp);
        levels.dedup();
        assert_eq!(levels.len(), 2);
        assert!(v[0] < v[8]);
    }

    #[test]
    fn equalize_spreads_skewed_histogram() {
        // three levels packed into the bottom of the range spread out
        let mut v = Vec::new();
        v.extend(vec![0.00f32; 10]);
        v.extend(vec![0.01f32; 10]);
        v.extend(vec![0.02f32; 10]);
        equalize_values(&mut v);
        let mut levels: Vec<f32> = v.clone();
        levels.sort_by(f32::total_cmp);
        levels.dedup();
        assert_eq!(levels.len(), 3);
        // max level is pushed to the top of the range
        assert!((levels[2] - 1.0).abs() < 1e-6);
        // order preserved
        assert!(levels[0] < levels[1] && levels[1] < levels[2]);
    }

    #[test]
    fn sharpness_zero_is_identity_and_constant_is_fixed() {
        let mut v: Vec<f32> = (0..9).map(|i| i as f32 / 9.0).collect();
        let before = v.clone();
        sharpness_plane(&mut v, 3, 0.0);
        assert_eq!(v, before);

        let mut constant = vec![0.4f32; 9];
        sharpness_plane(&mut constant, 3, 2.5);
        for x in constant {
            assert!((x - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn sharpness_full_blend_is_box_filter() {
        let mut v: Vec<f32> = (0..16).map(|i| ((i * 5 % 11) as f32) / 11.0).collect();
        let expect = super::super::geometry::box3_plane(&v, 4);
        sharpness_plane(&mut v, 4, 1.0);
        for (a, b) in v.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn solarize_formula_cases() {
        // f_min = -4, f_max = 10: thresholds -2 and 5
        let mut v = vec![0.0f32, -3.0, 6.0, -2.0, 5.0];
        solarize_values(&mut v, -4.0, 10.0);
        assert_eq!(v[0], 0.0); // inside band
        assert_eq!(v[1], -1.0); // -4 - (-3)
        assert_eq!(v[2], 4.0); // 10 - 6
        assert_eq!(v[3], -2.0); // at threshold: unchanged
        assert_eq!(v[4], 5.0);
    }

    #[test]
    fn invert_is_an_involution() {
        let mut t = FeatureTensor::new(vec![1.0, -2.0, 0.5, 0.0], 2, 2).unwrap();
        invert_tensor(&mut t);
        assert_eq!(t.data(), &[-1.0, 2.0, -0.5, 0.0]);
        invert_tensor(&mut t);
        assert_eq!(t.data(), &[1.0, -2.0, 0.5, 0.0]);
    }
}
