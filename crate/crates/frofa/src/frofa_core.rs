//! Feature-to-image and image-to-feature mappings, and the composition that
//! turns an image augmentation into a frozen feature augmentation.
//!
//! Features live in an unbounded real range; pixel-style augmentations
//! assume the unit interval. The forward mapping min-max normalizes a
//! feature grid into [0, 1], the augmentation runs there, results are
//! clipped back into [0, 1], and the inverse mapping restores the original
//! value range. Three variants control the sampling and normalization
//! granularity:
//!
//! - default: one sampled augmentation value for the whole tensor, min/max
//!   over the whole tensor;
//! - channel: one independently sampled value per channel, min/max still
//!   over the whole tensor;
//! - channel2: per-channel values and per-channel min/max.
//!
//! Raw-space augmentations (solarize, invert, channel dropout, mixup) and
//! structural ones (crop family, patch dropout) bypass the mapping.

use serde::{Deserialize, Serialize};

use crate::augmentations::{
    codec, geometry, geometry::Axis, stylistic, tokens, AugKind, AugmentationSpec, Space,
};
use crate::error::{Error, Result};
use crate::feature_store::FeatureTensor;
use crate::rng::{KeyedRng, RngKey};

/// Sampling/normalization granularity of one augmentation application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Default,
    Channel,
    #[serde(rename = "channel2")]
    Channel2,
}

impl Variant {
    /// channel2 normalizes per channel; the others use the whole tensor.
    pub fn stats_scope(self) -> Scope {
        match self {
            Variant::Channel2 => Scope::PerChannel,
            _ => Scope::Global,
        }
    }

    fn samples_per_channel(self) -> bool {
        !matches!(self, Variant::Default)
    }
}

/// Over what unit min/max statistics are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    PerChannel,
}

/// Min/max statistics retained for inverting the mapping. Global scope
/// carries one pair; per-channel scope one pair per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub scope: Scope,
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl NormStats {
    fn unit(&self, channels: usize, flat_index: usize) -> usize {
        match self.scope {
            Scope::Global => 0,
            Scope::PerChannel => flat_index % channels,
        }
    }
}

/// A feature tensor mapped into the unit interval, with the statistics
/// needed to map back.
#[derive(Debug, Clone)]
pub struct MappedFeature {
    pub tensor: FeatureTensor,
    pub stats: NormStats,
}

/// Min-max normalizes `f` into [0, 1]. A scope unit whose range is
/// degenerate (max == min) maps to all zeros and its stats record the
/// constant, so the inverse still restores it.
pub fn feature_to_image(f: &FeatureTensor, scope: Scope) -> MappedFeature {
    let (min, max) = match scope {
        Scope::Global => {
            let (lo, hi) = f.min_max();
            (vec![lo], vec![hi])
        }
        Scope::PerChannel => {
            let mut mins = Vec::with_capacity(f.channels());
            let mut maxs = Vec::with_capacity(f.channels());
            for c in 0..f.channels() {
                let (lo, hi) = f.channel_min_max(c);
                mins.push(lo);
                maxs.push(hi);
            }
            (mins, maxs)
        }
    };
    let stats = NormStats { scope, min, max };
    let channels = f.channels();
    let mut tensor = f.clone();
    for (i, v) in tensor.data_mut().iter_mut().enumerate() {
        let u = stats.unit(channels, i);
        let (lo, hi) = (stats.min[u], stats.max[u]);
        *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
    }
    MappedFeature { tensor, stats }
}

/// Inverts [`feature_to_image`]: `x * (max - min) + min` per scope unit.
/// Degenerate units return their constant everywhere.
pub fn image_to_feature(m: &MappedFeature) -> FeatureTensor {
    let channels = m.tensor.channels();
    let mut out = m.tensor.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let u = m.stats.unit(channels, i);
        let (lo, hi) = (m.stats.min[u], m.stats.max[u]);
        *v = *v * (hi - lo) + lo;
    }
    out
}

fn clip_unit_interval(values: &mut [f32]) {
    for v in values {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Applies one augmentation to one example's features, deterministically in
/// `key`.
///
/// Mapped-space augmentations run inside the forward/inverse mapping with
/// the variant's statistics scope; raw and structural ones act on feature
/// values directly. Crop and patch dropout change the token count; every
/// other kind preserves shape. Mixup works on batches and is applied by
/// [`crate::protocols::augment_batch`], not here.
///
/// An augmentation that leaves the mapped grid unchanged (a zero-strength
/// setting or an unfired probability gate) returns the input bit-for-bit
/// rather than paying the mapping round trip.
pub fn apply_frofa(f: &FeatureTensor, spec: &AugmentationSpec, key: RngKey) -> Result<FeatureTensor> {
    spec.validate()?;
    if spec.kind == AugKind::Mixup {
        return Err(Error::InvalidAugmentation(
            "mixup mixes pairs; apply it through protocols::augment_batch".into(),
        ));
    }
    if spec.kind.needs_square_grid() && f.grid_side().is_none() {
        return Err(Error::NonSquareGrid(f.tokens()));
    }
    match spec.space() {
        Space::Mapped => apply_mapped(f, spec, key),
        Space::Raw => apply_raw(f, spec, key),
        Space::Structural => apply_structural(f, spec, key),
    }
}

/// One rng stream per sampled value: channel c draws from `key.child(c)`.
/// The default variant draws once from `key.child(0)` and broadcasts, so a
/// single-channel tensor makes default and channel variants identical.
fn channel_stream(key: RngKey, c: usize) -> KeyedRng {
    key.child(c as u64).stream()
}

fn sampled_per_channel<T: Clone>(
    key: RngKey,
    channels: usize,
    variant: Variant,
    mut sample: impl FnMut(&mut KeyedRng) -> T,
) -> Vec<T> {
    if variant.samples_per_channel() {
        (0..channels)
            .map(|c| sample(&mut channel_stream(key, c)))
            .collect()
    } else {
        let z = sample(&mut channel_stream(key, 0));
        vec![z; channels]
    }
}

fn map_channel_values(t: &mut FeatureTensor, c: usize, mut op: impl FnMut(f32) -> f32) {
    let channels = t.channels();
    let data = t.data_mut();
    let mut i = c;
    while i < data.len() {
        data[i] = op(data[i]);
        i += channels;
    }
}

fn apply_mapped(f: &FeatureTensor, spec: &AugmentationSpec, key: RngKey) -> Result<FeatureTensor> {
    let channels = f.channels();
    let mut mapped = feature_to_image(f, spec.variant.stats_scope());
    let before: Vec<u32> = mapped.tensor.data().iter().map(|v| v.to_bits()).collect();
    let v = spec.v;

    match spec.kind {
        AugKind::Brightness => {
            let zs = sampled_per_channel(key, channels, spec.variant, |rng| {
                rng.uniform_in(-v, v)
            });
            for (c, &z) in zs.iter().enumerate() {
                map_channel_values(&mut mapped.tensor, c, |x| (x as f64 + z) as f32);
            }
        }
        AugKind::Contrast => {
            let zs = sampled_per_channel(key, channels, spec.variant, |rng| {
                rng.uniform_in(1.0 / v, v)
            });
            for (c, &z) in zs.iter().enumerate() {
                map_channel_values(&mut mapped.tensor, c, |x| (x as f64 * z) as f32);
            }
        }
        AugKind::Posterize => {
            let (v1, v2) = (spec.v as i64, spec.v2.unwrap() as i64);
            let zs = sampled_per_channel(key, channels, spec.variant, |rng| {
                rng.int_in(v1, v2) as u32
            });
            for (c, &z) in zs.iter().enumerate() {
                let mut plane = crate::augmentations::extract_plane(&mapped.tensor, c);
                stylistic::posterize_values(&mut plane, z);
                crate::augmentations::write_plane(&mut mapped.tensor, c, &plane);
            }
        }
        AugKind::Equalize => {
            if spec.variant.samples_per_channel() {
                for c in 0..channels {
                    let fired = channel_stream(key, c).bernoulli(v);
                    if fired {
                        let mut plane = crate::augmentations::extract_plane(&mapped.tensor, c);
                        stylistic::equalize_values(&mut plane);
                        crate::augmentations::write_plane(&mut mapped.tensor, c, &plane);
                    }
                }
            } else {
                // one gate, one histogram over the whole grid
                if channel_stream(key, 0).bernoulli(v) {
                    stylistic::equalize_values(mapped.tensor.data_mut());
                }
            }
        }
        AugKind::UniformNoise => {
            // intrinsically per-element: every variant draws one stream per
            // channel, elements in token order
            for c in 0..channels {
                let mut rng = channel_stream(key, c);
                map_channel_values(&mut mapped.tensor, c, |x| {
                    (x as f64 + rng.uniform_in(-v, v)) as f32
                });
            }
        }
        AugKind::Sharpness => {
            let side = mapped.tensor.grid_side().expect("square checked above");
            if side < 3 {
                return Err(Error::InvalidAugmentation(format!(
                    "sharpness needs a grid of at least 3x3, got {side}x{side}"
                )));
            }
            let zs = sampled_per_channel(key, channels, spec.variant, |rng| {
                rng.uniform_in(0.0, v)
            });
            for (c, &z) in zs.iter().enumerate() {
                let mut plane = crate::augmentations::extract_plane(&mapped.tensor, c);
                stylistic::sharpness_plane(&mut plane, side, z);
                crate::augmentations::write_plane(&mut mapped.tensor, c, &plane);
            }
        }
        AugKind::Jpeg => {
            let side = mapped.tensor.grid_side().expect("square checked above");
            let (v1, v2) = (spec.v, spec.v2.unwrap());
            let qualities = sampled_per_channel(key, channels, spec.variant, |rng| {
                rng.uniform_in(v1, v2).round().clamp(1.0, 100.0) as u8
            });
            for (c, &quality) in qualities.iter().enumerate() {
                let mut plane = crate::augmentations::extract_plane(&mapped.tensor, c);
                codec::jpeg_plane(&mut plane, side, quality)?;
                crate::augmentations::write_plane(&mut mapped.tensor, c, &plane);
            }
        }
        AugKind::Rotate => {
            let side = mapped.tensor.grid_side().expect("square checked above");
            let zs = sampled_per_channel(key, channels, spec.variant, |rng| {
                rng.uniform_in(-v, v)
            });
            for (c, &z) in zs.iter().enumerate() {
                let plane = crate::augmentations::extract_plane(&mapped.tensor, c);
                let rotated = geometry::rotate_plane(&plane, side, z);
                crate::augmentations::write_plane(&mut mapped.tensor, c, &rotated);
            }
        }
        AugKind::ShearX | AugKind::ShearY => {
            let side = mapped.tensor.grid_side().expect("square checked above");
            let axis = if spec.kind == AugKind::ShearX { Axis::X } else { Axis::Y };
            let zs = sampled_per_channel(key, channels, spec.variant, |rng| {
                rng.uniform_in(0.0, v)
            });
            for (c, &z) in zs.iter().enumerate() {
                let plane = crate::augmentations::extract_plane(&mapped.tensor, c);
                let sheared = geometry::shear_plane(&plane, side, axis, z);
                crate::augmentations::write_plane(&mut mapped.tensor, c, &sheared);
            }
        }
        AugKind::TranslateX | AugKind::TranslateY => {
            let side = mapped.tensor.grid_side().expect("square checked above");
            let axis = if spec.kind == AugKind::TranslateX { Axis::X } else { Axis::Y };
            // magnitude from {0..v}, then a uniform sign
            let shifts = sampled_per_channel(key, channels, spec.variant, |rng| {
                let magnitude = rng.int_in(0, v as i64);
                let sign = rng.sign() as i64;
                magnitude * sign
            });
            for (c, &shift) in shifts.iter().enumerate() {
                let plane = crate::augmentations::extract_plane(&mapped.tensor, c);
                let moved = geometry::translate_plane(&plane, side, axis, shift);
                crate::augmentations::write_plane(&mut mapped.tensor, c, &moved);
            }
        }
        _ => unreachable!("non-mapped kind {:?} routed to apply_mapped", spec.kind),
    }

    clip_unit_interval(mapped.tensor.data_mut());
    let unchanged = mapped
        .tensor
        .data()
        .iter()
        .zip(&before)
        .all(|(v, &b)| v.to_bits() == b);
    if unchanged {
        return Ok(f.clone());
    }
    Ok(image_to_feature(&mapped))
}

fn apply_raw(f: &FeatureTensor, spec: &AugmentationSpec, key: RngKey) -> Result<FeatureTensor> {
    let channels = f.channels();
    let v = spec.v;
    match spec.kind {
        AugKind::Invert => {
            let mut out = f.clone();
            if spec.variant.samples_per_channel() {
                let mut any = false;
                for c in 0..channels {
                    if channel_stream(key, c).bernoulli(v) {
                        map_channel_values(&mut out, c, |x| -x);
                        any = true;
                    }
                }
                if !any {
                    return Ok(f.clone());
                }
            } else if channel_stream(key, 0).bernoulli(v) {
                stylistic::invert_tensor(&mut out);
            } else {
                return Ok(f.clone());
            }
            Ok(out)
        }
        AugKind::Solarize => {
            let mut out = f.clone();
            let per_channel_stats = spec.variant == Variant::Channel2;
            let fire = |c: usize| channel_stream(key, c).bernoulli(v);
            if spec.variant.samples_per_channel() {
                let (global_lo, global_hi) = f.min_max();
                let mut any = false;
                for c in 0..channels {
                    if fire(c) {
                        let (lo, hi) = if per_channel_stats {
                            f.channel_min_max(c)
                        } else {
                            (global_lo, global_hi)
                        };
                        let mut plane = crate::augmentations::extract_plane(&out, c);
                        stylistic::solarize_values(&mut plane, lo, hi);
                        crate::augmentations::write_plane(&mut out, c, &plane);
                        any = true;
                    }
                }
                if !any {
                    return Ok(f.clone());
                }
            } else if fire(0) {
                let (lo, hi) = f.min_max();
                stylistic::solarize_values(out.data_mut(), lo, hi);
            } else {
                return Ok(f.clone());
            }
            Ok(out)
        }
        AugKind::ChannelDropout => {
            // intrinsically per-channel: every variant gates each channel
            let zeroed: Vec<bool> = (0..channels)
                .map(|c| channel_stream(key, c).bernoulli(v))
                .collect();
            if zeroed.iter().all(|&z| !z) {
                return Ok(f.clone());
            }
            let mut out = f.clone();
            tokens::channel_dropout_with(&mut out, &zeroed);
            Ok(out)
        }
        _ => unreachable!("non-raw kind {:?} routed to apply_raw", spec.kind),
    }
}

fn apply_structural(f: &FeatureTensor, spec: &AugmentationSpec, key: RngKey) -> Result<FeatureTensor> {
    let channels = f.channels();
    match spec.kind {
        AugKind::PatchDropout => {
            let keep = spec.v as usize;
            tokens::patch_dropout(f, keep, &mut channel_stream(key, 0))
        }
        AugKind::Crop => {
            let side = f.grid_side().expect("square checked above");
            let size = spec.v as usize;
            if size > side {
                return Err(Error::InvalidAugmentation(format!(
                    "crop size {size} exceeds grid side {side}"
                )));
            }
            let offsets = sampled_per_channel(key, channels, spec.variant, |rng| {
                let r = rng.below(side - size + 1);
                let c = rng.below(side - size + 1);
                (r, c)
            });
            let mut out = FeatureTensor::zeros(size * size, channels);
            for (c, &(off_r, off_c)) in offsets.iter().enumerate() {
                let plane = crate::augmentations::extract_plane(f, c);
                let cropped = geometry::crop_plane(&plane, side, off_r, off_c, size, size);
                crate::augmentations::write_plane(&mut out, c, &cropped);
            }
            Ok(out)
        }
        AugKind::ResizedCrop => {
            let side = f.grid_side().expect("square checked above");
            let resized = spec.v as usize;
            if resized < side {
                return Err(Error::InvalidAugmentation(format!(
                    "resized_crop target {resized} is smaller than grid side {side}"
                )));
            }
            let offsets = sampled_per_channel(key, channels, spec.variant, |rng| {
                let r = rng.below(resized - side + 1);
                let c = rng.below(resized - side + 1);
                (r, c)
            });
            let mut out = FeatureTensor::zeros(side * side, channels);
            for (c, &(off_r, off_c)) in offsets.iter().enumerate() {
                let plane = crate::augmentations::extract_plane(f, c);
                let up = geometry::resize_plane(&plane, side, resized);
                let cropped = geometry::crop_plane(&up, resized, off_r, off_c, side, side);
                crate::augmentations::write_plane(&mut out, c, &cropped);
            }
            Ok(out)
        }
        AugKind::InceptionCrop => {
            let side = f.grid_side().expect("square checked above");
            let geometries = sampled_per_channel(key, channels, spec.variant, |rng| {
                sample_inception_window(rng, spec.v, side)
            });
            if geometries.iter().all(|g| g.is_none()) {
                return Ok(f.clone());
            }
            let mut out = FeatureTensor::zeros(side * side, channels);
            for (c, window) in geometries.iter().enumerate() {
                let plane = crate::augmentations::extract_plane(f, c);
                let result = match window {
                    Some(w) => {
                        let cropped =
                            geometry::crop_plane(&plane, side, w.off_r, w.off_c, w.height, w.width);
                        geometry::resize_rect(&cropped, w.height, w.width, side, side)
                    }
                    None => plane,
                };
                crate::augmentations::write_plane(&mut out, c, &result);
            }
            Ok(out)
        }
        _ => unreachable!("non-structural kind {:?} routed to apply_structural", spec.kind),
    }
}

#[derive(Clone, Copy)]
struct CropWindow {
    off_r: usize,
    off_c: usize,
    height: usize,
    width: usize,
}

/// Inception-style window: with probability `p`, sample an area fraction in
/// [0.05, 1.0] and an aspect ratio in [3/4, 4/3], retrying up to 10 times
/// for a window that fits; `None` means identity.
fn sample_inception_window(rng: &mut KeyedRng, p: f64, side: usize) -> Option<CropWindow> {
    if !rng.bernoulli(p) {
        return None;
    }
    let total_area = (side * side) as f64;
    for _ in 0..10 {
        let area = rng.uniform_in(0.05, 1.0) * total_area;
        let aspect = rng.uniform_in(0.75, 4.0 / 3.0);
        let width = (area * aspect).sqrt().round() as usize;
        let height = (area / aspect).sqrt().round() as usize;
        if (1..=side).contains(&width) && (1..=side).contains(&height) {
            let off_r = rng.below(side - height + 1);
            let off_c = rng.below(side - width + 1);
            return Some(CropWindow {
                off_r,
                off_c,
                height,
                width,
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentations::AugmentationSpec;

    fn grid_tensor(values: Vec<f32>, side: usize, channels: usize) -> FeatureTensor {
        FeatureTensor::new(values, side * side, channels).unwrap()
    }

    #[test]
    fn mapping_matches_hand_evaluation() {
        // single channel [[-2, 0], [2, 4]]: range 6, so [0, 1/3, 2/3, 1]
        let t = grid_tensor(vec![-2.0, 0.0, 2.0, 4.0], 2, 1);
        let m = feature_to_image(&t, Scope::Global);
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in m.tensor.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(m.stats.min, vec![-2.0]);
        assert_eq!(m.stats.max, vec![4.0]);
    }

    #[test]
    fn constant_tensor_maps_to_zeros() {
        let t = grid_tensor(vec![3.5; 4], 2, 1);
        let m = feature_to_image(&t, Scope::Global);
        assert!(m.tensor.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.stats.min, vec![3.5]);
        assert_eq!(m.stats.max, vec![3.5]);
        // inverse restores the constant
        let back = image_to_feature(&m);
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn per_channel_scope_spans_each_channel() {
        // channel 0 ranges over (0, 1), channel 1 over (0, 10)
        let t = grid_tensor(vec![0.0, 0.0, 1.0, 5.0, 0.5, 10.0, 0.25, 2.5], 2, 2);
        let m = feature_to_image(&t, Scope::PerChannel);
        let (lo0, hi0) = (0.0, 1.0);
        for n in 0..4 {
            let x0 = m.tensor.at(n, 0);
            let expected0 = (t.at(n, 0) - lo0) / (hi0 - lo0);
            assert!((x0 - expected0).abs() < 1e-6);
            let x1 = m.tensor.at(n, 1);
            let expected1 = t.at(n, 1) / 10.0;
            assert!((x1 - expected1).abs() < 1e-6);
        }
        let mins: Vec<f32> = m.tensor.data().iter().step_by(2).copied().collect();
        assert!(mins.iter().cloned().fold(f32::INFINITY, f32::min) == 0.0);
        assert!(mins.iter().cloned().fold(f32::NEG_INFINITY, f32::max) == 1.0);
    }

    #[test]
    fn inverse_restores_value_range() {
        let t = grid_tensor(vec![-3.0, 5.0, 1.0, 2.0], 2, 1);
        let m = feature_to_image(&t, Scope::Global);
        let back = image_to_feature(&m);
        let range = 8.0;
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() <= 1e-5 * range);
        }
    }

    #[test]
    fn all_zero_mapped_with_stats_inverts_to_min() {
        let m = MappedFeature {
            tensor: grid_tensor(vec![0.0; 4], 2, 1),
            stats: NormStats {
                scope: Scope::Global,
                min: vec![-3.0],
                max: vec![5.0],
            },
        };
        let back = image_to_feature(&m);
        assert!(back.data().iter().all(|&v| v == -3.0));
    }

    #[test]
    fn identity_brightness_returns_input_bit_for_bit() {
        let t = grid_tensor(vec![-2.0, 0.5, 2.0, 4.0, 1.0, -1.0, 0.0, 3.0], 2, 2);
        let spec = AugmentationSpec::new(AugKind::Brightness, 0.0).unwrap();
        let out = apply_frofa(&t, &spec, RngKey::new(1)).unwrap();
        assert_eq!(out.data(), t.data());
    }

    #[test]
    fn default_equals_channel_when_single_channel() {
        let spec_default = AugmentationSpec::new(AugKind::Brightness, 0.8).unwrap();
        let spec_channel =
            AugmentationSpec::with_variant(AugKind::Brightness, 0.8, None, Variant::Channel)
                .unwrap();
        for seed in 0..20 {
            let mut rng = RngKey::new(seed).child_str("tensor").stream();
            let values: Vec<f32> = (0..16).map(|_| rng.uniform_in(-5.0, 5.0) as f32).collect();
            let t = grid_tensor(values, 4, 1);
            let key = RngKey::new(seed).child_str("op");
            let a = apply_frofa(&t, &spec_default, key).unwrap();
            let b = apply_frofa(&t, &spec_channel, key).unwrap();
            let bits = |x: &FeatureTensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn channel2_equals_channel_when_ranges_uniform() {
        // both channels span exactly [-1, 3]
        let values = vec![
            -1.0, -1.0, //
            3.0, 3.0, //
            0.5, 1.0, //
            2.0, 0.0,
        ];
        let t = grid_tensor(values, 2, 2);
        let channel =
            AugmentationSpec::with_variant(AugKind::Brightness, 0.6, None, Variant::Channel)
                .unwrap();
        let channel2 =
            AugmentationSpec::with_variant(AugKind::Brightness, 0.6, None, Variant::Channel2)
                .unwrap();
        let key = RngKey::new(11);
        let a = apply_frofa(&t, &channel, key).unwrap();
        let b = apply_frofa(&t, &channel2, key).unwrap();
        let bits = |x: &FeatureTensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn deterministic_in_key() {
        let t = grid_tensor((0..18).map(|i| (i as f32).sin() * 4.0).collect(), 3, 2);
        let spec =
            AugmentationSpec::with_variant(AugKind::Contrast, 5.0, None, Variant::Channel).unwrap();
        let a = apply_frofa(&t, &spec, RngKey::new(3)).unwrap();
        let b = apply_frofa(&t, &spec, RngKey::new(3)).unwrap();
        let c = apply_frofa(&t, &spec, RngKey::new(4)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn output_stays_in_source_range_after_mapped_ops() {
        // contrast can push mapped values past 1; the clip keeps the output
        // inside [min, max]
        let t = grid_tensor(vec![-4.0, -1.0, 1.0, 6.0], 2, 1);
        let spec = AugmentationSpec::new(AugKind::Contrast, 10.0).unwrap();
        for seed in 0..50 {
            let out = apply_frofa(&t, &spec, RngKey::new(seed)).unwrap();
            for &v in out.data() {
                assert!((-4.0..=6.0).contains(&v), "value {v} escaped [-4, 6]");
            }
        }
    }

    #[test]
    fn spatial_on_non_square_rejected() {
        let t = FeatureTensor::new(vec![0.0; 6], 6, 1).unwrap();
        let spec = AugmentationSpec::new(AugKind::Rotate, 30.0).unwrap();
        assert!(matches!(
            apply_frofa(&t, &spec, RngKey::new(0)),
            Err(Error::NonSquareGrid(6))
        ));
    }

    #[test]
    fn pointwise_ops_accept_pooled_features() {
        let t = FeatureTensor::new(vec![1.0, -2.0, 0.5], 1, 3).unwrap();
        let spec = AugmentationSpec::new(AugKind::Brightness, 0.5).unwrap();
        let out = apply_frofa(&t, &spec, RngKey::new(2)).unwrap();
        assert_eq!(out.tokens(), 1);
        for &v in out.data() {
            assert!((-2.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn crop_changes_token_count() {
        let t = grid_tensor((0..16).map(|i| i as f32).collect(), 4, 1);
        let spec = AugmentationSpec::new(AugKind::Crop, 2.0).unwrap();
        let out = apply_frofa(&t, &spec, RngKey::new(0)).unwrap();
        assert_eq!(out.tokens(), 4);
        // every output value appears in the input
        for &v in out.data() {
            assert!(t.data().contains(&v));
        }
    }

    #[test]
    fn crop_one_of_four_enumerates_inputs() {
        // N=4 grid, v=1: the single kept token is one of the 4 inputs
        let t = grid_tensor(vec![10.0, 20.0, 30.0, 40.0], 2, 1);
        let spec = AugmentationSpec::new(AugKind::Crop, 1.0).unwrap();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..64 {
            let out = apply_frofa(&t, &spec, RngKey::new(seed)).unwrap();
            assert_eq!(out.tokens(), 1);
            let v = out.data()[0];
            assert!([10.0, 20.0, 30.0, 40.0].contains(&v));
            seen.insert(v.to_bits());
        }
        assert_eq!(seen.len(), 4, "all four crops should occur across seeds");
    }

    #[test]
    fn inception_probability_zero_is_identity() {
        let t = grid_tensor((0..16).map(|i| i as f32 * 0.3).collect(), 4, 1);
        let spec = AugmentationSpec::new(AugKind::InceptionCrop, 0.0).unwrap();
        for seed in 0..20 {
            let out = apply_frofa(&t, &spec, RngKey::new(seed)).unwrap();
            assert_eq!(out.data(), t.data());
        }
    }

    #[test]
    fn solarize_gate_and_formula() {
        let t = grid_tensor(vec![0.0, -3.0, 6.0, 1.0], 2, 1);
        let never = AugmentationSpec::new(AugKind::Solarize, 0.0).unwrap();
        let out = apply_frofa(&t, &never, RngKey::new(0)).unwrap();
        assert_eq!(out.data(), t.data());

        let always = AugmentationSpec::new(AugKind::Solarize, 1.0).unwrap();
        let out = apply_frofa(&t, &always, RngKey::new(0)).unwrap();
        // f_min = -3, f_max = 6: thresholds -1.5 and 3
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn invert_always_flips() {
        let t = grid_tensor(vec![1.0, -2.0, 0.5, 0.0], 2, 1);
        let spec = AugmentationSpec::new(AugKind::Invert, 1.0).unwrap();
        let out = apply_frofa(&t, &spec, RngKey::new(0)).unwrap();
        assert_eq!(out.data(), &[-1.0, 2.0, -0.5, 0.0]);
    }
}
