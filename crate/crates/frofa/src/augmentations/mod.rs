//! The twenty-augmentation catalog.
//!
//! Each augmentation is an image-space operation consumed by
//! [`crate::frofa_core::apply_frofa`]. The deterministic kernels live in the
//! submodules and take their sampled values as arguments, so tests can force
//! any value; sampling from a spec happens in the dispatch layer.

pub mod codec;
pub mod geometry;
pub mod mixup;
pub mod stylistic;
pub mod tokens;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureTensor;
use crate::frofa_core::Variant;

/// Which representation an augmentation operates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Acts on the `[0, 1]`-mapped grid produced by the feature-to-image
    /// mapping and is inverted back afterwards.
    Mapped,
    /// Acts directly on raw feature values.
    Raw,
    /// Token-level reshaping (crop family, patch dropout): value-preserving,
    /// no mapping, may change the token count.
    Structural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Crop,
    ResizedCrop,
    InceptionCrop,
    PatchDropout,
    ChannelDropout,
    Brightness,
    Contrast,
    Equalize,
    Invert,
    Posterize,
    Sharpness,
    Solarize,
    UniformNoise,
    Jpeg,
    Mixup,
}

impl AugKind {
    pub const ALL: [AugKind; 20] = [
        AugKind::Rotate,
        AugKind::ShearX,
        AugKind::ShearY,
        AugKind::TranslateX,
        AugKind::TranslateY,
        AugKind::Crop,
        AugKind::ResizedCrop,
        AugKind::InceptionCrop,
        AugKind::PatchDropout,
        AugKind::ChannelDropout,
        AugKind::Brightness,
        AugKind::Contrast,
        AugKind::Equalize,
        AugKind::Invert,
        AugKind::Posterize,
        AugKind::Sharpness,
        AugKind::Solarize,
        AugKind::UniformNoise,
        AugKind::Jpeg,
        AugKind::Mixup,
    ];

    pub fn space(self) -> Space {
        use AugKind::*;
        match self {
            Rotate | ShearX | ShearY | TranslateX | TranslateY | Brightness | Contrast
            | Equalize | Posterize | Sharpness | UniformNoise | Jpeg => Space::Mapped,
            Invert | Solarize | ChannelDropout | Mixup => Space::Raw,
            Crop | ResizedCrop | InceptionCrop | PatchDropout => Space::Structural,
        }
    }

    /// Spatial kinds need the square grid view.
    pub fn needs_square_grid(self) -> bool {
        use AugKind::*;
        matches!(
            self,
            Rotate
                | ShearX
                | ShearY
                | TranslateX
                | TranslateY
                | Crop
                | ResizedCrop
                | InceptionCrop
                | Sharpness
                | Jpeg
        )
    }

    /// Only these change the token count.
    pub fn changes_token_count(self) -> bool {
        matches!(self, AugKind::Crop | AugKind::PatchDropout)
    }

    fn name(self) -> &'static str {
        use AugKind::*;
        match self {
            Rotate => "rotate",
            ShearX => "shear_x",
            ShearY => "shear_y",
            TranslateX => "translate_x",
            TranslateY => "translate_y",
            Crop => "crop",
            ResizedCrop => "resized_crop",
            InceptionCrop => "inception_crop",
            PatchDropout => "patch_dropout",
            ChannelDropout => "channel_dropout",
            Brightness => "brightness",
            Contrast => "contrast",
            Equalize => "equalize",
            Invert => "invert",
            Posterize => "posterize",
            Sharpness => "sharpness",
            Solarize => "solarize",
            UniformNoise => "uniform_noise",
            Jpeg => "jpeg",
            Mixup => "mixup",
        }
    }
}

/// One augmentation with its sweep parameter(s) and variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugKind,
    /// The sweep parameter; meaning is kind-dependent.
    pub v: f64,
    /// Second parameter for posterize (`v1, v2` shift bounds) and jpeg
    /// (quality range).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v2: Option<f64>,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability_space_note: Option<String>,
}

impl AugmentationSpec {
    pub fn new(kind: AugKind, v: f64) -> Result<Self> {
        Self::with_variant(kind, v, None, Variant::Default)
    }

    pub fn with_pair(kind: AugKind, v1: f64, v2: f64) -> Result<Self> {
        Self::with_variant(kind, v1, Some(v2), Variant::Default)
    }

    pub fn with_variant(kind: AugKind, v: f64, v2: Option<f64>, variant: Variant) -> Result<Self> {
        let spec = AugmentationSpec {
            kind,
            v,
            v2,
            variant,
            probability_space_note: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Rejects parameters outside the sweep domain. The identity setting of
    /// each kind (zero strength, probability zero, contrast 1) is allowed so
    /// pipelines can carry explicit no-ops.
    pub fn validate(&self) -> Result<()> {
        use AugKind::*;
        let fail = |msg: String| Err(Error::InvalidAugmentation(msg));
        let v = self.v;
        let name = self.kind.name();

        let integral = |x: f64| x.fract() == 0.0;
        match self.kind {
            Rotate => {
                if !(0.0..=90.0).contains(&v) {
                    return fail(format!("{name} v={v} outside [0, 90]"));
                }
            }
            ShearX | ShearY => {
                if !(0.0..=0.7).contains(&v) {
                    return fail(format!("{name} v={v} outside [0, 0.7]"));
                }
            }
            TranslateX | TranslateY => {
                if !integral(v) || !(0.0..=7.0).contains(&v) {
                    return fail(format!("{name} v={v} must be an integer in [0, 7]"));
                }
            }
            Crop | ResizedCrop => {
                if !integral(v) || v < 1.0 {
                    return fail(format!("{name} v={v} must be a positive integer"));
                }
            }
            PatchDropout => {
                if !integral(v) || v < 1.0 {
                    return fail(format!("{name} v={v} must be a positive integer"));
                }
            }
            InceptionCrop | ChannelDropout | Equalize | Invert | Solarize => {
                if !(0.0..=1.0).contains(&v) {
                    return fail(format!("{name} probability v={v} outside [0, 1]"));
                }
            }
            Brightness => {
                if !(0.0..=1.0).contains(&v) {
                    return fail(format!("{name} v={v} outside [0, 1]"));
                }
            }
            Contrast => {
                if !(1.0..=10.0).contains(&v) {
                    return fail(format!("{name} v={v} outside [1, 10]"));
                }
            }
            Sharpness => {
                if !(0.0..=3.0).contains(&v) {
                    return fail(format!("{name} v={v} outside [0, 3]"));
                }
            }
            UniformNoise => {
                if !(0.0..=0.7).contains(&v) {
                    return fail(format!("{name} v={v} outside [0, 0.7]"));
                }
            }
            Posterize => {
                let v2 = self.v2.unwrap_or(f64::NAN);
                if !integral(v) || !integral(v2) || v < 1.0 || v2 > 8.0 || v >= v2 {
                    return fail(format!(
                        "posterize shifts must satisfy 1 <= v1 < v2 <= 8, got ({v}, {v2})"
                    ));
                }
            }
            Jpeg => {
                let v2 = self.v2.unwrap_or(f64::NAN);
                if !(1.0..=100.0).contains(&v) || !(1.0..=100.0).contains(&v2) || v >= v2 {
                    return fail(format!(
                        "jpeg quality must satisfy 1 <= v1 < v2 <= 100, got ({v}, {v2})"
                    ));
                }
            }
            Mixup => {
                if !(v > 0.0 && v <= 1.0) {
                    return fail(format!("mixup alpha v={v} outside (0, 1]"));
                }
            }
        }
        if self.v2.is_some() && !matches!(self.kind, Posterize | Jpeg) {
            return fail(format!("{name} takes a single parameter"));
        }
        if matches!(self.kind, PatchDropout | Mixup) && self.variant != Variant::Default {
            return fail(format!(
                "{name} has no per-channel variant: it acts across channels as a whole"
            ));
        }
        Ok(())
    }

    pub fn space(&self) -> Space {
        self.kind.space()
    }

    /// Whether this (kind, variant) pairing is one the study evaluated.
    /// Channel variants of anything but brightness, contrast, and posterize
    /// are permitted but echoed as non-paper settings.
    pub fn paper_evaluated_variant(&self) -> bool {
        use AugKind::*;
        match self.variant {
            Variant::Default => true,
            Variant::Channel => matches!(self.kind, Brightness | Contrast | Posterize),
            Variant::Channel2 => matches!(self.kind, Brightness),
        }
    }

    /// Compact identifier used in metrics files, e.g. `brightness_c2_v1`.
    pub fn id(&self) -> String {
        let variant = match self.variant {
            Variant::Default => "",
            Variant::Channel => "_c",
            Variant::Channel2 => "_c2",
        };
        match self.v2 {
            Some(v2) => format!("{}{}_v{}_{}", self.kind.name(), variant, self.v, v2),
            None => format!("{}{}_v{}", self.kind.name(), variant, self.v),
        }
    }
}

/// The per-kind sweep grids of the study, as `(v, v2)` pairs.
pub fn paper_sweep(kind: AugKind) -> Vec<(f64, Option<f64>)> {
    use AugKind::*;
    let single = |vals: &[f64]| vals.iter().map(|&v| (v, None)).collect::<Vec<_>>();
    match kind {
        Rotate => single(&[15.0, 30.0, 45.0, 60.0, 75.0, 90.0]),
        ShearX | ShearY => single(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]),
        TranslateX | TranslateY => single(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]),
        Crop => single(&(1..=13).map(|v| v as f64).collect::<Vec<_>>()),
        ResizedCrop => single(&[16.0, 18.0, 20.0, 22.0, 24.0, 26.0, 28.0, 35.0, 42.0]),
        InceptionCrop | Solarize => {
            single(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
        }
        PatchDropout => single(
            &[
                1.0, 2.0, 4.0, 12.0, 20.0, 28.0, 36.0, 44.0, 52.0, 60.0, 68.0, 76.0, 84.0, 92.0,
                100.0, 116.0, 132.0, 148.0, 164.0, 180.0,
            ],
        ),
        ChannelDropout => single(&[0.1, 0.3, 0.5, 0.99]),
        Brightness => single(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
        Contrast => single(&[1.25, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 9.0, 10.0]),
        Equalize | Invert => single(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]),
        Posterize => {
            // v2 fixed at 8 while v1 drops 7..1, then v1 fixed at 1 while v2
            // climbs 2..7
            let mut pairs: Vec<(f64, Option<f64>)> =
                (1..=7).rev().map(|v1| (v1 as f64, Some(8.0))).collect();
            pairs.extend((2..=7).map(|v2| (1.0, Some(v2 as f64))));
            pairs
        }
        Sharpness => single(&[0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0, 3.0]),
        UniformNoise => single(&[0.1, 0.3, 0.5, 0.7]),
        Jpeg => {
            let mut pairs = Vec::new();
            for &v1 in &[10.0, 25.0, 50.0, 75.0] {
                for &v2 in &[25.0, 50.0, 75.0, 100.0] {
                    if v2 > v1 {
                        pairs.push((v1, Some(v2)));
                    }
                }
            }
            pairs
        }
        Mixup => single(&[0.025, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
    }
}

pub(crate) fn extract_plane(t: &FeatureTensor, c: usize) -> Vec<f32> {
    (0..t.tokens()).map(|n| t.at(n, c)).collect()
}

pub(crate) fn write_plane(t: &mut FeatureTensor, c: usize, plane: &[f32]) {
    let channels = t.channels();
    for (n, &v) in plane.iter().enumerate() {
        t.data_mut()[n * channels + c] = v;
    }
}
