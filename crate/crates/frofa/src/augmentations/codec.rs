//! JPEG round trip of one channel plane.

use image::codecs::jpeg::{JpegDecoder, JpegEncoder};
use image::{ColorType, ImageDecoder};

use crate::error::{Error, Result};

/// Quantizes a `[0, 1]` plane to 8-bit grayscale, runs it through a JPEG
/// encode/decode at `quality` (1..=100), and dequantizes.
pub fn jpeg_plane(plane: &mut [f32], side: usize, quality: u8) -> Result<()> {
    debug_assert_eq!(plane.len(), side * side);
    let quality = quality.clamp(1, 100);
    let gray: Vec<u8> = plane.iter().map(|&x| super::stylistic::quantize_u8(x)).collect();

    let mut encoded = Vec::new();
    JpegEncoder::new_with_quality(&mut encoded, quality)
        .encode(&gray, side as u32, side as u32, ColorType::L8)
        .map_err(|e| Error::Codec(e.to_string()))?;

    let decoder =
        JpegDecoder::new(std::io::Cursor::new(&encoded)).map_err(|e| Error::Codec(e.to_string()))?;
    if decoder.dimensions() != (side as u32, side as u32) {
        return Err(Error::Codec("decoded dimensions changed".into()));
    }
    let mut decoded = vec![0u8; decoder.total_bytes() as usize];
    decoder
        .read_image(&mut decoded)
        .map_err(|e| Error::Codec(e.to_string()))?;
    if decoded.len() != plane.len() {
        return Err(Error::Codec("decoded plane size changed".into()));
    }
    for (v, &q) in plane.iter_mut().zip(&decoded) {
        *v = q as f32 / 255.0;
    }
    Ok(())
}
