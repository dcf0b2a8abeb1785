//! Minimal NPY reader for importing externally cached features.
//!
//! Supports format versions 1.0 and 2.0, C-order only, dtypes `<f4`
//! (features) and `<i4`/`<i8` (labels). That is the whole surface needed to
//! ingest arrays dumped with `numpy.save`.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::{CacheManifest, FeatureCache, FeatureTensor, Layout, CACHE_VERSION};
use crate::error::{Error, Result};

const NPY_MAGIC: [u8; 6] = *b"\x93NUMPY";

#[derive(Debug)]
struct NpyHeader {
    descr: String,
    fortran_order: bool,
    shape: Vec<u64>,
}

fn parse_error(msg: impl Into<String>) -> Error {
    Error::NpyFormat(msg.into())
}

/// Parses the Python dict literal in an npy header. The writer side of numpy
/// emits a fixed key order, but keys are matched by name here.
fn parse_header_dict(text: &str) -> Result<NpyHeader> {
    let text = text.trim().trim_start_matches('{').trim_end_matches(|ch| ch == '}' || ch == ' ' || ch == ',');

    let find_value = |key: &str| -> Result<String> {
        let needle = format!("'{key}'");
        let at = text
            .find(&needle)
            .ok_or_else(|| parse_error(format!("missing key {key}")))?;
        let rest = &text[at + needle.len()..];
        let rest = rest
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| parse_error(format!("malformed entry for {key}")))?
            .trim_start();
        // value ends at the comma that closes this entry; tuple values keep
        // their inner commas by matching parens
        let mut depth = 0i32;
        let mut end = rest.len();
        for (i, ch) in rest.char_indices() {
            match ch {
                '(' | '[' => depth += 1,
                ')' | ']' => depth -= 1,
                ',' if depth == 0 => {
                    end = i;
                    break;
                }
                _ => {}
            }
        }
        Ok(rest[..end].trim().to_string())
    };

    let descr = find_value("descr")?.trim_matches('\'').to_string();
    let fortran_order = match find_value("fortran_order")?.as_str() {
        "True" => true,
        "False" => false,
        other => return Err(parse_error(format!("bad fortran_order {other}"))),
    };
    let shape_text = find_value("shape")?;
    let inner = shape_text
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| parse_error(format!("bad shape {shape_text}")))?;
    let mut shape = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        shape.push(
            part.parse::<u64>()
                .map_err(|_| parse_error(format!("bad shape element {part}")))?,
        );
    }
    Ok(NpyHeader {
        descr,
        fortran_order,
        shape,
    })
}

fn read_npy(path: &Path) -> Result<(NpyHeader, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| parse_error("file too short for npy magic"))?;
    if magic[..6] != NPY_MAGIC {
        return Err(parse_error("not an npy file"));
    }
    let major = magic[6];
    let header_len = match major {
        1 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b).map_err(|_| parse_error("truncated header length"))?;
            u16::from_le_bytes(b) as usize
        }
        2 => {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| parse_error("truncated header length"))?;
            u32::from_le_bytes(b) as usize
        }
        other => return Err(parse_error(format!("unsupported npy version {other}"))),
    };
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| parse_error("truncated header"))?;
    let header_text =
        String::from_utf8(header_bytes).map_err(|_| parse_error("header is not utf-8"))?;
    let header = parse_header_dict(&header_text)?;
    if header.fortran_order {
        return Err(parse_error("Fortran-order arrays are not supported"));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    Ok((header, data))
}

fn element_count(shape: &[u64]) -> u64 {
    shape.iter().product()
}

fn check_payload(header: &NpyHeader, data: &[u8], elem_size: u64) -> Result<()> {
    let expected = element_count(&header.shape) * elem_size;
    if data.len() as u64 != expected {
        return Err(Error::Truncated {
            expected,
            found: data.len() as u64,
        });
    }
    Ok(())
}

/// Imports a feature array and a label array into an in-memory cache.
///
/// `features_path` must hold `<f4` data shaped `(E, N, C)` for
/// [`Layout::TokenGrid`] or `(E, C)` for [`Layout::Pooled`]; `labels_path`
/// must hold `<i4` or `<i8` data shaped `(E,)`. The class count becomes
/// `1 + max(label)` and every float is preserved bit-exactly.
pub fn import_npy(features_path: &Path, labels_path: &Path, layout: Layout) -> Result<FeatureCache> {
    let (fh, fdata) = read_npy(features_path)?;
    if fh.descr != "<f4" {
        return Err(Error::UnsupportedDtype {
            found: fh.descr,
            expected: "<f4".into(),
        });
    }
    let expected_rank = match layout {
        Layout::TokenGrid => 3,
        Layout::Pooled => 2,
    };
    if fh.shape.len() != expected_rank {
        return Err(Error::RankMismatch {
            expected: expected_rank,
            found: fh.shape.clone(),
        });
    }
    check_payload(&fh, &fdata, 4)?;
    let (e, n, c) = match layout {
        Layout::TokenGrid => (fh.shape[0], fh.shape[1], fh.shape[2]),
        Layout::Pooled => (fh.shape[0], 1, fh.shape[1]),
    };

    let (lh, ldata) = read_npy(labels_path)?;
    if lh.shape.len() != 1 {
        return Err(Error::RankMismatch {
            expected: 1,
            found: lh.shape.clone(),
        });
    }
    if lh.shape[0] != e {
        return Err(Error::ShapeMismatch(format!(
            "features hold {e} examples but labels hold {}",
            lh.shape[0]
        )));
    }
    let labels: Vec<u32> = match lh.descr.as_str() {
        "<i4" => {
            check_payload(&lh, &ldata, 4)?;
            ldata
                .chunks_exact(4)
                .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                .map(to_label)
                .collect::<Result<_>>()?
        }
        "<i8" => {
            check_payload(&lh, &ldata, 8)?;
            ldata
                .chunks_exact(8)
                .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
                .map(|v| to_label(i32::try_from(v).unwrap_or(-1)))
                .collect::<Result<_>>()?
        }
        other => {
            return Err(Error::UnsupportedDtype {
                found: other.into(),
                expected: "<i4 or <i8".into(),
            })
        }
    };
    let num_classes = 1 + *labels.iter().max().unwrap_or(&0);

    let per_example = (n * c) as usize;
    let mut features = Vec::with_capacity(e as usize);
    for chunk in fdata.chunks_exact(per_example * 4) {
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        features.push(FeatureTensor::new(values, n as usize, c as usize)?);
    }

    let manifest = CacheManifest {
        version: CACHE_VERSION,
        layout,
        n: n as u32,
        c: c as u32,
        num_examples: e,
        num_classes: num_classes.max(2),
        split_name: String::new(),
        source: features_path.display().to_string(),
    };
    FeatureCache::new(manifest, labels, features)
}

fn to_label(v: i32) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ShapeMismatch(format!("negative label {v}")))
}
