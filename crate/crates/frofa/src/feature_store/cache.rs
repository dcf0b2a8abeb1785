//! Binary cache format.
//!
//! Single little-endian file:
//!
//! ```text
//! magic "FFAC" | version u32 | layout u8 | pad [u8; 3] | N u32 | C u32
//! | S u32 | E u64 | labels E x u32 | data E*N*C x f32
//! ```
//!
//! Data is row-major `[example][token][channel]`. A JSON sidecar with the
//! manifest (including `split_name` and `source`, which the binary does not
//! carry) is written next to the cache as `<stem>.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{CacheManifest, FeatureCache, FeatureTensor, Layout};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"FFAC";
pub const CACHE_VERSION: u32 = 1;

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes a cache to `path`, plus the JSON manifest sidecar.
pub fn write_cache(
    manifest: &CacheManifest,
    labels: &[u32],
    features: &[FeatureTensor],
    path: &Path,
) -> Result<()> {
    // validate through the in-memory constructor so file contents are always
    // consistent with the declared manifest
    let cache = FeatureCache::new(manifest.clone(), labels.to_vec(), features.to_vec())?;

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&[manifest.layout.to_byte(), 0, 0, 0])?;
    w.write_all(&manifest.n.to_le_bytes())?;
    w.write_all(&manifest.c.to_le_bytes())?;
    w.write_all(&manifest.num_classes.to_le_bytes())?;
    w.write_all(&manifest.num_examples.to_le_bytes())?;
    for &label in &cache.labels {
        w.write_all(&label.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(manifest.n as usize * manifest.c as usize * 4);
    for tensor in &cache.features {
        buf.clear();
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;

    let mut sidecar = manifest.clone();
    sidecar.version = CACHE_VERSION;
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], expected: u64) -> Result<u64> {
    let mut filled = 0usize;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::Truncated {
                expected,
                found: filled as u64,
            });
        }
        filled += n;
    }
    Ok(filled as u64)
}

/// Reads a cache written by [`write_cache`]. The exact inverse: the returned
/// payload is bit-identical to what was written.
pub fn read_cache(path: &Path) -> Result<FeatureCache> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    if r.read(&mut magic)? < 4 || magic != CACHE_MAGIC {
        return Err(Error::BadMagic);
    }

    let mut head = [0u8; 28];
    read_exact_or_truncated(&mut r, &mut head, 32)?;
    let version = u32::from_le_bytes(head[0..4].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let layout = Layout::from_byte(head[4])?;
    let n = u32::from_le_bytes(head[8..12].try_into().unwrap());
    let c = u32::from_le_bytes(head[12..16].try_into().unwrap());
    let num_classes = u32::from_le_bytes(head[16..20].try_into().unwrap());
    let num_examples = u64::from_le_bytes(head[20..28].try_into().unwrap());

    let label_bytes = num_examples
        .checked_mul(4)
        .ok_or_else(|| Error::ShapeMismatch("example count overflows".into()))?;
    let value_count = num_examples
        .checked_mul(n as u64)
        .and_then(|v| v.checked_mul(c as u64))
        .ok_or_else(|| Error::ShapeMismatch("payload size overflows".into()))?;
    let expected_len = 32 + label_bytes + value_count * 4;
    if file_len != expected_len {
        return Err(Error::Truncated {
            expected: expected_len,
            found: file_len,
        });
    }

    let mut labels = Vec::with_capacity(num_examples as usize);
    let mut lbuf = vec![0u8; label_bytes as usize];
    read_exact_or_truncated(&mut r, &mut lbuf, expected_len)?;
    for chunk in lbuf.chunks_exact(4) {
        labels.push(u32::from_le_bytes(chunk.try_into().unwrap()));
    }

    let per_example = n as usize * c as usize;
    let mut features = Vec::with_capacity(num_examples as usize);
    let mut dbuf = vec![0u8; per_example * 4];
    for _ in 0..num_examples {
        read_exact_or_truncated(&mut r, &mut dbuf, expected_len)?;
        let values: Vec<f32> = dbuf
            .chunks_exact(4)
            .map(|chunk| f32::from_le_bytes(chunk.try_into().unwrap()))
            .collect();
        features.push(FeatureTensor::new(values, n as usize, c as usize)?);
    }

    let mut manifest = CacheManifest {
        version,
        layout,
        n,
        c,
        num_examples,
        num_classes,
        split_name: String::new(),
        source: String::new(),
    };
    // sidecar only contributes the free-text fields
    if let Ok(text) = std::fs::read_to_string(sidecar_path(path)) {
        if let Ok(side) = serde_json::from_str::<CacheManifest>(&text) {
            manifest.split_name = side.split_name;
            manifest.source = side.source;
        }
    }

    FeatureCache::new(manifest, labels, features)
}
