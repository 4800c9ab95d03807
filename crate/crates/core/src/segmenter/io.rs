//! `UGTM` model container: magic, version byte, class count (u32 LE),
//! parameter count (u32 LE), then f32 LE weights.

use std::fs;
use std::path::Path;

use super::net::Segmenter;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"UGTM";
const VERSION: u8 = 1;
const HEADER: usize = 13;

pub fn save_model<T: Scalar>(path: impl AsRef<Path>, model: &Segmenter<T>) -> Result<()> {
    let path = path.as_ref();
    let params = model.params();
    let mut out = Vec::with_capacity(HEADER + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(model.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for &p in params {
        out.extend_from_slice(&p.as_f32().to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a model, optionally checking its class count.
pub fn load_model<T: Scalar>(
    path: impl AsRef<Path>,
    expected_classes: Option<usize>,
) -> Result<Segmenter<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "UGTM",
        });
    }
    if bytes.len() < HEADER {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER,
            found: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version: bytes[4],
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let classes = u32_at(5);
    let count = u32_at(9);
    if let Some(c) = expected_classes {
        if c != classes {
            return Err(Error::Model(format!(
                "{}: model has {classes} classes, expected {c}",
                path.display()
            )));
        }
    }
    if classes < 2 || count != Segmenter::<T>::param_count(classes) {
        return Err(Error::Model(format!(
            "{}: parameter count {count} inconsistent with {classes} classes",
            path.display()
        )));
    }
    let expected = HEADER + 4 * count;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let mut params = Vec::with_capacity(count);
    for (i, c) in bytes[HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: path.display().to_string(),
                index: i,
            });
        }
        params.push(T::lit(v as f64));
    }
    Segmenter::from_params(classes, params)
}
