//! Parameter checkpoints: a text manifest naming each tensor and its shape,
//! plus a flat little-endian `f64` payload in manifest order.
//!
//! `<base>.manifest`:
//! ```text
//! checkpoint_version 1
//! tensor mean.w0 64 4
//! tensor mean.b0 64
//! ```
//! `<base>.f64`: the concatenated tensor data, 8 bytes per value, LE.
//!
//! Round-trips are bit-identical: the payload is raw IEEE-754 bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One named tensor to write, or read back.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor { name: name.into(), shape, data }
    }
}

fn manifest_path(base: &Path) -> std::path::PathBuf {
    base.with_extension("manifest")
}

fn payload_path(base: &Path) -> std::path::PathBuf {
    base.with_extension("f64")
}

/// Writes `<base>.manifest` and `<base>.f64`.
pub fn save(base: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut manifest = String::from("checkpoint_version 1\n");
    let mut payload: Vec<u8> = Vec::new();
    for t in tensors {
        let numel: usize = t.shape.iter().product();
        if numel != t.data.len() {
            return Err(Error::contract(format!(
                "tensor {}: shape {:?} does not match {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        if t.name.contains(char::is_whitespace) || t.name.is_empty() {
            return Err(Error::contract(format!("bad tensor name {:?}", t.name)));
        }
        manifest.push_str("tensor ");
        manifest.push_str(&t.name);
        for d in &t.shape {
            manifest.push_str(&format!(" {d}"));
        }
        manifest.push('\n');
        for &x in &t.data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(parent) = base.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(manifest_path(base), manifest)?;
    fs::write(payload_path(base), payload)?;
    Ok(())
}

/// Reads a checkpoint back; tensors come out in manifest order.
pub fn load(base: &Path) -> Result<Vec<Tensor>> {
    let mpath = manifest_path(base);
    let text = fs::read_to_string(&mpath)?;
    let mut lines = text.lines();
    let display = mpath.display().to_string();
    match lines.next() {
        Some("checkpoint_version 1") => {}
        other => {
            return Err(Error::format(
                display,
                format!("unsupported header {:?}", other.unwrap_or("")),
            ))
        }
    }
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(Error::format(display.clone(), format!("bad line {line:?}")));
        }
        let name = parts
            .next()
            .ok_or_else(|| Error::format(display.clone(), "tensor line missing name"))?
            .to_string();
        let shape: Vec<usize> = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::format(display.clone(), format!("bad dim {p:?}")))
            })
            .collect::<Result<_>>()?;
        if shape.is_empty() {
            return Err(Error::format(display.clone(), format!("tensor {name} has no shape")));
        }
        specs.push((name, shape));
    }

    let ppath = payload_path(base);
    let bytes = fs::read(&ppath)?;
    let total: usize = specs.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if bytes.len() != total * 8 {
        return Err(Error::format(
            ppath.display().to_string(),
            format!("payload holds {} bytes, manifest expects {}", bytes.len(), total * 8),
        ));
    }
    let mut tensors = Vec::new();
    let mut off = 0;
    for (name, shape) in specs {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[off..off + 8]);
            data.push(f64::from_le_bytes(buf));
            off += 8;
        }
        tensors.push(Tensor { name, shape, data });
    }
    Ok(tensors)
}

/// Pulls one tensor by name out of a loaded checkpoint, validating its shape.
pub fn take(tensors: &[Tensor], name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let t = tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::contract(format!("checkpoint missing tensor {name}")))?;
    if t.shape != shape {
        return Err(Error::contract(format!(
            "tensor {name}: expected shape {:?}, found {:?}",
            shape, t.shape
        )));
    }
    Ok(t.data.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = std::env::temp_dir().join("pandr-ckpt-test");
        let base = dir.join("params");
        let tensors = vec![
            Tensor::new("w", vec![2, 3], vec![0.1, -0.2, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -0.0]),
            Tensor::new("b", vec![2], vec![std::f64::consts::PI, -1.5]),
        ];
        save(&base, &tensors).unwrap();
        let loaded = load(&base).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in tensors.iter().zip(&loaded) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = std::env::temp_dir().join("pandr-ckpt-test2");
        let base = dir.join("params");
        save(&base, &[Tensor::new("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])]).unwrap();
        let loaded = load(&base).unwrap();
        assert!(take(&loaded, "w", &[4]).is_err());
        assert!(take(&loaded, "missing", &[2, 2]).is_err());
        assert!(take(&loaded, "w", &[2, 2]).is_ok());

        // Truncated payload fails structural validation.
        let ppath = base.with_extension("f64");
        let bytes = std::fs::read(&ppath).unwrap();
        std::fs::write(&ppath, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load(&base).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
