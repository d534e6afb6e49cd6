//! Output files: provenance comment lines, number formatting, directories.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kwnr::data::format_g17;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the compact JSON rendering of the effective configuration.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serialises");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `# kwnr <version> config_sha256=<hash>`
pub fn provenance_line(hash: &str) -> String {
    format!("# kwnr {VERSION} config_sha256={hash}")
}

pub fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Opens `dir/name` and writes the provenance line.
pub fn csv_file(dir: &Path, name: &str, hash: &str) -> Result<(PathBuf, csv::Writer<BufWriter<File>>)> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut buf = BufWriter::new(file);
    writeln!(buf, "{}", provenance_line(hash))?;
    Ok((path, csv::Writer::from_writer(buf)))
}

pub fn write_json<V: Serialize>(dir: &Path, name: &str, value: &V) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}

/// Machine-readable rendering with 17 significant digits.
pub fn num(v: f64) -> String {
    format_g17(v)
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Console rendering with 4 significant digits.
pub fn sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        format!("{:.*}", (3 - mag).max(0) as usize, v)
    } else {
        format!("{v:.3e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_digits() {
        assert_eq!(sig4(0.123456), "0.1235");
        assert_eq!(sig4(14.6612), "14.66");
        assert_eq!(sig4(1234.4), "1234");
        assert_eq!(sig4(0.0000754), "7.540e-5");
        assert_eq!(sig4(-0.342), "-0.3420");
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&serde_json::json!({"a": 1}));
        assert_eq!(a, config_hash(&serde_json::json!({"a": 1})));
        assert_eq!(a.len(), 64);
        assert_ne!(a, config_hash(&serde_json::json!({"a": 2})));
    }
}
