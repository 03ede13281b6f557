//! On-disk artifact formats: latent tensors, grayscale heatmaps, layout
//! reports, and stage traces.
//!
//! Latent files carry an ASCII header line `C H W` followed by C·H·W
//! little-endian f64 values in channel-major order. Heatmaps are binary
//! PGM (P5, maxval 255) with values scaled so the map's maximum lands on
//! 255. Layout reports are one `name x0 y0 x1 y1` line per entity with
//! six-decimal coordinates. Traces are JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::diffusion::LatentGrid;
use crate::layout::BBox;
use crate::srf::StageTrace;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

fn malformed(what: &'static str, detail: impl Into<String>) -> IoError {
    IoError::Malformed { what, detail: detail.into() }
}

/// Writes a latent tensor: `C H W\n` then little-endian f64 payload.
pub fn write_latent(path: &Path, z: &LatentGrid) -> Result<(), IoError> {
    let (c, h, w) = z.shape();
    let mut buf = Vec::with_capacity(32 + z.data().len() * 8);
    buf.extend_from_slice(format!("{c} {h} {w}\n").as_bytes());
    for v in z.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a latent tensor written by [`write_latent`]. The step index of
/// the returned grid is 0.
pub fn read_latent(path: &Path) -> Result<LatentGrid, IoError> {
    let bytes = fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("latent file", "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| malformed("latent file", "non-utf8 header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| malformed("latent file", format!("header {header:?}: {e}")))?;
    let [c, h, w] = dims[..] else {
        return Err(malformed("latent file", format!("header {header:?}: want 3 dims")));
    };
    let payload = &bytes[newline + 1..];
    let want = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| malformed("latent file", "dimension overflow"))?;
    if payload.len() != want {
        return Err(malformed(
            "latent file",
            format!("payload is {} bytes, header implies {want}", payload.len()),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
        .collect();
    LatentGrid::from_data(c, h, w, 0, data)
        .map_err(|e| malformed("latent file", e.to_string()))
}

/// Writes a spatial map as binary PGM, scaling so the maximum value maps
/// to 255. Non-positive maps come out all black.
pub fn write_pgm(path: &Path, map: &[f64], height: usize, width: usize) -> Result<(), IoError> {
    if map.len() != height * width {
        return Err(malformed(
            "heatmap",
            format!("{} values for {height}x{width} grid", map.len()),
        ));
    }
    let peak = map.iter().cloned().fold(0.0_f64, f64::max);
    let mut buf = Vec::with_capacity(32 + map.len());
    buf.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    for v in map {
        let scaled = if peak > 0.0 { (v / peak * 255.0).round().clamp(0.0, 255.0) } else { 0.0 };
        buf.push(scaled as u8);
    }
    fs::write(path, buf)?;
    Ok(())
}

/// One `name x0 y0 x1 y1` line per entity, six decimals, sorted by name.
pub fn render_layout_report(boxes: &BTreeMap<String, BBox>) -> String {
    let mut out = String::new();
    for (name, b) in boxes {
        out.push_str(&format!(
            "{name} {:.6} {:.6} {:.6} {:.6}\n",
            b.x0, b.y0, b.x1, b.y1
        ));
    }
    out
}

pub fn write_layout_report(path: &Path, boxes: &BTreeMap<String, BBox>) -> Result<(), IoError> {
    fs::write(path, render_layout_report(boxes))?;
    Ok(())
}

/// Reads a layout report written by [`write_layout_report`].
pub fn read_layout_report(path: &Path) -> Result<BTreeMap<String, BBox>, IoError> {
    let text = fs::read_to_string(path)?;
    let mut boxes = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, coords @ ..] = &fields[..] else { unreachable!("non-empty line") };
        if coords.len() != 4 {
            return Err(malformed(
                "layout report",
                format!("line {}: want `name x0 y0 x1 y1`, got {line:?}", lineno + 1),
            ));
        }
        let mut vals = [0.0; 4];
        for (v, c) in vals.iter_mut().zip(coords) {
            *v = c.parse::<f64>().map_err(|e| {
                malformed("layout report", format!("line {}: {c:?}: {e}", lineno + 1))
            })?;
        }
        let b = BBox::new(vals[0], vals[1], vals[2], vals[3])
            .map_err(|e| malformed("layout report", format!("line {}: {e}", lineno + 1)))?;
        boxes.insert(name.to_string(), b);
    }
    Ok(boxes)
}

pub fn write_trace(path: &Path, trace: &StageTrace) -> Result<(), IoError> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, trace)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<StageTrace, IoError> {
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srf::{MaskLabel, StepTrace};
    use tempfile::tempdir;

    #[test]
    fn latent_roundtrip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("z.latent");
        let z = LatentGrid::seeded_normal(4, 16, 16, 0, 42);
        write_latent(&path, &z).unwrap();
        let back = read_latent(&path).unwrap();
        assert_eq!(back.shape(), (4, 16, 16));
        assert_eq!(back.data(), z.data());
    }

    #[test]
    fn latent_header_and_size_validation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.latent");

        std::fs::write(&path, b"no newline here").unwrap();
        assert!(matches!(read_latent(&path), Err(IoError::Malformed { .. })));

        std::fs::write(&path, b"2 2\n").unwrap();
        assert!(matches!(read_latent(&path), Err(IoError::Malformed { .. })));

        // Header promises 1*1*1 = 8 payload bytes; give it 4.
        std::fs::write(&path, b"1 1 1\nabcd").unwrap();
        assert!(matches!(read_latent(&path), Err(IoError::Malformed { .. })));
    }

    #[test]
    fn pgm_is_max_scaled() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_pgm(&path, &[0.0, 0.25, 0.5, 1.0], 2, 2).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n".as_slice());
        assert_eq!(&bytes[11..], &[0, 64, 128, 255]);

        // All-zero map stays black rather than dividing by zero.
        write_pgm(&path, &[0.0; 4], 2, 2).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[11..], &[0, 0, 0, 0]);
    }

    #[test]
    fn mask_dump_uses_full_range() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        // 0 = off, 255 = on falls out of max-scaling a 0/1 map.
        write_pgm(&path, &[1.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[11..], &[255, 0, 0, 255]);
    }

    #[test]
    fn layout_report_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("layout.txt");
        let mut boxes = BTreeMap::new();
        boxes.insert("cat".to_string(), BBox::new(0.1, 0.2, 0.4, 0.5).unwrap());
        boxes.insert("dog".to_string(), BBox::new(0.5, 0.5, 0.9, 0.8).unwrap());
        write_layout_report(&path, &boxes).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "cat 0.100000 0.200000 0.400000 0.500000\ndog 0.500000 0.500000 0.900000 0.800000\n"
        );
        let back = read_layout_report(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back["cat"].x1 - 0.4).abs() < 1e-9);
    }

    #[test]
    fn trace_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trace.json");
        let trace = StageTrace {
            index: 2,
            mode: "synthesis".into(),
            text: "add a cat".into(),
            height: 2,
            width: 2,
            entities: BTreeMap::from([("cat".to_string(), 0)]),
            boxes: BTreeMap::from([("cat".to_string(), [0.1, 0.1, 0.4, 0.4])]),
            relaxation: None,
            steps: vec![StepTrace {
                step: 1,
                t: 50,
                loss: 0.5,
                mask_source: MaskLabel::Box,
                attention_mass_in_mask: 0.25,
            }],
            final_attention: BTreeMap::from([("cat".to_string(), vec![0.25; 4])]),
            final_mask: vec![1, 0, 0, 1],
            peak_ratio_before: None,
        };
        write_trace(&path, &trace).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(back, trace);
    }
}
