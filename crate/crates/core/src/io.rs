//! On-disk dumps of fields and masks.
//!
//! A field is stored as `<stem>.f64` (raw little-endian doubles, row-major)
//! next to a sidecar `<stem>.json` holding `{"nx","ny","x0","y0","h","name"}`.
//! A mask is stored as `<stem>.pgm` (binary P5, maxval 255, 255 = member) with
//! the same sidecar. Rows are written in storage order, `j = 0` first.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid2D, RegionMask, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub name: String,
}

impl Sidecar {
    pub fn new(grid: &Grid2D, name: &str) -> Self {
        Sidecar {
            nx: grid.nx,
            ny: grid.ny,
            x0: grid.x0,
            y0: grid.y0,
            h: grid.h,
            name: name.to_string(),
        }
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.x0, self.y0, self.h, self.nx, self.ny)
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Strip a known dump extension so either the stem or any member file works.
fn stem_of(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("f64" | "pgm" | "json") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn write_sidecar(stem: &Path, grid: &Grid2D, name: &str) -> Result<()> {
    let path = with_ext(stem, "json");
    let text = serde_json::to_string_pretty(&Sidecar::new(grid, name))
        .expect("sidecar serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_sidecar(stem: &Path) -> Result<Sidecar> {
    let path = with_ext(stem, "json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn write_field(stem: impl AsRef<Path>, field: &ScalarField, name: &str) -> Result<()> {
    let stem = stem.as_ref();
    let mut bytes = Vec::with_capacity(field.values.len() * 8);
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let path = with_ext(stem, "f64");
    fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_sidecar(stem, &field.grid, name)
}

/// Reads a field dump; `path` may be the stem or either of its two files.
pub fn read_field(path: impl AsRef<Path>) -> Result<(ScalarField, String)> {
    let stem = stem_of(path.as_ref());
    let meta = read_sidecar(&stem)?;
    let grid = meta.grid().map_err(|e| Error::Format {
        path: with_ext(&stem, "json").display().to_string(),
        reason: e.to_string(),
    })?;
    let data_path = with_ext(&stem, "f64");
    let bytes =
        fs::read(&data_path).map_err(|e| Error::io(data_path.display().to_string(), e))?;
    if bytes.len() != grid.len() * 8 {
        return Err(Error::Format {
            path: data_path.display().to_string(),
            reason: format!("expected {} bytes, found {}", grid.len() * 8, bytes.len()),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((ScalarField::new(grid, values)?, meta.name))
}

pub fn write_mask(stem: impl AsRef<Path>, mask: &RegionMask, name: &str) -> Result<()> {
    let stem = stem.as_ref();
    let g = mask.grid;
    let mut bytes = format!("P5\n{} {}\n255\n", g.nx, g.ny).into_bytes();
    bytes.extend(mask.members.iter().map(|&m| if m { 255u8 } else { 0u8 }));
    let path = with_ext(stem, "pgm");
    fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_sidecar(stem, &g, name)
}

/// Reads a mask dump; any nonzero pixel is a member.
pub fn read_mask(path: impl AsRef<Path>) -> Result<(RegionMask, String)> {
    let stem = stem_of(path.as_ref());
    let meta = read_sidecar(&stem)?;
    let grid = meta.grid()?;
    let pgm_path = with_ext(&stem, "pgm");
    let bad = |reason: &str| Error::Format {
        path: pgm_path.display().to_string(),
        reason: reason.to_string(),
    };
    let bytes = fs::read(&pgm_path).map_err(|e| Error::io(pgm_path.display().to_string(), e))?;
    // header: magic, width, height, maxval separated by whitespace, comments allowed
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = fields[3].parse().map_err(|_| bad("bad maxval"))?;
    if maxval > 255 {
        return Err(bad("16-bit PGM is not supported"));
    }
    if w != grid.nx || h != grid.ny {
        return Err(bad("raster size disagrees with the sidecar"));
    }
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated raster"))?;
    let members = raster.iter().map(|&b| b != 0).collect();
    Ok((RegionMask::new(grid, members)?, meta.name))
}
