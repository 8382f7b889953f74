//! Dataset directories on disk: PFM images and normals, a PGM mask, and a
//! plain-text light list.
//!
//! ```text
//! <dir>/images/000.pfm ...
//! <dir>/lights.txt        one "lx ly lz" per line
//! <dir>/normals_gt.pfm
//! <dir>/mask.pgm
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::UnitVector3;
use crate::image::{Image, Mask, NormalMap};
use crate::render::RenderedSample;

const UNIT_SLACK: f64 = 1e-3;

/// Writes a 1- or 3-channel image as little-endian PFM. Rows are stored
/// bottom to top as the format requires.
pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    let tag = match img.channels() {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::format(path, format!("PFM holds 1 or 3 channels, not {c}")));
        }
    };
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * c * 4);
    for row in (0..h).rev() {
        for v in &img.data()[row * w * c..(row + 1) * w * c] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()
}

/// Reads the header tokens shared by PFM and PGM, leaving `pos` at the
/// start of the raster.
fn read_header<'a>(bytes: &'a [u8], path: &Path, n: usize) -> Result<(Vec<&'a str>, usize)> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(n);
    for _ in 0..n {
        let t = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::format(path, "truncated header"))?;
        tokens.push(t);
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "truncated header"));
    }
    Ok((tokens, pos + 1))
}

fn parse_dims(path: &Path, w: &str, h: &str) -> Result<(usize, usize)> {
    let w: usize = w
        .parse()
        .map_err(|_| Error::format(path, format!("bad width {w:?}")))?;
    let h: usize = h
        .parse()
        .map_err(|_| Error::format(path, format!("bad height {h:?}")))?;
    if w == 0 || h == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    Ok((w, h))
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (tokens, start) = read_header(&bytes, path, 4)?;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(Error::format(path, format!("bad magic {t:?}"))),
    };
    let (w, h) = parse_dims(path, tokens[1], tokens[2])?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, format!("bad scale {scale}")));
    }
    let little = scale < 0.0;
    let n = w * h * channels;
    let raster = &bytes[start..];
    if raster.len() != n * 4 {
        return Err(Error::format(
            path,
            format!("expected {} raster bytes, found {}", n * 4, raster.len()),
        ));
    }
    let mut data = vec![0.0; n];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let file_row = i / (w * channels);
        let rest = i % (w * channels);
        data[(h - 1 - file_row) * w * channels + rest] = v as f64;
    }
    Image::from_data(h, w, channels, data)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&m| if m { 255u8 } else { 0 }));
    fs::write(path, out)?;
    Ok(())
}

/// Reads a binary 8-bit PGM; any nonzero pixel is inside the mask.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (tokens, start) = read_header(&bytes, path, 4)?;
    if tokens[0] != "P5" {
        return Err(Error::format(path, format!("bad magic {:?}", tokens[0])));
    }
    let (w, h) = parse_dims(path, tokens[1], tokens[2])?;
    if tokens[3] != "255" {
        return Err(Error::format(path, format!("unsupported maxval {}", tokens[3])));
    }
    let raster = &bytes[start..];
    if raster.len() != w * h {
        return Err(Error::format(
            path,
            format!("expected {} raster bytes, found {}", w * h, raster.len()),
        ));
    }
    Mask::new(h, w, raster.iter().map(|&b| b != 0).collect())
}

pub fn write_normals(path: &Path, normals: &NormalMap) -> Result<()> {
    let data = normals.data().iter().flatten().copied().collect();
    write_pfm(path, &Image::from_data(normals.height(), normals.width(), 3, data)?)
}

pub fn read_normals(path: &Path) -> Result<NormalMap> {
    let img = read_pfm(path)?;
    if img.channels() != 3 {
        return Err(Error::format(path, "normal map must have 3 channels"));
    }
    let data = img.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    NormalMap::from_data(img.height(), img.width(), data)
}

pub fn format_lights(lights: &[UnitVector3]) -> String {
    let mut s = String::new();
    for l in lights {
        s.push_str(&format!("{} {} {}\n", l.x(), l.y(), l.z()));
    }
    s
}

/// Parses "lx ly lz" lines. Blank lines and `#` comments are skipped.
/// Vectors off unit length by more than 1e-9 but less than 1e-3 are
/// renormalized; the rest are kept bit for bit.
pub fn parse_lights(text: &str, path: &Path) -> Result<Vec<UnitVector3>> {
    let mut lights = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        if vals.len() != 3 {
            return Err(Error::format(
                path,
                format!("line {}: expected 3 components, found {}", n + 1, vals.len()),
            ));
        }
        let norm = (vals[0] * vals[0] + vals[1] * vals[1] + vals[2] * vals[2]).sqrt();
        if !((norm - 1.0).abs() <= UNIT_SLACK) {
            return Err(Error::format(path, format!("line {}: not a unit vector", n + 1)));
        }
        let l = UnitVector3::new(vals[0], vals[1], vals[2])
            .or_else(|_| UnitVector3::normalize(vals[0], vals[1], vals[2]))
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        lights.push(l);
    }
    Ok(lights)
}

pub fn read_lights(path: &Path) -> Result<Vec<UnitVector3>> {
    let text = fs::read_to_string(path).map_err(|e| Error::format(path, e.to_string()))?;
    parse_lights(&text, path)
}

pub fn write_lights(path: &Path, lights: &[UnitVector3]) -> Result<()> {
    fs::write(path, format_lights(lights))?;
    Ok(())
}

fn image_name(index: usize) -> String {
    format!("{index:03}.pfm")
}

pub fn save_dataset(dir: &Path, sample: &RenderedSample) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    for (i, img) in sample.images.iter().enumerate() {
        write_pfm(&images.join(image_name(i)), img)?;
    }
    write_lights(&dir.join("lights.txt"), &sample.lights)?;
    write_normals(&dir.join("normals_gt.pfm"), &sample.normals_gt)?;
    write_mask(&dir.join("mask.pgm"), &sample.mask)?;
    Ok(())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let images = dir.join("images");
    let entries = fs::read_dir(&images).map_err(|e| Error::format(&images, e.to_string()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "pfm") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_dataset(dir: &Path) -> Result<RenderedSample> {
    let mask_path = dir.join("mask.pgm");
    let mask = read_mask(&mask_path)?;
    let lights_path = dir.join("lights.txt");
    let lights = read_lights(&lights_path)?;
    let files = image_files(dir)?;
    if files.len() != lights.len() {
        return Err(Error::format(
            &lights_path,
            format!("{} lights for {} images", lights.len(), files.len()),
        ));
    }
    let mut images = Vec::with_capacity(files.len());
    for f in &files {
        let img = read_pfm(f)?;
        if img.height() != mask.height() || img.width() != mask.width() {
            return Err(Error::format(f, "image size differs from mask.pgm"));
        }
        images.push(img);
    }
    let normals_path = dir.join("normals_gt.pfm");
    let normals = read_normals(&normals_path)?;
    if normals.height() != mask.height() || normals.width() != mask.width() {
        return Err(Error::format(&normals_path, "normal map size differs from mask.pgm"));
    }
    RenderedSample::new(images, lights, normals, mask)
}

/// Loads either a single dataset directory or every dataset found in its
/// immediate subdirectories (sorted by name).
pub fn load_datasets(dir: &Path) -> Result<Vec<RenderedSample>> {
    if dir.join("lights.txt").exists() {
        return Ok(vec![load_dataset(dir)?]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::format(dir, e.to_string()))?;
    let mut subdirs = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() && path.join("lights.txt").exists() {
            subdirs.push(path);
        }
    }
    if subdirs.is_empty() {
        return Err(Error::format(dir, "no lights.txt here or in any subdirectory"));
    }
    subdirs.sort();
    subdirs.iter().map(|d| load_dataset(d)).collect()
}
