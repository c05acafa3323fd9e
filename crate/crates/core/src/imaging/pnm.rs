//! Binary portable graymap / pixmap I/O.
//!
//! Images are written as 16-bit big-endian P5 (maxval 65535) with `[0, 1]`
//! mapped linearly; masks use `{0, 65535}`; labelings store the label value
//! directly as the gray level. Color overlays are 8-bit P6.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{BinaryMask, Grid, Image, InstanceLabeling};
use crate::error::{Error, Result};

pub const MAXVAL: u16 = 65535;

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }
}

pub fn encode_pgm16(grid: &Grid<u16>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", grid.width(), grid.height(), MAXVAL).into_bytes();
    out.reserve(grid.len() * 2);
    for &v in grid.as_slice() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Grid<u16>> {
    let (magic, w, h, maxval, offset) = parse_header(bytes)?;
    if magic != *b"P5" {
        return Err(Error::format("PGM", "expected P5 magic"));
    }
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    let body = &bytes[offset..];
    if body.len() < need {
        return Err(Error::format(
            "PGM",
            format!("need {need} data bytes, found {}", body.len()),
        ));
    }
    let data = if wide {
        body[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        body[..need].iter().map(|&b| b as u16).collect()
    };
    let grid = Grid::from_vec(w, h, data)?;
    if maxval != MAXVAL as usize {
        // rescale to the 16-bit range
        return Ok(grid.map(|&v| ((v as f64 / maxval as f64) * MAXVAL as f64).round() as u16));
    }
    Ok(grid)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for px in &img.data {
        out.extend_from_slice(px);
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (magic, width, height, maxval, offset) = parse_header(bytes)?;
    if magic != *b"P6" || maxval != 255 {
        return Err(Error::format("PPM", "expected 8-bit P6"));
    }
    let body = &bytes[offset..];
    if body.len() < width * height * 3 {
        return Err(Error::format("PPM", "truncated pixel data"));
    }
    let data = body[..width * height * 3]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(RgbImage { width, height, data })
}

fn parse_header(bytes: &[u8]) -> Result<([u8; 2], usize, usize, usize, usize)> {
    if bytes.len() < 2 {
        return Err(Error::format("PNM", "file too short"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PNM", "bad header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PNM", "bad header number"))?;
    }
    // exactly one whitespace byte before raster data
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format("PNM", "missing separator after header"));
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > MAXVAL as usize {
        return Err(Error::format("PNM", format!("unsupported maxval {maxval}")));
    }
    Ok((magic, w, h, maxval, pos + 1))
}

pub fn image_to_u16(img: &Image) -> Grid<u16> {
    img.grid().map(|&v| (v * MAXVAL as f64).round() as u16)
}

pub fn image_from_u16(grid: &Grid<u16>) -> Image {
    Image::from_clamped(grid.map(|&v| v as f64 / MAXVAL as f64))
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &encode_pgm16(&image_to_u16(img)))
}

pub fn read_image(path: &Path) -> Result<Image> {
    Ok(image_from_u16(&decode_pgm(&fs::read(path)?)?))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_bytes(path, &encode_pgm16(&mask.grid().map(|&b| if b { MAXVAL } else { 0 })))
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let g = decode_pgm(&fs::read(path)?)?;
    BinaryMask::from_vec(g.width(), g.height(), g.as_slice().iter().map(|&v| v != 0).collect())
}

pub fn write_labeling(path: &Path, lab: &InstanceLabeling) -> Result<()> {
    if lab.count() > MAXVAL as usize {
        return Err(Error::format("PGM", "more labels than gray levels"));
    }
    write_bytes(path, &encode_pgm16(&lab.labels().map(|&l| l as u16)))
}

pub fn read_labeling(path: &Path) -> Result<InstanceLabeling> {
    let g = decode_pgm(&fs::read(path)?)?;
    InstanceLabeling::from_labels(g.map(|&v| v as u32))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
