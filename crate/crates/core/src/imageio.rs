//! Float RGB images, 8-bit PNG I/O, and single-channel PFM depth maps.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel `c` as a `height × width` plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect()
    }

    pub fn mean_color(&self) -> [f32; 3] {
        let n = (self.width * self.height).max(1) as f64;
        let mut acc = [0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c] as f64;
            }
        }
        acc.map(|a| (a / n) as f32)
    }

    /// Channels-first copy, `[3, height, width]`.
    pub fn to_chw(&self) -> Vec<f32> {
        let hw = self.width * self.height;
        let mut out = vec![0.0; 3 * hw];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = px[c];
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let buf = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    /// Quantize to 8 bits and back, as a PNG round trip would.
    pub fn quantized(&self) -> Self {
        Self::from_rgb8(&self.to_rgb8())
    }
}

/// Write a single-channel little-endian PFM. `values` are row-major with
/// row 0 at the top of the image.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    assert_eq!(values.len(), width * height);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(out, "Pf\n{width} {height}\n-1.0\n").map_err(io)?;
    // PFM stores the bottom row first.
    for row in values.chunks_exact(width).rev() {
        for v in row {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut header = Vec::new();
    let bad = |m: &str| Error::format(path, m.to_string());
    // Magic, dimensions and scale: three whitespace-terminated tokens
    // followed by exactly one newline before the payload.
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        header.clear();
        input
            .read_until(b'\n', &mut header)
            .map_err(|e| Error::io(path, e))?;
        if header.is_empty() {
            return Err(bad("truncated header"));
        }
        let line = String::from_utf8_lossy(&header);
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != "Pf" {
        return Err(bad("only single-channel PFM is supported"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f32 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    let mut payload = vec![0u8; width * height * 4];
    input
        .read_exact(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f32>> = payload
        .chunks_exact(width * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| {
                    let b = [b[0], b[1], b[2], b[3]];
                    if scale < 0.0 {
                        f32::from_le_bytes(b)
                    } else {
                        f32::from_be_bytes(b)
                    }
                })
                .collect()
        })
        .collect();
    rows.reverse();
    Ok((width, height, rows.concat()))
}
