//! Float RGB image buffers with 8-bit PNG and PPM (P6) round trips.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with channel values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set_pixel(x, y, f(x, y));
            }
        }
        img
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Quantizes to 8-bit with round-half-up; clamps out-of-range values.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::format("pixels", "byte count does not match size"));
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format("png", e.to_string()))?;
    writer
        .write_image_data(&img.to_rgb8())
        .map_err(|e| Error::format("png", e.to_string()))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("png", e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("png", e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format("png", "unsupported bit depth"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    match info.color_type {
        png::ColorType::Rgb => Image::from_rgb8(w, h, &buf[..w * h * 3]),
        png::ColorType::Rgba => {
            let rgb: Vec<u8> = buf[..w * h * 4]
                .chunks_exact(4)
                .flat_map(|px| [px[0], px[1], px[2]])
                .collect();
            Image::from_rgb8(w, h, &rgb)
        }
        _ => Err(Error::format("png", "unsupported color type")),
    }
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.to_rgb8())?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if !bytes.starts_with(b"P6") {
        return Err(Error::format("ppm", "expected P6 magic"));
    }
    // header: three whitespace-separated fields after the magic, then one
    // whitespace byte before the payload
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::format("ppm", "bad header"))?;
        *field = text
            .parse()
            .map_err(|_| Error::format("ppm", "bad header field"))?;
    }
    if fields[2] != 255 {
        return Err(Error::format("ppm", "unsupported bit depth (maxval != 255)"));
    }
    pos += 1; // single whitespace after maxval
    let (w, h) = (fields[0], fields[1]);
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(Error::format("ppm", "pixel payload truncated"));
    }
    Image::from_rgb8(w, h, &bytes[pos..pos + need])
}
