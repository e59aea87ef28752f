//! Plain pixel containers shared by the renderer, aligner and evaluation code.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Row-major 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image8 {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Image8 {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Luminance (0.299, 0.587, 0.114) as f64 in [0, 255].
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f64 {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            p[0] as f64
        } else {
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let reader = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?;
        let img = reader.decode().map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(buf) => Image8::from_raw(w, h, 1, buf.into_raw()),
            image::DynamicImage::ImageRgb8(buf) => Image8::from_raw(w, h, 3, buf.into_raw()),
            other => Err(Error::format(
                path,
                format!("unsupported pixel format {:?}; need 8-bit gray or RGB", other.color()),
            )),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let color = if self.channels == 1 {
            ColorType::L8
        } else {
            ColorType::Rgb8
        };
        image::codecs::png::PngEncoder::new(BufWriter::new(file))
            .write_image(&self.data, self.width as u32, self.height as u32, color.into())
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Row-major float raster with `channels` interleaved samples per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatRaster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        FloatRaster {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        FloatRaster {
            width,
            height,
            channels: 1,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Bilinear sample of every channel at `(u, v)`; the caller guarantees
    /// `0 <= u <= width-1` and `0 <= v <= height-1`.
    #[inline]
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f32]) {
        let x0 = (u.floor() as usize).min(self.width - 2);
        let y0 = (v.floor() as usize).min(self.height - 2);
        let ax = (u - x0 as f64) as f32;
        let ay = (v - y0 as f64) as f32;
        let c = self.channels;
        let i00 = (y0 * self.width + x0) * c;
        let i10 = i00 + c;
        let i01 = i00 + self.width * c;
        let i11 = i01 + c;
        let d = &self.data;
        for k in 0..c {
            let top = d[i00 + k] + ax * (d[i10 + k] - d[i00 + k]);
            let bot = d[i01 + k] + ax * (d[i11 + k] - d[i01 + k]);
            out[k] = top + ay * (bot - top);
        }
    }
}

/// Per-pixel z-depth in meters; `+inf` marks pixels without a surface.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

impl DepthMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![f32::INFINITY; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        let d = self.get(x, y);
        d.is_finite() && d > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| d.is_finite() && **d > 0.0).count()
    }

    /// 16-byte header (`DPTH`, u32 width, u32 height, u32 reserved) then
    /// little-endian f32 samples, row-major.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut header = [0u8; 16];
        header[..4].copy_from_slice(DEPTH_MAGIC);
        header[4..8].copy_from_slice(&(self.width as u32).to_le_bytes());
        header[8..12].copy_from_slice(&(self.height as u32).to_le_bytes());
        let mut body = Vec::with_capacity(self.data.len() * 4);
        for d in &self.data {
            body.extend_from_slice(&d.to_le_bytes());
        }
        w.write_all(&header)
            .and_then(|_| w.write_all(&body))
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
            return Err(Error::format(path, "missing DPTH header"));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != width * height * 4 {
            return Err(Error::format(
                path,
                format!("expected {} depth bytes, found {}", width * height * 4, body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }
}
