//! Color normalization, image pyramids and the hand-crafted feature encoder.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{DepthMap, FloatRaster, Image8};

pub const PYRAMID_LEVELS: usize = 4;

/// Multi-channel feature rasters, index 0 = finest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<FloatRaster>,
}

impl FeaturePyramid {
    pub fn channels(&self) -> usize {
        self.levels.first().map_or(0, |l| l.channels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_pyramid_file(path, FEAT_MAGIC, &self.levels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(FeaturePyramid {
            levels: load_pyramid_file(path, FEAT_MAGIC)?,
        })
    }

    /// Checks level count and that level `k` is `floor(w/2^k) x floor(h/2^k)`.
    pub fn check_dimensions(&self, width: usize, height: usize) -> Result<()> {
        check_levels(&self.levels, width, height)
    }
}

/// Reference depth per pyramid level; `+inf` marks invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthPyramid {
    pub levels: Vec<DepthMap>,
}

pub(crate) const FEAT_MAGIC: &[u8; 4] = b"FEAT";
pub(crate) const WGHT_MAGIC: &[u8; 4] = b"WGHT";

pub(crate) fn check_levels(levels: &[FloatRaster], width: usize, height: usize) -> Result<()> {
    if levels.len() != PYRAMID_LEVELS {
        return Err(Error::Dimension(format!(
            "expected {PYRAMID_LEVELS} pyramid levels, found {}",
            levels.len()
        )));
    }
    for (k, l) in levels.iter().enumerate() {
        if l.width != width >> k || l.height != height >> k {
            return Err(Error::Dimension(format!(
                "level {k} is {}x{}, expected {}x{}",
                l.width,
                l.height,
                width >> k,
                height >> k
            )));
        }
        if l.channels != levels[0].channels {
            return Err(Error::Dimension(format!("level {k} channel count differs from level 0")));
        }
    }
    Ok(())
}

/// Header: magic, u32 level count, then per level u32 width, height,
/// channels followed by that level's interleaved little-endian f32 samples.
pub(crate) fn save_pyramid_file(path: &Path, magic: &[u8; 4], levels: &[FloatRaster]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(levels.len() as u32).to_le_bytes());
    for l in levels {
        for v in [l.width, l.height, l.channels] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for s in &l.data {
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_pyramid_file(path: &Path, magic: &[u8; 4]) -> Result<Vec<FloatRaster>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let next_u32 = |pos: &mut usize| -> Result<usize> {
        let s = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| Error::format(path, "truncated header"))?;
        *pos += 4;
        Ok(u32::from_le_bytes(s.try_into().unwrap()) as usize)
    };
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!("missing {} header", String::from_utf8_lossy(magic)),
        ));
    }
    pos += 4;
    let n = next_u32(&mut pos)?;
    let mut levels = Vec::with_capacity(n);
    for _ in 0..n {
        let width = next_u32(&mut pos)?;
        let height = next_u32(&mut pos)?;
        let channels = next_u32(&mut pos)?;
        let count = width * height * channels;
        let body = bytes
            .get(pos..pos + count * 4)
            .ok_or_else(|| Error::format(path, "truncated raster data"))?;
        pos += count * 4;
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        levels.push(FloatRaster {
            width,
            height,
            channels,
            data,
        });
    }
    if pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last level"));
    }
    Ok(levels)
}

/// Luminance normalized to zero mean and unit standard deviation over all
/// pixels.
pub fn color_normalize(image: &Image8) -> FloatRaster {
    color_normalize_masked(image, None)
}

/// Like [`color_normalize`] but statistics use only pixels where `mask` is
/// true; masked-out pixels are set to 0.
pub fn color_normalize_masked(image: &Image8, mask: Option<&[bool]>) -> FloatRaster {
    let (w, h) = (image.width, image.height);
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let luma: Vec<f64> = (0..w * h).map(|i| image.luma(i % w, i / w)).collect();
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, l) in luma.iter().enumerate() {
        if valid(i) {
            sum += l;
            n += 1;
        }
    }
    let mut out = FloatRaster::new(w, h, 1);
    if n == 0 {
        return out;
    }
    let mean = sum / n as f64;
    let var = luma
        .iter()
        .enumerate()
        .filter(|(i, _)| valid(*i))
        .map(|(_, l)| (l - mean) * (l - mean))
        .sum::<f64>()
        / n as f64;
    let sigma = var.sqrt();
    if sigma < 1e-12 {
        return out;
    }
    for (i, (o, l)) in out.data.iter_mut().zip(&luma).enumerate() {
        if valid(i) {
            *o = ((l - mean) / sigma) as f32;
        }
    }
    out
}

fn check_pyramid_input(width: usize, height: usize, levels: usize) -> Result<()> {
    let need = 1usize << (levels.max(1) - 1);
    if levels == 0 || width < need || height < need {
        return Err(Error::Dimension(format!(
            "{width}x{height} raster is too small for a {levels}-level pyramid"
        )));
    }
    Ok(())
}

/// 2x2 block-average pyramid; level `k` is `floor(w/2^k) x floor(h/2^k)`.
pub fn build_pyramid(raster: &FloatRaster, levels: usize) -> Result<Vec<FloatRaster>> {
    check_pyramid_input(raster.width, raster.height, levels)?;
    let mut out = vec![raster.clone()];
    for _ in 1..levels {
        let src = out.last().unwrap();
        let (w, h, c) = (src.width / 2, src.height / 2, src.channels);
        let mut dst = FloatRaster::new(w, h, c);
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    let s = src.at(2 * x, 2 * y, k)
                        + src.at(2 * x + 1, 2 * y, k)
                        + src.at(2 * x, 2 * y + 1, k)
                        + src.at(2 * x + 1, 2 * y + 1, k);
                    dst.data[(y * w + x) * c + k] = 0.25 * s;
                }
            }
        }
        out.push(dst);
    }
    Ok(out)
}

/// Depth pyramid averaging only the valid pixels of each 2x2 block.
pub fn build_depth_pyramid(depth: &DepthMap, levels: usize) -> Result<DepthPyramid> {
    check_pyramid_input(depth.width, depth.height, levels)?;
    let mut out = vec![depth.clone()];
    for _ in 1..levels {
        let src = out.last().unwrap();
        let (w, h) = (src.width / 2, src.height / 2);
        let mut dst = DepthMap::new_invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                let (mut sum, mut n) = (0.0f64, 0);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    if src.is_valid(2 * x + dx, 2 * y + dy) {
                        sum += src.get(2 * x + dx, 2 * y + dy) as f64;
                        n += 1;
                    }
                }
                if n > 0 {
                    dst.data[y * w + x] = (sum / n as f64) as f32;
                }
            }
        }
        out.push(dst);
    }
    Ok(DepthPyramid { levels: out })
}

/// Hand-crafted 3-channel encoder: 3x3 binomial smoothing, then central
/// x and y differences of the smoothed intensity, per pyramid level.
pub fn encode_features(image: &FloatRaster) -> Result<FeaturePyramid> {
    if image.channels != 1 {
        return Err(Error::Dimension("feature encoder expects a single-channel raster".into()));
    }
    let pyramid = build_pyramid(image, PYRAMID_LEVELS)?;
    let levels = pyramid.iter().map(encode_level).collect();
    Ok(FeaturePyramid { levels })
}

fn encode_level(src: &FloatRaster) -> FloatRaster {
    let (w, h) = (src.width, src.height);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let px = |x: isize, y: isize| src.data[clamp(y, h) * w + clamp(x, w)];
    let mut smooth = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let row = |yy: isize| px(x - 1, yy) + 2.0 * px(x, yy) + px(x + 1, yy);
            smooth[y as usize * w + x as usize] = (row(y - 1) + 2.0 * row(y) + row(y + 1)) / 16.0;
        }
    }
    let s = |x: isize, y: isize| smooth[clamp(y, h) * w + clamp(x, w)];
    let mut out = FloatRaster::new(w, h, 3);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = (y as usize * w + x as usize) * 3;
            out.data[i] = s(x, y);
            out.data[i + 1] = 0.5 * (s(x + 1, y) - s(x - 1, y));
            out.data[i + 2] = 0.5 * (s(x, y + 1) - s(x, y - 1));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_constant_is_zero() {
        let mut img = Image8::new(8, 8, 3);
        img.data.fill(90);
        assert!(color_normalize(&img).data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalize_two_values() {
        let data = (0..64).map(|i| if i % 2 == 0 { 0 } else { 255 }).collect();
        let img = Image8::from_raw(8, 8, 1, data).unwrap();
        let n = color_normalize(&img);
        assert!(n.data.iter().all(|v| (v.abs() - 1.0).abs() < 1e-6));
    }

    #[test]
    fn normalize_statistics() {
        let data = (0..30 * 20 * 3).map(|i| ((i * 37 + i / 7) % 256) as u8).collect();
        let img = Image8::from_raw(30, 20, 3, data).unwrap();
        let n = color_normalize(&img);
        let m: f64 = n.data.iter().map(|v| *v as f64).sum::<f64>() / n.data.len() as f64;
        let s = (n.data.iter().map(|v| (*v as f64 - m).powi(2)).sum::<f64>() / n.data.len() as f64).sqrt();
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6, "{m} {s}");
    }

    #[test]
    fn pyramid_sizes_and_block_means() {
        let r = FloatRaster::new(752, 480, 1);
        let p = build_pyramid(&r, 4).unwrap();
        let sizes: Vec<_> = p.iter().map(|l| (l.width, l.height)).collect();
        assert_eq!(sizes, vec![(752, 480), (376, 240), (188, 120), (94, 60)]);

        let r = FloatRaster::from_fn(4, 4, |x, y| (x + 4 * y) as f32);
        let p = build_pyramid(&r, 2).unwrap();
        assert_eq!(p[1].data, vec![2.5, 4.5, 10.5, 12.5]);
        assert!(build_pyramid(&FloatRaster::new(7, 64, 1), 4).is_err());
    }

    #[test]
    fn depth_pyramid_ignores_invalid() {
        let mut d = DepthMap::new_invalid(4, 2);
        d.data[0] = 2.0;
        d.data[1] = 4.0;
        let p = build_depth_pyramid(&d, 2).unwrap();
        assert_eq!(p.levels[1].data[0], 3.0);
        assert!(p.levels[1].data[1].is_infinite());
    }

    #[test]
    fn ramp_gradients() {
        let r = FloatRaster::from_fn(64, 64, |x, _| x as f32);
        let f = encode_features(&r).unwrap();
        let l0 = &f.levels[0];
        for y in 2..62 {
            for x in 2..62 {
                assert!((l0.at(x, y, 0) - x as f32).abs() < 1e-4);
                assert!((l0.at(x, y, 1) - 1.0).abs() < 1e-5);
                assert!(l0.at(x, y, 2).abs() < 1e-5);
            }
        }
        let c = encode_features(&FloatRaster::new(16, 16, 1)).unwrap();
        assert!(c.levels.iter().all(|l| l.data.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.feat");
        let r = FloatRaster::from_fn(32, 24, |x, y| (x as f32 * 0.37).sin() + y as f32 * 1e-3);
        let f = encode_features(&r).unwrap();
        f.save(&path).unwrap();
        assert_eq!(FeaturePyramid::load(&path).unwrap(), f);
        assert!(f.check_dimensions(32, 24).is_ok());
        assert!(f.check_dimensions(32, 26).is_err());
        std::fs::write(&path, b"WGHT\0\0\0\0").unwrap();
        assert!(FeaturePyramid::load(&path).is_err());
    }
}
