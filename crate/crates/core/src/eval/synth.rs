//! Synthetic orthoimages, elevation maps and pseudo-year appearance changes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geodata::{ElevationMap, GeoTransform, MapLayer, MapStack, Orthoimage};
use crate::raster::Image8;
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub origin_easting: f64,
    pub origin_northing: f64,
    /// Orthoimage side length in pixels.
    pub size_px: usize,
    /// Orthoimage ground resolution in meters per pixel.
    pub pixel_size: f64,
    /// Elevation grid resolution in meters per cell.
    pub elevation_cell: f64,
    pub base_elevation: f64,
    /// Peak-to-peak scale of the hills in meters.
    pub relief: f64,
    pub layers: usize,
    /// Appearance change between pseudo-years, 0 = identical layers.
    pub augmentation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            origin_easting: 500_000.0,
            origin_northing: 5_200_000.0,
            size_px: 768,
            pixel_size: 0.5,
            elevation_cell: 1.0,
            base_elevation: 450.0,
            relief: 20.0,
            layers: 1,
            augmentation: 0.6,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub strength: f64,
    pub seed: u64,
}

/// Smooth value noise in `[-1, 1]` on a lattice of `cell` pixels.
fn value_noise(seed: u64, name: &str, width: usize, height: usize, cell: f64) -> Vec<f32> {
    let mut rng = substream(seed, name);
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = (y as f64 + 0.5) / cell;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()) as f32);
        for x in 0..width {
            let fx = (x as f64 + 0.5) / cell;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()) as f32);
            let l = |i: usize, j: usize| lattice[j * gw + i];
            let top = l(ix, iy) + tx * (l(ix + 1, iy) - l(ix, iy));
            let bot = l(ix, iy + 1) + tx * (l(ix + 1, iy + 1) - l(ix, iy + 1));
            out.push(top + ty * (bot - top));
        }
    }
    out
}

/// Sum of value-noise octaves `(cell, amplitude)`.
fn octaves(seed: u64, name: &str, width: usize, height: usize, bands: &[(f64, f32)]) -> Vec<f32> {
    let mut acc = vec![0.0f32; width * height];
    for (i, (cell, amp)) in bands.iter().enumerate() {
        let n = value_noise(seed, &format!("{name}/{i}"), width, height, *cell);
        for (a, v) in acc.iter_mut().zip(n) {
            *a += amp * v;
        }
    }
    acc
}

/// Field-parcel texture: jittered Voronoi parcels with distinct colors,
/// multi-scale detail, and a few straight tracks.
pub fn synth_texture(size: usize, seed: u64) -> Image8 {
    const PARCEL: f64 = 64.0;
    let mut rng = substream(seed, "texture/parcels");
    let g = (size as f64 / PARCEL).ceil() as usize + 1;
    let sites: Vec<((f64, f64), [f32; 3])> = (0..g * g)
        .map(|i| {
            let (cx, cy) = ((i % g) as f64, (i / g) as f64);
            let site = (
                (cx + rng.random_range(0.1..0.9)) * PARCEL,
                (cy + rng.random_range(0.1..0.9)) * PARCEL,
            );
            let base: f32 = rng.random_range(50.0..200.0);
            let tint = [
                base + rng.random_range(-40.0..40.0),
                base + rng.random_range(-30.0..50.0),
                base + rng.random_range(-50.0..20.0),
            ];
            (site, tint)
        })
        .collect();
    let detail = octaves(
        seed,
        "texture/detail",
        size,
        size,
        &[(24.0, 0.35), (10.0, 0.3), (4.0, 0.25), (1.6, 0.2)],
    );
    let shade = octaves(seed, "texture/shade", size, size, &[(200.0, 0.4), (90.0, 0.25)]);

    let tracks: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            let a = rng.random_range(0.0..std::f64::consts::PI);
            let (s, c) = a.sin_cos();
            let offset = rng.random_range(0.0..size as f64);
            (c, s, offset * (c.abs() + s.abs()))
        })
        .collect();

    let mut img = Image8::new(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (gx, gy) = ((px / PARCEL) as usize, (py / PARCEL) as usize);
            let mut best = (f64::INFINITY, 0usize);
            for j in gy.saturating_sub(1)..(gy + 2).min(g) {
                for i in gx.saturating_sub(1)..(gx + 2).min(g) {
                    let ((sx, sy), _) = sites[j * g + i];
                    let d = (sx - px).powi(2) + (sy - py).powi(2);
                    if d < best.0 {
                        best = (d, j * g + i);
                    }
                }
            }
            let idx = y * size + x;
            let k = (1.0 + detail[idx]) * (1.0 + shade[idx]);
            let mut rgb = sites[best.1].1.map(|c| c * k);
            for (nx, ny, off) in &tracks {
                if (nx * px + ny * py - off).abs() < 1.5 {
                    rgb = [215.0, 205.0, 185.0];
                }
            }
            let o = &mut img.data[idx * 3..idx * 3 + 3];
            for (o, v) in o.iter_mut().zip(rgb) {
                *o = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    img
}

/// Smooth hills sampled on a `cells x cells` grid.
pub fn synth_elevation(cells: usize, cell_size: f64, base: f64, relief: f64, seed: u64) -> Vec<f32> {
    let scale = |m: f64| m / cell_size;
    let hills = octaves(
        seed,
        "elevation",
        cells,
        cells,
        &[(scale(160.0), 0.6), (scale(80.0), 0.3), (scale(40.0), 0.1)],
    );
    hills.iter().map(|h| (base + 0.5 * relief * *h as f64) as f32).collect()
}

/// Pseudo-year appearance change: regional brightness and contrast,
/// contrast reversal over changed regions, a channel remix, and opaque
/// patches.
pub fn augment(image: &Image8, config: &AugmentConfig) -> Image8 {
    let s = config.strength as f32;
    let (w, h) = (image.width, image.height);
    let seed = config.seed;
    let gain = value_noise(seed, "augment/gain", w, h, 90.0);
    let bias = value_noise(seed, "augment/bias", w, h, 130.0);
    let mut rng = substream(seed, "augment/remix");
    let mut remix = [[0.0f32; 3]; 3];
    for (i, row) in remix.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let off = rng.random_range(-0.3f32..0.3);
            *v = if i == j { 1.0 } else { 0.0 } + s * off;
        }
    }

    let changed = value_noise(seed, "augment/changed", w, h, 70.0);
    let threshold = 1.0 - 0.8 * s;

    let mut out = Image8::new(w, h, image.channels);
    let ch = image.channels;
    for idx in 0..w * h {
        let src = &image.data[idx * ch..(idx + 1) * ch];
        let g = 1.0 + 0.45 * s * gain[idx];
        let g = if changed[idx] > threshold { -g } else { g };
        let b = 45.0 * s * bias[idx];
        for c in 0..ch {
            let mixed = if ch == 3 {
                (0..3).map(|k| remix[c][k] * src[k] as f32).sum::<f32>()
            } else {
                src[0] as f32
            };
            let v = 128.0 + g * (mixed - 128.0) + b;
            out.data[idx * ch + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }

    let mut rng = substream(seed, "augment/patches");
    let patches = (40.0 * config.strength).round() as usize;
    for _ in 0..patches {
        let pw = rng.random_range(8..48usize).min(w);
        let ph = rng.random_range(8..48usize).min(h);
        let x0 = rng.random_range(0..=w - pw);
        let y0 = rng.random_range(0..=h - ph);
        let color: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                let idx = y * w + x;
                for c in 0..ch {
                    out.data[idx * ch + c] = color[c];
                }
            }
        }
    }
    out
}

/// Square synthetic map stack. Layer 0 is the base texture; each further
/// layer is an augmented pseudo-year. All layers share the elevation model.
pub fn synth_map(config: &SynthConfig) -> Result<MapStack> {
    if config.layers == 0 {
        return Err(Error::InvalidArgument("a synthetic map needs at least one layer".into()));
    }
    if config.size_px < 8 {
        return Err(Error::InvalidArgument("synthetic map must be at least 8 pixels wide".into()));
    }
    let geo = GeoTransform::new(
        config.origin_easting,
        config.origin_northing,
        config.pixel_size,
        config.pixel_size,
    )?;
    let extent_m = config.size_px as f64 * config.pixel_size;
    let cells = (extent_m / config.elevation_cell).round() as usize;
    if cells < 2 || (cells as f64 * config.elevation_cell - extent_m).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "elevation cell {} m must tile the {extent_m} m map",
            config.elevation_cell
        )));
    }
    let egeo = GeoTransform::new(
        config.origin_easting,
        config.origin_northing,
        config.elevation_cell,
        config.elevation_cell,
    )?;
    let heights = synth_elevation(cells, config.elevation_cell, config.base_elevation, config.relief, config.seed);
    let elevation = ElevationMap::new(cells, cells, heights, -9999.0, egeo)?;
    let base = synth_texture(config.size_px, config.seed);

    let layers = (0..config.layers)
        .map(|i| {
            let label = format!("{}", 2000 + 4 * i);
            let image = if i == 0 {
                base.clone()
            } else {
                augment(
                    &base,
                    &AugmentConfig {
                        strength: config.augmentation,
                        seed: config.seed.wrapping_mul(31).wrapping_add(i as u64),
                    },
                )
            };
            MapLayer {
                label: label.clone(),
                ortho: Orthoimage { image, geo, label },
                elevation: elevation.clone(),
            }
        })
        .collect();
    MapStack::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_textured() {
        let a = synth_texture(64, 3);
        assert_eq!(a, synth_texture(64, 3));
        assert_ne!(a, synth_texture(64, 4));
        let mean = a.data.iter().map(|v| *v as f64).sum::<f64>() / a.data.len() as f64;
        let var = a.data.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / a.data.len() as f64;
        assert!(var.sqrt() > 15.0);
    }

    #[test]
    fn zero_strength_augmentation_is_identity() {
        let a = synth_texture(32, 1);
        assert_eq!(augment(&a, &AugmentConfig { strength: 0.0, seed: 9 }), a);
        assert_ne!(augment(&a, &AugmentConfig { strength: 0.8, seed: 9 }), a);
    }

    #[test]
    fn map_stack_layout() {
        let cfg = SynthConfig {
            size_px: 64,
            layers: 3,
            ..SynthConfig::default()
        };
        let stack = synth_map(&cfg).unwrap();
        assert_eq!(stack.layers().len(), 3);
        assert_eq!(stack.most_recent().label, "2008");
        let l = &stack.layers()[0];
        assert_eq!(l.elevation.width, 32);
        assert_eq!(l.ortho.extent(), l.elevation.extent());
    }
}
