//! Fixed-point edge-function rasterizer with a top-left fill rule.
//!
//! Screen coordinates carry [`SUBPIXEL_BITS`] fractional bits. Geometry is
//! clipped to the near plane and to a guard band of ±[`GUARD_BAND`] pixels,
//! which bounds every edge-function value well inside `i64`.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::raster::{DepthMap, Image8};
use crate::se3::PoseSE3;

use super::mesh::TerrainMesh;

pub const SUBPIXEL_BITS: u32 = 16;
pub const GUARD_BAND: f64 = 8192.0;
pub const NEAR_PLANE: f64 = 0.01;

/// Rows handled as one unit of work; fixed so output never depends on the
/// number of workers.
const BAND_ROWS: usize = 16;

const ONE: i64 = 1 << SUBPIXEL_BITS;

#[derive(Clone, Copy, Debug)]
struct ClipVertex {
    p: Vector3<f64>,
    tex: [f64; 2],
}

impl ClipVertex {
    fn lerp(&self, other: &ClipVertex, t: f64) -> ClipVertex {
        ClipVertex {
            p: self.p + (other.p - self.p) * t,
            tex: [
                self.tex[0] + (other.tex[0] - self.tex[0]) * t,
                self.tex[1] + (other.tex[1] - self.tex[1]) * t,
            ],
        }
    }
}

/// Screen-space triangle ready for scan conversion.
#[derive(Clone, Copy, Debug)]
struct TriSetup {
    x: [i64; 3],
    y: [i64; 3],
    inv_z: [f64; 3],
    s_over_z: [f64; 3],
    t_over_z: [f64; 3],
    area: i64,
    min_x: usize,
    max_x: usize,
    min_y: usize,
    max_y: usize,
}

struct Frustum {
    planes: [[f64; 4]; 5],
}

impl Frustum {
    fn new(cam: &CameraModel) -> Self {
        let g = GUARD_BAND;
        Frustum {
            planes: [
                [0.0, 0.0, 1.0, -NEAR_PLANE],
                [cam.fx, 0.0, cam.cx + g, 0.0],
                [-cam.fx, 0.0, g - cam.cx, 0.0],
                [0.0, cam.fy, cam.cy + g, 0.0],
                [0.0, -cam.fy, g - cam.cy, 0.0],
            ],
        }
    }

    #[inline]
    fn dist(plane: &[f64; 4], p: &Vector3<f64>) -> f64 {
        plane[0] * p.x + plane[1] * p.y + plane[2] * p.z + plane[3]
    }

    fn inside(&self, p: &Vector3<f64>) -> bool {
        self.planes.iter().all(|pl| Self::dist(pl, p) >= 0.0)
    }

    /// Sutherland-Hodgman against every plane.
    fn clip(&self, tri: [ClipVertex; 3]) -> Vec<ClipVertex> {
        let mut poly: Vec<ClipVertex> = tri.to_vec();
        for plane in &self.planes {
            if poly.is_empty() {
                break;
            }
            let mut out = Vec::with_capacity(poly.len() + 1);
            for i in 0..poly.len() {
                let a = &poly[i];
                let b = &poly[(i + 1) % poly.len()];
                let da = Self::dist(plane, &a.p);
                let db = Self::dist(plane, &b.p);
                if da >= 0.0 {
                    out.push(*a);
                }
                if (da >= 0.0) != (db >= 0.0) {
                    out.push(a.lerp(b, da / (da - db)));
                }
            }
            poly = out;
        }
        poly
    }
}

#[inline]
fn to_fixed(v: f64) -> i64 {
    (v * ONE as f64).round() as i64
}

#[inline]
fn orient(ax: i64, ay: i64, bx: i64, by: i64, px: i64, py: i64) -> i64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

fn setup(verts: [ClipVertex; 3], cam: &CameraModel) -> Option<TriSetup> {
    let mut x = [0i64; 3];
    let mut y = [0i64; 3];
    let mut inv_z = [0.0; 3];
    let mut s_over_z = [0.0; 3];
    let mut t_over_z = [0.0; 3];
    for (i, v) in verts.iter().enumerate() {
        let iz = 1.0 / v.p.z;
        x[i] = to_fixed(cam.fx * v.p.x * iz + cam.cx);
        y[i] = to_fixed(cam.fy * v.p.y * iz + cam.cy);
        inv_z[i] = iz;
        s_over_z[i] = v.tex[0] * iz;
        t_over_z[i] = v.tex[1] * iz;
    }
    let mut area = orient(x[0], y[0], x[1], y[1], x[2], y[2]);
    if area == 0 {
        return None;
    }
    if area < 0 {
        x.swap(1, 2);
        y.swap(1, 2);
        inv_z.swap(1, 2);
        s_over_z.swap(1, 2);
        t_over_z.swap(1, 2);
        area = -area;
    }
    // Pixel centers sit on integer coordinates.
    let lo_x = (*x.iter().min().unwrap() + ONE - 1).div_euclid(ONE).max(0);
    let hi_x = x.iter().max().unwrap().div_euclid(ONE).min(cam.width as i64 - 1);
    let lo_y = (*y.iter().min().unwrap() + ONE - 1).div_euclid(ONE).max(0);
    let hi_y = y.iter().max().unwrap().div_euclid(ONE).min(cam.height as i64 - 1);
    if lo_x > hi_x || lo_y > hi_y {
        return None;
    }
    Some(TriSetup {
        x,
        y,
        inv_z,
        s_over_z,
        t_over_z,
        area,
        min_x: lo_x as usize,
        max_x: hi_x as usize,
        min_y: lo_y as usize,
        max_y: hi_y as usize,
    })
}

/// Screen-space setup for every visible piece of every triangle, in mesh order.
fn setup_triangles(mesh: &TerrainMesh, pose: &PoseSE3, cam: &CameraModel) -> Vec<TriSetup> {
    let world_to_cam = pose.inverse();
    let frustum = Frustum::new(cam);
    let cam_verts: Vec<Vector3<f64>> = mesh
        .vertices
        .par_iter()
        .map(|v| world_to_cam.transform_point(&Vector3::new(v[0], v[1], v[2])))
        .collect();
    let inside: Vec<bool> = cam_verts.par_iter().map(|p| frustum.inside(p)).collect();
    let (w, h) = (cam.width as f64, cam.height as f64);

    mesh.triangles
        .par_iter()
        .flat_map_iter(|tri| {
            let idx = tri.map(|i| i as usize);
            let cv = idx.map(|i| ClipVertex {
                p: cam_verts[i],
                tex: [mesh.tex_coords[i][0] as f64, mesh.tex_coords[i][1] as f64],
            });
            let mut out: Vec<TriSetup> = Vec::new();
            if idx.iter().all(|&i| inside[i]) {
                // Skip triangles whose bounding box misses the image.
                let mut lo = (f64::INFINITY, f64::INFINITY);
                let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for v in &cv {
                    let u = cam.fx * v.p.x / v.p.z + cam.cx;
                    let s = cam.fy * v.p.y / v.p.z + cam.cy;
                    lo = (lo.0.min(u), lo.1.min(s));
                    hi = (hi.0.max(u), hi.1.max(s));
                }
                if hi.0 < 0.0 || hi.1 < 0.0 || lo.0 > w - 1.0 || lo.1 > h - 1.0 {
                    return out.into_iter();
                }
                out.extend(setup(cv, cam));
            } else if cv.iter().any(|v| v.p.z > NEAR_PLANE) {
                let poly = frustum.clip(cv);
                for i in 1..poly.len().saturating_sub(1) {
                    out.extend(setup([poly[0], poly[i], poly[i + 1]], cam));
                }
            }
            out.into_iter()
        })
        .collect()
}

/// Renders texture and z-depth; returns `(image, depth)`.
pub(crate) fn rasterize(mesh: &TerrainMesh, pose: &PoseSE3, cam: &CameraModel) -> (Image8, DepthMap) {
    let (width, height) = (cam.width, cam.height);
    let channels = mesh.texture.channels;
    let tris = setup_triangles(mesh, pose, cam);

    let n_bands = height.div_ceil(BAND_ROWS);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); n_bands];
    for (i, t) in tris.iter().enumerate() {
        for band in t.min_y / BAND_ROWS..=t.max_y / BAND_ROWS {
            bins[band].push(i as u32);
        }
    }

    let mut color = vec![0u8; width * height * channels];
    let mut depth = vec![f64::INFINITY; width * height];
    let tex = &mesh.texture;

    color
        .par_chunks_mut(BAND_ROWS * width * channels)
        .zip(depth.par_chunks_mut(BAND_ROWS * width))
        .zip(bins.par_iter())
        .enumerate()
        .for_each(|(band, ((color, zbuf), bin))| {
            let y_start = band * BAND_ROWS;
            let y_end = (y_start + BAND_ROWS).min(height);
            for &ti in bin {
                let t = &tris[ti as usize];
                draw(t, y_start, y_end, width, channels, tex, color, zbuf);
            }
        });

    let data = depth.iter().map(|&d| d as f32).collect();
    (
        Image8 {
            width,
            height,
            channels,
            data: color,
        },
        DepthMap { width, height, data },
    )
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn draw(
    t: &TriSetup,
    y_start: usize,
    y_end: usize,
    width: usize,
    channels: usize,
    tex: &Image8,
    color: &mut [u8],
    zbuf: &mut [f64],
) {
    let y0 = t.min_y.max(y_start);
    let y1 = (t.max_y + 1).min(y_end);
    if y0 >= y1 {
        return;
    }
    // Edge k is opposite vertex k and runs from vertex k+1 to vertex k+2.
    let mut a = [0i64; 3];
    let mut b = [0i64; 3];
    let mut bias = [0i64; 3];
    for k in 0..3 {
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        let dx = t.x[j] - t.x[i];
        let dy = t.y[j] - t.y[i];
        a[k] = -dy;
        b[k] = dx;
        let top = dy == 0 && dx > 0;
        let left = dy < 0;
        bias[k] = if top || left { 0 } else { -1 };
    }
    let inv_area = 1.0 / t.area as f64;
    let px0 = t.min_x as i64 * ONE;
    for y in y0..y1 {
        let py = y as i64 * ONE;
        let mut w = [0i64; 3];
        for k in 0..3 {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            w[k] = orient(t.x[i], t.y[i], t.x[j], t.y[j], px0, py);
        }
        let row = (y - y_start) * width;
        for x in t.min_x..=t.max_x {
            if (w[0] + bias[0]) | (w[1] + bias[1]) | (w[2] + bias[2]) >= 0 {
                let b0 = w[0] as f64 * inv_area;
                let b1 = w[1] as f64 * inv_area;
                let b2 = w[2] as f64 * inv_area;
                let iz = b0 * t.inv_z[0] + b1 * t.inv_z[1] + b2 * t.inv_z[2];
                let z = 1.0 / iz;
                let idx = row + x;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    let s = (b0 * t.s_over_z[0] + b1 * t.s_over_z[1] + b2 * t.s_over_z[2]) * z;
                    let r = (b0 * t.t_over_z[0] + b1 * t.t_over_z[1] + b2 * t.t_over_z[2]) * z;
                    let tc = (s.round().max(0.0) as usize).min(tex.width - 1);
                    let tr = (r.round().max(0.0) as usize).min(tex.height - 1);
                    let src = (tr * tex.width + tc) * channels;
                    color[idx * channels..(idx + 1) * channels]
                        .copy_from_slice(&tex.data[src..src + channels]);
                }
            }
            for k in 0..3 {
                w[k] += a[k] * ONE;
            }
        }
    }
}
