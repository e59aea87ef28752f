//! Deterministic software renderer for texture and z-depth images of the
//! terrain seen from an arbitrary camera pose `T^W_C`.

mod mesh;
mod rasterize;

use nalgebra::Vector3;
use rayon::prelude::*;

pub use mesh::{build_mesh, PixelRegion, TerrainMesh};
pub use rasterize::{GUARD_BAND, NEAR_PLANE, SUBPIXEL_BITS};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geodata::{sample_elevation, GeoExtent, MapLayer};
use crate::raster::{DepthMap, Image8};
use crate::se3::PoseSE3;

/// Field-of-view margin of the intermediate pinhole grid used for distorted
/// rendering.
const DISTORTION_MARGIN: f64 = 0.10;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image8,
    /// z-depth in meters, `+inf` where no surface was hit.
    pub depth: DepthMap,
    pub mask: Vec<bool>,
}

impl RenderOutput {
    fn from_parts(image: Image8, depth: DepthMap) -> Self {
        let mask = depth.data.iter().map(|d| d.is_finite()).collect();
        RenderOutput { image, depth, mask }
    }

    pub fn valid_fraction(&self) -> f64 {
        self.mask.iter().filter(|m| **m).count() as f64 / self.mask.len().max(1) as f64
    }
}

/// Renders through the zero-distortion pinhole of `cam`; `pose` maps camera
/// coordinates to world coordinates.
pub fn render(mesh: &TerrainMesh, pose: &PoseSE3, cam: &CameraModel) -> Result<RenderOutput> {
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    cam.validate()?;
    if !pose.is_finite() {
        return Err(Error::InvalidArgument("non-finite camera pose".into()));
    }
    let pinhole = cam.undistorted();
    let (image, depth) = rasterize::rasterize(mesh, pose, &pinhole);
    Ok(RenderOutput::from_parts(image, depth))
}

/// Renders with the full distortion model of `cam` by resampling an
/// enlarged undistorted render (bilinear texture, nearest depth).
pub fn render_distorted(mesh: &TerrainMesh, pose: &PoseSE3, cam: &CameraModel) -> Result<RenderOutput> {
    if !cam.has_distortion() {
        return render(mesh, pose, cam);
    }
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    cam.validate()?;

    // Undistorted pinhole coordinates of the output border.
    let (w, h) = (cam.width, cam.height);
    let mut border = Vec::new();
    for x in 0..w {
        border.push((x as f64, 0.0));
        border.push((x as f64, (h - 1) as f64));
    }
    for y in 0..h {
        border.push((0.0, y as f64));
        border.push(((w - 1) as f64, y as f64));
    }
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (cam.cx, cam.cx, cam.cy, cam.cy);
    for (u, v) in border {
        if let Ok((x, y)) = cam.undistort((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy) {
            let (pu, pv) = (cam.fx * x + cam.cx, cam.fy * y + cam.cy);
            lo_u = lo_u.min(pu);
            hi_u = hi_u.max(pu);
            lo_v = lo_v.min(pv);
            hi_v = hi_v.max(pv);
        }
    }
    let limit = GUARD_BAND / 2.0;
    let pad_u = DISTORTION_MARGIN * (hi_u - lo_u);
    let pad_v = DISTORTION_MARGIN * (hi_v - lo_v);
    let lo_u = (lo_u - pad_u).max(cam.cx - limit).floor();
    let hi_u = (hi_u + pad_u).min(cam.cx + limit).ceil();
    let lo_v = (lo_v - pad_v).max(cam.cy - limit).floor();
    let hi_v = (hi_v + pad_v).min(cam.cy + limit).ceil();
    let big = CameraModel::pinhole(
        cam.fx,
        cam.fy,
        cam.cx - lo_u,
        cam.cy - lo_v,
        (hi_u - lo_u) as usize + 1,
        (hi_v - lo_v) as usize + 1,
    );
    let wide = render(mesh, pose, &big)?;

    let ch = wide.image.channels;
    let mut image = Image8::new(w, h, ch);
    let mut depth = DepthMap::new_invalid(w, h);
    image
        .data
        .par_chunks_mut(w * ch)
        .zip(depth.data.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (img_row, depth_row))| {
            for x in 0..w {
                let Ok((nx, ny)) = cam.undistort((x as f64 - cam.cx) / cam.fx, (y as f64 - cam.cy) / cam.fy) else {
                    continue;
                };
                let u = big.fx * nx + big.cx;
                let v = big.fy * ny + big.cy;
                if !(u >= 0.0 && v >= 0.0 && u <= (big.width - 1) as f64 && v <= (big.height - 1) as f64) {
                    continue;
                }
                let (ru, rv) = (u.round() as usize, v.round() as usize);
                let d = wide.depth.get(ru, rv);
                if !d.is_finite() {
                    continue;
                }
                depth_row[x] = d;
                let out = &mut img_row[x * ch..(x + 1) * ch];
                sample_texture(&wide, u, v, out);
            }
        });
    Ok(RenderOutput::from_parts(image, depth))
}

/// Bilinear over the valid neighbors of `(u, v)`, weights renormalized.
fn sample_texture(wide: &RenderOutput, u: f64, v: f64, out: &mut [u8]) {
    let img = &wide.image;
    let x0 = (u.floor() as usize).min(img.width - 1);
    let y0 = (v.floor() as usize).min(img.height - 1);
    let ax = u - x0 as f64;
    let ay = v - y0 as f64;
    let mut acc = [0.0f64; 3];
    let mut wsum = 0.0;
    for (dx, dy, wgt) in [
        (0, 0, (1.0 - ax) * (1.0 - ay)),
        (1, 0, ax * (1.0 - ay)),
        (0, 1, (1.0 - ax) * ay),
        (1, 1, ax * ay),
    ] {
        let (x, y) = (x0 + dx, y0 + dy);
        if wgt == 0.0 || x >= img.width || y >= img.height || !wide.mask[y * img.width + x] {
            continue;
        }
        for (c, a) in img.pixel(x, y).iter().zip(acc.iter_mut()) {
            *a += wgt * *c as f64;
        }
        wsum += wgt;
    }
    if wsum > 0.0 {
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            *o = (a / wsum).round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Checks that a camera at `pose` sits above the terrain of `layer` and that
/// its whole image footprint falls inside the map. Errors name the violated
/// bound.
pub fn check_pose_over_map(layer: &MapLayer, pose: &PoseSE3, cam: &CameraModel) -> Result<()> {
    let ext = layer.ortho.extent().intersect(&layer.elevation.extent());
    let c = pose.translation;
    check_inside(&ext, c.x, c.y, "camera position")?;
    let ground = sample_elevation(&layer.elevation, c.x, c.y)?;
    if c.z <= ground {
        return Err(Error::PoseOutsideMap(format!(
            "camera height {:.3} m is not above the terrain elevation {ground:.3} m",
            c.z
        )));
    }
    let (zmin, zmax) = layer
        .elevation
        .value_range()
        .map(|(a, b)| (a as f64, b as f64))
        .unwrap_or((ground, ground));
    let (w, h) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
    let samples = [
        (0.0, 0.0),
        (w, 0.0),
        (0.0, h),
        (w, h),
        (w / 2.0, 0.0),
        (w / 2.0, h),
        (0.0, h / 2.0),
        (w, h / 2.0),
    ];
    for (u, v) in samples {
        let ray_cam = cam.unproject(u, v, 1.0)?;
        let dir = pose.rotation * ray_cam;
        if dir.z >= -1e-9 {
            return Err(Error::PoseOutsideMap(format!(
                "image corner ray ({u}, {v}) does not hit the ground"
            )));
        }
        for plane in [zmin, zmax] {
            if plane >= c.z {
                continue;
            }
            let s = (plane - c.z) / dir.z;
            let hit: Vector3<f64> = c + dir * s;
            check_inside(&ext, hit.x, hit.y, "camera footprint")?;
        }
    }
    Ok(())
}

fn check_inside(ext: &GeoExtent, e: f64, n: f64, what: &str) -> Result<()> {
    if e < ext.min_easting {
        Err(Error::PoseOutsideMap(format!(
            "{what} easting {e:.3} is below the map minimum easting {:.3}",
            ext.min_easting
        )))
    } else if e > ext.max_easting {
        Err(Error::PoseOutsideMap(format!(
            "{what} easting {e:.3} exceeds the map maximum easting {:.3}",
            ext.max_easting
        )))
    } else if n < ext.min_northing {
        Err(Error::PoseOutsideMap(format!(
            "{what} northing {n:.3} is below the map minimum northing {:.3}",
            ext.min_northing
        )))
    } else if n > ext.max_northing {
        Err(Error::PoseOutsideMap(format!(
            "{what} northing {n:.3} exceeds the map maximum northing {:.3}",
            ext.max_northing
        )))
    } else {
        Ok(())
    }
}

/// Camera-to-world rotation looking straight down, image x pointing east
/// and image y pointing south.
pub fn nadir_rotation() -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
}

/// Nadir camera at `(easting, northing, height)`, rotated by `yaw` about the
/// vertical and tilted by `pitch` about the camera x axis.
pub fn nadir_pose(easting: f64, northing: f64, height: f64, yaw: f64, pitch: f64) -> PoseSE3 {
    let yaw_r = PoseSE3::from_axis_angle(Vector3::z(), yaw).rotation;
    let pitch_r = PoseSE3::from_axis_angle(Vector3::x(), pitch).rotation;
    PoseSE3::new(yaw_r * nadir_rotation() * pitch_r, Vector3::new(easting, northing, height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{ElevationMap, GeoTransform, Orthoimage};

    fn flat_mesh(size: usize, pixel: f64, z: f32, image: Image8) -> TerrainMesh {
        let geo = GeoTransform::new(-(size as f64) * pixel / 2.0, size as f64 * pixel / 2.0, pixel, pixel).unwrap();
        let ortho = Orthoimage {
            image,
            geo,
            label: String::new(),
        };
        let elev = ElevationMap::new(2, 2, vec![z; 4], -9999.0, GeoTransform::new(geo.origin_easting, geo.origin_northing, size as f64 * pixel / 2.0, size as f64 * pixel / 2.0).unwrap()).unwrap();
        build_mesh(&ortho, &elev, PixelRegion::full(&ortho)).unwrap()
    }

    fn small_cam() -> CameraModel {
        CameraModel::pinhole(100.0, 100.0, 64.0, 48.0, 129, 97)
    }

    #[test]
    fn nadir_depth_is_height() {
        let mut img = Image8::new(64, 64, 1);
        img.data.fill(77);
        let mesh = flat_mesh(64, 2.0, 0.0, img);
        let out = render(&mesh, &nadir_pose(0.0, 0.0, 30.0, 0.3, 0.0), &small_cam()).unwrap();
        assert!(out.valid_fraction() > 0.99);
        for (d, m) in out.depth.data.iter().zip(&out.mask) {
            if *m {
                assert!((d - 30.0).abs() < 1e-3);
            }
        }
        for (i, m) in out.mask.iter().enumerate() {
            if *m {
                assert_eq!(out.image.data[i], 77);
            }
        }
    }

    #[test]
    fn distorted_matches_plain_without_coefficients() {
        let img = Image8::from_raw(64, 64, 1, (0..4096).map(|i| (i * 13 % 256) as u8).collect()).unwrap();
        let mesh = flat_mesh(64, 2.0, 5.0, img);
        let pose = nadir_pose(1.0, -2.0, 40.0, 0.1, 0.05);
        let cam = small_cam();
        assert_eq!(render(&mesh, &pose, &cam).unwrap(), render_distorted(&mesh, &pose, &cam).unwrap());
    }

    #[test]
    fn empty_mesh_errors() {
        let img = Image8::new(2, 2, 1);
        let mut mesh = flat_mesh(2, 1.0, 0.0, img);
        mesh.triangles.clear();
        assert!(matches!(render(&mesh, &PoseSE3::identity(), &small_cam()), Err(Error::EmptyMesh)));
    }

    #[test]
    fn camera_below_plane_sees_nothing() {
        let mesh = flat_mesh(16, 1.0, 0.0, Image8::new(16, 16, 1));
        let out = render(&mesh, &nadir_pose(0.0, 0.0, -5.0, 0.0, 0.0), &small_cam()).unwrap();
        assert_eq!(out.valid_fraction(), 0.0);
    }
}
