//! Red/cyan alignment overlays.

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::iclk::warp;
use crate::raster::{DepthMap, FloatRaster, Image8};
use crate::se3::PoseSE3;

/// RGB overlay with `image1` warped into the reference frame by `t` in the
/// red and blue channels and `image0` luma in green. Pixels without a valid
/// warp are black.
pub fn overlay(image0: &Image8, image1: &Image8, t: &PoseSE3, ref_depth: &DepthMap, cam: &CameraModel) -> Result<Image8> {
    let (w, h) = (image0.width, image0.height);
    if (image1.width, image1.height) != (w, h) || (ref_depth.width, ref_depth.height) != (w, h) {
        return Err(Error::Dimension(format!(
            "overlay inputs differ in size: {}x{}, {}x{}, depth {}x{}",
            w, h, image1.width, image1.height, ref_depth.width, ref_depth.height
        )));
    }
    if (cam.width, cam.height) != (w, h) {
        return Err(Error::Dimension(format!(
            "camera is {}x{}, images are {w}x{h}",
            cam.width, cam.height
        )));
    }
    let luma1 = FloatRaster::from_fn(w, h, |x, y| image1.luma(x, y) as f32);
    let (warped, mask) = warp(&luma1, t, ref_depth, cam);
    let mut out = Image8::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask[i] {
                continue;
            }
            let q = warped.at(x, y, 0).round().clamp(0.0, 255.0) as u8;
            let g = image0.luma(x, y).round().clamp(0.0, 255.0) as u8;
            out.data[i * 3..i * 3 + 3].copy_from_slice(&[q, g, q]);
        }
    }
    Ok(out)
}
