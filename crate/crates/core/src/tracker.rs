//! Map tracking: render the map at the pose prior, align the live image
//! against it and chain the result into the next prior.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::eval::{angular_error, epe, translational_error};
use crate::geodata::{MapLayer, MapStack};
use crate::iclk::{align, AlignConfig, AlignmentResult};
use crate::raster::{DepthMap, Image8};
use crate::renderer::{build_mesh, check_pose_over_map, render, PixelRegion, TerrainMesh};
use crate::se3::PoseSE3;

/// Tracking state bound to the most recent layer of a map stack.
#[derive(Debug)]
pub struct TrackerState {
    prior: PoseSE3,
    frame: usize,
    last: Option<AlignmentResult>,
    layer: MapLayer,
    mesh: TerrainMesh,
    cam: CameraModel,
    config: AlignConfig,
}

/// Result of one tracking step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Map-aligned camera pose `T^W_{C_1}`.
    pub pose: PoseSE3,
    /// Estimated `T^{C_ref}_{C_1}`; identity when the step passed through.
    pub relative: PoseSE3,
    pub converged: bool,
    /// Depth rendered at the prior, used for end-point errors.
    pub ref_depth: DepthMap,
}

impl TrackerState {
    /// Errors when the camera at `prior` is below the terrain or its
    /// footprint leaves the most recent layer.
    pub fn initialize(prior: PoseSE3, maps: &MapStack, cam: CameraModel, config: AlignConfig) -> Result<Self> {
        cam.validate()?;
        config.validate()?;
        if !prior.is_finite() {
            return Err(Error::InvalidArgument("initial pose is not finite".into()));
        }
        let layer = maps.most_recent().clone();
        check_pose_over_map(&layer, &prior, &cam)?;
        let mesh = build_mesh(&layer.ortho, &layer.elevation, PixelRegion::full(&layer.ortho))?;
        Ok(TrackerState {
            prior,
            frame: 0,
            last: None,
            layer,
            mesh,
            cam,
            config,
        })
    }

    pub fn prior(&self) -> &PoseSE3 {
        &self.prior
    }

    /// Number of frames processed so far.
    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn last_result(&self) -> Option<&AlignmentResult> {
        self.last.as_ref()
    }

    pub fn camera(&self) -> CameraModel {
        self.cam
    }

    pub fn layer_label(&self) -> &str {
        &self.layer.label
    }

    /// Aligns `live` against a render at the prior starting from identity.
    /// A converged alignment becomes the new prior; otherwise the prior is
    /// returned unchanged and the step is flagged not converged.
    pub fn step(&mut self, live: &Image8) -> Result<StepOutput> {
        if (live.width, live.height) != (self.cam.width, self.cam.height) {
            return Err(Error::Dimension(format!(
                "live image is {}x{}, camera is {}x{}",
                live.width, live.height, self.cam.width, self.cam.height
            )));
        }
        let reference = render(&self.mesh, &self.prior, &self.cam)?;
        let outcome = align(
            &reference.image,
            &reference.depth,
            live,
            &self.cam.undistorted(),
            &PoseSE3::identity(),
            &self.config,
        );
        let result = match outcome {
            Ok(r) => Some(r),
            Err(Error::Degenerate(_) | Error::TooFewRows { .. } | Error::ZeroWeights) => None,
            Err(e) => return Err(e),
        };
        self.frame += 1;
        let (relative, converged) = match &result {
            Some(r) if r.converged => (r.pose, true),
            _ => (PoseSE3::identity(), false),
        };
        let pose = self.prior.compose(&relative);
        self.prior = pose;
        self.last = result;
        Ok(StepOutput {
            pose,
            relative,
            converged,
            ref_depth: reference.depth,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameErrors {
    pub epe: f64,
    /// Radians, between estimated and true world orientations.
    pub angular: f64,
    /// Meters, between estimated and true camera positions.
    pub translational: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub pose: PoseSE3,
    pub converged: bool,
    pub errors: Option<FrameErrors>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackReport {
    pub frames: Vec<FrameRecord>,
}

/// Runs [`TrackerState::step`] over `images` in order. With ground-truth
/// world poses, each record carries its errors; the end-point error is
/// measured on the depth rendered at that frame's prior.
pub fn track_sequence(state: &mut TrackerState, images: &[Image8], gt_poses: Option<&[PoseSE3]>) -> Result<TrackReport> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("tracking needs at least one frame".into()));
    }
    if let Some(gt) = gt_poses {
        if gt.len() != images.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ground-truth poses for {} frames",
                gt.len(),
                images.len()
            )));
        }
    }
    let mut frames = Vec::with_capacity(images.len());
    for (i, image) in images.iter().enumerate() {
        let prior = *state.prior();
        let out = state.step(image)?;
        let errors = match gt_poses {
            Some(gt) => {
                let gt_rel = prior.inverse().compose(&gt[i]);
                Some(FrameErrors {
                    epe: epe(&out.ref_depth, &state.cam, &out.relative, &gt_rel)?,
                    angular: angular_error(&out.pose, &gt[i]),
                    translational: translational_error(&out.pose, &gt[i]),
                })
            }
            None => None,
        };
        frames.push(FrameRecord {
            index: i,
            pose: out.pose,
            converged: out.converged,
            errors,
        });
    }
    Ok(TrackReport { frames })
}

impl TrackReport {
    pub fn all_converged(&self) -> bool {
        self.frames.iter().all(|f| f.converged)
    }

    /// One line per frame: index, 12 pose numbers, converged flag (0/1),
    /// then EPE, angular and translational errors or `-` without ground
    /// truth.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# frame r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz converged epe angular translational\n");
        for f in &self.frames {
            write!(s, "{} {} {}", f.index, f.pose, u8::from(f.converged)).unwrap();
            match f.errors {
                Some(e) => writeln!(s, " {:?} {:?} {:?}", e.epe, e.angular, e.translational),
                None => writeln!(s, " - - -"),
            }
            .unwrap();
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
