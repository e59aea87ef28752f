//! C ABI for map loading, terrain rendering, pair alignment and tracking.
//!
//! Every function returns a [`GeoalignStatus`]. On failure a description of
//! the error is stored per thread and can be copied out with
//! [`geoalign_last_error_message`]. Poses are 12 doubles holding a 3×4
//! row-major `[R | t]` matrix. Images are tightly packed 8-bit RGB rows;
//! depth maps are `float` rows with `+inf` marking pixels without a surface.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;

use geoalign::config::RunConfig;
use geoalign::eval::{synth_map, SynthConfig};
use geoalign::geodata::MapStack;
use geoalign::iclk::{align, AlignConfig, WeightPolicy, HUBER_DEFAULT};
use geoalign::raster::{DepthMap, Image8};
use geoalign::renderer::{build_mesh, check_pose_over_map, render, PixelRegion, TerrainMesh};
use geoalign::tracker::TrackerState;
use geoalign::{CameraModel, Error, PoseSE3};

/// Result codes of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeoalignStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    PoseOutsideMap = 6,
    Degenerate = 7,
    Config = 8,
    Internal = 9,
}

/// Pinhole camera with `(k1, k2, p1, p2, k3)` distortion.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GeoalignCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub dist: [f64; 5],
}

/// Opaque map stack with lazily built terrain meshes.
pub struct GeoalignMap {
    stack: MapStack,
    meshes: Vec<OnceLock<Result<TerrainMesh, String>>>,
}

/// Opaque tracking state.
pub struct GeoalignTracker {
    state: TrackerState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> GeoalignStatus {
    match err {
        Error::Io { .. } => GeoalignStatus::Io,
        Error::Format { .. } | Error::Image { .. } | Error::GeoTransform(_) => GeoalignStatus::Format,
        Error::Dimension(_) => GeoalignStatus::Dimension,
        Error::PoseOutsideMap(_) | Error::OutOfExtent { .. } | Error::NoData { .. } => GeoalignStatus::PoseOutsideMap,
        Error::Degenerate(_) | Error::TooFewRows { .. } | Error::ZeroWeights => GeoalignStatus::Degenerate,
        Error::Config(_) => GeoalignStatus::Config,
        _ => GeoalignStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> GeoalignStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            GeoalignStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer passed for {name}"));
            GeoalignStatus::NullArgument
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            GeoalignStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            GeoalignStatus::Internal
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: the caller guarantees `p` is null or points to a live `T`.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

fn non_null_mut<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller guarantees `p` is null or points to a live, unaliased `T`.
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

fn slice<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: the caller guarantees `len` readable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a, T>(p: *mut T, len: usize, name: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: the caller guarantees `len` writable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn path_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Invalid(format!("{name} is not valid UTF-8")))?;
    Ok(Path::new(s))
}

fn camera(c: &GeoalignCamera) -> Result<CameraModel, Failure> {
    let cam = CameraModel::pinhole(c.fx, c.fy, c.cx, c.cy, c.width as usize, c.height as usize).with_distortion(c.dist);
    cam.validate()?;
    Ok(cam)
}

fn pose_in(p: *const f64, name: &'static str) -> Result<PoseSE3, Failure> {
    let v: &[f64; 12] = slice(p, 12, name)?.try_into().expect("length is 12");
    Ok(PoseSE3::from_row_major(v)?)
}

fn pose_out(pose: &PoseSE3, out: &mut [f64]) {
    out.copy_from_slice(&pose.to_row_major());
}

fn rgb_image(data: &[u8], cam: &CameraModel) -> Result<Image8, Failure> {
    Ok(Image8::from_raw(cam.width, cam.height, 3, data.to_vec())?)
}

fn pixels(cam: &CameraModel) -> usize {
    cam.width * cam.height
}

fn store<T>(out: *mut *mut T, value: T, name: &'static str) -> Result<(), Failure> {
    let slot = non_null_mut(out, name)?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

fn wrap_map(stack: MapStack) -> GeoalignMap {
    let meshes = stack.layers().iter().map(|_| OnceLock::new()).collect();
    GeoalignMap { stack, meshes }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn geoalign_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated
/// and always NUL-terminated when `len > 0`). Returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn geoalign_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` has `len` writable bytes and `n < len`.
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Loads the map layers listed in a configuration file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geoalign_map_load(config_path: *const c_char, out: *mut *mut GeoalignMap) -> GeoalignStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        let stack = RunConfig::load(path)?.load_maps()?;
        store(out, wrap_map(stack), "out")
    })
}

/// Builds a synthetic square map with `layers` pseudo-year layers.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geoalign_map_synthetic(
    layers: u32,
    size_px: u32,
    augmentation: f64,
    seed: u64,
    out: *mut *mut GeoalignMap,
) -> GeoalignStatus {
    guard(|| {
        let stack = synth_map(&SynthConfig {
            layers: layers as usize,
            size_px: size_px as usize,
            augmentation,
            seed,
            ..SynthConfig::default()
        })?;
        store(out, wrap_map(stack), "out")
    })
}

/// Releases a map. Null is ignored.
///
/// # Safety
/// `map` must be null or a pointer returned by a map constructor that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn geoalign_map_free(map: *mut GeoalignMap) {
    if !map.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(map) });
    }
}

/// Number of layers and index of the most recent one.
///
/// # Safety
/// `map` must be a live map; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn geoalign_map_info(
    map: *const GeoalignMap,
    layer_count: *mut u32,
    recent_index: *mut u32,
) -> GeoalignStatus {
    guard(|| {
        let m = non_null(map, "map")?;
        let recent = m.stack.most_recent().label.clone();
        let idx = m.stack.layers().iter().position(|l| l.label == recent).unwrap_or(0);
        *non_null_mut(layer_count, "layer_count")? = m.stack.layers().len() as u32;
        *non_null_mut(recent_index, "recent_index")? = idx as u32;
        Ok(())
    })
}

/// Common extent of all layers as `[min_easting, min_northing,
/// max_easting, max_northing]`.
///
/// # Safety
/// `map` must be a live map; `extent` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn geoalign_map_extent(map: *const GeoalignMap, extent: *mut f64) -> GeoalignStatus {
    guard(|| {
        let m = non_null(map, "map")?;
        let e = m.stack.common_extent();
        slice_mut(extent, 4, "extent")?.copy_from_slice(&[e.min_easting, e.min_northing, e.max_easting, e.max_northing]);
        Ok(())
    })
}

/// Renders layer `layer` at camera-to-world `pose` through the pinhole part
/// of `cam`. Fails with `PoseOutsideMap` when the camera footprint leaves
/// the layer.
///
/// # Safety
/// `image` must hold `3·width·height` bytes and `depth` `width·height`
/// floats; the other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn geoalign_render(
    map: *const GeoalignMap,
    layer: u32,
    cam: *const GeoalignCamera,
    pose: *const f64,
    image: *mut u8,
    depth: *mut f32,
) -> GeoalignStatus {
    guard(|| {
        let m = non_null(map, "map")?;
        let cam = camera(non_null(cam, "cam")?)?;
        let pose = pose_in(pose, "pose")?;
        let idx = layer as usize;
        let l = m
            .stack
            .layers()
            .get(idx)
            .ok_or_else(|| Failure::Invalid(format!("layer index {idx} out of range")))?;
        check_pose_over_map(l, &pose, &cam)?;
        let mesh = m.meshes[idx]
            .get_or_init(|| build_mesh(&l.ortho, &l.elevation, PixelRegion::full(&l.ortho)).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Failure::Invalid(e.clone()))?;
        let out = render(mesh, &pose, &cam)?;
        let n = pixels(&cam);
        slice_mut(image, 3 * n, "image")?.copy_from_slice(&out.image.data);
        slice_mut(depth, n, "depth")?.copy_from_slice(&out.depth.data);
        Ok(())
    })
}

fn align_config(max_iterations: u32, huber: bool) -> AlignConfig {
    AlignConfig {
        max_iterations: max_iterations as usize,
        weighting: if huber {
            WeightPolicy::Huber { c: HUBER_DEFAULT }
        } else {
            WeightPolicy::Uniform
        },
        ..AlignConfig::default()
    }
}

/// Aligns `query` against `reference` with per-pixel reference depth,
/// starting from `init` (query-to-reference). Writes the estimate to
/// `pose` and 1 or 0 to `converged`.
///
/// # Safety
/// Images must hold `3·width·height` bytes, `ref_depth` `width·height`
/// floats, `init` and `pose` 12 doubles; `converged` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geoalign_align(
    cam: *const GeoalignCamera,
    reference: *const u8,
    ref_depth: *const f32,
    query: *const u8,
    init: *const f64,
    max_iterations: u32,
    huber: bool,
    pose: *mut f64,
    converged: *mut i32,
) -> GeoalignStatus {
    guard(|| {
        let cam = camera(non_null(cam, "cam")?)?;
        let n = pixels(&cam);
        let r = rgb_image(slice(reference, 3 * n, "reference")?, &cam)?;
        let q = rgb_image(slice(query, 3 * n, "query")?, &cam)?;
        let d = DepthMap {
            width: cam.width,
            height: cam.height,
            data: slice(ref_depth, n, "ref_depth")?.to_vec(),
        };
        let init = pose_in(init, "init")?;
        let result = align(&r, &d, &q, &cam, &init, &align_config(max_iterations, huber))?;
        pose_out(&result.pose, slice_mut(pose, 12, "pose")?);
        *non_null_mut(converged, "converged")? = i32::from(result.converged);
        Ok(())
    })
}

/// Starts tracking on the most recent layer of `map` from the world pose
/// `prior`.
///
/// # Safety
/// Pointers must be valid; `prior` holds 12 doubles.
#[no_mangle]
pub unsafe extern "C" fn geoalign_tracker_new(
    map: *const GeoalignMap,
    cam: *const GeoalignCamera,
    prior: *const f64,
    max_iterations: u32,
    out: *mut *mut GeoalignTracker,
) -> GeoalignStatus {
    guard(|| {
        let m = non_null(map, "map")?;
        let cam = camera(non_null(cam, "cam")?)?;
        let prior = pose_in(prior, "prior")?;
        let state = TrackerState::initialize(prior, &m.stack, cam, align_config(max_iterations, false))?;
        store(out, GeoalignTracker { state }, "out")
    })
}

/// Tracks one RGB frame. Writes the map-aligned world pose and whether the
/// alignment converged; a non-converged frame returns the unchanged prior.
///
/// # Safety
/// `tracker` must be live; `image` holds `3·width·height` bytes, `pose`
/// 12 doubles; `converged` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geoalign_tracker_step(
    tracker: *mut GeoalignTracker,
    image: *const u8,
    pose: *mut f64,
    converged: *mut i32,
) -> GeoalignStatus {
    guard(|| {
        let t = non_null_mut(tracker, "tracker")?;
        let cam = t.state.camera();
        let img = rgb_image(slice(image, 3 * pixels(&cam), "image")?, &cam)?;
        let out = t.state.step(&img)?;
        pose_out(&out.pose, slice_mut(pose, 12, "pose")?);
        *non_null_mut(converged, "converged")? = i32::from(out.converged);
        Ok(())
    })
}

/// Releases a tracker. Null is ignored.
///
/// # Safety
/// `tracker` must be null or an unfreed pointer from
/// [`geoalign_tracker_new`].
#[no_mangle]
pub unsafe extern "C" fn geoalign_tracker_free(tracker: *mut GeoalignTracker) {
    if !tracker.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(tracker) });
    }
}
