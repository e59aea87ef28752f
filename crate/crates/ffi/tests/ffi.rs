use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use geoalign_ffi::*;

const IDENTITY: [f64; 12] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];

fn camera() -> GeoalignCamera {
    GeoalignCamera {
        fx: 200.0,
        fy: 200.0,
        cx: 160.0,
        cy: 120.0,
        width: 320,
        height: 240,
        dist: [0.0; 5],
    }
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { geoalign_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(511)].iter().map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

/// Nadir camera-to-world pose: x east, y south, z down.
fn nadir(e: f64, n: f64, h: f64) -> [f64; 12] {
    [1.0, 0.0, 0.0, e, 0.0, -1.0, 0.0, n, 0.0, 0.0, -1.0, h]
}

struct Map(*mut GeoalignMap);

impl Drop for Map {
    fn drop(&mut self) {
        unsafe { geoalign_map_free(self.0) };
    }
}

fn synthetic_map() -> Map {
    let mut map = ptr::null_mut();
    let st = unsafe { geoalign_map_synthetic(1, 512, 0.0, 3, &mut map) };
    assert_eq!(st, GeoalignStatus::Ok, "{}", last_error());
    Map(map)
}

fn center(map: &Map) -> (f64, f64) {
    let mut ext = [0.0; 4];
    assert_eq!(unsafe { geoalign_map_extent(map.0, ext.as_mut_ptr()) }, GeoalignStatus::Ok);
    ((ext[0] + ext[2]) / 2.0, (ext[1] + ext[3]) / 2.0)
}

fn render_at(map: &Map, pose: &[f64; 12]) -> (Vec<u8>, Vec<f32>) {
    let cam = camera();
    let n = (cam.width * cam.height) as usize;
    let mut img = vec![0u8; 3 * n];
    let mut depth = vec![0f32; n];
    let st = unsafe { geoalign_render(map.0, 0, &cam, pose.as_ptr(), img.as_mut_ptr(), depth.as_mut_ptr()) };
    assert_eq!(st, GeoalignStatus::Ok, "{}", last_error());
    (img, depth)
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { std::ffi::CStr::from_ptr(geoalign_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    let st = unsafe { geoalign_map_synthetic(1, 64, 0.0, 1, ptr::null_mut()) };
    assert_eq!(st, GeoalignStatus::NullArgument);
    assert!(last_error().contains("out"));
    let mut ext = [0.0; 4];
    assert_eq!(unsafe { geoalign_map_extent(ptr::null(), ext.as_mut_ptr()) }, GeoalignStatus::NullArgument);
    unsafe {
        geoalign_map_free(ptr::null_mut());
        geoalign_tracker_free(ptr::null_mut());
    }
}

#[test]
fn error_message_truncates_and_reports_length() {
    let path = CString::new("/nonexistent/geoalign.toml").unwrap();
    let mut map = ptr::null_mut();
    assert_eq!(unsafe { geoalign_map_load(path.as_ptr(), &mut map) }, GeoalignStatus::Io);
    assert!(map.is_null());
    let full = unsafe { geoalign_last_error_message(ptr::null_mut(), 0) };
    assert!(full > 8);
    let mut small = [1 as c_char; 5];
    assert_eq!(unsafe { geoalign_last_error_message(small.as_mut_ptr(), small.len()) }, full);
    assert_eq!(small[4], 0);
    assert!(last_error().contains("/nonexistent/geoalign.toml"));
}

#[test]
fn render_nadir_and_reject_outside_pose() {
    let map = synthetic_map();
    let mut count = 0;
    let mut recent = 9;
    assert_eq!(unsafe { geoalign_map_info(map.0, &mut count, &mut recent) }, GeoalignStatus::Ok);
    assert_eq!((count, recent), (1, 0));

    let (e, n) = center(&map);
    let (_, depth) = render_at(&map, &nadir(e, n, 550.0));
    assert!(depth.iter().all(|d| d.is_finite() && *d > 50.0 && *d < 150.0));

    let cam = camera();
    let size = (cam.width * cam.height) as usize;
    let mut img = vec![0u8; 3 * size];
    let mut d = vec![0f32; size];
    let far = nadir(e + 10_000.0, n, 550.0);
    let st = unsafe { geoalign_render(map.0, 0, &cam, far.as_ptr(), img.as_mut_ptr(), d.as_mut_ptr()) };
    assert_eq!(st, GeoalignStatus::PoseOutsideMap);
    assert!(last_error().contains("easting"));
    let st = unsafe { geoalign_render(map.0, 4, &cam, far.as_ptr(), img.as_mut_ptr(), d.as_mut_ptr()) };
    assert_eq!(st, GeoalignStatus::InvalidArgument);
}

#[test]
fn align_recovers_a_small_shift() {
    let map = synthetic_map();
    let (e, n) = center(&map);
    let (reference, depth) = render_at(&map, &nadir(e, n, 550.0));
    let (query, _) = render_at(&map, &nadir(e + 1.5, n - 1.0, 550.0));
    let cam = camera();
    let mut pose = [0.0; 12];
    let mut converged = -1;
    let st = unsafe {
        geoalign_align(
            &cam,
            reference.as_ptr(),
            depth.as_ptr(),
            query.as_ptr(),
            IDENTITY.as_ptr(),
            50,
            false,
            pose.as_mut_ptr(),
            &mut converged,
        )
    };
    assert_eq!(st, GeoalignStatus::Ok, "{}", last_error());
    assert_eq!(converged, 1);
    // Query camera sits 1.5 m east and 1 m south: +x and +y in the camera frame.
    assert!((pose[3] - 1.5).abs() < 0.05, "{pose:?}");
    assert!((pose[7] - 1.0).abs() < 0.05, "{pose:?}");
    assert!(pose[11].abs() < 0.05, "{pose:?}");
}

#[test]
fn align_rejects_bad_camera() {
    let mut cam = camera();
    cam.fx = -1.0;
    let buf = vec![0u8; 3 * 320 * 240];
    let depth = vec![1f32; 320 * 240];
    let mut pose = [0.0; 12];
    let mut converged = 0;
    let st = unsafe {
        geoalign_align(
            &cam,
            buf.as_ptr(),
            depth.as_ptr(),
            buf.as_ptr(),
            IDENTITY.as_ptr(),
            20,
            true,
            pose.as_mut_ptr(),
            &mut converged,
        )
    };
    assert_eq!(st, GeoalignStatus::InvalidArgument, "{}", last_error());
}

#[test]
fn tracker_follows_rendered_frames() {
    let map = synthetic_map();
    let (e, n) = center(&map);
    let cam = camera();
    let mut tracker = ptr::null_mut();
    let prior = nadir(e, n, 550.0);
    let st = unsafe { geoalign_tracker_new(map.0, &cam, prior.as_ptr(), 20, &mut tracker) };
    assert_eq!(st, GeoalignStatus::Ok, "{}", last_error());
    for k in 1..=3 {
        let truth = nadir(e + k as f64, n, 550.0);
        let (frame, _) = render_at(&map, &truth);
        let mut pose = [0.0; 12];
        let mut converged = 0;
        let st = unsafe { geoalign_tracker_step(tracker, frame.as_ptr(), pose.as_mut_ptr(), &mut converged) };
        assert_eq!(st, GeoalignStatus::Ok, "{}", last_error());
        assert_eq!(converged, 1);
        let err = ((pose[3] - truth[3]).powi(2) + (pose[7] - truth[7]).powi(2) + (pose[11] - truth[11]).powi(2)).sqrt();
        assert!(err < 0.1, "frame {k}: error {err}");
    }
    unsafe { geoalign_tracker_free(tracker) };

    let mut t2 = ptr::null_mut();
    let below = nadir(e, n, 0.0);
    let st = unsafe { geoalign_tracker_new(map.0, &cam, below.as_ptr(), 20, &mut t2) };
    assert_eq!(st, GeoalignStatus::PoseOutsideMap);
    assert!(t2.is_null());
}

#[test]
fn header_is_generated_and_compiles() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include").join("geoalign.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "geoalign_map_load",
        "geoalign_render",
        "geoalign_align",
        "geoalign_tracker_step",
        "GEOALIGN_STATUS_POSE_OUTSIDE_MAP",
        "typedef struct GeoalignMap GeoalignMap;",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use_header.c");
    std::fs::write(
        &src,
        "#include \"geoalign.h\"\nint main(void) { GeoalignMap *m = 0; return geoalign_map_extent(m, 0) == GEOALIGN_STATUS_OK; }\n",
    )
    .unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
