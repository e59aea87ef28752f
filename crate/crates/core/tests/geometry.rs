use geoalign::geodata::{
    load_elevation, load_orthoimage, sample_elevation, save_elevation, save_orthoimage, ElevationMap, GeoTransform, Orthoimage,
};
use geoalign::raster::Image8;
use geoalign::se3::rotation_angle;
use geoalign::{CameraModel, PoseSE3, TwistSE3};
use nalgebra::Vector3;
use proptest::prelude::*;

fn twist(max_angle: f64) -> impl Strategy<Value = TwistSE3> {
    (prop::array::uniform3(-10.0f64..10.0), prop::array::uniform3(-1.0f64..1.0), 0.0..max_angle).prop_map(
        move |(rho, axis, angle)| {
            let axis = Vector3::from(axis);
            let phi = if axis.norm() > 1e-3 { axis.normalize() * angle } else { Vector3::zeros() };
            TwistSE3::new(Vector3::from(rho), phi)
        },
    )
}

fn pose() -> impl Strategy<Value = PoseSE3> {
    twist(3.0).prop_map(|t| t.exp())
}

fn close(a: &PoseSE3, b: &PoseSE3, tol: f64) -> bool {
    (a.to_homogeneous() - b.to_homogeneous()).abs().max() <= tol
}

/// 752x480 camera with a long focal length, so radial terms up to
/// |k1| = 0.3 stay monotonic over the whole frame.
fn telephoto(dist: [f64; 5]) -> CameraModel {
    CameraModel::pinhole(800.0, 800.0, 376.0, 240.0, 752, 480).with_distortion(dist)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn log_inverts_exp(xi in twist(std::f64::consts::PI - 1e-6)) {
        let back = xi.exp().log().unwrap();
        prop_assert!((back.to_vector() - xi.to_vector()).abs().max() <= 1e-9, "{:?} vs {:?}", back, xi);
    }

    #[test]
    fn exp_inverts_log(t in pose()) {
        prop_assert!(close(&t.log().unwrap().exp(), &t, 1e-9));
    }

    #[test]
    fn composition_is_associative_with_identity(a in pose(), b in pose(), c in pose()) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-9));
        prop_assert!(close(&a.compose(&PoseSE3::identity()), &a, 0.0));
        prop_assert!(close(&PoseSE3::identity().compose(&a), &a, 0.0));
        prop_assert!(close(&a.compose(&a.inverse()), &PoseSE3::identity(), 1e-12));
    }

    #[test]
    fn rotation_angle_is_symmetric(a in pose(), b in pose()) {
        prop_assert_eq!(rotation_angle(&a, &b), rotation_angle(&b, &a));
    }

    #[test]
    fn row_major_round_trip_is_exact(a in pose()) {
        let back = PoseSE3::from_row_major(&a.to_row_major()).unwrap();
        prop_assert_eq!(back, a);
        let text: PoseSE3 = a.to_string().parse().unwrap();
        prop_assert_eq!(text, a);
    }

    #[test]
    fn distorted_projection_round_trips(
        u in 0.0f64..751.0, v in 0.0f64..479.0, depth in 1.0f64..1e4,
        k1 in -0.3f64..0.3, k2 in -0.05f64..0.05, p in prop::array::uniform2(-1e-3f64..1e-3),
    ) {
        let cam = telephoto([k1, k2, p[0], p[1], 0.0]);
        let point = cam.unproject(u, v, depth).unwrap();
        prop_assert!((point.z - depth).abs() <= 1e-9 * depth);
        let (u2, v2) = cam.project(&point).unwrap();
        prop_assert!((u2 - u).abs() <= 1e-6 && (v2 - v).abs() <= 1e-6, "({}, {}) -> ({}, {})", u, v, u2, v2);
    }

    #[test]
    fn zero_distortion_matches_pinhole(u in 0.0f64..751.0, v in 0.0f64..479.0, depth in 1.0f64..1e4) {
        let cam = CameraModel::default();
        let a = cam.unproject(u, v, depth).unwrap();
        let b = cam.unproject_pinhole(u, v, depth);
        prop_assert!((a - b).norm() <= 1e-12 * depth);
        let (pu, pv) = cam.project(&a).unwrap();
        let (qu, qv) = cam.project_pinhole(&a).unwrap();
        prop_assert!((pu - qu).abs() <= 1e-9 && (pv - qv).abs() <= 1e-9);
    }

    #[test]
    fn elevation_grid_round_trips_bit_exactly(
        data in prop::collection::vec(prop_oneof![9 => -500.0f32..4000.0, 1 => Just(-9999.0f32)], 12),
        e in -1e5f64..1e6, n in 1e6f64..6e6, cell in 0.1f64..50.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dem.asc");
        let map = ElevationMap::new(4, 3, data, -9999.0, GeoTransform::new(e, n, cell, cell).unwrap()).unwrap();
        save_elevation(&map, &path).unwrap();
        let back = load_elevation(&path).unwrap();
        prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), map.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.geo, map.geo);
    }
}

#[test]
fn orthoimage_round_trips_bit_exactly() {
    let mut image = Image8::new(37, 23, 3);
    for (i, v) in image.data.iter_mut().enumerate() {
        *v = (i * 31 % 251) as u8;
    }
    let ortho = Orthoimage {
        image,
        geo: GeoTransform::new(612_345.25, 5_170_000.75, 0.25, 0.5).unwrap(),
        label: "2010".into(),
    };
    let dir = tempfile::tempdir().unwrap();
    let (png, world) = (dir.path().join("o.png"), dir.path().join("o.pgw"));
    save_orthoimage(&ortho, &png, &world).unwrap();
    let back = load_orthoimage(&png, &world).unwrap();
    assert_eq!(back.image, ortho.image);
    assert_eq!(back.geo, ortho.geo);
}

#[test]
fn elevation_sampling_is_exact_on_a_plane() {
    let geo = GeoTransform::new(1000.0, 2000.0, 2.0, 2.0).unwrap();
    let (a, b, c) = (0.25, -0.5, 300.0);
    let mut data = Vec::new();
    for row in 0..10 {
        for col in 0..10 {
            let (e, n) = geo.pixel_to_geo(col as f64 + 0.5, row as f64 + 0.5);
            data.push((a * (e - 1000.0) + b * (n - 2000.0) + c) as f32);
        }
    }
    let map = ElevationMap::new(10, 10, data, -9999.0, geo).unwrap();
    for (e, n) in [(1001.0, 1999.0), (1007.3, 1988.1), (1018.9, 1981.1), (1010.0, 1990.0)] {
        let z = sample_elevation(&map, e, n).unwrap();
        let expected = a * (e - 1000.0) + b * (n - 2000.0) + c;
        assert!((z - expected).abs() <= 1e-6, "({e}, {n}): {z} vs {expected}");
    }
    assert!(sample_elevation(&map, 900.0, 1990.0).is_err());
}
