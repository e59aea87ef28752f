use geoalign::eval::{synth_map, SynthConfig};
use geoalign::geodata::{ElevationMap, GeoTransform, Orthoimage};
use geoalign::raster::Image8;
use geoalign::renderer::{build_mesh, nadir_pose, render, render_distorted, PixelRegion, TerrainMesh};
use geoalign::CameraModel;

/// Flat terrain at height `z` centered on the origin, textured by `image`.
fn flat_mesh(image: Image8, pixel: f64, z: f32) -> TerrainMesh {
    let half = image.width as f64 * pixel / 2.0;
    let geo = GeoTransform::new(-half, half, pixel, pixel).unwrap();
    let ortho = Orthoimage {
        image,
        geo,
        label: "flat".into(),
    };
    let elev = ElevationMap::new(2, 2, vec![z; 4], -9999.0, GeoTransform::new(-half, half, half, half).unwrap()).unwrap();
    build_mesh(&ortho, &elev, PixelRegion::full(&ortho)).unwrap()
}

/// Subpixel position of a dark-to-bright step along row `v` inside
/// `[lo, hi)`: the dark area summed over the window.
fn edge_position(img: &Image8, v: usize, lo: usize, hi: usize) -> f64 {
    let dark: f64 = (lo..hi).map(|u| 1.0 - img.luma(u, v) / 255.0).sum();
    lo as f64 - 0.5 + dark
}

#[test]
fn single_color_map_renders_single_color() {
    let mut image = Image8::new(128, 128, 3);
    for px in image.data.chunks_mut(3) {
        px.copy_from_slice(&[200, 40, 90]);
    }
    let mesh = flat_mesh(image, 1.0, 12.0);
    let cam = CameraModel::pinhole(120.0, 120.0, 79.5, 59.5, 160, 120);
    let out = render(&mesh, &nadir_pose(3.0, -2.0, 80.0, 0.4, 0.1), &cam).unwrap();
    assert!(out.valid_fraction() > 0.99);
    for (i, valid) in out.mask.iter().enumerate() {
        if *valid {
            assert_eq!(&out.image.data[3 * i..3 * i + 3], &[200, 40, 90]);
        }
    }
}

#[test]
fn checkerboard_square_size_follows_projective_scale() {
    let (size, square_px, pixel) = (512usize, 8usize, 0.5);
    let mut image = Image8::new(size, size, 1);
    for r in 0..size {
        for c in 0..size {
            image.data[r * size + c] = if (r / square_px + c / square_px) % 2 == 0 { 0 } else { 255 };
        }
    }
    let mesh = flat_mesh(image, pixel, 0.0);
    let (fx, height) = (200.0, 100.0);
    let cam = CameraModel::pinhole(fx, fx, 160.0, 120.0, 321, 241);
    let out = render(&mesh, &nadir_pose(0.0, 0.0, height, 0.0, 0.0), &cam).unwrap();
    let expected = fx * (square_px as f64 * pixel) / height;

    let row = 120;
    let bright: Vec<bool> = (0..cam.width).map(|u| out.image.luma(u, row) > 127.5).collect();
    let transitions: Vec<usize> = (1..cam.width).filter(|&u| bright[u] != bright[u - 1]).collect();
    assert!(transitions.len() > 20);
    let span = (transitions[transitions.len() - 1] - transitions[0]) as f64;
    let measured = span / (transitions.len() - 1) as f64;
    assert!((measured - expected).abs() < 0.1, "square {measured} px, expected {expected} px");
}

fn step_mesh(edge_easting: f64) -> TerrainMesh {
    let (size, pixel) = (2048usize, 0.125);
    let half = size as f64 * pixel / 2.0;
    let mut image = Image8::new(size, size, 1);
    for r in 0..size {
        for c in 0..size {
            let e = -half + (c as f64 + 0.5) * pixel;
            image.data[r * size + c] = if e < edge_easting { 0 } else { 255 };
        }
    }
    flat_mesh(image, pixel, 0.0)
}

#[test]
fn radial_distortion_bows_off_center_edges_by_the_model() {
    let (fx, height, k1) = (200.0, 100.0, -0.1);
    let cam = CameraModel::pinhole(fx, fx, 160.0, 120.0, 321, 241).with_distortion([k1, 0.0, 0.0, 0.0, 0.0]);
    let pose = nadir_pose(0.0, 0.0, height, 0.0, 0.0);

    // An edge a quarter pixel from the principal point stays straight.
    let quarter = 0.25;
    let out = render_distorted(&step_mesh(quarter * height / fx), &pose, &cam).unwrap();
    for v in (10..231).step_by(10) {
        let u = edge_position(&out.image, v, 140, 180);
        assert!((u - cam.cx - quarter).abs() < 0.5, "row {v}: center edge at {u}");
    }

    // An edge 120 px right of center in the pinhole image.
    let offset = 120.0;
    let out = render_distorted(&step_mesh(offset * height / fx), &pose, &cam).unwrap();
    let mut bow = Vec::new();
    for v in (10..231).step_by(10) {
        // Point on the undistorted edge line x = offset / fx whose
        // distorted y lands on row v.
        let x = offset / fx;
        let yd = (v as f64 - cam.cy) / fx;
        let mut y = yd;
        for _ in 0..50 {
            y = yd / (1.0 + k1 * (x * x + y * y));
        }
        let expected = cam.cx + fx * x * (1.0 + k1 * (x * x + y * y));
        let measured = edge_position(&out.image, v, 240, 300);
        assert!((measured - expected).abs() < 0.5, "row {v}: edge at {measured}, model {expected}");
        bow.push(measured);
    }
    // The edge is farthest out at the center row.
    let middle = bow[bow.len() / 2];
    assert!(middle > bow[0] + 1.0 && middle > bow[bow.len() - 1] + 1.0);
}

#[test]
fn principal_point_depth_ignores_distortion() {
    let maps = synth_map(&SynthConfig::default()).unwrap();
    let layer = maps.most_recent();
    let mesh = build_mesh(&layer.ortho, &layer.elevation, PixelRegion::full(&layer.ortho)).unwrap();
    let ext = layer.ortho.extent();
    let pose = nadir_pose(
        (ext.min_easting + ext.max_easting) / 2.0,
        (ext.min_northing + ext.max_northing) / 2.0,
        560.0,
        0.2,
        0.15,
    );
    let plain = CameraModel::pinhole(200.0, 200.0, 160.0, 120.0, 321, 241);
    let distorted = plain.with_distortion([-0.1, 0.01, 0.0005, -0.0003, 0.0]);
    let a = render(&mesh, &pose, &plain).unwrap();
    let b = render_distorted(&mesh, &pose, &distorted).unwrap();
    let (da, db) = (a.depth.get(160, 120), b.depth.get(160, 120));
    assert!(da.is_finite() && (da - db).abs() <= 1e-3 * da, "{da} vs {db}");
}

#[test]
fn rendering_is_identical_across_worker_counts() {
    let maps = synth_map(&SynthConfig::default()).unwrap();
    let layer = maps.most_recent();
    let mesh = build_mesh(&layer.ortho, &layer.elevation, PixelRegion::full(&layer.ortho)).unwrap();
    let ext = layer.ortho.extent();
    let pose = nadir_pose(ext.min_easting + 150.0, ext.max_northing - 170.0, 540.0, 1.1, 0.3);
    let cam = CameraModel::default().with_distortion([-0.05, 0.002, 0.0, 0.0, 0.0]);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| (render(&mesh, &pose, &cam).unwrap(), render_distorted(&mesh, &pose, &cam).unwrap()))
    };
    let (p1, d1) = run(1);
    let (p4, d4) = run(4);
    for (x, y) in [(&p1, &p4), (&d1, &d4)] {
        assert_eq!(x.image.data, y.image.data);
        assert_eq!(x.mask, y.mask);
        let bits = |d: &geoalign::raster::DepthMap| d.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.depth), bits(&y.depth));
    }
}
