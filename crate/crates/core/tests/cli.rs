use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geoalign::config::RunConfig;
use geoalign::eval::{Manifest, MANIFEST_FILE};
use geoalign::geodata::sample_elevation;
use geoalign::renderer::{build_mesh, nadir_pose, render, PixelRegion};
use geoalign::PoseSE3;

fn geoalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoalign"))
        .args(args)
        .output()
        .expect("spawn geoalign")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A synthetic two-layer map with a 320x240 camera and mild dataset
/// perturbations, written into a fresh directory.
struct Workspace {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = geoalign(&["synth", "--out", path(dir.path()), "--layers", "2", "--size", "512"]);
        assert!(out.status.success(), "{}", stderr(&out));
        let config = dir.path().join("config.toml");
        let text = fs::read_to_string(&config).unwrap();
        let camera = "[camera]\nfx = 200.0\nfy = 200.0\ncx = 159.5\ncy = 119.5\nwidth = 320\nheight = 240\n";
        let start = text.find("[camera]").unwrap();
        let end = text.find("[map]").unwrap();
        let text = format!(
            "{}{camera}\n{}\n[dataset]\npairs = \"same\"\nsigma_translation = [1.5, 1.5, 0.5]\nsigma_rotation = [0.01, 0.01, 0.01]\n",
            &text[..start],
            &text[end..]
        );
        fs::write(&config, text).unwrap();
        Workspace { dir, config }
    }

    fn config(&self) -> &str {
        path(&self.config)
    }

    fn join(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run_config(&self) -> RunConfig {
        RunConfig::load(&self.config).unwrap()
    }

    /// Nadir camera 100 m above the terrain at the map center.
    fn center_pose(&self, de: f64) -> (PoseSE3, String) {
        let maps = self.run_config().load_maps().unwrap();
        let layer = maps.most_recent();
        let ext = layer.ortho.extent();
        let e = (ext.min_easting + ext.max_easting) / 2.0 + de;
        let n = (ext.min_northing + ext.max_northing) / 2.0;
        let h = sample_elevation(&layer.elevation, e, n).unwrap() + 100.0;
        (nadir_pose(e, n, h, 0.0, 0.0), format!("{e},{n},{h}"))
    }

    fn dataset(&self, samples: usize, out: &str) -> Output {
        geoalign(&[
            "dataset",
            "--config",
            self.config(),
            "--samples",
            &samples.to_string(),
            "--out",
            path(&self.join(out)),
        ])
    }
}

#[test]
fn render_writes_both_files_and_rejects_poses_off_the_map() {
    let ws = Workspace::new();
    let (_, nadir) = ws.center_pose(0.0);
    let render_once = |name: &str| {
        let (image, depth) = (ws.join(&format!("{name}.png")), ws.join(&format!("{name}.depth")));
        let out = geoalign(&[
            "render",
            "--config",
            ws.config(),
            "--nadir",
            &nadir,
            "--image",
            path(&image),
            "--depth",
            path(&depth),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let text = stdout(&out);
        let fraction: f64 = text
            .split_whitespace()
            .filter_map(|t| t.parse().ok())
            .next_back()
            .unwrap_or_else(|| panic!("no valid fraction in {text:?}"));
        assert!(fraction > 0.99, "{text}");
        (fs::read(image).unwrap(), fs::read(depth).unwrap())
    };
    let first = render_once("a");
    assert_eq!(first, render_once("b"));

    let (pose, _) = ws.center_pose(0.0);
    let t = pose.translation + nalgebra::Vector3::new(50_000.0, 0.0, 0.0);
    let out = geoalign(&[
        "render",
        "--config",
        ws.config(),
        "--nadir",
        &format!("{},{},{}", t.x, t.y, t.z),
        "--image",
        path(&ws.join("far.png")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("easting"), "{}", stderr(&out));
}

#[test]
fn dataset_counts_samples_and_rejects_empty_requests() {
    let ws = Workspace::new();
    let out = ws.dataset(4, "ds");
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = fs::read_to_string(ws.join("ds").join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.starts_with("sample ")).count(), 4);
    assert_eq!(fs::read_dir(ws.join("ds/samples")).unwrap().count(), 12);

    assert!(ws.dataset(4, "again").status.success());
    assert_eq!(manifest, fs::read_to_string(ws.join("again").join(MANIFEST_FILE)).unwrap());

    let out = ws.dataset(0, "empty");
    assert!(!out.status.success());
    assert!(!stderr(&out).is_empty());
}

fn epe_line(text: &str) -> (f64, f64) {
    let line = text.lines().find(|l| l.starts_with("epe ")).unwrap_or_else(|| panic!("no epe line in {text}"));
    let v: Vec<f64> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    (v[0], v[1])
}

#[test]
fn align_reports_improvement_and_writes_an_overlay() {
    let ws = Workspace::new();
    assert!(ws.dataset(1, "ds").status.success());
    let manifest = ws.join("ds").join(MANIFEST_FILE);
    let overlay = ws.join("overlay.png");
    let report = ws.join("align.txt");
    let out = geoalign(&[
        "align",
        "--config",
        ws.config(),
        "--manifest",
        path(&manifest),
        "--sample",
        "0",
        "--iterations",
        "50",
        "--overlay",
        path(&overlay),
        "--report",
        path(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (init, fin) = epe_line(&stdout(&out));
    assert!(fin < init, "final {fin} vs init {init}");
    let png = geoalign::raster::Image8::load_png(&overlay).unwrap();
    assert_eq!((png.width, png.height, png.channels), (320, 240, 3));
    assert!(report.exists());

    let m = Manifest::load(&manifest).unwrap();
    let s = &m.samples[0];
    let missing = ws.join("ds").join("missing.depth");
    let out = geoalign(&[
        "align",
        "--config",
        ws.config(),
        "--ref-image",
        path(&ws.join("ds").join(&s.ref_image)),
        "--ref-depth",
        path(&missing),
        "--query-image",
        path(&ws.join("ds").join(&s.query_image)),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains(path(&missing)), "{}", stderr(&out));
}

#[test]
fn bench_writes_tables_and_rejects_unknown_variants() {
    let ws = Workspace::new();
    assert!(ws.dataset(2, "ds").status.success());
    let manifest = ws.join("ds").join(MANIFEST_FILE);
    let out_dir = ws.join("bench");
    let out = geoalign(&[
        "bench",
        "--config",
        ws.config(),
        "--manifest",
        path(&manifest),
        "--variants",
        "nonn20,huber20,nonn50",
        "--out",
        path(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 7);
    assert_eq!(rows.iter().filter(|r| r.contains(",runtime_ms,")).count(), 3);
    assert!(out_dir.join("bench.txt").exists());

    let out = geoalign(&["bench", "--manifest", path(&manifest), "--variants", "nonn20,deepnet"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    for name in ["deepnet", "nonn20", "nonn50", "huber20", "huber50"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn track_follows_rendered_frames() {
    let ws = Workspace::new();
    let config = ws.run_config();
    let maps = config.load_maps().unwrap();
    let layer = maps.most_recent();
    let mesh = build_mesh(&layer.ortho, &layer.elevation, PixelRegion::full(&layer.ortho)).unwrap();
    let frames = ws.join("frames");
    fs::create_dir(&frames).unwrap();
    let mut gt = String::new();
    for k in 0..3 {
        let (pose, _) = ws.center_pose(k as f64);
        render(&mesh, &pose, &config.camera)
            .unwrap()
            .image
            .save_png(&frames.join(format!("{k:03}.png")))
            .unwrap();
        gt.push_str(&format!("{pose}\n"));
    }
    fs::write(ws.join("gt.txt"), gt).unwrap();
    let (_, prior) = ws.center_pose(-0.5);
    let report = ws.join("trajectory.txt");
    let out = geoalign(&[
        "track",
        "--config",
        ws.config(),
        "--frames",
        path(&frames),
        "--nadir",
        &prior,
        "--gt",
        path(&ws.join("gt.txt")),
        "--report",
        path(&report),
    ]);
    assert!(out.status.success(), "{}\n{}", stdout(&out), stderr(&out));
    let text = fs::read_to_string(&report).unwrap();
    let records: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(records.len(), 3);
    for r in &records {
        assert_eq!(r[13], "1");
        let translational: f64 = r[16].parse().unwrap();
        assert!(translational < 0.1, "{r:?}");
    }

    let empty = ws.join("no_frames");
    fs::create_dir(&empty).unwrap();
    let out = geoalign(&["track", "--config", ws.config(), "--frames", path(&empty), "--nadir", &prior]);
    assert!(!out.status.success());
}
