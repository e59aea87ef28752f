//! Synthetic alignment datasets: reference and query renders from map
//! layer pairs at perturbed poses, listed in a plain-text manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geodata::{sample_elevation, MapStack};
use crate::renderer::{build_mesh, check_pose_over_map, nadir_pose, render, PixelRegion, RenderOutput, TerrainMesh};
use crate::rng::substream;
use crate::se3::PoseSE3;

use super::{sample_perturbation, PerturbationConfig};

const MAX_RETRIES: usize = 100;
pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# geoalign dataset manifest v1";

/// Which ordered layer pairs each sampled location contributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// Every ordered pair, including same-layer pairs.
    All,
    /// Only same-layer pairs.
    Same,
    /// Only pairs of distinct layers.
    Cross,
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(PairMode::All),
            "same" => Ok(PairMode::Same),
            "cross" => Ok(PairMode::Cross),
            _ => Err(Error::InvalidArgument(format!(
                "unknown pair mode {s:?}; expected all, same or cross"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub samples: usize,
    /// Camera height above the terrain below it, in meters.
    pub altitude_range: (f64, f64),
    /// Standard deviation of the reference camera's roll and pitch, radians.
    pub tilt_sigma: f64,
    pub pairs: PairMode,
    pub perturbation: PerturbationConfig,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            samples: 10,
            altitude_range: (90.0, 110.0),
            tilt_sigma: 0.02,
            pairs: PairMode::All,
            perturbation: PerturbationConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub id: usize,
    pub ref_layer: String,
    pub query_layer: String,
    /// Paths relative to the manifest directory.
    pub ref_image: PathBuf,
    pub ref_depth: PathBuf,
    pub query_image: PathBuf,
    /// Ground-truth `T^{C_ref}_{C_1}`.
    pub gt_pose: PoseSE3,
    /// Reference camera pose `T^W_{C_ref}`.
    pub ref_pose: PoseSE3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub camera: CameraModel,
    pub samples: Vec<DatasetSample>,
}

fn token(path: &Path) -> Result<String> {
    let s = path
        .to_str()
        .ok_or_else(|| Error::InvalidArgument(format!("non UTF-8 path {}", path.display())))?;
    if s.is_empty() || s.contains(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!("manifest paths must not contain whitespace: {s:?}")));
    }
    Ok(s.to_string())
}

impl Manifest {
    /// One `camera` line, then one `sample` line per sample: id, layer
    /// labels, three paths, 12 ground-truth numbers and 12 reference-pose
    /// numbers.
    pub fn to_text(&self) -> Result<String> {
        let c = &self.camera;
        let mut s = String::new();
        writeln!(s, "{MANIFEST_HEADER}").unwrap();
        write!(s, "camera {:?} {:?} {:?} {:?} {} {}", c.fx, c.fy, c.cx, c.cy, c.width, c.height).unwrap();
        for d in c.dist {
            write!(s, " {d:?}").unwrap();
        }
        s.push('\n');
        for smp in &self.samples {
            for label in [&smp.ref_layer, &smp.query_layer] {
                if label.is_empty() || label.contains(char::is_whitespace) {
                    return Err(Error::InvalidArgument(format!("layer label {label:?} must be a single word")));
                }
            }
            writeln!(
                s,
                "sample {} {} {} {} {} {} {} {}",
                smp.id,
                smp.ref_layer,
                smp.query_layer,
                token(&smp.ref_image)?,
                token(&smp.ref_depth)?,
                token(&smp.query_image)?,
                smp.gt_pose,
                smp.ref_pose
            )
            .unwrap();
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |n: usize, m: &str| Error::InvalidArgument(format!("manifest line {n}: {m}"));
        let mut camera = None;
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let num = |t: &str| t.parse::<f64>().map_err(|_| bad(n, &format!("bad number {t:?}")));
            match tok[0] {
                "camera" => {
                    if tok.len() != 12 {
                        return Err(bad(n, "camera line needs 11 values"));
                    }
                    let size = |t: &str| t.parse::<usize>().map_err(|_| bad(n, &format!("bad size {t:?}")));
                    let mut dist = [0.0; 5];
                    for (d, t) in dist.iter_mut().zip(&tok[7..12]) {
                        *d = num(t)?;
                    }
                    let cam = CameraModel::pinhole(num(tok[1])?, num(tok[2])?, num(tok[3])?, num(tok[4])?, size(tok[5])?, size(tok[6])?)
                        .with_distortion(dist);
                    cam.validate()?;
                    camera = Some(cam);
                }
                "sample" => {
                    if tok.len() != 7 + 24 {
                        return Err(bad(n, &format!("sample line needs 30 fields, got {}", tok.len() - 1)));
                    }
                    let id = tok[1].parse().map_err(|_| bad(n, "bad sample id"))?;
                    let gt: PoseSE3 = tok[7..19].join(" ").parse().map_err(|e: Error| bad(n, &e.to_string()))?;
                    let rp: PoseSE3 = tok[19..31].join(" ").parse().map_err(|e: Error| bad(n, &e.to_string()))?;
                    samples.push(DatasetSample {
                        id,
                        ref_layer: tok[2].to_string(),
                        query_layer: tok[3].to_string(),
                        ref_image: tok[4].into(),
                        ref_depth: tok[5].into(),
                        query_image: tok[6].into(),
                        gt_pose: gt,
                        ref_pose: rp,
                    });
                }
                other => return Err(bad(n, &format!("unknown record {other:?}"))),
            }
        }
        let camera = camera.ok_or_else(|| Error::InvalidArgument("manifest has no camera line".into()))?;
        Ok(Manifest { camera, samples })
    }
}

fn layer_pairs(n: usize, mode: PairMode) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            let keep = match mode {
                PairMode::All => true,
                PairMode::Same => a == b,
                PairMode::Cross => a != b,
            };
            if keep {
                out.push((a, b));
            }
        }
    }
    out
}

/// Draws a nadir-biased reference pose and a perturbation whose camera
/// footprints both fall inside every layer.
fn draw_location<R: Rng>(
    maps: &MapStack,
    cam: &CameraModel,
    config: &DatasetConfig,
    rng: &mut R,
) -> Result<(PoseSE3, PoseSE3)> {
    let ext = maps.common_extent();
    let tilt = Normal::new(0.0, config.tilt_sigma.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut last_err = None;
    for _ in 0..MAX_RETRIES {
        let e = rng.random_range(ext.min_easting..ext.max_easting);
        let n = rng.random_range(ext.min_northing..ext.max_northing);
        let (lo, hi) = config.altitude_range;
        let alt = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        let roll = tilt.sample(rng);
        let pitch = tilt.sample(rng);
        let gt = sample_perturbation(&config.perturbation, rng);
        let ground = match sample_elevation(&maps.most_recent().elevation, e, n) {
            Ok(g) => g,
            Err(err) => {
                last_err = Some(err);
                continue;
            }
        };
        let base = nadir_pose(e, n, ground + alt, yaw, pitch);
        let ref_pose = base.compose(&PoseSE3::from_axis_angle(Vector3::z(), roll));
        let query_pose = ref_pose.compose(&gt);
        let check = maps.layers().iter().try_for_each(|l| {
            check_pose_over_map(l, &ref_pose, cam)?;
            check_pose_over_map(l, &query_pose, cam)
        });
        match check {
            Ok(()) => return Ok((ref_pose, gt)),
            Err(err) => last_err = Some(err),
        }
    }
    Err(Error::PoseOutsideMap(format!(
        "no valid camera pose after {MAX_RETRIES} attempts; last rejection: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Renders `config.samples` reference/query pairs into `out_dir` and writes
/// the manifest there.
pub fn generate_dataset(maps: &MapStack, config: &DatasetConfig, cam: &CameraModel, out_dir: &Path) -> Result<Manifest> {
    if config.samples == 0 {
        return Err(Error::InvalidArgument("dataset must contain at least one sample".into()));
    }
    let (lo, hi) = config.altitude_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidArgument(format!("invalid altitude range {lo}..{hi}")));
    }
    config.perturbation.validate()?;
    cam.validate()?;
    let pairs = layer_pairs(maps.layers().len(), config.pairs);
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("cross-layer pairs need at least two map layers".into()));
    }
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;

    let meshes: Vec<TerrainMesh> = maps
        .layers()
        .iter()
        .map(|l| build_mesh(&l.ortho, &l.elevation, PixelRegion::full(&l.ortho)))
        .collect::<Result<_>>()?;
    let mut rng = substream(config.seed, "dataset/poses");
    let mut samples = Vec::with_capacity(config.samples);
    while samples.len() < config.samples {
        let (ref_pose, gt) = draw_location(maps, cam, config, &mut rng)?;
        let query_pose = ref_pose.compose(&gt);
        let take = (config.samples - samples.len()).min(pairs.len());
        let mut ref_renders: Vec<Option<RenderOutput>> = meshes.iter().map(|_| None).collect();
        let mut query_renders: Vec<Option<RenderOutput>> = meshes.iter().map(|_| None).collect();
        for &(a, b) in &pairs[..take] {
            if ref_renders[a].is_none() {
                ref_renders[a] = Some(render(&meshes[a], &ref_pose, cam)?);
            }
            if query_renders[b].is_none() {
                query_renders[b] = Some(render(&meshes[b], &query_pose, cam)?);
            }
            let id = samples.len();
            let rel = |suffix: &str| PathBuf::from("samples").join(format!("{id:05}_{suffix}"));
            let sample = DatasetSample {
                id,
                ref_layer: maps.layers()[a].label.clone(),
                query_layer: maps.layers()[b].label.clone(),
                ref_image: rel("ref.png"),
                ref_depth: rel("ref.depth"),
                query_image: rel("query.png"),
                gt_pose: gt,
                ref_pose,
            };
            let r = ref_renders[a].as_ref().unwrap();
            r.image.save_png(&out_dir.join(&sample.ref_image))?;
            r.depth.save(&out_dir.join(&sample.ref_depth))?;
            query_renders[b]
                .as_ref()
                .unwrap()
                .image
                .save_png(&out_dir.join(&sample.query_image))?;
            samples.push(sample);
        }
    }
    let manifest = Manifest {
        camera: cam.undistorted(),
        samples,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
