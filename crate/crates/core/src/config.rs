//! Run configuration files.
//!
//! A configuration is a TOML document with the sections `[run]`,
//! `[camera]`, `[map]`, one `[layer.<label>]` table per map layer,
//! `[align]` and `[dataset]`. Every section is optional; unknown keys are
//! rejected. Relative paths are resolved against the directory holding the
//! configuration file and must exist when the file is loaded.
//!
//! ```toml
//! [run]
//! seed = 7
//! output = "out"
//!
//! [camera]
//! fx = 400.0
//! fy = 400.0
//! cx = 375.5
//! cy = 239.5
//! width = 752
//! height = 480
//! distortion = [0.0, 0.0, 0.0, 0.0, 0.0]
//!
//! [map]
//! recent = "2004"
//!
//! [layer.2000]
//! ortho = "maps/2000.png"
//! world = "maps/2000.pgw"
//! elevation = "maps/dem.asc"
//!
//! [align]
//! max_iterations = 20
//! weighting = "huber"
//!
//! [dataset]
//! samples = 10
//! altitude = [90.0, 110.0]
//! pairs = "cross"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::eval::{DatasetConfig, PairMode, PerturbationConfig};
use crate::geodata::{load_layer, LayerPaths, MapStack};
use crate::iclk::{AlignConfig, Encoder, WeightPolicy, HUBER_DEFAULT};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    run: RawRun,
    camera: Option<RawCamera>,
    #[serde(default)]
    map: RawMap,
    #[serde(default)]
    layer: BTreeMap<String, RawLayer>,
    #[serde(default)]
    align: RawAlign,
    #[serde(default)]
    dataset: RawDataset,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seed: Option<u64>,
    output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCamera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    #[serde(default)]
    distortion: [f64; 5],
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    recent: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    ortho: PathBuf,
    world: PathBuf,
    elevation: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlign {
    max_iterations: Option<usize>,
    lambda: Option<f64>,
    step_tolerance: Option<f64>,
    converged_tolerance: Option<f64>,
    weighting: Option<String>,
    huber_c: Option<f64>,
    weights: Option<PathBuf>,
    reference_features: Option<PathBuf>,
    query_features: Option<PathBuf>,
    border_margin: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    samples: Option<usize>,
    altitude: Option<[f64; 2]>,
    tilt_sigma: Option<f64>,
    pairs: Option<String>,
    sigma_translation: Option<[f64; 3]>,
    sigma_rotation: Option<[f64; 3]>,
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub camera: CameraModel,
    /// Layers in label order.
    pub layers: Vec<LayerPaths>,
    pub recent: Option<String>,
    pub align: AlignConfig,
    pub dataset: DatasetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output: PathBuf::from("out"),
            camera: CameraModel::default(),
            layers: Vec::new(),
            recent: None,
            align: AlignConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn existing(base: &Path, p: &Path, what: &str) -> Result<PathBuf> {
    let full = resolve(base, p);
    if !full.exists() {
        return Err(Error::Config(format!("{what} {} does not exist", full.display())));
    }
    Ok(full)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses configuration text with relative paths taken from `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let d = RunConfig::default();
        let seed = raw.run.seed.unwrap_or(d.seed);

        let camera = match raw.camera {
            Some(c) => CameraModel::pinhole(c.fx, c.fy, c.cx, c.cy, c.width, c.height).with_distortion(c.distortion),
            None => d.camera,
        };
        camera.validate()?;

        let layers = raw
            .layer
            .into_iter()
            .map(|(label, l)| {
                Ok(LayerPaths {
                    ortho: existing(base, &l.ortho, &format!("layer {label} orthoimage"))?,
                    world: existing(base, &l.world, &format!("layer {label} world file"))?,
                    elevation: existing(base, &l.elevation, &format!("layer {label} elevation"))?,
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(r) = &raw.map.recent {
            if !layers.iter().any(|l| &l.label == r) {
                return Err(Error::Config(format!("map.recent names unknown layer {r:?}")));
            }
        }

        let a = raw.align;
        let da = d.align;
        let weighting = match a.weighting.as_deref().unwrap_or("uniform") {
            "uniform" => WeightPolicy::Uniform,
            "huber" => WeightPolicy::Huber {
                c: a.huber_c.unwrap_or(HUBER_DEFAULT),
            },
            "external" => {
                let p = a
                    .weights
                    .as_ref()
                    .ok_or_else(|| Error::Config("align.weighting = \"external\" needs align.weights".into()))?;
                WeightPolicy::External(existing(base, p, "weight file")?)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown align.weighting {other:?}; expected uniform, huber or external"
                )))
            }
        };
        let encoder = match (&a.reference_features, &a.query_features) {
            (None, None) => Encoder::Handcrafted,
            (Some(r), Some(q)) => Encoder::Files {
                reference: existing(base, r, "reference feature file")?,
                query: existing(base, q, "query feature file")?,
            },
            _ => {
                return Err(Error::Config(
                    "align.reference_features and align.query_features must be given together".into(),
                ))
            }
        };
        let align = AlignConfig {
            max_iterations: a.max_iterations.unwrap_or(da.max_iterations),
            lambda: a.lambda.unwrap_or(da.lambda),
            step_tolerance: a.step_tolerance.unwrap_or(da.step_tolerance),
            converged_tolerance: a.converged_tolerance.unwrap_or(da.converged_tolerance),
            weighting,
            encoder,
            border_margin: a.border_margin.unwrap_or(da.border_margin),
        };
        align.validate()?;

        let ds = raw.dataset;
        let dd = d.dataset;
        let pd = PerturbationConfig::default();
        let perturbation = PerturbationConfig {
            sigma_translation: ds.sigma_translation.unwrap_or(pd.sigma_translation),
            sigma_rotation: ds.sigma_rotation.unwrap_or(pd.sigma_rotation),
            seed,
        };
        perturbation.validate()?;
        let dataset = DatasetConfig {
            samples: ds.samples.unwrap_or(dd.samples),
            altitude_range: ds.altitude.map(|[lo, hi]| (lo, hi)).unwrap_or(dd.altitude_range),
            tilt_sigma: ds.tilt_sigma.unwrap_or(dd.tilt_sigma),
            pairs: match ds.pairs {
                Some(p) => p.parse::<PairMode>()?,
                None => dd.pairs,
            },
            perturbation,
            seed,
        };

        Ok(RunConfig {
            seed,
            output: resolve(base, raw.run.output.as_deref().unwrap_or(&d.output)),
            camera,
            layers,
            recent: raw.map.recent,
            align,
            dataset,
        })
    }

    /// Loads every configured layer; errors when none is configured.
    pub fn load_maps(&self) -> Result<MapStack> {
        if self.layers.is_empty() {
            return Err(Error::Config("no [layer.<label>] sections configured".into()));
        }
        let layers = self.layers.iter().map(load_layer).collect::<Result<Vec<_>>>()?;
        let stack = MapStack::new(layers)?;
        match &self.recent {
            Some(r) => stack.with_recent(r),
            None => Ok(stack),
        }
    }
}
