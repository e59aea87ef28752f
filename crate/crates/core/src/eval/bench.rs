//! Benchmark runner: aligns every manifest sample with every variant and
//! summarizes the error metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::iclk::{align, AlignConfig, WeightPolicy, HUBER_DEFAULT};
use crate::raster::{DepthMap, Image8};
use crate::se3::PoseSE3;

use super::{angular_error, epe, stats, translational_error, ErrorStats, Manifest};

pub const VARIANT_NAMES: [&str; 4] = ["nonn20", "nonn50", "huber20", "huber50"];

/// Metric names in report order.
pub const METRICS: [&str; 7] = [
    "epe_init",
    "epe",
    "angular_init",
    "angular",
    "translational_init",
    "translational",
    "runtime_ms",
];

/// Uniform weighting (`nonn`) or Huber weighting (`huber`) with a 20 or 50
/// iteration budget.
pub fn variant_by_name(name: &str) -> Result<AlignConfig> {
    let (weighting, iterations) = match name {
        "nonn20" => (WeightPolicy::Uniform, 20),
        "nonn50" => (WeightPolicy::Uniform, 50),
        "huber20" => (WeightPolicy::Huber { c: HUBER_DEFAULT }, 20),
        "huber50" => (WeightPolicy::Huber { c: HUBER_DEFAULT }, 50),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown variant {name:?}; valid variants: {}",
                VARIANT_NAMES.join(", ")
            )))
        }
    };
    Ok(AlignConfig {
        max_iterations: iterations,
        weighting,
        ..AlignConfig::default()
    })
}

/// Metrics of one aligned sample, in [`METRICS`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub id: usize,
    pub metrics: std::result::Result<[f64; 7], String>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantReport {
    pub name: String,
    pub samples: Vec<SampleOutcome>,
    /// One entry per metric; `None` when every sample failed.
    pub stats: Vec<(&'static str, Option<ErrorStats>)>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub variants: Vec<VariantReport>,
}

fn run_sample(
    dir: &Path,
    manifest: &Manifest,
    index: usize,
    config: &AlignConfig,
) -> Result<([f64; 7], bool)> {
    let s = &manifest.samples[index];
    let ref_image = Image8::load_png(&dir.join(&s.ref_image))?;
    let ref_depth = DepthMap::load(&dir.join(&s.ref_depth))?;
    let query = Image8::load_png(&dir.join(&s.query_image))?;
    let init = PoseSE3::identity();
    let start = Instant::now();
    let result = align(&ref_image, &ref_depth, &query, &manifest.camera, &init, config)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let gt = &s.gt_pose;
    let metrics = [
        epe(&ref_depth, &manifest.camera, &init, gt)?,
        epe(&ref_depth, &manifest.camera, &result.pose, gt)?,
        angular_error(&init, gt),
        angular_error(&result.pose, gt),
        translational_error(&init, gt),
        translational_error(&result.pose, gt),
        runtime_ms,
    ];
    Ok((metrics, result.converged))
}

/// Aligns each sample from the identity pose under every variant. Samples
/// run in parallel; outcomes keep manifest order. Per-sample errors are
/// recorded as failures and excluded from the statistics.
pub fn run_benchmark(manifest: &Manifest, dir: &Path, variants: &[(String, AlignConfig)]) -> Result<BenchReport> {
    if manifest.samples.is_empty() {
        return Err(Error::InvalidArgument("manifest contains no samples".into()));
    }
    if variants.is_empty() {
        return Err(Error::InvalidArgument("no benchmark variants given".into()));
    }
    let mut reports = Vec::with_capacity(variants.len());
    for (name, config) in variants {
        config.validate()?;
        let samples: Vec<SampleOutcome> = (0..manifest.samples.len())
            .into_par_iter()
            .map(|i| {
                let (metrics, converged) = match run_sample(dir, manifest, i, config) {
                    Ok((m, c)) => (Ok(m), c),
                    Err(e) => (Err(e.to_string()), false),
                };
                SampleOutcome {
                    id: manifest.samples[i].id,
                    metrics,
                    converged,
                }
            })
            .collect();
        let ok: Vec<&[f64; 7]> = samples.iter().filter_map(|s| s.metrics.as_ref().ok()).collect();
        let failures = samples.len() - ok.len();
        let stats = METRICS
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let series: Vec<f64> = ok.iter().map(|v| v[k]).collect();
                (*m, stats(&series).ok())
            })
            .collect();
        reports.push(VariantReport {
            name: name.clone(),
            samples,
            stats,
            failures,
        });
    }
    Ok(BenchReport { variants: reports })
}

impl VariantReport {
    pub fn metric(&self, name: &str) -> Option<&ErrorStats> {
        self.stats.iter().find(|(m, _)| *m == name).and_then(|(_, s)| s.as_ref())
    }
}

impl BenchReport {
    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn total_failures(&self) -> usize {
        self.variants.iter().map(|v| v.failures).sum()
    }

    pub fn total_samples(&self) -> usize {
        self.variants.iter().map(|v| v.samples.len()).sum()
    }

    /// Header `variant,metric,mean,stdev,median,min,max,n,failures`, one row
    /// per variant and metric. Failed-out metrics have empty value fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,metric,mean,stdev,median,min,max,n,failures\n");
        for v in &self.variants {
            for (m, st) in &v.stats {
                match st {
                    Some(st) => writeln!(
                        s,
                        "{},{},{},{},{},{},{},{},{}",
                        v.name, m, st.mean, st.stdev, st.median, st.min, st.max, st.n, v.failures
                    ),
                    None => writeln!(s, "{},{},,,,,,0,{}", v.name, m, v.failures),
                }
                .unwrap();
            }
        }
        s
    }

    /// One aligned table per variant: a row per metric with mean, stdev,
    /// median, min and max.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.variants {
            writeln!(s, "variant {} ({} samples, {} failed)", v.name, v.samples.len(), v.failures).unwrap();
            writeln!(
                s,
                "  {:<20} {:>12} {:>12} {:>12} {:>12} {:>12}",
                "metric", "mean", "stdev", "median", "min", "max"
            )
            .unwrap();
            for (m, st) in &v.stats {
                match st {
                    Some(st) => writeln!(
                        s,
                        "  {:<20} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
                        m, st.mean, st.stdev, st.median, st.min, st.max
                    ),
                    None => writeln!(s, "  {m:<20} {:>12}", "n/a"),
                }
                .unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Writes `bench.csv`, `bench.txt` and a per-sample `samples.csv`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut per_sample = String::from("variant,id,converged,error");
        for m in METRICS {
            per_sample.push(',');
            per_sample.push_str(m);
        }
        per_sample.push('\n');
        for v in &self.variants {
            for smp in &v.samples {
                match &smp.metrics {
                    Ok(vals) => {
                        write!(per_sample, "{},{},{},", v.name, smp.id, smp.converged).unwrap();
                        for x in vals {
                            write!(per_sample, ",{x}").unwrap();
                        }
                    }
                    Err(e) => {
                        write!(per_sample, "{},{},false,{}", v.name, smp.id, e.replace([',', '\n'], ";")).unwrap();
                        per_sample.push_str(&",".repeat(METRICS.len()));
                    }
                }
                per_sample.push('\n');
            }
        }
        for (name, text) in [
            ("bench.csv", self.to_csv()),
            ("bench.txt", self.to_text()),
            ("samples.csv", per_sample),
        ] {
            let path = out_dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants() {
        for n in VARIANT_NAMES {
            assert!(variant_by_name(n).is_ok());
        }
        assert_eq!(variant_by_name("nonn50").unwrap().max_iterations, 50);
        assert!(matches!(variant_by_name("huber20").unwrap().weighting, WeightPolicy::Huber { .. }));
        let err = variant_by_name("nn20").unwrap_err().to_string();
        assert!(err.contains("nonn20") && err.contains("huber50"));
    }

    #[test]
    fn csv_layout() {
        let st = stats(&[1.0, 2.0]).unwrap();
        let report = BenchReport {
            variants: vec![VariantReport {
                name: "nonn20".into(),
                samples: vec![],
                stats: vec![("epe", Some(st)), ("angular", None)],
                failures: 1,
            }],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "variant,metric,mean,stdev,median,min,max,n,failures");
        assert_eq!(lines[1], format!("nonn20,epe,1.5,{},1,1,2,2,1", st.stdev));
        assert_eq!(lines[2], "nonn20,angular,,,,,,0,1");
    }
}
