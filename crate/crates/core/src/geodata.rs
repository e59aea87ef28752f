//! Geo-referenced orthoimages and elevation maps.
//!
//! Rasters are north-up in a planar metric frame (easting, northing, height).
//! A [`GeoTransform`] origin is the outer top-left corner of the top-left
//! pixel, so pixel `(i, j)` covers `[i, i+1) × [j, j+1)` in fractional pixel
//! coordinates and its center sits at `(i + 0.5, j + 0.5)`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::Image8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoTransform {
    pub origin_easting: f64,
    pub origin_northing: f64,
    pub pixel_size_x: f64,
    /// Positive; northing decreases as the row index grows.
    pub pixel_size_y: f64,
}

impl GeoTransform {
    pub fn new(origin_easting: f64, origin_northing: f64, pixel_size_x: f64, pixel_size_y: f64) -> Result<Self> {
        let geo = GeoTransform {
            origin_easting,
            origin_northing,
            pixel_size_x,
            pixel_size_y,
        };
        geo.validate()?;
        Ok(geo)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size_x > 0.0 && self.pixel_size_y > 0.0) {
            return Err(Error::GeoTransform(format!(
                "pixel sizes must be positive, got ({}, {})",
                self.pixel_size_x, self.pixel_size_y
            )));
        }
        if !(self.origin_easting.is_finite() && self.origin_northing.is_finite()) {
            return Err(Error::GeoTransform("non-finite origin".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn geo_to_pixel(&self, easting: f64, northing: f64) -> (f64, f64) {
        (
            (easting - self.origin_easting) / self.pixel_size_x,
            (self.origin_northing - northing) / self.pixel_size_y,
        )
    }

    #[inline]
    pub fn pixel_to_geo(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_easting + col * self.pixel_size_x,
            self.origin_northing - row * self.pixel_size_y,
        )
    }

    /// Same grid with the origin moved to pixel corner `(col, row)`.
    fn shifted(&self, col: usize, row: usize) -> GeoTransform {
        let (e, n) = self.pixel_to_geo(col as f64, row as f64);
        GeoTransform {
            origin_easting: e,
            origin_northing: n,
            ..*self
        }
    }
}

/// Axis-aligned ground rectangle `[min, max]` in easting and northing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoExtent {
    pub min_easting: f64,
    pub max_easting: f64,
    pub min_northing: f64,
    pub max_northing: f64,
}

impl GeoExtent {
    fn of(geo: &GeoTransform, width: usize, height: usize) -> Self {
        let (e1, n0) = geo.pixel_to_geo(width as f64, height as f64);
        GeoExtent {
            min_easting: geo.origin_easting,
            max_easting: e1,
            min_northing: n0,
            max_northing: geo.origin_northing,
        }
    }

    pub fn contains(&self, easting: f64, northing: f64) -> bool {
        easting >= self.min_easting
            && easting <= self.max_easting
            && northing >= self.min_northing
            && northing <= self.max_northing
    }

    pub fn intersect(&self, other: &GeoExtent) -> GeoExtent {
        GeoExtent {
            min_easting: self.min_easting.max(other.min_easting),
            max_easting: self.max_easting.min(other.max_easting),
            min_northing: self.min_northing.max(other.min_northing),
            max_northing: self.max_northing.min(other.max_northing),
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.max_easting > self.min_easting && self.max_northing > self.min_northing)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Orthoimage {
    pub image: Image8,
    pub geo: GeoTransform,
    /// Free-text tag, e.g. the acquisition year.
    pub label: String,
}

impl Orthoimage {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn extent(&self) -> GeoExtent {
        GeoExtent::of(&self.geo, self.image.width, self.image.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElevationMap {
    pub width: usize,
    pub height: usize,
    /// Meters above datum, row-major, north row first.
    pub data: Vec<f32>,
    pub nodata: f32,
    pub geo: GeoTransform,
}

impl ElevationMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>, nodata: f32, geo: GeoTransform) -> Result<Self> {
        geo.validate()?;
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} elevation samples for a {width}x{height} grid",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() && **v != nodata) {
            return Err(Error::InvalidArgument(format!("non-finite elevation {bad}")));
        }
        Ok(ElevationMap {
            width,
            height,
            data,
            nodata,
            geo,
        })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn is_nodata(&self, col: usize, row: usize) -> bool {
        self.get(col, row) == self.nodata
    }

    pub fn extent(&self) -> GeoExtent {
        GeoExtent::of(&self.geo, self.width, self.height)
    }

    /// Range of valid elevations, `None` if every cell is nodata.
    pub fn value_range(&self) -> Option<(f32, f32)> {
        self.data
            .iter()
            .filter(|v| **v != self.nodata)
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// One acquisition: texture plus terrain.
#[derive(Clone, Debug, PartialEq)]
pub struct MapLayer {
    pub label: String,
    pub ortho: Orthoimage,
    pub elevation: ElevationMap,
}

/// Ordered map layers; one of them is designated the most recent.
#[derive(Clone, Debug, PartialEq)]
pub struct MapStack {
    layers: Vec<MapLayer>,
    recent: usize,
}

impl MapStack {
    /// The last layer is taken as the most recent one.
    pub fn new(layers: Vec<MapLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("map stack needs at least one layer".into()));
        }
        let recent = layers.len() - 1;
        Ok(MapStack { layers, recent })
    }

    pub fn with_recent(mut self, label: &str) -> Result<Self> {
        self.recent = self
            .layers
            .iter()
            .position(|l| l.label == label)
            .ok_or_else(|| Error::InvalidArgument(format!("no map layer labelled {label:?}")))?;
        Ok(self)
    }

    pub fn layers(&self) -> &[MapLayer] {
        &self.layers
    }

    pub fn most_recent(&self) -> &MapLayer {
        &self.layers[self.recent]
    }

    pub fn layer(&self, label: &str) -> Option<&MapLayer> {
        self.layers.iter().find(|l| l.label == label)
    }

    /// Region covered by every orthoimage and elevation map.
    pub fn common_extent(&self) -> GeoExtent {
        let mut ext = self.layers[0].ortho.extent();
        for l in &self.layers {
            ext = ext.intersect(&l.ortho.extent()).intersect(&l.elevation.extent());
        }
        ext
    }
}

pub fn load_orthoimage(image_path: &Path, world_file_path: &Path) -> Result<Orthoimage> {
    let geo = load_world_file(world_file_path)?;
    let image = Image8::load_png(image_path)?;
    let label = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Orthoimage { image, geo, label })
}

pub fn save_orthoimage(ortho: &Orthoimage, image_path: &Path, world_file_path: &Path) -> Result<()> {
    ortho.image.save_png(image_path)?;
    save_world_file(&ortho.geo, world_file_path)
}

/// Four numbers, one per line: pixel_size_x, pixel_size_y, origin_easting,
/// origin_northing.
pub fn load_world_file(path: &Path) -> Result<GeoTransform> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let nums = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(path, format!("bad number {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if nums.len() != 4 {
        return Err(Error::format(
            path,
            format!("world header needs 4 numbers, found {}", nums.len()),
        ));
    }
    GeoTransform::new(nums[2], nums[3], nums[0], nums[1])
}

pub fn save_world_file(geo: &GeoTransform, path: &Path) -> Result<()> {
    let text = format!(
        "{:?}\n{:?}\n{:?}\n{:?}\n",
        geo.pixel_size_x, geo.pixel_size_y, geo.origin_easting, geo.origin_northing
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads an ESRI ASCII grid.
pub fn load_elevation(asc_path: &Path) -> Result<ElevationMap> {
    let file = fs::File::open(asc_path).map_err(|e| Error::io(asc_path, e))?;
    parse_ascii_grid(BufReader::new(file), asc_path)
}

fn parse_ascii_grid(reader: impl BufRead, path: &Path) -> Result<ElevationMap> {
    let bad = |msg: String| Error::format(path, msg);
    let mut lines = reader.lines();
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut center = (false, false);
    let mut cellsize = None;
    let mut nodata = -9999.0f32;
    let mut first_data: Option<String> = None;

    for line in lines.by_ref() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let key = parts.next().unwrap().to_ascii_lowercase();
        let value = parts.next();
        let parse_f64 = |v: Option<&str>| -> Result<f64> {
            v.and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("malformed header line {trimmed:?}")))
        };
        match key.as_str() {
            "ncols" => ncols = Some(parse_f64(value)? as usize),
            "nrows" => nrows = Some(parse_f64(value)? as usize),
            "xllcorner" => xll = Some(parse_f64(value)?),
            "yllcorner" => yll = Some(parse_f64(value)?),
            "xllcenter" => {
                xll = Some(parse_f64(value)?);
                center.0 = true;
            }
            "yllcenter" => {
                yll = Some(parse_f64(value)?);
                center.1 = true;
            }
            "cellsize" => cellsize = Some(parse_f64(value)?),
            "nodata_value" => nodata = parse_f64(value)? as f32,
            _ => {
                first_data = Some(line);
                break;
            }
        }
    }

    let (ncols, nrows, mut xll, mut yll, cellsize) = match (ncols, nrows, xll, yll, cellsize) {
        (Some(a), Some(b), Some(c), Some(d), Some(e)) => (a, b, c, d, e),
        _ => return Err(bad("incomplete ESRI ASCII header".into())),
    };
    if ncols == 0 || nrows == 0 {
        return Err(bad("grid has zero rows or columns".into()));
    }
    if !(cellsize > 0.0) {
        return Err(Error::GeoTransform(format!("non-positive cellsize {cellsize}")));
    }
    if center.0 {
        xll -= 0.5 * cellsize;
    }
    if center.1 {
        yll -= 0.5 * cellsize;
    }

    let mut data = Vec::with_capacity(ncols * nrows);
    let mut row = 0;
    let rows = first_data.into_iter().map(Ok).chain(lines);
    for line in rows {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if row == nrows {
            return Err(bad(format!("more than {nrows} data rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f32 = tok
                .parse()
                .map_err(|_| bad(format!("row {row}: bad value {tok:?}")))?;
            if !v.is_finite() && v != nodata {
                return Err(bad(format!("row {row}: non-finite value {tok:?}")));
            }
            data.push(v);
        }
        if data.len() - before != ncols {
            return Err(bad(format!(
                "row {row} has {} values, expected {ncols}",
                data.len() - before
            )));
        }
        row += 1;
    }
    if row != nrows {
        return Err(bad(format!("found {row} data rows, expected {nrows}")));
    }

    let geo = GeoTransform::new(xll, yll + nrows as f64 * cellsize, cellsize, cellsize)?;
    ElevationMap::new(ncols, nrows, data, nodata, geo)
}

/// Writes an ESRI ASCII grid; requires square cells.
pub fn save_elevation(map: &ElevationMap, asc_path: &Path) -> Result<()> {
    if map.geo.pixel_size_x != map.geo.pixel_size_y {
        return Err(Error::InvalidArgument(
            "ESRI ASCII grids need square cells".into(),
        ));
    }
    let file = fs::File::create(asc_path).map_err(|e| Error::io(asc_path, e))?;
    let mut w = BufWriter::new(file);
    let cs = map.geo.pixel_size_x;
    let yll = map.geo.origin_northing - map.height as f64 * cs;
    let io = |e| Error::io(asc_path, e);
    writeln!(w, "ncols {}", map.width).map_err(io)?;
    writeln!(w, "nrows {}", map.height).map_err(io)?;
    writeln!(w, "xllcorner {:?}", map.geo.origin_easting).map_err(io)?;
    writeln!(w, "yllcorner {yll:?}").map_err(io)?;
    writeln!(w, "cellsize {cs:?}").map_err(io)?;
    writeln!(w, "NODATA_value {}", map.nodata).map_err(io)?;
    let mut line = String::new();
    for row in map.data.chunks(map.width) {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Bilinear interpolation between the four cell centers around the query.
/// Queries within half a cell of the border reuse the edge cells.
pub fn sample_elevation(map: &ElevationMap, easting: f64, northing: f64) -> Result<f64> {
    let (col, row) = map.geo.geo_to_pixel(easting, northing);
    if !(col >= 0.0 && row >= 0.0 && col <= map.width as f64 && row <= map.height as f64) {
        return Err(Error::OutOfExtent { easting, northing });
    }
    let fx = col - 0.5;
    let fy = row - 0.5;
    let x0 = (fx.floor().max(0.0) as usize).min(map.width - 1);
    let y0 = (fy.floor().max(0.0) as usize).min(map.height - 1);
    let x1 = (x0 + 1).min(map.width - 1);
    let y1 = (y0 + 1).min(map.height - 1);
    let ax = (fx - x0 as f64).clamp(0.0, 1.0);
    let ay = (fy - y0 as f64).clamp(0.0, 1.0);
    let corners = [map.get(x0, y0), map.get(x1, y0), map.get(x0, y1), map.get(x1, y1)];
    if corners.iter().any(|&v| v == map.nodata) {
        return Err(Error::NoData { easting, northing });
    }
    let [z00, z10, z01, z11] = corners.map(|v| v as f64);
    let top = z00 + ax * (z10 - z00);
    let bottom = z01 + ax * (z11 - z01);
    Ok(top + ay * (bottom - top))
}

/// Pixel window `[col0, col1) × [row0, row1)` of a raster, snapped by
/// rounding the requested edges to the nearest pixel boundary.
fn snap_window(geo: &GeoTransform, width: usize, height: usize, e: (f64, f64), n: (f64, f64)) -> Option<(usize, usize, usize, usize)> {
    let (c0, r0) = geo.geo_to_pixel(e.0.min(e.1), n.0.max(n.1));
    let (c1, r1) = geo.geo_to_pixel(e.0.max(e.1), n.0.min(n.1));
    let clamp = |v: f64, hi: usize| v.round().clamp(0.0, hi as f64) as usize;
    let (c0, c1) = (clamp(c0, width), clamp(c1, width));
    let (r0, r1) = (clamp(r0, height), clamp(r1, height));
    (c1 > c0 && r1 > r0).then_some((c0, r0, c1, r1))
}

/// Crops every layer of `stack` to the requested ground rectangle.
pub fn crop_region(stack: &MapStack, easting_range: (f64, f64), northing_range: (f64, f64)) -> Result<MapStack> {
    let mut layers = Vec::with_capacity(stack.layers.len());
    for layer in &stack.layers {
        let empty = || {
            Error::EmptyRegion(format!(
                "easting {easting_range:?} x northing {northing_range:?} misses layer {:?}",
                layer.label
            ))
        };
        let o = &layer.ortho;
        let (c0, r0, c1, r1) =
            snap_window(&o.geo, o.width(), o.height(), easting_range, northing_range).ok_or_else(empty)?;
        let ch = o.image.channels;
        let mut data = Vec::with_capacity((c1 - c0) * (r1 - r0) * ch);
        for r in r0..r1 {
            let start = (r * o.width() + c0) * ch;
            data.extend_from_slice(&o.image.data[start..start + (c1 - c0) * ch]);
        }
        let ortho = Orthoimage {
            image: Image8::from_raw(c1 - c0, r1 - r0, ch, data)?,
            geo: o.geo.shifted(c0, r0),
            label: o.label.clone(),
        };

        let m = &layer.elevation;
        let (c0, r0, c1, r1) =
            snap_window(&m.geo, m.width, m.height, easting_range, northing_range).ok_or_else(empty)?;
        let mut data = Vec::with_capacity((c1 - c0) * (r1 - r0));
        for r in r0..r1 {
            data.extend_from_slice(&m.data[r * m.width + c0..r * m.width + c1]);
        }
        let elevation = ElevationMap::new(c1 - c0, r1 - r0, data, m.nodata, m.geo.shifted(c0, r0))?;

        layers.push(MapLayer {
            label: layer.label.clone(),
            ortho,
            elevation,
        });
    }
    Ok(MapStack {
        layers,
        recent: stack.recent,
    })
}

/// File locations of one layer on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPaths {
    pub label: String,
    pub ortho: PathBuf,
    pub world: PathBuf,
    pub elevation: PathBuf,
}

pub fn load_layer(paths: &LayerPaths) -> Result<MapLayer> {
    let mut ortho = load_orthoimage(&paths.ortho, &paths.world)?;
    ortho.label = paths.label.clone();
    Ok(MapLayer {
        label: paths.label.clone(),
        ortho,
        elevation: load_elevation(&paths.elevation)?,
    })
}

pub fn save_layer(layer: &MapLayer, paths: &LayerPaths) -> Result<()> {
    save_orthoimage(&layer.ortho, &paths.ortho, &paths.world)?;
    save_elevation(&layer.elevation, &paths.elevation)
}
