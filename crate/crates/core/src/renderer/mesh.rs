use crate::error::{Error, Result};
use crate::geodata::{sample_elevation, ElevationMap, Orthoimage};
use crate::raster::Image8;

/// Rectangle of orthoimage pixels `[col0, col0+width) × [row0, row0+height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRegion {
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRegion {
    pub fn full(ortho: &Orthoimage) -> Self {
        PixelRegion {
            col0: 0,
            row0: 0,
            width: ortho.width(),
            height: ortho.height(),
        }
    }
}

/// Regular-grid terrain surface with one vertex per orthoimage pixel center.
#[derive(Clone, Debug)]
pub struct TerrainMesh {
    /// `(easting, northing, elevation)` in meters.
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Texel `(col, row)` of each vertex inside [`texture`](Self::texture).
    pub tex_coords: Vec<[f32; 2]>,
    pub texture: Image8,
    pub grid_width: usize,
    pub grid_height: usize,
}

impl TerrainMesh {
    pub fn face_count(&self) -> usize {
        self.triangles.len()
    }

    /// Elevation range over all vertices.
    pub fn elevation_range(&self) -> (f64, f64) {
        self.vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[2]), hi.max(v[2])))
    }
}

/// Converts every pixel cell of `region` into two triangles, splitting along
/// the top-left to bottom-right diagonal.
pub fn build_mesh(ortho: &Orthoimage, elev: &ElevationMap, region: PixelRegion) -> Result<TerrainMesh> {
    let PixelRegion {
        col0,
        row0,
        width,
        height,
    } = region;
    if width < 2 || height < 2 {
        return Err(Error::InvalidArgument(format!(
            "mesh region must be at least 2x2 pixels, got {width}x{height}"
        )));
    }
    if col0 + width > ortho.width() || row0 + height > ortho.height() {
        return Err(Error::InvalidArgument(format!(
            "mesh region {region:?} exceeds the {}x{} orthoimage",
            ortho.width(),
            ortho.height()
        )));
    }
    if width * height > u32::MAX as usize {
        return Err(Error::InvalidArgument("mesh region too large".into()));
    }

    let mut vertices = Vec::with_capacity(width * height);
    let mut tex_coords = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let (e, n) = ortho
                .geo
                .pixel_to_geo((col0 + c) as f64 + 0.5, (row0 + r) as f64 + 0.5);
            let z = sample_elevation(elev, e, n)?;
            vertices.push([e, n, z]);
            tex_coords.push([c as f32, r as f32]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * (width - 1) * (height - 1));
    for r in 0..height - 1 {
        for c in 0..width - 1 {
            let a = (r * width + c) as u32;
            let b = a + 1;
            let d = a + width as u32;
            let e = d + 1;
            triangles.push([a, b, e]);
            triangles.push([a, e, d]);
        }
    }

    let ch = ortho.image.channels;
    let mut tex = Vec::with_capacity(width * height * ch);
    for r in row0..row0 + height {
        let start = (r * ortho.width() + col0) * ch;
        tex.extend_from_slice(&ortho.image.data[start..start + width * ch]);
    }

    Ok(TerrainMesh {
        vertices,
        triangles,
        tex_coords,
        texture: Image8::from_raw(width, height, ch, tex)?,
        grid_width: width,
        grid_height: height,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::GeoTransform;

    fn flat(ortho_size: usize, z: f32) -> (Orthoimage, ElevationMap) {
        let geo = GeoTransform::new(0.0, ortho_size as f64, 1.0, 1.0).unwrap();
        let ortho = Orthoimage {
            image: Image8::new(ortho_size, ortho_size, 1),
            geo,
            label: String::new(),
        };
        let elev = ElevationMap::new(ortho_size, ortho_size, vec![z; ortho_size * ortho_size], -9999.0, geo).unwrap();
        (ortho, elev)
    }

    #[test]
    fn three_by_three_counts() {
        let (o, e) = flat(3, 0.0);
        let m = build_mesh(&o, &e, PixelRegion::full(&o)).unwrap();
        assert_eq!(m.vertices.len(), 9);
        assert_eq!(m.face_count(), 8);
        assert!(m.vertices.iter().all(|v| v[2] == 0.0));
        assert!(m.triangles.iter().flatten().all(|&i| (i as usize) < m.vertices.len()));
    }

    #[test]
    fn face_count_formula() {
        let (o, e) = flat(17, 3.0);
        for (w, h) in [(2, 2), (5, 3), (17, 17), (2, 9)] {
            let m = build_mesh(&o, &e, PixelRegion { col0: 0, row0: 0, width: w, height: h }).unwrap();
            assert_eq!(m.face_count(), 2 * (w - 1) * (h - 1));
        }
    }

    #[test]
    fn ramp_elevation_follows_easting() {
        let geo = GeoTransform::new(0.0, 16.0, 1.0, 1.0).unwrap();
        let ortho = Orthoimage {
            image: Image8::new(32, 32, 1),
            geo: GeoTransform::new(0.0, 16.0, 0.5, 0.5).unwrap(),
            label: String::new(),
        };
        let data = (0..256).map(|i| (i % 16) as f32 + 0.5).collect();
        let elev = ElevationMap::new(16, 16, data, -9999.0, geo).unwrap();
        let region = PixelRegion { col0: 2, row0: 2, width: 28, height: 28 };
        let m = build_mesh(&ortho, &elev, region).unwrap();
        for v in &m.vertices {
            assert!((v[2] - v[0]).abs() < 1e-9, "{v:?}");
        }
    }

    #[test]
    fn nodata_region_errors() {
        let (o, mut e) = flat(4, 1.0);
        e.data[5] = e.nodata;
        assert!(build_mesh(&o, &e, PixelRegion::full(&o)).is_err());
    }
}
