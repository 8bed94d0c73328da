//! Geo-referenced rasters in local planar metres (east, north).
//!
//! Pixel `(col, row)` covers the continuous pixel square `[col, col + 1) x
//! [row, row + 1)`; row 0 is the northern edge. Pixel centres therefore sit
//! at half-integer continuous coordinates.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RASTER_MAGIC: [u8; 4] = *b"PLRG";
pub const RASTER_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 2 + 8 * 3;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("point ({x}, {y}) lies outside the raster extent")]
    OutOfBounds { x: f64, y: f64 },
    #[error("channel {channel} out of range for a {channels}-channel raster")]
    BadChannel { channel: usize, channels: usize },
    #[error("invalid georeference: {0}")]
    BadGeoRef(String),
    #[error("payload has {got} values, expected {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("non-finite raster value at index {0}")]
    NonFinite(usize),
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error("not a PLRG raster (bad magic bytes)")]
    BadMagic,
    #[error("unsupported PLRG version {0}")]
    BadVersion(u16),
    #[error("raster file is truncated")]
    TruncatedFile,
    #[error("raster file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;

/// Axis-aligned world rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl Extent {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

/// Placement of a raster in world space. `origin_*` is the north-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoRef {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GeoRef {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size: f64, width: usize, height: usize) -> Result<Self> {
        let g = GeoRef { origin_x, origin_y, pixel_size, width, height };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(RasterError::BadGeoRef(format!("pixel_size must be > 0, got {}", self.pixel_size)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::BadGeoRef(format!("empty raster {}x{}", self.width, self.height)));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(RasterError::BadGeoRef("non-finite origin".into()));
        }
        Ok(())
    }

    /// Continuous pixel coordinates to world coordinates.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (self.origin_x + col * self.pixel_size, self.origin_y - row * self.pixel_size)
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin_x) / self.pixel_size, (self.origin_y - y) / self.pixel_size)
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }

    pub fn extent(&self) -> Extent {
        Extent {
            min_x: self.origin_x,
            max_x: self.origin_x + self.width as f64 * self.pixel_size,
            min_y: self.origin_y - self.height as f64 * self.pixel_size,
            max_y: self.origin_y,
        }
    }
}

/// Bilinear stencil: two columns, two rows and their fractional weights.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    c0: usize,
    c1: usize,
    r0: usize,
    r1: usize,
    tc: f64,
    tr: f64,
}

/// Row-major, channel-interleaved float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub georef: GeoRef,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl RasterGrid {
    pub fn new(georef: GeoRef, channels: usize, data: Vec<f32>) -> Result<Self> {
        georef.validate()?;
        if channels == 0 {
            return Err(RasterError::BadGeoRef("raster needs at least one channel".into()));
        }
        let expected = georef.width * georef.height * channels;
        if data.len() != expected {
            return Err(RasterError::BadLength { got: data.len(), expected });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite(i));
        }
        Ok(RasterGrid { georef, channels, data })
    }

    pub fn filled(georef: GeoRef, channels: usize, value: f32) -> Result<Self> {
        let n = georef.width * georef.height * channels;
        Self::new(georef, channels, vec![value; n])
    }

    pub fn width(&self) -> usize {
        self.georef.width
    }

    pub fn height(&self) -> usize {
        self.georef.height
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize, channel: usize) -> usize {
        (row * self.georef.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, channel: usize) -> f32 {
        self.data[self.index(col, row, channel)]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, channel: usize, value: f32) {
        let i = self.index(col, row, channel);
        self.data[i] = value;
    }

    pub fn extent(&self) -> Extent {
        self.georef.extent()
    }

    /// Bilinear interpolation between the four surrounding pixel centres.
    pub fn sample_bilinear(&self, x: f64, y: f64, channel: usize) -> Result<f32> {
        if channel >= self.channels {
            return Err(RasterError::BadChannel { channel, channels: self.channels });
        }
        if !self.extent().contains(x, y) {
            return Err(RasterError::OutOfBounds { x, y });
        }
        Ok(self.sample_clamped(x, y, channel))
    }

    /// Bilinear sample with the query clamped onto the outermost pixel
    /// centres, so points beyond the extent take the edge value.
    pub fn sample_clamped(&self, x: f64, y: f64, channel: usize) -> f32 {
        let s = self.stencil(x, y);
        self.apply(&s, channel) as f32
    }

    /// Clamped bilinear sample of every channel into `out`.
    pub fn sample_clamped_all(&self, x: f64, y: f64, out: &mut [f32]) {
        let s = self.stencil(x, y);
        for (ch, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = self.apply(&s, ch) as f32;
        }
    }

    fn stencil(&self, x: f64, y: f64) -> Stencil {
        let (pc, pr) = self.georef.world_to_pixel(x, y);
        let max_c = (self.georef.width - 1) as f64;
        let max_r = (self.georef.height - 1) as f64;
        let fc = (pc - 0.5).clamp(0.0, max_c);
        let fr = (pr - 0.5).clamp(0.0, max_r);
        let c0 = fc.floor() as usize;
        let r0 = fr.floor() as usize;
        Stencil {
            c0,
            c1: (c0 + 1).min(self.georef.width - 1),
            r0,
            r1: (r0 + 1).min(self.georef.height - 1),
            tc: fc - c0 as f64,
            tr: fr - r0 as f64,
        }
    }

    #[inline]
    fn apply(&self, s: &Stencil, ch: usize) -> f64 {
        let v00 = self.get(s.c0, s.r0, ch) as f64;
        let v10 = self.get(s.c1, s.r0, ch) as f64;
        let v01 = self.get(s.c0, s.r1, ch) as f64;
        let v11 = self.get(s.c1, s.r1, ch) as f64;
        let top = v00 + (v10 - v00) * s.tc;
        let bottom = v01 + (v11 - v01) * s.tc;
        top + (bottom - top) * s.tr
    }

    /// Per-channel arithmetic mean.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += *v as f64;
            }
        }
        let n = (self.georef.width * self.georef.height) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&RASTER_MAGIC);
        out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.georef.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.georef.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u16).to_le_bytes());
        out.extend_from_slice(&self.georef.origin_x.to_le_bytes());
        out.extend_from_slice(&self.georef.origin_y.to_le_bytes());
        out.extend_from_slice(&self.georef.pixel_size.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(RasterError::TruncatedFile);
        }
        if bytes[..4] != RASTER_MAGIC {
            return Err(RasterError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(RasterError::TruncatedFile);
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != RASTER_VERSION {
            return Err(RasterError::BadVersion(version));
        }
        let width = u32_at(6) as usize;
        let height = u32_at(10) as usize;
        let channels = u16_at(14) as usize;
        let georef = GeoRef::new(f64_at(16), f64_at(24), f64_at(32), width, height)?;
        let n = width * height * channels;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < n * 4 {
            return Err(RasterError::TruncatedFile);
        }
        if payload.len() > n * 4 {
            return Err(RasterError::TrailingBytes(payload.len() - n * 4));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(georef, channels, data)
    }
}

pub fn write_raster(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, grid.to_bytes())?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterGrid> {
    RasterGrid::from_bytes(&fs::read(path)?)
}

/// Co-registered satellite (RGB) and elevation rasters.
#[derive(Debug, Clone)]
pub struct Scene {
    pub satellite: RasterGrid,
    pub elevation: RasterGrid,
    /// RGB value used for satellite reads outside the scene.
    pub satellite_fill: [f32; 3],
}

impl Scene {
    /// Builds a scene; the satellite fill defaults to its per-channel mean.
    pub fn new(satellite: RasterGrid, elevation: RasterGrid) -> Result<Self> {
        if satellite.channels != 3 {
            return Err(RasterError::DegenerateScene(format!(
                "satellite raster must have 3 channels, has {}",
                satellite.channels
            )));
        }
        if elevation.channels != 1 {
            return Err(RasterError::DegenerateScene(format!(
                "elevation raster must have 1 channel, has {}",
                elevation.channels
            )));
        }
        let (a, b) = (satellite.extent(), elevation.extent());
        let tol = elevation.georef.pixel_size.max(satellite.georef.pixel_size);
        let misfit = [
            (a.min_x - b.min_x).abs(),
            (a.max_x - b.max_x).abs(),
            (a.min_y - b.min_y).abs(),
            (a.max_y - b.max_y).abs(),
        ];
        if misfit.iter().any(|m| *m > tol + 1e-9) {
            return Err(RasterError::DegenerateScene(format!(
                "satellite {a:?} and elevation {b:?} extents differ by more than one coarse pixel"
            )));
        }
        let m = satellite.channel_means();
        let fill = [m[0] as f32, m[1] as f32, m[2] as f32];
        Ok(Scene { satellite, elevation, satellite_fill: fill })
    }

    pub fn with_fill(mut self, fill: [f32; 3]) -> Self {
        self.satellite_fill = fill;
        self
    }

    pub fn bounds(&self) -> Extent {
        self.satellite.extent()
    }

    /// Terrain height at a world point, edge-clamped outside the raster.
    pub fn elevation_at(&self, x: f64, y: f64) -> f64 {
        self.elevation.sample_clamped(x, y, 0) as f64
    }

    /// RGB + elevation at a world point using the out-of-bounds fill policy.
    #[inline]
    pub fn sample_env(&self, x: f64, y: f64, out: &mut [f32; 4]) {
        if self.satellite.extent().contains(x, y) {
            self.satellite.sample_clamped_all(x, y, &mut out[..3]);
        } else {
            out[..3].copy_from_slice(&self.satellite_fill);
        }
        out[3] = self.elevation.sample_clamped(x, y, 0);
    }
}

/// Axis-aligned `size_px x size_px` RGB + elevation patch centred on `center`.
pub fn extract_patch(scene: &Scene, center: (f64, f64), size_px: usize, out_pixel_size: f64) -> Result<RasterGrid> {
    let b = scene.bounds();
    if !(b.width() > 0.0 && b.height() > 0.0) {
        return Err(RasterError::DegenerateScene("scene extent is empty".into()));
    }
    if size_px == 0 {
        return Err(RasterError::BadGeoRef("patch size must be >= 1 px".into()));
    }
    let half = size_px as f64 * out_pixel_size / 2.0;
    let georef = GeoRef::new(center.0 - half, center.1 + half, out_pixel_size, size_px, size_px)?;
    let mut data = vec![0.0f32; size_px * size_px * 4];
    let mut px = [0.0f32; 4];
    for row in 0..size_px {
        for col in 0..size_px {
            let (x, y) = georef.pixel_center(col, row);
            scene.sample_env(x, y, &mut px);
            let i = (row * size_px + col) * 4;
            data[i..i + 4].copy_from_slice(&px);
        }
    }
    RasterGrid::new(georef, 4, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, ps: f64, data: Vec<f32>) -> RasterGrid {
        RasterGrid::new(GeoRef::new(0.0, h as f64 * ps, ps, w, h).unwrap(), 1, data).unwrap()
    }

    fn const_scene(rgb: [f32; 3], elev: f32, size: usize) -> Scene {
        let g = GeoRef::new(0.0, size as f64, 1.0, size, size).unwrap();
        let mut sat = Vec::with_capacity(size * size * 3);
        for _ in 0..size * size {
            sat.extend_from_slice(&rgb);
        }
        let sat = RasterGrid::new(g, 3, sat).unwrap();
        let eg = GeoRef::new(0.0, size as f64, size as f64 / 4.0, 4, 4).unwrap();
        let el = RasterGrid::filled(eg, 1, elev).unwrap();
        Scene::new(sat, el).unwrap()
    }

    #[test]
    fn constant_grid_samples_constant() {
        let g = grid(5, 4, 2.0, vec![7.0; 20]);
        for (x, y) in [(0.0, 0.0), (3.3, 7.9), (10.0, 8.0), (5.0, 4.0)] {
            assert_eq!(g.sample_bilinear(x, y, 0).unwrap(), 7.0);
        }
    }

    #[test]
    fn exact_at_pixel_centres() {
        let data: Vec<f32> = (0..12).map(|v| v as f32 * 0.5).collect();
        let g = grid(4, 3, 1.0, data);
        let (x, y) = g.georef.pixel_center(3, 1);
        assert_eq!(g.sample_bilinear(x, y, 0).unwrap(), g.get(3, 1, 0));
        assert_eq!(g.get(3, 1, 0), 3.5);
    }

    #[test]
    fn two_by_two_centre_is_quarter() {
        // rows: {0, 0; 0, 1}
        let g = grid(2, 2, 1.0, vec![0.0, 0.0, 0.0, 1.0]);
        assert!((g.sample_bilinear(1.0, 1.0, 0).unwrap() - 0.25).abs() < 1e-7);
    }

    #[test]
    fn sampling_errors() {
        let g = grid(2, 2, 1.0, vec![0.0; 4]);
        assert!(matches!(g.sample_bilinear(2.5, 1.0, 0), Err(RasterError::OutOfBounds { .. })));
        assert!(matches!(g.sample_bilinear(1.0, 1.0, 1), Err(RasterError::BadChannel { .. })));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(GeoRef::new(0.0, 0.0, 0.0, 1, 1).is_err());
        assert!(GeoRef::new(0.0, 0.0, 1.0, 0, 1).is_err());
        let g = GeoRef::new(0.0, 0.0, 1.0, 1, 1).unwrap();
        assert!(matches!(RasterGrid::new(g, 1, vec![1.0, 2.0]), Err(RasterError::BadLength { .. })));
        assert!(matches!(RasterGrid::new(g, 1, vec![f32::NAN]), Err(RasterError::NonFinite(0))));
    }

    #[test]
    fn patch_inside_constant_scene() {
        let s = const_scene([0.2, 0.4, 0.6], 12.0, 64);
        let p = extract_patch(&s, (32.0, 32.0), 16, 1.0).unwrap();
        for px in p.data.chunks_exact(4) {
            assert_eq!(px, &[0.2, 0.4, 0.6, 12.0]);
        }
    }

    #[test]
    fn patch_on_corner_uses_fill() {
        let size = 32;
        let g = GeoRef::new(0.0, size as f64, 1.0, size, size).unwrap();
        let sat: Vec<f32> = (0..size * size * 3).map(|i| (i % 7) as f32).collect();
        let sat = RasterGrid::new(g, 3, sat).unwrap();
        let eg = GeoRef::new(0.0, size as f64, 8.0, 4, 4).unwrap();
        let el: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let scene = Scene::new(sat, RasterGrid::new(eg, 1, el).unwrap()).unwrap().with_fill([-1.0, -2.0, -3.0]);
        // lower-left corner of the scene is (0, 0)
        let p = extract_patch(&scene, (0.0, 0.0), 8, 1.0).unwrap();
        let corner_elev = scene.elevation.get(0, 3, 0);
        for row in 0..8 {
            for col in 0..8 {
                let inside = col >= 4 && row < 4;
                if !inside {
                    assert_eq!(&p.data[p.index(col, row, 0)..p.index(col, row, 0) + 3], &[-1.0, -2.0, -3.0]);
                }
                if col < 4 && row >= 4 {
                    // fully outside: elevation clamps to the corner pixel
                    assert_eq!(p.get(col, row, 3), corner_elev);
                }
            }
        }
    }

    #[test]
    fn patch_extent_arithmetic() {
        let s = const_scene([0.0; 3], 0.0, 512);
        let p = extract_patch(&s, (300.0, 200.0), 256, 1.0).unwrap();
        let e = p.extent();
        assert_eq!((e.min_x, e.max_x, e.min_y, e.max_y), (172.0, 428.0, 72.0, 328.0));
        assert_eq!((p.width(), p.height(), p.channels), (256, 256, 4));
    }

    #[test]
    fn patch_translation_consistent() {
        let size = 64;
        let g = GeoRef::new(0.0, size as f64, 1.0, size, size).unwrap();
        let sat: Vec<f32> = (0..size * size * 3).map(|i| ((i * 37) % 101) as f32).collect();
        let sat = RasterGrid::new(g, 3, sat).unwrap();
        let el = RasterGrid::filled(GeoRef::new(0.0, size as f64, 16.0, 4, 4).unwrap(), 1, 3.0).unwrap();
        let scene = Scene::new(sat, el).unwrap();
        let a = extract_patch(&scene, (30.0, 30.0), 10, 1.0).unwrap();
        let k = 3;
        let b = extract_patch(&scene, (30.0 + k as f64, 30.0), 10, 1.0).unwrap();
        for row in 0..10 {
            for col in 0..10 - k {
                for ch in 0..3 {
                    assert_eq!(a.get(col + k, row, ch), b.get(col, row, ch));
                }
            }
        }
    }

    #[test]
    fn small_round_trip_and_bad_magic() {
        let g = grid(2, 2, 1.5, vec![1.0, -2.5, 3.25, 1e-7]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.plrg");
        write_raster(&g, &path).unwrap();
        assert_eq!(read_raster(&path).unwrap(), g);

        let mut bytes = g.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(RasterGrid::from_bytes(&bytes), Err(RasterError::BadMagic)));
        let mut bytes = g.to_bytes();
        bytes[4] = 9;
        assert!(matches!(RasterGrid::from_bytes(&bytes), Err(RasterError::BadVersion(9))));
        let bytes = g.to_bytes();
        assert!(matches!(RasterGrid::from_bytes(&bytes[..bytes.len() - 1]), Err(RasterError::TruncatedFile)));
        assert!(matches!(RasterGrid::from_bytes(&bytes[..20]), Err(RasterError::TruncatedFile)));
    }

    #[test]
    fn header_layout_is_fixed() {
        let g = grid(2, 1, 0.5, vec![1.0, 2.0]);
        let b = g.to_bytes();
        assert_eq!(b.len(), 40 + 8);
        assert_eq!(&b[..4], b"PLRG");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[10..14].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes([b[14], b[15]]), 1);
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), 0.5);
        assert_eq!(f32::from_le_bytes(b[40..44].try_into().unwrap()), 1.0);
    }

    proptest! {
        #[test]
        fn world_pixel_round_trip(ox in -1e4f64..1e4, oy in -1e4f64..1e4, ps in 0.1f64..50.0,
                                  col in 0.0f64..100.0, row in 0.0f64..100.0) {
            let g = GeoRef::new(ox, oy, ps, 100, 100).unwrap();
            let (x, y) = g.pixel_to_world(col, row);
            let (c, r) = g.world_to_pixel(x, y);
            prop_assert!((c - col).abs() < 1e-9 && (r - row).abs() < 1e-9);
        }

        #[test]
        fn bilinear_is_convex(vals in proptest::collection::vec(-100.0f32..100.0, 16),
                              fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
            let g = grid(4, 4, 2.0, vals);
            let (x, y) = (fx * 8.0, fy * 8.0);
            let v = g.sample_bilinear(x, y, 0).unwrap();
            let (pc, pr) = g.georef.world_to_pixel(x, y);
            let c0 = (pc - 0.5).clamp(0.0, 3.0).floor() as usize;
            let r0 = (pr - 0.5).clamp(0.0, 3.0).floor() as usize;
            let nb = [g.get(c0, r0, 0), g.get((c0 + 1).min(3), r0, 0),
                      g.get(c0, (r0 + 1).min(3), 0), g.get((c0 + 1).min(3), (r0 + 1).min(3), 0)];
            let lo = nb.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = nb.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(v >= lo - 1e-4 && v <= hi + 1e-4);
        }

        #[test]
        fn raster_round_trip_is_bitwise(w in 1usize..12, h in 1usize..12, c in 1usize..5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..w * h * c).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
            let g = RasterGrid::new(GeoRef::new(rng.gen(), rng.gen(), 0.25, w, h).unwrap(), c, data).unwrap();
            let back = RasterGrid::from_bytes(&g.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), g.to_bytes());
        }
    }
}
