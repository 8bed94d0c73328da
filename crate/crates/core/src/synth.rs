//! Procedural suburban scenes, measurement routes and a propagation oracle.
//!
//! Terrain is a sum of Gaussian hills over a smooth value-noise floor. A
//! land-cover map drives both the rendered satellite colours and the
//! per-class path loss exponent used by the oracle, so a single global CI
//! fit leaves structured, image-explainable residuals.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ci::{self, CiError};
use crate::raster::{GeoRef, RasterError, RasterGrid, Scene};

pub const CONFIG_VERSION: u32 = 1;
const LANDCOVER_CELL_M: f64 = 10.0;

const SCENE_STREAM: u64 = 0;
const ROUTE_STREAM: u64 = 1;
const SHADOW_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("degenerate link: 3D distance {0} m is below the 1 m reference")]
    DegenerateLink(f64),
    #[error("dataset row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxPolicy {
    Hilltop,
    Fixed { x: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub version: u32,
    pub seed: u64,
    pub extent_m: f64,
    pub satellite_pixel_m: f64,
    pub elevation_pixel_m: f64,
    pub n_hills: usize,
    pub hill_height_range: [f64; 2],
    /// Peak-to-peak amplitude of the smooth terrain noise floor.
    pub noise_floor_m: f64,
    pub landcover_classes: usize,
    pub n_routes: usize,
    pub samples_per_route: usize,
    pub sample_spacing_m: f64,
    pub tx_policy: TxPolicy,
    pub tx_mast_m: f64,
    pub rx_antenna_m: f64,
    pub noise_sigma_db: f64,
    pub frequency_hz: f64,
    /// Route fractions for (train, val, test).
    pub route_split: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            version: CONFIG_VERSION,
            seed: crate::REFERENCE_SEED,
            extent_m: 2000.0,
            satellite_pixel_m: 1.0,
            elevation_pixel_m: 35.0,
            n_hills: 4,
            hill_height_range: [40.0, 140.0],
            noise_floor_m: 6.0,
            landcover_classes: 4,
            n_routes: 40,
            samples_per_route: 75,
            sample_spacing_m: 8.0,
            tx_policy: TxPolicy::Hilltop,
            tx_mast_m: 30.0,
            rx_antenna_m: 1.5,
            noise_sigma_db: 3.0,
            frequency_hz: 1.21e9,
            route_split: [0.6, 0.2, 0.2],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("version: expected {CONFIG_VERSION}, got {}", self.version));
        }
        for (name, v) in [
            ("extent_m", self.extent_m),
            ("satellite_pixel_m", self.satellite_pixel_m),
            ("elevation_pixel_m", self.elevation_pixel_m),
            ("sample_spacing_m", self.sample_spacing_m),
            ("frequency_hz", self.frequency_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("tx_mast_m", self.tx_mast_m),
            ("rx_antenna_m", self.rx_antenna_m),
            ("noise_sigma_db", self.noise_sigma_db),
            ("noise_floor_m", self.noise_floor_m),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.elevation_pixel_m < self.satellite_pixel_m {
            return bad("elevation_pixel_m must be at least satellite_pixel_m".into());
        }
        let [lo, hi] = self.hill_height_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("hill_height_range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"));
        }
        if !(1..=4).contains(&self.landcover_classes) {
            return bad(format!("landcover_classes must be in 1..=4, got {}", self.landcover_classes));
        }
        if self.n_routes == 0 {
            return bad("n_routes must be >= 1".into());
        }
        if self.samples_per_route == 0 {
            return bad("samples_per_route must be >= 1".into());
        }
        if self.route_split.iter().any(|f| !(*f >= 0.0)) || (self.route_split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("route_split must be non-negative and sum to 1, got {:?}", self.route_split));
        }
        if let TxPolicy::Fixed { x, y } = self.tx_policy {
            if !(0.0..=self.extent_m).contains(&x) || !(0.0..=self.extent_m).contains(&y) {
                return bad(format!("fixed tx ({x}, {y}) outside the scene"));
            }
        }
        Ok(())
    }

    /// Parses a JSON config; unknown keys and schema errors carry line/column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SynthConfig = serde_json::from_str(text).map_err(|e| SynthError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandCover {
    Water = 0,
    Field = 1,
    Forest = 2,
    BuiltUp = 3,
}

impl LandCover {
    pub const ALL: [LandCover; 4] = [LandCover::Water, LandCover::Field, LandCover::Forest, LandCover::BuiltUp];

    /// Path loss exponent contributed by this cover class.
    pub fn ple(self) -> f64 {
        match self {
            LandCover::Water => 2.0,
            LandCover::Field => 2.6,
            LandCover::Forest => 3.4,
            LandCover::BuiltUp => 3.9,
        }
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            LandCover::Water => [0.10, 0.20, 0.45],
            LandCover::Field => [0.55, 0.62, 0.30],
            LandCover::Forest => [0.12, 0.35, 0.12],
            LandCover::BuiltUp => [0.62, 0.60, 0.58],
        }
    }

    pub fn from_index(i: usize) -> LandCover {
        Self::ALL[i.min(3)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hill {
    pub x: f64,
    pub y: f64,
    pub height_m: f64,
    pub sigma_m: f64,
}

/// World point with absolute altitude (terrain plus antenna height).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn distance(&self, o: &Point3) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2) + (self.z - o.z).powi(2)).sqrt()
    }

    pub fn horizontal_distance(&self, o: &Point3) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// A generated scene plus the ground truth the oracle needs.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: Scene,
    /// One channel of [`LandCover`] indices stored as f32.
    pub landcover: RasterGrid,
    pub hills: Vec<Hill>,
}

impl SynthScene {
    pub fn landcover_at(&self, x: f64, y: f64) -> LandCover {
        let g = &self.landcover.georef;
        let (c, r) = g.world_to_pixel(x, y);
        let c = (c.floor().max(0.0) as usize).min(g.width - 1);
        let r = (r.floor().max(0.0) as usize).min(g.height - 1);
        LandCover::from_index(self.landcover.get(c, r, 0) as usize)
    }
}

/// Smooth value noise on a square lattice, values in [0, 1).
struct ValueNoise {
    n: usize,
    cell: f64,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut impl Rng, extent: f64, cell: f64) -> Self {
        let n = (extent / cell).ceil() as usize + 2;
        let values = (0..n * n).map(|_| rng.gen::<f64>()).collect();
        ValueNoise { n, cell, values }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x / self.cell).clamp(0.0, (self.n - 2) as f64);
        let fy = (y / self.cell).clamp(0.0, (self.n - 2) as f64);
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
        let v = |i: usize, j: usize| self.values[j * self.n + i];
        let a = v(ix, iy) + (v(ix + 1, iy) - v(ix, iy)) * tx;
        let b = v(ix, iy + 1) + (v(ix + 1, iy + 1) - v(ix, iy + 1)) * tx;
        a + (b - a) * ty
    }
}

/// Deterministic per-pixel texture in [-1, 1].
fn hash_noise(a: u64, b: u64, seed: u64) -> f32 {
    let mut h = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ seed;
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    ((h >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
}

fn sample_hills(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Hill> {
    let e = cfg.extent_m;
    let mut hills: Vec<Hill> = Vec::with_capacity(cfg.n_hills);
    for _ in 0..cfg.n_hills {
        let mut candidate = None;
        for _attempt in 0..500 {
            let h = Hill {
                x: rng.gen_range(0.15..0.85) * e,
                y: rng.gen_range(0.15..0.85) * e,
                height_m: rng.gen_range(cfg.hill_height_range[0]..=cfg.hill_height_range[1]),
                sigma_m: rng.gen_range(e / 18.0..e / 10.0),
            };
            let separated = hills
                .iter()
                .all(|o| (o.x - h.x).hypot(o.y - h.y) >= 3.0 * o.sigma_m.max(h.sigma_m));
            candidate = Some(h);
            if separated {
                break;
            }
        }
        hills.extend(candidate);
    }
    hills
}

/// Builds elevation, land cover and satellite rasters, deterministic in `cfg.seed`.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SCENE_STREAM);
    let e = cfg.extent_m;

    let hills = sample_hills(cfg, &mut rng);
    let floor = ValueNoise::new(&mut rng, e, e / 6.0);
    let cover_noise = ValueNoise::new(&mut rng, e, e / 7.0);
    let water_noise = ValueNoise::new(&mut rng, e, e / 5.0);
    let texture_seed: u64 = rng.gen();

    let terrain = |x: f64, y: f64| -> f64 {
        let mut z = cfg.noise_floor_m * floor.sample(x, y);
        for h in &hills {
            let r2 = (x - h.x).powi(2) + (y - h.y).powi(2);
            z += h.height_m * (-r2 / (2.0 * h.sigma_m * h.sigma_m)).exp();
        }
        z
    };

    let ne = (e / cfg.elevation_pixel_m).ceil() as usize;
    let eg = GeoRef::new(0.0, ne as f64 * cfg.elevation_pixel_m, cfg.elevation_pixel_m, ne, ne)?;
    let mut elev = Vec::with_capacity(ne * ne);
    for row in 0..ne {
        for col in 0..ne {
            let (x, y) = eg.pixel_center(col, row);
            elev.push(terrain(x, y) as f32);
        }
    }
    let elevation = RasterGrid::new(eg, 1, elev)?;

    // Land cover: forest favoured on high ground, built-up on low ground,
    // thresholds at quantiles so every class is represented.
    let nl = (e / LANDCOVER_CELL_M).ceil() as usize;
    let lg = GeoRef::new(0.0, nl as f64 * LANDCOVER_CELL_M, LANDCOVER_CELL_M, nl, nl)?;
    let (zmin, zmax) = elevation
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v as f64), b.max(*v as f64)));
    let zspan = (zmax - zmin).max(1e-9);
    let has_water = cfg.landcover_classes == 4;
    let land: Vec<LandCover> = match cfg.landcover_classes {
        1 => vec![LandCover::Field],
        2 => vec![LandCover::Field, LandCover::Forest],
        _ => vec![LandCover::BuiltUp, LandCover::Field, LandCover::Forest],
    };
    let mut score = Vec::with_capacity(nl * nl);
    let mut water = Vec::with_capacity(nl * nl);
    for row in 0..nl {
        for col in 0..nl {
            let (x, y) = lg.pixel_center(col, row);
            let zn = (elevation.sample_clamped(x, y, 0) as f64 - zmin) / zspan;
            score.push(0.55 * cover_noise.sample(x, y) + 0.45 * zn);
            water.push(has_water && water_noise.sample(x, y) < 0.22 && zn < 0.25);
        }
    }
    let mut sorted: Vec<f64> = score.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thresholds: Vec<f64> = (1..land.len()).map(|k| sorted[k * sorted.len() / land.len()]).collect();
    let classes: Vec<f32> = score
        .iter()
        .zip(&water)
        .map(|(s, w)| {
            if *w {
                LandCover::Water as usize as f32
            } else {
                let k = thresholds.iter().filter(|t| *s >= **t).count();
                land[k] as usize as f32
            }
        })
        .collect();
    let landcover = RasterGrid::new(lg, 1, classes)?;

    let ns = (e / cfg.satellite_pixel_m).ceil() as usize;
    let sg = GeoRef::new(0.0, ns as f64 * cfg.satellite_pixel_m, cfg.satellite_pixel_m, ns, ns)?;
    let mut sat = vec![0.0f32; ns * ns * 3];
    let lookup = |x: f64, y: f64| {
        let c = ((x / LANDCOVER_CELL_M).floor().max(0.0) as usize).min(nl - 1);
        let r = (((lg.origin_y - y) / LANDCOVER_CELL_M).floor().max(0.0) as usize).min(nl - 1);
        LandCover::from_index(landcover.get(c, r, 0) as usize)
    };
    for row in 0..ns {
        for col in 0..ns {
            let (x, y) = sg.pixel_center(col, row);
            let class = lookup(x, y);
            let mut rgb = class.rgb();
            let mut amp = 0.04;
            if class == LandCover::BuiltUp {
                // roof blocks on a 20 m grid
                let roof = (x.rem_euclid(20.0) < 12.0) && (y.rem_euclid(20.0) < 12.0);
                if roof {
                    rgb = [0.78, 0.42, 0.36];
                }
                amp = 0.06;
            }
            let n = hash_noise(col as u64, row as u64, texture_seed) * amp;
            let i = (row * ns + col) * 3;
            for k in 0..3 {
                sat[i + k] = (rgb[k] + n).clamp(0.0, 1.0);
            }
        }
    }
    let satellite = RasterGrid::new(sg, 3, sat)?;
    Ok(SynthScene { scene: Scene::new(satellite, elevation)?, landcover, hills })
}

/// Single knife-edge loss `J(nu)` in dB.
pub fn knife_edge_loss_db(nu: f64) -> f64 {
    if nu < -0.78 {
        0.0
    } else {
        6.9 + 20.0 * (((nu - 0.1).powi(2) + 1.0).sqrt() + nu - 0.1).log10()
    }
}

/// Per-link breakdown of the oracle's deterministic part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleTerms {
    pub d3d_m: f64,
    pub env_ple: f64,
    pub max_nu: f64,
    pub diffraction_db: f64,
    pub dominant_cover: LandCover,
}

/// Environment exponent and worst knife-edge obstruction along the Tx-Rx profile.
pub fn oracle_terms(synth: &SynthScene, tx: &Point3, rx: &Point3, frequency_hz: f64) -> Result<OracleTerms> {
    let d3d = tx.distance(rx);
    if !(d3d >= 1.0) {
        return Err(SynthError::DegenerateLink(d3d));
    }
    let step = synth.scene.satellite.georef.pixel_size.max(d3d / 512.0);
    let n = ((d3d / step).ceil() as usize).max(1);
    let wavelength = crate::SPEED_OF_LIGHT / frequency_hz;
    let at = |t: f64| (tx.x + t * (rx.x - tx.x), tx.y + t * (rx.y - tx.y));

    let mut counts = [0usize; 4];
    for i in 0..n {
        let (x, y) = at((i as f64 + 0.5) / n as f64);
        counts[synth.landcover_at(x, y) as usize] += 1;
    }
    let env_ple = counts.iter().enumerate().map(|(k, c)| LandCover::from_index(k).ple() * *c as f64).sum::<f64>() / n as f64;
    let dominant = (0..4).max_by_key(|k| (counts[*k], std::cmp::Reverse(*k))).unwrap();

    let mut max_nu = f64::NEG_INFINITY;
    for i in 1..n {
        let t = i as f64 / n as f64;
        let (x, y) = at(t);
        let h = synth.scene.elevation_at(x, y) - (tx.z + t * (rx.z - tx.z));
        let (d1, d2) = (t * d3d, (1.0 - t) * d3d);
        let nu = h * (2.0 * (d1 + d2) / (wavelength * d1 * d2)).sqrt();
        max_nu = max_nu.max(nu);
    }
    let diffraction_db = if max_nu.is_finite() { knife_edge_loss_db(max_nu) } else { 0.0 };
    Ok(OracleTerms {
        d3d_m: d3d,
        env_ple,
        max_nu,
        diffraction_db,
        dominant_cover: LandCover::from_index(dominant),
    })
}

/// Ground-truth path loss: CI trend with a land-cover exponent, knife-edge
/// diffraction and Gaussian shadowing. Always draws one normal variate.
pub fn oracle_path_loss(
    synth: &SynthScene,
    tx: &Point3,
    rx: &Point3,
    frequency_hz: f64,
    noise_sigma_db: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let t = oracle_terms(synth, tx, rx, frequency_hz)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(ci::fspl(frequency_hz, 1.0)? + 10.0 * t.env_ple * t.d3d_m.log10() + t.diffraction_db + noise_sigma_db * z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub route_id: u32,
    pub split: Split,
    pub tx: Point3,
    pub rx: Point3,
    pub frequency_hz: f64,
    pub d3d_m: f64,
    pub path_loss_db: f64,
}

/// Splits `total` items by `fractions` with largest-remainder rounding;
/// ties go to the earlier split.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| (r + 1e-9).floor() as usize).collect();
    let mut left = total.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - counts[a] as f64;
        let fb = raw[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

pub fn transmitter_position(cfg: &SynthConfig, synth: &SynthScene) -> Point3 {
    let (x, y) = match cfg.tx_policy {
        TxPolicy::Fixed { x, y } => (x, y),
        TxPolicy::Hilltop => {
            let el = &synth.scene.elevation;
            let best = (0..el.data.len()).fold(0, |b, i| if el.data[i] > el.data[b] { i } else { b });
            el.georef.pixel_center(best % el.width(), best / el.width())
        }
    };
    Point3::new(x, y, synth.scene.elevation_at(x, y) + cfg.tx_mast_m)
}

/// Random smooth routes; whole routes are assigned to one split.
pub fn generate_dataset(cfg: &SynthConfig, synth: &SynthScene) -> Result<Vec<LinkSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(ROUTE_STREAM);
    let mut shadow = ChaCha8Rng::seed_from_u64(cfg.seed);
    shadow.set_stream(SHADOW_STREAM);

    let counts = largest_remainder(cfg.n_routes, &cfg.route_split);
    let mut order: Vec<u32> = (0..cfg.n_routes as u32).collect();
    order.shuffle(&mut rng);
    let mut split_of = vec![Split::Train; cfg.n_routes];
    let mut k = 0;
    for (split, count) in Split::ALL.iter().zip(&counts) {
        for _ in 0..*count {
            split_of[order[k] as usize] = *split;
            k += 1;
        }
    }

    let tx = transmitter_position(cfg, synth);
    let e = cfg.extent_m;
    let (lo, hi) = (0.05 * e, 0.95 * e);
    let mut out = Vec::with_capacity(cfg.n_routes * cfg.samples_per_route);
    for route in 0..cfg.n_routes {
        let mut x = rng.gen_range(0.1..0.9) * e;
        let mut y = rng.gen_range(0.1..0.9) * e;
        let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        for _ in 0..cfg.samples_per_route {
            let rx = Point3::new(x, y, synth.scene.elevation_at(x, y) + cfg.rx_antenna_m);
            let pl = oracle_path_loss(synth, &tx, &rx, cfg.frequency_hz, cfg.noise_sigma_db, &mut shadow)?;
            out.push(LinkSample {
                route_id: route as u32,
                split: split_of[route],
                tx,
                rx,
                frequency_hz: cfg.frequency_hz,
                d3d_m: tx.distance(&rx),
                path_loss_db: pl,
            });
            heading += 0.12 * rng.sample::<f64, _>(StandardNormal);
            let (mut nx, mut ny) = (x + cfg.sample_spacing_m * heading.cos(), y + cfg.sample_spacing_m * heading.sin());
            if !(lo..=hi).contains(&nx) || !(lo..=hi).contains(&ny) {
                heading += std::f64::consts::PI;
                nx = (x + cfg.sample_spacing_m * heading.cos()).clamp(lo, hi);
                ny = (y + cfg.sample_spacing_m * heading.sin()).clamp(lo, hi);
            }
            x = nx;
            y = ny;
        }
    }
    Ok(out)
}

/// Distance travelled along each route, in dataset order.
pub fn chainage(samples: &[LinkSample]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut last: Option<(u32, Point3, f64)> = None;
    for s in samples {
        let c = match last {
            Some((r, p, c)) if r == s.route_id => c + p.horizontal_distance(&s.rx),
            _ => 0.0,
        };
        out.push(c);
        last = Some((s.route_id, s.rx, c));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    route_id: u32,
    split: Split,
    tx_x: f64,
    tx_y: f64,
    tx_alt: f64,
    rx_x: f64,
    rx_y: f64,
    rx_alt: f64,
    freq_hz: f64,
    d3d_m: f64,
    pl_db: f64,
}

pub fn write_dataset(samples: &[LinkSample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(Row {
            route_id: s.route_id,
            split: s.split,
            tx_x: s.tx.x,
            tx_y: s.tx.y,
            tx_alt: s.tx.z,
            rx_x: s.rx.x,
            rx_y: s.rx.y,
            rx_alt: s.rx.z,
            freq_hz: s.frequency_hz,
            d3d_m: s.d3d_m,
            pl_db: s.path_loss_db,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset table, rejecting links below the 1 m reference distance.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<LinkSample>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row?;
        let tx = Point3::new(row.tx_x, row.tx_y, row.tx_alt);
        let rx = Point3::new(row.rx_x, row.rx_y, row.rx_alt);
        let d = tx.distance(&rx);
        let bad = |msg: String| SynthError::BadRow { row: i + 1, msg };
        if (d - row.d3d_m).abs() > 1e-6 {
            return Err(bad(format!("d3d_m {} disagrees with endpoints ({d})", row.d3d_m)));
        }
        if row.d3d_m < 1.0 {
            return Err(bad(format!("d3d_m {} is below the 1 m reference distance", row.d3d_m)));
        }
        if !row.pl_db.is_finite() || !(row.freq_hz > 0.0) {
            return Err(bad("non-finite path loss or non-positive frequency".into()));
        }
        out.push(LinkSample {
            route_id: row.route_id,
            split: row.split,
            tx,
            rx,
            frequency_hz: row.freq_hz,
            d3d_m: row.d3d_m,
            path_loss_db: row.pl_db,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, HashSet};

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            extent_m: 600.0,
            satellite_pixel_m: 2.0,
            n_routes: 10,
            samples_per_route: 12,
            ..Default::default()
        }
    }

    /// Flat scene of a single cover class, satellite at 1 m.
    pub(crate) fn flat_scene(size_m: usize, class: LandCover) -> SynthScene {
        let sg = GeoRef::new(0.0, size_m as f64, 1.0, size_m, size_m).unwrap();
        let mut sat = Vec::with_capacity(size_m * size_m * 3);
        for _ in 0..size_m * size_m {
            sat.extend_from_slice(&class.rgb());
        }
        let ne = size_m.div_ceil(35);
        let eg = GeoRef::new(0.0, ne as f64 * 35.0, 35.0, ne, ne).unwrap();
        let nl = size_m.div_ceil(10);
        let lg = GeoRef::new(0.0, nl as f64 * 10.0, 10.0, nl, nl).unwrap();
        SynthScene {
            scene: Scene::new(RasterGrid::new(sg, 3, sat).unwrap(), RasterGrid::filled(eg, 1, 0.0).unwrap()).unwrap(),
            landcover: RasterGrid::filled(lg, 1, class as usize as f32).unwrap(),
            hills: vec![],
        }
    }

    #[test]
    fn flat_scene_without_hills() {
        let cfg = SynthConfig { n_hills: 0, noise_floor_m: 0.0, ..small_cfg() };
        let s = generate_scene(&cfg).unwrap();
        assert!(s.scene.elevation.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scene_is_deterministic() {
        let a = generate_scene(&small_cfg()).unwrap();
        let b = generate_scene(&small_cfg()).unwrap();
        assert_eq!(a.scene.satellite, b.scene.satellite);
        assert_eq!(a.scene.elevation, b.scene.elevation);
        assert_eq!(a.landcover, b.landcover);
    }

    #[test]
    fn hill_maxima_match_hill_list() {
        let cfg = SynthConfig { n_hills: 3, noise_floor_m: 0.0, extent_m: 3000.0, satellite_pixel_m: 10.0, ..small_cfg() };
        let s = generate_scene(&cfg).unwrap();
        let el = &s.scene.elevation;
        let (w, h) = (el.width(), el.height());
        let mut maxima = vec![];
        for r in 0..h {
            for c in 0..w {
                let v = el.get(c, r, 0);
                let mut is_max = true;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (cc, rr) = (c as i64 + dc, r as i64 + dr);
                        if (dr, dc) != (0, 0) && cc >= 0 && rr >= 0 && (cc as usize) < w && (rr as usize) < h {
                            is_max &= v > el.get(cc as usize, rr as usize, 0);
                        }
                    }
                }
                if is_max {
                    maxima.push(el.georef.pixel_center(c, r));
                }
            }
        }
        assert_eq!(maxima.len(), 3, "maxima {maxima:?} hills {:?}", s.hills);
        for hill in &s.hills {
            let near = maxima.iter().any(|(x, y)| (x - hill.x).abs() <= 35.0 && (y - hill.y).abs() <= 35.0);
            assert!(near, "no maximum near hill {hill:?}");
        }
    }

    #[test]
    fn bad_configs() {
        for cfg in [
            SynthConfig { extent_m: 0.0, ..Default::default() },
            SynthConfig { n_routes: 0, ..Default::default() },
            SynthConfig { samples_per_route: 0, ..Default::default() },
            SynthConfig { route_split: [0.5, 0.2, 0.2], ..Default::default() },
            SynthConfig { landcover_classes: 5, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(SynthError::BadConfig(_))), "{cfg:?}");
        }
        let err = SynthConfig::from_json("{\n  \"seed\": 1,\n  \"n_hils\": 3\n}").unwrap_err();
        assert!(err.to_string().contains("n_hils") && err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn oracle_reduces_to_free_space_slope() {
        let s = flat_scene(300, LandCover::Water);
        let tx = Point3::new(100.0, 150.0, 10.0);
        let rx = Point3::new(200.0, 150.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pl = oracle_path_loss(&s, &tx, &rx, 1.21e9, 0.0, &mut rng).unwrap();
        let want = ci::fspl(1.21e9, 1.0).unwrap() + 20.0 * 100f64.log10();
        assert!((pl - want).abs() < 1e-9, "{pl} vs {want}");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(oracle_path_loss(&s, &tx, &rx, 1.21e9, 0.0, &mut rng).unwrap(), pl);
    }

    #[test]
    fn oracle_rejects_short_links() {
        let s = flat_scene(100, LandCover::Field);
        let p = Point3::new(50.0, 50.0, 2.0);
        let q = Point3::new(50.3, 50.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(oracle_path_loss(&s, &p, &q, 1e9, 0.0, &mut rng), Err(SynthError::DegenerateLink(_))));
    }

    #[test]
    fn knife_edge_at_unit_fresnel_parameter() {
        // Flat water scene with a single raised elevation pixel: a tent
        // profile whose apex sits at the link midpoint.
        let f = 1.21e9;
        let lambda = crate::SPEED_OF_LIGHT / f;
        let d = 700.0;
        let base = 10.0;
        let h_needed = 1.0 / (2.0 * d / (lambda * (d / 2.0) * (d / 2.0))).sqrt();
        let mut s = flat_scene(1400, LandCover::Water);
        let (c, r) = (20usize, 20usize);
        s.scene.elevation.set(c, r, 0, (base + h_needed) as f32);
        let (px, py) = s.scene.elevation.georef.pixel_center(c, r);
        // f32 storage of the apex: use the stored value to get nu exactly
        let apex = s.scene.elevation.get(c, r, 0) as f64;
        let tx = Point3::new(px - d / 2.0, py, base);
        let rx = Point3::new(px + d / 2.0, py, base);
        let terms = oracle_terms(&s, &tx, &rx, f).unwrap();
        let nu_true = (apex - base) * (2.0 * d / (lambda * (d / 2.0) * (d / 2.0))).sqrt();
        assert!((nu_true - 1.0).abs() < 1e-4);
        assert!((terms.max_nu - nu_true).abs() < 1e-9, "{} vs {nu_true}", terms.max_nu);
        // J(1) = 6.9 + 20 log10(sqrt(0.81 + 1) + 0.9)
        let j1 = 6.9 + 20.0 * ((0.81f64 + 1.0).sqrt() + 0.9).log10();
        assert!((knife_edge_loss_db(1.0) - j1).abs() < 1e-12);
        assert!((j1 - 13.9259).abs() < 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pl = oracle_path_loss(&s, &tx, &rx, f, 0.0, &mut rng).unwrap();
        let excess = pl - ci::fspl(f, 1.0).unwrap() - 20.0 * d.log10();
        assert!((excess - knife_edge_loss_db(nu_true)).abs() < 1e-9);
        assert!((excess - j1).abs() < 1e-3);
    }

    #[test]
    fn knife_edge_branches() {
        assert_eq!(knife_edge_loss_db(-0.79), 0.0);
        assert!((knife_edge_loss_db(0.0) - 6.0).abs() < 0.1);
    }

    #[test]
    fn oracle_monotone_on_flat_free_space() {
        let s = flat_scene(1200, LandCover::Water);
        let tx = Point3::new(100.0, 600.0, 25.0);
        let mut last = f64::NEG_INFINITY;
        for k in 1..50 {
            let rx = Point3::new(100.0 + 20.0 * k as f64, 600.0, 1.5);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let pl = oracle_path_loss(&s, &tx, &rx, 1.21e9, 0.0, &mut rng).unwrap();
            assert!(pl > last);
            last = pl;
        }
    }

    #[test]
    fn split_counts() {
        assert_eq!(largest_remainder(10, &[0.6, 0.2, 0.2]), vec![6, 2, 2]);
        assert_eq!(largest_remainder(10, &[1.0, 0.0, 0.0]), vec![10, 0, 0]);
        assert_eq!(largest_remainder(7, &[0.5, 0.25, 0.25]), vec![3, 2, 2]);
        assert_eq!(largest_remainder(3, &[1.0 / 3.0; 3]), vec![1, 1, 1]);
    }

    #[test]
    fn dataset_structure() {
        let cfg = small_cfg();
        let s = generate_scene(&cfg).unwrap();
        let d = generate_dataset(&cfg, &s).unwrap();
        assert_eq!(d.len(), 120);
        let mut routes: BTreeMap<u32, HashSet<Split>> = BTreeMap::new();
        for x in &d {
            routes.entry(x.route_id).or_default().insert(x.split);
            assert!((x.d3d_m - x.tx.distance(&x.rx)).abs() < 1e-6);
            assert!(x.d3d_m >= 1.0 && x.path_loss_db.is_finite());
        }
        assert!(routes.values().all(|s| s.len() == 1));
        let per: Vec<usize> = Split::ALL
            .iter()
            .map(|sp| routes.values().filter(|s| s.contains(sp)).count())
            .collect();
        assert_eq!(per, vec![6, 2, 2]);
        // hilltop transmitter sits on the highest elevation cell
        let zmax = s.scene.elevation.data.iter().cloned().fold(f32::MIN, f32::max) as f64;
        assert!((d[0].tx.z - cfg.tx_mast_m - zmax).abs() < 1e-3);
    }

    #[test]
    fn all_train_split() {
        let cfg = SynthConfig { route_split: [1.0, 0.0, 0.0], ..small_cfg() };
        let s = generate_scene(&cfg).unwrap();
        assert!(generate_dataset(&cfg, &s).unwrap().iter().all(|x| x.split == Split::Train));
    }

    #[test]
    fn dataset_table_round_trip_and_rejects_short_links() {
        let cfg = small_cfg();
        let s = generate_scene(&cfg).unwrap();
        let d = generate_dataset(&cfg, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset(&d, &p).unwrap();
        let header = std::fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, "route_id,split,tx_x,tx_y,tx_alt,rx_x,rx_y,rx_alt,freq_hz,d3d_m,pl_db");
        assert_eq!(read_dataset(&p).unwrap(), d);

        let mut short = d[0];
        short.rx = Point3::new(short.tx.x + 0.5, short.tx.y, short.tx.z);
        short.d3d_m = 0.5;
        write_dataset(&[short], &p).unwrap();
        assert!(matches!(read_dataset(&p), Err(SynthError::BadRow { .. })));
    }

    #[test]
    fn chainage_restarts_per_route() {
        let cfg = small_cfg();
        let s = generate_scene(&cfg).unwrap();
        let d = generate_dataset(&cfg, &s).unwrap();
        let c = chainage(&d);
        assert_eq!(c[0], 0.0);
        assert_eq!(c[12], 0.0);
        assert!(c[11] > c[10] && c[11] <= 11.0 * cfg.sample_spacing_m + 1e-6);
    }
}
