//! Experiment geometry: RIS aperture, target plane or volume, receiver, and
//! the uniform sample grids used by the moment-method discretization.
//!
//! Coordinates follow one frame throughout: the RIS lies in `z = 0`
//! centered on the origin, the target is centered on `(0, 0, z')`, and the
//! receiver sits at an arbitrary far-field point.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Vacuum permeability (H/m).
pub const MU0: f64 = 4.0 * PI * 1e-7;
/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Speed of light derived from `MU0` and `EPS0` (m/s).
pub fn speed_of_light() -> f64 {
    1.0 / (MU0 * EPS0).sqrt()
}
/// Free-space characteristic impedance (ohm).
pub fn eta0() -> f64 {
    (MU0 / EPS0).sqrt()
}

pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Plane2d,
    Volume3d,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Plane2d => "plane2d",
            TargetKind::Volume3d => "volume3d",
        }
    }
}

/// Complete description of one imaging experiment.
///
/// Angles are radians here; the config file stores degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub wavelength: f64,
    pub ris_len_x: f64,
    pub ris_len_y: f64,
    pub target_len_x: f64,
    pub target_len_y: f64,
    /// Distance from the RIS to the target plane (2D) or the volume center (3D).
    pub target_distance: f64,
    /// Extent of the detection region along z. Ignored for plane targets.
    pub target_depth: f64,
    pub incident_elevation: f64,
    pub incident_amplitude: f64,
    pub receiver: Point,
    /// Total amplification rate `P_I` of the active RIS.
    pub amplification: f64,
    pub ris_samples: [usize; 2],
    /// Samples along x, y and z. The z count must be 1 for plane targets.
    pub target_samples: [usize; 3],
    pub target_kind: TargetKind,
    /// Reflection coefficient of a plane target surface (-1 for PEC).
    pub reflection_coeff: Complex64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::desk_2d()
    }
}

impl SceneConfig {
    /// Desk-scale plane scene: 32x32 RIS samples on a 0.25 m aperture and a
    /// 16x16 target grid whose pitch matches the cross-range resolution.
    pub fn desk_2d() -> Self {
        Self {
            wavelength: 0.01,
            ris_len_x: 0.25,
            ris_len_y: 0.25,
            target_len_x: 0.125,
            target_len_y: 0.125,
            target_distance: 0.125,
            target_depth: 0.0625,
            incident_elevation: 30f64.to_radians(),
            incident_amplitude: 1.0,
            receiver: [40.0, 40.0, -10.0],
            amplification: 1.0,
            ris_samples: [32, 32],
            target_samples: [16, 16, 1],
            target_kind: TargetKind::Plane2d,
            reflection_coeff: Complex64::new(-1.0, 0.0),
        }
    }

    /// Desk-scale volume scene with an 8x8x4 voxel grid.
    pub fn desk_3d() -> Self {
        Self {
            target_samples: [8, 8, 4],
            target_kind: TargetKind::Volume3d,
            ..Self::desk_2d()
        }
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI * speed_of_light() / self.wavelength
    }

    pub fn ris_count(&self) -> usize {
        self.ris_samples[0] * self.ris_samples[1]
    }

    pub fn target_count(&self) -> usize {
        self.target_samples.iter().product()
    }

    /// Rayleigh distance of the RIS aperture, `2(a^2 + b^2)/lambda`.
    pub fn ris_rayleigh_distance(&self) -> f64 {
        2.0 * (self.ris_len_x.powi(2) + self.ris_len_y.powi(2)) / self.wavelength
    }

    /// Rayleigh distance of the target aperture, `2(a'^2 + b'^2)/lambda`.
    pub fn target_rayleigh_distance(&self) -> f64 {
        2.0 * (self.target_len_x.powi(2) + self.target_len_y.powi(2)) / self.wavelength
    }

    /// Distance from the receiver to the target center.
    pub fn receiver_distance(&self) -> f64 {
        let [x, y, z] = self.receiver;
        (x * x + y * y + (z - self.target_distance).powi(2)).sqrt()
    }

    /// Stable 64-bit digest of every field; keys kernel and SVD caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for v in [
            self.wavelength,
            self.ris_len_x,
            self.ris_len_y,
            self.target_len_x,
            self.target_len_y,
            self.target_distance,
            self.target_depth,
            self.incident_elevation,
            self.incident_amplitude,
            self.receiver[0],
            self.receiver[1],
            self.receiver[2],
            self.amplification,
            self.reflection_coeff.re,
            self.reflection_coeff.im,
        ] {
            h.update(v.to_le_bytes());
        }
        for n in self.ris_samples.iter().chain(self.target_samples.iter()) {
            h.update((*n as u64).to_le_bytes());
        }
        h.update(self.target_kind.as_str().as_bytes());
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    /// Parses a flat key-value scene file. Missing keys fall back to
    /// [`SceneConfig::desk_2d`]; unknown keys are rejected.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(key) = table.keys().find(|k| !SCENE_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        Self::from_table(&table)
    }

    /// Extracts the scene keys from a parsed table, ignoring other keys.
    pub fn from_table(table: &toml::Table) -> Result<Self> {
        let scene_only: toml::Table = table
            .iter()
            .filter(|(k, _)| SCENE_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let file: SceneFile = scene_only
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(file.into())
    }

    /// Renders the scene back into the flat file format.
    pub fn to_config_string(&self) -> String {
        let file = SceneFile::from(self);
        // Sorted keys keep snapshots byte-stable.
        let table: BTreeMap<String, toml::Value> = toml::Table::try_from(&file)
            .expect("scene file serializes")
            .into_iter()
            .collect();
        let mut out = String::new();
        for (k, v) in table {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Keys accepted in a scene file.
pub const SCENE_KEYS: &[&str] = &[
    "wavelength",
    "ris_len_x",
    "ris_len_y",
    "target_len_x",
    "target_len_y",
    "target_distance",
    "target_depth",
    "incident_elevation",
    "incident_amplitude",
    "receiver_x",
    "receiver_y",
    "receiver_z",
    "amplification",
    "ris_samples_x",
    "ris_samples_y",
    "target_samples_x",
    "target_samples_y",
    "target_samples_z",
    "target_kind",
    "reflection_coeff_re",
    "reflection_coeff_im",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SceneFile {
    wavelength: f64,
    ris_len_x: f64,
    ris_len_y: f64,
    target_len_x: f64,
    target_len_y: f64,
    target_distance: f64,
    target_depth: f64,
    /// degrees
    incident_elevation: f64,
    incident_amplitude: f64,
    receiver_x: f64,
    receiver_y: f64,
    receiver_z: f64,
    amplification: f64,
    ris_samples_x: usize,
    ris_samples_y: usize,
    target_samples_x: usize,
    target_samples_y: usize,
    target_samples_z: usize,
    target_kind: TargetKind,
    reflection_coeff_re: f64,
    reflection_coeff_im: f64,
}

impl Default for SceneFile {
    fn default() -> Self {
        (&SceneConfig::desk_2d()).into()
    }
}

impl From<&SceneConfig> for SceneFile {
    fn from(c: &SceneConfig) -> Self {
        Self {
            wavelength: c.wavelength,
            ris_len_x: c.ris_len_x,
            ris_len_y: c.ris_len_y,
            target_len_x: c.target_len_x,
            target_len_y: c.target_len_y,
            target_distance: c.target_distance,
            target_depth: c.target_depth,
            incident_elevation: c.incident_elevation.to_degrees(),
            incident_amplitude: c.incident_amplitude,
            receiver_x: c.receiver[0],
            receiver_y: c.receiver[1],
            receiver_z: c.receiver[2],
            amplification: c.amplification,
            ris_samples_x: c.ris_samples[0],
            ris_samples_y: c.ris_samples[1],
            target_samples_x: c.target_samples[0],
            target_samples_y: c.target_samples[1],
            target_samples_z: c.target_samples[2],
            target_kind: c.target_kind,
            reflection_coeff_re: c.reflection_coeff.re,
            reflection_coeff_im: c.reflection_coeff.im,
        }
    }
}

impl From<SceneFile> for SceneConfig {
    fn from(f: SceneFile) -> Self {
        Self {
            wavelength: f.wavelength,
            ris_len_x: f.ris_len_x,
            ris_len_y: f.ris_len_y,
            target_len_x: f.target_len_x,
            target_len_y: f.target_len_y,
            target_distance: f.target_distance,
            target_depth: f.target_depth,
            incident_elevation: f.incident_elevation.to_radians(),
            incident_amplitude: f.incident_amplitude,
            receiver: [f.receiver_x, f.receiver_y, f.receiver_z],
            amplification: f.amplification,
            ris_samples: [f.ris_samples_x, f.ris_samples_y],
            target_samples: [f.target_samples_x, f.target_samples_y, f.target_samples_z],
            target_kind: f.target_kind,
            reflection_coeff: Complex64::new(f.reflection_coeff_re, f.reflection_coeff_im),
        }
    }
}

/// A scene whose invariants have been checked. Immutable.
#[derive(Debug, Clone)]
pub struct ValidatedScene {
    config: SceneConfig,
    fingerprint: u64,
}

impl ValidatedScene {
    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn wavenumber(&self) -> f64 {
        self.config.wavenumber()
    }

    pub fn kind(&self) -> TargetKind {
        self.config.target_kind
    }

    pub fn into_config(self) -> SceneConfig {
        self.config
    }
}

impl std::ops::Deref for ValidatedScene {
    type Target = SceneConfig;

    fn deref(&self) -> &SceneConfig {
        &self.config
    }
}

pub fn validate_scene(cfg: SceneConfig) -> Result<ValidatedScene> {
    let positive = [
        ("wavelength", cfg.wavelength),
        ("ris_len_x", cfg.ris_len_x),
        ("ris_len_y", cfg.ris_len_y),
        ("target_len_x", cfg.target_len_x),
        ("target_len_y", cfg.target_len_y),
        ("target_distance", cfg.target_distance),
        ("amplification", cfg.amplification),
        ("incident_amplitude", cfg.incident_amplitude),
    ];
    for (name, value) in positive {
        // NaN fails this comparison too
        if value <= 0.0 || !value.is_finite() {
            return Err(Error::NonPositiveDimension { name, value });
        }
    }
    if cfg.target_kind == TargetKind::Volume3d && (cfg.target_depth.is_nan() || cfg.target_depth <= 0.0) {
        return Err(Error::NonPositiveDimension {
            name: "target_depth",
            value: cfg.target_depth,
        });
    }
    if cfg.ris_samples.contains(&0) || cfg.target_samples.contains(&0) {
        return Err(Error::InvalidSampling("sample counts must be at least 1".into()));
    }
    if cfg.target_kind == TargetKind::Plane2d && cfg.target_samples[2] != 1 {
        return Err(Error::InvalidSampling(
            "plane targets take exactly one sample along z".into(),
        ));
    }
    if cfg.target_kind == TargetKind::Volume3d && cfg.target_distance - cfg.target_depth / 2.0 <= 0.0 {
        return Err(Error::InvalidSampling(
            "detection region must lie entirely in front of the RIS".into(),
        ));
    }

    let near = cfg.ris_rayleigh_distance();
    if cfg.target_distance >= near {
        return Err(Error::NearFieldViolation {
            distance: cfg.target_distance,
            bound: near,
        });
    }
    let far = cfg.target_rayleigh_distance();
    let d_r = cfg.receiver_distance();
    if d_r <= far {
        return Err(Error::FarFieldViolation { distance: d_r, bound: far });
    }

    let fingerprint = cfg.fingerprint();
    Ok(ValidatedScene { config: cfg, fingerprint })
}

/// Sample points of the RIS aperture and target region, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrids {
    pub ris_points: Vec<Point>,
    pub target_points: Vec<Point>,
    /// `dx * dy` on the RIS.
    pub ris_cell: f64,
    /// Pixel area (2D) or voxel volume (3D).
    pub target_cell: f64,
    pub ris_shape: [usize; 2],
    pub target_shape: [usize; 3],
}

impl SampleGrids {
    pub fn n(&self) -> usize {
        self.ris_points.len()
    }

    pub fn m(&self) -> usize {
        self.target_points.len()
    }
}

fn centers(len: f64, count: usize, offset: f64) -> impl Iterator<Item = f64> {
    let step = len / count as f64;
    (0..count).map(move |i| offset - len / 2.0 + (i as f64 + 0.5) * step)
}

pub fn sample_grids(scene: &ValidatedScene) -> SampleGrids {
    let c = scene.config();
    let [nx, ny] = c.ris_samples;
    let mut ris_points = Vec::with_capacity(nx * ny);
    for y in centers(c.ris_len_y, ny, 0.0) {
        for x in centers(c.ris_len_x, nx, 0.0) {
            ris_points.push([x, y, 0.0]);
        }
    }

    let [mx, my, mz] = c.target_samples;
    let (z_values, dz): (Vec<f64>, f64) = match c.target_kind {
        TargetKind::Plane2d => (vec![c.target_distance], 1.0),
        TargetKind::Volume3d => (
            centers(c.target_depth, mz, c.target_distance).collect(),
            c.target_depth / mz as f64,
        ),
    };
    let mut target_points = Vec::with_capacity(mx * my * mz);
    for &z in &z_values {
        for y in centers(c.target_len_y, my, 0.0) {
            for x in centers(c.target_len_x, mx, 0.0) {
                target_points.push([x, y, z]);
            }
        }
    }

    let pixel = (c.target_len_x / mx as f64) * (c.target_len_y / my as f64);
    SampleGrids {
        ris_points,
        target_points,
        ris_cell: (c.ris_len_x / nx as f64) * (c.ris_len_y / ny as f64),
        target_cell: match c.target_kind {
            TargetKind::Plane2d => pixel,
            TargetKind::Volume3d => pixel * dz,
        },
        ris_shape: [nx, ny],
        target_shape: [mx, my, mz],
    }
}

/// Cross-range resolution along both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution {
    pub dx: f64,
    pub dy: f64,
    /// `sin(theta_x / 2)` for the angle the RIS subtends at the target center.
    pub sin_half_x: f64,
    pub sin_half_y: f64,
}

/// `lambda / (2 sin(theta/2))`.
pub fn resolution_from_sine(wavelength: f64, sin_half_angle: f64) -> f64 {
    wavelength / (2.0 * sin_half_angle)
}

/// `sin(theta/2) = L / sqrt(L^2 + 4 z^2)` for an aperture of length `L`.
pub fn half_angle_sine(aperture: f64, distance: f64) -> f64 {
    aperture / (aperture * aperture + 4.0 * distance * distance).sqrt()
}

pub fn resolution(scene: &ValidatedScene) -> Resolution {
    let c = scene.config();
    let sin_half_x = half_angle_sine(c.ris_len_x, c.target_distance);
    let sin_half_y = half_angle_sine(c.ris_len_y, c.target_distance);
    Resolution {
        dx: resolution_from_sine(c.wavelength, sin_half_x),
        dy: resolution_from_sine(c.wavelength, sin_half_y),
        sin_half_x,
        sin_half_y,
    }
}
