//! Forward simulation of the receiver signal: scattering of each realized
//! mask off the target, propagation to the receiver and thermal noise.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::psf_values;
use crate::error::{Error, Result};
use crate::masks::{MaskKind, MaskSet};
use crate::scene::{SampleGrids, TargetKind, ValidatedScene, EPS0};

/// Ground truth for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetModel {
    /// Binary scattering density per pixel, x-fastest.
    Plane { shape: [usize; 2], density: Vec<f64> },
    /// Contrast per voxel, x-fastest then y then z.
    Volume { shape: [usize; 3], contrast: Vec<Complex64> },
}

/// Contrast `eps_r + j sigma / (eps0 omega) - 1` of a lossy dielectric.
pub fn contrast(relative_permittivity: f64, conductivity: f64, angular_frequency: f64) -> Complex64 {
    Complex64::new(
        relative_permittivity - 1.0,
        conductivity / (EPS0 * angular_frequency),
    )
}

impl TargetModel {
    pub fn plane(shape: [usize; 2], density: Vec<f64>) -> Result<Self> {
        if shape[0] * shape[1] != density.len() {
            return Err(Error::DimensionMismatch {
                expected: shape[0] * shape[1],
                found: density.len(),
            });
        }
        if density.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::MalformedImage("plane target values must be 0 or 1".into()));
        }
        Ok(TargetModel::Plane { shape, density })
    }

    pub fn volume(shape: [usize; 3], contrast: Vec<Complex64>) -> Result<Self> {
        if shape.iter().product::<usize>() != contrast.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.iter().product(),
                found: contrast.len(),
            });
        }
        if contrast.iter().any(|c| !(c.re >= 0.0 && c.im >= 0.0)) {
            return Err(Error::MalformedVolume(
                "contrast needs eps_r >= 1 and a non-negative conductivity".into(),
            ));
        }
        Ok(TargetModel::Volume { shape, contrast })
    }

    pub fn kind(&self) -> TargetKind {
        match self {
            TargetModel::Plane { .. } => TargetKind::Plane2d,
            TargetModel::Volume { .. } => TargetKind::Volume3d,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TargetModel::Plane { density, .. } => density.len(),
            TargetModel::Volume { contrast, .. } => contrast.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Target values as complex numbers (density or contrast).
    pub fn values(&self) -> Vec<Complex64> {
        match self {
            TargetModel::Plane { density, .. } => density.iter().map(|&t| Complex64::new(t, 0.0)).collect(),
            TargetModel::Volume { contrast, .. } => contrast.clone(),
        }
    }

    fn check_grid(&self, grids: &SampleGrids) -> Result<()> {
        if self.len() != grids.m() {
            return Err(Error::DimensionMismatch {
                expected: grids.m(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Equivalent surface current on a plane target, `(1 - Gamma') H_out^y`.
pub fn target_current_2d(
    reflection_coeff: Complex64,
    realized_mask: &[Complex64],
    target: &TargetModel,
) -> Result<Vec<Complex64>> {
    if target.kind() != TargetKind::Plane2d {
        return Err(Error::KindMismatch("plane current needs a plane target".into()));
    }
    let factor = Complex64::new(1.0, 0.0) - reflection_coeff;
    Ok(realized_mask.iter().map(|h| factor * h).collect())
}

/// `E_r = sum_m K_m T_m J'_m dA` from precomputed PSF values.
pub fn receiver_field_2d(psf: &[Complex64], current: &[Complex64], target: &TargetModel, pixel_area: f64) -> Result<Complex64> {
    let TargetModel::Plane { density, .. } = target else {
        return Err(Error::KindMismatch("plane field needs a plane target".into()));
    };
    if psf.len() != density.len() || current.len() != density.len() {
        return Err(Error::DimensionMismatch {
            expected: density.len(),
            found: current.len().min(psf.len()),
        });
    }
    let sum: Complex64 = psf
        .iter()
        .zip(current)
        .zip(density)
        .filter(|(_, &t)| t != 0.0)
        .map(|((k, j), &t)| k * j * t)
        .sum();
    Ok(sum * pixel_area)
}

/// `E_r = k^2 sum_m chi_m b_m dV` for the Born coefficient `b = Y p`.
pub fn receiver_field_3d(wavenumber: f64, coefficient: &[Complex64], target: &TargetModel, voxel_volume: f64) -> Result<Complex64> {
    let TargetModel::Volume { contrast, .. } = target else {
        return Err(Error::KindMismatch("volume field needs a volume target".into()));
    };
    if coefficient.len() != contrast.len() {
        return Err(Error::DimensionMismatch {
            expected: contrast.len(),
            found: coefficient.len(),
        });
    }
    let sum: Complex64 = contrast.iter().zip(coefficient).map(|(x, b)| x * b).sum();
    Ok(sum * (wavenumber * wavenumber * voxel_volume))
}

/// How the noise variance is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum NoiseMode {
    /// Variance set so the mean received power over the set has the given SNR.
    Relative { snr_db: f64 },
    /// Thermal floor `N0 B`, with `N0` in dBm/Hz and `B` in Hz.
    Absolute { density_dbm_per_hz: f64, bandwidth_hz: f64 },
    Noiseless,
}

impl NoiseMode {
    pub fn snr_db(&self) -> Option<f64> {
        match self {
            NoiseMode::Relative { snr_db } => Some(*snr_db),
            _ => None,
        }
    }
}

/// Thermal noise power in dBm for density `N0` (dBm/Hz) over `B` Hz.
pub fn thermal_noise_dbm(density_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    density_dbm_per_hz + 10.0 * bandwidth_hz.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// `sigma^2 = mean |E|^2 / 10^(snr/10)` over the noiseless set.
pub fn noise_variance(noiseless: &[Complex64], snr_db: f64) -> Result<f64> {
    if noiseless.is_empty() {
        return Err(Error::EmptySet);
    }
    let power = noiseless.iter().map(|e| e.norm_sqr()).sum::<f64>() / noiseless.len() as f64;
    Ok(power / 10f64.powf(snr_db / 10.0))
}

fn resolve_variance(noiseless: &[Complex64], mode: NoiseMode) -> Result<f64> {
    match mode {
        NoiseMode::Relative { snr_db } => noise_variance(noiseless, snr_db),
        NoiseMode::Absolute {
            density_dbm_per_hz,
            bandwidth_hz,
        } => Ok(dbm_to_watts(thermal_noise_dbm(density_dbm_per_hz, bandwidth_hz))),
        NoiseMode::Noiseless => Ok(0.0),
    }
}

/// Per-measurement generator: the run seed picks the key, the measurement
/// index the stream, so results never depend on evaluation order.
pub fn measurement_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Circularly-symmetric complex Gaussian sample with variance `sigma2`.
pub fn complex_gaussian<R: rand::Rng>(rng: &mut R, sigma2: f64) -> Complex64 {
    let scale = (sigma2 / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * scale, im * scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub index: usize,
    pub noiseless: Complex64,
    /// Plane targets: detected magnitude in `re`, zero `im`.
    /// Volume targets: the noisy complex field.
    pub noisy: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub kind: TargetKind,
    pub records: Vec<MeasurementRecord>,
    pub noise_variance: f64,
    pub noise: NoiseMode,
    pub seed: u64,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn noiseless(&self) -> Vec<Complex64> {
        self.records.iter().map(|r| r.noiseless).collect()
    }

    pub fn noisy(&self) -> Vec<Complex64> {
        self.records.iter().map(|r| r.noisy).collect()
    }
}

/// Noiseless receiver fields for every active mask in `masks`.
pub fn noiseless_fields(
    scene: &ValidatedScene,
    grids: &SampleGrids,
    masks: &MaskSet,
    target: &TargetModel,
) -> Result<Vec<Complex64>> {
    target.check_grid(grids)?;
    let expected = MaskKind::for_target(target.kind());
    if masks.kind != expected || target.kind() != scene.kind() {
        return Err(Error::KindMismatch(format!(
            "{:?} masks, {} target, {} scene",
            masks.kind,
            target.kind().as_str(),
            scene.kind().as_str()
        )));
    }
    let active = masks.active();
    if active.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    match target.kind() {
        TargetKind::Plane2d => {
            let psf = psf_values(scene, grids);
            active
                .par_iter()
                .map(|mask| {
                    let current = target_current_2d(scene.reflection_coeff, mask, target)?;
                    receiver_field_2d(&psf, &current, target, grids.target_cell)
                })
                .collect()
        }
        TargetKind::Volume3d => {
            let k = scene.wavenumber();
            active
                .par_iter()
                .map(|b| receiver_field_3d(k, b, target, grids.target_cell))
                .collect()
        }
    }
}

/// Simulates one noisy measurement per mask. Deterministic in `seed`.
pub fn measure(
    scene: &ValidatedScene,
    grids: &SampleGrids,
    masks: &MaskSet,
    target: &TargetModel,
    noise: NoiseMode,
    seed: u64,
) -> Result<MeasurementSet> {
    let fields = noiseless_fields(scene, grids, masks, target)?;
    let sigma2 = resolve_variance(&fields, noise)?;
    let kind = target.kind();
    let records = fields
        .par_iter()
        .enumerate()
        .map(|(index, &noiseless)| {
            let mut rng = measurement_rng(seed, index);
            let field = noiseless + complex_gaussian(&mut rng, sigma2);
            let noisy = match kind {
                TargetKind::Plane2d => Complex64::new(field.norm(), 0.0),
                TargetKind::Volume3d => field,
            };
            MeasurementRecord {
                index,
                noiseless,
                noisy,
            }
        })
        .collect();
    Ok(MeasurementSet {
        kind,
        records,
        noise_variance: sigma2,
        noise,
        seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    index: usize,
    re_noiseless: f64,
    im_noiseless: f64,
    value_noisy_or_re: f64,
    im_if_3d: Option<f64>,
    sigma2: f64,
    seed: u64,
}

pub fn write_measurements_csv<W: Write>(w: W, set: &MeasurementSet) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in &set.records {
        writer.serialize(CsvRow {
            index: r.index,
            re_noiseless: r.noiseless.re,
            im_noiseless: r.noiseless.im,
            value_noisy_or_re: r.noisy.re,
            im_if_3d: (set.kind == TargetKind::Volume3d).then_some(r.noisy.im),
            sigma2: set.noise_variance,
            seed: set.seed,
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a measurement CSV. The kind follows from whether the imaginary
/// column is filled; the noise mode is not stored and comes back as
/// `Noiseless` when `sigma2` is zero, otherwise as an absolute setting.
pub fn read_measurements_csv<R: Read>(r: R) -> Result<MeasurementSet> {
    let mut reader = csv::Reader::from_reader(r);
    let mut records = Vec::new();
    let mut sigma2 = 0.0;
    let mut seed = 0;
    let mut kind = TargetKind::Plane2d;
    for row in reader.deserialize() {
        let row: CsvRow = row?;
        sigma2 = row.sigma2;
        seed = row.seed;
        if row.im_if_3d.is_some() {
            kind = TargetKind::Volume3d;
        }
        records.push(MeasurementRecord {
            index: row.index,
            noiseless: Complex64::new(row.re_noiseless, row.im_noiseless),
            noisy: Complex64::new(row.value_noisy_or_re, row.im_if_3d.unwrap_or(0.0)),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptySet);
    }
    let noise = if sigma2 == 0.0 {
        NoiseMode::Noiseless
    } else {
        NoiseMode::Absolute {
            density_dbm_per_hz: 10.0 * (sigma2 * 1e3).log10(),
            bandwidth_hz: 1.0,
        }
    };
    Ok(MeasurementSet {
        kind,
        records,
        noise_variance: sigma2,
        noise,
        seed,
    })
}
