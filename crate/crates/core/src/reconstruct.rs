//! Correlation reconstruction of the target from the measurement record and
//! the masks that produced it, plus the NMSE quality metric.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measurement::MeasurementSet;
use crate::scene::TargetKind;

/// Relative level below which a mask variance marks a point unrecoverable.
pub const FLAG_LEVEL: f64 = 1e-12;

/// Per-point mask variance used to normalize the correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVariance {
    /// Plane targets: variance of `|u|` (real). Volume targets: the
    /// pseudo-variance `mean((B - mean B)^2)`.
    pub values: Vec<Complex64>,
    pub flagged: Vec<bool>,
}

impl MaskVariance {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

fn check_masks(masks: &[Vec<Complex64>]) -> Result<usize> {
    let first = masks.first().ok_or(Error::EmptyMaskSet)?;
    let len = first.len();
    if let Some(bad) = masks.iter().find(|v| v.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: bad.len(),
        });
    }
    Ok(len)
}

/// Two-pass per-point variance of the masks, flagging points whose
/// variance is negligible relative to the largest one.
pub fn estimate_c(masks: &[Vec<Complex64>], kind: TargetKind) -> Result<MaskVariance> {
    let len = check_masks(masks)?;
    let count = masks.len() as f64;
    let values: Vec<Complex64> = (0..len)
        .into_par_iter()
        .map(|m| match kind {
            TargetKind::Plane2d => {
                let mean = masks.iter().map(|v| v[m].norm()).sum::<f64>() / count;
                let var = masks.iter().map(|v| (v[m].norm() - mean).powi(2)).sum::<f64>() / count;
                Complex64::new(var, 0.0)
            }
            TargetKind::Volume3d => {
                let mean = masks.iter().map(|v| v[m]).sum::<Complex64>() / count;
                masks.iter().map(|v| (v[m] - mean) * (v[m] - mean)).sum::<Complex64>() / count
            }
        })
        .collect();
    let peak = values.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let flagged = values.iter().map(|c| c.norm() <= FLAG_LEVEL * peak).collect();
    Ok(MaskVariance { values, flagged })
}

/// Scene facts that accompany an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunMetadata {
    pub measurements: usize,
    pub snr_db: Option<f64>,
    pub target_distance: f64,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub kind: TargetKind,
    /// Plane estimates are real and stored in `re`.
    pub estimate: Vec<Complex64>,
    pub variance: MaskVariance,
    pub nmse: Option<f64>,
    pub metadata: RunMetadata,
}

impl ReconstructionResult {
    pub fn real(&self) -> Vec<f64> {
        self.estimate.iter().map(|c| c.re).collect()
    }

    /// Scores the estimate, after `mode`, against `truth`.
    pub fn score(&mut self, truth: &[Complex64], mode: Calibration, cell_scale: f64) -> Result<f64> {
        let calibrated = calibrate_estimate(&self.estimate, mode, Some(truth), cell_scale);
        let value = nmse(truth, &calibrated)?;
        self.nmse = Some(value);
        Ok(value)
    }
}

fn check_counts(records: usize, masks: usize) -> Result<()> {
    if records != masks {
        return Err(Error::DimensionMismatch {
            expected: masks,
            found: records,
        });
    }
    Ok(())
}

/// `T_m = sum_i (|E_i| - mean |E|) |u_im| / (I c_m |K_m|)`.
pub fn reconstruct_2d(
    records: &MeasurementSet,
    masks: &[Vec<Complex64>],
    psf: &[Complex64],
    variance: &MaskVariance,
) -> Result<ReconstructionResult> {
    let len = check_masks(masks)?;
    check_counts(records.len(), masks.len())?;
    if psf.len() != len || variance.values.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: psf.len().min(variance.values.len()),
        });
    }
    let count = masks.len() as f64;
    let intensities: Vec<f64> = records.records.iter().map(|r| r.noisy.re).collect();
    let mean = intensities.iter().sum::<f64>() / count;
    let centered: Vec<f64> = intensities.iter().map(|e| e - mean).collect();
    let estimate = (0..len)
        .into_par_iter()
        .map(|m| {
            if variance.flagged[m] {
                return Complex64::new(0.0, 0.0);
            }
            let corr: f64 = centered.iter().zip(masks).map(|(e, v)| e * v[m].norm()).sum();
            Complex64::new(corr / (count * variance.values[m].re * psf[m].norm()), 0.0)
        })
        .collect();
    Ok(ReconstructionResult {
        kind: TargetKind::Plane2d,
        estimate,
        variance: variance.clone(),
        nmse: None,
        metadata: RunMetadata {
            measurements: masks.len(),
            snr_db: records.noise.snr_db(),
            ..RunMetadata::default()
        },
    })
}

/// `chi_m = sum_i (E_i - mean E) B_im / (I k^2 c_m)`.
pub fn reconstruct_3d(
    records: &MeasurementSet,
    masks: &[Vec<Complex64>],
    wavenumber: f64,
    variance: &MaskVariance,
) -> Result<ReconstructionResult> {
    let len = check_masks(masks)?;
    check_counts(records.len(), masks.len())?;
    if variance.values.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: variance.values.len(),
        });
    }
    let count = masks.len() as f64;
    let fields: Vec<Complex64> = records.records.iter().map(|r| r.noisy).collect();
    let mean = fields.iter().sum::<Complex64>() / count;
    let centered: Vec<Complex64> = fields.iter().map(|e| e - mean).collect();
    let k2 = wavenumber * wavenumber;
    let estimate = (0..len)
        .into_par_iter()
        .map(|m| {
            if variance.flagged[m] {
                return Complex64::new(0.0, 0.0);
            }
            let corr: Complex64 = centered.iter().zip(masks).map(|(e, v)| e * v[m]).sum();
            corr / (variance.values[m] * (count * k2))
        })
        .collect();
    Ok(ReconstructionResult {
        kind: TargetKind::Volume3d,
        estimate,
        variance: variance.clone(),
        nmse: None,
        metadata: RunMetadata {
            measurements: masks.len(),
            snr_db: records.noise.snr_db(),
            ..RunMetadata::default()
        },
    })
}

/// `|t - t_hat|^2 / |t|^2`.
pub fn nmse(truth: &[Complex64], estimate: &[Complex64]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    let energy: f64 = truth.iter().map(|t| t.norm_sqr()).sum();
    if energy == 0.0 {
        return Err(Error::ZeroTruth);
    }
    let err: f64 = truth.iter().zip(estimate).map(|(t, e)| (t - e).norm_sqr()).sum();
    Ok(err / energy)
}

pub fn nmse_real(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    let t: Vec<Complex64> = truth.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let e: Vec<Complex64> = estimate.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    nmse(&t, &e)
}

/// Normalization applied before comparing an estimate to its truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Calibration {
    None,
    /// Divide by the largest modulus.
    Max1,
    /// Divide by the known cell scale (pixel area or voxel volume, times
    /// any reflection factor).
    #[default]
    CellMeasure,
    /// Least-squares complex scalar fit to the truth.
    Lsq,
}

impl Calibration {
    pub fn as_str(self) -> &'static str {
        match self {
            Calibration::None => "none",
            Calibration::Max1 => "max1",
            Calibration::CellMeasure => "cell",
            Calibration::Lsq => "lsq",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "none" => Ok(Calibration::None),
            "max1" => Ok(Calibration::Max1),
            "cell" => Ok(Calibration::CellMeasure),
            "lsq" => Ok(Calibration::Lsq),
            other => Err(Error::Config(format!("unknown calibration mode `{other}`"))),
        }
    }
}

/// Applies `mode`. `truth` is only read by `Lsq` and `cell_scale` only by
/// `CellMeasure`; a zero divisor leaves the estimate unchanged.
pub fn calibrate_estimate(
    estimate: &[Complex64],
    mode: Calibration,
    truth: Option<&[Complex64]>,
    cell_scale: f64,
) -> Vec<Complex64> {
    let divisor = match mode {
        Calibration::None => Complex64::new(1.0, 0.0),
        Calibration::Max1 => Complex64::new(estimate.iter().map(|c| c.norm()).fold(0.0, f64::max), 0.0),
        Calibration::CellMeasure => Complex64::new(cell_scale, 0.0),
        Calibration::Lsq => {
            let Some(truth) = truth else {
                return estimate.to_vec();
            };
            let num: Complex64 = estimate.iter().zip(truth).map(|(e, t)| e.conj() * t).sum();
            let den: f64 = estimate.iter().map(|e| e.norm_sqr()).sum();
            if num.norm() == 0.0 || den == 0.0 {
                return estimate.iter().map(|_| Complex64::new(0.0, 0.0)).collect();
            }
            // scale = num / den, expressed as a divisor
            Complex64::new(den, 0.0) / num
        }
    };
    if divisor.norm() == 0.0 || !divisor.norm().is_finite() {
        return estimate.to_vec();
    }
    estimate.iter().map(|e| e / divisor).collect()
}
