//! Virtual-mask design: Hadamard-derived 0/1 amplitudes plus, for plane
//! targets, the phase profile that cancels the PSF phase at the receiver.

use std::f64::consts::FRAC_PI_2;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scene::{SampleGrids, TargetKind, ValidatedScene};
use crate::synthesis::RisProfile;

/// Entry `(i, j)` of the Sylvester-Hadamard matrix: `(-1)^popcount(i & j)`.
pub fn sylvester_entry(i: usize, j: usize) -> i8 {
    if (i & j).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

fn check_order(order: usize) -> Result<()> {
    if order < 2 || !order.is_power_of_two() {
        return Err(Error::UnsupportedOrder(order));
    }
    Ok(())
}

/// Sylvester construction by repeated doubling `[[H, H], [H, -H]]`.
pub fn hadamard(order: usize) -> Result<DMatrix<i8>> {
    check_order(order)?;
    let mut h = DMatrix::from_element(1, 1, 1i8);
    while h.nrows() < order {
        let n = h.nrows();
        let mut next = DMatrix::zeros(2 * n, 2 * n);
        next.view_mut((0, 0), (n, n)).copy_from(&h);
        next.view_mut((0, n), (n, n)).copy_from(&h);
        next.view_mut((n, 0), (n, n)).copy_from(&h);
        next.view_mut((n, n), (n, n)).copy_from(&(-&h));
        h = next;
    }
    Ok(h)
}

/// Checks that `measurements` is a usable mask count: a power of two that
/// is also a multiple of four.
pub fn check_measurement_count(measurements: usize) -> Result<()> {
    check_order(measurements)?;
    if !measurements.is_multiple_of(4) {
        return Err(Error::UnsupportedOrder(measurements));
    }
    Ok(())
}

/// 0/1 amplitudes for `points` target samples over `measurements` masks,
/// from Hadamard columns `2..=points+1` (the all-ones column is skipped).
pub fn design_amplitudes(measurements: usize, points: usize) -> Result<Vec<Vec<f64>>> {
    check_measurement_count(measurements)?;
    if measurements < points + 1 {
        return Err(Error::InsufficientMeasurements {
            measurements,
            points,
            required: points + 1,
        });
    }
    Ok(amplitudes_from_columns(measurements, points, 1))
}

fn amplitudes_from_columns(measurements: usize, points: usize, first_col: usize) -> Vec<Vec<f64>> {
    (0..measurements)
        .map(|i| {
            (0..points)
                .map(|m| f64::from(1 + sylvester_entry(i, m + first_col)) / 2.0)
                .collect()
        })
        .collect()
}

/// Amplitudes for volume targets. Requires `measurements >= points`; the
/// all-ones column is skipped whenever there is room for it.
pub fn design_amplitudes_3d(measurements: usize, points: usize) -> Result<Vec<Vec<f64>>> {
    check_measurement_count(measurements)?;
    if measurements < points {
        return Err(Error::InsufficientMeasurements {
            measurements,
            points,
            required: points,
        });
    }
    let first_col = usize::from(measurements > points);
    Ok(amplitudes_from_columns(measurements, points, first_col))
}

/// Linearized phase profile `pi/2 + k (R0 - x_r x'/R0 - y_r y'/R0)`.
pub fn design_phases_2d(scene: &ValidatedScene, grids: &SampleGrids) -> Vec<f64> {
    let k = scene.wavenumber();
    let [xr, yr, _] = scene.receiver;
    let r0 = scene.receiver_distance();
    grids
        .target_points
        .iter()
        .map(|p| FRAC_PI_2 + k * (r0 - xr / r0 * p[0] - yr / r0 * p[1]))
        .collect()
}

/// Exact phase profile `pi/2 + k R'` for every target sample.
pub fn exact_phases_2d(scene: &ValidatedScene, grids: &SampleGrids) -> Vec<f64> {
    let k = scene.wavenumber();
    let rr = scene.receiver;
    grids
        .target_points
        .iter()
        .map(|p| {
            let d = ((p[0] - rr[0]).powi(2) + (p[1] - rr[1]).powi(2) + (p[2] - rr[2]).powi(2)).sqrt();
            FRAC_PI_2 + k * d
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseRule {
    /// First-order expansion about the target center.
    Linearized,
    /// Exact per-point distance to the receiver.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Mask2d,
    Mask3d,
}

impl MaskKind {
    pub fn for_target(kind: TargetKind) -> Self {
        match kind {
            TargetKind::Plane2d => MaskKind::Mask2d,
            TargetKind::Volume3d => MaskKind::Mask3d,
        }
    }

    fn code(self) -> u32 {
        match self {
            MaskKind::Mask2d => 0,
            MaskKind::Mask3d => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(MaskKind::Mask2d),
            1 => Ok(MaskKind::Mask3d),
            other => Err(Error::MalformedFile(format!("unknown mask kind {other}"))),
        }
    }
}

/// Which mask vectors an analysis reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskSelection {
    /// Realized masks when present, ideal otherwise.
    #[default]
    Auto,
    Ideal,
    Realized,
}

/// Fields generated on the target by the synthesized RIS profiles.
#[derive(Debug, Clone)]
pub struct RealizedMasks {
    pub fields: Vec<Vec<Complex64>>,
    pub profiles: Vec<RisProfile>,
}

#[derive(Debug, Clone)]
pub struct MaskSet {
    pub kind: MaskKind,
    pub ideal: Vec<Vec<Complex64>>,
    pub realized: Option<RealizedMasks>,
    pub fingerprint: u64,
}

impl MaskSet {
    pub fn count(&self) -> usize {
        self.ideal.len()
    }

    pub fn len(&self) -> usize {
        self.ideal.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.ideal.is_empty()
    }

    pub fn select(&self, selection: MaskSelection) -> Result<&[Vec<Complex64>]> {
        match (selection, &self.realized) {
            (MaskSelection::Ideal, _) | (MaskSelection::Auto, None) => Ok(&self.ideal),
            (_, Some(r)) => Ok(&r.fields),
            (MaskSelection::Realized, None) => {
                Err(Error::KindMismatch("mask set has no realized masks".into()))
            }
        }
    }

    /// Masks used for measurement and reconstruction.
    pub fn active(&self) -> &[Vec<Complex64>] {
        self.select(MaskSelection::Auto).expect("auto selection always succeeds")
    }
}

pub fn ideal_masks(scene: &ValidatedScene, grids: &SampleGrids, measurements: usize) -> Result<MaskSet> {
    ideal_masks_with(scene, grids, measurements, PhaseRule::Linearized)
}

pub fn ideal_masks_with(
    scene: &ValidatedScene,
    grids: &SampleGrids,
    measurements: usize,
    rule: PhaseRule,
) -> Result<MaskSet> {
    let kind = MaskKind::for_target(scene.kind());
    let ideal = match kind {
        MaskKind::Mask2d => {
            let amplitudes = design_amplitudes(measurements, grids.m())?;
            let phases = match rule {
                PhaseRule::Linearized => design_phases_2d(scene, grids),
                PhaseRule::Exact => exact_phases_2d(scene, grids),
            };
            let rotors: Vec<Complex64> = phases.iter().map(|&g| Complex64::from_polar(1.0, g)).collect();
            amplitudes
                .into_iter()
                .map(|q| q.iter().zip(&rotors).map(|(&a, &r)| r * a).collect())
                .collect()
        }
        MaskKind::Mask3d => design_amplitudes_3d(measurements, grids.m())?
            .into_iter()
            .map(|b| b.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
            .collect(),
    };
    Ok(MaskSet {
        kind,
        ideal,
        realized: None,
        fingerprint: scene.fingerprint(),
    })
}

/// Empirical amplitude covariance between every point and `reference`:
/// `<u_m u_ref> - <u_m><u_ref>` over the measurements.
pub fn mask_covariance(masks: &MaskSet, reference: usize, selection: MaskSelection) -> Result<Vec<f64>> {
    let vectors = masks.select(selection)?;
    if vectors.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    let len = vectors[0].len();
    if reference >= len {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: reference,
        });
    }
    let count = vectors.len() as f64;
    let means: Vec<f64> = (0..len)
        .map(|m| vectors.iter().map(|v| v[m].norm()).sum::<f64>() / count)
        .collect();
    let mut cov = vec![0.0; len];
    for v in vectors {
        let centered_ref = v[reference].norm() - means[reference];
        for (c, (u, mean)) in cov.iter_mut().zip(v.iter().zip(&means)) {
            *c += (u.norm() - mean) * centered_ref;
        }
    }
    cov.iter_mut().for_each(|c| *c /= count);
    Ok(cov)
}

/// Binary stage tag stored in vector-set files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorStage {
    IdealMask,
    RealizedMask,
    RisProfile,
}

impl VectorStage {
    fn code(self) -> u32 {
        match self {
            VectorStage::IdealMask => 0,
            VectorStage::RealizedMask => 1,
            VectorStage::RisProfile => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(VectorStage::IdealMask),
            1 => Ok(VectorStage::RealizedMask),
            2 => Ok(VectorStage::RisProfile),
            other => Err(Error::MalformedFile(format!("unknown vector stage {other}"))),
        }
    }
}

/// Header of a vector-set file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorSetHeader {
    pub kind: MaskKind,
    pub stage: VectorStage,
    pub count: usize,
    pub len: usize,
    pub fingerprint: u64,
}

const VECTOR_MAGIC: [u8; 4] = *b"RISV";

/// Writes `vectors` as: magic `RISV`, version, kind, stage, count, length,
/// fingerprint, then each vector as little-endian `(re, im)` f64 pairs.
pub fn write_vector_set<W: Write>(
    mut w: W,
    kind: MaskKind,
    stage: VectorStage,
    fingerprint: u64,
    vectors: &[Vec<Complex64>],
) -> Result<()> {
    let len = vectors.first().map_or(0, Vec::len);
    if let Some(bad) = vectors.iter().find(|v| v.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: bad.len(),
        });
    }
    w.write_all(&VECTOR_MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    w.write_u32::<LittleEndian>(kind.code())?;
    w.write_u32::<LittleEndian>(stage.code())?;
    w.write_u64::<LittleEndian>(vectors.len() as u64)?;
    w.write_u64::<LittleEndian>(len as u64)?;
    w.write_u64::<LittleEndian>(fingerprint)?;
    for v in vectors {
        for c in v {
            w.write_f64::<LittleEndian>(c.re)?;
            w.write_f64::<LittleEndian>(c.im)?;
        }
    }
    Ok(())
}

pub fn read_vector_set<R: Read>(mut r: R) -> Result<(VectorSetHeader, Vec<Vec<Complex64>>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != VECTOR_MAGIC {
        return Err(Error::MalformedFile("not a vector-set file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != 1 {
        return Err(Error::MalformedFile(format!("vector-set version {version}")));
    }
    let kind = MaskKind::from_code(r.read_u32::<LittleEndian>()?)?;
    let stage = VectorStage::from_code(r.read_u32::<LittleEndian>()?)?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let len = r.read_u64::<LittleEndian>()? as usize;
    let fingerprint = r.read_u64::<LittleEndian>()?;
    let mut vectors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            let re = r.read_f64::<LittleEndian>()?;
            let im = r.read_f64::<LittleEndian>()?;
            v.push(Complex64::new(re, im));
        }
        vectors.push(v);
    }
    let header = VectorSetHeader {
        kind,
        stage,
        count,
        len,
        fingerprint,
    };
    Ok((header, vectors))
}
