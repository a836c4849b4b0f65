//! Closed-form electromagnetic quantities of the RIS imaging chain.
//!
//! All propagators use the outgoing `exp(-jkR)` convention, including the
//! scalar Green function inside the dyadic tensor.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::Range;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{eta0, Point, SampleGrids, TargetKind, ValidatedScene, EPS0, MU0};

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Default cap on `M * N` kernel entries (16 bytes each): 1 GiB.
pub const DEFAULT_MAX_KERNEL_ENTRIES: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `y = Z p`: tangential magnetic field on the target plane.
    Z2d,
    /// `b = Y p`: Born-approximation coefficient over the target volume.
    Y3d,
}

impl KernelKind {
    pub fn for_target(kind: TargetKind) -> Self {
        match kind {
            TargetKind::Plane2d => KernelKind::Z2d,
            TargetKind::Volume3d => KernelKind::Y3d,
        }
    }

    fn code(self) -> u32 {
        match self {
            KernelKind::Z2d => 0,
            KernelKind::Y3d => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(KernelKind::Z2d),
            1 => Ok(KernelKind::Y3d),
            other => Err(Error::MalformedFile(format!("unknown kernel kind {other}"))),
        }
    }
}

/// Discretized propagation operator, rows indexed by target sample and
/// columns by RIS sample.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub entries: DMatrix<Complex64>,
    pub kind: KernelKind,
    pub fingerprint: u64,
}

impl KernelMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Field produced on the target samples by RIS coefficients `p`.
    pub fn apply(&self, p: &[Complex64]) -> Result<Vec<Complex64>> {
        if p.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                found: p.len(),
            });
        }
        let out = (0..self.rows())
            .into_par_iter()
            .map(|m| {
                self.entries
                    .row(m)
                    .iter()
                    .zip(p)
                    .map(|(z, c)| z * c)
                    .sum::<Complex64>()
            })
            .collect();
        Ok(out)
    }

    const MAGIC: [u8; 4] = *b"RISK";

    /// Writes the on-disk cache layout: magic, version, kind, M, N,
    /// fingerprint, then row-major `(re, im)` little-endian f64 pairs.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&Self::MAGIC)?;
        w.write_u32::<LittleEndian>(1)?;
        w.write_u32::<LittleEndian>(self.kind.code())?;
        w.write_u64::<LittleEndian>(self.rows() as u64)?;
        w.write_u64::<LittleEndian>(self.cols() as u64)?;
        w.write_u64::<LittleEndian>(self.fingerprint)?;
        for m in 0..self.rows() {
            for n in 0..self.cols() {
                let z = self.entries[(m, n)];
                w.write_f64::<LittleEndian>(z.re)?;
                w.write_f64::<LittleEndian>(z.im)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != Self::MAGIC {
            return Err(Error::MalformedFile("not a kernel cache".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != 1 {
            return Err(Error::MalformedFile(format!("kernel cache version {version}")));
        }
        let kind = KernelKind::from_code(r.read_u32::<LittleEndian>()?)?;
        let rows = r.read_u64::<LittleEndian>()? as usize;
        let cols = r.read_u64::<LittleEndian>()? as usize;
        let fingerprint = r.read_u64::<LittleEndian>()?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let re = r.read_f64::<LittleEndian>()?;
            let im = r.read_f64::<LittleEndian>()?;
            data.push(Complex64::new(re, im));
        }
        Ok(Self {
            entries: DMatrix::from_row_slice(rows, cols, &data),
            kind,
            fingerprint,
        })
    }
}

fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Equivalent surface current `J_x` on the RIS plane at height `y`
/// for a unit reflection coefficient.
pub fn incident_current(scene: &ValidatedScene, y: f64) -> Complex64 {
    let k = scene.wavenumber();
    let theta = scene.incident_elevation;
    let amplitude = 2.0 * scene.incident_amplitude / eta0() * theta.cos();
    amplitude * (-J * k * theta.sin() * y).exp()
}

/// Point-spread function from a target point to the receiver.
pub fn psf(scene: &ValidatedScene, target_point: &Point) -> Complex64 {
    let k = scene.wavenumber();
    let r = distance(target_point, &scene.receiver);
    let prefactor = k * MU0.sqrt() / (4.0 * PI * J * EPS0.sqrt());
    prefactor * (-J * k * r).exp() / r
}

pub fn psf_values(scene: &ValidatedScene, grids: &SampleGrids) -> Vec<Complex64> {
    grids.target_points.iter().map(|p| psf(scene, p)).collect()
}

/// Free-space dyadic Green tensor, symmetric 3x3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenTensor(pub [[Complex64; 3]; 3]);

impl GreenTensor {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0[i][j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..3).all(|i| (0..3).all(|j| self.0[i][j] == self.0[j][i]))
    }
}

/// Scalar Green function `exp(-jkR)/(4 pi R)`.
pub fn scalar_green(r: f64, k: f64) -> Complex64 {
    (-J * k * r).exp() / (4.0 * PI * r)
}

/// `(I + grad grad / k^2) g` between receiver `r_r` and source `r_src`.
pub fn green_tensor(r_r: &Point, r_src: &Point, k: f64) -> Result<GreenTensor> {
    let d = [r_r[0] - r_src[0], r_r[1] - r_src[1], r_r[2] - r_src[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if r == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let u = [d[0] / r, d[1] / r, d[2] / r];
    let kr = k * r;
    let g = scalar_green(r, k);
    let dyad = Complex64::new(3.0 / (kr * kr) - 1.0, 3.0 / kr);
    let ident = Complex64::new(1.0 / (kr * kr) - 1.0, 1.0 / kr);
    let mut t = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let mut v = dyad * (u[i] * u[j]);
            if i == j {
                v -= ident;
            }
            t[i][j] = v * g;
            t[j][i] = t[i][j];
        }
    }
    Ok(GreenTensor(t))
}

/// Geometric factors multiplying `J_x Gamma exp(-jkR)` in the three
/// components of the RIS-scattered electric field, without the
/// `-j eta / (4 pi k)` prefactor.
fn e_out_factors(k: f64, target: &Point, source: &Point) -> ([Complex64; 3], f64) {
    let dx = target[0] - source[0];
    let dy = target[1] - source[1];
    let dz = target[2] - source[2];
    let r = (dx * dx + dy * dy + dz * dz).sqrt();
    let kr = k * r;
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    let near = Complex64::new(-1.0 + kr * kr, -kr) / r3;
    let common = Complex64::new(3.0 - kr * kr, 3.0 * kr) / r5;
    (
        [near + common * (dx * dx), common * (dy * dx), common * (dz * dx)],
        r,
    )
}

/// Scattered electric field `(E_x, E_y, E_z)` at `target_point` for RIS
/// coefficients `p`, summed over the RIS samples with weight `dx dy`.
pub fn e_out_components(
    scene: &ValidatedScene,
    grids: &SampleGrids,
    p: &[Complex64],
    target_point: &Point,
) -> Result<[Complex64; 3]> {
    if p.len() != grids.n() {
        return Err(Error::DimensionMismatch {
            expected: grids.n(),
            found: p.len(),
        });
    }
    let k = scene.wavenumber();
    let prefactor = -J * eta0() / (4.0 * PI * k) * grids.ris_cell;
    let mut e = [Complex64::new(0.0, 0.0); 3];
    for (src, &coef) in grids.ris_points.iter().zip(p) {
        if coef == Complex64::new(0.0, 0.0) {
            continue;
        }
        let (f, r) = e_out_factors(k, target_point, src);
        let w = prefactor * incident_current(scene, src[1]) * coef * (-J * k * r).exp();
        for (acc, fi) in e.iter_mut().zip(f) {
            *acc += w * fi;
        }
    }
    Ok(e)
}

/// Options for kernel assembly.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    pub max_entries: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            max_entries: DEFAULT_MAX_KERNEL_ENTRIES,
        }
    }
}

/// Assembles kernel rows `rows` in row-major order. Rows are independent,
/// so large kernels can be built (or resumed) in chunks.
pub fn assemble_rows(
    scene: &ValidatedScene,
    grids: &SampleGrids,
    kind: KernelKind,
    rows: Range<usize>,
) -> Vec<Complex64> {
    let n = grids.n();
    let k = scene.wavenumber();
    let currents: Vec<Complex64> = grids
        .ris_points
        .iter()
        .map(|p| incident_current(scene, p[1]))
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); rows.len() * n];
    out.par_chunks_mut(n)
        .zip(rows.clone())
        .for_each(|(row, m)| {
            let target = &grids.target_points[m];
            match kind {
                KernelKind::Z2d => {
                    let weight = -grids.ris_cell * target[2] / (4.0 * PI);
                    for ((entry, src), jx) in row.iter_mut().zip(&grids.ris_points).zip(&currents) {
                        let r = distance(target, src);
                        let radial = Complex64::new(1.0, k * r) / (r * r * r);
                        *entry = weight * radial * jx * (-J * k * r).exp();
                    }
                }
                KernelKind::Y3d => {
                    let g = green_tensor(&scene.receiver, target, k)
                        .expect("receiver lies outside the detection region");
                    let prefactor = -J * eta0() / (4.0 * PI * k) * grids.ris_cell;
                    for ((entry, src), jx) in row.iter_mut().zip(&grids.ris_points).zip(&currents) {
                        let (f, r) = e_out_factors(k, target, src);
                        let weighted = g.get(0, 0) * f[0] + g.get(0, 1) * f[1] + g.get(0, 2) * f[2];
                        *entry = prefactor * jx * (-J * k * r).exp() * weighted;
                    }
                }
            }
        });
    out
}

pub fn assemble_kernel(
    scene: &ValidatedScene,
    grids: &SampleGrids,
    kind: KernelKind,
    opts: AssemblyOptions,
) -> Result<KernelMatrix> {
    let expected = KernelKind::for_target(scene.kind());
    if kind != expected {
        return Err(Error::KindMismatch(format!(
            "{kind:?} kernel requested for a {} scene",
            scene.kind().as_str()
        )));
    }
    let (m, n) = (grids.m(), grids.n());
    if m.saturating_mul(n) > opts.max_entries {
        return Err(Error::KernelTooLarge {
            rows: m,
            cols: n,
            cap: opts.max_entries,
        });
    }
    let data = assemble_rows(scene, grids, kind, 0..m);
    Ok(KernelMatrix {
        entries: DMatrix::from_row_slice(m, n, &data),
        kind,
        fingerprint: scene.fingerprint(),
    })
}

pub fn kernel_2d(scene: &ValidatedScene, grids: &SampleGrids) -> Result<KernelMatrix> {
    assemble_kernel(scene, grids, KernelKind::Z2d, AssemblyOptions::default())
}

pub fn kernel_3d(scene: &ValidatedScene, grids: &SampleGrids) -> Result<KernelMatrix> {
    assemble_kernel(scene, grids, KernelKind::Y3d, AssemblyOptions::default())
}

/// `H_out^y` on the target samples, `y = Z p`.
pub fn h_out_y(kernel: &KernelMatrix, p: &[Complex64]) -> Result<Vec<Complex64>> {
    if kernel.kind != KernelKind::Z2d {
        return Err(Error::KindMismatch("h_out_y needs a Z kernel".into()));
    }
    kernel.apply(p)
}
