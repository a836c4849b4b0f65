//! RIS coefficient synthesis: Tikhonov-regularized pseudo-inverse of the
//! propagation kernel followed by active-power normalization.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::em::{KernelKind, KernelMatrix};
use crate::error::{Error, Result};
use crate::masks::{write_vector_set, MaskKind, MaskSet, RealizedMasks, VectorStage};

/// Default truncation factor relative to `gamma`.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 1e-5;

/// How singular values are compared against `threshold_factor * gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruncationRule {
    /// Drop `sigma` when `sigma^2 < factor * gamma`.
    #[default]
    Squared,
    /// Drop `sigma` when `sigma < factor * gamma`.
    Linear,
}

impl TruncationRule {
    fn drops(self, sigma: f64, threshold: f64) -> bool {
        match self {
            TruncationRule::Squared => sigma * sigma < threshold,
            TruncationRule::Linear => sigma < threshold,
        }
    }
}

/// Truncated SVD form of `(K^H K + gamma I)^-1 K^H`.
#[derive(Debug, Clone)]
pub struct RegularizedInverse {
    /// Retained left singular vectors, `M x rank`.
    pub left: DMatrix<Complex64>,
    /// Retained right singular vectors, `N x rank`.
    pub right: DMatrix<Complex64>,
    /// `sigma / (sigma^2 + gamma)` for the retained values.
    pub inverse_gains: Vec<f64>,
    /// Full singular spectrum, descending.
    pub singular_values: Vec<f64>,
    pub gamma: f64,
    pub threshold_factor: f64,
    pub rule: TruncationRule,
    pub rank: usize,
}

impl RegularizedInverse {
    pub fn input_len(&self) -> usize {
        self.left.nrows()
    }

    pub fn output_len(&self) -> usize {
        self.right.nrows()
    }

    /// Regularized solution `p = V diag(gain) U^H y`.
    pub fn apply(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        if y.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                found: y.len(),
            });
        }
        let y = DVector::from_column_slice(y);
        let mut coeffs = self.left.ad_mul(&y);
        for (c, &g) in coeffs.iter_mut().zip(&self.inverse_gains) {
            *c *= g;
        }
        Ok((&self.right * coeffs).as_slice().to_vec())
    }

    /// Number of singular values above `relative * sigma_1`.
    pub fn rank_above(&self, relative: f64) -> usize {
        rank_above(&self.singular_values, relative)
    }
}

pub fn rank_above(singular_values: &[f64], relative: f64) -> usize {
    let Some(&first) = singular_values.first() else {
        return 0;
    };
    singular_values.iter().filter(|&&s| s > relative * first).count()
}

pub fn tikhonov_inverse(kernel: &KernelMatrix, gamma: f64, threshold_factor: f64) -> Result<RegularizedInverse> {
    from_matrix(&kernel.entries, gamma, threshold_factor, TruncationRule::default())
}

pub fn tikhonov_inverse_with(
    kernel: &KernelMatrix,
    gamma: f64,
    threshold_factor: f64,
    rule: TruncationRule,
) -> Result<RegularizedInverse> {
    from_matrix(&kernel.entries, gamma, threshold_factor, rule)
}

/// Builds the regularized inverse of an arbitrary complex matrix.
pub fn from_matrix(
    matrix: &DMatrix<Complex64>,
    gamma: f64,
    threshold_factor: f64,
    rule: TruncationRule,
) -> Result<RegularizedInverse> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::NonPositiveDimension {
            name: "gamma",
            value: gamma,
        });
    }
    let svd = matrix
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(Error::SvdFailure)?;
    let u = svd.u.ok_or(Error::SvdFailure)?;
    let v_t = svd.v_t.ok_or(Error::SvdFailure)?;
    let sigma = svd.singular_values;
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::SvdFailure);
    }

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| sigma[i]).collect();

    let threshold = threshold_factor * gamma;
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| !rule.drops(sigma[i], threshold))
        .collect();
    let rank = kept.len();
    let left = DMatrix::from_fn(u.nrows(), rank, |r, c| u[(r, kept[c])]);
    let right = DMatrix::from_fn(v_t.ncols(), rank, |r, c| v_t[(kept[c], r)].conj());
    let inverse_gains = kept.iter().map(|&i| sigma[i] / (sigma[i] * sigma[i] + gamma)).collect();

    Ok(RegularizedInverse {
        left,
        right,
        inverse_gains,
        singular_values,
        gamma,
        threshold_factor,
        rule,
        rank,
    })
}

/// One synthesized RIS coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RisProfile {
    pub coefficients: Vec<Complex64>,
    pub index: usize,
    /// Norm of the regularized solution before power normalization.
    pub raw_norm: f64,
}

/// Regularized solve for `ideal_mask`, rescaled so `|p|^2 = N * P_I`.
pub fn synthesize(
    inv: &RegularizedInverse,
    ideal_mask: &[Complex64],
    index: usize,
    amplification: f64,
) -> Result<RisProfile> {
    let raw = inv.apply(ideal_mask)?;
    let raw_norm = raw.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if raw_norm == 0.0 || !raw_norm.is_finite() {
        return Err(Error::ZeroSolution);
    }
    let scale = (raw.len() as f64 * amplification).sqrt() / raw_norm;
    Ok(RisProfile {
        coefficients: raw.into_iter().map(|c| c * scale).collect(),
        index,
        raw_norm,
    })
}

/// Synthesizes a profile for every ideal mask and stores the fields the
/// kernel actually produces with them.
pub fn realize_masks(
    kernel: &KernelMatrix,
    inv: &RegularizedInverse,
    masks: &MaskSet,
    amplification: f64,
) -> Result<MaskSet> {
    let expected = match kernel.kind {
        KernelKind::Z2d => MaskKind::Mask2d,
        KernelKind::Y3d => MaskKind::Mask3d,
    };
    if masks.kind != expected {
        return Err(Error::KindMismatch(format!(
            "{:?} masks cannot be realized with a {:?} kernel",
            masks.kind, kernel.kind
        )));
    }
    let count = masks.ideal.len();
    if count == 0 {
        return Err(Error::EmptyMaskSet);
    }
    let len = inv.input_len();
    if let Some(bad) = masks.ideal.iter().find(|v| v.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: bad.len(),
        });
    }
    let ideal = DMatrix::from_fn(len, count, |m, i| masks.ideal[i][m]);
    let mut coeffs = complex_matmul(&inv.left.adjoint(), &ideal);
    for (mut row, &gain) in coeffs.row_iter_mut().zip(&inv.inverse_gains) {
        row *= Complex64::new(gain, 0.0);
    }
    let mut raw = complex_matmul(&inv.right, &coeffs);
    let n = raw.nrows() as f64;
    let mut profiles = Vec::with_capacity(count);
    for (i, mut col) in raw.column_iter_mut().enumerate() {
        let raw_norm = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if raw_norm == 0.0 || !raw_norm.is_finite() {
            return Err(Error::ZeroSolution);
        }
        col *= Complex64::new((n * amplification).sqrt() / raw_norm, 0.0);
        profiles.push(RisProfile {
            coefficients: col.iter().copied().collect(),
            index: i,
            raw_norm,
        });
    }
    let fields_matrix = complex_matmul(&kernel.entries, &raw);
    let fields = fields_matrix
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    Ok(MaskSet {
        realized: Some(RealizedMasks { fields, profiles }),
        ..masks.clone()
    })
}

/// Complex product through four real products, which use the blocked
/// `f64` kernels.
pub fn complex_matmul(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ai) = (a.map(|c| c.re), a.map(|c| c.im));
    let (br, bi) = (b.map(|c| c.re), b.map(|c| c.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, Complex64::new)
}

/// Regularization weight by absolute target distance (m): `1e-12` up to
/// 3 m, `1e-14` up to 5 m and `1e-15` beyond.
pub fn gamma_for_distance(target_distance: f64) -> f64 {
    if target_distance <= 3.0 {
        1e-12
    } else if target_distance <= 5.0 {
        1e-14
    } else {
        1e-15
    }
}

pub fn write_profiles<W: Write>(w: W, kind: MaskKind, fingerprint: u64, profiles: &[RisProfile]) -> Result<()> {
    let vectors: Vec<Vec<Complex64>> = profiles.iter().map(|p| p.coefficients.clone()).collect();
    write_vector_set(w, kind, VectorStage::RisProfile, fingerprint, &vectors)
}

/// Plain-text synthesis report: rank, gamma and the raw norm per mask.
pub fn profile_summary(inv: &RegularizedInverse, profiles: &[RisProfile]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "retained_rank = {}", inv.rank);
    let _ = writeln!(out, "gamma = {:e}", inv.gamma);
    let _ = writeln!(out, "threshold_factor = {:e}", inv.threshold_factor);
    let _ = writeln!(out, "index raw_norm");
    for p in profiles {
        let _ = writeln!(out, "{} {:e}", p.index, p.raw_norm);
    }
    out
}
