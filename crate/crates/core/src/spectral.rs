//! Singular values and rank functionals for small dense matrices.
//!
//! Everything here works on the full spectrum: threshold rank needs every
//! singular value, so no truncated/iterative solver is used.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Sorted spectrum of a matrix plus the derived rank functionals.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    /// All min(d1, d2) singular values, descending.
    pub singular_values: Vec<f64>,
    /// Entrywise Frobenius norm of the matrix.
    pub frobenius_norm: f64,
    /// Largest singular value.
    pub operator_norm: f64,
    /// frobenius_norm^2 / operator_norm^2.
    pub stable_rank: f64,
    /// Count of singular values >= ratio * largest.
    pub threshold_rank: usize,
    /// Ratio the threshold rank was computed with.
    pub threshold_ratio: f64,
}

fn check_finite(a: &DMatrix<f64>) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Full singular value spectrum, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(a)?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::InvalidInput("matrix must be at least 1x1".into()));
    }
    let mut vals: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(vals)
}

/// Frobenius-to-operator ratio squared. Undefined for the zero matrix.
pub fn stable_rank(a: &DMatrix<f64>) -> Result<f64> {
    check_finite(a)?;
    let fro = a.norm();
    if fro == 0.0 {
        return Err(Error::UndefinedRank);
    }
    let op = singular_values(a)?[0];
    Ok((fro / op).powi(2))
}

/// Count of spectrum entries >= ratio * spectrum[0].
///
/// `spectrum` must be non-empty and sorted descending; `ratio` in (0, 1].
/// Returns 0 only when the spectrum is identically zero.
pub fn rank_at_threshold(spectrum: &[f64], ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold ratio must lie in (0, 1], got {ratio}"
        )));
    }
    if spectrum.is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    if spectrum.windows(2).any(|w| w[0] < w[1]) || spectrum.iter().any(|v| *v < 0.0 || !v.is_finite())
    {
        return Err(Error::InvalidInput(
            "spectrum must be non-negative and sorted descending".into(),
        ));
    }
    let top = spectrum[0];
    if top == 0.0 {
        return Ok(0);
    }
    let cut = ratio * top;
    Ok(spectrum.iter().take_while(|v| **v >= cut).count())
}

/// Build a full report from a matrix.
pub fn spectrum_report(a: &DMatrix<f64>, threshold_ratio: f64) -> Result<SpectrumReport> {
    let vals = singular_values(a)?;
    let fro = a.norm();
    report_from_values(vals, fro, threshold_ratio)
}

/// Build a report from precomputed singular values (e.g. the Gram-eigenvalue
/// route used by the trainer) and an independently computed Frobenius norm.
pub fn report_from_values(
    singular_values: Vec<f64>,
    frobenius_norm: f64,
    threshold_ratio: f64,
) -> Result<SpectrumReport> {
    let op = *singular_values
        .first()
        .ok_or_else(|| Error::InvalidInput("empty spectrum".into()))?;
    if op == 0.0 {
        return Err(Error::UndefinedRank);
    }
    let threshold_rank = rank_at_threshold(&singular_values, threshold_ratio)?;
    Ok(SpectrumReport {
        stable_rank: (frobenius_norm / op).powi(2),
        operator_norm: op,
        frobenius_norm,
        threshold_rank,
        threshold_ratio,
        singular_values,
    })
}

/// Spectrum report via the smaller-side Gram eigendecomposition. Same values
/// as the SVD route up to sqrt(machine-eps) * top, far cheaper for very tall
/// or wide matrices (cost scales with the smaller dimension cubed).
pub fn spectrum_report_via_gram(a: &DMatrix<f64>, threshold_ratio: f64) -> Result<SpectrumReport> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let gram = if c <= r {
        a.transpose() * a
    } else {
        a * a.transpose()
    };
    let eig = gram.symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        // The tridiagonal eigensolver can emit inf/NaN on heavily
        // rank-deficient grams; the direct SVD route is robust.
        return spectrum_report(a, threshold_ratio);
    }
    let mut vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    vals.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    report_from_values(vals, a.norm(), threshold_ratio)
}

/// Spectrum of a concatenation [A B] with mutually orthogonal column blocks
/// equals the merged spectra of A and B. Returns the max sorted-multiset
/// deviation; the caller asserts it against 1e-8 * ||[A B]||_2.
///
/// Precondition: every column of A orthogonal to every column of B within
/// 1e-10 (scaled by the column norms when those exceed 1).
pub fn spectrum_union_check(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::InvalidInput(format!(
            "row mismatch: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    const ORTHO_TOL: f64 = 1e-10;
    let mut worst = 0.0f64;
    for ca in a.column_iter() {
        for cb in b.column_iter() {
            let scale = (ca.norm() * cb.norm()).max(1.0);
            worst = worst.max(ca.dot(&cb).abs() / scale);
        }
    }
    if worst > ORTHO_TOL {
        return Err(Error::NotOrthogonal {
            deviation: worst,
            limit: ORTHO_TOL,
        });
    }

    let mut concat = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    concat.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    concat
        .view_mut((0, a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(b);

    let joint = singular_values(&concat)?;
    let mut merged = singular_values(a)?;
    merged.extend(singular_values(b)?);
    merged.sort_by(|x, y| y.partial_cmp(x).unwrap());

    // Orthogonal blocks force rank(A) + rank(B) <= d, so any length mismatch
    // is made up of (near-)zero values; compare after zero-padding.
    let len = joint.len().max(merged.len());
    let dev = (0..len)
        .map(|i| {
            let x = joint.get(i).copied().unwrap_or(0.0);
            let y = merged.get(i).copied().unwrap_or(0.0);
            (x - y).abs()
        })
        .fold(0.0f64, f64::max);
    Ok(dev)
}
