//! Post-hoc diagnostics: filter spectra, the signal/noise decomposition of
//! trained filters, basis alignment, and the growth-law and loss-rate fits
//! used by the acceptance checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::cnn::CnnParams;
use crate::data::{BasisSystem, Label, PatchedDataset, RegimeReport};
use crate::error::{Error, Result};
use crate::spectral::{self, SpectrumReport};
use crate::train::TrainTrace;
use crate::DEFAULT_THRESHOLD_RATIO;

/// Spectrum of the matrix stacking all 2m filters as rows, at the default
/// threshold ratio.
pub fn filter_matrix_spectrum(params: &CnnParams) -> Result<SpectrumReport> {
    filter_matrix_spectrum_with_ratio(params, DEFAULT_THRESHOLD_RATIO)
}

pub fn filter_matrix_spectrum_with_ratio(
    params: &CnnParams,
    ratio: f64,
) -> Result<SpectrumReport> {
    // singular values are transpose-invariant; the d x 2m bank concatenation
    // stands in for the 2m x d row stack
    let mut stacked = DMatrix::zeros(params.d, 2 * params.m);
    stacked
        .view_mut((0, 0), (params.d, params.m))
        .copy_from(&params.w_plus);
    stacked
        .view_mut((0, params.m), (params.d, params.m))
        .copy_from(&params.w_minus);
    spectral::spectrum_report(&stacked, ratio)
}

/// ||P_N(w_{j,r} - w_{j,r}^{(0)})|| for every filter, positive bank first.
pub fn noise_projection_norms(
    params: &CnnParams,
    init_params: &CnnParams,
    basis: &BasisSystem,
) -> Result<Vec<f64>> {
    if params.d != init_params.d || params.m != init_params.m {
        return Err(Error::InvalidInput("init/current shape mismatch".into()));
    }
    if basis.dim() != params.d {
        return Err(Error::InvalidInput("basis dimension mismatch".into()));
    }
    let mut out = Vec::with_capacity(2 * params.m);
    for class in [Label::Plus, Label::Minus] {
        let bank = params.bank(class);
        let bank0 = init_params.bank(class);
        for r in 0..params.m {
            let delta = DVector::from_iterator(
                params.d,
                bank.column(r).iter().zip(bank0.column(r).iter()).map(|(a, b)| a - b),
            );
            out.push(basis.project_noise(&delta).norm());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// optimal assignment

/// Max-weight assignment of the K columns of `weights` (m x K, m >= K) to K
/// distinct rows. Returns the chosen row per column plus the matched total.
///
/// Hungarian algorithm with potentials on the negated weights; exact for
/// this problem size and deterministic.
pub fn max_weight_assignment(weights: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    let (m, k) = weights.shape();
    if k == 0 {
        return Ok((Vec::new(), 0.0));
    }
    if m < k {
        return Err(Error::Capacity(format!(
            "cannot match {k} columns to {m} rows"
        )));
    }
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("assignment weights must be finite".into()));
    }
    // 1-based: i in 1..=k are basis columns, j in 1..=m are filter rows,
    // j = 0 is the virtual root of each augmenting search
    let cost = |i: usize, j: usize| -weights[(j - 1, i - 1)];
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j] = basis column currently matched to filter row j, 0 = free
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(delta.is_finite());
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // flip the matching along the alternating path back to the root
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_of_col = vec![usize::MAX; k];
    for j in 1..=m {
        if p[j] != 0 {
            row_of_col[p[j] - 1] = j - 1;
        }
    }
    debug_assert!(row_of_col.iter().all(|&r| r != usize::MAX));
    let total: f64 = (0..k).map(|c| weights[(row_of_col[c], c)]).sum();
    Ok((row_of_col, total))
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassAlignment {
    /// Matched filter row per basis index k.
    pub matched: Vec<usize>,
    /// Inner product of each matched pair.
    pub inner: Vec<f64>,
    /// || W*/||W*|| - P W/||W|| ||_F for this class.
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentReport {
    pub per_class: [ClassAlignment; 2],
    /// Worse (larger) of the two class distances.
    pub distance: f64,
}

/// Alignment for one class from its overlap matrix (m x K with entry (r,k) =
/// <w_{j,r}, mu_{j,k}>) and the class Frobenius norm ||W_j||_F.
///
/// With matched rows first, the normalized distance collapses to
/// sqrt(2 - 2 * matched_sum / (sqrt(K) * ||W_j||_F)).
pub fn alignment_for_class(overlaps: &DMatrix<f64>, fro_norm: f64) -> Result<ClassAlignment> {
    let k = overlaps.ncols();
    if !(fro_norm > 0.0) {
        return Err(Error::UndefinedRank);
    }
    let (matched, total) = max_weight_assignment(overlaps)?;
    let inner: Vec<f64> = (0..k).map(|c| overlaps[(matched[c], c)]).collect();
    let d2 = 2.0 - 2.0 * total / ((k as f64).sqrt() * fro_norm);
    Ok(ClassAlignment {
        matched,
        inner,
        distance: d2.max(0.0).sqrt(),
    })
}

/// Optimal-assignment alignment between each class bank and its basis set.
pub fn alignment_distance(params: &CnnParams, basis: &BasisSystem) -> Result<AlignmentReport> {
    if params.m < basis.k() {
        return Err(Error::Capacity(format!(
            "m = {} filters cannot cover K = {} basis vectors",
            params.m,
            basis.k()
        )));
    }
    let mut per_class = Vec::with_capacity(2);
    for class in [Label::Plus, Label::Minus] {
        let bank = params.bank(class);
        let overlaps = DMatrix::from_fn(params.m, basis.k(), |r, kk| {
            bank.column(r).dot(&basis.mu(class, kk))
        });
        per_class.push(alignment_for_class(&overlaps, bank.norm())?);
    }
    let distance = per_class[0].distance.max(per_class[1].distance);
    let per_class: [ClassAlignment; 2] = [per_class.remove(0), per_class.remove(0)];
    Ok(AlignmentReport {
        per_class,
        distance,
    })
}

// ---------------------------------------------------------------------------
// filter decomposition

/// Signal/noise decomposition of w - w^(0) for every filter: own-class basis
/// coefficients (gamma), opposite-class coefficients (beta), coefficients on
/// the noise dictionary {xi / ||xi||^2} (rho), the complement projection Xi
/// and the reconstruction residual.
#[derive(Debug, Clone)]
pub struct FilterDecomposition {
    pub k: usize,
    pub m: usize,
    /// [class]: K x m, own-class coefficients (signed).
    pub gamma: [DMatrix<f64>; 2],
    /// [class]: K x m, opposite-class coefficients (signed).
    pub beta: [DMatrix<f64>; 2],
    /// [class]: C x m coefficients on xi/||xi||^2, rows aligned with `atoms`.
    pub rho: [DMatrix<f64>; 2],
    /// (sample, patch) identity of each noise atom row.
    pub atoms: Vec<(usize, usize)>,
    /// [class]: per-filter ||P_N(w - w0)||.
    pub xi_norms: [Vec<f64>; 2],
    /// [class]: per-filter reconstruction residual norm.
    pub residuals: [Vec<f64>; 2],
    /// Condition number of the noise-dictionary Gram (1 when C = 0).
    pub gram_condition: f64,
}

const GRAM_COND_LIMIT: f64 = 1e12;

pub fn decompose_filters(
    params: &CnnParams,
    init_params: &CnnParams,
    basis: &BasisSystem,
    data: &PatchedDataset,
) -> Result<FilterDecomposition> {
    if params.d != init_params.d || params.m != init_params.m {
        return Err(Error::InvalidInput("init/current shape mismatch".into()));
    }
    if basis.dim() != params.d || data.d != params.d {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    let k = basis.k();
    let d = params.d;

    // noise dictionary atoms xi/||xi||^2; zero-norm directions (sigma = 0)
    // carry no information and are excluded
    let mut atoms = Vec::new();
    let mut atom_cols: Vec<DVector<f64>> = Vec::new();
    for e in 0..data.noise_count() {
        let xi = data.xi(e);
        let sq = xi.norm_squared();
        if sq > 0.0 {
            atoms.push(data.noise_index[e]);
            atom_cols.push(xi.into_owned() / sq);
        }
    }
    let c = atoms.len();

    let (gram_condition, chol) = if c > 0 {
        let mut gram = DMatrix::zeros(c, c);
        for e in 0..c {
            for f in e..c {
                let v = atom_cols[e].dot(&atom_cols[f]);
                gram[(e, f)] = v;
                gram[(f, e)] = v;
            }
        }
        let eig = SymmetricEigen::new(gram.clone());
        let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let cond = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(cond <= GRAM_COND_LIMIT) {
            return Err(Error::IllConditioned { cond });
        }
        let chol = gram
            .cholesky()
            .ok_or(Error::IllConditioned { cond })?;
        (cond, Some(chol))
    } else {
        (1.0, None)
    };

    let mut gamma = [DMatrix::zeros(k, params.m), DMatrix::zeros(k, params.m)];
    let mut beta = [DMatrix::zeros(k, params.m), DMatrix::zeros(k, params.m)];
    let mut rho = [DMatrix::zeros(c, params.m), DMatrix::zeros(c, params.m)];
    let mut xi_norms = [Vec::new(), Vec::new()];
    let mut residuals = [Vec::new(), Vec::new()];

    for class in [Label::Plus, Label::Minus] {
        let ci = class.index();
        let bank = params.bank(class);
        let bank0 = init_params.bank(class);
        for r in 0..params.m {
            let delta = DVector::from_iterator(
                d,
                bank.column(r).iter().zip(bank0.column(r).iter()).map(|(a, b)| a - b),
            );
            for kk in 0..k {
                gamma[ci][(kk, r)] = delta.dot(&basis.mu(class, kk));
                beta[ci][(kk, r)] = delta.dot(&basis.mu(class.other(), kk));
            }
            let projected = basis.project_noise(&delta);
            xi_norms[ci].push(projected.norm());

            let mut recon = DVector::zeros(d);
            for kk in 0..k {
                recon.axpy(gamma[ci][(kk, r)], &basis.mu(class, kk).into_owned(), 1.0);
                recon.axpy(beta[ci][(kk, r)], &basis.mu(class.other(), kk).into_owned(), 1.0);
            }
            if let Some(chol) = &chol {
                let rhs = DVector::from_iterator(c, atom_cols.iter().map(|a| a.dot(&projected)));
                let coeffs = chol.solve(&rhs);
                for (e, atom) in atom_cols.iter().enumerate() {
                    rho[ci][(e, r)] = coeffs[e];
                    recon.axpy(coeffs[e], atom, 1.0);
                }
            }
            residuals[ci].push((&delta - recon).norm());
        }
    }

    Ok(FilterDecomposition {
        k,
        m: params.m,
        gamma,
        beta,
        rho,
        atoms,
        xi_norms,
        residuals,
        gram_condition,
    })
}

// ---------------------------------------------------------------------------
// law fits

#[derive(Debug, Clone, Serialize)]
pub struct GrowthFit {
    pub class: usize,
    pub k: usize,
    /// First logged step with signal >= kappa, if any.
    pub burn_in_step: Option<u64>,
    pub points: usize,
    /// Least-squares fit of signal against m * ln t over the window.
    pub slope: f64,
    pub intercept: f64,
    /// max |ratio - mean| / mean over the window, ratio = signal/(m ln t).
    pub max_ratio_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthFitReport {
    pub fits: Vec<GrowthFit>,
    /// Final-decade window [t_end/10, t_end] in logged steps.
    pub window: (u64, u64),
}

/// Fit the per-(j,k) signal growth law over the final decade of logged
/// steps, past each signal's own crossing of kappa.
pub fn fit_growth_law(trace: &TrainTrace, m: usize) -> Result<GrowthFitReport> {
    let rows: Vec<_> = trace.rows.iter().filter(|r| r.step > 0).collect();
    let t_end = rows
        .last()
        .map(|r| r.step)
        .ok_or(Error::InsufficientPoints { needed: 5, got: 0 })?;
    let t_lo = t_end / 10;
    let window = (t_lo.max(1), t_end);
    let mf = m as f64;

    let mut fits = Vec::new();
    for idx in 0..2 * trace.k {
        let burn_in_step = trace
            .rows
            .iter()
            .find(|r| r.signal.get(idx).is_some_and(|&v| v >= trace.kappa))
            .map(|r| r.step);
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| {
                r.step >= window.0
                    && burn_in_step.is_some_and(|b| r.step >= b)
            })
            .map(|r| ((mf * (r.step as f64).ln()), r.signal[idx]))
            .collect();
        if pts.len() < 5 {
            return Err(Error::InsufficientPoints {
                needed: 5,
                got: pts.len(),
            });
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-30 {
            return Err(Error::InvalidInput("degenerate fit window".into()));
        }
        let slope = (n * sxy - sx * sy) / denom;
        let intercept = (sy - slope * sx) / n;

        let ratios: Vec<f64> = pts.iter().map(|p| p.1 / p.0).collect();
        let mean = ratios.iter().sum::<f64>() / n;
        let max_ratio_deviation = if mean.abs() > 0.0 {
            ratios
                .iter()
                .map(|r| (r - mean).abs() / mean.abs())
                .fold(0.0f64, f64::max)
        } else {
            f64::INFINITY
        };
        fits.push(GrowthFit {
            class: idx / trace.k,
            k: idx % trace.k,
            burn_in_step,
            points: pts.len(),
            slope,
            intercept,
            max_ratio_deviation,
        });
    }
    Ok(GrowthFitReport { fits, window })
}

#[derive(Debug, Clone, Serialize)]
pub struct LossRateReport {
    /// First logged step at which every (j,k) signal has crossed kappa.
    pub t0: u64,
    /// (step, eta * step * L_S / m^2) along the doubling chain from t0.
    pub checkpoints: Vec<(u64, f64)>,
    /// max of p_{i+1}/p_i and its inverse over consecutive checkpoints.
    pub max_ratio: f64,
}

/// Loss-rate products along the doubling chain t0, 2 t0, 4 t0, ... where t0
/// is the first logged step after the phase-1 crossing is complete. The
/// schedule must contain at least three chain points.
pub fn fit_loss_rate(trace: &TrainTrace, eta: f64, m: usize) -> Result<LossRateReport> {
    let crossed = |row: &crate::train::TraceRow| -> bool {
        !row.signal.is_empty() && row.signal.iter().all(|&v| v >= trace.kappa)
    };
    let t0 = trace
        .rows
        .iter()
        .find(|r| r.step > 0 && crossed(r))
        .map(|r| r.step)
        .ok_or(Error::InsufficientPoints { needed: 3, got: 0 })?;

    let m2 = (m as f64).powi(2);
    let mut checkpoints = Vec::new();
    let mut t = t0;
    while let Some(row) = trace.row_at(t) {
        checkpoints.push((t, eta * t as f64 * row.train_loss / m2));
        match t.checked_mul(2) {
            Some(next) => t = next,
            None => break,
        }
    }
    if checkpoints.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: checkpoints.len(),
        });
    }
    let mut max_ratio = 1.0f64;
    for w in checkpoints.windows(2) {
        let (p0, p1) = (w[0].1, w[1].1);
        if p0 <= 0.0 || p1 <= 0.0 {
            return Err(Error::InvalidInput("nonpositive loss-rate product".into()));
        }
        max_ratio = max_ratio.max(p1 / p0).max(p0 / p1);
    }
    Ok(LossRateReport {
        t0,
        checkpoints,
        max_ratio,
    })
}

// ---------------------------------------------------------------------------
// rank gap

#[derive(Debug, Clone, Serialize)]
pub struct RankGapReport {
    /// |sr(W) - 2K|.
    pub filter_sr_gap: f64,
    /// 1/ln T reference scale.
    pub inv_log_t: f64,
    /// Single-point constant: filter_sr_gap * ln T.
    pub fitted_c: f64,
    /// sr(data) - 2K.
    pub data_sr_excess: f64,
    pub filter_threshold_rank: usize,
    pub data_threshold_rank: usize,
    pub regime: RegimeReport,
}

pub fn rank_gap_report(
    data_spectrum: &SpectrumReport,
    filter_spectrum: &SpectrumReport,
    k: usize,
    t: u64,
    regime: RegimeReport,
) -> RankGapReport {
    let two_k = (2 * k) as f64;
    let log_t = (t.max(2) as f64).ln();
    let gap = (filter_spectrum.stable_rank - two_k).abs();
    RankGapReport {
        filter_sr_gap: gap,
        inv_log_t: 1.0 / log_t,
        fitted_c: gap * log_t,
        data_sr_excess: data_spectrum.stable_rank - two_k,
        filter_threshold_rank: filter_spectrum.threshold_rank,
        data_threshold_rank: data_spectrum.threshold_rank,
        regime,
    }
}
