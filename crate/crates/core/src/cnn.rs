//! Two-layer patch CNN: per-class filter banks with fixed +-1/m second layer,
//! Huberized ReLU activation, logistic loss and exact analytic gradients.
//!
//! Filters are stored as columns of a d x m matrix per class, so one filter
//! occupies contiguous memory. The checkpoint payload writes filters in that
//! same order (all of the positive bank, then the negative bank).

use std::fs;
use std::io::{BufRead as _, BufReader, Read as _, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVectorView};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_dataset, BasisSystem, Label, PatchedDataset, SPolicy};
use crate::error::{Error, Result};

/// Weights and activation constants of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub m: usize,
    pub d: usize,
    /// Activation exponent, >= 3.
    pub q: u32,
    /// Huberization threshold, > 0.
    pub kappa: f64,
    /// d x m, column r = filter r of the positive class.
    pub w_plus: DMatrix<f64>,
    /// d x m, column r = filter r of the negative class.
    pub w_minus: DMatrix<f64>,
}

impl CnnParams {
    pub fn new(q: u32, kappa: f64, w_plus: DMatrix<f64>, w_minus: DMatrix<f64>) -> Result<Self> {
        if q < 3 {
            return Err(Error::InvalidInput(format!("q = {q} must be >= 3")));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidInput(format!("kappa = {kappa} must be positive")));
        }
        if w_plus.shape() != w_minus.shape() {
            return Err(Error::InvalidInput("filter banks must share a shape".into()));
        }
        let (d, m) = w_plus.shape();
        if d == 0 || m == 0 {
            return Err(Error::InvalidInput("empty filter bank".into()));
        }
        let finite = w_plus.iter().chain(w_minus.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("weights must be finite".into()));
        }
        Ok(CnnParams {
            m,
            d,
            q,
            kappa,
            w_plus,
            w_minus,
        })
    }

    pub fn bank(&self, class: Label) -> &DMatrix<f64> {
        match class {
            Label::Plus => &self.w_plus,
            Label::Minus => &self.w_minus,
        }
    }

    pub fn bank_mut(&mut self, class: Label) -> &mut DMatrix<f64> {
        match class {
            Label::Plus => &mut self.w_plus,
            Label::Minus => &mut self.w_minus,
        }
    }

    pub fn filter(&self, class: Label, r: usize) -> DVectorView<'_, f64> {
        self.bank(class).column(r)
    }
}

/// Huberized ReLU: zero for z <= 0, z^q/(q kappa^{q-1}) on [0, kappa],
/// linear with slope 1 beyond.
pub fn act(z: f64, q: u32, kappa: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z <= kappa {
        z.powi(q as i32) / (q as f64 * kappa.powi(q as i32 - 1))
    } else {
        z - (1.0 - 1.0 / q as f64) * kappa
    }
}

/// Exact derivative of [`act`]; the kinks at 0 and kappa take the
/// middle-branch one-sided value (0 and 1 respectively).
pub fn act_prime(z: f64, q: u32, kappa: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z <= kappa {
        (z / kappa).powi(q as i32 - 1)
    } else {
        1.0
    }
}

/// log(1 + e^{-z}) without overflow for |z| up to ~700.
pub fn logistic_loss(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// d/dz log(1 + e^{-z}) = -1/(1 + e^z), computed without overflow.
pub fn logistic_loss_prime(z: f64) -> f64 {
    if z >= 0.0 {
        let t = (-z).exp();
        -t / (1.0 + t)
    } else {
        -1.0 / (1.0 + z.exp())
    }
}

/// Class scores (F_plus, F_minus) for one patch block; the network output is
/// their difference.
pub fn forward_parts(params: &CnnParams, x: &DMatrix<f64>) -> Result<(f64, f64)> {
    if x.nrows() != params.d {
        return Err(Error::InvalidInput(format!(
            "input dimension {} does not match filters ({})",
            x.nrows(),
            params.d
        )));
    }
    let score = |bank: &DMatrix<f64>| -> f64 {
        // pre-activations: (P x m) = x^T bank
        let pre = x.transpose() * bank;
        let mut sum = 0.0;
        for v in pre.iter() {
            sum += act(*v, params.q, params.kappa);
        }
        sum / params.m as f64
    };
    Ok((score(&params.w_plus), score(&params.w_minus)))
}

pub fn forward(params: &CnnParams, x: &DMatrix<f64>) -> Result<f64> {
    let (fp, fm) = forward_parts(params, x)?;
    Ok(fp - fm)
}

/// Margins y_i * f(W, X_i) for every sample.
pub fn margins(params: &CnnParams, data: &PatchedDataset) -> Result<Vec<f64>> {
    data.inputs
        .iter()
        .zip(&data.labels)
        .map(|(x, y)| forward(params, x).map(|f| y.sign() * f))
        .collect()
}

/// Empirical logistic loss (1/n) sum_i log(1 + exp(-y_i f(W, X_i))).
pub fn training_loss(params: &CnnParams, data: &PatchedDataset) -> Result<f64> {
    if data.n == 0 {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let marg = margins(params, data)?;
    Ok(marg.iter().map(|&z| logistic_loss(z)).sum::<f64>() / data.n as f64)
}

/// Analytic gradient of the empirical loss, one block per bank with the same
/// shape as the weights.
///
/// Filters are processed in parallel, but each filter accumulates its own
/// gradient in a fixed sample-major patch order, so the result is bitwise
/// independent of the thread count.
pub fn gradient(params: &CnnParams, data: &PatchedDataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if data.n == 0 {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    if data.d != params.d {
        return Err(Error::InvalidInput("dataset dimension mismatch".into()));
    }
    let n = data.n as f64;
    let m = params.m as f64;
    let marg = margins(params, data)?;
    let lprime: Vec<f64> = marg.iter().map(|&z| logistic_loss_prime(z)).collect();

    let bank_grad = |class: Label| -> DMatrix<f64> {
        let bank = params.bank(class);
        let j = class.sign();
        let cols: Vec<Vec<f64>> = (0..params.m)
            .into_par_iter()
            .map(|r| {
                let w = bank.column(r);
                let mut g = vec![0.0f64; params.d];
                for (i, x) in data.inputs.iter().enumerate() {
                    let outer = lprime[i] * j * data.labels[i].sign() / (n * m);
                    for p in 0..data.p {
                        let xp = x.column(p);
                        let pre = w.dot(&xp);
                        let slope = act_prime(pre, params.q, params.kappa);
                        if slope != 0.0 {
                            let c = outer * slope;
                            for (gi, xi) in g.iter_mut().zip(xp.iter()) {
                                *gi += c * xi;
                            }
                        }
                    }
                }
                g
            })
            .collect();
        let mut out = DMatrix::zeros(params.d, params.m);
        for (r, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                out[(i, r)] = *v;
            }
        }
        out
    };

    Ok((bank_grad(Label::Plus), bank_grad(Label::Minus)))
}

/// Monte-Carlo test loss on freshly sampled data: mean and standard error.
#[allow(clippy::too_many_arguments)]
pub fn test_loss_estimate(
    params: &CnnParams,
    basis: &BasisSystem,
    p: usize,
    policy: SPolicy,
    sigma_noise: f64,
    n_test: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_test == 0 {
        return Err(Error::InvalidInput("n_test must be >= 1".into()));
    }
    let fresh = sample_dataset(basis, n_test, p, policy, sigma_noise, seed)?;
    let marg = margins(params, &fresh)?;
    let losses: Vec<f64> = marg.iter().map(|&z| logistic_loss(z)).collect();
    let mean = losses.iter().sum::<f64>() / n_test as f64;
    let stderr = if n_test < 2 {
        0.0
    } else {
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n_test as f64 - 1.0);
        (var / n_test as f64).sqrt()
    };
    Ok((mean, stderr))
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    m: usize,
    d: usize,
    q: u32,
    kappa: f64,
    step: u64,
    seed: u64,
}

/// Write a checkpoint: one JSON header line, then both banks as f64
/// little-endian, filter-contiguous (positive bank first).
pub fn save_checkpoint(params: &CnnParams, step: u64, seed: u64, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        m: params.m,
        d: params.d,
        q: params.q,
        kappa: params.kappa,
        step,
        seed,
    };
    let mut f = fs::File::create(path)?;
    let mut line = serde_json::to_string(&header)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    let mut buf = Vec::with_capacity(2 * params.d * params.m * 8);
    for bank in [&params.w_plus, &params.w_minus] {
        for v in bank.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(CnnParams, u64, u64)> {
    let f = fs::File::open(path)?;
    let mut reader = BufReader::new(f);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    let expect = 2 * header.d * header.m * 8;
    if raw.len() != expect {
        return Err(Error::Format(format!(
            "checkpoint payload has {} bytes, expected {expect}",
            raw.len()
        )));
    }
    let read_bank = |off: usize| -> DMatrix<f64> {
        DMatrix::from_fn(header.d, header.m, |i, r| {
            let pos = off + (r * header.d + i) * 8;
            f64::from_le_bytes(raw[pos..pos + 8].try_into().unwrap())
        })
    };
    let w_plus = read_bank(0);
    let w_minus = read_bank(header.d * header.m * 8);
    let params = CnnParams::new(header.q, header.kappa, w_plus, w_minus)?;
    Ok((params, header.step, header.seed))
}
