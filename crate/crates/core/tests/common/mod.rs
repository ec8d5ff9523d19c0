//! Shared test oracles. Deliberately hand-rolled with plain loops so they
//! share no code path with the production linear algebra.

use nalgebra::DMatrix;

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, descending.
pub fn jacobi_symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    if n == 0 {
        return Vec::new();
    }
    let frob: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() <= 1e-15 * frob {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[p][i] = a[i][p];
                    a[i][q] = s * aip + c * aiq;
                    a[q][i] = a[i][q];
                }
                a[p][p] -= t * apq;
                a[q][q] += t * apq;
                a[p][q] = 0.0;
                a[q][p] = 0.0;
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
    vals
}

/// Singular values via Jacobi on the smaller of A A^T / A^T A, descending.
/// The Gram route squares the condition number, so small values carry
/// absolute error around sqrt(machine eps) times the top value.
pub fn singular_values_oracle(a: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = a.shape();
    let small = r.min(c);
    let mut g = vec![vec![0.0f64; small]; small];
    for i in 0..small {
        for j in 0..small {
            let mut s = 0.0;
            if r <= c {
                for k in 0..c {
                    s += a[(i, k)] * a[(j, k)];
                }
            } else {
                for k in 0..r {
                    s += a[(k, i)] * a[(k, j)];
                }
            }
            g[i][j] = s;
        }
    }
    jacobi_symmetric_eigenvalues(g)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}
