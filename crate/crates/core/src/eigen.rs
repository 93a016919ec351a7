//! Cyclic Jacobi eigensolver for dense real symmetric matrices.
//!
//! Rotations are applied in fixed row-cyclic order `(0,1), (0,2), …, (n-2,n-1)`
//! so results are fully deterministic for identical input.

use crate::error::{Error, Result};

/// Eigenpairs sorted by eigenvalue, largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvectors, same order as `eigenvalues`.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl EigenResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.eigenvalues.truncate(k);
        self.eigenvectors.truncate(k);
    }
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            sum += a[p * n + q] * a[p * n + q];
        }
    }
    (2.0 * sum).sqrt()
}

fn frobenius_norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Full eigendecomposition of the row-major symmetric matrix `a` (`n × n`).
///
/// Converges when the off-diagonal Frobenius norm drops to `tol · ‖A‖_F`.
pub fn jacobi_eigen(a: &[f64], n: usize, tol: f64, max_sweeps: usize) -> Result<EigenResult> {
    if n == 0 || a.len() != n * n {
        return Err(Error::Dimension(format!(
            "expected a non-empty square matrix, got {} entries for n = {n}",
            a.len()
        )));
    }
    if let Some(index) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }

    let mut a = a.to_vec();
    // Symmetrize exactly so rotations act on a truly symmetric matrix.
    for p in 0..n {
        for q in p + 1..n {
            let m = 0.5 * (a[p * n + q] + a[q * n + p]);
            a[p * n + q] = m;
            a[q * n + p] = m;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let scale = frobenius_norm(&a);
    let target = tol * scale;
    let mut converged = off_diagonal_norm(&a, n) <= target;
    let mut sweep = 0;
    while !converged && sweep < max_sweeps {
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Late sweeps: drop elements too small to move the diagonal.
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
        sweep += 1;
        converged = off_diagonal_norm(&a, n) <= target;
    }
    if !converged {
        return Err(Error::Convergence {
            sweeps: sweep,
            residual: off_diagonal_norm(&a, n),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    for &col in &order {
        eigenvalues.push(a[col * n + col]);
        let mut vec: Vec<f64> = (0..n).map(|r| v[r * n + col]).collect();
        let norm = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Canonical sign: largest-magnitude component positive.
        let lead = vec
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
            .0;
        let sign = if vec[lead] < 0.0 { -1.0 } else { 1.0 };
        for x in &mut vec {
            *x *= sign / norm;
        }
        eigenvectors.push(vec);
    }
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}
