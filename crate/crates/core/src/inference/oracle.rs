//! Direct minimisation of the GMM objective `T_N^T W T_N`.
//!
//! This is a test oracle for the closed-form combiner, not a production
//! path: every evaluation re-scores all raw blocks.

use nalgebra::{DMatrix, DVector};

use crate::block_engines::eval_scores;
use crate::block_engines::fd::central_jacobian;
use crate::combiner::{SummaryBundle, WeightBlocks};
use crate::partition::BlockData;
use crate::{Error, Result};

/// Group moment vectors `t_k = (1/N) sum_{i in k} tau_i(theta, zeta)`.
pub fn moment_vectors(
    blocks: &[BlockData],
    bundle: &SummaryBundle,
    theta: &DVector<f64>,
    zeta: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let o = &bundle.offsets;
    let jn = o.n_blocks();
    if blocks.len() != jn * o.n_groups() {
        return Err(Error::NeedsRawData("all blocks of the plan"));
    }
    let n = bundle.n_subjects() as f64;
    let p = o.p;
    let mut out = Vec::with_capacity(o.n_groups());
    for k in 0..o.n_groups() {
        let mut t = DVector::zeros(o.local_dim(k));
        for j in 0..jn {
            let block = &blocks[k * jn + j];
            if block.j != j || block.k != k {
                return Err(Error::Invariant("blocks must be in k-major, j-minor order".into()));
            }
            let spec = bundle.fit(j, k).spec;
            let zeta_jk = zeta.rows_range(o.zeta_range(j, k)).into_owned();
            let scores = eval_scores(block, theta, &zeta_jk, spec)?;
            let sums = scores.row_sum().transpose() / n;
            let g_row = jn * p + o.block_start[k][j] - o.group_start[k];
            t.rows_mut(j * p, p).copy_from(&sums.rows(0, p));
            t.rows_mut(g_row, spec.dim()).copy_from(&sums.rows(p, spec.dim()));
        }
        out.push(t);
    }
    Ok(out)
}

/// `Q_N = sum_k t_k^T W_k t_k`.
pub fn gmm_objective(
    blocks: &[BlockData],
    bundle: &SummaryBundle,
    weights: &WeightBlocks,
    theta: &DVector<f64>,
    zeta: &DVector<f64>,
) -> Result<f64> {
    let t = moment_vectors(blocks, bundle, theta, zeta)?;
    Ok(t
        .iter()
        .zip(&weights.w)
        .map(|(tk, wk)| (tk.transpose() * wk * tk)[(0, 0)])
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Stop once `||grad Q_N|| <= gtol`.
    pub gtol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            gtol: 1e-7,
            max_iter: 200,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmOracle {
    pub theta: DVector<f64>,
    pub zeta: DVector<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Problem<'a> {
    blocks: &'a [BlockData],
    bundle: &'a SummaryBundle,
    /// Lower Cholesky factors of the `W_k`.
    factors: Vec<DMatrix<f64>>,
}

impl Problem<'_> {
    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.bundle.p();
        (
            x.rows(0, p).into_owned(),
            x.rows(p, x.len() - p).into_owned(),
        )
    }

    fn in_domain(&self, x: &DVector<f64>) -> bool {
        let o = &self.bundle.offsets;
        let p = o.p;
        self.bundle.fits.iter().zip(self.blocks).all(|(f, b)| {
            let r = o.zeta_range(f.j, f.k);
            f.spec.in_domain(&x.as_slice()[p + r.start..p + r.end], b.m())
        })
    }

    /// `r = (L_k^T t_k)_k`, so that `Q_N = ||r||^2`.
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (theta, zeta) = self.split(x);
        let t = moment_vectors(self.blocks, self.bundle, &theta, &zeta)?;
        let parts: Vec<DVector<f64>> = t
            .iter()
            .zip(&self.factors)
            .map(|(tk, lk)| lk.tr_mul(tk))
            .collect();
        let len = parts.iter().map(|v| v.len()).sum();
        let mut r = DVector::zeros(len);
        let mut at = 0;
        for v in parts {
            r.rows_mut(at, v.len()).copy_from(&v);
            at += v.len();
        }
        Ok(r)
    }
}

/// Levenberg-Marquardt on the factored objective, started from
/// `(theta0, zeta0)`, with a finite-difference Jacobian.
pub fn gmm_oracle(
    blocks: &[BlockData],
    bundle: &SummaryBundle,
    weights: &WeightBlocks,
    theta0: &DVector<f64>,
    zeta0: &DVector<f64>,
    opts: &OracleOptions,
) -> Result<GmmOracle> {
    let factors = weights
        .w
        .iter()
        .enumerate()
        .map(|(k, w)| {
            crate::linalg::cholesky(w)
                .map(|c| c.l())
                .ok_or(Error::SingularWeight {
                    group: k + 1,
                    min_eigenvalue: crate::linalg::min_eigenvalue(w),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let prob = Problem {
        blocks,
        bundle,
        factors,
    };
    let p = theta0.len();
    let mut x = DVector::zeros(p + zeta0.len());
    x.rows_mut(0, p).copy_from(theta0);
    x.rows_mut(p, zeta0.len()).copy_from(zeta0);
    let mut r = prob.residual(&x)?;
    let mut q = r.norm_squared();
    let initial_objective = q;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let jacobian = |x: &DVector<f64>| {
        central_jacobian(x, opts.fd_step, |v| prob.in_domain(v), |v| prob.residual(v))
    };
    while iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(&x)?;
        let jtr = jac.tr_mul(&r);
        let jtj = jac.tr_mul(&jac);
        let mut improved = false;
        while lambda < 1e16 {
            let mut lhs = jtj.clone();
            for c in 0..lhs.nrows() {
                lhs[(c, c)] += lambda * jtj[(c, c)].max(1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &x + &step;
            if prob.in_domain(&trial) {
                if let Ok(rt) = prob.residual(&trial) {
                    let qt = rt.norm_squared();
                    if qt < q {
                        let gain = q - qt;
                        x = trial;
                        r = rt;
                        q = qt;
                        lambda = (lambda / 10.0).max(1e-12);
                        improved = gain > 1e-15 * q.max(f64::MIN_POSITIVE);
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let grad_norm = 2.0 * jacobian(&x)?.tr_mul(&r).norm();
    let (theta, zeta) = prob.split(&x);
    Ok(GmmOracle {
        theta,
        zeta,
        objective: q,
        initial_objective,
        grad_norm,
        iterations,
        converged: grad_norm <= opts.gtol,
    })
}
