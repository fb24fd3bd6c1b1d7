//! Pairwise composite likelihood for Gaussian responses with AR(1)
//! correlation decay.
//!
//! Every pair `r < t` inside the block contributes the log-density of a
//! bivariate normal with common variance `sigma^2` and correlation
//! `rho^(t - r)`. The kernel rows are the pair sums of the gradients with
//! respect to `theta` and `(sigma^2, rho)`. The root is found by damped Newton
//! in the unconstrained coordinates `(theta, log sigma, atanh rho)`.

use nalgebra::{DMatrix, DVector};

use super::fd::central_jacobian;
use super::{column_means, EstimatingKernel, NuisanceSpec, RootResult, SolverOptions};
use crate::partition::BlockData;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct PairwiseClKernel;

fn to_natural(eta: &DVector<f64>, p: usize) -> (DVector<f64>, DVector<f64>) {
    let theta = eta.rows(0, p).into_owned();
    let sigma2 = (2.0 * eta[p]).exp();
    let rho = eta[p + 1].tanh();
    (theta, DVector::from_vec(vec![sigma2, rho]))
}

fn to_unconstrained(theta: &DVector<f64>, zeta: &DVector<f64>) -> DVector<f64> {
    let p = theta.len();
    let mut eta = DVector::zeros(p + 2);
    eta.rows_mut(0, p).copy_from(theta);
    eta[p] = 0.5 * zeta[0].ln();
    eta[p + 1] = zeta[1].atanh();
    eta
}

impl PairwiseClKernel {
    fn mean_score_unconstrained(&self, block: &BlockData, eta: &DVector<f64>) -> Result<DVector<f64>> {
        let (theta, zeta) = to_natural(eta, block.p());
        self.mean_estimating(block, &theta, &zeta)
    }

    fn initial_values(&self, block: &BlockData) -> Result<(DVector<f64>, DVector<f64>)> {
        let p = block.p();
        let m = block.m();
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        for i in 0..block.n() {
            let d = block.design(i);
            xtx += d.tr_mul(&d);
            xty += d.tr_mul(&block.y.row(i).transpose());
        }
        let theta = nalgebra::Cholesky::new(xtx)
            .ok_or(Error::SingularDesign { j: block.j, k: block.k })?
            .solve(&xty);
        let mut sq = 0.0;
        let mut lag = 0.0;
        for i in 0..block.n() {
            let r = block.y.row(i).transpose() - block.design(i) * &theta;
            sq += r.norm_squared() / m as f64;
            lag += (0..m - 1).map(|t| r[t] * r[t + 1]).sum::<f64>() / (m - 1) as f64;
        }
        let sigma2 = sq / block.n() as f64;
        let rho = (lag / block.n() as f64 / sigma2).clamp(-0.9, 0.9);
        if sigma2.is_nan() || sigma2 <= 0.0 || !rho.is_finite() {
            return Err(Error::NumericDomain(format!(
                "block ({},{}): degenerate residual variance",
                block.j + 1,
                block.k + 1
            )));
        }
        Ok((theta, DVector::from_vec(vec![sigma2, rho])))
    }
}

impl EstimatingKernel for PairwiseClKernel {
    fn spec(&self) -> NuisanceSpec {
        NuisanceSpec::ClAr1
    }

    fn scores(
        &self,
        block: &BlockData,
        theta: &DVector<f64>,
        zeta: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        NuisanceSpec::ClAr1.check_domain(zeta, block.m())?;
        let p = block.p();
        let m = block.m();
        let s = zeta[0];
        let rho = zeta[1];
        // per-lag correlation and d corr / d rho
        let corr: Vec<f64> = (0..m).map(|lag| rho.powi(lag as i32)).collect();
        let dcorr: Vec<f64> = (0..m)
            .map(|lag| if lag == 0 { 0.0 } else { lag as f64 * rho.powi(lag as i32 - 1) })
            .collect();
        for &c in &corr[1..] {
            if 1.0 - c * c <= 0.0 {
                return Err(Error::NumericDomain(format!(
                    "pairwise correlation {c} has |rho| >= 1"
                )));
            }
        }
        let mut out = DMatrix::zeros(block.n(), p + 2);
        let mut resid = vec![0.0; m];
        let mut weight = vec![0.0; m];
        for i in 0..block.n() {
            let design = block.design(i);
            let fitted = &design * theta;
            for t in 0..m {
                resid[t] = block.y[(i, t)] - fitted[t];
                weight[t] = 0.0;
            }
            let mut d_sigma2 = 0.0;
            let mut d_rho = 0.0;
            for lag in 1..m {
                let c = corr[lag];
                let u = 1.0 - c * c;
                let su = s * u;
                for r in 0..m - lag {
                    let t = r + lag;
                    let a = resid[r];
                    let b = resid[t];
                    let q = a * a - 2.0 * c * a * b + b * b;
                    weight[r] += (a - c * b) / su;
                    weight[t] += (b - c * a) / su;
                    d_sigma2 += -1.0 / s + q / (2.0 * s * su);
                    let d_c = c / u + a * b / su - q * c / (su * u);
                    d_rho += d_c * dcorr[lag];
                }
            }
            let psi = design.tr_mul(&DVector::from_column_slice(&weight));
            for c in 0..p {
                out[(i, c)] = psi[c];
            }
            out[(i, p)] = d_sigma2;
            out[(i, p + 1)] = d_rho;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "block ({},{}): non-finite pairwise density",
                block.j + 1,
                block.k + 1
            )));
        }
        Ok(out)
    }

    fn solve(&self, block: &BlockData, opts: &SolverOptions) -> Result<RootResult> {
        let p = block.p();
        let (theta0, zeta0) = self.initial_values(block)?;
        let mut eta = to_unconstrained(&theta0, &zeta0);
        let mut f = self.mean_score_unconstrained(block, &eta)?;
        let mut norm = f.norm();
        let mut iterations = 0;
        while norm > opts.tol && iterations < opts.max_iter {
            iterations += 1;
            let jac = central_jacobian(&eta, opts.fd_step, |_| true, |e| {
                self.mean_score_unconstrained(block, e)
            })?;
            let Some(step) = jac.lu().solve(&(-&f)) else {
                break;
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = &eta + &step * t;
                if let Ok(ft) = self.mean_score_unconstrained(block, &trial) {
                    let nt = ft.norm();
                    if nt.is_finite() && nt < norm {
                        eta = trial;
                        f = ft;
                        norm = nt;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let (theta, zeta) = to_natural(&eta, p);
        let converged = norm <= opts.tol;
        debug_assert!((column_means(&self.scores(block, &theta, &zeta)?).norm() - norm).abs() < 1e-6);
        Ok(RootResult {
            theta,
            zeta,
            iterations,
            converged,
            rho_clamped: false,
        })
    }
}
