//! Gaussian identity-link GEE with moment equations for `(sigma^2, rho)`.
//!
//! Mean part: `psi_i = D_i' Sigma^{-1} r_i` with `Sigma = sigma^2 R(rho)` and
//! `D_i` the `theta` columns of the block design.
//!
//! Nuisance part (per subject, `r` the residual vector of length `m`):
//!
//! * `g1 = mean_t(r_t^2) - sigma^2`
//! * AR(1): `g2 = mean_t(r_t r_{t+1}) - rho sigma^2` over the `m - 1` lags
//! * exchangeable: `g2 = mean_{s<t}(r_s r_t) - rho sigma^2` over all pairs
//! * independence: `g1` only
//!
//! Both are unbiased at the truth when the working structure is correct.
//! Fitting alternates a weighted least-squares `theta` step and a closed-form
//! `zeta` step until the largest parameter change drops below `tol`.

use nalgebra::{DMatrix, DVector};

use super::working::WorkingCorrelation;
use super::{EstimatingKernel, NuisanceSpec, RootResult, SolverOptions, WorkingStructure};
use crate::partition::BlockData;
use crate::{Error, Result};

const RHO_BOUND: f64 = 0.999;

#[derive(Debug, Clone, Copy)]
pub struct GeeKernel {
    pub working: WorkingStructure,
}

impl GeeKernel {
    pub fn new(working: WorkingStructure) -> Self {
        Self { working }
    }

    fn corr(&self, zeta: &DVector<f64>) -> WorkingCorrelation {
        let rho = if zeta.len() > 1 { zeta[1] } else { 0.0 };
        WorkingCorrelation::new(self.working, rho)
    }

    /// `(sum_i D_i' R^{-1} D_i, sum_i D_i' R^{-1} y_i)`.
    fn normal_equations(
        &self,
        block: &BlockData,
        designs: &[DMatrix<f64>],
        corr: &WorkingCorrelation,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let p = block.p();
        let m = block.m();
        let mut lhs = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        let mut col = vec![0.0; m];
        let mut rinv = DMatrix::zeros(m, p);
        let mut yrow = vec![0.0; m];
        let mut yinv = vec![0.0; m];
        for (i, d) in designs.iter().enumerate() {
            for c in 0..p {
                corr.apply_inverse(d.column(c).as_slice(), &mut col);
                rinv.column_mut(c).copy_from_slice(&col);
            }
            lhs += d.tr_mul(&rinv);
            for (t, v) in yrow.iter_mut().enumerate() {
                *v = block.y[(i, t)];
            }
            corr.apply_inverse(&yrow, &mut yinv);
            rhs += d.tr_mul(&DVector::from_column_slice(&yinv));
        }
        (lhs, rhs)
    }

    fn theta_step(
        &self,
        block: &BlockData,
        designs: &[DMatrix<f64>],
        corr: &WorkingCorrelation,
    ) -> Result<DVector<f64>> {
        let (lhs, rhs) = self.normal_equations(block, designs, corr);
        let chol = nalgebra::Cholesky::new(lhs).ok_or(Error::SingularDesign {
            j: block.j,
            k: block.k,
        })?;
        Ok(chol.solve(&rhs))
    }

    /// Closed-form root of the nuisance moment equations given `theta`.
    /// Returns the clamped flag alongside.
    fn zeta_step(
        &self,
        block: &BlockData,
        designs: &[DMatrix<f64>],
        theta: &DVector<f64>,
    ) -> (DVector<f64>, bool) {
        let m = block.m();
        let n = block.n();
        let mut sq = 0.0;
        let mut cross = 0.0;
        for (i, d) in designs.iter().enumerate() {
            let fitted = d * theta;
            let r: Vec<f64> = (0..m).map(|t| block.y[(i, t)] - fitted[t]).collect();
            sq += r.iter().map(|v| v * v).sum::<f64>() / m as f64;
            cross += match self.working {
                WorkingStructure::Ar1 => lag_products(&r) / (m - 1) as f64,
                WorkingStructure::Exchangeable => pair_products(&r) / n_pairs(m),
                WorkingStructure::Independence => 0.0,
            };
        }
        let sigma2 = sq / n as f64;
        if self.working == WorkingStructure::Independence {
            return (DVector::from_vec(vec![sigma2]), false);
        }
        let raw = cross / n as f64 / sigma2;
        let lower = match self.working {
            WorkingStructure::Exchangeable => (-1.0 / (m as f64 - 1.0) + 1e-6).max(-RHO_BOUND),
            _ => -RHO_BOUND,
        };
        let rho = raw.clamp(lower, RHO_BOUND);
        let clamped = rho != raw || !raw.is_finite();
        let rho = if rho.is_finite() { rho } else { 0.0 };
        (DVector::from_vec(vec![sigma2, rho]), clamped)
    }
}

fn lag_products(r: &[f64]) -> f64 {
    r.windows(2).map(|w| w[0] * w[1]).sum()
}

fn pair_products(r: &[f64]) -> f64 {
    let s: f64 = r.iter().sum();
    let ss: f64 = r.iter().map(|v| v * v).sum();
    0.5 * (s * s - ss)
}

fn n_pairs(m: usize) -> f64 {
    (m * (m - 1)) as f64 / 2.0
}

fn designs(block: &BlockData) -> Vec<DMatrix<f64>> {
    (0..block.n()).map(|i| block.design(i)).collect()
}

impl EstimatingKernel for GeeKernel {
    fn spec(&self) -> NuisanceSpec {
        NuisanceSpec::gee(self.working)
    }

    fn scores(
        &self,
        block: &BlockData,
        theta: &DVector<f64>,
        zeta: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let spec = self.spec();
        spec.check_domain(zeta, block.m())?;
        let p = block.p();
        let d = spec.dim();
        let m = block.m();
        let sigma2 = zeta[0];
        let rho = if d > 1 { zeta[1] } else { 0.0 };
        let corr = self.corr(zeta);
        let mut out = DMatrix::zeros(block.n(), p + d);
        let mut r = vec![0.0; m];
        let mut rinv = vec![0.0; m];
        for i in 0..block.n() {
            let design = block.design(i);
            let fitted = &design * theta;
            for t in 0..m {
                r[t] = block.y[(i, t)] - fitted[t];
            }
            corr.apply_inverse(&r, &mut rinv);
            let psi = design.tr_mul(&DVector::from_column_slice(&rinv)) / sigma2;
            for c in 0..p {
                out[(i, c)] = psi[c];
            }
            out[(i, p)] = r.iter().map(|v| v * v).sum::<f64>() / m as f64 - sigma2;
            if d > 1 {
                let mean_cross = match self.working {
                    WorkingStructure::Ar1 => lag_products(&r) / (m - 1) as f64,
                    WorkingStructure::Exchangeable => pair_products(&r) / n_pairs(m),
                    WorkingStructure::Independence => unreachable!(),
                };
                out[(i, p + 1)] = mean_cross - rho * sigma2;
            }
        }
        Ok(out)
    }

    fn solve(&self, block: &BlockData, opts: &SolverOptions) -> Result<RootResult> {
        let designs = designs(block);
        let independence = WorkingCorrelation::new(WorkingStructure::Independence, 0.0);
        let mut theta = self.theta_step(block, &designs, &independence)?;
        let (mut zeta, mut clamped) = self.zeta_step(block, &designs, &theta);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            iterations += 1;
            let new_theta = self.theta_step(block, &designs, &self.corr(&zeta))?;
            let (new_zeta, new_clamped) = self.zeta_step(block, &designs, &new_theta);
            let change = (&new_theta - &theta)
                .amax()
                .max((&new_zeta - &zeta).amax());
            theta = new_theta;
            zeta = new_zeta;
            clamped = new_clamped;
            if change < opts.tol {
                converged = true;
                break;
            }
        }
        if zeta[0].is_nan() || zeta[0] <= 0.0 {
            return Err(Error::NumericDomain(format!(
                "block ({},{}): estimated sigma^2 = {} is not positive",
                block.j + 1,
                block.k + 1,
                zeta[0]
            )));
        }
        Ok(RootResult {
            theta,
            zeta,
            iterations,
            converged,
            rho_clamped: clamped,
        })
    }

    /// `S_theta_psi = (1/n) sum_i D_i' Sigma^{-1} D_i`.
    fn analytic_sensitivity(
        &self,
        block: &BlockData,
        _theta: &DVector<f64>,
        zeta: &DVector<f64>,
        sens: &mut DMatrix<f64>,
    ) -> Result<()> {
        let p = block.p();
        let s = analytic_theta_sensitivity(self, block, zeta);
        sens.view_mut((0, 0), (p, p)).copy_from(&s);
        Ok(())
    }
}

pub(crate) fn analytic_theta_sensitivity(
    kernel: &GeeKernel,
    block: &BlockData,
    zeta: &DVector<f64>,
) -> DMatrix<f64> {
    let designs = designs(block);
    let (lhs, _) = kernel.normal_equations(block, &designs, &kernel.corr(zeta));
    lhs / (zeta[0] * block.n() as f64)
}
