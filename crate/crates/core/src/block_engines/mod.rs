//! Block-level estimation.
//!
//! Every block `(j, k)` is fitted by solving its stacked estimating equations
//! for the shared mean parameter `theta` and the block-specific nuisance
//! parameter `zeta = (sigma^2, rho)`. A fit exports what the combiner needs:
//! the estimates, the per-subject estimating-function rows, and the sample
//! sensitivity matrix `S = -d/d(theta, zeta)` of the averaged estimating
//! function.
//!
//! Two kernels are provided, both for the Gaussian identity-link model:
//! GEE with a working correlation plus moment equations for `zeta`, and the
//! pairwise composite likelihood with AR(1) correlation decay. New kernels
//! plug in by implementing [`EstimatingKernel`].

mod cl;
pub(crate) mod fd;
mod gee;
mod working;

use nalgebra::{DMatrix, DVector};

use crate::partition::BlockData;
use crate::{Error, Result};

pub use cl::PairwiseClKernel;
pub use gee::GeeKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkingStructure {
    Ar1,
    Exchangeable,
    Independence,
}

impl WorkingStructure {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkingStructure::Ar1 => "ar1",
            WorkingStructure::Exchangeable => "exchangeable",
            WorkingStructure::Independence => "independence",
        }
    }
}

impl std::str::FromStr for WorkingStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar1" => Ok(WorkingStructure::Ar1),
            "exchangeable" => Ok(WorkingStructure::Exchangeable),
            "independence" => Ok(WorkingStructure::Independence),
            other => Err(Error::Config(format!("unknown working structure `{other}`"))),
        }
    }
}

/// Block analysis method together with its nuisance parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceSpec {
    GeeAr1,
    GeeExchangeable,
    GeeIndependence,
    ClAr1,
}

impl NuisanceSpec {
    pub fn gee(working: WorkingStructure) -> Self {
        match working {
            WorkingStructure::Ar1 => NuisanceSpec::GeeAr1,
            WorkingStructure::Exchangeable => NuisanceSpec::GeeExchangeable,
            WorkingStructure::Independence => NuisanceSpec::GeeIndependence,
        }
    }

    /// Dimension `d_jk` of the nuisance parameter.
    pub fn dim(self) -> usize {
        match self {
            NuisanceSpec::GeeIndependence => 1,
            _ => 2,
        }
    }

    pub fn working(self) -> WorkingStructure {
        match self {
            NuisanceSpec::GeeAr1 | NuisanceSpec::ClAr1 => WorkingStructure::Ar1,
            NuisanceSpec::GeeExchangeable => WorkingStructure::Exchangeable,
            NuisanceSpec::GeeIndependence => WorkingStructure::Independence,
        }
    }

    pub fn is_gee(self) -> bool {
        !matches!(self, NuisanceSpec::ClAr1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NuisanceSpec::GeeAr1 => "gee-ar1",
            NuisanceSpec::GeeExchangeable => "gee-exchangeable",
            NuisanceSpec::GeeIndependence => "gee-independence",
            NuisanceSpec::ClAr1 => "cl-ar1",
        }
    }

    pub fn zeta_names(self) -> &'static [&'static str] {
        match self {
            NuisanceSpec::GeeIndependence => &["sigma2"],
            _ => &["sigma2", "rho"],
        }
    }

    /// Checks `sigma^2 > 0` and `rho` inside the admissible range for a block
    /// of `m` responses.
    pub fn check_domain(self, zeta: &DVector<f64>, m: usize) -> Result<()> {
        if zeta.len() != self.dim() {
            return Err(Error::NumericDomain(format!(
                "{} expects {} nuisance parameters, got {}",
                self.as_str(),
                self.dim(),
                zeta.len()
            )));
        }
        if !(zeta[0] > 0.0 && zeta[0].is_finite()) {
            return Err(Error::NumericDomain(format!("sigma^2 = {} is not positive", zeta[0])));
        }
        if self.dim() == 2 {
            let rho = zeta[1];
            let lower = match self.working() {
                WorkingStructure::Exchangeable if m > 1 => (-1.0 / (m as f64 - 1.0)).max(-1.0),
                _ => -1.0,
            };
            if !(rho > lower && rho < 1.0) {
                return Err(Error::NumericDomain(format!(
                    "rho = {rho} outside ({lower}, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn in_domain(self, zeta: &[f64], m: usize) -> bool {
        self.check_domain(&DVector::from_column_slice(zeta), m).is_ok()
    }
}

impl std::str::FromStr for NuisanceSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gee-ar1" => Ok(NuisanceSpec::GeeAr1),
            "gee-exchangeable" => Ok(NuisanceSpec::GeeExchangeable),
            "gee-independence" => Ok(NuisanceSpec::GeeIndependence),
            "cl-ar1" => Ok(NuisanceSpec::ClAr1),
            other => Err(Error::Config(format!("unknown block method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// GEE: max absolute parameter change; CL: l2 norm of the mean score.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            fd_step: 1e-5,
        }
    }
}

/// Result of fitting one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFit {
    pub j: usize,
    pub k: usize,
    pub spec: NuisanceSpec,
    pub theta: DVector<f64>,
    /// `(sigma^2, rho)` or `(sigma^2)`.
    pub zeta: DVector<f64>,
    /// `n_k x (p + d_jk)`; row `i` is `(psi_i, g_i)` at the estimates.
    pub scores: DMatrix<f64>,
    /// `(p + d_jk) x (p + d_jk)` sample sensitivity.
    pub sensitivity: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// l2 norm of the averaged estimating function at the estimates.
    pub final_norm: f64,
    /// `rho` hit the admissible bound and was clamped.
    pub rho_clamped: bool,
}

impl BlockFit {
    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn d(&self) -> usize {
        self.zeta.len()
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn s_theta_psi(&self) -> DMatrix<f64> {
        let p = self.p();
        self.sensitivity.view((0, 0), (p, p)).into_owned()
    }

    pub fn s_zeta_psi(&self) -> DMatrix<f64> {
        let (p, d) = (self.p(), self.d());
        self.sensitivity.view((0, p), (p, d)).into_owned()
    }

    pub fn s_theta_g(&self) -> DMatrix<f64> {
        let (p, d) = (self.p(), self.d());
        self.sensitivity.view((p, 0), (d, p)).into_owned()
    }

    pub fn s_zeta_g(&self) -> DMatrix<f64> {
        let (p, d) = (self.p(), self.d());
        self.sensitivity.view((p, p), (d, d)).into_owned()
    }
}

/// The contract every block estimating function satisfies.
pub trait EstimatingKernel: Sync {
    fn spec(&self) -> NuisanceSpec;

    /// Per-subject rows `(psi_i(theta; zeta), g_i(zeta; theta))`.
    fn scores(&self, block: &BlockData, theta: &DVector<f64>, zeta: &DVector<f64>)
        -> Result<DMatrix<f64>>;

    /// Solves the block equations, returning `(theta, zeta, iterations,
    /// converged, rho_clamped)`.
    fn solve(&self, block: &BlockData, opts: &SolverOptions) -> Result<RootResult>;

    /// Sub-blocks of the sensitivity known in closed form; they replace the
    /// finite-difference entries.
    fn analytic_sensitivity(
        &self,
        _block: &BlockData,
        _theta: &DVector<f64>,
        _zeta: &DVector<f64>,
        _sens: &mut DMatrix<f64>,
    ) -> Result<()> {
        Ok(())
    }

    fn mean_estimating(
        &self,
        block: &BlockData,
        theta: &DVector<f64>,
        zeta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(column_means(&self.scores(block, theta, zeta)?))
    }

    fn sensitivity(
        &self,
        block: &BlockData,
        theta: &DVector<f64>,
        zeta: &DVector<f64>,
        opts: &SolverOptions,
    ) -> Result<DMatrix<f64>> {
        let p = theta.len();
        let m = block.m();
        let spec = self.spec();
        let mut x = DVector::zeros(p + zeta.len());
        x.rows_mut(0, p).copy_from(theta);
        x.rows_mut(p, zeta.len()).copy_from(zeta);
        let jac = fd::central_jacobian(
            &x,
            opts.fd_step,
            |v| spec.in_domain(&v.as_slice()[p..], m),
            |v| {
                let th = v.rows(0, p).into_owned();
                let ze = v.rows(p, v.len() - p).into_owned();
                self.mean_estimating(block, &th, &ze)
            },
        )?;
        let mut sens = -jac;
        self.analytic_sensitivity(block, theta, zeta, &mut sens)?;
        for r in 0..sens.nrows() {
            for c in 0..sens.ncols() {
                if !sens[(r, c)].is_finite() {
                    return Err(Error::NonFiniteDerivative {
                        j: block.j,
                        k: block.k,
                        row: r,
                        col: c,
                    });
                }
            }
        }
        Ok(sens)
    }

    fn fit(&self, block: &BlockData, opts: &SolverOptions) -> Result<BlockFit> {
        let root = self.solve(block, opts)?;
        let scores = self.scores(block, &root.theta, &root.zeta)?;
        let final_norm = column_means(&scores).norm();
        let sensitivity = self.sensitivity(block, &root.theta, &root.zeta, opts)?;
        if root.rho_clamped {
            log::warn!(
                "block ({},{}): rho clamped to {}",
                block.j + 1,
                block.k + 1,
                root.zeta[1]
            );
        }
        Ok(BlockFit {
            j: block.j,
            k: block.k,
            spec: self.spec(),
            theta: root.theta,
            zeta: root.zeta,
            scores,
            sensitivity,
            converged: root.converged,
            iterations: root.iterations,
            final_norm,
            rho_clamped: root.rho_clamped,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RootResult {
    pub theta: DVector<f64>,
    pub zeta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub rho_clamped: bool,
}

pub(crate) fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn check_block(block: &BlockData, spec: NuisanceSpec) -> Result<()> {
    let p = block.p();
    if block.n() <= p + spec.dim() {
        return Err(Error::InvalidPlan(format!(
            "block ({},{}) has n_k = {} subjects but needs more than p + d = {}",
            block.j + 1,
            block.k + 1,
            block.n(),
            p + spec.dim()
        )));
    }
    if block.m() < 2 {
        return Err(Error::InvalidPlan(format!(
            "block ({},{}) has fewer than 2 responses",
            block.j + 1,
            block.k + 1
        )));
    }
    Ok(())
}

/// Fits one block with the kernel selected by `spec`.
pub fn fit_block(block: &BlockData, spec: NuisanceSpec, opts: &SolverOptions) -> Result<BlockFit> {
    match spec {
        NuisanceSpec::ClAr1 => fit_cl_block(block, opts),
        _ => fit_gee_block(block, spec, opts),
    }
}

pub fn fit_gee_block(block: &BlockData, spec: NuisanceSpec, opts: &SolverOptions) -> Result<BlockFit> {
    if !spec.is_gee() {
        return Err(Error::Config(format!("{} is not a GEE method", spec.as_str())));
    }
    check_block(block, spec)?;
    GeeKernel::new(spec.working()).fit(block, opts)
}

pub fn fit_cl_block(block: &BlockData, opts: &SolverOptions) -> Result<BlockFit> {
    check_block(block, NuisanceSpec::ClAr1)?;
    PairwiseClKernel.fit(block, opts)
}

pub fn eval_scores(
    block: &BlockData,
    theta: &DVector<f64>,
    zeta: &DVector<f64>,
    spec: NuisanceSpec,
) -> Result<DMatrix<f64>> {
    match spec {
        NuisanceSpec::ClAr1 => PairwiseClKernel.scores(block, theta, zeta),
        _ => GeeKernel::new(spec.working()).scores(block, theta, zeta),
    }
}

pub fn sample_sensitivity(
    block: &BlockData,
    theta: &DVector<f64>,
    zeta: &DVector<f64>,
    spec: NuisanceSpec,
    opts: &SolverOptions,
) -> Result<DMatrix<f64>> {
    match spec {
        NuisanceSpec::ClAr1 => PairwiseClKernel.sensitivity(block, theta, zeta, opts),
        _ => GeeKernel::new(spec.working()).sensitivity(block, theta, zeta, opts),
    }
}
