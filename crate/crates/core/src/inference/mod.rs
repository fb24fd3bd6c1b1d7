//! Standard errors, confidence intervals and the over-identification test.

mod oracle;
mod report;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub use oracle::{gmm_objective, gmm_oracle, moment_vectors, GmmOracle, OracleOptions};
pub use report::{parameter_names, render_estimates_csv, render_overid, render_table};

use crate::combiner::{CombinedFit, SummaryBundle, WeightBlocks};
use crate::linalg;
use crate::partition::BlockData;
use crate::{Error, Result};

/// `godambe^{-1} / n` through a Cholesky factorisation.
pub fn godambe_covariance(godambe: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let inv = linalg::spd_inverse(godambe).ok_or(Error::SingularInformation)?;
    Ok(inv / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    pub ase: f64,
    pub z: f64,
    pub p_value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverIdTest {
    pub statistic: f64,
    pub df: usize,
    /// `None` when the model is just identified (`df = 0`).
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceReport {
    pub alpha: f64,
    pub parameters: Vec<ParameterRow>,
    pub overid: Option<OverIdTest>,
}

impl InferenceReport {
    /// Rows for the mean parameters only.
    pub fn theta_rows(&self, p: usize) -> &[ParameterRow] {
        &self.parameters[..p]
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Wald rows for every parameter in `(theta, zeta_list)`.
pub fn godambe_cov(fit: &CombinedFit, names: &[String], alpha: f64) -> Result<InferenceReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let cov = godambe_covariance(&fit.godambe, fit.n_subjects)?;
    let est = fit.estimates();
    if names.len() != est.len() {
        return Err(Error::Invariant(format!(
            "{} parameter names for {} estimates",
            names.len(),
            est.len()
        )));
    }
    let normal = standard_normal();
    let zq = normal.inverse_cdf(1.0 - alpha / 2.0);
    let mut parameters = Vec::with_capacity(est.len());
    for (c, name) in names.iter().enumerate() {
        let var = cov[(c, c)];
        if !var.is_finite() || var <= 0.0 {
            return Err(Error::SingularInformation);
        }
        let ase = var.sqrt();
        let z = est[c] / ase;
        parameters.push(ParameterRow {
            name: name.clone(),
            estimate: est[c],
            ase,
            z,
            p_value: 2.0 * normal.sf(z.abs()),
            lower: est[c] - zq * ase,
            upper: est[c] + zq * ase,
        });
    }
    Ok(InferenceReport {
        alpha,
        parameters,
        overid: None,
    })
}

/// Degrees of freedom of the over-identification test, `(JK - 1) p`.
pub fn overid_df(n_blocks: usize, n_groups: usize, p: usize) -> usize {
    (n_blocks * n_groups - 1) * p
}

/// `N T_N^T W T_N` at the combined estimates, with `W` the block-estimate
/// weight. Needs the raw blocks to re-evaluate the scores.
pub fn overid_test(
    blocks: &[BlockData],
    bundle: &SummaryBundle,
    fit: &CombinedFit,
    weights: &WeightBlocks,
) -> Result<OverIdTest> {
    if blocks.is_empty() {
        return Err(Error::NeedsRawData("the over-identification test"));
    }
    let q = gmm_objective(blocks, bundle, weights, &fit.theta, &fit.zeta)?;
    let statistic = bundle.n_subjects() as f64 * q;
    let df = overid_df(bundle.plan.n_blocks(), bundle.plan.n_groups(), bundle.p());
    let p_value = (df > 0).then(|| {
        ChiSquared::new(df as f64)
            .expect("positive degrees of freedom")
            .sf(statistic)
    });
    Ok(OverIdTest {
        statistic,
        df,
        p_value,
    })
}

/// Per-parameter two-sided p-value for a Wald z.
pub fn two_sided_p(z: f64) -> f64 {
    2.0 * standard_normal().sf(z.abs())
}

/// Normal quantile used for `(1 - alpha)` intervals.
pub fn normal_quantile(alpha: f64) -> f64 {
    standard_normal().inverse_cdf(1.0 - alpha / 2.0)
}

/// Standard errors `sqrt(diag(cov))`.
pub fn standard_errors(cov: &DMatrix<f64>) -> DVector<f64> {
    cov.diagonal().map(f64::sqrt)
}
