//! Split, fit every block, combine, and run inference.

use std::time::Instant;

use crate::block_engines::{fit_block, BlockFit, NuisanceSpec, SolverOptions};
use crate::combiner::{assemble_vhat, combine_with_weights, invert_vhat, CombinedFit, SummaryBundle, WeightBlocks};
use crate::inference::{godambe_cov, overid_test, parameter_names, InferenceReport};
use crate::par::Exec;
use crate::partition::{split_with_columns, BlockData, Dataset, PartitionPlan};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub spec: NuisanceSpec,
    pub solver: SolverOptions,
    pub allow_unconverged: bool,
    pub alpha: f64,
    pub exec: Exec,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            spec: NuisanceSpec::GeeAr1,
            solver: SolverOptions::default(),
            allow_unconverged: false,
            alpha: 0.05,
            exec: Exec::Parallel,
        }
    }
}

/// Wall-clock seconds per stage. `critical_path` is the longest block fit
/// plus everything that is not a block fit, i.e. the elapsed time with one
/// worker per block.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub block_seconds: Vec<f64>,
    pub rest_seconds: f64,
}

impl Timing {
    pub fn critical_path(&self) -> f64 {
        self.block_seconds.iter().copied().fold(0.0, f64::max) + self.rest_seconds
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub blocks: Vec<BlockData>,
    pub bundle: SummaryBundle,
    pub weights: WeightBlocks,
    pub fit: CombinedFit,
    pub report: InferenceReport,
    pub timing: Timing,
}

/// Fits all blocks, returning fits and per-block seconds in block order.
pub fn fit_blocks(
    blocks: &[BlockData],
    spec: NuisanceSpec,
    solver: &SolverOptions,
    exec: Exec,
) -> Result<(Vec<BlockFit>, Vec<f64>)> {
    let results = exec.map(blocks.len(), |b| {
        let start = Instant::now();
        let fit = fit_block(&blocks[b], spec, solver);
        (fit, start.elapsed().as_secs_f64())
    });
    let mut fits = Vec::with_capacity(results.len());
    let mut secs = Vec::with_capacity(results.len());
    for (fit, s) in results {
        fits.push(fit?);
        secs.push(s);
    }
    Ok((fits, secs))
}

/// Checks the convergence policy; the error names the first failing block.
pub fn check_convergence(fits: &[BlockFit], allow_unconverged: bool) -> Result<()> {
    if allow_unconverged {
        for f in fits.iter().filter(|f| !f.converged) {
            log::warn!(
                "block ({},{}) did not converge (final norm {:e}); continuing",
                f.j + 1,
                f.k + 1,
                f.final_norm
            );
        }
        return Ok(());
    }
    match fits.iter().find(|f| !f.converged) {
        Some(f) => Err(Error::Unconverged { j: f.j + 1, k: f.k + 1 }),
        None => Ok(()),
    }
}

/// Full analysis of `data` under `plan`, with `theta_cols` selecting the
/// covariates tied to the shared mean parameter.
pub fn analyze(
    data: &Dataset,
    plan: &PartitionPlan,
    theta_cols: &[usize],
    opts: &AnalysisOptions,
) -> Result<Analysis> {
    let t0 = Instant::now();
    let blocks = split_with_columns(data, plan, theta_cols)?;
    let split_secs = t0.elapsed().as_secs_f64();

    let (fits, block_seconds) = fit_blocks(&blocks, opts.spec, &opts.solver, opts.exec)?;
    check_convergence(&fits, opts.allow_unconverged)?;

    let t1 = Instant::now();
    let theta_names: Vec<String> = theta_cols
        .iter()
        .map(|&c| data.covariate_names[c].clone())
        .collect();
    let bundle = SummaryBundle::new(plan.clone(), fits)?.with_theta_names(theta_names)?;
    let weights = invert_vhat(assemble_vhat(&bundle)?, &bundle.offsets)?;
    let fit = combine_with_weights(&bundle, &weights)?;
    let names = parameter_names(&bundle);
    let mut report = godambe_cov(&fit, &names, opts.alpha)?;
    report.overid = Some(overid_test(&blocks, &bundle, &fit, &weights)?);
    let rest_seconds = split_secs + t1.elapsed().as_secs_f64();

    Ok(Analysis {
        blocks,
        bundle,
        weights,
        fit,
        report,
        timing: Timing {
            block_seconds,
            rest_seconds,
        },
    })
}
