//! The three subcommands. Each returns the lines of its stdout summary;
//! diagnostics go through `log` to stderr.

use std::path::{Path, PathBuf};

use ddimm::combiner::{combine, merge_parts, read_archive};
use ddimm::inference::{godambe_cov, parameter_names, render_estimates_csv, render_overid};
use ddimm::par::{with_workers, Exec};
use ddimm::partition::{load_long_csv, make_plan, read_plan, write_plan, CsvSchema};
use ddimm::pipeline::{analyze, AnalysisOptions};
use ddimm::simstudy::{
    render_plotdata_csv, render_reps_csv, render_summary_csv, render_timing_csv,
    run_replications, summarize,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";

fn write(dir: &Path, name: &str, text: &str) -> CliResult<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn prepare_out(cfg: &RunConfig) -> CliResult<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|source| CliError::Io {
        path: cfg.out.clone(),
        source,
    })?;
    write(&cfg.out, RESOLVED_CONFIG, &cfg.resolved().render())?;
    Ok(())
}

/// Split, fit, combine and report on one data file.
///
/// Writes `estimates.csv`, `overid.txt`, `bundle.txt` (block summaries for
/// `combine`), `plan.txt` and the resolved config.
pub fn cmd_fit(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("fit needs an input file".into()))?;
    let schema = CsvSchema {
        covariates: cfg.covariates.clone(),
        ..CsvSchema::default()
    };
    let data = load_long_csv(input, &schema)?;
    let plan = match &cfg.plan {
        Some(path) => read_plan(path)?,
        None => make_plan(
            data.n_responses(),
            data.n_subjects(),
            cfg.j,
            cfg.k[0],
            cfg.strategy,
            cfg.seed,
        )?,
    };
    let opts = AnalysisOptions {
        spec: cfg.spec(),
        solver: cfg.solver,
        allow_unconverged: cfg.allow_unconverged,
        alpha: cfg.alpha,
        exec: Exec::Parallel,
    };
    let theta_cols: Vec<usize> = (0..data.n_covariates()).collect();
    let analysis = with_workers(cfg.workers, || analyze(&data, &plan, &theta_cols, &opts))?;
    log::info!(
        "fitted {} blocks; critical path {:.3}s",
        analysis.bundle.fits.len(),
        analysis.timing.critical_path()
    );
    for g in &analysis.fit.diagnostics.ridged_groups {
        log::warn!("weight matrix of group {} needed a ridge", g + 1);
    }

    prepare_out(cfg)?;
    write(&cfg.out, "estimates.csv", &render_estimates_csv(&analysis.report)?)?;
    write(&cfg.out, "overid.txt", &render_overid(analysis.report.overid.as_ref(), None))?;
    analysis.bundle.write(&cfg.out.join("bundle.txt"))?;
    write_plan(&plan, &cfg.out.join("plan.txt"))?;

    let mut lines = theta_lines(&analysis.report, analysis.bundle.p());
    if let Some(t) = &analysis.report.overid {
        let p = t.p_value.map_or("NA".to_string(), |p| format!("{p:.4}"));
        lines.push(format!("over-identification: stat {:.4}, df {}, p {p}", t.statistic, t.df));
    }
    lines.push(format!("wrote {}", cfg.out.display()));
    Ok(lines)
}

fn theta_lines(report: &ddimm::inference::InferenceReport, p: usize) -> Vec<String> {
    report
        .theta_rows(p)
        .iter()
        .map(|r| format!("{:<12} {:>12.6} (ase {:.6})", r.name, r.estimate, r.ase))
        .collect()
}

/// Monte Carlo sweep over the `M` and `K` lists.
///
/// Writes `reps.csv`, `summary.csv`, `plotdata.csv`, `timing.csv` and the
/// resolved config. Fails if any design point has no successful replication.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let designs = cfg.designs();
    for d in &designs {
        d.validate()?;
    }
    let runs = with_workers(cfg.workers, || {
        designs
            .iter()
            .map(|d| run_replications(d, Exec::Parallel).map(|r| (d.clone(), r)))
            .collect::<ddimm::Result<Vec<_>>>()
    })?;

    prepare_out(cfg)?;
    write(&cfg.out, "reps.csv", &render_reps_csv(&runs)?)?;
    write(&cfg.out, "timing.csv", &render_timing_csv(&runs)?)?;

    let mut summaries = Vec::new();
    let mut failed = None;
    let mut lines = Vec::new();
    for (d, recs) in &runs {
        match summarize(recs, &d.theta0, d.alpha) {
            Ok(s) => {
                let ratio: Vec<String> = s
                    .components
                    .iter()
                    .map(|c| format!("{:.3}", c.ase / c.ese))
                    .collect();
                lines.push(format!(
                    "M={} K={}: {}/{} ok, ASE/ESE {}",
                    d.m,
                    d.k,
                    s.successes,
                    s.reps,
                    ratio.join(" ")
                ));
                summaries.push((d.clone(), s));
            }
            Err(_) => {
                let first = recs.iter().find_map(|r| r.error.clone()).unwrap_or_default();
                failed.get_or_insert(CliError::AllFailed { m: d.m, k: d.k, first });
            }
        }
    }
    write(&cfg.out, "summary.csv", &render_summary_csv(&summaries)?)?;
    write(&cfg.out, "plotdata.csv", &render_plotdata_csv(&summaries)?)?;
    if let Some(e) = failed {
        return Err(e);
    }
    lines.push(format!("wrote {}", cfg.out.display()));
    Ok(lines)
}

/// Merges bundle archives and combines them without raw data.
///
/// Writes `estimates.csv`, `overid.txt` (a notice that the test was skipped),
/// the merged `bundle.txt` and the resolved config.
pub fn cmd_combine(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let parts = cfg
        .bundles
        .iter()
        .map(|p| read_archive(p))
        .collect::<ddimm::Result<Vec<_>>>()?;
    let bundle = merge_parts(parts)?;
    let fit = combine(&bundle)?;
    let report = godambe_cov(&fit, &parameter_names(&bundle), cfg.alpha)?;
    let notice = "the over-identification test needs the raw block data";

    prepare_out(cfg)?;
    write(&cfg.out, "estimates.csv", &render_estimates_csv(&report)?)?;
    write(&cfg.out, "overid.txt", &render_overid(None, Some(notice)))?;
    bundle.write(&cfg.out.join("bundle.txt"))?;
    log::warn!("over-identification test skipped: {notice}");

    let mut lines = theta_lines(&report, bundle.p());
    lines.push(format!("wrote {}", cfg.out.display()));
    Ok(lines)
}
