//! CSV and text renderings of an [`InferenceReport`].

use std::fmt::Write as _;

use super::{InferenceReport, OverIdTest};
use crate::combiner::SummaryBundle;
use crate::Result;

/// `theta` names followed by `zeta_list` names such as `sigma2[j=2,k=1]`.
pub fn parameter_names(bundle: &SummaryBundle) -> Vec<String> {
    let mut names: Vec<String> = bundle.theta_names.clone();
    for f in &bundle.fits {
        for z in f.spec.zeta_names() {
            names.push(format!("{z}[j={},k={}]", f.j + 1, f.k + 1));
        }
    }
    names
}

pub fn render_estimates_csv(report: &InferenceReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["parameter", "estimate", "ase", "z", "p_value", "ci_lower", "ci_upper"])?;
    for r in &report.parameters {
        w.write_record([
            r.name.clone(),
            format!("{:?}", r.estimate),
            format!("{:?}", r.ase),
            format!("{:?}", r.z),
            format!("{:?}", r.p_value),
            format!("{:?}", r.lower),
            format!("{:?}", r.upper),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `key = value` summary of the over-identification test, or a notice
/// explaining why it was skipped.
pub fn render_overid(test: Option<&OverIdTest>, skipped: Option<&str>) -> String {
    let mut s = String::new();
    match test {
        Some(t) => {
            writeln!(s, "statistic = {:?}", t.statistic).unwrap();
            writeln!(s, "df = {}", t.df).unwrap();
            match t.p_value {
                Some(p) => writeln!(s, "p_value = {p:?}").unwrap(),
                None => writeln!(s, "p_value = NA").unwrap(),
            }
        }
        None => {
            writeln!(s, "skipped = {}", skipped.unwrap_or("not computed")).unwrap();
        }
    }
    s
}

/// Fixed-width table for terminals.
pub fn render_table(report: &InferenceReport) -> String {
    let width = report
        .parameters
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(9)
        .max(9);
    let level = 100.0 * (1.0 - report.alpha);
    let mut s = String::new();
    writeln!(
        s,
        "{:<width$} {:>12} {:>12} {:>9} {:>10}   {level}% CI",
        "parameter", "estimate", "ase", "z", "p"
    )
    .unwrap();
    for r in &report.parameters {
        writeln!(
            s,
            "{:<width$} {:>12.6} {:>12.6} {:>9.3} {:>10.3e}   [{:.6}, {:.6}]",
            r.name, r.estimate, r.ase, r.z, r.p_value, r.lower, r.upper
        )
        .unwrap();
    }
    if let Some(t) = &report.overid {
        match t.p_value {
            Some(p) => writeln!(
                s,
                "over-identification: statistic {:.4} on {} df, p = {:.4}",
                t.statistic, t.df, p
            ),
            None => writeln!(
                s,
                "over-identification: statistic {:.4} on 0 df (just identified)",
                t.statistic
            ),
        }
        .unwrap();
    }
    s
}
