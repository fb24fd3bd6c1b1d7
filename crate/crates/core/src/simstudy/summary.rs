//! Monte Carlo summaries and their CSV renderings.

use super::{RepRecord, SimDesign};
use crate::inference::normal_quantile;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSummary {
    pub theta0: f64,
    pub mean: f64,
    pub bias: f64,
    /// Standard deviation of the estimates (divisor `reps - 1`).
    pub ese: f64,
    pub rmse: f64,
    /// Mean of the reported asymptotic standard errors.
    pub ase: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub components: Vec<ComponentSummary>,
    pub reps: usize,
    pub successes: usize,
    pub failure_rate: f64,
    pub mean_seconds: f64,
    pub overid_df: usize,
    pub overid_mean: Option<f64>,
    /// Share of replications whose over-identification p-value is below
    /// `alpha`.
    pub overid_rejection: Option<f64>,
}

pub fn summarize(records: &[RepRecord], theta0: &[f64], alpha: f64) -> Result<SimSummary> {
    let ok: Vec<&RepRecord> = records.iter().filter(|r| r.ok()).collect();
    if ok.is_empty() {
        return Err(Error::EmptySummary);
    }
    let n = ok.len() as f64;
    let zq = normal_quantile(alpha);
    let components = theta0
        .iter()
        .enumerate()
        .map(|(c, &t0)| {
            let est: Vec<f64> = ok.iter().map(|r| r.theta[c]).collect();
            let mean = est.iter().sum::<f64>() / n;
            let ss: f64 = est.iter().map(|e| (e - mean).powi(2)).sum();
            let ese = if ok.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
            let rmse = (est.iter().map(|e| (e - t0).powi(2)).sum::<f64>() / n).sqrt();
            let ase = ok.iter().map(|r| r.ase[c]).sum::<f64>() / n;
            let covered = ok
                .iter()
                .filter(|r| (r.theta[c] - t0).abs() <= zq * r.ase[c])
                .count();
            ComponentSummary {
                theta0: t0,
                mean,
                bias: mean - t0,
                ese,
                rmse,
                ase,
                coverage: covered as f64 / n,
            }
        })
        .collect();
    let stats: Vec<f64> = ok.iter().filter_map(|r| r.overid_statistic).collect();
    let pvals: Vec<f64> = ok.iter().filter_map(|r| r.overid_p).collect();
    Ok(SimSummary {
        components,
        reps: records.len(),
        successes: ok.len(),
        failure_rate: 1.0 - n / records.len() as f64,
        mean_seconds: ok.iter().map(|r| r.seconds).sum::<f64>() / n,
        overid_df: ok[0].overid_df,
        overid_mean: (!stats.is_empty()).then(|| stats.iter().sum::<f64>() / stats.len() as f64),
        overid_rejection: (!pvals.is_empty())
            .then(|| pvals.iter().filter(|&&p| p < alpha).count() as f64 / pvals.len() as f64),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per replication. Wall-clock times live in the timing file so
/// that this file is reproducible byte for byte.
pub fn render_reps_csv(points: &[(SimDesign, Vec<RepRecord>)]) -> Result<String> {
    let p = points.first().map_or(0, |(d, _)| d.p());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["M", "K", "rep", "seed", "status"].map(String::from).to_vec();
    header.extend((1..=p).map(|c| format!("theta_{c}")));
    header.extend((1..=p).map(|c| format!("ase_{c}")));
    header.extend(["overid_stat", "overid_df", "overid_p"].map(String::from));
    w.write_record(&header)?;
    for (d, recs) in points {
        for r in recs {
            let mut row = vec![
                d.m.to_string(),
                d.k.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                r.error.clone().unwrap_or_else(|| "ok".into()),
            ];
            for c in 0..p {
                row.push(r.theta.get(c).map_or("NA".into(), |v| format!("{v:?}")));
            }
            for c in 0..p {
                row.push(r.ase.get(c).map_or("NA".into(), |v| format!("{v:?}")));
            }
            row.push(opt(r.overid_statistic));
            row.push(r.overid_df.to_string());
            row.push(opt(r.overid_p));
            w.write_record(&row)?;
        }
    }
    finish(w)
}

pub fn render_timing_csv(points: &[(SimDesign, Vec<RepRecord>)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["M", "K", "rep", "seconds"])?;
    for (d, recs) in points {
        for r in recs {
            w.write_record([
                d.m.to_string(),
                d.k.to_string(),
                r.rep.to_string(),
                format!("{:.6}", r.seconds),
            ])?;
        }
    }
    finish(w)
}

pub fn render_summary_csv(points: &[(SimDesign, SimSummary)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "M", "K", "J", "N", "component", "theta0", "bias", "ese", "rmse", "ase", "coverage",
        "successes", "failure_rate", "overid_df", "overid_mean", "overid_rejection",
    ])?;
    for (d, s) in points {
        for (c, comp) in s.components.iter().enumerate() {
            w.write_record([
                d.m.to_string(),
                d.k.to_string(),
                d.j.to_string(),
                d.n.to_string(),
                format!("theta_{}", c + 1),
                format!("{:?}", comp.theta0),
                format!("{:?}", comp.bias),
                format!("{:?}", comp.ese),
                format!("{:?}", comp.rmse),
                format!("{:?}", comp.ase),
                format!("{:?}", comp.coverage),
                s.successes.to_string(),
                format!("{:?}", s.failure_rate),
                s.overid_df.to_string(),
                opt(s.overid_mean),
                opt(s.overid_rejection),
            ])?;
        }
    }
    finish(w)
}

/// Long-format `(metric, M, K, component, value)` rows for plotting metrics
/// against the response dimension, one line per number of groups.
pub fn render_plotdata_csv(points: &[(SimDesign, SimSummary)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "M", "K", "component", "value"])?;
    for (d, s) in points {
        for (c, comp) in s.components.iter().enumerate() {
            for (metric, value) in [
                ("rmse", comp.rmse),
                ("bias", comp.bias),
                ("ese", comp.ese),
                ("ase", comp.ase),
                ("coverage", comp.coverage),
            ] {
                w.write_record([
                    metric.to_string(),
                    d.m.to_string(),
                    d.k.to_string(),
                    format!("theta_{}", c + 1),
                    format!("{value:?}"),
                ])?;
            }
        }
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(theta: Vec<f64>, ase: Vec<f64>) -> RepRecord {
        RepRecord {
            rep: 0,
            seed: 0,
            error: None,
            theta,
            ase,
            overid_statistic: Some(1.0),
            overid_df: 2,
            overid_p: Some(0.5),
            seconds: 0.0,
        }
    }

    #[test]
    fn exact_estimates_have_zero_error() {
        let recs = vec![rec(vec![0.3, 0.6], vec![0.1, 0.1]); 3];
        let s = summarize(&recs, &[0.3, 0.6], 0.05).unwrap();
        for c in &s.components {
            assert_eq!((c.bias, c.rmse, c.ese), (0.0, 0.0, 0.0));
            assert_eq!(c.coverage, 1.0);
        }
    }

    #[test]
    fn symmetric_pair_hand_values() {
        let a = 0.25;
        let recs = vec![rec(vec![1.0 + a], vec![1.0]), rec(vec![1.0 - a], vec![1.0])];
        let s = summarize(&recs, &[1.0], 0.05).unwrap();
        let c = &s.components[0];
        assert!(c.bias.abs() < 1e-15);
        assert!((c.rmse - a).abs() < 1e-15);
        assert!((c.ese - a * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rmse_decomposition() {
        let recs: Vec<RepRecord> = (0..7)
            .map(|i| rec(vec![0.5 + 0.1 * (i as f64).sin()], vec![0.1]))
            .collect();
        let s = summarize(&recs, &[0.47], 0.05).unwrap();
        let c = &s.components[0];
        let n = 7.0;
        let rhs = c.bias.powi(2) + (n - 1.0) / n * c.ese.powi(2);
        assert!((c.rmse.powi(2) - rhs).abs() < 1e-10);
    }

    #[test]
    fn failures_are_counted_and_all_failed_is_an_error() {
        let mut bad = rec(vec![], vec![]);
        bad.error = Some("boom".into());
        let recs = vec![rec(vec![1.0], vec![0.1]), bad.clone()];
        let s = summarize(&recs, &[1.0], 0.05).unwrap();
        assert_eq!(s.failure_rate, 0.5);
        assert!(matches!(summarize(&[bad], &[1.0], 0.05), Err(Error::EmptySummary)));
    }
}
