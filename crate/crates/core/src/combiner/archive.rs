//! Text archive of block summaries.
//!
//! Layout:
//!
//! ```text
//! ddimm-bundle 1
//! [plan]
//! J = 2
//! ...                      (same keys as a plan file)
//! [names]
//! theta = intercept,x_1,x_2
//! [block 1 1]
//! spec = gee-ar1
//! converged = true
//! iterations = 7
//! final_norm = 3.1e-12
//! rho_clamped = false
//! theta = 0.31,0.58,0.79
//! zeta = 35.2,0.79
//! sensitivity = 5,5,<row-major values>
//! scores = 500,5,<row-major values>
//! ```
//!
//! Block coordinates are 1-based. Floats are written in Rust's shortest
//! round-trip form, so reading an archive reproduces the fits bit for bit.
//! An archive may hold any subset of the blocks; [`merge_parts`] joins
//! archives written separately (for example one per group).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::SummaryBundle;
use crate::block_engines::{BlockFit, NuisanceSpec};
use crate::kv::KvFile;
use crate::partition::{plan_from_kv, plan_to_kv};
use crate::partition::PartitionPlan;
use crate::{Error, Result};

const MAGIC: &str = "ddimm-bundle 1";

#[derive(Debug, Clone, PartialEq)]
pub struct ArchivePart {
    pub plan: PartitionPlan,
    pub theta_names: Vec<String>,
    pub fits: Vec<BlockFit>,
}

fn floats(v: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, x) in v.into_iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{x:?}").unwrap();
    }
    s
}

fn matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{},{}", m.nrows(), m.ncols());
    if !m.is_empty() {
        s.push(',');
        s.push_str(&floats(m.transpose().iter().copied()));
    }
    s
}

pub fn render_archive(plan: &PartitionPlan, theta_names: &[String], fits: &[BlockFit]) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push_str("\n[plan]\n");
    out.push_str(&plan_to_kv(plan).render());
    out.push_str("[names]\n");
    writeln!(out, "theta = {}", theta_names.join(",")).unwrap();
    let mut sorted: Vec<&BlockFit> = fits.iter().collect();
    sorted.sort_by_key(|f| (f.k, f.j));
    for f in sorted {
        let mut kv = KvFile::new();
        kv.set("spec", f.spec.as_str());
        kv.set("converged", f.converged);
        kv.set("iterations", f.iterations);
        kv.set("final_norm", format!("{:?}", f.final_norm));
        kv.set("rho_clamped", f.rho_clamped);
        kv.set("theta", floats(f.theta.iter().copied()));
        kv.set("zeta", floats(f.zeta.iter().copied()));
        kv.set("sensitivity", matrix(&f.sensitivity));
        kv.set("scores", matrix(&f.scores));
        writeln!(out, "[block {} {}]", f.j + 1, f.k + 1).unwrap();
        out.push_str(&kv.render());
    }
    out
}

pub fn write_archive(
    path: &Path,
    plan: &PartitionPlan,
    theta_names: &[String],
    fits: &[BlockFit],
) -> Result<()> {
    std::fs::write(path, render_archive(plan, theta_names, fits)).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<ArchivePart> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_archive(&text)
}

struct Section {
    header: String,
    line: usize,
    body: String,
}

fn sections(text: &str) -> Result<Vec<Section>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == MAGIC => {}
        _ => {
            return Err(Error::Archive {
                line: 1,
                message: format!("expected `{MAGIC}`"),
            })
        }
    }
    let mut out: Vec<Section> = Vec::new();
    for (idx, line) in lines {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            out.push(Section {
                header: h.to_string(),
                line: idx + 1,
                body: String::new(),
            });
        } else if let Some(s) = out.last_mut() {
            s.body.push_str(line);
            s.body.push('\n');
        } else if !t.is_empty() {
            return Err(Error::Archive {
                line: idx + 1,
                message: "content before the first section".into(),
            });
        }
    }
    Ok(out)
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| Error::Archive {
                line,
                message: format!("bad number `{t}`"),
            })
        })
        .collect()
}

fn parse_matrix(s: &str, line: usize) -> Result<DMatrix<f64>> {
    let v = parse_floats(s, line)?;
    if v.len() < 2 {
        return Err(Error::Archive {
            line,
            message: "matrix needs its dimensions".into(),
        });
    }
    let (r, c) = (v[0] as usize, v[1] as usize);
    if v.len() != 2 + r * c {
        return Err(Error::Archive {
            line,
            message: format!("matrix declares {r}x{c} but has {} values", v.len() - 2),
        });
    }
    Ok(DMatrix::from_row_slice(r, c, &v[2..]))
}

fn parse_block(sec: &Section) -> Result<BlockFit> {
    let line = sec.line;
    let bad = |message: String| Error::Archive { line, message };
    let coords: Vec<usize> = sec
        .header
        .split_whitespace()
        .skip(1)
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(format!("bad block header `{}`", sec.header)))?;
    if coords.len() != 2 || coords[0] == 0 || coords[1] == 0 {
        return Err(bad(format!("bad block header `{}`", sec.header)));
    }
    let kv = KvFile::parse(&sec.body)?;
    let get = |key: &str| {
        kv.get(key)
            .ok_or_else(|| bad(format!("block section lacks `{key}`")))
    };
    let spec: NuisanceSpec = get("spec")?.parse()?;
    let parse_bool = |key: &str| -> Result<bool> {
        get(key)?.parse().map_err(|_| bad(format!("`{key}` is not a boolean")))
    };
    Ok(BlockFit {
        j: coords[0] - 1,
        k: coords[1] - 1,
        spec,
        converged: parse_bool("converged")?,
        iterations: get("iterations")?
            .parse()
            .map_err(|_| bad("bad `iterations`".into()))?,
        final_norm: get("final_norm")?
            .parse()
            .map_err(|_| bad("bad `final_norm`".into()))?,
        rho_clamped: parse_bool("rho_clamped")?,
        theta: DVector::from_vec(parse_floats(get("theta")?, line)?),
        zeta: DVector::from_vec(parse_floats(get("zeta")?, line)?),
        sensitivity: parse_matrix(get("sensitivity")?, line)?,
        scores: parse_matrix(get("scores")?, line)?,
    })
}

pub fn parse_archive(text: &str) -> Result<ArchivePart> {
    let secs = sections(text)?;
    let mut plan = None;
    let mut theta_names = Vec::new();
    let mut fits = Vec::new();
    for sec in &secs {
        if sec.header == "plan" {
            plan = Some(plan_from_kv(&KvFile::parse(&sec.body)?)?);
        } else if sec.header == "names" {
            let kv = KvFile::parse(&sec.body)?;
            theta_names = kv
                .get("theta")
                .unwrap_or("")
                .split(',')
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .collect();
        } else if sec.header.starts_with("block") {
            fits.push(parse_block(sec)?);
        } else {
            return Err(Error::Archive {
                line: sec.line,
                message: format!("unknown section `{}`", sec.header),
            });
        }
    }
    let plan = plan.ok_or(Error::Archive {
        line: 1,
        message: "missing [plan] section".into(),
    })?;
    Ok(ArchivePart {
        plan,
        theta_names,
        fits,
    })
}

fn plan_mismatches(a: &PartitionPlan, b: &PartitionPlan) -> Vec<&'static str> {
    let mut out = Vec::new();
    if a.n_blocks() != b.n_blocks() {
        out.push("J");
    }
    if a.n_groups() != b.n_groups() {
        out.push("K");
    }
    if a.block_members != b.block_members {
        out.push("block memberships");
    }
    if a.group_members != b.group_members {
        out.push("group memberships");
    }
    if a.seed != b.seed {
        out.push("seed");
    }
    if a.strategy != b.strategy {
        out.push("strategy");
    }
    out
}

/// Joins archive parts into a complete bundle. All parts must carry the
/// same plan and parameter dimension, and together cover every block once.
pub fn merge_parts(parts: Vec<ArchivePart>) -> Result<SummaryBundle> {
    let mut iter = parts.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Merge("no bundles given".into()))?;
    let plan = first.plan;
    let theta_names = first.theta_names;
    let mut fits = first.fits;
    let p = fits.first().map(|f| f.p());
    for (idx, part) in iter.enumerate() {
        let mut fields: Vec<String> = plan_mismatches(&plan, &part.plan)
            .into_iter()
            .map(String::from)
            .collect();
        if part.theta_names != theta_names {
            fields.push("theta names".into());
        }
        if let (Some(p0), Some(f)) = (p, part.fits.first()) {
            if f.p() != p0 {
                fields.push(format!("p ({} vs {})", p0, f.p()));
            }
        }
        if !fields.is_empty() {
            return Err(Error::Merge(format!(
                "bundle {} is incompatible with bundle 1: mismatched {}",
                idx + 2,
                fields.join(", ")
            )));
        }
        fits.extend(part.fits);
    }
    let mut seen = std::collections::BTreeSet::new();
    for f in &fits {
        if !seen.insert((f.k, f.j)) {
            return Err(Error::Merge(format!(
                "block ({},{}) appears in more than one bundle",
                f.j + 1,
                f.k + 1
            )));
        }
        if let Some(p0) = p {
            if f.p() != p0 {
                return Err(Error::Merge(format!(
                    "mismatched p: block ({},{}) has {} but expected {p0}",
                    f.j + 1,
                    f.k + 1,
                    f.p()
                )));
            }
        }
    }
    let missing: Vec<String> = (0..plan.n_groups())
        .flat_map(|k| (0..plan.n_blocks()).map(move |j| (k, j)))
        .filter(|key| !seen.contains(key))
        .map(|(k, j)| format!("({},{})", j + 1, k + 1))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Merge(format!("missing blocks {}", missing.join(" "))));
    }
    let bundle = SummaryBundle::new(plan, fits)?;
    if theta_names.is_empty() {
        Ok(bundle)
    } else {
        bundle.with_theta_names(theta_names)
    }
}

impl SummaryBundle {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_archive(path, &self.plan, &self.theta_names, &self.fits)
    }

    pub fn read(path: &Path) -> Result<Self> {
        merge_parts(vec![read_archive(path)?])
    }

    /// The part of the bundle belonging to group `k`.
    pub fn group_part(&self, k: usize) -> ArchivePart {
        ArchivePart {
            plan: self.plan.clone(),
            theta_names: self.theta_names.clone(),
            fits: self.fits.iter().filter(|f| f.k == k).cloned().collect(),
        }
    }
}
