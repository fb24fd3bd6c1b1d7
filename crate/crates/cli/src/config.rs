//! Run configuration: a `key = value` file overlaid by command-line flags.

use std::path::PathBuf;

use ddimm::block_engines::{NuisanceSpec, SolverOptions, WorkingStructure};
use ddimm::kv::{join_list, KvFile};
use ddimm::partition::GroupStrategy;
use ddimm::simstudy::{Family, SimDesign};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Fit,
    Simulate,
    Combine,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Fit => "fit",
            CommandKind::Simulate => "simulate",
            CommandKind::Combine => "combine",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            CommandKind::Fit => &[
                "command", "input", "plan", "covariates", "J", "K", "group_strategy", "seed",
                "method", "working", "tol", "max_iter", "fd_step", "workers", "out", "alpha",
                "allow_unconverged",
            ],
            CommandKind::Simulate => &[
                "command", "J", "K", "group_strategy", "seed", "method", "working", "tol",
                "max_iter", "fd_step", "workers", "out", "alpha", "allow_unconverged", "reps",
                "family", "N", "M", "sigma", "rho", "theta0",
            ],
            CommandKind::Combine => &["command", "bundles", "workers", "out", "alpha"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gee,
    Cl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gee => "gee",
            Method::Cl => "cl",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "gee" => Ok(Method::Gee),
            "cl" => Ok(Method::Cl),
            other => Err(CliError::Usage(format!("unknown method `{other}` (expected gee or cl)"))),
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input: Option<PathBuf>,
    /// Partition plan file with explicit memberships; overrides `J`, `K`,
    /// `group_strategy` and `seed` for the split.
    pub plan: Option<PathBuf>,
    /// Covariate columns of the input; empty means every `x_*` column.
    pub covariates: Vec<String>,
    pub j: usize,
    /// One value for `fit`; a sweep for `simulate`.
    pub k: Vec<usize>,
    pub strategy: GroupStrategy,
    pub seed: u64,
    pub method: Method,
    pub working: WorkingStructure,
    pub solver: SolverOptions,
    /// `None` uses every logical core.
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub alpha: f64,
    pub allow_unconverged: bool,
    pub reps: usize,
    pub family: Family,
    pub n: usize,
    pub m: Vec<usize>,
    pub sigma: f64,
    pub rho: f64,
    pub theta0: Vec<f64>,
    pub bundles: Vec<PathBuf>,
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn parsed<T: std::str::FromStr>(kv: &KvFile, key: &str, default: T) -> CliResult<T> {
    Ok(kv.get_parsed(key)?.unwrap_or(default))
}

fn list<T: std::str::FromStr>(kv: &KvFile, key: &str, default: Vec<T>) -> CliResult<Vec<T>> {
    Ok(kv.get_list(key)?.unwrap_or(default))
}

impl RunConfig {
    pub fn from_kv(command: CommandKind, kv: &KvFile) -> CliResult<Self> {
        let allowed = command.keys();
        if let Some(bad) = kv.keys().find(|k| !allowed.contains(k)) {
            return Err(usage(format!(
                "unknown key `{bad}` for `{}` (allowed: {})",
                command.as_str(),
                allowed.join(", ")
            )));
        }
        if let Some(c) = kv.get("command") {
            if c != command.as_str() {
                return Err(usage(format!(
                    "config was written for `{c}`, not `{}`",
                    command.as_str()
                )));
            }
        }
        let sim = SimDesign::default();
        let simulate = command == CommandKind::Simulate;
        let solver_default = SolverOptions::default();
        let cfg = RunConfig {
            command,
            input: kv.get("input").map(PathBuf::from),
            plan: kv.get("plan").map(PathBuf::from),
            covariates: list(kv, "covariates", Vec::new())?,
            j: parsed(kv, "J", if simulate { sim.j } else { 1 })?,
            k: list(kv, "K", vec![if simulate { sim.k } else { 1 }])?,
            strategy: kv
                .get("group_strategy")
                .map(str::parse)
                .transpose()?
                .unwrap_or_default(),
            seed: parsed(kv, "seed", sim.seed)?,
            method: kv.get("method").map(str::parse).transpose()?.unwrap_or(Method::Gee),
            working: kv
                .get("working")
                .map(str::parse)
                .transpose()?
                .unwrap_or(WorkingStructure::Ar1),
            solver: SolverOptions {
                tol: parsed(kv, "tol", solver_default.tol)?,
                max_iter: parsed(kv, "max_iter", solver_default.max_iter)?,
                fd_step: parsed(kv, "fd_step", solver_default.fd_step)?,
            },
            workers: kv.get_parsed("workers")?,
            out: PathBuf::from(kv.get("out").unwrap_or("out")),
            alpha: parsed(kv, "alpha", 0.05)?,
            allow_unconverged: parsed(kv, "allow_unconverged", false)?,
            reps: parsed(kv, "reps", sim.reps)?,
            family: kv.get("family").map(str::parse).transpose()?.unwrap_or(sim.family),
            n: parsed(kv, "N", sim.n)?,
            m: list(kv, "M", vec![sim.m])?,
            sigma: parsed(kv, "sigma", sim.sigma)?,
            rho: parsed(kv, "rho", sim.rho)?,
            theta0: list(kv, "theta0", sim.theta0.clone())?,
            bundles: list::<String>(kv, "bundles", Vec::new())?
                .into_iter()
                .map(PathBuf::from)
                .collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(usage(format!("alpha = {} is outside (0, 1)", self.alpha)));
        }
        if self.workers == Some(0) {
            return Err(usage("workers must be at least 1".into()));
        }
        if self.method == Method::Cl && self.working != WorkingStructure::Ar1 {
            return Err(usage(format!(
                "the cl method models AR(1) blocks; working = {} is not available",
                self.working.as_str()
            )));
        }
        if !(self.solver.tol > 0.0 && self.solver.fd_step > 0.0 && self.solver.max_iter > 0) {
            return Err(usage("tol, fd_step and max_iter must be positive".into()));
        }
        if self.k.is_empty() || self.m.is_empty() {
            return Err(usage("K and M need at least one value".into()));
        }
        match self.command {
            CommandKind::Fit => {
                if self.input.is_none() {
                    return Err(usage("fit needs an input file (--input or `input =`)".into()));
                }
                if self.k.len() != 1 {
                    return Err(usage("fit takes a single K".into()));
                }
            }
            CommandKind::Combine => {
                if self.bundles.is_empty() {
                    return Err(usage("combine needs at least one bundle file".into()));
                }
            }
            CommandKind::Simulate => {}
        }
        Ok(())
    }

    pub fn spec(&self) -> NuisanceSpec {
        match self.method {
            Method::Gee => NuisanceSpec::gee(self.working),
            Method::Cl => NuisanceSpec::ClAr1,
        }
    }

    /// Every point of a simulation sweep, `M` outer and `K` inner.
    pub fn designs(&self) -> Vec<SimDesign> {
        let mut out = Vec::new();
        for &m in &self.m {
            for &k in &self.k {
                out.push(SimDesign {
                    family: self.family,
                    n: self.n,
                    m,
                    j: self.j,
                    k,
                    theta0: self.theta0.clone(),
                    sigma: self.sigma,
                    rho: self.rho,
                    spec: self.spec(),
                    strategy: self.strategy,
                    reps: self.reps,
                    seed: self.seed,
                    alpha: self.alpha,
                    solver: self.solver,
                });
            }
        }
        out
    }

    /// The settings that determine the outputs, as a config file that
    /// reproduces the run. The worker count and the output directory are
    /// left out: neither changes any output.
    pub fn resolved(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("command", self.command.as_str());
        let f = |x: f64| format!("{x:?}");
        match self.command {
            CommandKind::Combine => {
                let paths: Vec<String> = self.bundles.iter().map(|p| p.display().to_string()).collect();
                kv.set("bundles", paths.join(","));
                kv.set("alpha", f(self.alpha));
                return kv;
            }
            CommandKind::Fit => {
                if let Some(p) = &self.input {
                    kv.set("input", p.display());
                }
                if let Some(p) = &self.plan {
                    kv.set("plan", p.display());
                }
                if !self.covariates.is_empty() {
                    kv.set("covariates", self.covariates.join(","));
                }
            }
            CommandKind::Simulate => {
                kv.set("family", self.family.as_str());
                kv.set("N", self.n);
                kv.set("M", join_list(&self.m));
                kv.set("sigma", f(self.sigma));
                kv.set("rho", f(self.rho));
                kv.set("theta0", self.theta0.iter().map(|&t| f(t)).collect::<Vec<_>>().join(","));
                kv.set("reps", self.reps);
            }
        }
        kv.set("J", self.j);
        kv.set("K", join_list(&self.k));
        kv.set("group_strategy", self.strategy.as_str());
        kv.set("seed", self.seed);
        kv.set("method", self.method.as_str());
        kv.set("working", self.working.as_str());
        kv.set("tol", f(self.solver.tol));
        kv.set("max_iter", self.solver.max_iter);
        kv.set("fd_step", f(self.solver.fd_step));
        kv.set("alpha", f(self.alpha));
        kv.set("allow_unconverged", self.allow_unconverged);
        kv
    }
}

/// Reads `config` (if any) and lays `overrides` on top; flags win.
pub fn load(command: CommandKind, config: Option<&std::path::Path>, overrides: &KvFile) -> CliResult<RunConfig> {
    let mut kv = match config {
        Some(path) => KvFile::read(path)?,
        None => KvFile::new(),
    };
    for key in overrides.keys() {
        if let Some(v) = overrides.get(key) {
            kv.set(key, v);
        }
    }
    RunConfig::from_kv(command, &kv)
}
