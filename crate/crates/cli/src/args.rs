//! Command-line flags. Every flag maps onto a config key and wins over the
//! value in `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ddimm::kv::{join_list, KvFile};

#[derive(Debug, Parser)]
#[command(name = "ddimm", version, about = "Doubly distributed method-of-moments estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a long-format CSV file.
    Fit(FitArgs),
    /// Run a Monte Carlo study over lists of M and K.
    Simulate(SimulateArgs),
    /// Merge bundle archives and combine them without raw data.
    Combine(CombineArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Plain-text `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "J")]
    pub j: Option<usize>,
    #[arg(long, value_parser = ["contiguous", "seeded-random"])]
    pub group_strategy: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["gee", "cl"])]
    pub method: Option<String>,
    #[arg(long, value_parser = ["ar1", "exchangeable", "independence"])]
    pub working: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Combine even if some block fits did not converge.
    #[arg(long)]
    pub allow_unconverged: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Long-format CSV: subject_id,response_index,y,x_1,...
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Partition plan file with explicit memberships.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Covariate columns (default: every x_* column).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long = "K")]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Comma-separated list of group counts.
    #[arg(long = "K", value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Comma-separated list of response dimensions.
    #[arg(long = "M", value_delimiter = ',')]
    pub m: Vec<usize>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_parser = ["kronecker-nested", "global-ar1"])]
    pub family: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta0: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    /// Bundle archives written by `fit` (or split per group).
    #[arg(required = true)]
    pub bundles: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

fn put<T: ToString>(kv: &mut KvFile, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v.to_string());
    }
}

fn put_list<T: ToString>(kv: &mut KvFile, key: &str, v: &[T]) {
    if !v.is_empty() {
        kv.set(key, join_list(v));
    }
}

fn put_path(kv: &mut KvFile, key: &str, v: &Option<PathBuf>) {
    put(kv, key, &v.as_ref().map(|p| p.display().to_string()));
}

impl SolveArgs {
    fn overrides(&self) -> KvFile {
        let mut kv = KvFile::new();
        put(&mut kv, "J", &self.j);
        put(&mut kv, "group_strategy", &self.group_strategy);
        put(&mut kv, "seed", &self.seed);
        put(&mut kv, "method", &self.method);
        put(&mut kv, "working", &self.working);
        put(&mut kv, "tol", &self.tol);
        put(&mut kv, "max_iter", &self.max_iter);
        put(&mut kv, "workers", &self.workers);
        put_path(&mut kv, "out", &self.out);
        put(&mut kv, "alpha", &self.alpha);
        if self.allow_unconverged {
            kv.set("allow_unconverged", true);
        }
        kv
    }
}

impl FitArgs {
    pub fn overrides(&self) -> KvFile {
        let mut kv = self.solve.overrides();
        put_path(&mut kv, "input", &self.input);
        put_path(&mut kv, "plan", &self.plan);
        put_list(&mut kv, "covariates", &self.covariates);
        put(&mut kv, "K", &self.k);
        kv
    }
}

impl SimulateArgs {
    pub fn overrides(&self) -> KvFile {
        let mut kv = self.solve.overrides();
        put_list(&mut kv, "K", &self.k);
        put_list(&mut kv, "M", &self.m);
        put(&mut kv, "N", &self.n);
        put(&mut kv, "reps", &self.reps);
        put(&mut kv, "family", &self.family);
        put(&mut kv, "sigma", &self.sigma);
        put(&mut kv, "rho", &self.rho);
        let theta: Vec<String> = self.theta0.iter().map(|t| format!("{t:?}")).collect();
        put_list(&mut kv, "theta0", &theta);
        kv
    }
}

impl CombineArgs {
    pub fn overrides(&self) -> KvFile {
        let mut kv = KvFile::new();
        let paths: Vec<String> = self.bundles.iter().map(|p| p.display().to_string()).collect();
        put_list(&mut kv, "bundles", &paths);
        put(&mut kv, "workers", &self.workers);
        put_path(&mut kv, "out", &self.out);
        put(&mut kv, "alpha", &self.alpha);
        kv
    }
}
