//! Monte Carlo harness: generate, fit, combine and summarise replications.

mod generate;
mod summary;

use std::time::Instant;

pub use generate::{
    ar1_errors, design_s, gen_ar1_mvn, gen_kronecker_mvn, generate, kronecker_errors,
    random_pd_matrix,
};
pub use summary::{
    render_plotdata_csv, render_reps_csv, render_summary_csv, render_timing_csv, summarize,
    ComponentSummary, SimSummary,
};

use crate::block_engines::{NuisanceSpec, SolverOptions};
use crate::par::Exec;
use crate::partition::{make_plan, GroupStrategy};
use crate::pipeline::{analyze, AnalysisOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `Sigma = S kron A`, `A` AR(1) within each of the `J` blocks.
    KroneckerNested,
    /// One AR(1) process over all `M` responses.
    GlobalAr1,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::KroneckerNested => "kronecker-nested",
            Family::GlobalAr1 => "global-ar1",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "kronecker-nested" | "kronecker" => Ok(Family::KroneckerNested),
            "global-ar1" | "ar1" => Ok(Family::GlobalAr1),
            other => Err(Error::Config(format!(
                "unknown family `{other}` (expected kronecker-nested or global-ar1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    pub j: usize,
    pub k: usize,
    /// True mean parameter; column 0 of the design is an intercept and the
    /// remaining columns are independent standard normal covariates.
    pub theta0: Vec<f64>,
    pub sigma: f64,
    pub rho: f64,
    pub spec: NuisanceSpec,
    pub strategy: GroupStrategy,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub solver: SolverOptions,
}

impl Default for SimDesign {
    fn default() -> Self {
        SimDesign {
            family: Family::KroneckerNested,
            n: 1000,
            m: 300,
            j: 6,
            k: 2,
            theta0: vec![0.3, 0.6, 0.8],
            sigma: 4.0,
            rho: 0.8,
            spec: NuisanceSpec::GeeAr1,
            strategy: GroupStrategy::SeededRandom,
            reps: 100,
            seed: 2024,
            alpha: 0.05,
            solver: SolverOptions::default(),
        }
    }
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Design(m));
        if self.theta0.is_empty() || self.theta0.iter().any(|t| !t.is_finite()) {
            return fail("theta0 must be a non-empty list of finite numbers".into());
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return fail(format!("rho = {} is outside (-1, 1)", self.rho));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma = {} must be positive", self.sigma));
        }
        if self.reps == 0 {
            return fail("reps must be at least 1".into());
        }
        if self.j == 0 || self.k == 0 || self.n == 0 {
            return fail("N, J and K must be positive".into());
        }
        if self.m < 2 * self.j {
            return fail(format!("M = {} cannot give {} blocks of at least 2", self.m, self.j));
        }
        if self.k > self.n {
            return fail(format!("K = {} exceeds N = {}", self.k, self.n));
        }
        if self.family == Family::KroneckerNested && !self.m.is_multiple_of(self.j) {
            return fail(format!(
                "kronecker-nested needs M divisible by J (M = {}, J = {})",
                self.m, self.j
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha = {} is outside (0, 1)", self.alpha));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.theta0.len()
    }
}

/// SplitMix64 finaliser.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from `(seed, index)`.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index))
}

/// Seed of replication `r` under master seed `master`.
pub fn rep_seed(master: u64, r: usize) -> u64 {
    mix_seed(master, r as u64 ^ 0xa5a5_0000_0000_0000)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    /// `None` on success, otherwise the failure message.
    pub error: Option<String>,
    pub theta: Vec<f64>,
    pub ase: Vec<f64>,
    pub overid_statistic: Option<f64>,
    pub overid_df: usize,
    pub overid_p: Option<f64>,
    /// Longest block fit plus the non-parallel remainder, in seconds.
    pub seconds: f64,
}

impl RepRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

pub fn run_replication(design: &SimDesign, r: usize, exec: Exec) -> RepRecord {
    let seed = rep_seed(design.seed, r);
    let start = Instant::now();
    let mut record = RepRecord {
        rep: r,
        seed,
        error: None,
        theta: Vec::new(),
        ase: Vec::new(),
        overid_statistic: None,
        overid_df: 0,
        overid_p: None,
        seconds: 0.0,
    };
    let outcome = generate(design, seed).and_then(|data| {
        let plan = make_plan(design.m, design.n, design.j, design.k, design.strategy, seed)?;
        let opts = AnalysisOptions {
            spec: design.spec,
            solver: design.solver,
            allow_unconverged: false,
            alpha: design.alpha,
            exec,
        };
        let cols: Vec<usize> = (0..design.p()).collect();
        analyze(&data, &plan, &cols, &opts)
    });
    match outcome {
        Ok(a) => {
            let p = design.p();
            record.theta = a.fit.theta.iter().copied().collect();
            record.ase = a.report.parameters[..p].iter().map(|r| r.ase).collect();
            if let Some(t) = &a.report.overid {
                record.overid_statistic = Some(t.statistic);
                record.overid_df = t.df;
                record.overid_p = t.p_value;
            }
            // data generation is not part of the analysis
            record.seconds = a.timing.critical_path();
        }
        Err(e) => {
            record.error = Some(e.to_string());
            record.seconds = start.elapsed().as_secs_f64();
        }
    }
    record
}

/// Runs all replications; records come back in replication order whatever
/// the execution strategy.
pub fn run_replications(design: &SimDesign, exec: Exec) -> Result<Vec<RepRecord>> {
    design.validate()?;
    Ok(exec.map(design.reps, |r| run_replication(design, r, exec)))
}
