//! Shared fixtures for unit tests.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::block_engines::{fit_block, NuisanceSpec, SolverOptions};
use crate::combiner::SummaryBundle;
use crate::partition::{make_plan, split, BlockData, Dataset, GroupStrategy};

/// Block with stationary AR(1) errors; column 0 is an intercept and the
/// remaining `q - 1` columns are standard normal. True `theta_c = 0.3 + 0.25 c`.
pub(crate) fn ar1_block(n: usize, m: usize, q: usize, sigma: f64, rho: f64, seed: u64) -> BlockData {
    let data = ar1_dataset(n, m, q, sigma, rho, seed);
    BlockData {
        j: 0,
        k: 0,
        y: data.responses,
        x: data.covariates,
        theta_cols: (0..q).collect(),
        subjects: (0..n).collect(),
    }
}

pub(crate) fn ar1_dataset(n: usize, m: usize, q: usize, sigma: f64, rho: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..q).map(|c| 0.3 + 0.25 * c as f64).collect();
    let mut y = DMatrix::zeros(n, m);
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let xi = DMatrix::from_fn(m, q, |_, c| {
            if c == 0 {
                1.0
            } else {
                StandardNormal.sample(&mut rng)
            }
        });
        let mut e = 0.0;
        for t in 0..m {
            let z: f64 = StandardNormal.sample(&mut rng);
            e = if t == 0 {
                sigma * z
            } else {
                rho * e + sigma * (1.0 - rho * rho).sqrt() * z
            };
            let mu: f64 = (0..q).map(|c| xi[(t, c)] * theta[c]).sum();
            y[(i, t)] = mu + e;
        }
        x.push(xi);
    }
    Dataset::new(
        (0..n).map(|i| i.to_string()).collect(),
        y,
        x,
        (0..q).map(|c| format!("x_{}", c + 1)).collect(),
    )
    .unwrap()
}

/// Plan, blocks and fitted bundle for an AR(1) dataset with `p = q`.
pub(crate) fn fitted_bundle(
    n: usize,
    m: usize,
    q: usize,
    jn: usize,
    kn: usize,
    spec: NuisanceSpec,
    seed: u64,
) -> (Vec<BlockData>, SummaryBundle) {
    let data = ar1_dataset(n, m, q, 2.0, 0.5, seed);
    let plan = make_plan(m, n, jn, kn, GroupStrategy::SeededRandom, seed).unwrap();
    let blocks = split(&data, &plan).unwrap();
    let fits = blocks
        .iter()
        .map(|b| fit_block(b, spec, &SolverOptions::default()).unwrap())
        .collect();
    (blocks, SummaryBundle::new(plan, fits).unwrap())
}
