//! Data generators for the two simulation families.
//!
//! Each subject draws from its own ChaCha8 stream seeded by
//! `(replication seed, subject index)`, so the data never depend on how
//! subjects or replications are scheduled.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{mix_seed, Family, SimDesign};
use crate::partition::Dataset;
use crate::{Error, Result};

const S_STREAM: u64 = 0x5eed_0005;

/// `G G^T + J I` rescaled to unit diagonal, with `G` standard normal.
pub fn random_pd_matrix(j: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(j, j, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = &g * g.transpose() + DMatrix::identity(j, j) * j as f64;
    let scale: Vec<f64> = (0..j).map(|r| a[(r, r)].sqrt()).collect();
    DMatrix::from_fn(j, j, |r, c| {
        if r == c {
            1.0
        } else {
            a[(r, c)] / (scale[r] * scale[c])
        }
    })
}

/// Between-block correlation `S` used by a Kronecker design.
pub fn design_s(design: &SimDesign) -> DMatrix<f64> {
    random_pd_matrix(design.j, mix_seed(design.seed, S_STREAM))
}

/// Stationary AR(1) series from standard normal innovations:
/// `e_1 = sigma z_1`, `e_t = rho e_{t-1} + sigma sqrt(1 - rho^2) z_t`.
/// This is the lower Cholesky factor of `sigma^2 rho^|s-t|` applied to `z`.
pub fn ar1_errors(z: &[f64], sigma: f64, rho: f64) -> Vec<f64> {
    let innov = sigma * (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(z.len());
    let mut prev = 0.0;
    for (t, &zt) in z.iter().enumerate() {
        prev = if t == 0 { sigma * zt } else { rho * prev + innov * zt };
        out.push(prev);
    }
    out
}

/// `(L_S kron L_A) z` for `z` laid out block by block (`J` rows of length
/// `block_len`), computed as `L_S Z L_A^T` without forming the Kronecker
/// product.
pub fn kronecker_errors(z: &[f64], l_s: &DMatrix<f64>, block_len: usize, sigma: f64, rho: f64) -> Vec<f64> {
    let jn = l_s.nrows();
    let filtered: Vec<Vec<f64>> = (0..jn)
        .map(|j| ar1_errors(&z[j * block_len..(j + 1) * block_len], sigma, rho))
        .collect();
    let mut out = vec![0.0; jn * block_len];
    for j in 0..jn {
        for l in 0..=j {
            let w = l_s[(j, l)];
            for t in 0..block_len {
                out[j * block_len + t] += w * filtered[l][t];
            }
        }
    }
    out
}

fn subject_draws(design: &SimDesign, rep_seed: u64, i: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rep_seed, i as u64));
    let p = design.theta0.len();
    let m = design.m;
    let mut x = DMatrix::from_element(m, p, 1.0);
    for c in 1..p {
        for t in 0..m {
            x[(t, c)] = rng.sample(StandardNormal);
        }
    }
    let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    (x, z)
}

fn assemble(design: &SimDesign, rows: Vec<(DMatrix<f64>, Vec<f64>)>) -> Result<Dataset> {
    let n = rows.len();
    let m = design.m;
    let theta = nalgebra::DVector::from_column_slice(&design.theta0);
    let mut y = DMatrix::zeros(n, m);
    let mut xs = Vec::with_capacity(n);
    for (i, (x, e)) in rows.into_iter().enumerate() {
        let mu = &x * &theta;
        for t in 0..m {
            y[(i, t)] = mu[t] + e[t];
        }
        xs.push(x);
    }
    let names = (0..design.theta0.len())
        .map(|c| if c == 0 { "intercept".to_string() } else { format!("x_{c}") })
        .collect();
    Dataset::new((1..=n).map(|i| i.to_string()).collect(), y, xs, names)
}

/// Kronecker design: errors `N(0, S kron A)` with `A` AR(1) of size `M / J`.
pub fn gen_kronecker_mvn(design: &SimDesign, rep_seed: u64) -> Result<Dataset> {
    if design.family != Family::KroneckerNested {
        return Err(Error::Design("Kronecker generator needs the kronecker-nested family".into()));
    }
    if !design.m.is_multiple_of(design.j) {
        return Err(Error::Design(format!(
            "M = {} is not divisible by J = {}",
            design.m, design.j
        )));
    }
    let block_len = design.m / design.j;
    let l_s = crate::linalg::cholesky(&design_s(design))
        .ok_or_else(|| Error::Design("between-block matrix is not positive definite".into()))?
        .l();
    let rows = (0..design.n)
        .map(|i| {
            let (x, z) = subject_draws(design, rep_seed, i);
            (x, kronecker_errors(&z, &l_s, block_len, design.sigma, design.rho))
        })
        .collect();
    assemble(design, rows)
}

/// Global AR(1) design over all `M` responses.
pub fn gen_ar1_mvn(design: &SimDesign, rep_seed: u64) -> Result<Dataset> {
    if design.family != Family::GlobalAr1 {
        return Err(Error::Design("AR(1) generator needs the global-ar1 family".into()));
    }
    let rows = (0..design.n)
        .map(|i| {
            let (x, z) = subject_draws(design, rep_seed, i);
            (x, ar1_errors(&z, design.sigma, design.rho))
        })
        .collect();
    assemble(design, rows)
}

pub fn generate(design: &SimDesign, rep_seed: u64) -> Result<Dataset> {
    match design.family {
        Family::KroneckerNested => gen_kronecker_mvn(design, rep_seed),
        Family::GlobalAr1 => gen_ar1_mvn(design, rep_seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    fn dense_ar1(m: usize, sigma: f64, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |s, t| sigma * sigma * rho.powi((s as i32 - t as i32).abs()))
    }

    #[test]
    fn pd_matrix_basics() {
        assert_eq!(random_pd_matrix(1, 3), DMatrix::from_element(1, 1, 1.0));
        for seed in 0..20 {
            let s = random_pd_matrix(5, seed);
            assert!(linalg::min_eigenvalue(&s) > 0.0);
            assert_eq!(s, s.transpose());
            assert!(s.diagonal().iter().all(|&d| d == 1.0));
        }
        assert_eq!(random_pd_matrix(4, 7), random_pd_matrix(4, 7));
    }

    #[test]
    fn ar1_recursion_is_the_cholesky_factor() {
        let (m, sigma, rho) = (12, 1.7, 0.6);
        let l = linalg::cholesky(&dense_ar1(m, sigma, rho)).unwrap().l();
        let z: Vec<f64> = (0..m).map(|t| (t as f64 * 0.37).sin()).collect();
        let dense = &l * nalgebra::DVector::from_column_slice(&z);
        let fast = ar1_errors(&z, sigma, rho);
        for t in 0..m {
            assert!((dense[t] - fast[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn kronecker_matches_dense_factor() {
        let s = random_pd_matrix(4, 11);
        let (block_len, sigma, rho) = (10, 4.0, 0.8);
        let a = dense_ar1(block_len, sigma, rho);
        let sigma_full = s.kronecker(&a);
        let l_full = linalg::cholesky(&sigma_full).unwrap().l();
        let l_s = linalg::cholesky(&s).unwrap().l();
        let z: Vec<f64> = (0..40).map(|t| (t as f64 * 1.3).cos()).collect();
        let dense = &l_full * nalgebra::DVector::from_column_slice(&z);
        let fast = kronecker_errors(&z, &l_s, block_len, sigma, rho);
        for t in 0..40 {
            assert!((dense[t] - fast[t]).abs() < 1e-10, "{t}");
        }
    }
}
