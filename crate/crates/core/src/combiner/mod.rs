//! One-step combination of block estimates.
//!
//! The combiner never touches raw data: it needs only the block estimates,
//! their per-subject scores and their sensitivity matrices. Scores give the
//! group-wise sample covariance `V_N` of the stacked estimating functions,
//! whose inverse is the optimal GMM weight; together with the sensitivities
//! this yields the matrices `C_{k,i}` and the closed-form estimator
//!
//! ```text
//! (theta, zeta) = (sum_k sum_i n_k^2 C_{k,i})^{-1} sum_k sum_i n_k^2 C_{k,i} (theta_ik; zeta_list)
//! ```
//!
//! with Godambe information `j = S^T V_N^{-1} S`.

mod archive;
mod cmatrix;
mod vhat;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

pub use archive::{merge_parts, read_archive, write_archive, ArchivePart};
pub use cmatrix::{build_ab, build_c, AbBlocks, CBlocks};
pub use vhat::{assemble_vhat, invert_vhat, Part, WeightBlocks};

use crate::block_engines::BlockFit;
use crate::inference::godambe_covariance;
use crate::linalg;
use crate::partition::{plan_to_kv, PartitionPlan};
use crate::{Error, Result};

/// Dimension bookkeeping for the stacked nuisance vector.
///
/// Nuisance parameters are stacked with `j` fast and `k` slow, so block
/// `(j, k)` starts at `D^{jk} = sum_{l<k} d_l + sum_{j'<j} d_{j'k}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offsets {
    pub p: usize,
    /// `d_jk`, indexed `[k][j]`.
    pub d_jk: Vec<Vec<usize>>,
    /// `d_k = sum_j d_jk`.
    pub d_k: Vec<usize>,
    /// `D^k = sum_{l<k} d_l`.
    pub group_start: Vec<usize>,
    /// `D^{jk}`, indexed `[k][j]`.
    pub block_start: Vec<Vec<usize>>,
    /// `d = sum_k d_k`.
    pub d: usize,
}

impl Offsets {
    pub fn new(p: usize, d_jk: Vec<Vec<usize>>) -> Self {
        let d_k: Vec<usize> = d_jk.iter().map(|row| row.iter().sum()).collect();
        let mut group_start = Vec::with_capacity(d_k.len());
        let mut block_start = Vec::with_capacity(d_k.len());
        let mut acc = 0;
        for row in &d_jk {
            group_start.push(acc);
            let mut starts = Vec::with_capacity(row.len());
            for &d in row {
                starts.push(acc);
                acc += d;
            }
            block_start.push(starts);
        }
        Offsets {
            p,
            d_jk,
            d_k,
            group_start,
            block_start,
            d: acc,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.d_jk.first().map_or(0, Vec::len)
    }

    pub fn n_groups(&self) -> usize {
        self.d_jk.len()
    }

    /// Width of the full parameter vector `(theta, zeta_list)`.
    pub fn dim(&self) -> usize {
        self.p + self.d
    }

    /// Rows of group `k`'s block of `V_N`: `J p` score rows then `d_k`.
    pub fn local_dim(&self, k: usize) -> usize {
        self.n_blocks() * self.p + self.d_k[k]
    }

    /// Position of `zeta_jk` inside `zeta_list`.
    pub fn zeta_range(&self, j: usize, k: usize) -> std::ops::Range<usize> {
        let s = self.block_start[k][j];
        s..s + self.d_jk[k][j]
    }

    /// First row of `psi_{jk}` in the fully stacked (all-group) layout.
    pub fn psi_global_start(&self, j: usize, k: usize) -> usize {
        (j + k * self.n_blocks()) * self.p
    }

    /// First row of `g_{jk}` in the fully stacked nuisance layout.
    pub fn g_global_start(&self, j: usize, k: usize) -> usize {
        self.block_start[k][j]
    }
}

/// Everything the combiner needs: the plan and all `J x K` block fits in
/// `k`-major, `j`-minor order.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryBundle {
    pub plan: PartitionPlan,
    pub fits: Vec<BlockFit>,
    pub offsets: Offsets,
    /// Labels of the mean parameters, `theta_1..theta_p` unless set.
    pub theta_names: Vec<String>,
}

impl SummaryBundle {
    pub fn new(plan: PartitionPlan, mut fits: Vec<BlockFit>) -> Result<Self> {
        plan.validate()?;
        let jn = plan.n_blocks();
        let kn = plan.n_groups();
        if fits.len() != jn * kn {
            return Err(Error::Invariant(format!(
                "bundle has {} block fits, plan needs {}",
                fits.len(),
                jn * kn
            )));
        }
        fits.sort_by_key(|f| (f.k, f.j));
        for (idx, f) in fits.iter().enumerate() {
            if f.j != idx % jn || f.k != idx / jn {
                return Err(Error::Invariant(format!(
                    "block fits do not cover the {jn}x{kn} grid (duplicate or missing ({},{}))",
                    f.j + 1,
                    f.k + 1
                )));
            }
        }
        let p = fits[0].p();
        let group_sizes = plan.group_sizes();
        for f in &fits {
            if f.p() != p {
                return Err(Error::Invariant(format!(
                    "block ({},{}) has p = {}, expected {p}",
                    f.j + 1,
                    f.k + 1,
                    f.p()
                )));
            }
            if f.n() != group_sizes[f.k] || f.scores.ncols() != f.p() + f.d() {
                return Err(Error::Invariant(format!(
                    "block ({},{}) scores are {}x{}, expected {}x{}",
                    f.j + 1,
                    f.k + 1,
                    f.scores.nrows(),
                    f.scores.ncols(),
                    group_sizes[f.k],
                    f.p() + f.d()
                )));
            }
            let s = &f.sensitivity;
            if s.nrows() != f.p() + f.d() || s.ncols() != f.p() + f.d() {
                return Err(Error::Invariant(format!(
                    "block ({},{}) sensitivity has the wrong shape",
                    f.j + 1,
                    f.k + 1
                )));
            }
        }
        let d_jk = (0..kn)
            .map(|k| (0..jn).map(|j| fits[k * jn + j].d()).collect())
            .collect();
        Ok(SummaryBundle {
            offsets: Offsets::new(p, d_jk),
            plan,
            fits,
            theta_names: (1..=p).map(|c| format!("theta_{c}")).collect(),
        })
    }

    pub fn with_theta_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::Invariant(format!(
                "{} names for {} mean parameters",
                names.len(),
                self.p()
            )));
        }
        self.theta_names = names;
        Ok(self)
    }

    pub fn fit(&self, j: usize, k: usize) -> &BlockFit {
        &self.fits[k * self.plan.n_blocks() + j]
    }

    pub fn n_subjects(&self) -> usize {
        self.plan.n_subjects()
    }

    pub fn p(&self) -> usize {
        self.offsets.p
    }

    /// First non-converged block, if any.
    pub fn first_unconverged(&self) -> Option<(usize, usize)> {
        self.fits.iter().find(|f| !f.converged).map(|f| (f.j, f.k))
    }

    /// `zeta_list`: block nuisance estimates stacked `j` fast, `k` slow.
    pub fn zeta_list(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.offsets.d);
        for f in &self.fits {
            z.rows_mut(self.offsets.block_start[f.k][f.j], f.d())
                .copy_from(&f.zeta);
        }
        z
    }

    /// Group `k`'s stacked weighted sensitivity `S_k`: rows as in `V_N`'s
    /// group block, columns `(theta, zeta_list)`, scaled by `n_k / N`.
    pub fn group_sensitivity(&self, k: usize) -> DMatrix<f64> {
        let o = &self.offsets;
        let jn = o.n_blocks();
        let p = o.p;
        let w = self.plan.group_members[k].len() as f64 / self.n_subjects() as f64;
        let mut s = DMatrix::zeros(o.local_dim(k), o.dim());
        for j in 0..jn {
            let f = self.fit(j, k);
            let d = f.d();
            let zc = p + o.block_start[k][j];
            let psi_row = j * p;
            let g_row = jn * p + o.block_start[k][j] - o.group_start[k];
            s.view_mut((psi_row, 0), (p, p)).copy_from(&(f.s_theta_psi() * w));
            s.view_mut((psi_row, zc), (p, d)).copy_from(&(f.s_zeta_psi() * w));
            s.view_mut((g_row, 0), (d, p)).copy_from(&(f.s_theta_g() * w));
            s.view_mut((g_row, zc), (d, d)).copy_from(&(f.s_zeta_g() * w));
        }
        s
    }

    /// Hex SHA-256 of the plan's key-value rendering.
    pub fn plan_hash(&self) -> String {
        hex::encode(Sha256::digest(plan_to_kv(&self.plan).render().as_bytes()))
    }
}

/// `S^T V_N^{-1} S`, accumulated group by group.
pub fn stacked_information(bundle: &SummaryBundle, weights: &WeightBlocks) -> DMatrix<f64> {
    let dim = bundle.offsets.dim();
    let mut info = DMatrix::zeros(dim, dim);
    for k in 0..bundle.offsets.n_groups() {
        let s = bundle.group_sensitivity(k);
        info += s.transpose() * &weights.w[k] * &s;
    }
    linalg::symmetrize(&info)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedFit {
    pub theta: DVector<f64>,
    /// Nuisance estimates stacked `j` fast, `k` slow.
    pub zeta: DVector<f64>,
    /// Godambe information `S^T V_N^{-1} S`.
    pub godambe: DMatrix<f64>,
    /// `godambe^{-1} / N`.
    pub cov: DMatrix<f64>,
    pub n_subjects: usize,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub information_condition: f64,
    pub weight_conditions: Vec<f64>,
    pub ridged_groups: Vec<usize>,
    pub seed: u64,
    pub plan_hash: String,
}

impl CombinedFit {
    /// `zeta_jk` sliced out of the combined nuisance vector.
    pub fn zeta_block(&self, offsets: &Offsets, j: usize, k: usize) -> DVector<f64> {
        self.zeta.rows_range(offsets.zeta_range(j, k)).into_owned()
    }

    pub fn estimates(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.theta.len() + self.zeta.len());
        v.rows_mut(0, self.theta.len()).copy_from(&self.theta);
        v.rows_mut(self.theta.len(), self.zeta.len()).copy_from(&self.zeta);
        v
    }
}

/// Assembles `V_N`, inverts it and combines.
pub fn combine(bundle: &SummaryBundle) -> Result<CombinedFit> {
    let weights = invert_vhat(assemble_vhat(bundle)?, &bundle.offsets)?;
    combine_with_weights(bundle, &weights)
}

pub fn combine_with_weights(bundle: &SummaryBundle, weights: &WeightBlocks) -> Result<CombinedFit> {
    let o = &bundle.offsets;
    let dim = o.dim();
    let n = bundle.n_subjects() as f64;
    let mut h = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    // fixed k-major, i-minor reduction order
    for k in 0..o.n_groups() {
        let scale = (bundle.plan.group_members[k].len() as f64 / n).powi(2);
        for i in 0..o.n_blocks() {
            let c = build_c(bundle, weights, k, i)?;
            let f = bundle.fit(i, k);
            let mut local = DVector::zeros(o.p + f.d());
            local.rows_mut(0, o.p).copy_from(&f.theta);
            local.rows_mut(o.p, f.d()).copy_from(&f.zeta);
            h += &c.full * scale;
            rhs += &c.condensed * local * scale;
        }
    }
    let h = linalg::symmetrize(&h);
    let information_condition = linalg::condition_number(&h);
    let Some(solution) = linalg::spd_solve(&h, &rhs) else {
        let per_block = bundle
            .fits
            .iter()
            .map(|f| {
                format!(
                    "({},{})={:.3e}",
                    f.j + 1,
                    f.k + 1,
                    linalg::condition_number_svd(&f.sensitivity)
                )
            })
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::SingularCombination {
            condition: information_condition,
            per_block,
        });
    };
    let godambe = stacked_information(bundle, weights);
    debug_assert!(
        linalg::rel_frobenius(&h, &godambe) <= 1e-8,
        "C-sum and S'WS disagree"
    );
    let cov = godambe_covariance(&godambe, bundle.n_subjects())?;
    Ok(CombinedFit {
        theta: solution.rows(0, o.p).into_owned(),
        zeta: solution.rows(o.p, o.d).into_owned(),
        godambe,
        cov,
        n_subjects: bundle.n_subjects(),
        diagnostics: Diagnostics {
            information_condition,
            weight_conditions: weights.w.iter().map(linalg::condition_number).collect(),
            ridged_groups: weights
                .ridged
                .iter()
                .enumerate()
                .filter_map(|(k, &r)| r.then_some(k))
                .collect(),
            seed: bundle.plan.seed,
            plan_hash: bundle.plan_hash(),
        },
    })
}

#[cfg(test)]
mod tests;
