//! Sample covariance of the stacked estimating functions and its inverse.
//!
//! Subject `i` contributes only to its own group's rows, so `V_N` is block
//! diagonal across groups. Only the `K` diagonal blocks are ever stored.
//! Within group `k` the rows are `psi_{1k}, .., psi_{Jk}` followed by
//! `g_{1k}, .., g_{Jk}`.

use nalgebra::DMatrix;

use super::{Offsets, SummaryBundle};
use crate::linalg;
use crate::{Error, Result};

/// Per-subject stacked score rows `tau_i` for the subjects of group `k`.
pub(crate) fn group_tau(bundle: &SummaryBundle, k: usize) -> DMatrix<f64> {
    let o = &bundle.offsets;
    let jn = o.n_blocks();
    let p = o.p;
    let n_k = bundle.plan.group_members[k].len();
    let mut tau = DMatrix::zeros(n_k, o.local_dim(k));
    for j in 0..jn {
        let f = bundle.fit(j, k);
        let g_col = jn * p + o.block_start[k][j] - o.group_start[k];
        tau.view_mut((0, j * p), (n_k, p))
            .copy_from(&f.scores.columns(0, p));
        tau.view_mut((0, g_col), (n_k, f.d()))
            .copy_from(&f.scores.columns(p, f.d()));
    }
    tau
}

/// `V_N = (1/N) sum_i tau_i tau_i^T`, returned as its `K` group blocks.
pub fn assemble_vhat(bundle: &SummaryBundle) -> Result<Vec<DMatrix<f64>>> {
    let n = bundle.n_subjects() as f64;
    (0..bundle.offsets.n_groups())
        .map(|k| {
            let tau = group_tau(bundle, k);
            if tau.ncols() != bundle.offsets.local_dim(k) {
                return Err(Error::Invariant(format!("group {} score width", k + 1)));
            }
            Ok(linalg::symmetrize(&(tau.transpose() * &tau)) / n)
        })
        .collect()
}

/// Which partition of a group's weight block to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    PsiPsi,
    PsiG,
    GG,
}

/// `W_k = V_k^{-1}` for each group, with the factors they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBlocks {
    pub vhat: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    /// Groups whose covariance needed a ridge before inversion.
    pub ridged: Vec<bool>,
    pub offsets: Offsets,
}

const RIDGE_BAND_LOW: f64 = -1e-10;
const RIDGE_BAND_HIGH: f64 = 1e-12;

fn invert_group(v: &DMatrix<f64>, group: usize) -> Result<(DMatrix<f64>, bool)> {
    let v = linalg::symmetrize(v);
    let min = linalg::min_eigenvalue(&v);
    let mut ridged = false;
    let target = if min >= RIDGE_BAND_HIGH {
        v
    } else if min > RIDGE_BAND_LOW {
        let dim = v.nrows() as f64;
        let lambda = 1e-8 * v.trace() / dim;
        log::warn!(
            "group {}: score covariance is nearly singular (min eigenvalue {min:e}); adding ridge {lambda:e}",
            group + 1
        );
        ridged = true;
        &v + DMatrix::identity(v.nrows(), v.ncols()) * lambda
    } else {
        return Err(Error::SingularWeight {
            group: group + 1,
            min_eigenvalue: min,
        });
    };
    let w = linalg::spd_inverse(&target).ok_or(Error::SingularWeight {
        group: group + 1,
        min_eigenvalue: min,
    })?;
    Ok((w, ridged))
}

pub fn invert_vhat(vhat: Vec<DMatrix<f64>>, offsets: &Offsets) -> Result<WeightBlocks> {
    if vhat.len() != offsets.n_groups() {
        return Err(Error::Invariant("one covariance block per group expected".into()));
    }
    let mut w = Vec::with_capacity(vhat.len());
    let mut ridged = Vec::with_capacity(vhat.len());
    for (k, v) in vhat.iter().enumerate() {
        if v.nrows() != offsets.local_dim(k) || v.ncols() != offsets.local_dim(k) {
            return Err(Error::Invariant(format!("group {} covariance has the wrong shape", k + 1)));
        }
        let (wk, r) = invert_group(v, k)?;
        w.push(wk);
        ridged.push(r);
    }
    Ok(WeightBlocks {
        vhat,
        w,
        ridged,
        offsets: offsets.clone(),
    })
}

impl WeightBlocks {
    /// The `psi`-`psi` partition of `W_k` (`J p` square).
    pub fn psi_block(&self, k: usize) -> DMatrix<f64> {
        let jp = self.offsets.n_blocks() * self.offsets.p;
        self.w[k].view((0, 0), (jp, jp)).into_owned()
    }

    /// The `psi`-`g` partition of `W_k` (`J p` by `d_k`).
    pub fn psi_g_block(&self, k: usize) -> DMatrix<f64> {
        let jp = self.offsets.n_blocks() * self.offsets.p;
        self.w[k].view((0, jp), (jp, self.offsets.d_k[k])).into_owned()
    }

    /// The `g`-`g` partition of `W_k` (`d_k` square).
    pub fn g_block(&self, k: usize) -> DMatrix<f64> {
        let jp = self.offsets.n_blocks() * self.offsets.p;
        let dk = self.offsets.d_k[k];
        self.w[k].view((jp, jp), (dk, dk)).into_owned()
    }

    /// `[W^part]_{ij:k}`: rows of block `i`, columns of block `j`, group `k`.
    ///
    /// Indices are computed in the fully stacked layout (`psi` rows of block
    /// `(i,k)` start at `(i + kJ) p`, `g` rows at `D^{ik}`) and translated to
    /// the group's diagonal block by subtracting the group's own start.
    pub fn subset(&self, i: usize, j: usize, k: usize, part: Part) -> Result<DMatrix<f64>> {
        let o = &self.offsets;
        if i >= o.n_blocks() || j >= o.n_blocks() || k >= o.n_groups() {
            return Err(Error::Index(format!(
                "block pair ({},{}) in group {} outside {}x{} plan",
                i + 1,
                j + 1,
                k + 1,
                o.n_blocks(),
                o.n_groups()
            )));
        }
        let p = o.p;
        let jp = o.n_blocks() * p;
        let psi_local = |b: usize| o.psi_global_start(b, k) - o.psi_global_start(0, k);
        let g_local = |b: usize| jp + o.g_global_start(b, k) - o.group_start[k];
        let (r0, nr, c0, nc) = match part {
            Part::PsiPsi => (psi_local(i), p, psi_local(j), p),
            Part::PsiG => (psi_local(i), p, g_local(j), o.d_jk[k][j]),
            Part::GG => (g_local(i), o.d_jk[k][i], g_local(j), o.d_jk[k][j]),
        };
        Ok(self.w[k].view((r0, c0), (nr, nc)).into_owned())
    }
}
