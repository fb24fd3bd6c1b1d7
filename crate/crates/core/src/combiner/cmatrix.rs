//! The `A`, `B` and `C` matrices that turn block estimates into the
//! one-step estimator.

use nalgebra::DMatrix;

use super::{Part, SummaryBundle, WeightBlocks};
use crate::{Error, Result};

/// `A^theta_{k,ij}` (p x p), `A^zeta_{k,ij}` (p x d_ik),
/// `B^theta_{k,ij}` (d_jk x p), `B^zeta_{k,ij}` (d_jk x d_ik).
#[derive(Debug, Clone, PartialEq)]
pub struct AbBlocks {
    pub a_theta: DMatrix<f64>,
    pub a_zeta: DMatrix<f64>,
    pub b_theta: DMatrix<f64>,
    pub b_zeta: DMatrix<f64>,
}

/// Computes the four blocks for the pair `(i, j)` in group `k`. The leading
/// factors use block `j`'s sensitivities and the trailing ones block `i`'s.
pub fn build_ab(
    bundle: &SummaryBundle,
    weights: &WeightBlocks,
    k: usize,
    i: usize,
    j: usize,
) -> Result<AbBlocks> {
    let fi = bundle.fit(i, k);
    let fj = bundle.fit(j, k);
    let w_psi = weights.subset(j, i, k, Part::PsiPsi)?;
    let w_psi_g = weights.subset(j, i, k, Part::PsiG)?;
    let w_g_psi = weights.subset(i, j, k, Part::PsiG)?.transpose();
    let w_g = weights.subset(j, i, k, Part::GG)?;

    let s_tp_j = fj.s_theta_psi().transpose();
    let s_tg_j = fj.s_theta_g().transpose();
    let s_zp_j = fj.s_zeta_psi().transpose();
    let s_zg_j = fj.s_zeta_g().transpose();

    // left factors multiplying the psi and g sensitivity rows of block i
    let theta_on_psi = &s_tp_j * &w_psi + &s_tg_j * &w_g_psi;
    let theta_on_g = &s_tp_j * &w_psi_g + &s_tg_j * &w_g;
    let zeta_on_psi = &s_zp_j * &w_psi + &s_zg_j * &w_g_psi;
    let zeta_on_g = &s_zp_j * &w_psi_g + &s_zg_j * &w_g;

    let (s_tp_i, s_zp_i, s_tg_i, s_zg_i) = (
        fi.s_theta_psi(),
        fi.s_zeta_psi(),
        fi.s_theta_g(),
        fi.s_zeta_g(),
    );
    let out = AbBlocks {
        a_theta: &theta_on_psi * &s_tp_i + &theta_on_g * &s_tg_i,
        a_zeta: &theta_on_psi * &s_zp_i + &theta_on_g * &s_zg_i,
        b_theta: &zeta_on_psi * &s_tp_i + &zeta_on_g * &s_tg_i,
        b_zeta: &zeta_on_psi * &s_zp_i + &zeta_on_g * &s_zg_i,
    };
    let (p, di, dj) = (bundle.p(), fi.d(), fj.d());
    if out.a_theta.shape() != (p, p)
        || out.a_zeta.shape() != (p, di)
        || out.b_theta.shape() != (dj, p)
        || out.b_zeta.shape() != (dj, di)
    {
        return Err(Error::Invariant(format!(
            "A/B block shapes for group {}, pair ({},{})",
            k + 1,
            i + 1,
            j + 1
        )));
    }
    Ok(out)
}

/// `C_{k,i}` on the full `(theta, zeta_list)` coordinates and its condensed
/// form with the all-zero columns dropped, acting on `(theta, zeta_ik)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CBlocks {
    pub full: DMatrix<f64>,
    pub condensed: DMatrix<f64>,
}

pub fn build_c(
    bundle: &SummaryBundle,
    weights: &WeightBlocks,
    k: usize,
    i: usize,
) -> Result<CBlocks> {
    let o = &bundle.offsets;
    let p = o.p;
    let dim = o.dim();
    let d_ik = o.d_jk[k][i];
    let col_i = p + o.block_start[k][i];
    let mut full = DMatrix::zeros(dim, dim);
    let mut a_theta = DMatrix::zeros(p, p);
    let mut a_zeta = DMatrix::zeros(p, d_ik);
    for j in 0..o.n_blocks() {
        let ab = build_ab(bundle, weights, k, i, j)?;
        a_theta += &ab.a_theta;
        a_zeta += &ab.a_zeta;
        let row_j = p + o.block_start[k][j];
        let d_jk = o.d_jk[k][j];
        full.view_mut((row_j, 0), (d_jk, p)).copy_from(&ab.b_theta);
        full.view_mut((row_j, col_i), (d_jk, d_ik)).copy_from(&ab.b_zeta);
    }
    full.view_mut((0, 0), (p, p)).copy_from(&a_theta);
    full.view_mut((0, col_i), (p, d_ik)).copy_from(&a_zeta);

    let mut condensed = DMatrix::zeros(dim, p + d_ik);
    condensed.columns_mut(0, p).copy_from(&full.columns(0, p));
    condensed
        .columns_mut(p, d_ik)
        .copy_from(&full.columns(col_i, d_ik));
    Ok(CBlocks { full, condensed })
}
