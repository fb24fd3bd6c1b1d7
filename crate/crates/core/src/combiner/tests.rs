use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::block_engines::{NuisanceSpec, WorkingStructure};
use crate::linalg;
use crate::partition::{make_plan, GroupStrategy};
use crate::testutil::fitted_bundle;

/// Naive global layout: all `psi` rows (block (j,k) at `(j + kJ) p`), then
/// all `g` rows stacked `j` fast, `k` slow. Returns `tau_i` for every subject.
fn dense_taus(bundle: &SummaryBundle) -> Vec<DVector<f64>> {
    let plan = &bundle.plan;
    let (jn, kn) = (plan.n_blocks(), plan.n_groups());
    let p = bundle.p();
    let d_total: usize = bundle.fits.iter().map(|f| f.d()).sum();
    let dim = jn * kn * p + d_total;
    let group_of = plan.group_of_subject();
    let mut taus = Vec::new();
    for (i, &k) in group_of.iter().enumerate() {
        let row = plan.group_members[k].iter().position(|&s| s == i).unwrap();
        let mut tau = DVector::zeros(dim);
        let mut g_at = jn * kn * p;
        for kk in 0..kn {
            for j in 0..jn {
                let f = bundle.fit(j, kk);
                if kk == k {
                    for c in 0..p {
                        tau[(j + kk * jn) * p + c] = f.scores[(row, c)];
                    }
                    for c in 0..f.d() {
                        tau[g_at + c] = f.scores[(row, p + c)];
                    }
                }
                g_at += f.d();
            }
        }
        taus.push(tau);
    }
    taus
}

fn dense_vhat(bundle: &SummaryBundle) -> DMatrix<f64> {
    let taus = dense_taus(bundle);
    let dim = taus[0].len();
    let mut v = DMatrix::zeros(dim, dim);
    for t in &taus {
        v += t * t.transpose();
    }
    v / taus.len() as f64
}

/// Dense stacked sensitivity in the same global layout, weighted `n_k / N`.
fn dense_s(bundle: &SummaryBundle) -> DMatrix<f64> {
    let plan = &bundle.plan;
    let (jn, kn) = (plan.n_blocks(), plan.n_groups());
    let p = bundle.p();
    let d_total: usize = bundle.fits.iter().map(|f| f.d()).sum();
    let rows = jn * kn * p + d_total;
    let mut s = DMatrix::zeros(rows, p + d_total);
    let mut z_at = 0;
    for k in 0..kn {
        let w = plan.group_members[k].len() as f64 / plan.n_subjects() as f64;
        for j in 0..jn {
            let f = bundle.fit(j, k);
            let d = f.d();
            let r_psi = (j + k * jn) * p;
            let r_g = jn * kn * p + z_at;
            for a in 0..p {
                for b in 0..p {
                    s[(r_psi + a, b)] = w * f.sensitivity[(a, b)];
                }
                for b in 0..d {
                    s[(r_psi + a, p + z_at + b)] = w * f.sensitivity[(a, p + b)];
                }
            }
            for a in 0..d {
                for b in 0..p {
                    s[(r_g + a, b)] = w * f.sensitivity[(p + a, b)];
                }
                for b in 0..d {
                    s[(r_g + a, p + z_at + b)] = w * f.sensitivity[(p + a, p + b)];
                }
            }
            z_at += d;
        }
    }
    s
}

fn c_sum(bundle: &SummaryBundle, weights: &WeightBlocks) -> DMatrix<f64> {
    let o = &bundle.offsets;
    let n = bundle.n_subjects() as f64;
    let mut h = DMatrix::zeros(o.dim(), o.dim());
    for k in 0..o.n_groups() {
        let nk = bundle.plan.group_members[k].len() as f64;
        for i in 0..o.n_blocks() {
            h += build_c(bundle, weights, k, i).unwrap().full * (nk * nk);
        }
    }
    h / (n * n)
}

fn weights_of(bundle: &SummaryBundle) -> WeightBlocks {
    invert_vhat(assemble_vhat(bundle).unwrap(), &bundle.offsets).unwrap()
}

#[test]
fn offsets_follow_stacking_rule() {
    let o = Offsets::new(3, vec![vec![2, 1, 2], vec![1, 2, 2]]);
    assert_eq!(o.block_start[0], vec![0, 2, 3]);
    assert_eq!(o.block_start[1], vec![5, 6, 8]);
    assert_eq!(o.group_start, vec![0, 5]);
    assert_eq!(o.d_k, vec![5, 5]);
    assert_eq!(o.d, 10);
    assert_eq!(o.local_dim(1), 9 + 5);
    assert_eq!(o.psi_global_start(2, 1), (2 + 3) * 3);
}

#[test]
fn vhat_matches_dense_brute_force() {
    let (_, bundle) = fitted_bundle(40, 8, 2, 2, 2, NuisanceSpec::GeeAr1, 1);
    let dense = dense_vhat(&bundle);
    let blocks = assemble_vhat(&bundle).unwrap();
    let o = &bundle.offsets;
    let (jn, p) = (o.n_blocks(), o.p);
    // map local group rows to global rows
    let global_rows = |k: usize| -> Vec<usize> {
        let mut r: Vec<usize> = (0..jn * p).map(|a| k * jn * p + a).collect();
        let g0 = jn * o.n_groups() * p + o.group_start[k];
        r.extend((0..o.d_k[k]).map(|a| g0 + a));
        r
    };
    let mut covered = DMatrix::<bool>::from_element(dense.nrows(), dense.ncols(), false);
    for (k, vk) in blocks.iter().enumerate() {
        let rows = global_rows(k);
        for (a, &ra) in rows.iter().enumerate() {
            for (b, &rb) in rows.iter().enumerate() {
                assert!((vk[(a, b)] - dense[(ra, rb)]).abs() <= 1e-12 * dense[(ra, ra)].abs().max(1.0));
                covered[(ra, rb)] = true;
            }
        }
    }
    for r in 0..dense.nrows() {
        for c in 0..dense.ncols() {
            if !covered[(r, c)] {
                assert_eq!(dense[(r, c)], 0.0, "cross-group entry ({r},{c})");
            }
        }
    }
}

#[test]
fn vhat_of_zero_scores_is_zero() {
    let (_, mut bundle) = fitted_bundle(30, 4, 1, 1, 1, NuisanceSpec::GeeAr1, 2);
    bundle.fits[0].scores.fill(0.0);
    assert_eq!(assemble_vhat(&bundle).unwrap()[0].norm(), 0.0);
}

#[test]
fn vhat_two_subjects_unit_scores() {
    let (_, mut bundle) = fitted_bundle(30, 4, 1, 1, 1, NuisanceSpec::GeeIndependence, 3);
    bundle.plan.group_members = vec![vec![0, 1]];
    let f = &mut bundle.fits[0];
    f.scores = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
    let v = assemble_vhat(&bundle).unwrap();
    assert_eq!(v[0][(0, 0)], 1.0);
}

#[test]
fn hand_inverse_of_two_by_two() {
    let offsets = Offsets::new(1, vec![vec![1]]);
    let v = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let w = invert_vhat(vec![v], &offsets).unwrap();
    let expect = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0]);
    assert!((&w.w[0] - expect).amax() < 1e-14);
    let id = invert_vhat(vec![DMatrix::identity(2, 2)], &offsets).unwrap();
    assert_eq!(id.w[0], DMatrix::identity(2, 2));
}

#[test]
fn indefinite_covariance_is_a_hard_error() {
    let offsets = Offsets::new(1, vec![vec![1]]);
    let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(matches!(
        invert_vhat(vec![v], &offsets),
        Err(Error::SingularWeight { group: 1, .. })
    ));
}

#[test]
fn near_singular_covariance_gets_a_ridge() {
    let offsets = Offsets::new(1, vec![vec![1]]);
    let v = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let w = invert_vhat(vec![v], &offsets).unwrap();
    assert_eq!(w.ridged, vec![true]);
    assert!(linalg::all_finite(&w.w[0]));
}

proptest! {
    #[test]
    fn weight_inverts_random_pd(seed in 0u64..500, dim in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let v = &g * g.transpose() + DMatrix::identity(dim, dim) * 0.5;
        let offsets = Offsets::new(dim - 1, vec![vec![1]]);
        let w = invert_vhat(vec![v.clone()], &offsets).unwrap();
        prop_assert!((&w.w[0] * &v - DMatrix::identity(dim, dim)).amax() < 1e-10);
        prop_assert!((&w.w[0] - w.w[0].transpose()).amax() == 0.0);
    }
}

#[test]
fn subset_scalar_case_and_tiling() {
    let offsets = Offsets::new(1, vec![vec![1, 1]]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = DMatrix::<f64>::from_fn(4, 4, |_, _| StandardNormal.sample(&mut rng));
    let v = &g * g.transpose() + DMatrix::identity(4, 4);
    let w = invert_vhat(vec![v], &offsets).unwrap();
    assert_eq!(w.subset(0, 0, 0, Part::PsiPsi).unwrap()[(0, 0)], w.w[0][(0, 0)]);

    let (_, bundle) = fitted_bundle(60, 9, 2, 3, 2, NuisanceSpec::GeeAr1, 4);
    let w = weights_of(&bundle);
    let p = bundle.p();
    for k in 0..2 {
        let mut tiled = DMatrix::zeros(3 * p, 3 * p);
        for i in 0..3 {
            for j in 0..3 {
                tiled
                    .view_mut((i * p, j * p), (p, p))
                    .copy_from(&w.subset(i, j, k, Part::PsiPsi).unwrap());
            }
            let gg = w.subset(i, i, k, Part::GG).unwrap();
            assert_eq!(gg, gg.transpose());
        }
        assert_eq!(tiled, w.psi_block(k));
    }
    assert!(matches!(w.subset(3, 0, 0, Part::PsiPsi), Err(Error::Index(_))));
}

#[test]
fn summed_c_blocks_equal_dense_information() {
    for (n, m, jn, kn, spec, seed) in [
        (120, 9, 3, 2, NuisanceSpec::GeeAr1, 11),
        (90, 6, 2, 3, NuisanceSpec::gee(WorkingStructure::Exchangeable), 12),
        (80, 6, 3, 1, NuisanceSpec::ClAr1, 13),
        (100, 4, 1, 3, NuisanceSpec::GeeIndependence, 14),
    ] {
        let (_, bundle) = fitted_bundle(n, m, 3, jn, kn, spec, seed);
        let w = weights_of(&bundle);
        let s = dense_s(&bundle);
        let vinv = dense_vhat(&bundle).try_inverse().unwrap();
        let oracle = s.transpose() * vinv * &s;
        let err = linalg::rel_frobenius(&c_sum(&bundle, &w), &oracle);
        assert!(err <= 1e-8, "{spec:?}: {err:e}");
    }
}

#[test]
fn condensed_c_drops_only_zero_columns() {
    let (_, bundle) = fitted_bundle(90, 8, 2, 2, 2, NuisanceSpec::GeeAr1, 15);
    let w = weights_of(&bundle);
    let o = &bundle.offsets;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for k in 0..2 {
        for i in 0..2 {
            let c = build_c(&bundle, &w, k, i).unwrap();
            assert_eq!(c.condensed.shape(), (o.dim(), o.p + o.d_jk[k][i]));
            let x = DVector::<f64>::from_fn(o.dim(), |_, _| StandardNormal.sample(&mut rng));
            let r = o.zeta_range(i, k);
            let mut short = DVector::zeros(o.p + r.len());
            short.rows_mut(0, o.p).copy_from(&x.rows(0, o.p));
            short.rows_mut(o.p, r.len()).copy_from(&x.rows(o.p + r.start, r.len()));
            let lhs = &c.full * &x;
            let rhs = &c.condensed * short;
            assert!((&lhs - &rhs).amax() <= 1e-12 * lhs.amax().max(1.0));
        }
    }
}

#[test]
fn single_block_c_is_whole_information() {
    let (_, bundle) = fitted_bundle(60, 5, 2, 1, 1, NuisanceSpec::GeeAr1, 17);
    let w = weights_of(&bundle);
    let s = bundle.fit(0, 0).sensitivity.clone();
    let c = build_c(&bundle, &w, 0, 0).unwrap();
    let oracle = s.transpose() * &w.w[0] * &s;
    assert!(linalg::rel_frobenius(&c.full, &oracle) < 1e-12);
}

#[test]
fn identity_weight_scalar_expansion() {
    let (_, bundle) = fitted_bundle(60, 6, 1, 2, 1, NuisanceSpec::GeeIndependence, 18);
    let offsets = bundle.offsets.clone();
    let dim = offsets.local_dim(0);
    let w = WeightBlocks {
        vhat: vec![DMatrix::identity(dim, dim)],
        w: vec![DMatrix::identity(dim, dim)],
        ridged: vec![false],
        offsets,
    };
    let f = bundle.fit(1, 0);
    let ab = build_ab(&bundle, &w, 0, 1, 1).unwrap();
    let s = &f.sensitivity;
    let expect = s[(0, 0)] * s[(0, 0)] + s[(1, 0)] * s[(1, 0)];
    assert!((ab.a_theta[(0, 0)] - expect).abs() < 1e-12 * expect.abs());
    let cross = build_ab(&bundle, &w, 0, 0, 1).unwrap();
    assert_eq!(cross.a_theta[(0, 0)], 0.0);
}

#[test]
fn single_block_combination_reproduces_block_estimates() {
    for spec in [NuisanceSpec::GeeAr1, NuisanceSpec::ClAr1] {
        let (_, bundle) = fitted_bundle(80, 6, 3, 1, 1, spec, 19);
        let fit = combine(&bundle).unwrap();
        let block = bundle.fit(0, 0);
        assert!((&fit.theta - &block.theta).amax() <= 1e-8);
        assert!((&fit.zeta - &block.zeta).amax() <= 1e-8);
    }
}

/// Two blocks whose scores are orthogonal across subjects, so the combined
/// estimate is the inverse-variance weighted mean.
#[test]
fn uncorrelated_blocks_give_inverse_variance_weighting() {
    let plan = make_plan(4, 4, 2, 1, GroupStrategy::Contiguous, 0).unwrap();
    let mk = |j: usize, theta: f64, s: f64, scores: [f64; 4]| BlockFit {
        j,
        k: 0,
        spec: NuisanceSpec::GeeIndependence,
        theta: DVector::from_vec(vec![theta]),
        zeta: DVector::zeros(0),
        scores: DMatrix::from_column_slice(4, 1, &scores),
        sensitivity: DMatrix::from_element(1, 1, s),
        converged: true,
        iterations: 1,
        final_norm: 0.0,
        rho_clamped: false,
    };
    let f1 = mk(0, 1.0, 2.0, [1.0, -1.0, 1.0, -1.0]);
    let f2 = mk(1, 3.0, 0.5, [2.0, 2.0, -2.0, -2.0]);
    let bundle = SummaryBundle::new(plan, vec![f1, f2]).unwrap();
    let fit = combine(&bundle).unwrap();
    let (v1, v2) = (1.0, 4.0);
    let (w1, w2) = (2.0_f64.powi(2) / v1, 0.5_f64.powi(2) / v2);
    let expect = (w1 * 1.0 + w2 * 3.0) / (w1 + w2);
    assert!((fit.theta[0] - expect).abs() < 1e-12);
}

#[test]
fn combine_is_deterministic_and_godambe_psd() {
    let (_, bundle) = fitted_bundle(150, 8, 3, 2, 2, NuisanceSpec::GeeAr1, 20);
    let a = combine(&bundle).unwrap();
    let b = combine(&bundle).unwrap();
    assert_eq!(a, b);
    let min = linalg::min_eigenvalue(&a.godambe);
    assert!(min >= -1e-10 * a.godambe.trace());
    assert!(a.cov.diagonal().iter().take(3).all(|&v| v > 0.0));
    assert_eq!(a.diagnostics.plan_hash.len(), 64);
}

#[test]
fn bundle_rejects_incomplete_grid() {
    let (_, bundle) = fitted_bundle(60, 6, 2, 2, 1, NuisanceSpec::GeeAr1, 21);
    let mut fits = bundle.fits.clone();
    fits.pop();
    assert!(SummaryBundle::new(bundle.plan.clone(), fits).is_err());
}

#[test]
fn archive_round_trip_is_exact() {
    let (_, bundle) = fitted_bundle(50, 6, 2, 2, 2, NuisanceSpec::ClAr1, 22);
    let text = archive::render_archive(&bundle.plan, &bundle.theta_names, &bundle.fits);
    let part = archive::parse_archive(&text).unwrap();
    let back = merge_parts(vec![part]).unwrap();
    assert_eq!(back, bundle);
}

#[test]
fn per_group_archives_merge_back() {
    let (_, bundle) = fitted_bundle(60, 6, 2, 2, 3, NuisanceSpec::GeeAr1, 23);
    let parts: Vec<ArchivePart> = (0..3).rev().map(|k| bundle.group_part(k)).collect();
    let merged = merge_parts(parts).unwrap();
    assert_eq!(combine(&merged).unwrap(), combine(&bundle).unwrap());
}

#[test]
fn merge_reports_mismatches() {
    let (_, a) = fitted_bundle(60, 6, 2, 2, 2, NuisanceSpec::GeeAr1, 24);
    let (_, b) = fitted_bundle(60, 6, 3, 2, 2, NuisanceSpec::GeeAr1, 24);
    let err = merge_parts(vec![a.group_part(0), b.group_part(1)]).unwrap_err();
    assert!(matches!(&err, Error::Merge(m) if m.contains("p (2 vs 3)")), "{err}");

    let (_, c) = fitted_bundle(60, 6, 2, 2, 2, NuisanceSpec::GeeAr1, 25);
    let err = merge_parts(vec![a.group_part(0), c.group_part(1)]).unwrap_err();
    assert!(matches!(&err, Error::Merge(m) if m.contains("seed")), "{err}");

    let err = merge_parts(vec![a.group_part(0), a.group_part(0)]).unwrap_err();
    assert!(matches!(err, Error::Merge(_)));
    let err = merge_parts(vec![a.group_part(0)]).unwrap_err();
    assert!(matches!(&err, Error::Merge(m) if m.contains("missing")));
}
