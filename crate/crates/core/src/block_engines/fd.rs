use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Central-difference Jacobian of `f` at `x` with step
/// `rel_step * max(1, |x_c|)`. Steps that would leave the parameter domain
/// are halved until both stencil points are admissible.
pub(crate) fn central_jacobian<F, D>(
    x: &DVector<f64>,
    rel_step: f64,
    in_domain: D,
    mut f: F,
) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    D: Fn(&DVector<f64>) -> bool,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for c in 0..n {
        let mut h = rel_step * x[c].abs().max(1.0);
        let mut plus = x.clone();
        let mut minus = x.clone();
        let mut tries = 0;
        loop {
            plus[c] = x[c] + h;
            minus[c] = x[c] - h;
            if in_domain(&plus) && in_domain(&minus) {
                break;
            }
            h *= 0.5;
            tries += 1;
            if tries > 60 {
                return Err(Error::NumericDomain(format!(
                    "no admissible finite-difference step for parameter {c}"
                )));
            }
        }
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        cols.push((fp - fm) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, n, |r, c| cols[c][r]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_of_quadratic() {
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let jac = central_jacobian(&x, 1e-5, |_| true, |v| {
            Ok(DVector::from_vec(vec![v[0] * v[0], v[0] * v[1]]))
        })
        .unwrap();
        assert!((jac[(0, 0)] - 2.0).abs() < 1e-8);
        assert!((jac[(1, 0)] + 2.0).abs() < 1e-8);
        assert!((jac[(1, 1)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn step_shrinks_near_boundary() {
        let x = DVector::from_vec(vec![1e-9]);
        let mut seen = Vec::new();
        let jac = central_jacobian(&x, 1e-5, |v| v[0] > 0.0, |v| {
            seen.push(v[0]);
            Ok(DVector::from_vec(vec![3.0 * v[0] + v[0] * v[0]]))
        })
        .unwrap();
        assert!(seen.iter().all(|&v| v > 0.0));
        assert!((jac[(0, 0)] - 3.0).abs() < 1e-8);
    }
}
