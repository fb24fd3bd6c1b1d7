//! Working correlation matrices `R(rho)` applied through their closed-form
//! inverses, so a solve costs O(m) instead of O(m^3).

use super::WorkingStructure;

#[derive(Debug, Clone, Copy)]
pub(crate) struct WorkingCorrelation {
    pub structure: WorkingStructure,
    pub rho: f64,
}

impl WorkingCorrelation {
    pub fn new(structure: WorkingStructure, rho: f64) -> Self {
        Self { structure, rho }
    }

    /// `out = R^{-1} v`.
    pub fn apply_inverse(&self, v: &[f64], out: &mut [f64]) {
        let m = v.len();
        debug_assert_eq!(out.len(), m);
        let rho = self.rho;
        match self.structure {
            WorkingStructure::Independence => out.copy_from_slice(v),
            _ if m == 1 => out.copy_from_slice(v),
            WorkingStructure::Ar1 => {
                // tridiagonal inverse: diag (1, 1+rho^2, ..., 1+rho^2, 1), off-diagonal -rho
                let scale = 1.0 / (1.0 - rho * rho);
                let inner = 1.0 + rho * rho;
                out[0] = (v[0] - rho * v[1]) * scale;
                for t in 1..m - 1 {
                    out[t] = (inner * v[t] - rho * (v[t - 1] + v[t + 1])) * scale;
                }
                out[m - 1] = (v[m - 1] - rho * v[m - 2]) * scale;
            }
            WorkingStructure::Exchangeable => {
                // Sherman-Morrison on (1-rho) I + rho 11'
                let sum: f64 = v.iter().sum();
                let shift = rho / (1.0 + (m as f64 - 1.0) * rho) * sum;
                let scale = 1.0 / (1.0 - rho);
                for t in 0..m {
                    out[t] = (v[t] - shift) * scale;
                }
            }
        }
    }

    /// Dense `R`, for tests.
    #[cfg(test)]
    pub fn dense(&self, m: usize) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(m, m, |a, b| {
            if a == b {
                return 1.0;
            }
            match self.structure {
                WorkingStructure::Independence => 0.0,
                WorkingStructure::Ar1 => self.rho.powi((a as i32 - b as i32).abs()),
                WorkingStructure::Exchangeable => self.rho,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn closed_form_inverse_matches_dense() {
        for structure in [
            WorkingStructure::Ar1,
            WorkingStructure::Exchangeable,
            WorkingStructure::Independence,
        ] {
            for &m in &[2usize, 3, 7] {
                let w = WorkingCorrelation::new(structure, 0.6);
                let v: Vec<f64> = (0..m).map(|t| (t as f64 * 1.3).sin() + 0.2).collect();
                let mut out = vec![0.0; m];
                w.apply_inverse(&v, &mut out);
                let dense = w.dense(m).try_inverse().unwrap() * DVector::from_column_slice(&v);
                for t in 0..m {
                    assert!((out[t] - dense[t]).abs() < 1e-12, "{structure:?} m={m}");
                }
            }
        }
    }
}
