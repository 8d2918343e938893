use crate::error::{check_len, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Marginal => "marginal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `(re, im)` pairs sorted by real part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub classification: Stability,
    pub min_abs: f64,
    pub tolerance: f64,
}

/// Classifies the linearized flow `dΔα/dt = −M Δα` by the real parts of the
/// eigenvalues of `M`: all above `tolerance` is stable, any below
/// `−tolerance` is unstable, anything else is marginal.
pub fn stability_classify(m: &DMatrix<f64>, tolerance: f64) -> Result<StabilityReport> {
    check_len("square matrix", m.nrows(), m.ncols())?;
    let mut eigenvalues: Vec<(f64, f64)> = if m == &m.transpose() {
        crate::linalg::sym_eigenvalues(m).into_iter().map(|v| (v, 0.0)).collect()
    } else {
        m.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect()
    };
    eigenvalues.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let classification = if eigenvalues.iter().any(|e| e.0 < -tolerance) {
        Stability::Unstable
    } else if eigenvalues.iter().all(|e| e.0 > tolerance) {
        Stability::Stable
    } else {
        Stability::Marginal
    };
    let min_abs = eigenvalues.iter().map(|e| e.0.hypot(e.1)).fold(f64::INFINITY, f64::min);
    Ok(StabilityReport { eigenvalues, classification, min_abs, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_matrices() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0]);
        let r = stability_classify(&a, 1e-9).unwrap();
        assert_eq!(r.classification, Stability::Stable);
        let want = [2.0 - 2f64.sqrt(), 1.0, 2.0 + 2f64.sqrt()];
        for (e, w) in r.eigenvalues.iter().zip(want) {
            assert!((e.0 - w).abs() < 1e-12);
        }
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(stability_classify(&d, 1e-9).unwrap().classification, Stability::Unstable);
        let ones = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(stability_classify(&ones, 1e-9).unwrap().classification, Stability::Marginal);
    }

    #[test]
    fn rotation_is_marginal() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let rep = stability_classify(&r, 1e-9).unwrap();
        assert_eq!(rep.classification, Stability::Marginal);
        assert!((rep.eigenvalues[0].1.abs() - 1.0).abs() < 1e-12);
    }
}
