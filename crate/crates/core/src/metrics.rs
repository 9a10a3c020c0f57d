//! Scalar observables of a configuration: modality gap, margin,
//! per-dimension gap, and uniformity.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::geometry::{FeatureMatrix, ParallelLift};

/// Center-distance report. `gamma_lower` is the 2*gamma lower bound when the
/// configuration came from a parallel lift.
#[derive(Debug, Clone)]
pub struct GapReport {
    pub delta: f64,
    pub gamma_lower: Option<f64>,
    pub per_dim: Array1<f64>,
}

/// Modality gap: Euclidean distance between the two row means, plus the
/// per-dimension center difference.
pub fn modality_gap(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<GapReport> {
    if x.n() != y.n() || x.d() != y.d() {
        return Err(Error::invalid("y", "shape mismatch with x"));
    }
    let cx = x.as_array().mean_axis(Axis(0)).unwrap();
    let cy = y.as_array().mean_axis(Axis(0)).unwrap();
    let per_dim = &cx - &cy;
    let delta = per_dim.dot(&per_dim).sqrt();
    Ok(GapReport { delta, gamma_lower: None, per_dim })
}

/// Gap report for a lifted pair; attaches the `2 gamma` lower bound.
pub fn gap_of_lift(lift: &ParallelLift) -> Result<GapReport> {
    let (x, y) = lift.lift()?;
    let mut report = modality_gap(&x, &y)?;
    report.gamma_lower = Some(2.0 * lift.gamma);
    Ok(report)
}

/// Margin `alpha(Z) = min_{i != j} min(Z_ii - Z_ij, Z_jj - Z_ij)`.
/// Positive margin means every pair is strictly best-matched to its partner.
pub fn margin(z: &ArrayView2<f64>) -> Result<f64> {
    let (r, c) = z.dim();
    if r != c {
        return Err(Error::invalid("z", format!("expected square matrix, got {r}x{c}")));
    }
    if r < 2 {
        return Err(Error::UndefinedMargin);
    }
    let mut best = f64::INFINITY;
    for i in 0..r {
        for j in 0..r {
            if i != j {
                let v = (z[[i, i]] - z[[i, j]]).min(z[[j, j]] - z[[i, j]]);
                if v < best {
                    best = v;
                }
            }
        }
    }
    Ok(best)
}

/// Per-dimension gap of the designated parallel (last) coordinate:
/// `gamma_X - gamma_Y = 2 gamma`.
pub fn per_dim_gap(lift: &ParallelLift) -> f64 {
    2.0 * lift.gamma
}

/// Uniformity: negated quadratic Wasserstein distance between the Gaussian
/// fitted to the 2n stacked embeddings and the isotropic reference N(0, I/m),
/// `-sqrt(|mu|^2 + 1 + tr(S) - (2/sqrt(m)) tr(S^{1/2}))`.
///
/// The covariance uses the population (1/2n) normalization; its square-root
/// trace comes from a symmetric eigendecomposition with negative eigenvalues
/// clamped to zero.
pub fn uniformity(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    if x.d() != y.d() {
        return Err(Error::invalid("y", "dimension mismatch with x"));
    }
    let m = x.d();
    if m < 2 {
        return Err(Error::invalid("x", "need at least two feature dimensions"));
    }
    let total = x.n() + y.n();
    let mut mean = Array1::<f64>::zeros(m);
    for row in x.as_array().outer_iter().chain(y.as_array().outer_iter()) {
        mean += &row;
    }
    mean.mapv_inplace(|v| v / total as f64);

    let mut cov = Array2::<f64>::zeros((m, m));
    for row in x.as_array().outer_iter().chain(y.as_array().outer_iter()) {
        let centered = &row - &mean;
        for i in 0..m {
            let ci = centered[i];
            for j in i..m {
                cov[[i, j]] += ci * centered[j];
            }
        }
    }
    for i in 0..m {
        for j in i..m {
            cov[[i, j]] /= total as f64;
            cov[[j, i]] = cov[[i, j]];
        }
    }

    let trace: f64 = (0..m).map(|i| cov[[i, i]]).sum();
    let eigs = symmetric_eigenvalues(cov)?;
    let sqrt_trace: f64 = eigs.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let mu2 = mean.dot(&mean);
    let w2sq = mu2 + 1.0 + trace - 2.0 / (m as f64).sqrt() * sqrt_trace;
    Ok(-w2sq.max(0.0).sqrt())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(mut a: Array2<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::invalid("a", "expected square matrix"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let tol = 1e-15 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]].abs();
            }
        }
        if off <= tol {
            return Ok((0..n).map(|i| a[[i, i]]).collect());
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= tol / (n * n) as f64 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(Error::Numeric(
        "Jacobi eigenvalue iteration did not converge".to_string(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn constant_features(n: usize, v: &[f64]) -> FeatureMatrix {
        let mut rows = Array2::zeros((n, v.len()));
        for i in 0..n {
            for (j, &x) in v.iter().enumerate() {
                rows[[i, j]] = x;
            }
        }
        FeatureMatrix::new(rows).unwrap()
    }

    #[test]
    fn gap_of_antipodal_centers() {
        let x = constant_features(3, &[1.0, 0.0]);
        let y = constant_features(3, &[-1.0, 0.0]);
        let r = modality_gap(&x, &y).unwrap();
        assert_abs_diff_eq!(r.delta, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.per_dim.dot(&r.per_dim).sqrt(), r.delta, epsilon = 1e-15);
    }

    #[test]
    fn gap_of_identical_configurations_is_zero() {
        let x = geometry::sample_uniform_sphere(4, 3, 5).unwrap();
        let r = modality_gap(&x, &x).unwrap();
        assert_abs_diff_eq!(r.delta, 0.0, epsilon = 1e-300);
    }

    #[test]
    fn lift_gap_is_two_gamma() {
        let lift = geometry::init_etf(5, 6, 0.3).unwrap();
        let r = gap_of_lift(&lift).unwrap();
        assert_abs_diff_eq!(r.delta, 0.6, epsilon = 1e-12);
        assert_eq!(r.gamma_lower, Some(0.6));
    }

    #[test]
    fn margin_examples() {
        let z = Array2::<f64>::eye(3);
        assert_abs_diff_eq!(margin(&z.view()).unwrap(), 1.0, epsilon = 1e-15);
        let z = array![[0.9, 0.95], [0.1, 0.8]];
        assert_abs_diff_eq!(margin(&z.view()).unwrap(), -0.15, epsilon = 1e-15);
        let lift = geometry::init_etf(4, 4, 0.0).unwrap();
        let z = lift.correlation();
        assert_abs_diff_eq!(margin(&z.view()).unwrap(), 4.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn margin_needs_two_samples() {
        let z = array![[1.0]];
        assert!(matches!(margin(&z.view()), Err(Error::UndefinedMargin)));
    }

    #[test]
    fn per_dim_gap_is_odd_in_gamma() {
        for &g in &[0.0, 0.25, -0.4] {
            let lift = geometry::init_etf(3, 4, g).unwrap();
            assert_abs_diff_eq!(per_dim_gap(&lift), 2.0 * g, epsilon = 1e-15);
        }
    }

    #[test]
    fn uniformity_of_collapsed_embeddings() {
        // all embeddings the same unit vector: mu = v, cov = 0
        let x = constant_features(8, &[0.6, 0.8, 0.0]);
        let u = uniformity(&x, &x).unwrap();
        assert_abs_diff_eq!(u, -(2.0_f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn uniformity_zero_for_exact_isotropic_moments() {
        // rows of sqrt(1/m)-scaled orthonormal frame: mean 0, cov = I/m
        let m = 4;
        let mut rows = Array2::zeros((2 * m, m));
        for i in 0..m {
            rows[[2 * i, i]] = 1.0;
            rows[[2 * i + 1, i]] = -1.0;
        }
        let x = FeatureMatrix::new(rows).unwrap();
        let u = uniformity(&x, &x).unwrap();
        assert_abs_diff_eq!(u, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let mut e = symmetric_eigenvalues(a).unwrap();
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 3.0, epsilon = 1e-12);
    }
}
