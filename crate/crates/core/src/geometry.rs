//! Sphere sampling, structured initializers, tangent projection, and
//! renormalization for the Riemannian flow.
//!
//! Randomness contract: all draws go through ChaCha8 seeded with a user
//! `u64`. Independent matrices use independent ChaCha *streams* of the same
//! seed — stream 0 for the first modality, stream 1 for the second, stream
//! `2t`/`2t+1` for Monte Carlo trial `t`, and stream 2^32 + step for swap
//! masks. Reproducible bit-for-bit for a given (seed, stream).

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Stream index for swap-related draws; keeps them disjoint from matrix
/// draws for any realistic trial count.
pub const SWAP_STREAM_BASE: u64 = 1 << 32;

/// ChaCha8 generator for (seed, stream); the stream-splitting rule above.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// An n x d matrix whose rows are unit vectors (one embedding per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Array2<f64>,
}

impl FeatureMatrix {
    /// Wrap a matrix, checking that every row has unit norm to 1e-9.
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        for (i, row) in rows.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite { context: "FeatureMatrix row" });
            }
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "rows",
                    format!("row {i} has norm {norm}, expected 1"),
                ));
            }
        }
        Ok(FeatureMatrix { rows })
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }
}

/// Divide every row by its norm. Zero (or non-finite) rows are degenerate.
pub fn renormalize(rows: &Array2<f64>) -> Result<FeatureMatrix> {
    let mut out = rows.clone();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::Degenerate(format!(
                "row {i} has norm {norm}; cannot project to the sphere"
            )));
        }
        row.mapv_inplace(|v| v / norm);
    }
    FeatureMatrix::new(out)
}

/// Rows i.i.d. uniform on S^{d-1}: normalized standard normal vectors.
/// Deterministic for a given seed (stream 0).
pub fn sample_uniform_sphere(n: usize, d: usize, seed: u64) -> Result<FeatureMatrix> {
    sample_uniform_sphere_stream(n, d, seed, 0)
}

/// Same as [`sample_uniform_sphere`] with an explicit substream.
pub fn sample_uniform_sphere_stream(
    n: usize,
    d: usize,
    seed: u64,
    stream: u64,
) -> Result<FeatureMatrix> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one sample"));
    }
    if d < 2 {
        return Err(Error::invalid(
            "d",
            format!("sphere sampling requires d >= 2, got {d}"),
        ));
    }
    let mut rng = stream_rng(seed, stream);
    let mut rows = Array2::zeros((n, d));
    for mut row in rows.outer_iter_mut() {
        loop {
            let mut norm2: f64 = 0.0;
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
                norm2 += *v * *v;
            }
            if norm2.sqrt() > 1e-12 {
                let norm = norm2.sqrt();
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    FeatureMatrix::new(rows)
}

/// Two modalities at fixed polar angles +-theta0 with equally spaced points
/// on the d=3 cross-section circle. Returns (X, Y, u) where u is the first
/// row of the circulant cross-section gram, `u_i = cos(2 pi i / n)`.
///
/// The gram satisfies `<x_i, y_j> = sin^2(theta0) u_{i-j mod n} - cos^2(theta0)`.
/// theta0 = pi/2 is allowed: both modalities coincide on the equator.
pub fn init_bipolar_circulant(
    n: usize,
    theta0: f64,
) -> Result<(FeatureMatrix, FeatureMatrix, Array1<f64>)> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least two samples"));
    }
    if !(theta0 > 0.0 && theta0 <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::invalid(
            "theta0",
            format!("expected 0 < theta0 <= pi/2, got {theta0}"),
        ));
    }
    let (st, ct) = (theta0.sin(), theta0.cos());
    let mut x = Array2::zeros((n, 3));
    let mut y = Array2::zeros((n, 3));
    let mut u = Array1::zeros(n);
    for i in 0..n {
        let ang = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        x[[i, 0]] = st * ang.cos();
        x[[i, 1]] = st * ang.sin();
        x[[i, 2]] = ct;
        y[[i, 0]] = x[[i, 0]];
        y[[i, 1]] = x[[i, 1]];
        y[[i, 2]] = -ct;
        u[i] = ang.cos();
    }
    Ok((FeatureMatrix::new(x)?, FeatureMatrix::new(y)?, u))
}

/// Two parallel copies of one base embedding augmented with a shared last
/// coordinate +-gamma, so the modalities live on parallel hyperplanes.
#[derive(Debug, Clone)]
pub struct ParallelLift {
    pub base_x: FeatureMatrix,
    pub base_y: FeatureMatrix,
    pub gamma: f64,
}

impl ParallelLift {
    pub fn new(base_x: FeatureMatrix, base_y: FeatureMatrix, gamma: f64) -> Result<Self> {
        if base_x.n() != base_y.n() || base_x.d() != base_y.d() {
            return Err(Error::invalid("base_y", "shape mismatch with base_x"));
        }
        if !(-1.0..=1.0).contains(&gamma) {
            return Err(Error::invalid("gamma", format!("expected |gamma| <= 1, got {gamma}")));
        }
        Ok(ParallelLift { base_x, base_y, gamma })
    }

    /// Materialize the lifted unit rows `[sqrt(1-gamma^2) h ; +-gamma]`.
    pub fn lift(&self) -> Result<(FeatureMatrix, FeatureMatrix)> {
        let (n, d) = (self.base_x.n(), self.base_x.d());
        let scale = (1.0 - self.gamma * self.gamma).sqrt();
        let mut x = Array2::zeros((n, d + 1));
        let mut y = Array2::zeros((n, d + 1));
        for i in 0..n {
            for j in 0..d {
                x[[i, j]] = scale * self.base_x.as_array()[[i, j]];
                y[[i, j]] = scale * self.base_y.as_array()[[i, j]];
            }
            x[[i, d]] = self.gamma;
            y[[i, d]] = -self.gamma;
        }
        Ok((FeatureMatrix::new(x)?, FeatureMatrix::new(y)?))
    }

    /// Base correlation matrix `base_x base_y^T`.
    pub fn correlation(&self) -> Array2<f64> {
        self.base_x.as_array().dot(&self.base_y.as_array().t())
    }
}

/// Simplex configuration of n unit rows with gram 1 on the diagonal and
/// -1/(n-1) off it, embedded in d-1 coordinates and lifted at gamma0.
/// `d` is the dimension of the lifted rows, so d >= n is required.
///
/// Construction: orthonormalize the columns of sqrt(n/(n-1)) (I - 11^T/n)
/// (rank n-1) and express its rows in that basis.
pub fn init_etf(n: usize, d: usize, gamma0: f64) -> Result<ParallelLift> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least two samples"));
    }
    if d < n {
        return Err(Error::invalid(
            "d",
            format!("simplex of {n} points needs lifted dimension d >= n, got {d}"),
        ));
    }
    let nf = n as f64;
    let scale = (nf / (nf - 1.0)).sqrt();
    let mut s = Array2::from_elem((n, n), -scale / nf);
    for i in 0..n {
        s[[i, i]] += scale;
    }
    // modified Gram-Schmidt over the columns of s; rank is n-1
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(n - 1);
    for j in 0..n {
        let mut v = s.column(j).to_owned();
        for b in &basis {
            let proj = v.dot(b);
            v.scaled_add(-proj, b);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-10 {
            basis.push(v / norm);
        }
        if basis.len() == n - 1 {
            break;
        }
    }
    if basis.len() != n - 1 {
        return Err(Error::Numeric(format!(
            "simplex basis construction found rank {} != {}",
            basis.len(),
            n - 1
        )));
    }
    let mut base = Array2::zeros((n, d - 1));
    for i in 0..n {
        let row = s.row(i);
        for (k, b) in basis.iter().enumerate() {
            base[[i, k]] = row.dot(b);
        }
    }
    let base = renormalize(&base)?;
    ParallelLift::new(base.clone(), base, gamma0)
}

/// Negative tangent projection of a Euclidean gradient: row i of the result
/// is `-(I - x_i x_i^T) g_i`. Each output row is orthogonal to its input row.
pub fn riemannian_direction(x: &FeatureMatrix, euclid_grad: &Array2<f64>) -> Result<Array2<f64>> {
    if euclid_grad.dim() != x.as_array().dim() {
        return Err(Error::invalid("euclid_grad", "shape mismatch with features"));
    }
    let mut out = euclid_grad.clone();
    for (xrow, mut grow) in x.as_array().outer_iter().zip(out.outer_iter_mut()) {
        let radial = xrow.dot(&grow);
        for (g, &xv) in grow.iter_mut().zip(xrow.iter()) {
            *g = -(*g - radial * xv);
        }
    }
    Ok(out)
}

/// Apply a row permutation: row i of the result is row perm[i] of the input.
pub fn permute_rows(x: &FeatureMatrix, perm: &[usize]) -> Result<FeatureMatrix> {
    let n = x.n();
    if perm.len() != n {
        return Err(Error::invalid("perm", "length mismatch"));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::invalid("perm", "not a permutation"));
        }
        seen[p] = true;
    }
    let mut rows = Array2::zeros((n, x.d()));
    for (i, &p) in perm.iter().enumerate() {
        rows.row_mut(i).assign(&x.as_array().row(p));
    }
    FeatureMatrix::new(rows)
}
