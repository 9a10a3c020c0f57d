//! Symmetric contrastive cross-entropy loss, its exact gradient, and the
//! alignment functionals that drive the flow equations.
//!
//! The loss treats a square logit matrix `M` as a batch of paired targets:
//! row `i` and column `i` are each scored against the one-hot target `i`,
//! and the two cross-entropy terms are averaged over the batch.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

fn check_square_finite(m: &ArrayView2<f64>, context: &'static str) -> Result<usize> {
    let (r, c) = m.dim();
    if r != c || r == 0 {
        return Err(Error::invalid(
            "matrix",
            format!("expected nonempty square matrix, got {r}x{c}"),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context });
    }
    Ok(r)
}

/// Max-shifted log-sum-exp; stable for entries up to |x| ~ 700.
fn log_sum_exp(v: ArrayView1<f64>) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Symmetric cross-entropy loss: the mean of row-wise and column-wise CE
/// against the diagonal targets,
/// `(1/2n) sum_i [lse(M[:,i]) - M[i,i] + lse(M[i,:]) - M[i,i]]`.
pub fn sym_ce_loss(m: &ArrayView2<f64>) -> Result<f64> {
    let n = check_square_finite(m, "sym_ce_loss input")?;
    let mut total = 0.0;
    for i in 0..n {
        let col = m.index_axis(Axis(1), i);
        let row = m.index_axis(Axis(0), i);
        total += log_sum_exp(col) + log_sum_exp(row) - 2.0 * m[[i, i]];
    }
    Ok(total / (2.0 * n as f64))
}

fn softmax_rows(m: &ArrayView2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let row = m.index_axis(Axis(0), i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for j in 0..n {
            let e = (row[j] - mx).exp();
            out[[i, j]] = e;
            s += e;
        }
        for j in 0..n {
            out[[i, j]] /= s;
        }
    }
    out
}

fn softmax_cols(m: &ArrayView2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let mut out = Array2::zeros((n, n));
    for j in 0..n {
        let col = m.index_axis(Axis(1), j);
        let mx = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for i in 0..n {
            let e = (col[i] - mx).exp();
            out[[i, j]] = e;
            s += e;
        }
        for i in 0..n {
            out[[i, j]] /= s;
        }
    }
    out
}

/// Exact gradient of [`sym_ce_loss`]:
/// `(1/2n) (colSoftmax(M) + rowSoftmax(M)) - I/n`.
pub fn grad_loss(m: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let (p, q) = grad_loss_split(m)?;
    Ok(p + q)
}

/// The gradient split into its row-softmax part `P` (rows sum to zero) and
/// column-softmax part `Q` (columns sum to zero); `grad = P + Q`.
pub fn grad_loss_split(m: &ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = check_square_finite(m, "grad_loss input")?;
    let scale = 1.0 / (2.0 * n as f64);
    let mut p = softmax_rows(m);
    let mut q = softmax_cols(m);
    for i in 0..n {
        p[[i, i]] -= 1.0;
        q[[i, i]] -= 1.0;
    }
    p.mapv_inplace(|v| v * scale);
    q.mapv_inplace(|v| v * scale);
    Ok((p, q))
}

/// Alignment term `mu_i(z, a) = <z, e_i - softmax(a z)>` for a single row or
/// column `z` of a correlation matrix. `i` is zero-based.
pub fn mu(z: &ArrayView1<f64>, i: usize, a: f64) -> Result<f64> {
    if i >= z.len() {
        return Err(Error::IndexOutOfRange { index: i, len: z.len() });
    }
    if !(a >= 0.0) {
        return Err(Error::invalid("a", format!("expected a >= 0, got {a}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "mu input" });
    }
    let buf: Vec<f64> = z.iter().cloned().collect();
    Ok(mu_unchecked(&buf, i, a))
}

/// Single-pass evaluation of `z_i - <z, softmax(a z)>` with a max shift.
fn mu_unchecked(z: &[f64], i: usize, a: f64) -> f64 {
    let mx = z.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(a * v));
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for &v in z {
        let e = (a * v - mx).exp();
        s0 += e;
        s1 += v * e;
    }
    z[i] - s1 / s0
}

/// Alignment functional `g_a(Z) = -<Z, grad_loss(a Z)>`, evaluated as
/// `(1/2n) sum_i [mu_i(Z[:,i], a) + mu_i(Z[i,:], a)]`.
///
/// Positive when every pair is matched with positive margin; it drives both
/// the temperature and the gap flows.
pub fn g_align(z: &ArrayView2<f64>, a: f64) -> Result<f64> {
    let n = check_square_finite(z, "g_align input")?;
    if !(a >= 0.0) {
        return Err(Error::invalid("a", format!("expected a >= 0, got {a}")));
    }
    if z.iter().any(|v| v.abs() > 1.0 + 1e-9) {
        return Err(Error::invalid(
            "z",
            "correlation entries must lie in [-1, 1]".to_string(),
        ));
    }
    let mut total = 0.0;
    let mut buf = vec![0.0; n];
    for i in 0..n {
        for (k, v) in z.index_axis(Axis(1), i).iter().enumerate() {
            buf[k] = *v;
        }
        total += mu_unchecked(&buf, i, a);
        for (k, v) in z.index_axis(Axis(0), i).iter().enumerate() {
            buf[k] = *v;
        }
        total += mu_unchecked(&buf, i, a);
    }
    Ok(total / (2.0 * n as f64))
}

/// Precompiled alignment evaluator for a frozen correlation matrix.
///
/// Equal entries within a row or column are grouped once, so structured
/// matrices (for instance a simplex gram with two distinct values per row)
/// evaluate in O(u) per row instead of O(n), with `u` the number of distinct
/// values. Exact: grouping only merges bitwise-equal entries.
#[derive(Debug, Clone)]
pub struct FrozenAlignment {
    // per line (rows then, unless symmetric, columns): grouped (value, count)
    // plus the diagonal entry of that line
    lines: Vec<CompressedLine>,
    symmetric: bool,
    n: usize,
}

#[derive(Debug, Clone)]
struct CompressedLine {
    values: Vec<f64>,
    counts: Vec<f64>,
    diag: f64,
    max: f64,
}

impl CompressedLine {
    fn compress(line: &[f64], diag: f64) -> Self {
        let mut sorted = line.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut values = Vec::new();
        let mut counts = Vec::new();
        for v in sorted {
            match values.last() {
                Some(&last) if last == v => *counts.last_mut().unwrap() += 1.0,
                _ => {
                    values.push(v);
                    counts.push(1.0);
                }
            }
        }
        let max = values[0];
        CompressedLine { values, counts, diag, max }
    }

    fn mu(&self, a: f64) -> f64 {
        let shift = a * self.max;
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        for (&v, &c) in self.values.iter().zip(&self.counts) {
            let e = c * (a * v - shift).exp();
            s0 += e;
            s1 += v * e;
        }
        self.diag - s1 / s0
    }
}

impl FrozenAlignment {
    pub fn new(z: &ArrayView2<f64>) -> Result<Self> {
        let n = check_square_finite(z, "FrozenAlignment input")?;
        if z.iter().any(|v| v.abs() > 1.0 + 1e-9) {
            return Err(Error::invalid(
                "z",
                "correlation entries must lie in [-1, 1]".to_string(),
            ));
        }
        let symmetric = (0..n).all(|i| (i + 1..n).all(|j| z[[i, j]] == z[[j, i]]));
        let mut lines = Vec::with_capacity(if symmetric { n } else { 2 * n });
        let mut buf = vec![0.0; n];
        for i in 0..n {
            for (k, v) in z.index_axis(Axis(0), i).iter().enumerate() {
                buf[k] = *v;
            }
            lines.push(CompressedLine::compress(&buf, z[[i, i]]));
        }
        if !symmetric {
            for i in 0..n {
                for (k, v) in z.index_axis(Axis(1), i).iter().enumerate() {
                    buf[k] = *v;
                }
                lines.push(CompressedLine::compress(&buf, z[[i, i]]));
            }
        }
        Ok(FrozenAlignment { lines, symmetric, n })
    }

    /// Evaluate `g_align(Z, a)` for the frozen matrix.
    pub fn evaluate(&self, a: f64) -> f64 {
        let total: f64 = self.lines.iter().map(|l| l.mu(a)).sum();
        if self.symmetric {
            total / self.n as f64
        } else {
            total / (2.0 * self.n as f64)
        }
    }

    /// Symmetric CE loss of `a * Z` for the frozen matrix.
    pub fn loss(&self, a: f64) -> f64 {
        let total: f64 = self
            .lines
            .iter()
            .map(|l| {
                let shift = a * l.max;
                let s0: f64 = l
                    .values
                    .iter()
                    .zip(&l.counts)
                    .map(|(&v, &c)| c * (a * v - shift).exp())
                    .sum();
                shift + s0.ln() - a * l.diag
            })
            .sum();
        if self.symmetric {
            total / self.n as f64
        } else {
            total / (2.0 * self.n as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn loss_of_zero_matrix_is_log_n() {
        let m = Array2::<f64>::zeros((2, 2));
        let l = sym_ce_loss(&m.view()).unwrap();
        assert_abs_diff_eq!(l, 2.0_f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn single_sample_loss_is_zero() {
        let m = array![[5.0]];
        assert_abs_diff_eq!(sym_ce_loss(&m.view()).unwrap(), 0.0, epsilon = 1e-300);
    }

    #[test]
    fn diag_dominant_loss_matches_direct_summation() {
        let mut m = Array2::<f64>::zeros((3, 3));
        for i in 0..3 {
            m[[i, i]] = 10.0;
        }
        // direct evaluation of the definition, no shift
        let mut direct = 0.0;
        for i in 0..3 {
            let col: f64 = (0..3).map(|k| m[[k, i]].exp()).sum();
            let row: f64 = (0..3).map(|k| m[[i, k]].exp()).sum();
            direct += col.ln() - m[[i, i]] + row.ln() - m[[i, i]];
        }
        direct /= 6.0;
        let l = sym_ce_loss(&m.view()).unwrap();
        assert_abs_diff_eq!(l, direct, epsilon = 1e-13);
        // frozen high-precision value of log(exp(10) + 2) - 10
        assert_abs_diff_eq!(l, 9.07957374672444e-5, epsilon = 1e-16);
    }

    #[test]
    fn loss_rejects_non_finite() {
        let m = array![[0.0, f64::NAN], [0.0, 0.0]];
        assert!(matches!(
            sym_ce_loss(&m.view()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn loss_no_overflow_for_large_logits() {
        let m = array![[700.0, -700.0], [-700.0, 700.0]];
        let l = sym_ce_loss(&m.view()).unwrap();
        assert!(l.is_finite());
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_of_zero_matrix() {
        let m = Array2::<f64>::zeros((2, 2));
        let g = grad_loss(&m.view()).unwrap();
        let expect = array![[-0.25, 0.25], [0.25, -0.25]];
        for (a, b) in g.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn row_shift_leaves_row_softmax_part_unchanged() {
        let m = array![[0.3, -1.0, 0.2], [0.9, 0.1, -0.4], [0.0, 0.5, 0.7]];
        let (p0, _) = grad_loss_split(&m.view()).unwrap();
        let mut shifted = m.clone();
        for j in 0..3 {
            shifted[[1, j]] += 5.7;
        }
        let (p1, _) = grad_loss_split(&shifted.view()).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(p0[[1, j]], p1[[1, j]], epsilon = 1e-14);
        }
    }

    #[test]
    fn split_parts_have_zero_row_and_column_sums() {
        let m = array![[1.2, -0.7, 0.4], [0.0, 2.2, -1.5], [0.3, 0.8, -0.2]];
        let (p, q) = grad_loss_split(&m.view()).unwrap();
        for i in 0..3 {
            let rp: f64 = (0..3).map(|j| p[[i, j]]).sum();
            let cq: f64 = (0..3).map(|j| q[[j, i]]).sum();
            assert!(rp.abs() <= 1e-12, "row sum of P = {rp}");
            assert!(cq.abs() <= 1e-12, "column sum of Q = {cq}");
        }
        let total: f64 = grad_loss(&m.view()).unwrap().iter().sum();
        assert!(total.abs() <= 1e-12);
    }

    #[test]
    fn mu_uniform_softmax_case() {
        let z = array![1.0, 0.0];
        assert_abs_diff_eq!(mu(&z.view(), 0, 0.0).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mu_matches_closed_form_for_peaked_vector() {
        // z = alpha (e_1 - 1) with alpha = 1, n = 2, a = log 4:
        // mu = alpha (1 - p_1) with 1 - p_1 = (n-1) / (exp(a alpha) + n - 1)
        let z = array![0.0, -1.0];
        let a = 4.0_f64.ln();
        assert_abs_diff_eq!(mu(&z.view(), 0, a).unwrap(), 0.2, epsilon = 1e-14);
    }

    #[test]
    fn mu_nonnegative_when_entry_is_max() {
        let z = array![0.9, 0.9, -0.5, 0.2];
        for &a in &[0.0, 0.5, 3.0, 40.0] {
            assert!(mu(&z.view(), 0, a).unwrap() >= -1e-15);
        }
    }

    #[test]
    fn mu_index_out_of_range() {
        let z = array![1.0, 0.0];
        assert!(matches!(
            mu(&z.view(), 2, 1.0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn g_align_identity_matrix_values() {
        let z = Array2::<f64>::eye(2);
        let g = g_align(&z.view(), 1.0).unwrap();
        assert_abs_diff_eq!(g, 1.0 / (1.0 + std::f64::consts::E), epsilon = 1e-14);
        for n in [2usize, 5, 9] {
            let z = Array2::<f64>::eye(n);
            let g = g_align(&z.view(), 0.0).unwrap();
            assert_abs_diff_eq!(g, 1.0 - 1.0 / n as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn frozen_alignment_matches_generic_path() {
        let z = array![
            [1.0, -0.2, 0.1, -0.2],
            [-0.2, 1.0, -0.2, 0.1],
            [0.1, -0.2, 1.0, -0.2],
            [-0.2, 0.1, -0.2, 1.0]
        ];
        let frozen = FrozenAlignment::new(&z.view()).unwrap();
        for &a in &[0.0, 0.3, 2.0, 17.0, 80.0] {
            let generic = g_align(&z.view(), a).unwrap();
            assert_abs_diff_eq!(frozen.evaluate(a), generic, epsilon = 1e-13);
            let m = z.mapv(|v| a * v);
            assert_abs_diff_eq!(
                frozen.loss(a),
                sym_ce_loss(&m.view()).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn frozen_alignment_asymmetric_matches_generic() {
        let z = array![[0.9, -0.3, 0.2], [0.5, 0.8, -0.1], [-0.4, 0.6, 0.7]];
        let frozen = FrozenAlignment::new(&z.view()).unwrap();
        for &a in &[0.1, 1.0, 10.0] {
            assert_abs_diff_eq!(
                frozen.evaluate(a),
                g_align(&z.view(), a).unwrap(),
                epsilon = 1e-13
            );
        }
    }
}
