//! Similarity graphs over a batch of feature vectors and their spectra.
//!
//! The pipeline is `batch -> cosine similarity S -> degrees -> L = D - S ->
//! eigendecomposition -> Fiedler vector`. Everything here is a pure function
//! of its inputs.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gap below which neighbouring eigenvalues are treated as equal when
/// deciding whether the Fiedler vector is unique.
pub const DEGENERACY_GAP: f64 = 1e-9;

/// Relative off-diagonal Frobenius norm at which Jacobi sweeps stop.
pub const JACOBI_TOLERANCE: f64 = 1e-10;

/// Maximum number of full cyclic sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Components with magnitude at or below this are skipped when fixing the
/// sign of an eigenvector.
const SIGN_EPS: f64 = 1e-12;

/// An `n x d` block of feature rows, the unit of selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBatch {
    data: Array2<f64>,
    batch_id: u64,
}

impl FeatureBatch {
    /// Wraps a feature matrix, rejecting NaN and infinite entries.
    pub fn new(data: Array2<f64>, batch_id: u64) -> Result<Self> {
        check_finite(data.view())?;
        Ok(Self { data, batch_id })
    }

    pub fn from_rows(rows: &[Vec<f64>], batch_id: u64) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has {} columns, expected {d}",
                rows[bad].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::new(data, batch_id)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn batch_id(&self) -> u64 {
        self.batch_id
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureBatch {
        FeatureBatch {
            data: self.data.select(Axis(0), indices),
            batch_id: self.batch_id,
        }
    }
}

fn check_finite(m: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteInput { row, col });
        }
    }
    Ok(())
}

fn check_square(m: ArrayView2<'_, f64>, what: &str) -> Result<usize> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::DimensionMismatch(format!("{what} is {r}x{c}, expected square")));
    }
    Ok(r)
}

fn check_symmetric(m: ArrayView2<'_, f64>, tol: f64) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (m[[i, j]] - m[[j, i]]).abs();
            if diff > tol {
                return Err(Error::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    Ok(())
}

/// Pairwise cosine similarity of the batch rows.
///
/// A zero row has similarity 0 with every other row and 1 with itself.
/// Diagonal entries are exactly 1 and the result is exactly symmetric.
pub fn cosine_similarity_matrix(batch: &FeatureBatch) -> Result<Array2<f64>> {
    let x = batch.data();
    check_finite(x.view())?;
    let n = x.nrows();

    // Normalise first so that positive row scaling only perturbs rounding.
    let mut unit = x.to_owned();
    let mut nonzero = vec![false; n];
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
            nonzero[i] = true;
        }
    }

    let mut s = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        s[[i, i]] = 1.0;
        if !nonzero[i] {
            continue;
        }
        let ri = unit.row(i);
        for j in (i + 1)..n {
            if !nonzero[j] {
                continue;
            }
            let c = ri.dot(&unit.row(j)).clamp(-1.0, 1.0);
            s[[i, j]] = c;
            s[[j, i]] = c;
        }
    }
    Ok(s)
}

/// Row sums of a similarity matrix, diagonal included.
pub fn degree_vector(similarity: &Array2<f64>) -> Result<Array1<f64>> {
    check_square(similarity.view(), "similarity matrix")?;
    check_finite(similarity.view())?;
    Ok(similarity.sum_axis(Axis(1)))
}

/// Unnormalised graph Laplacian `diag(degrees) - S`.
pub fn laplacian(similarity: &Array2<f64>) -> Result<Array2<f64>> {
    let degrees = degree_vector(similarity)?;
    Ok(laplacian_from_degrees(similarity, &degrees))
}

fn laplacian_from_degrees(similarity: &Array2<f64>, degrees: &Array1<f64>) -> Array2<f64> {
    let mut l = similarity.mapv(|v| -v);
    for (i, d) in degrees.iter().enumerate() {
        l[[i, i]] += d;
    }
    l
}

/// Similarity matrix, degrees and Laplacian of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub similarity: Array2<f64>,
    pub degrees: Array1<f64>,
    pub laplacian: Array2<f64>,
}

impl SimilarityGraph {
    pub fn from_batch(batch: &FeatureBatch) -> Result<Self> {
        let similarity = cosine_similarity_matrix(batch)?;
        let degrees = similarity.sum_axis(Axis(1));
        let laplacian = laplacian_from_degrees(&similarity, &degrees);
        Ok(Self {
            similarity,
            degrees,
            laplacian,
        })
    }
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    /// Sorted ascending.
    pub eigenvalues: Array1<f64>,
    /// Column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: Array2<f64>,
    /// Number of cyclic sweeps the solver ran.
    pub sweeps: usize,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Second-smallest eigenvalue, if there is one.
    pub fn fiedler_value(&self) -> Option<f64> {
        self.eigenvalues.get(1).copied()
    }

    pub fn fiedler_vector(&self) -> Option<Array1<f64>> {
        (self.len() >= 2).then(|| self.eigenvectors.column(1).to_owned())
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps visit `(p, q)` pairs in row-major order over the strict upper
/// triangle and stop once the off-diagonal Frobenius norm drops to
/// `JACOBI_TOLERANCE * ||M||_F`. Eigenpairs are sorted ascending (stable, so
/// equal eigenvalues keep their diagonal order) and every eigenvector is
/// signed so its first component above `1e-12` in magnitude is positive.
/// Identical input bits give identical output bits.
pub fn eig_sym(m: &Array2<f64>) -> Result<SpectralDecomposition> {
    let n = check_square(m.view(), "matrix")?;
    if n == 0 {
        return Err(Error::InvalidParams("eigendecomposition of an empty matrix".into()));
    }
    check_finite(m.view())?;
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    check_symmetric(m.view(), 1e-10 * scale)?;

    // Row-major working copies; `a` is kept exactly symmetric throughout.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = m[[i, i]];
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    // Eigenvectors are accumulated as rows of `vt` so rotations touch
    // contiguous memory.
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }

    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = JACOBI_TOLERANCE * frob;

    let mut scratch = Scratch {
        row_p: vec![0.0; n],
        row_q: vec![0.0; n],
    };
    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a, n);
        if off <= threshold {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::ConvergenceFailure {
                sweeps,
                off_norm: off,
            });
        }
        // Entries this small cannot keep the off-diagonal norm above the
        // threshold on their own, so rotating them only costs time.
        let negligible = threshold / n as f64;
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p * n + q].abs() > negligible {
                    rotate(&mut a, &mut vt, n, p, q, &mut scratch);
                }
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));

    let eigenvalues = Array1::from_iter(order.iter().map(|&k| a[k * n + k]));
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        let vector = &vt[k * n..(k + 1) * n];
        let flip = vector
            .iter()
            .find(|x| x.abs() > SIGN_EPS)
            .is_some_and(|&x| x < 0.0);
        for (r, &x) in vector.iter().enumerate() {
            eigenvectors[[r, col]] = if flip { -x } else { x };
        }
    }

    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
        sweeps,
    })
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[i * n + j] * a[i * n + j];
            }
        }
    }
    sum.sqrt()
}

/// Scratch rows reused by every rotation of one decomposition.
struct Scratch {
    row_p: Vec<f64>,
    row_q: Vec<f64>,
}

/// Annihilates `a[p][q]` with one plane rotation and accumulates it into the
/// eigenvector rows `vt`.
fn rotate(a: &mut [f64], vt: &mut [f64], n: usize, p: usize, q: usize, scratch: &mut Scratch) {
    let apq = a[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let Scratch { row_p, row_q } = scratch;
    let old_p = &a[p * n..(p + 1) * n];
    let old_q = &a[q * n..(q + 1) * n];
    for (((np, nq), &xp), &xq) in row_p.iter_mut().zip(row_q.iter_mut()).zip(old_p).zip(old_q) {
        *np = c * xp - s * xq;
        *nq = s * xp + c * xq;
    }
    row_p[p] = app - t * apq;
    row_q[q] = aqq + t * apq;
    row_p[q] = 0.0;
    row_q[p] = 0.0;
    // One pass writes columns p and q; rows p and q are then copied whole,
    // which keeps `a` exactly symmetric.
    for (row, (&np, &nq)) in a.chunks_exact_mut(n).zip(row_p.iter().zip(row_q.iter())) {
        row[p] = np;
        row[q] = nq;
    }
    a[p * n..(p + 1) * n].copy_from_slice(row_p);
    a[q * n..(q + 1) * n].copy_from_slice(row_q);

    let (head, tail) = vt.split_at_mut(q * n);
    let vp = &mut head[p * n..(p + 1) * n];
    let vq = &mut tail[..n];
    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Second eigenpair of a graph Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct Fiedler {
    pub value: f64,
    /// Unit norm, sign-fixed like every `eig_sym` eigenvector.
    pub vector: Array1<f64>,
    /// `lambda_2 - lambda_1`, or infinity for a 2x2 Laplacian.
    pub spectral_gap: f64,
    /// Set when the Fiedler eigenvalue is not simple, so the vector is only
    /// one choice out of a larger eigenspace.
    pub degenerate_spectrum: bool,
}

/// Fiedler vector of a Laplacian: column 1 of `eig_sym(L)`.
pub fn fiedler_vector(laplacian: &Array2<f64>) -> Result<Fiedler> {
    let n = laplacian.nrows();
    if n < 2 {
        return Err(Error::BatchTooSmall { n, min: 2 });
    }
    let decomposition = eig_sym(laplacian)?;
    Ok(fiedler_from_decomposition(&decomposition))
}

pub(crate) fn fiedler_from_decomposition(dec: &SpectralDecomposition) -> Fiedler {
    let ev = &dec.eigenvalues;
    let spectral_gap = if ev.len() > 2 { ev[2] - ev[1] } else { f64::INFINITY };
    let lower_gap = ev[1] - ev[0];
    Fiedler {
        value: ev[1],
        vector: dec.eigenvectors.column(1).to_owned(),
        spectral_gap,
        degenerate_spectrum: spectral_gap < DEGENERACY_GAP || lower_gap < DEGENERACY_GAP,
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    use super::*;

    fn batch(rows: &[&[f64]]) -> FeatureBatch {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        FeatureBatch::from_rows(&rows, 0).unwrap()
    }

    #[test]
    fn cosine_of_orthogonal_parallel_and_antiparallel_rows() {
        let s = cosine_similarity_matrix(&batch(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(s, array![[1.0, 0.0], [0.0, 1.0]]);
        let s = cosine_similarity_matrix(&batch(&[&[1.0, 0.0], &[2.0, 0.0]])).unwrap();
        assert_eq!(s, array![[1.0, 1.0], [1.0, 1.0]]);
        let s = cosine_similarity_matrix(&batch(&[&[1.0, 0.0], &[-1.0, 0.0]])).unwrap();
        assert_eq!(s, array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn zero_rows_are_neutral_but_self_similar() {
        let s = cosine_similarity_matrix(&batch(&[&[0.0, 0.0], &[3.0, 4.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(s, array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let err = FeatureBatch::new(array![[1.0, f64::NAN]], 0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteInput { row: 0, col: 1 }));
        assert!(FeatureBatch::new(array![[f64::INFINITY]], 0).is_err());
    }

    #[test]
    fn degree_examples() {
        assert_eq!(degree_vector(&array![[1.0, 0.5], [0.5, 1.0]]).unwrap(), array![1.5, 1.5]);
        assert_eq!(degree_vector(&Array2::eye(3)).unwrap(), array![1.0, 1.0, 1.0]);
        assert_eq!(degree_vector(&array![[1.0, -1.0], [-1.0, 1.0]]).unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(
            laplacian(&array![[1.0, 0.5], [0.5, 1.0]]).unwrap(),
            array![[0.5, -0.5], [-0.5, 0.5]]
        );
        assert_eq!(laplacian(&Array2::eye(4)).unwrap(), Array2::<f64>::zeros((4, 4)));
        assert_eq!(
            laplacian(&array![[1.0, 1.0], [1.0, 1.0]]).unwrap(),
            array![[1.0, -1.0], [-1.0, 1.0]]
        );
    }

    #[test]
    fn laplacian_rejects_non_square() {
        assert!(matches!(
            laplacian(&Array2::zeros((2, 3))),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn eig_sym_two_by_two_analytic() {
        let dec = eig_sym(&array![[0.5, -0.5], [-0.5, 0.5]]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(dec.eigenvalues[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dec.eigenvalues[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dec.eigenvectors[[0, 0]], h, epsilon = 1e-15);
        assert_abs_diff_eq!(dec.eigenvectors[[1, 0]], h, epsilon = 1e-15);
        assert_abs_diff_eq!(dec.eigenvectors[[0, 1]], h, epsilon = 1e-15);
        assert_abs_diff_eq!(dec.eigenvectors[[1, 1]], -h, epsilon = 1e-15);
    }

    #[test]
    fn eig_sym_identity_is_untouched() {
        let dec = eig_sym(&Array2::eye(3)).unwrap();
        assert_eq!(dec.eigenvalues, array![1.0, 1.0, 1.0]);
        assert_eq!(dec.eigenvectors, Array2::<f64>::eye(3));
        assert_eq!(dec.sweeps, 0);
    }

    #[test]
    fn eig_sym_rejects_asymmetric_input() {
        let err = eig_sym(&array![[1.0, 2.0], [0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric { row: 0, col: 1, .. }));
    }

    #[test]
    fn eig_sym_one_by_one() {
        let dec = eig_sym(&array![[-3.5]]).unwrap();
        assert_eq!(dec.eigenvalues, array![-3.5]);
        assert_eq!(dec.eigenvectors, array![[1.0]]);
    }

    #[test]
    fn eig_sym_is_bit_deterministic() {
        let m = array![[2.0, -1.0, 0.3], [-1.0, 2.0, -1.0], [0.3, -1.0, 2.0]];
        let a = eig_sym(&m).unwrap();
        let b = eig_sym(&m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eig_sym_three_by_three_matches_characteristic_roots() {
        // Tridiagonal (2, -1) matrix: eigenvalues 2 - sqrt(2), 2, 2 + sqrt(2).
        let m = array![[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]];
        let dec = eig_sym(&m).unwrap();
        let r2 = 2f64.sqrt();
        assert_abs_diff_eq!(dec.eigenvalues[0], 2.0 - r2, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.eigenvalues[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.eigenvalues[2], 2.0 + r2, epsilon = 1e-12);
    }

    #[test]
    fn fiedler_two_by_two() {
        let f = fiedler_vector(&array![[0.5, -0.5], [-0.5, 0.5]]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(f.vector[0], h, epsilon = 1e-15);
        assert_abs_diff_eq!(f.vector[1], -h, epsilon = 1e-15);
        assert!(!f.degenerate_spectrum);
    }

    #[test]
    fn fiedler_of_zero_laplacian_is_flagged() {
        let f = fiedler_vector(&Array2::zeros((3, 3))).unwrap();
        assert!(f.degenerate_spectrum);
        let f = fiedler_vector(&Array2::zeros((2, 2))).unwrap();
        assert!(f.degenerate_spectrum);
    }

    #[test]
    fn fiedler_needs_two_samples() {
        assert!(matches!(
            fiedler_vector(&array![[0.0]]),
            Err(Error::BatchTooSmall { n: 1, min: 2 })
        ));
    }

    #[test]
    fn fiedler_splits_two_planted_blocks() {
        let b = batch(&[&[1.0, 0.05], &[0.98, 0.1], &[0.05, 1.0], &[0.1, 0.97]]);
        let g = SimilarityGraph::from_batch(&b).unwrap();
        let f = fiedler_vector(&g.laplacian).unwrap();
        assert_eq!(f.vector[0].signum(), f.vector[1].signum());
        assert_eq!(f.vector[2].signum(), f.vector[3].signum());
        assert_ne!(f.vector[0].signum(), f.vector[2].signum());
    }
}
