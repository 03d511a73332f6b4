//! Small dense linear-algebra helpers shared by the GP models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter added before every Gram factorization.
pub const BASE_JITTER: f64 = 1e-8;
/// Largest relative jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;

/// Cholesky factor of `a + jitter * scale * I`.
///
/// Starts at `BASE_JITTER` and escalates by 10x up to `MAX_JITTER`.
/// Returns the lower factor and the absolute jitter that was used.
pub fn cholesky_jittered(a: &DMatrix<f64>, scale: f64) -> Result<(DMatrix<f64>, f64)> {
    if !a.is_square() {
        return Err(Error::contract("cholesky of a non-square matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite entry in matrix to factorize"));
    }
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut rel = BASE_JITTER;
    while rel <= MAX_JITTER * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Ok((ch.unpack(), jitter));
        }
        rel *= 10.0;
    }
    Err(Error::numerical(format!(
        "matrix of size {} not positive definite after jitter {:e}",
        a.nrows(),
        MAX_JITTER * scale
    )))
}

/// Lower-triangular root of a symmetric positive semi-definite matrix.
///
/// Falls back to an eigen-decomposition when the matrix is singular, so a
/// zero matrix yields a zero root.
pub fn psd_root(a: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.unpack();
    }
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut root = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        root.column_mut(j).scale_mut(s);
    }
    triangularize(&root)
}

/// Lower-triangular `L` with nonnegative diagonal such that
/// `L * L^T == root * root^T`.
///
/// Computed by a Householder QR of `root^T`, which never forms the product.
pub fn triangularize(root: &DMatrix<f64>) -> DMatrix<f64> {
    let n = root.nrows();
    let k = root.ncols();
    let mut tall = root.transpose();
    if k < n {
        // pad with zero rows so the QR yields a square factor
        tall = tall.resize_vertically(n, 0.0);
    }
    let r = tall.qr().r();
    let mut l = r.transpose();
    for j in 0..n {
        if l[(j, j)] < 0.0 {
            for i in j..n {
                l[(i, j)] = -l[(i, j)];
            }
        }
    }
    l
}

/// Lower-triangular `L` with nonnegative diagonal such that
/// `L Lᵀ = T1 T1ᵀ + T2 T2ᵀ`, for square lower-triangular `T1` and `T2`.
///
/// Same result as `triangularize([T1 | T2])`, but each Householder
/// reflector only touches the nonzero part of a row, about a sixth of the
/// work of the dense QR.
pub fn merge_lower_roots(t1: &DMatrix<f64>, t2: &DMatrix<f64>) -> DMatrix<f64> {
    let n = t1.nrows();
    assert_eq!(t1.shape(), (n, n), "merge_lower_roots needs square factors");
    assert_eq!(t2.shape(), (n, n), "merge_lower_roots needs equal shapes");
    // work on the transposes so every row of T is a contiguous column
    let mut u1 = t1.transpose();
    let mut u2 = t2.transpose();
    let (a, b) = (u1.as_mut_slice(), u2.as_mut_slice());
    let mut v = vec![0.0; n + 1];
    for i in 0..n {
        let x0 = a[i * n + i];
        let tail = &b[i * n..i * n + i + 1];
        let sigma: f64 = tail.iter().map(|x| x * x).sum();
        if sigma == 0.0 {
            if x0 < 0.0 {
                for r in i..n {
                    a[r * n + i] = -a[r * n + i];
                }
            }
            continue;
        }
        let mu = (x0 * x0 + sigma).sqrt();
        let v0 = if x0 <= 0.0 { x0 - mu } else { -sigma / (x0 + mu) };
        let beta = 2.0 * v0 * v0 / (sigma + v0 * v0);
        for (vk, x) in v[..=i].iter_mut().zip(tail) {
            *vk = x / v0;
        }
        for r in (i + 1)..n {
            let col = &mut b[r * n..r * n + i + 1];
            let dot = a[r * n + i] + v[..=i].iter().zip(col.iter()).map(|(p, q)| p * q).sum::<f64>();
            let s = beta * dot;
            a[r * n + i] -= s;
            for (y, vk) in col.iter_mut().zip(&v[..=i]) {
                *y -= s * vk;
            }
        }
        a[i * n + i] = mu;
        b[i * n..i * n + i + 1].fill(0.0);
    }
    u1.transpose()
}

/// Makes a block-lower-triangular root with `d x d` diagonal blocks lower
/// triangular, with nonnegative diagonal, by rotating within each block of
/// columns. `L Lᵀ` is unchanged.
pub fn retriangularize_blocks(l: &mut DMatrix<f64>, d: usize) {
    let n = l.nrows();
    if d <= 1 {
        for j in 0..n {
            if l[(j, j)] < 0.0 {
                l.view_mut((j, j), (n - j, 1)).neg_mut();
            }
        }
        return;
    }
    for start in (0..n).step_by(d) {
        let w = d.min(n - start);
        let block = l.view((start, start), (w, w)).transpose();
        let q = block.qr().q();
        let rotated = l.view((start, start), (n - start, w)) * &q;
        l.view_mut((start, start), (n - start, w)).copy_from(&rotated);
        for j in 0..w {
            for i in 0..j {
                l[(start + i, start + j)] = 0.0;
            }
            if l[(start + j, start + j)] < 0.0 {
                l.view_mut((start + j, start + j), (n - start - j, 1)).neg_mut();
            }
        }
    }
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn lower_inverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::identity(n, n);
    if !l.solve_lower_triangular_mut(&mut inv) {
        return Err(Error::numerical("singular triangular factor"));
    }
    Ok(inv)
}

/// Replace `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Solve `(L L^T) x = b` for a lower Cholesky factor `L`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

pub fn cholesky_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

/// True when `m` has no entries above the diagonal.
pub fn is_lower_triangular(m: &DMatrix<f64>) -> bool {
    for j in 0..m.ncols() {
        for i in 0..j.min(m.nrows()) {
            if m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn triangularize_reproduces_product() {
        let root = DMatrix::from_row_slice(3, 5, &[
            1.0, 0.2, -0.3, 0.5, 0.0, //
            0.1, 2.0, 0.4, -0.2, 0.7, //
            -0.6, 0.3, 1.5, 0.1, -0.4,
        ]);
        let l = triangularize(&root);
        assert!(is_lower_triangular(&l));
        assert!((0..3).all(|i| l[(i, i)] >= 0.0));
        assert_relative_eq!(&l * l.transpose(), &root * root.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn triangularize_handles_narrow_roots() {
        let root = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let l = triangularize(&root);
        assert_eq!(l.shape(), (3, 3));
        assert_relative_eq!(&l * l.transpose(), &root * root.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn psd_root_of_singular_and_zero() {
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(psd_root(&z), z);
        let v = DMatrix::from_row_slice(2, 1, &[1.0, -2.0]);
        let a = &v * v.transpose();
        let r = psd_root(&a);
        assert!(is_lower_triangular(&r));
        assert_relative_eq!(&r * r.transpose(), a, epsilon = 1e-12);
    }

    #[test]
    fn jitter_escalates_then_fails() {
        let ones = DMatrix::from_element(3, 3, 1.0);
        let (l, jitter) = cholesky_jittered(&ones, 1.0).unwrap();
        assert!(jitter >= BASE_JITTER);
        assert_relative_eq!(&l * l.transpose(), &ones + DMatrix::<f64>::identity(3, 3) * jitter, epsilon = 1e-12);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_jittered(&indefinite, 1.0), Err(Error::Numerical(_))));
    }

    #[test]
    fn merged_roots_match_dense_triangularization() {
        let n = 7;
        let t1 = DMatrix::from_fn(n, n, |i, j| if j <= i { ((i * 5 + j * 3) % 7) as f64 - 2.5 } else { 0.0 });
        let t2 = DMatrix::from_fn(n, n, |i, j| if j <= i { ((i * 2 + j * 9) % 5) as f64 - 1.0 } else { 0.0 });
        let mut both = DMatrix::zeros(n, 2 * n);
        both.columns_mut(0, n).copy_from(&t1);
        both.columns_mut(n, n).copy_from(&t2);
        let merged = merge_lower_roots(&t1, &t2);
        assert!(is_lower_triangular(&merged));
        assert!((0..n).all(|i| merged[(i, i)] >= 0.0));
        assert!((&merged - triangularize(&both)).amax() < 1e-12);
        let zero = DMatrix::zeros(n, n);
        assert!((merge_lower_roots(&t1, &zero) - triangularize(&t1)).amax() < 1e-12);
    }

    #[test]
    fn block_retriangularization_keeps_the_product() {
        let n = 6;
        let l = DMatrix::from_fn(n, n, |i, j| if j / 2 <= i / 2 { ((i * 7 + j * 11) % 9) as f64 - 4.0 } else { 0.0 });
        let mut t = l.clone();
        retriangularize_blocks(&mut t, 2);
        assert!(is_lower_triangular(&t));
        assert!((0..n).all(|i| t[(i, i)] >= 0.0));
        assert!((&t * t.transpose() - &l * l.transpose()).amax() < 1e-10);
    }
}
