//! Self-contained dense symmetric eigensolvers and orthonormalization.
//!
//! Two independent routes are deliberately kept: cyclic Jacobi for the small
//! Gram matrices arising from sample batches, and Householder
//! tridiagonalization with implicit-shift QL for the oracle's full
//! decompositions at larger sizes. Tests cross-check one against the other.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// Eigenpairs of a symmetric matrix, eigenvalues descending, eigenvectors
/// as matching columns.
#[derive(Clone, Debug)]
pub struct Eigen<T: Scalar> {
    pub values: Vec<T>,
    pub vectors: DenseMatrix<T>,
}

fn sort_eigen_desc<T: Scalar>(values: &mut [T], vectors: &mut DenseMatrix<T>) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let old_vals = values.to_vec();
    let old_vecs = vectors.clone();
    for (new, &old) in order.iter().enumerate() {
        values[new] = old_vals[old];
        for r in 0..vectors.n_rows() {
            vectors.set(r, new, old_vecs.get(r, old));
        }
    }
}

fn off_diag_frob_sq<T: Scalar>(a: &DenseMatrix<T>) -> T {
    let n = a.n_rows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = a.get(i, j);
                acc = acc + v * v;
            }
        }
    }
    acc
}

/// Cyclic Jacobi eigendecomposition. Sweeps until the off-diagonal
/// Frobenius mass drops below `1e-12` of the input's Frobenius norm.
pub fn jacobi_eigen<T: Scalar>(sym: &DenseMatrix<T>) -> Result<Eigen<T>> {
    let n = sym.n_rows();
    if n != sym.n_cols() {
        return Err(Error::InvalidParameter("jacobi needs a square matrix".into()));
    }
    let mut a = sym.clone();
    let mut v = DenseMatrix::zeros(n, n)?;
    for i in 0..n {
        v.set(i, i, T::one());
    }
    if n <= 1 {
        return Ok(Eigen {
            values: (0..n).map(|i| a.get(i, i)).collect(),
            vectors: v,
        });
    }

    let frob = sym.frob_norm_sq().sqrt();
    let threshold = T::from_f64_lossy(1e-12) * frob;
    let threshold_sq = threshold * threshold;
    let max_sweeps = 100;

    for _ in 0..max_sweeps {
        if off_diag_frob_sq(&a) <= threshold_sq {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (T::from_f64_lossy(2.0) * apq);
                let t = {
                    let sign = if theta < T::zero() { -T::one() } else { T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = (t * t + T::one()).sqrt().recip();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut values: Vec<T> = (0..n).map(|i| a.get(i, i)).collect();
    sort_eigen_desc(&mut values, &mut v);
    Ok(Eigen { values, vectors: v })
}

/// Householder tridiagonalization followed by implicit-shift QL; the
/// workhorse for full decompositions of larger Gram matrices.
pub fn tridiag_eigen<T: Scalar>(sym: &DenseMatrix<T>) -> Result<Eigen<T>> {
    let n = sym.n_rows();
    if n != sym.n_cols() {
        return Err(Error::InvalidParameter("eigensolver needs a square matrix".into()));
    }
    if n == 0 {
        return Ok(Eigen {
            values: vec![],
            vectors: DenseMatrix::zeros(0, 0)?,
        });
    }
    let mut a = sym.clone();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tred2(&mut a, &mut d, &mut e);
    // QL rotations touch eigenvector pairs; rotating contiguous rows of the
    // transposed accumulator keeps the inner loop cache-friendly.
    let mut vt = a.transpose();
    tql2(&mut vt, &mut d, &mut e)?;
    let mut vectors = vt.transpose();
    sort_eigen_desc(&mut d, &mut vectors);
    Ok(Eigen { values: d, vectors })
}

// Householder reduction to tridiagonal form, accumulating the orthogonal
// transformation in `a`. Classical dense formulation, 0-based.
fn tred2<T: Scalar>(a: &mut DenseMatrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = T::zero();
        let mut scale = T::zero();
        if l > 0 {
            for k in 0..=l {
                scale = scale + a.get(i, k).abs();
            }
            if scale == T::zero() {
                e[i] = a.get(i, l);
            } else {
                for k in 0..=l {
                    let v = a.get(i, k) / scale;
                    a.set(i, k, v);
                    h = h + v * v;
                }
                let f = a.get(i, l);
                let g = if f >= T::zero() { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h = h - f * g;
                a.set(i, l, f - g);
                let mut f_acc = T::zero();
                for j in 0..=l {
                    a.set(j, i, a.get(i, j) / h);
                    let mut g_acc = T::zero();
                    for k in 0..=j {
                        g_acc = g_acc + a.get(j, k) * a.get(i, k);
                    }
                    for k in j + 1..=l {
                        g_acc = g_acc + a.get(k, j) * a.get(i, k);
                    }
                    e[j] = g_acc / h;
                    f_acc = f_acc + e[j] * a.get(i, j);
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = a.get(i, j);
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let v = a.get(j, k) - (f * e[k] + g * a.get(i, k));
                        a.set(j, k, v);
                    }
                }
            }
        } else {
            e[i] = a.get(i, l);
        }
        d[i] = h;
    }
    d[0] = T::zero();
    e[0] = T::zero();
    for i in 0..n {
        if d[i] != T::zero() {
            // Over the leading i x i block: g = A^T u for u = row i, then
            // the rank-one update A -= v (x) g with v = column i, done row
            // by row so every inner loop is contiguous.
            let u: Vec<T> = a.row(i)[..i].to_vec();
            let mut g = vec![T::zero(); i];
            for (k, &uk) in u.iter().enumerate() {
                if uk == T::zero() {
                    continue;
                }
                let row_k = &a.row(k)[..i];
                for (gj, &akj) in g.iter_mut().zip(row_k) {
                    *gj = *gj + uk * akj;
                }
            }
            for k in 0..i {
                let row_k = a.row_mut(k);
                let vk = row_k[i];
                if vk == T::zero() {
                    continue;
                }
                for (akj, &gj) in row_k[..i].iter_mut().zip(&g) {
                    *akj = *akj - vk * gj;
                }
            }
        }
        d[i] = a.get(i, i);
        a.set(i, i, T::one());
        for j in 0..i {
            a.set(j, i, T::zero());
            a.set(i, j, T::zero());
        }
    }
}

// Implicit-shift QL on the tridiagonal (d, e), rotations accumulated into
// the rows of the pre-transposed accumulator `a` (row t = eigenvector t).
fn tql2<T: Scalar>(a: &mut DenseMatrix<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    if n == 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let eps = T::from_f64_lossy(f64::EPSILON);

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= eps * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(Error::InvalidParameter(
                    "eigensolver failed to converge".into(),
                ));
            }
            let two = T::from_f64_lossy(2.0);
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = (g * g + T::one()).sqrt();
            let sign_r = if g >= T::zero() { r } else { -r };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let mut s = T::one();
            let mut c = T::one();
            let mut p = T::zero();
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = (f * f + g * g).sqrt();
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] = d[i + 1] - p;
                    e[m] = T::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let (head, tail) = a.data_mut().split_at_mut((i + 1) * n);
                let row_i = &mut head[i * n..];
                let row_i1 = &mut tail[..n];
                for (vi, vi1) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                    let f = *vi1;
                    *vi1 = s * *vi + c * f;
                    *vi = c * *vi - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] = d[l] - p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    Ok(())
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Columns whose
/// residual norm falls below `drop_tol` times the largest input norm are
/// dropped. The result always satisfies `Q^T Q = I` to machine precision.
pub fn mgs_orthonormalize<T: Scalar>(columns: Vec<Vec<T>>, drop_tol: T) -> Vec<Vec<T>> {
    let mut basis: Vec<Vec<T>> = Vec::new();
    let scale = columns
        .iter()
        .map(|c| norm2(c))
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    if scale == T::zero() {
        return basis;
    }
    for mut col in columns {
        for _pass in 0..2 {
            for b in &basis {
                let coef = dot(&col, b);
                for (x, &y) in col.iter_mut().zip(b) {
                    *x = *x - coef * y;
                }
            }
        }
        let nrm = norm2(&col);
        if nrm > drop_tol * scale {
            let inv = nrm.recip();
            for x in col.iter_mut() {
                *x = *x * inv;
            }
            basis.push(col);
        }
    }
    basis
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).fold(T::zero(), |p, q| p + q)
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration;
/// equals the spectral norm.
pub fn sym_spectral_norm<T: Scalar>(sym: &DenseMatrix<T>, iters: usize) -> T {
    let n = sym.n_rows();
    if n == 0 {
        return T::zero();
    }
    let mut v: Vec<T> = (0..n)
        .map(|i| T::from_f64_lossy(1.0 + (i as f64 * 0.7).sin()))
        .collect();
    let mut lambda = T::zero();
    for _ in 0..iters {
        let w = sym.mul_vec(&v);
        let nrm = norm2(&w);
        if nrm == T::zero() {
            return T::zero();
        }
        lambda = nrm;
        v = w.into_iter().map(|x| x / nrm).collect();
    }
    lambda
}

/// Top-k eigenvalues of a PSD matrix by power iteration with deflation.
/// Used as an independent cross-check of the direct decompositions.
pub fn power_deflation_topk<T: Scalar>(sym: &DenseMatrix<T>, k: usize, iters: usize) -> Vec<T> {
    let n = sym.n_rows();
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut values = Vec::new();
    for t in 0..k.min(n) {
        let mut v: Vec<T> = (0..n)
            .map(|i| T::from_f64_lossy(((i * 31 + t * 17 + 1) as f64 * 0.37).sin() + 1.1))
            .collect();
        let mut lambda = T::zero();
        for _ in 0..iters {
            // project out earlier eigenvectors
            for b in &basis {
                let c = dot(&v, b);
                for (x, &y) in v.iter_mut().zip(b) {
                    *x = *x - c * y;
                }
            }
            let nrm = norm2(&v);
            if nrm == T::zero() {
                break;
            }
            for x in v.iter_mut() {
                *x = *x / nrm;
            }
            let w = sym.mul_vec(&v);
            lambda = dot(&w, &v);
            v = w;
        }
        let nrm = norm2(&v);
        if nrm > T::zero() {
            for x in v.iter_mut() {
                *x = *x / nrm;
            }
        }
        basis.push(v);
        values.push(lambda);
    }
    values
}

/// Solves `gram * x = rhs` for a symmetric PSD `gram`, truncating
/// eigenvalues below `rel_tol` times the largest. Returns the minimum-norm
/// solution and the numerical rank used.
pub fn solve_spd_truncated<T: Scalar>(
    gram: &DenseMatrix<T>,
    rhs: &[T],
    rel_tol: T,
) -> Result<(Vec<T>, usize)> {
    let eig = jacobi_eigen(gram)?;
    let lam_max = eig.values.first().copied().unwrap_or(T::zero()).max(T::zero());
    let cutoff = lam_max * rel_tol;
    let d = rhs.len();
    let mut x = vec![T::zero(); d];
    let mut rank = 0;
    for (t, &lam) in eig.values.iter().enumerate() {
        if lam <= cutoff || lam <= T::zero() {
            continue;
        }
        rank += 1;
        let vt: Vec<T> = (0..d).map(|r| eig.vectors.get(r, t)).collect();
        let coef = dot(&vt, rhs) / lam;
        for (xi, &vi) in x.iter_mut().zip(&vt) {
            *xi = *xi + coef * vi;
        }
    }
    Ok((x, rank))
}
