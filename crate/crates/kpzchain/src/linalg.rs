//! Thin wrappers over the system LAPACK/BLAS (linked via OpenBLAS).
//!
//! All public functions take and return row-major `ndarray` arrays. Internally
//! every call exploits the transpose duality between row-major and
//! column-major storage, so no transpose copies are made:
//!
//!   * a row-major `(m, n)` buffer read column-major is exactly `Aᵀ` `(n, m)`;
//!   * a QR factorization of `A` is an LQ factorization of `Aᵀ` and vice versa;
//!   * an SVD of `Aᵀ` is the SVD of `A` with the roles of `U` and `Vᵀ` swapped.
//!
//! The library pins OpenBLAS to a single thread the first time any routine is
//! called: evolution output must be byte-identical regardless of how many
//! threads the caller machine happens to have, and threaded BLAS reductions
//! change floating-point summation order.

use crate::error::{Error, Result};
use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use std::os::raw::c_char;
use std::sync::Once;

#[allow(clippy::too_many_arguments)]
extern "C" {
    fn openblas_set_num_threads(n: i32);
    fn dgemm_(
        transa: *const c_char, transb: *const c_char, m: *const i32, n: *const i32, k: *const i32,
        alpha: *const f64, a: *const f64, lda: *const i32, b: *const f64, ldb: *const i32,
        beta: *const f64, c: *mut f64, ldc: *const i32,
    );
    fn zgemm_(
        transa: *const c_char, transb: *const c_char, m: *const i32, n: *const i32, k: *const i32,
        alpha: *const C64, a: *const C64, lda: *const i32, b: *const C64, ldb: *const i32,
        beta: *const C64, c: *mut C64, ldc: *const i32,
    );
    fn dgelqf_(
        m: *const i32, n: *const i32, a: *mut f64, lda: *const i32, tau: *mut f64,
        work: *mut f64, lwork: *const i32, info: *mut i32,
    );
    fn dorglq_(
        m: *const i32, n: *const i32, k: *const i32, a: *mut f64, lda: *const i32, tau: *const f64,
        work: *mut f64, lwork: *const i32, info: *mut i32,
    );
    fn dgeqrf_(
        m: *const i32, n: *const i32, a: *mut f64, lda: *const i32, tau: *mut f64,
        work: *mut f64, lwork: *const i32, info: *mut i32,
    );
    fn dorgqr_(
        m: *const i32, n: *const i32, k: *const i32, a: *mut f64, lda: *const i32, tau: *const f64,
        work: *mut f64, lwork: *const i32, info: *mut i32,
    );
    fn dgesdd_(
        jobz: *const c_char, m: *const i32, n: *const i32, a: *mut f64, lda: *const i32,
        s: *mut f64, u: *mut f64, ldu: *const i32, vt: *mut f64, ldvt: *const i32,
        work: *mut f64, lwork: *const i32, iwork: *mut i32, info: *mut i32,
    );
    fn dsyevd_(
        jobz: *const c_char, uplo: *const c_char, n: *const i32, a: *mut f64, lda: *const i32,
        w: *mut f64, work: *mut f64, lwork: *const i32, iwork: *mut i32, liwork: *const i32,
        info: *mut i32,
    );
    fn zheevd_(
        jobz: *const c_char, uplo: *const c_char, n: *const i32, a: *mut C64, lda: *const i32,
        w: *mut f64, work: *mut C64, lwork: *const i32, rwork: *mut f64, lrwork: *const i32,
        iwork: *mut i32, liwork: *const i32, info: *mut i32,
    );
}

static PIN_THREADS: Once = Once::new();

fn pin_single_thread() {
    PIN_THREADS.call_once(|| unsafe {
        openblas_set_num_threads(1);
    });
}

fn lapack_err(routine: &str, info: i32) -> Error {
    Error::Numeric(format!("{routine} failed with info = {info}"))
}

/// Contiguous row-major copy of a view (no copy if already standard layout).
fn rowmajor(a: &ArrayView2<f64>) -> Array2<f64> {
    a.as_standard_layout().to_owned()
}

/// `C = A · B` through BLAS dgemm.
///
/// Row-major product computed as the column-major product `Cᵀ = Bᵀ · Aᵀ`.
pub fn matmul(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    pin_single_thread();
    let (m, ka) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(ka, kb, "matmul: inner dimensions differ: {ka} vs {kb}");
    if m == 0 || n == 0 || ka == 0 {
        return Array2::zeros((m, n));
    }
    let a = rowmajor(a);
    let b = rowmajor(b);
    let mut c = vec![0.0f64; m * n];
    let (mi, ni, ki) = (n as i32, m as i32, ka as i32);
    let (alpha, beta) = (1.0f64, 0.0f64);
    unsafe {
        dgemm_(
            b"N".as_ptr() as _, b"N".as_ptr() as _, &mi, &ni, &ki, &alpha,
            b.as_slice().unwrap().as_ptr(), &mi,
            a.as_slice().unwrap().as_ptr(), &ki,
            &beta, c.as_mut_ptr(), &mi,
        );
    }
    Array2::from_shape_vec((m, n), c).unwrap()
}

/// Complex `C = A · B` through BLAS zgemm.
pub fn matmul_c(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    pin_single_thread();
    let (m, ka) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(ka, kb, "matmul_c: inner dimensions differ: {ka} vs {kb}");
    if m == 0 || n == 0 || ka == 0 {
        return Array2::zeros((m, n));
    }
    let a = a.as_standard_layout().to_owned();
    let b = b.as_standard_layout().to_owned();
    let mut c = vec![C64::new(0.0, 0.0); m * n];
    let (mi, ni, ki) = (n as i32, m as i32, ka as i32);
    let alpha = C64::new(1.0, 0.0);
    let beta = C64::new(0.0, 0.0);
    unsafe {
        zgemm_(
            b"N".as_ptr() as _, b"N".as_ptr() as _, &mi, &ni, &ki, &alpha,
            b.as_slice().unwrap().as_ptr(), &mi,
            a.as_slice().unwrap().as_ptr(), &ki,
            &beta, c.as_mut_ptr(), &mi,
        );
    }
    Array2::from_shape_vec((m, n), c).unwrap()
}

/// Thin QR: `A (m×n) = Q (m×k) · R (k×n)` with `k = min(m, n)` and `QᵀQ = I`.
///
/// Implemented as LQ of the column-major transpose, so the buffer is used
/// in place without transposition.
pub fn qr_thin(a: &ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    pin_single_thread();
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(Error::Argument("qr_thin: empty matrix".into()));
    }
    let k = m.min(n);
    let mut buf = rowmajor(a).into_raw_vec();
    // Column-major view: (n × m) matrix Aᵀ with LDA = n.
    let (mi, ni, lda) = (n as i32, m as i32, n as i32);
    let mut tau = vec![0.0f64; k];
    let mut info = 0i32;
    // Workspace query.
    let mut wkopt = 0.0f64;
    let lwork_q = -1i32;
    unsafe {
        dgelqf_(&mi, &ni, buf.as_mut_ptr(), &lda, tau.as_mut_ptr(), &mut wkopt, &lwork_q, &mut info)
    };
    if info != 0 {
        return Err(lapack_err("dgelqf(query)", info));
    }
    let lwork = (wkopt as i32).max(1);
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        dgelqf_(&mi, &ni, buf.as_mut_ptr(), &lda, tau.as_mut_ptr(), work.as_mut_ptr(), &lwork, &mut info)
    };
    if info != 0 {
        return Err(lapack_err("dgelqf", info));
    }
    // R = Lᵀ where L is the (n×k) lower-trapezoid of the output: in row-major
    // reading of the same buffer this is the upper-trapezoidal (k×n) prefix.
    let mut r = Array2::<f64>::zeros((k, n));
    for i in 0..k {
        for j in i..n {
            r[[i, j]] = buf[i * n + j];
        }
    }
    // Materialize the (k×m) row-orthonormal factor of the LQ: dorglq.
    let ki = k as i32;
    unsafe {
        dorglq_(&ki, &ni, &ki, buf.as_mut_ptr(), &lda, tau.as_ptr(), &mut wkopt, &lwork_q, &mut info)
    };
    if info != 0 {
        return Err(lapack_err("dorglq(query)", info));
    }
    let lwork = (wkopt as i32).max(1);
    let mut work2 = vec![0.0f64; lwork as usize];
    if work2.len() < work.len() {
        work2 = work;
    }
    unsafe {
        dorglq_(&ki, &ni, &ki, buf.as_mut_ptr(), &lda, tau.as_ptr(), work2.as_mut_ptr(), &lwork, &mut info)
    };
    if info != 0 {
        return Err(lapack_err("dorglq", info));
    }
    // Q (m×k) row-major: Q[j, i] = buf[j*n + i] (strided copy).
    let mut q = Array2::<f64>::zeros((m, k));
    for j in 0..m {
        for i in 0..k {
            q[[j, i]] = buf[j * n + i];
        }
    }
    Ok((q, r))
}

/// Thin LQ: `A (m×n) = L (m×k) · Q (k×n)` with `k = min(m, n)` and `QQᵀ = I`.
pub fn lq_thin(a: &ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    pin_single_thread();
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(Error::Argument("lq_thin: empty matrix".into()));
    }
    let k = m.min(n);
    let mut buf = rowmajor(a).into_raw_vec();
    let (mi, ni, lda) = (n as i32, m as i32, n as i32);
    let mut tau = vec![0.0f64; k];
    let mut info = 0i32;
    let mut wkopt = 0.0f64;
    let lwork_q = -1i32;
    unsafe {
        dgeqrf_(&mi, &ni, buf.as_mut_ptr(), &lda, tau.as_mut_ptr(), &mut wkopt, &lwork_q, &mut info)
    };
    if info != 0 {
        return Err(lapack_err("dgeqrf(query)", info));
    }
    let lwork = (wkopt as i32).max(1);
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        dgeqrf_(&mi, &ni, buf.as_mut_ptr(), &lda, tau.as_mut_ptr(), work.as_mut_ptr(), &lwork, &mut info)
    };
    if info != 0 {
        return Err(lapack_err("dgeqrf", info));
    }
    // L = R̂ᵀ where R̂ (k×m) sits in the upper triangle (column-major): in the
    // row-major reading L[a, b] = buf[a*n + b] for b ≤ a (and b < k).
    let mut l = Array2::<f64>::zeros((m, k));
    for a_row in 0..m {
        for b in 0..k.min(a_row + 1) {
            l[[a_row, b]] = buf[a_row * n + b];
        }
    }
    let ki = k as i32;
    unsafe {
        dorgqr_(&mi, &ki, &ki, buf.as_mut_ptr(), &lda, tau.as_ptr(), &mut wkopt, &lwork_q, &mut info)
    };
    if info != 0 {
        return Err(lapack_err("dorgqr(query)", info));
    }
    let lwork = (wkopt as i32).max(1);
    let mut work2 = vec![0.0f64; lwork as usize];
    if work2.len() < work.len() {
        work2 = work;
    }
    unsafe {
        dorgqr_(&mi, &ki, &ki, buf.as_mut_ptr(), &lda, tau.as_ptr(), work2.as_mut_ptr(), &lwork, &mut info)
    };
    if info != 0 {
        return Err(lapack_err("dorgqr", info));
    }
    // Q (k×n) row-major is the contiguous k*n prefix of the buffer.
    let q = Array2::from_shape_vec((k, n), buf[..k * n].to_vec()).unwrap();
    Ok((l, q))
}

/// Full (thin) SVD: `A (m×n) = U (m×k) · diag(s) · Vt (k×n)`, `k = min(m, n)`,
/// singular values descending.
pub fn svd_thin(a: &ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    pin_single_thread();
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(Error::Argument("svd_thin: empty matrix".into()));
    }
    let k = m.min(n);
    let mut buf = rowmajor(a).into_raw_vec();
    // Column-major Aᵀ is (n × m): its SVD Aᵀ = Ũ Σ Ṽᵀ gives A = Ṽ Σ Ũᵀ.
    let (mi, ni, lda) = (n as i32, m as i32, n as i32);
    let mut s = vec![0.0f64; k];
    let mut u = vec![0.0f64; n * k]; // Ũ (n×k) col-major
    let mut vt = vec![0.0f64; k * m]; // Ṽᵀ (k×m) col-major
    let (ldu, ldvt) = (n as i32, k as i32);
    let mut iwork = vec![0i32; 8 * k];
    let mut info = 0i32;
    let mut wkopt = 0.0f64;
    let lwork_q = -1i32;
    unsafe {
        dgesdd_(
            b"S".as_ptr() as _, &mi, &ni, buf.as_mut_ptr(), &lda, s.as_mut_ptr(),
            u.as_mut_ptr(), &ldu, vt.as_mut_ptr(), &ldvt,
            &mut wkopt, &lwork_q, iwork.as_mut_ptr(), &mut info,
        )
    };
    if info != 0 {
        return Err(lapack_err("dgesdd(query)", info));
    }
    let lwork = (wkopt as i32).max(1);
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        dgesdd_(
            b"S".as_ptr() as _, &mi, &ni, buf.as_mut_ptr(), &lda, s.as_mut_ptr(),
            u.as_mut_ptr(), &ldu, vt.as_mut_ptr(), &ldvt,
            work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &mut info,
        )
    };
    if info != 0 {
        return Err(lapack_err("dgesdd", info));
    }
    // U of A = Ṽ: the col-major (k×m) Ṽᵀ buffer read row-major is (m×k) = Ṽ.
    let u_out = Array2::from_shape_vec((m, k), vt).unwrap();
    // Vt of A = Ũᵀ: the col-major (n×k) Ũ buffer read row-major is (k×n) = Ũᵀ.
    let vt_out = Array2::from_shape_vec((k, n), u).unwrap();
    Ok((u_out, Array1::from(s), vt_out))
}

/// Eigendecomposition of a real symmetric matrix; eigenvalues ascending.
///
/// Returns `(values, vectors)` with eigenvector `i` stored in **row** `i`.
pub fn eigh(a: &ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    pin_single_thread();
    let (m, n) = a.dim();
    if m != n || n == 0 {
        return Err(Error::Argument(format!("eigh: matrix must be square and nonempty, got {m}×{n}")));
    }
    let mut buf = rowmajor(a).into_raw_vec();
    let ni = n as i32;
    let mut w = vec![0.0f64; n];
    let mut info = 0i32;
    let (mut wkopt, mut iwkopt) = (0.0f64, 0i32);
    let lq = -1i32;
    unsafe {
        dsyevd_(
            b"V".as_ptr() as _, b"L".as_ptr() as _, &ni, buf.as_mut_ptr(), &ni,
            w.as_mut_ptr(), &mut wkopt, &lq, &mut iwkopt, &lq, &mut info,
        )
    };
    if info != 0 {
        return Err(lapack_err("dsyevd(query)", info));
    }
    let lwork = (wkopt as i32).max(1);
    let liwork = iwkopt.max(1);
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        dsyevd_(
            b"V".as_ptr() as _, b"L".as_ptr() as _, &ni, buf.as_mut_ptr(), &ni,
            w.as_mut_ptr(), work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &liwork, &mut info,
        )
    };
    if info != 0 {
        return Err(lapack_err("dsyevd", info));
    }
    // Column-major eigencolumns = row-major eigenrows; the input is symmetric
    // so working on the transposed buffer is immaterial.
    Ok((Array1::from(w), Array2::from_shape_vec((n, n), buf).unwrap()))
}

/// Eigendecomposition of a complex Hermitian matrix; eigenvalues ascending.
///
/// Returns `(values, vectors)` with eigenvector `i` stored in **row** `i`.
pub fn eigh_c(a: &ArrayView2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    pin_single_thread();
    let (m, n) = a.dim();
    if m != n || n == 0 {
        return Err(Error::Argument(format!("eigh_c: matrix must be square and nonempty, got {m}×{n}")));
    }
    // The row-major buffer read column-major is Aᵀ = conj(A) for Hermitian A;
    // its eigenvectors are the conjugates of those of A, with the same values.
    let mut buf = a.as_standard_layout().to_owned().into_raw_vec();
    let ni = n as i32;
    let mut w = vec![0.0f64; n];
    let mut info = 0i32;
    let mut wkopt = C64::new(0.0, 0.0);
    let mut rwkopt = 0.0f64;
    let mut iwkopt = 0i32;
    let lq = -1i32;
    unsafe {
        zheevd_(
            b"V".as_ptr() as _, b"L".as_ptr() as _, &ni, buf.as_mut_ptr(), &ni, w.as_mut_ptr(),
            &mut wkopt, &lq, &mut rwkopt, &lq, &mut iwkopt, &lq, &mut info,
        )
    };
    if info != 0 {
        return Err(lapack_err("zheevd(query)", info));
    }
    let lwork = (wkopt.re as i32).max(1);
    let lrwork = (rwkopt as i32).max(1);
    let liwork = iwkopt.max(1);
    let mut work = vec![C64::new(0.0, 0.0); lwork as usize];
    let mut rwork = vec![0.0f64; lrwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        zheevd_(
            b"V".as_ptr() as _, b"L".as_ptr() as _, &ni, buf.as_mut_ptr(), &ni, w.as_mut_ptr(),
            work.as_mut_ptr(), &lwork, rwork.as_mut_ptr(), &lrwork,
            iwork.as_mut_ptr(), &liwork, &mut info,
        )
    };
    if info != 0 {
        return Err(lapack_err("zheevd", info));
    }
    // Undo the implicit conjugation so row i is a genuine eigenvector of A.
    let vecs = Array2::from_shape_vec((n, n), buf).unwrap().mapv(|z| z.conj());
    Ok((Array1::from(w), vecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn randish(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        Array2::from_shape_fn((m, n), |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        for &(m, n) in &[(7usize, 5usize), (5, 7), (6, 6), (1, 4), (4, 1)] {
            let a = randish(m, n, (m * 31 + n) as u64);
            let (q, r) = qr_thin(&a.view()).unwrap();
            let k = m.min(n);
            assert_eq!(q.dim(), (m, k));
            assert_eq!(r.dim(), (k, n));
            assert!(max_abs(&(&matmul(&q.view(), &r.view()) - &a)) < 1e-12);
            let qtq = matmul(&q.t(), &q.view());
            assert!(max_abs(&(&qtq - &Array2::<f64>::eye(k))) < 1e-12);
            // R upper-trapezoidal
            for i in 0..k {
                for j in 0..i.min(n) {
                    assert_abs_diff_eq!(r[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn lq_reconstructs_and_is_orthonormal() {
        for &(m, n) in &[(7usize, 5usize), (5, 7), (6, 6), (1, 4), (4, 1)] {
            let a = randish(m, n, (m * 17 + n) as u64);
            let (l, q) = lq_thin(&a.view()).unwrap();
            let k = m.min(n);
            assert_eq!(l.dim(), (m, k));
            assert_eq!(q.dim(), (k, n));
            assert!(max_abs(&(&matmul(&l.view(), &q.view()) - &a)) < 1e-12);
            let qqt = matmul(&q.view(), &q.t());
            assert!(max_abs(&(&qqt - &Array2::<f64>::eye(k))) < 1e-12);
            for i in 0..m {
                for j in (i + 1)..k {
                    assert_abs_diff_eq!(l[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn svd_reconstructs_with_descending_values() {
        for &(m, n) in &[(8usize, 5usize), (5, 8), (6, 6)] {
            let a = randish(m, n, (m * 13 + n) as u64);
            let (u, s, vt) = svd_thin(&a.view()).unwrap();
            let k = m.min(n);
            for i in 1..k {
                assert!(s[i] <= s[i - 1]);
            }
            let us = &u * &s.view().insert_axis(Axis(0));
            assert!(max_abs(&(&matmul(&us.view(), &vt.view()) - &a)) < 1e-12);
            assert!(max_abs(&(&matmul(&u.t(), &u.view()) - &Array2::<f64>::eye(k))) < 1e-12);
            assert!(max_abs(&(&matmul(&vt.view(), &vt.t()) - &Array2::<f64>::eye(k))) < 1e-12);
        }
    }

    #[test]
    fn eigh_matches_known_symmetric() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let (w, v) = eigh(&a.view()).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 3.0, epsilon = 1e-12);
        for i in 0..2 {
            let vec = v.row(i).to_owned();
            let av = a.dot(&vec);
            for j in 0..2 {
                assert_abs_diff_eq!(av[j], w[i] * vec[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn eigh_c_matches_known_hermitian() {
        // Pauli-y has eigenvalues ±1 with genuinely complex eigenvectors.
        let a = array![
            [C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
            [C64::new(0.0, 1.0), C64::new(0.0, 0.0)]
        ];
        let (w, v) = eigh_c(&a.view()).unwrap();
        assert_abs_diff_eq!(w[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-12);
        for i in 0..2 {
            let vec = v.row(i).to_owned();
            let av = matmul_c(&a.view(), &vec.insert_axis(Axis(1)).view());
            for j in 0..2 {
                let diff = av[[j, 0]] - w[i] * v[[i, j]];
                assert!(diff.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_agrees_with_ndarray_dot() {
        let a = randish(9, 4, 3);
        let b = randish(4, 7, 4);
        let c1 = matmul(&a.view(), &b.view());
        let c2 = a.dot(&b);
        assert!(max_abs(&(&c1 - &c2)) < 1e-13);
    }
}
