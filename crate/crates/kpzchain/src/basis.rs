//! Orthonormal Hermitian operator basis for a `d`-level site.
//!
//! A density operator on one site is expanded as `ρ = Σ_a c_a B_a` where the
//! `B_a` are `d²` Hermitian matrices, orthonormal under the Hilbert–Schmidt
//! inner product `tr(B_a B_b) = δ_ab`, with `B_0 = 1/√d`. Because the basis is
//! Hermitian, a Hermitian `ρ` has **real** coefficients `c_a = tr(B_a ρ)`, and
//! conjugation by any unitary acts on the coefficient vector as a **real
//! orthogonal** matrix. A matrix-product state over these coefficients can
//! therefore be stored entirely in `f64`, Hermiticity of the represented
//! operator is structural rather than numerical, and the trace is a linear
//! function of the `a = 0` components alone.
//!
//! Basis ordering (fixed, relied upon throughout the crate):
//! 1. index `0`: `1/√d`;
//! 2. indices `1..d-1`: traceless diagonals
//!    `diag(1,…,1,−k,0,…,0)/√(k(k+1))` with `k` leading ones;
//! 3. for each pair `α < β` in lexicographic order, two indices:
//!    `(S^{αβ} + S^{βα})/√2` followed by `i(S^{βα} − S^{αβ})/√2`.
//!
//! For `d = 2` this is `{1/√2, σ_z/√2, σ_x/√2, σ_y/√2}`.

use crate::error::{Error, Result};
use crate::linalg;
use ndarray::prelude::*;
use num_complex::Complex64 as C64;

/// Tolerance for "this matrix is Hermitian" checks on inputs.
const HERMITICITY_TOL: f64 = 1e-10;
/// Tolerance for the imaginary parts that must vanish identically
/// (gate superoperators, coefficients of Hermitian operators).
const REALNESS_TOL: f64 = 1e-11;

/// The fixed orthonormal Hermitian basis for one `d`-level site.
#[derive(Debug, Clone)]
pub struct OperatorBasis {
    d: usize,
    mats: Vec<Array2<C64>>,
}

impl OperatorBasis {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Argument(format!("operator basis needs d ≥ 2, got {d}")));
        }
        let mut mats = Vec::with_capacity(d * d);
        let inv_sqrt_d = C64::new(1.0 / (d as f64).sqrt(), 0.0);
        mats.push(Array2::from_diag_elem(d, inv_sqrt_d));
        for k in 1..d {
            let norm = 1.0 / ((k * (k + 1)) as f64).sqrt();
            let mut m = Array2::zeros((d, d));
            for i in 0..k {
                m[[i, i]] = C64::new(norm, 0.0);
            }
            m[[k, k]] = C64::new(-(k as f64) * norm, 0.0);
            mats.push(m);
        }
        let inv_sqrt2 = 1.0 / 2f64.sqrt();
        for alpha in 0..d {
            for beta in (alpha + 1)..d {
                let mut x = Array2::zeros((d, d));
                x[[alpha, beta]] = C64::new(inv_sqrt2, 0.0);
                x[[beta, alpha]] = C64::new(inv_sqrt2, 0.0);
                mats.push(x);
                let mut y = Array2::zeros((d, d));
                y[[alpha, beta]] = C64::new(0.0, -inv_sqrt2);
                y[[beta, alpha]] = C64::new(0.0, inv_sqrt2);
                mats.push(y);
            }
        }
        debug_assert_eq!(mats.len(), d * d);
        Ok(Self { d, mats })
    }

    pub fn local_dim(&self) -> usize {
        self.d
    }

    /// Number of basis elements, `d²`.
    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn element(&self, a: usize) -> &Array2<C64> {
        &self.mats[a]
    }

    /// Real coefficients of a Hermitian operator: `c_a = tr(B_a · op)`.
    ///
    /// Errors if `op` is not Hermitian within tolerance (the real expansion
    /// would silently drop its anti-Hermitian part).
    pub fn coefficients(&self, op: &ArrayView2<C64>) -> Result<Array1<f64>> {
        let d = self.d;
        if op.dim() != (d, d) {
            return Err(Error::Argument(format!(
                "coefficients: expected {d}×{d} operator, got {:?}",
                op.dim()
            )));
        }
        let herm_defect = hermiticity_defect(op);
        if herm_defect > HERMITICITY_TOL {
            return Err(Error::Argument(format!(
                "coefficients: operator is not Hermitian (defect {herm_defect:.2e})"
            )));
        }
        let mut c = Array1::zeros(self.len());
        for (a, b) in self.mats.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..d {
                for j in 0..d {
                    acc += b[[i, j]] * op[[j, i]];
                }
            }
            debug_assert!(acc.im.abs() < REALNESS_TOL * (1.0 + acc.re.abs()));
            c[a] = acc.re;
        }
        Ok(c)
    }

    /// Complex overlaps `w_a = tr(op · B_a)` of an arbitrary operator.
    ///
    /// An expectation value against a site with coefficient vector `c` is
    /// `Σ_a c_a w_a`; for Hermitian `op` the overlaps are real.
    pub fn overlaps(&self, op: &ArrayView2<C64>) -> Result<Array1<C64>> {
        let d = self.d;
        if op.dim() != (d, d) {
            return Err(Error::Argument(format!(
                "overlaps: expected {d}×{d} operator, got {:?}",
                op.dim()
            )));
        }
        let mut w = Array1::zeros(self.len());
        for (a, b) in self.mats.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..d {
                for j in 0..d {
                    acc += op[[i, j]] * b[[j, i]];
                }
            }
            w[a] = acc;
        }
        Ok(w)
    }

    /// Rebuild the operator `Σ_a c_a B_a` from real coefficients.
    pub fn reconstruct(&self, c: &ArrayView1<f64>) -> Result<Array2<C64>> {
        if c.len() != self.len() {
            return Err(Error::Argument(format!(
                "reconstruct: expected {} coefficients, got {}",
                self.len(),
                c.len()
            )));
        }
        let mut out = Array2::zeros((self.d, self.d));
        for (a, b) in self.mats.iter().enumerate() {
            let ca = C64::new(c[a], 0.0);
            out.zip_mut_with(b, |o, &x| *o += ca * x);
        }
        Ok(out)
    }

    /// Two-site basis element `B_a ⊗ B_b` (left factor = left site), for the
    /// composite index `A = a·d² + b`.
    pub fn pair_element(&self, a: usize, b: usize) -> Array2<C64> {
        kron(&self.mats[a].view(), &self.mats[b].view())
    }

    /// Complex overlaps `w[p, q] = tr(op · (B_p ⊗ B_q))` of a two-site
    /// operator; the pair analogue of [`Self::overlaps`].
    pub fn pair_overlaps(&self, op: &ArrayView2<C64>) -> Result<Array2<C64>> {
        let dd = self.d * self.d;
        if op.dim() != (dd, dd) {
            return Err(Error::Argument(format!(
                "pair_overlaps: expected {dd}×{dd} operator, got {:?}",
                op.dim()
            )));
        }
        let mut w = Array2::zeros((dd, dd));
        for p in 0..dd {
            for q in 0..dd {
                let b = self.pair_element(p, q);
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..dd {
                    for j in 0..dd {
                        acc += op[[i, j]] * b[[j, i]];
                    }
                }
                w[[p, q]] = acc;
            }
        }
        Ok(w)
    }

    /// Real expansion coefficients `H[p, q]` of a Hermitian two-site operator:
    /// `op = Σ_{p,q} H[p,q] · B_p ⊗ B_q`.
    pub fn pair_coefficients(&self, op: &ArrayView2<C64>) -> Result<Array2<f64>> {
        let defect = hermiticity_defect(op);
        if defect > HERMITICITY_TOL {
            return Err(Error::Argument(format!(
                "pair_coefficients: operator is not Hermitian (defect {defect:.2e})"
            )));
        }
        let w = self.pair_overlaps(op)?;
        let mut out = Array2::zeros(w.dim());
        for (o, &z) in out.iter_mut().zip(w.iter()) {
            debug_assert!(z.im.abs() < REALNESS_TOL * (1.0 + z.re.abs()));
            *o = z.re;
        }
        Ok(out)
    }

    /// Real orthogonal superoperator of conjugation by a two-site unitary.
    ///
    /// `G[A, B] = tr((B_a ⊗ B_b) · U · (B_c ⊗ B_e) · U†)` with composite
    /// indices `A = a·d² + b`, `B = c·d² + e`. `G` acts on the pair's real
    /// coefficient vector: if `ρ' = U ρ U†` then `c' = G c`. `G` is real
    /// because the basis is Hermitian, and orthogonal because conjugation
    /// preserves the Hilbert–Schmidt inner product.
    pub fn pair_gate_superop(&self, u: &ArrayView2<C64>) -> Result<Array2<f64>> {
        let d = self.d;
        let dd = d * d;
        if u.dim() != (dd, dd) {
            return Err(Error::Argument(format!(
                "pair_gate_superop: expected {dd}×{dd} gate, got {:?}",
                u.dim()
            )));
        }
        let unit_defect = unitarity_defect(u);
        if unit_defect > 1e-12 * (dd as f64) {
            return Err(Error::Argument(format!(
                "pair_gate_superop: gate is not unitary (defect {unit_defect:.2e})"
            )));
        }
        let n = dd * dd;
        // Rows of P are the vectorized two-site basis elements; P is unitary.
        let mut p = Array2::<C64>::zeros((n, n));
        for a in 0..dd {
            for b in 0..dd {
                let t = self.pair_element(a, b);
                let row = a * dd + b;
                for (idx, &v) in t.iter().enumerate() {
                    p[[row, idx]] = v;
                }
            }
        }
        // vec(U ρ U†) = (U ⊗ conj(U)) vec(ρ) in row-major vectorization.
        let s = kron(u, &u.mapv(|z| z.conj()).view());
        let ps = linalg::matmul_c(&p.view(), &s.view());
        let p_dag = p.t().mapv(|z| z.conj());
        let g = linalg::matmul_c(&ps.view(), &p_dag.view());
        let mut out = Array2::zeros((n, n));
        let mut max_im = 0.0f64;
        for (o, &z) in out.iter_mut().zip(g.iter()) {
            max_im = max_im.max(z.im.abs());
            *o = z.re;
        }
        if max_im > 1e-10 {
            return Err(Error::Numeric(format!(
                "gate superoperator has non-real entries (max imag {max_im:.2e})"
            )));
        }
        Ok(out)
    }
}

/// Kronecker product with the first factor on the left (slow) index.
pub fn kron(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[[i, j]];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..rb {
                for l in 0..cb {
                    out[[i * rb + k, j * cb + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Max-abs deviation of a square matrix from its own conjugate transpose.
pub fn hermiticity_defect(m: &ArrayView2<C64>) -> f64 {
    let (r, c) = m.dim();
    debug_assert_eq!(r, c);
    let mut defect = 0.0f64;
    for i in 0..r {
        for j in i..c {
            defect = defect.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    defect
}

/// Max-abs deviation of `U†U` from the identity.
pub fn unitarity_defect(u: &ArrayView2<C64>) -> f64 {
    let u_dag = u.t().mapv(|z| z.conj());
    let prod = linalg::matmul_c(&u_dag.view(), u);
    let n = prod.dim().0;
    let mut defect = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            defect = defect.max((prod[[i, j]] - target).norm());
        }
    }
    defect
}

/// Matrix exponential `exp(−i·H·t)` of a Hermitian matrix, via
/// eigendecomposition. The workhorse for building Trotter gates.
pub fn expm_i(h: &ArrayView2<C64>, t: f64) -> Result<Array2<C64>> {
    let defect = hermiticity_defect(h);
    if defect > 1e-10 {
        return Err(Error::Argument(format!(
            "expm_i: generator is not Hermitian (defect {defect:.2e})"
        )));
    }
    let (w, v) = linalg::eigh_c(h)?;
    let n = w.len();
    // eigh_c returns eigenvector i in row i: H = Vᵀ · diag(w) · conj(V), so
    // exp(−iHt) = Vᵀ · diag(exp(−i w t)) · conj(V).
    let mut phased = Array2::zeros((n, n));
    for i in 0..n {
        let phase = C64::from_polar(1.0, -w[i] * t);
        for j in 0..n {
            phased[[i, j]] = phase * v[[i, j]].conj();
        }
    }
    let vt = v.t().to_owned();
    Ok(linalg::matmul_c(&vt.view(), &phased.view()))
}
