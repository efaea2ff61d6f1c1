//! Dense exact evolution of small chains.
//!
//! Everything here is deliberately brute-force: full `d^L × d^L` matrices,
//! eigendecomposition-based propagation, digit-indexed local expectations.
//! It exists to validate the tensor-network engine, the observable
//! extraction, and the model constructions on desk-scale systems, and is
//! guarded to `d^L ≤ 4096`.

use crate::algebra::{self, LocalOperator, ModelSpec, TermLayer};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mpdo::{ChargeSpec, Mpdo};
use ndarray::prelude::*;
use num_complex::Complex64 as C64;

/// Default memory guard: largest Hilbert-space dimension handled densely.
pub const DENSE_GUARD: usize = 4096;

fn hilbert_dim(l: usize, d: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..l {
        n = n.checked_mul(d).ok_or_else(|| Error::Resource("d^L overflows".into()))?;
        if n > DENSE_GUARD {
            return Err(Error::Resource(format!(
                "dense oracle guarded to d^L ≤ {DENSE_GUARD}, got {d}^{l}"
            )));
        }
    }
    Ok(n)
}

/// Digit of `idx` at `site` (1-based, site 1 most significant).
#[inline]
fn digit(idx: usize, site: usize, l: usize, d: usize) -> usize {
    (idx / d.pow((l - site) as u32)) % d
}

#[inline]
fn stride(site: usize, l: usize, d: usize) -> usize {
    d.pow((l - site) as u32)
}

/// Full density matrix of a small chain.
#[derive(Debug, Clone)]
pub struct DenseState {
    pub rho: Array2<C64>,
    pub l: usize,
    pub d: usize,
}

impl DenseState {
    pub fn new(rho: Array2<C64>, l: usize, d: usize) -> Result<Self> {
        let n = hilbert_dim(l, d)?;
        if rho.dim() != (n, n) {
            return Err(Error::Argument(format!(
                "density matrix has shape {:?}, expected ({n},{n})",
                rho.dim()
            )));
        }
        let defect = crate::basis::hermiticity_defect(&rho.view());
        if defect > 1e-12 {
            return Err(Error::Numeric(format!("dense state not Hermitian (defect {defect:.2e})")));
        }
        let tr: C64 = (0..n).map(|i| rho[[i, i]]).sum();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-12 {
            return Err(Error::Numeric(format!("dense state has trace {tr}, expected 1")));
        }
        Ok(Self { rho, l, d })
    }

    /// Contract an MPDO down to its full density matrix.
    pub fn from_mpdo(state: &Mpdo) -> Result<Self> {
        let rho = state.to_dense()?;
        Self::new(rho, state.length(), state.local_dim())
    }

    pub fn trace(&self) -> C64 {
        let n = self.rho.dim().0;
        (0..n).map(|i| self.rho[[i, i]]).sum()
    }

    /// `tr(ρ·O_r)` for a single-site operator at `site` (1-based).
    pub fn site_expectation(&self, op: &LocalOperator, site: usize) -> Result<C64> {
        let (l, d) = (self.l, self.d);
        if site < 1 || site > l {
            return Err(Error::Argument(format!("site {site} out of range 1..={l}")));
        }
        if op.dim != d {
            return Err(Error::Argument(format!(
                "operator '{}' has dimension {}, chain has d = {d}",
                op.label, op.dim
            )));
        }
        let n = self.rho.dim().0;
        let s = stride(site, l, d);
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            let c = digit(i, site, l, d);
            let base = i - c * s;
            for a in 0..d {
                let j = base + a * s;
                acc += self.rho[[i, j]] * op.entries[[a, c]];
            }
        }
        Ok(acc)
    }

    /// Per-site `⟨q̂_r⟩` (raw, not κ-normalized). Diagonal fast path.
    pub fn charge_profile(&self, q: &ChargeSpec) -> Result<Vec<f64>> {
        let (l, d) = (self.l, self.d);
        if q.op.dim != d {
            return Err(Error::Argument("charge dimension mismatch".into()));
        }
        let n = self.rho.dim().0;
        let mut out = vec![0.0f64; l];
        for i in 0..n {
            let p = self.rho[[i, i]].re;
            if p == 0.0 {
                continue;
            }
            for site in 1..=l {
                let c = digit(i, site, l, d);
                out[site - 1] += p * q.op.entries[[c, c]].re;
            }
        }
        Ok(out)
    }

    /// `tr(ρ·h_{r,r+1})` for every bond, `h` a `d²×d²` matrix indexed
    /// row-major over `(site_r, site_{r+1})`.
    pub fn bond_expectations(&self, h: &ArrayView2<C64>) -> Result<Vec<C64>> {
        let (l, d) = (self.l, self.d);
        if h.dim() != (d * d, d * d) {
            return Err(Error::Argument(format!(
                "bond operator has shape {:?}, expected ({}, {})",
                h.dim(),
                d * d,
                d * d
            )));
        }
        let n = self.rho.dim().0;
        let mut out = Vec::with_capacity(l - 1);
        for site in 1..l {
            let si = stride(site, l, d);
            let sj = stride(site + 1, l, d);
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..n {
                let a = digit(i, site, l, d);
                let b = digit(i, site + 1, l, d);
                let base = i - a * si - b * sj;
                let col = a * d + b;
                for a2 in 0..d {
                    for b2 in 0..d {
                        let j = base + a2 * si + b2 * sj;
                        acc += self.rho[[i, j]] * h[[a2 * d + b2, col]];
                    }
                }
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// `tr(ρ·O)` against a full-size operator.
    pub fn expectation_full(&self, op: &ArrayView2<C64>) -> C64 {
        let n = self.rho.dim().0;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                acc += self.rho[[i, j]] * op[[j, i]];
            }
        }
        acc
    }
}

/// Assemble the full Hamiltonian by identity-padding every term of the
/// model (bond multipliers and next-nearest couplings included).
pub fn dense_hamiltonian(spec: &ModelSpec) -> Result<Array2<C64>> {
    dense_hamiltonian_filtered(spec, None)
}

/// Same as [`dense_hamiltonian`] but keeping only terms of one layer —
/// used to compose Trotter/Floquet layer maps exactly.
pub fn dense_hamiltonian_filtered(
    spec: &ModelSpec,
    layer: Option<TermLayer>,
) -> Result<Array2<C64>> {
    spec.validate()?;
    let (l, d) = (spec.length, spec.local_dim);
    let n = hilbert_dim(l, d)?;
    let terms = algebra::assemble_terms(spec)?;
    let mut h = Array2::<C64>::zeros((n, n));
    for term in &terms {
        if let Some(want) = layer {
            if term.layer != want {
                continue;
            }
        }
        let (i, j) = term.sites;
        let si = stride(i, l, d);
        let sj = stride(j, l, d);
        for idx in 0..n {
            let a = digit(idx, i, l, d);
            let b = digit(idx, j, l, d);
            let base = idx - a * si - b * sj;
            let col = a * d + b;
            for a2 in 0..d {
                for b2 in 0..d {
                    let row_idx = base + a2 * si + b2 * sj;
                    let v = term.matrix[[a2 * d + b2, col]];
                    if v != C64::new(0.0, 0.0) {
                        h[[row_idx, idx]] += v;
                    }
                }
            }
        }
    }
    Ok(h)
}

/// Cached eigendecomposition of a Hamiltonian, for repeated propagation.
pub struct ExactPropagator {
    evals: Array1<f64>,
    /// Row `i` is eigenvector `i`.
    evecs: Array2<C64>,
}

impl ExactPropagator {
    pub fn new(h: &ArrayView2<C64>) -> Result<Self> {
        let defect = crate::basis::hermiticity_defect(h);
        if defect > 1e-10 {
            return Err(Error::Numeric(format!("Hamiltonian not Hermitian (defect {defect:.2e})")));
        }
        let (evals, evecs) = linalg::eigh_c(h)?;
        Ok(Self { evals, evecs })
    }

    /// `ρ(t) = e^{−iHt} ρ e^{+iHt}` through the eigenbasis.
    pub fn evolve(&self, state: &DenseState, t: f64) -> Result<DenseState> {
        let n = self.evals.len();
        if state.rho.dim() != (n, n) {
            return Err(Error::Argument("state/Hamiltonian dimension mismatch".into()));
        }
        let vbar = self.evecs.mapv(|z| z.conj());
        // σ = V̄ ρ Vᵀ  (ρ in the eigenbasis)
        let tmp = linalg::matmul_c(&state.rho.view(), &self.evecs.t());
        let mut sigma = linalg::matmul_c(&vbar.view(), &tmp.view());
        for i in 0..n {
            for j in 0..n {
                let phase = C64::from_polar(1.0, -(self.evals[i] - self.evals[j]) * t);
                sigma[[i, j]] *= phase;
            }
        }
        // ρ(t) = Vᵀ σ V̄
        let tmp = linalg::matmul_c(&sigma.view(), &vbar.view());
        let rho = linalg::matmul_c(&self.evecs.t(), &tmp.view());
        DenseState::new(rho, state.l, state.d)
    }
}

/// One-shot convenience wrapper over [`ExactPropagator`].
pub fn exact_evolve(state: &DenseState, h: &ArrayView2<C64>, t: f64) -> Result<DenseState> {
    ExactPropagator::new(h)?.evolve(state, t)
}

/// Per-probe-time deviation between two trajectories on a common grid.
#[derive(Debug, Clone)]
pub struct DeviationReport {
    pub times: Vec<f64>,
    pub max_abs: Vec<f64>,
    pub l2: Vec<f64>,
}

impl DeviationReport {
    /// Largest max-abs deviation over all probe times.
    pub fn worst(&self) -> f64 {
        self.max_abs.iter().copied().fold(0.0, f64::max)
    }
}

/// Compare two `(time × site)` trajectories sampled on the same probe grid.
pub fn compare_trajectories(
    times_a: &[f64],
    values_a: &ArrayView2<f64>,
    times_b: &[f64],
    values_b: &ArrayView2<f64>,
) -> Result<DeviationReport> {
    if times_a.len() != times_b.len() || values_a.dim() != values_b.dim() {
        return Err(Error::Data(format!(
            "trajectory grids do not match: {} × {:?} vs {} × {:?}",
            times_a.len(),
            values_a.dim(),
            times_b.len(),
            values_b.dim()
        )));
    }
    if values_a.dim().0 != times_a.len() {
        return Err(Error::Data("trajectory row count does not match probe times".into()));
    }
    for (ta, tb) in times_a.iter().zip(times_b.iter()) {
        if (ta - tb).abs() > 1e-9 {
            return Err(Error::Data(format!("probe grids differ: t = {ta} vs {tb}")));
        }
    }
    let mut max_abs = Vec::with_capacity(times_a.len());
    let mut l2 = Vec::with_capacity(times_a.len());
    for (ra, rb) in values_a.outer_iter().zip(values_b.outer_iter()) {
        let mut m = 0.0f64;
        let mut s = 0.0f64;
        for (a, b) in ra.iter().zip(rb.iter()) {
            let dv = (a - b).abs();
            m = m.max(dv);
            s += dv * dv;
        }
        max_abs.push(m);
        l2.push(s.sqrt());
    }
    Ok(DeviationReport { times: times_a.to_vec(), max_abs, l2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Family;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dense_hamiltonian_su2_l2_is_swap() {
        let spec = ModelSpec::uniform(Family::Su, 2, 2);
        let h = dense_hamiltonian(&spec).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for m in 0..2 {
                        let expect = if i == m && j == k { 1.0 } else { 0.0 };
                        let got = h[[i * 2 + j, k * 2 + m]];
                        assert_abs_diff_eq!(got.re, expect, epsilon = 1e-15);
                        assert_abs_diff_eq!(got.im, 0.0, epsilon = 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn dense_hamiltonian_hermitian_across_families() {
        let specs = [
            ModelSpec::uniform(Family::Su, 3, 4),
            ModelSpec::uniform(Family::So, 3, 4),
            ModelSpec::uniform(Family::Super { m: 1, n: 2 }, 3, 4),
            {
                let mut s = ModelSpec::uniform(Family::IzerginKorepin, 3, 4);
                s.delta = 0.3;
                s
            },
            {
                let mut s = ModelSpec::uniform(Family::Xxz, 2, 6);
                s.delta = 0.5;
                s.j_nnn = 0.4;
                s
            },
        ];
        for spec in &specs {
            let h = dense_hamiltonian(spec).unwrap();
            let defect = crate::basis::hermiticity_defect(&h.view());
            assert!(defect < 1e-12, "family {} defect {defect:.2e}", spec.family);
        }
    }

    #[test]
    fn dense_hamiltonian_commutes_with_total_charge() {
        let cases = [
            (ModelSpec::uniform(Family::Su, 3, 4), ChargeSpec::weight(3).unwrap()),
            (ModelSpec::uniform(Family::So, 3, 4), ChargeSpec::weight(3).unwrap()),
            (ModelSpec::uniform(Family::Sp, 4, 4), ChargeSpec::weight(4).unwrap()),
            (
                ModelSpec::uniform(Family::Super { m: 1, n: 2 }, 3, 4),
                ChargeSpec::weight(3).unwrap(),
            ),
            (
                {
                    let mut s = ModelSpec::uniform(Family::IzerginKorepin, 3, 4);
                    s.delta = 0.4;
                    s
                },
                ChargeSpec::weight(3).unwrap(),
            ),
            (
                {
                    let mut s = ModelSpec::uniform(Family::Xxz, 2, 4);
                    s.delta = 1.0;
                    s
                },
                ChargeSpec::spin_z(2).unwrap(),
            ),
        ];
        for (spec, q) in &cases {
            let h = dense_hamiltonian(spec).unwrap();
            let n = h.dim().0;
            let (l, d) = (spec.length, spec.local_dim);
            // total charge is diagonal: commutator norm computed entrywise
            let mut qtot = vec![0.0f64; n];
            for (i, qv) in qtot.iter_mut().enumerate() {
                for site in 1..=l {
                    *qv += q.op.entries[[digit(i, site, l, d), digit(i, site, l, d)]].re;
                }
            }
            let mut norm2 = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let c = h[[i, j]] * (qtot[j] - qtot[i]);
                    norm2 += c.norm_sqr();
                }
            }
            assert!(
                norm2.sqrt() < 1e-10,
                "family {} commutator norm {:.2e}",
                spec.family,
                norm2.sqrt()
            );
        }
    }

    #[test]
    fn evolve_t_zero_is_identity_and_commuting_states_are_stationary() {
        let spec = ModelSpec::uniform(Family::Su, 2, 4);
        let h = dense_hamiltonian(&spec).unwrap();
        let q = ChargeSpec::spin_z(2).unwrap();
        let wall = Mpdo::domain_wall(4, &q, 0.3).unwrap();
        let state = DenseState::from_mpdo(&wall).unwrap();
        let prop = ExactPropagator::new(&h.view()).unwrap();
        let same = prop.evolve(&state, 0.0).unwrap();
        let diff = (&same.rho - &state.rho).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(diff < 1e-12);
        // a state built from H itself commutes with H and must be stationary
        let n = h.dim().0;
        let mut rho = h.mapv(|z| z * C64::new(0.02, 0.0));
        for i in 0..n {
            rho[[i, i]] += C64::new(1.0, 0.0);
        }
        let tr: C64 = (0..n).map(|i| rho[[i, i]]).sum();
        let rho = rho.mapv(|z| z / tr);
        let thermal = DenseState::new(rho, 4, 2).unwrap();
        let moved = prop.evolve(&thermal, 1.3).unwrap();
        let drift = (&moved.rho - &thermal.rho).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(drift < 1e-12, "commuting state drifted by {drift:.2e}");
    }

    #[test]
    fn two_site_wall_oscillates_in_closed_form() {
        // L=2 permutation Hamiltonian (SWAP), wall (1±μ·2Sz)/2 ⊗ ...:
        // ⟨Sz_1(t)⟩ = μ·κ·cos(2t) with κ = 1/4 — the cross term vanishes
        // because tr((X⊗Y)·SWAP) = tr(XY) kills every odd contribution.
        let spec = ModelSpec::uniform(Family::Su, 2, 2);
        let h = dense_hamiltonian(&spec).unwrap();
        let q = ChargeSpec::spin_z(2).unwrap();
        let mu = 0.2;
        let mut rho = Array2::<C64>::zeros((4, 4));
        for a in 0..2 {
            for b in 0..2 {
                let qa = q.op.entries[[a, a]].re;
                let qb = q.op.entries[[b, b]].re;
                rho[[a * 2 + b, a * 2 + b]] =
                    C64::new((1.0 + mu * qa) * (1.0 - mu * qb) / 4.0, 0.0);
            }
        }
        let state = DenseState::new(rho, 2, 2).unwrap();
        let prop = ExactPropagator::new(&h.view()).unwrap();
        for t in [0.0, 0.3, 1.0, 2.5] {
            let moved = prop.evolve(&state, t).unwrap();
            let v = moved.site_expectation(&q.op, 1).unwrap();
            assert_abs_diff_eq!(v.re, mu * 0.25 * (2.0 * t).cos(), epsilon = 1e-12);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-13);
        }
        // periodicity: period π
        let a = prop.evolve(&state, 0.7).unwrap().site_expectation(&q.op, 1).unwrap();
        let b = prop
            .evolve(&state, 0.7 + std::f64::consts::PI)
            .unwrap()
            .site_expectation(&q.op, 1)
            .unwrap();
        assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
    }

    #[test]
    fn energy_and_trace_conserved_under_evolution() {
        let spec = ModelSpec::uniform(Family::Su, 3, 4);
        let h = dense_hamiltonian(&spec).unwrap();
        let q = ChargeSpec::weight(3).unwrap();
        let wall = Mpdo::domain_wall(4, &q, 0.3).unwrap();
        let state = DenseState::from_mpdo(&wall).unwrap();
        let prop = ExactPropagator::new(&h.view()).unwrap();
        let e0 = state.expectation_full(&h.view());
        let moved = prop.evolve(&state, 1.7).unwrap();
        let e1 = moved.expectation_full(&h.view());
        assert!((e0 - e1).norm() < 1e-10, "energy drifted by {:.2e}", (e0 - e1).norm());
        assert!((moved.trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(crate::basis::hermiticity_defect(&moved.rho.view()) < 1e-12);
    }

    #[test]
    fn dense_expectations_match_mpdo_expectations() {
        let spec = ModelSpec::uniform(Family::Su, 3, 4);
        let state = Mpdo::energy_domain_wall(&spec, 0.05).unwrap();
        let dense = DenseState::from_mpdo(&state).unwrap();
        let q = ChargeSpec::spin_z(3).unwrap();
        let mpdo_sites = state.site_expectations(&q.op).unwrap();
        for (r, expect) in mpdo_sites.iter().enumerate() {
            let got = dense.site_expectation(&q.op, r + 1).unwrap();
            assert!((got - expect).norm() < 1e-12);
        }
        let hpair = algebra::pair_coupling(&spec).unwrap().entries;
        let mpdo_bonds = state.pair_expectations_all_bonds(&hpair.view()).unwrap();
        let dense_bonds = dense.bond_expectations(&hpair.view()).unwrap();
        for (a, b) in mpdo_bonds.iter().zip(dense_bonds.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        // charge_profile fast path agrees with site_expectation
        let prof = dense.charge_profile(&q).unwrap();
        for (r, &v) in prof.iter().enumerate() {
            let got = dense.site_expectation(&q.op, r + 1).unwrap();
            assert_abs_diff_eq!(v, got.re, epsilon = 1e-13);
        }
    }

    #[test]
    fn guard_rejects_large_chains() {
        let spec = ModelSpec::uniform(Family::Su, 3, 8); // 3^8 = 6561 > 4096
        match dense_hamiltonian(&spec) {
            Err(Error::Resource(_)) => {}
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_comparison() {
        let times = [0.0, 0.5, 1.0];
        let a = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let report = compare_trajectories(&times, &a.view(), &times, &a.view()).unwrap();
        assert_eq!(report.worst(), 0.0);
        let mut b = a.clone();
        b[[2, 1]] += 1e-3;
        let report = compare_trajectories(&times, &a.view(), &times, &b.view()).unwrap();
        assert_abs_diff_eq!(report.worst(), 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(report.max_abs[0], 0.0, epsilon = 1e-15);
        let bad_times = [0.0, 0.6, 1.0];
        assert!(compare_trajectories(&times, &a.view(), &bad_times, &a.view()).is_err());
        let c = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert!(compare_trajectories(&times, &a.view(), &times, &c.view()).is_err());
    }
}
