//! Matrix-product density operators over the real Hermitian operator basis.
//!
//! Each site carries a rank-3 tensor `A[l, p, r]` of **real** coefficients:
//! the physical index `p` (size `d²`) labels the orthonormal Hermitian basis
//! of [`crate::basis::OperatorBasis`], so the represented operator is
//!
//! ```text
//!   ρ = Σ  (A_1 A_2 ⋯ A_L)[p_1, …, p_L] · B_{p_1} ⊗ ⋯ ⊗ B_{p_L} .
//! ```
//!
//! Consequences used throughout:
//! * Hermiticity is structural — real coefficients on a Hermitian basis can
//!   only represent Hermitian operators, so the Hermiticity drift of any
//!   evolution in this representation is identically zero.
//! * `tr(B_p) = √d·δ_{p,0}`, so the trace is the product of the per-site
//!   `p = 0` slices — a cheap `O(L·χ²)` contraction.
//! * Unitary conjugation acts as a real orthogonal matrix on coefficients
//!   (see [`crate::basis::OperatorBasis::pair_gate_superop`]), keeping the
//!   whole time evolution in `f64`.
//!
//! Bond `k` (`0..=L`) sits left of site `k` (0-based); bonds `0` and `L` have
//! dimension 1. The domain wall of the initial states sits between sites
//! `L/2` and `L/2 + 1` (1-based).

use crate::algebra::{self, LocalOperator, ModelSpec, TermLayer};
use crate::basis::OperatorBasis;
use crate::error::{Error, Result};
use crate::linalg;
use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

/// A diagonal traceless charge operator together with its normalization
/// `κ = tr(q̂²)/d`, so that the normalized polarization `⟨q̂⟩/κ` of the
/// domain-wall states is `±μ` regardless of the charge chosen.
#[derive(Debug, Clone)]
pub struct ChargeSpec {
    pub op: LocalOperator,
    pub norm_kappa: f64,
}

impl ChargeSpec {
    pub fn new(op: LocalOperator) -> Result<Self> {
        let d = op.dim;
        let mut trace = C64::new(0.0, 0.0);
        let mut sq = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                if i != j && op.entries[[i, j]].norm() > 1e-14 {
                    return Err(Error::Argument(format!(
                        "charge operator '{}' must be diagonal",
                        op.label
                    )));
                }
            }
            let z = op.entries[[i, i]];
            if z.im.abs() > 1e-14 {
                return Err(Error::Argument(format!(
                    "charge operator '{}' must be real diagonal",
                    op.label
                )));
            }
            trace += z;
            sq += z.re * z.re;
        }
        if trace.norm() > 1e-12 {
            return Err(Error::Argument(format!(
                "charge operator '{}' must be traceless (trace {trace})",
                op.label
            )));
        }
        let norm_kappa = sq / d as f64;
        if norm_kappa <= 0.0 {
            return Err(Error::Argument("charge operator must be nonzero".into()));
        }
        Ok(Self { op, norm_kappa })
    }

    /// The spin-z charge `diag(s, s−1, …, −s)` with `s = (d−1)/2`.
    pub fn spin_z(d: usize) -> Result<Self> {
        let (_, _, sz) = algebra::spin_matrices(d)?;
        Self::new(LocalOperator::new(sz, "Sz")?)
    }

    /// The weight charge `S^{1,1} − S^{d,d}` (`diag(1, 0, …, 0, −1)`).
    pub fn weight(d: usize) -> Result<Self> {
        let mut q = Array2::zeros((d, d));
        q[[0, 0]] = C64::new(1.0, 0.0);
        q[[d - 1, d - 1]] = C64::new(-1.0, 0.0);
        Self::new(LocalOperator::new(q, "q")?)
    }

    /// The inequivalent three-level charge `diag(1, 1, −2)`
    /// (`S^{1,1} + S^{2,2} − 2·S^{3,3}`).
    pub fn three_level_alternate() -> Result<Self> {
        let mut q = Array2::<C64>::zeros((3, 3));
        q[[0, 0]] = C64::new(1.0, 0.0);
        q[[1, 1]] = C64::new(1.0, 0.0);
        q[[2, 2]] = C64::new(-2.0, 0.0);
        Self::new(LocalOperator::new(q, "q_alt")?)
    }

    /// Largest eigenvalue magnitude (diagonal, so just the max |entry|).
    pub fn max_abs_eigenvalue(&self) -> f64 {
        (0..self.op.dim).map(|i| self.op.entries[[i, i]].re.abs()).fold(0.0, f64::max)
    }
}

/// Explicit product-state description: one density matrix per site.
#[derive(Debug, Clone)]
pub struct ProductStateRecipe {
    pub per_site_density: Vec<Array2<C64>>,
    pub mu: f64,
    pub delta_mag: f64,
    pub hole_density: f64,
}

impl ProductStateRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.per_site_density.len() < 2 {
            return Err(Error::Argument("product state needs at least 2 sites".into()));
        }
        let d = self.per_site_density[0].dim().0;
        for (r, rho) in self.per_site_density.iter().enumerate() {
            if rho.dim() != (d, d) {
                return Err(Error::Argument(format!(
                    "site {} density has shape {:?}, expected ({d},{d})",
                    r + 1,
                    rho.dim()
                )));
            }
            let defect = crate::basis::hermiticity_defect(&rho.view());
            if defect > 1e-12 {
                return Err(Error::Argument(format!(
                    "site {} density is not Hermitian (defect {defect:.2e})",
                    r + 1
                )));
            }
            let tr: C64 = (0..d).map(|i| rho[[i, i]]).sum();
            if (tr - C64::new(1.0, 0.0)).norm() > 1e-12 {
                return Err(Error::Argument(format!("site {} density has trace {tr}, expected 1", r + 1)));
            }
            let (w, _) = linalg::eigh_c(&rho.view())?;
            if w[0] < -1e-12 {
                return Err(Error::Argument(format!(
                    "site {} density is not positive semidefinite (min eigenvalue {:.2e})",
                    r + 1,
                    w[0]
                )));
            }
        }
        Ok(())
    }
}

/// Matrix-product density operator (see module docs for conventions).
#[derive(Debug, Clone)]
pub struct Mpdo {
    pub(crate) basis: OperatorBasis,
    pub(crate) tensors: Vec<Array3<f64>>,
    pub(crate) gauge_center: Option<usize>,
}

impl Mpdo {
    // ---------- constructors ----------

    pub(crate) fn from_tensors(basis: OperatorBasis, tensors: Vec<Array3<f64>>) -> Result<Self> {
        if tensors.len() < 2 {
            return Err(Error::Argument("an MPDO needs at least 2 sites".into()));
        }
        let dd = basis.len();
        let mut left = 1usize;
        for (r, t) in tensors.iter().enumerate() {
            let (l, p, _) = t.dim();
            if l != left || p != dd {
                return Err(Error::Argument(format!(
                    "site {} tensor has shape {:?}, expected left bond {left} and physical {dd}",
                    r + 1,
                    t.dim()
                )));
            }
            left = t.dim().2;
        }
        if left != 1 {
            return Err(Error::Argument("rightmost bond dimension must be 1".into()));
        }
        Ok(Self { basis, tensors, gauge_center: None })
    }

    /// The maximally mixed state `(1/d)^{⊗L}`: bond dimension 1 everywhere.
    pub fn infinite_temperature(l: usize, d: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::Argument(format!("need L ≥ 2 sites, got {l}")));
        }
        let basis = OperatorBasis::new(d)?;
        let dd = basis.len();
        let mut tensors = Vec::with_capacity(l);
        for _ in 0..l {
            let mut t = Array3::zeros((1, dd, 1));
            t[[0, 0, 0]] = 1.0 / (d as f64).sqrt();
            tensors.push(t);
        }
        Self::from_tensors(basis, tensors)
    }

    /// Build a product state from explicit per-site densities.
    pub fn from_recipe(recipe: &ProductStateRecipe) -> Result<Self> {
        recipe.validate()?;
        let d = recipe.per_site_density[0].dim().0;
        let basis = OperatorBasis::new(d)?;
        let dd = basis.len();
        let mut tensors = Vec::with_capacity(recipe.per_site_density.len());
        for rho in &recipe.per_site_density {
            let c = basis.coefficients(&rho.view())?;
            let mut t = Array3::zeros((1, dd, 1));
            for p in 0..dd {
                t[[0, p, 0]] = c[p];
            }
            tensors.push(t);
        }
        Self::from_tensors(basis, tensors)
    }

    fn check_wall_length(l: usize) -> Result<()> {
        if l < 4 || l % 2 != 0 {
            return Err(Error::Argument(format!(
                "domain-wall states need even L ≥ 4, got {l}"
            )));
        }
        Ok(())
    }

    /// Weak charge domain wall: `(1+μq̂)/d` on the left half, `(1−μq̂)/d` on
    /// the right; normalized polarization `±μ`.
    pub fn domain_wall(l: usize, q: &ChargeSpec, mu: f64) -> Result<Self> {
        Self::magnetized_domain_wall(l, q, mu, 0.0)
    }

    /// Domain wall on top of a uniform magnetization: per-site factor
    /// `(1 + (δ±μ)q̂)/d`, `+` on the left half.
    pub fn magnetized_domain_wall(l: usize, q: &ChargeSpec, mu: f64, delta_mag: f64) -> Result<Self> {
        Self::check_wall_length(l)?;
        let bound = 1.0 / q.max_abs_eigenvalue();
        if (mu.abs() + delta_mag.abs()) >= bound {
            return Err(Error::Argument(format!(
                "positivity requires |μ| + |δ| < 1/max|eig(q̂)| = {bound:.6}, got |{mu}| + |{delta_mag}|"
            )));
        }
        let d = q.op.dim;
        let mut sites = Vec::with_capacity(l);
        for r in 1..=l {
            let amp = if r <= l / 2 { delta_mag + mu } else { delta_mag - mu };
            let mut rho = Array2::from_diag_elem(d, C64::new(1.0 / d as f64, 0.0));
            for i in 0..d {
                rho[[i, i]] += C64::new(amp * q.op.entries[[i, i]].re / d as f64, 0.0);
            }
            sites.push(rho);
        }
        Self::from_recipe(&ProductStateRecipe {
            per_site_density: sites,
            mu,
            delta_mag,
            hole_density: 0.0,
        })
    }

    /// Spin-sector domain wall for the graded families, keeping the other
    /// charge density uniform.
    ///
    /// * `super(1|2)` (levels ordered hole, up, down): per-site
    ///   `diag(n_h, (1−n_h)(1±μ)/2, (1−n_h)(1∓μ)/2)`; the hole density is
    ///   uniform and the sector-relative spin polarization is `±μ`.
    /// * `super(2|2)` (levels ordered doublon, vacancy, up, down): the
    ///   domain wall lives in the doublon−vacancy charge,
    ///   `diag((1−n_s)(1±μ)/2, (1−n_s)(1∓μ)/2, n_s/2, n_s/2)`, with the
    ///   spin-sector density `n_s` (passed as `sector_density`) uniform.
    pub fn sector_domain_wall(
        l: usize,
        family: algebra::Family,
        sector_density: f64,
        mu: f64,
    ) -> Result<Self> {
        Self::check_wall_length(l)?;
        if !(0.0..=1.0).contains(&sector_density) {
            return Err(Error::Argument(format!(
                "sector density must lie in [0, 1], got {sector_density}"
            )));
        }
        if mu.abs() > 1.0 {
            return Err(Error::Argument(format!(
                "sector wall strength must satisfy |μ| ≤ 1, got {mu}"
            )));
        }
        let diag_for = |sign: f64| -> Result<Vec<f64>> {
            let nh = sector_density;
            match family {
                algebra::Family::Super { m: 1, n: 2 } => {
                    Ok(vec![nh, (1.0 - nh) * (1.0 + sign * mu) / 2.0, (1.0 - nh) * (1.0 - sign * mu) / 2.0])
                }
                algebra::Family::Super { m: 2, n: 2 } => Ok(vec![
                    (1.0 - nh) * (1.0 + sign * mu) / 2.0,
                    (1.0 - nh) * (1.0 - sign * mu) / 2.0,
                    nh / 2.0,
                    nh / 2.0,
                ]),
                _ => Err(Error::Unsupported(format!(
                    "sector_domain_wall supports super(1|2) and super(2|2), got {family}"
                ))),
            }
        };
        let left = diag_for(1.0)?;
        let right = diag_for(-1.0)?;
        let d = left.len();
        let to_rho = |diag: &[f64]| {
            let mut rho = Array2::<C64>::zeros((d, d));
            for (i, &v) in diag.iter().enumerate() {
                rho[[i, i]] = C64::new(v, 0.0);
            }
            rho
        };
        let mut sites = Vec::with_capacity(l);
        for r in 1..=l {
            sites.push(to_rho(if r <= l / 2 { &left } else { &right }));
        }
        Self::from_recipe(&ProductStateRecipe {
            per_site_density: sites,
            mu,
            delta_mag: 0.0,
            hole_density: sector_density,
        })
    }

    /// Energy domain wall `ρ = (1/d^L)·(1 + μ_E Σ_r s(r) ĥ_c(r))` built as an
    /// exact MPO, where `ĥ_c(r)` is the **connected part** of the bond-`r`
    /// term and `s(r) = +1` for bonds left of center, `0` on the center bond,
    /// `−1` right of center.
    ///
    /// Using the connected part (both partial traces vanish) keeps every
    /// single-site marginal exactly `1/d` and makes the two-site marginal on
    /// bond `r` exactly `(1 + μ_E s(r) h_c(r))/d²`, so the positivity
    /// precondition is checked on those marginals directly. Deep in each
    /// half, `⟨h_r⟩ − tr(h)/d² = ±μ_E·tr(h_c²)/d²`.
    pub fn energy_domain_wall(spec: &ModelSpec, mu_e: f64) -> Result<Self> {
        spec.validate()?;
        let l = spec.length;
        Self::check_wall_length(l)?;
        if spec.j_nnn != 0.0 {
            return Err(Error::Unsupported(
                "energy_domain_wall is defined for nearest-neighbour chains (j_nnn = 0)".into(),
            ));
        }
        if matches!(spec.drive, algebra::Drive::Floquet { .. }) {
            return Err(Error::Unsupported(
                "energy_domain_wall requires a static Hamiltonian".into(),
            ));
        }
        let d = spec.local_dim;
        let basis = OperatorBasis::new(d)?;
        let dd = basis.len();
        let terms = algebra::assemble_terms(spec)?;
        let sign_of_bond = |r: usize| -> f64 {
            use std::cmp::Ordering::*;
            match r.cmp(&(l / 2)) {
                Less => 1.0,
                Equal => 0.0,
                Greater => -1.0,
            }
        };
        // Per-bond connected couplings in the pair basis, with positivity check.
        let mut closing = vec![None::<Array2<f64>>; l]; // closing[r-1] for bond r
        for t in &terms {
            debug_assert!(t.layer != TermLayer::NextNearest);
            let r = t.sites.0;
            let s = sign_of_bond(r);
            if s == 0.0 {
                continue;
            }
            let coupling = algebra::TwoSiteCoupling {
                dim: d,
                entries: t.matrix.clone(),
                hermitian: true,
                family_tag: spec.family,
            };
            let hc = algebra::connected_part(&coupling);
            // marginal = (1 + μ_E s h_c)/d² must be PSD
            let mut marg = hc.mapv(|z| z * C64::new(mu_e * s, 0.0));
            for i in 0..dd {
                marg[[i, i]] += C64::new(1.0, 0.0);
            }
            let (w, _) = linalg::eigh_c(&marg.view())?;
            if w[0] < -1e-12 {
                return Err(Error::Argument(format!(
                    "energy wall strength μ_E = {mu_e} violates positivity on bond {r} (min marginal eigenvalue {:.3e}/d²)",
                    w[0]
                )));
            }
            let h_pair = basis.pair_coefficients(&hc.view())?;
            closing[r - 1] = Some(h_pair * (mu_e * s / (d * d) as f64));
        }
        // Finite-state MPO over coefficient space. States: 0 = identity
        // prefix, 1 = identity suffix (term closed), 2+p = open term with
        // left physical index p.
        let dim_state = 2 + dd;
        let id_coeff = 1.0 / (d as f64).sqrt();
        let mut tensors = Vec::with_capacity(l);
        for site in 1..=l {
            let starts = site < l && closing[site - 1].is_some(); // bond `site` starts here
            let closes = site > 1 && closing[site - 2].is_some(); // bond `site−1` closes here
            let lw = if site == 1 { 1 } else { dim_state };
            let rw = if site == l { 1 } else { dim_state };
            let mut w = Array3::<f64>::zeros((lw, dd, rw));
            // identity-prefix diagonal: state 0 → 0 (also the all-identity path:
            // at the last site both state 0 and state 1 are accepted).
            let in0 = 0usize;
            if site < l {
                w[[in0, 0, 0]] = id_coeff;
                if site > 1 {
                    w[[1, 0, 1]] = id_coeff;
                }
            } else {
                w[[in0, 0, 0]] = id_coeff;
                w[[1, 0, 0]] += id_coeff;
            }
            if starts {
                for p in 0..dd {
                    w[[in0, p, 2 + p]] = 1.0;
                }
            }
            if closes {
                let h = closing[site - 2].as_ref().unwrap();
                let out1 = if site == l { 0 } else { 1 };
                for p in 0..dd {
                    for q in 0..dd {
                        w[[2 + p, q, out1]] += h[[p, q]];
                    }
                }
            }
            tensors.push(w);
        }
        Self::from_tensors(basis, tensors)
    }

    // ---------- structure queries ----------

    pub fn length(&self) -> usize {
        self.tensors.len()
    }

    pub fn local_dim(&self) -> usize {
        self.basis.local_dim()
    }

    pub fn basis(&self) -> &OperatorBasis {
        &self.basis
    }

    /// Bond dimensions including both trivial edges (`L+1` entries).
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.length() + 1);
        dims.push(1);
        for t in &self.tensors {
            dims.push(t.dim().2);
        }
        dims
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn gauge_center(&self) -> Option<usize> {
        self.gauge_center
    }

    pub fn site_tensor(&self, r: usize) -> &Array3<f64> {
        &self.tensors[r]
    }

    // ---------- contraction ----------

    /// Identity transfer matrix of site `r` (0-based): `√d · A[:, 0, :]`.
    pub(crate) fn identity_transfer(&self, r: usize) -> Array2<f64> {
        let sd = (self.local_dim() as f64).sqrt();
        self.tensors[r].index_axis(Axis(1), 0).to_owned() * sd
    }

    /// Left identity environments: `left[k]` is the row vector at bond `k`
    /// obtained by tracing sites `0..k`; `left[0] = [1]`, and
    /// `left[L]·1 = tr(ρ)`.
    pub(crate) fn left_identity_envs(&self) -> Vec<Array1<f64>> {
        let l = self.length();
        let mut envs = Vec::with_capacity(l + 1);
        envs.push(Array1::from_elem(1, 1.0));
        for r in 0..l {
            let m = self.identity_transfer(r);
            let prev = envs.last().unwrap();
            envs.push(prev.dot(&m));
        }
        envs
    }

    /// Right identity environments: `right[k]` is the column vector at bond
    /// `k` obtained by tracing sites `k..L`; `right[L] = [1]`.
    pub(crate) fn right_identity_envs(&self) -> Vec<Array1<f64>> {
        let l = self.length();
        let mut envs = vec![Array1::from_elem(1, 1.0); l + 1];
        for r in (0..l).rev() {
            let m = self.identity_transfer(r);
            envs[r] = m.dot(&envs[r + 1]);
        }
        envs
    }

    /// `tr(ρ)`.
    pub fn trace(&self) -> f64 {
        let l = self.length();
        let mut v = Array1::from_elem(1, 1.0);
        for r in 0..l {
            v = v.dot(&self.identity_transfer(r));
        }
        v[0]
    }

    /// Complex transfer matrix of site `r` against overlap weights `w`
    /// (`w_p = tr(op·B_p)`), as separate real and imaginary parts.
    fn weighted_transfer(&self, r: usize, w: &Array1<C64>) -> (Array2<f64>, Array2<f64>) {
        let t = &self.tensors[r];
        let (lb, dd, rb) = t.dim();
        let mut re = Array2::zeros((lb, rb));
        let mut im = Array2::zeros((lb, rb));
        for p in 0..dd {
            let wp = w[p];
            if wp.norm_sqr() == 0.0 {
                continue;
            }
            let slice = t.index_axis(Axis(1), p);
            if wp.re != 0.0 {
                re.scaled_add(wp.re, &slice);
            }
            if wp.im != 0.0 {
                im.scaled_add(wp.im, &slice);
            }
        }
        (re, im)
    }

    /// `tr(ρ · ⊗ ops)` for single-site operators on distinct sites
    /// (1-indexed); sites without an operator contribute their trace.
    pub fn expectation(&self, site_ops: &[(usize, &LocalOperator)]) -> Result<C64> {
        let l = self.length();
        let d = self.local_dim();
        let mut ops: Vec<Option<Array1<C64>>> = vec![None; l];
        for (site, op) in site_ops {
            if *site < 1 || *site > l {
                return Err(Error::Argument(format!("site {site} out of range 1..={l}")));
            }
            if op.dim != d {
                return Err(Error::Argument(format!(
                    "operator '{}' has dimension {}, chain has d = {d}",
                    op.label, op.dim
                )));
            }
            if ops[*site - 1].is_some() {
                return Err(Error::Argument(format!("two operators supplied for site {site}")));
            }
            ops[*site - 1] = Some(self.basis.overlaps(&op.entries.view())?);
        }
        let mut vre = Array1::from_elem(1, 1.0f64);
        let mut vim = Array1::zeros(1);
        for r in 0..l {
            match &ops[r] {
                None => {
                    let m = self.identity_transfer(r);
                    vre = vre.dot(&m);
                    vim = vim.dot(&m);
                }
                Some(w) => {
                    let (mre, mim) = self.weighted_transfer(r, w);
                    let nre = vre.dot(&mre) - vim.dot(&mim);
                    let nim = vre.dot(&mim) + vim.dot(&mre);
                    vre = nre;
                    vim = nim;
                }
            }
        }
        Ok(C64::new(vre[0], vim[0]))
    }

    /// Expectation of one operator on every site at once (`O(L·χ²·d²)`).
    pub fn site_expectations(&self, op: &LocalOperator) -> Result<Vec<C64>> {
        let l = self.length();
        if op.dim != self.local_dim() {
            return Err(Error::Argument(format!(
                "operator '{}' has dimension {}, chain has d = {}",
                op.label,
                op.dim,
                self.local_dim()
            )));
        }
        let w = self.basis.overlaps(&op.entries.view())?;
        let left = self.left_identity_envs();
        let right = self.right_identity_envs();
        let mut out = Vec::with_capacity(l);
        for r in 0..l {
            let (mre, mim) = self.weighted_transfer(r, &w);
            let re = left[r].dot(&mre).dot(&right[r + 1]);
            let im = left[r].dot(&mim).dot(&right[r + 1]);
            out.push(C64::new(re, im));
        }
        Ok(out)
    }

    /// Expectation of a (possibly entangled) two-site operator on the bond
    /// `(site, site+1)`, 1-indexed.
    pub fn pair_expectation(&self, site: usize, op: &ArrayView2<C64>) -> Result<C64> {
        let l = self.length();
        if site < 1 || site + 1 > l {
            return Err(Error::Argument(format!("pair ({site},{}) out of range for L = {l}", site + 1)));
        }
        let w = self.basis.pair_overlaps(op)?;
        let left = self.left_identity_envs();
        let right = self.right_identity_envs();
        Ok(self.pair_value(site, &w, &left[site - 1], &right[site + 1]))
    }

    /// Expectation of the same two-site operator on every bond.
    pub fn pair_expectations_all_bonds(&self, op: &ArrayView2<C64>) -> Result<Vec<C64>> {
        let l = self.length();
        let w = self.basis.pair_overlaps(op)?;
        let left = self.left_identity_envs();
        let right = self.right_identity_envs();
        let mut out = Vec::with_capacity(l - 1);
        for site in 1..l {
            out.push(self.pair_value(site, &w, &left[site - 1], &right[site + 1]));
        }
        Ok(out)
    }

    fn pair_value(
        &self,
        site: usize,
        w: &Array2<C64>,
        left: &Array1<f64>,
        right: &Array1<f64>,
    ) -> C64 {
        let dd = self.basis.len();
        let a = &self.tensors[site - 1];
        let b = &self.tensors[site];
        // tmp[p, k] = left · A[:, p, :]
        let mut tmp = Array2::zeros((dd, a.dim().2));
        for p in 0..dd {
            tmp.row_mut(p).assign(&left.dot(&a.index_axis(Axis(1), p)));
        }
        let mut acc = C64::new(0.0, 0.0);
        for q in 0..dd {
            // s_q = Σ_p w[p,q] tmp[p, :]
            let mut sre = Array1::zeros(a.dim().2);
            let mut sim = Array1::zeros(a.dim().2);
            for p in 0..dd {
                let wpq = w[[p, q]];
                if wpq.norm_sqr() == 0.0 {
                    continue;
                }
                if wpq.re != 0.0 {
                    sre.scaled_add(wpq.re, &tmp.row(p));
                }
                if wpq.im != 0.0 {
                    sim.scaled_add(wpq.im, &tmp.row(p));
                }
            }
            let bq = b.index_axis(Axis(1), q);
            acc += C64::new(sre.dot(&bq).dot(right), sim.dot(&bq).dot(right));
        }
        acc
    }

    // ---------- gauge moves ----------

    /// QR-push the gauge center one site to the right (site `r` → `r+1`,
    /// 0-based). Site `r` becomes left-orthonormal.
    pub(crate) fn shift_center_right(&mut self, r: usize) -> Result<()> {
        let t = self.tensors[r].to_owned();
        let (l, p, rr) = t.dim();
        let m = t.into_shape((l * p, rr)).expect("standard layout");
        let (q, rmat) = linalg::qr_thin(&m.view())?;
        let k = q.dim().1;
        self.tensors[r] = q.into_shape((l, p, k)).expect("shape");
        let next = self.tensors[r + 1].to_owned();
        let (nl, np, nr) = next.dim();
        let nm = next.into_shape((nl, np * nr)).expect("standard layout");
        let merged = linalg::matmul(&rmat.view(), &nm.view());
        self.tensors[r + 1] = merged.into_shape((k, np, nr)).expect("shape");
        Ok(())
    }

    /// LQ-push the gauge center one site to the left (site `r` → `r−1`).
    /// Site `r` becomes right-orthonormal.
    pub(crate) fn shift_center_left(&mut self, r: usize) -> Result<()> {
        let t = self.tensors[r].to_owned();
        let (l, p, rr) = t.dim();
        let m = t.into_shape((l, p * rr)).expect("standard layout");
        let (lmat, q) = linalg::lq_thin(&m.view())?;
        let k = q.dim().0;
        self.tensors[r] = q.into_shape((k, p, rr)).expect("shape");
        let prev = self.tensors[r - 1].to_owned();
        let (pl, pp, pr) = prev.dim();
        let pm = prev.into_shape((pl * pp, pr)).expect("standard layout");
        let merged = linalg::matmul(&pm.view(), &lmat.view());
        self.tensors[r - 1] = merged.into_shape((pl, pp, k)).expect("shape");
        Ok(())
    }

    /// Bring the state into mixed-canonical form centered on `target`
    /// (0-based): sites left of it left-orthonormal, sites right of it
    /// right-orthonormal.
    pub fn set_center(&mut self, target: usize) -> Result<()> {
        let l = self.length();
        if target >= l {
            return Err(Error::Argument(format!("gauge center {target} out of range (L = {l})")));
        }
        match self.gauge_center {
            Some(c) if c == target => {}
            Some(c) if c < target => {
                for r in c..target {
                    self.shift_center_right(r)?;
                }
            }
            Some(c) => {
                for r in ((target + 1)..=c).rev() {
                    self.shift_center_left(r)?;
                }
            }
            None => {
                for r in 0..target {
                    self.shift_center_right(r)?;
                }
                for r in ((target + 1)..l).rev() {
                    self.shift_center_left(r)?;
                }
            }
        }
        self.gauge_center = Some(target);
        Ok(())
    }

    // ---------- dense reconstruction ----------

    /// Reconstruct the full density matrix (guarded to `d^L ≤ 4096`).
    pub fn to_dense(&self) -> Result<Array2<C64>> {
        let l = self.length();
        let d = self.local_dim();
        let dim = (d as f64).powi(l as i32);
        if dim > 4096.0 {
            return Err(Error::Resource(format!(
                "dense reconstruction guarded to d^L ≤ 4096, got {d}^{l}"
            )));
        }
        let dim = dim as usize;
        let dd = self.basis.len();
        // acc[k, I, J]: operator-valued left partial contraction with open
        // right bond index k.
        let mut acc = Array3::<C64>::zeros((1, 1, 1));
        acc[[0, 0, 0]] = C64::new(1.0, 0.0);
        for r in 0..l {
            let t = &self.tensors[r];
            let (lb, _, rb) = t.dim();
            let cur = acc.dim().1;
            let mut next = Array3::<C64>::zeros((rb, cur * d, cur * d));
            for p in 0..dd {
                let b = self.basis.element(p);
                for k_out in 0..rb {
                    for k_in in 0..lb {
                        let w = t[[k_in, p, k_out]];
                        if w == 0.0 {
                            continue;
                        }
                        let wc = C64::new(w, 0.0);
                        for bi in 0..cur {
                            for bj in 0..cur {
                                let base = acc[[k_in, bi, bj]];
                                if base == C64::new(0.0, 0.0) {
                                    continue;
                                }
                                let scale = wc * base;
                                for i in 0..d {
                                    for j in 0..d {
                                        next[[k_out, bi * d + i, bj * d + j]] += scale * b[[i, j]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            acc = next;
        }
        debug_assert_eq!(acc.dim(), (1, dim, dim));
        Ok(acc.index_axis(Axis(0), 0).to_owned())
    }

    // ---------- checkpointing ----------

    /// Serialize to the versioned binary checkpoint format:
    /// magic `MPDO`, format version, endianness tag, `L`, `d`, per-site bond
    /// dimensions and row-major `f64` tensor data (little-endian), followed
    /// by a SHA-256 checksum of everything before it.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut body: Vec<u8> = Vec::new();
        body.extend_from_slice(b"MPDO");
        body.extend_from_slice(&1u32.to_le_bytes());
        body.push(1u8); // little-endian payload
        body.extend_from_slice(&(self.length() as u32).to_le_bytes());
        body.extend_from_slice(&(self.local_dim() as u32).to_le_bytes());
        for t in &self.tensors {
            let (l, _, r) = t.dim();
            body.extend_from_slice(&(l as u32).to_le_bytes());
            body.extend_from_slice(&(r as u32).to_le_bytes());
            for &v in t.as_slice().expect("standard layout") {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&body);
        // Atomic write: temp file in the same directory, then rename.
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let tmp = dir.join(format!(
            ".{}.tmp-{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint"),
            std::process::id()
        ));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&body)?;
            f.write_all(&digest)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Load a checkpoint previously written by [`Self::save_checkpoint`].
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        if raw.len() < 32 + 17 {
            return Err(Error::Data("checkpoint file too short".into()));
        }
        let (body, digest) = raw.split_at(raw.len() - 32);
        let expect = Sha256::digest(body);
        if digest != expect.as_slice() {
            return Err(Error::Data("checkpoint checksum mismatch (file corrupted?)".into()));
        }
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > body.len() {
                return Err(Error::Data("checkpoint truncated".into()));
            }
            let s = &body[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != b"MPDO" {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != 1 {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let endian = take(&mut pos, 1)?[0];
        if endian != 1 {
            return Err(Error::Data(format!("unsupported endianness tag {endian}")));
        }
        let l = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let basis = OperatorBasis::new(d)?;
        let dd = basis.len();
        let mut tensors = Vec::with_capacity(l);
        for _ in 0..l {
            let lb = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let rb = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let count = lb * dd * rb;
            let bytes = take(&mut pos, count * 8)?;
            let mut data = Vec::with_capacity(count);
            for c in bytes.chunks_exact(8) {
                data.push(f64::from_le_bytes(c.try_into().unwrap()));
            }
            tensors.push(
                Array3::from_shape_vec((lb, dd, rb), data)
                    .map_err(|e| Error::Data(format!("checkpoint tensor shape: {e}")))?,
            );
        }
        if pos != body.len() {
            return Err(Error::Data("checkpoint has trailing bytes".into()));
        }
        Self::from_tensors(basis, tensors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{Family, ModelSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn infinite_temperature_has_unit_trace_and_zero_charges() {
        for (l, d) in [(4usize, 2usize), (4, 3), (6, 3)] {
            let state = Mpdo::infinite_temperature(l, d).unwrap();
            assert_abs_diff_eq!(state.trace(), 1.0, epsilon = 1e-14);
            let q = ChargeSpec::spin_z(d).unwrap();
            for v in state.site_expectations(&q.op).unwrap() {
                assert!(v.norm() < 1e-14);
            }
            assert_eq!(state.max_bond_dim(), 1);
        }
    }

    #[test]
    fn domain_wall_polarization_matches_trace_algebra() {
        // d=3, q̂ = S^z (κ = 2/3): ⟨S^z⟩ = ±μ·κ = ±0.066667
        let q3 = ChargeSpec::spin_z(3).unwrap();
        assert_abs_diff_eq!(q3.norm_kappa, 2.0 / 3.0, epsilon = 1e-15);
        let state = Mpdo::domain_wall(8, &q3, 0.1).unwrap();
        let vals = state.site_expectations(&q3.op).unwrap();
        for (r, v) in vals.iter().enumerate() {
            let expect = if r < 4 { 0.1 * 2.0 / 3.0 } else { -0.1 * 2.0 / 3.0 };
            assert_abs_diff_eq!(v.re, expect, epsilon = 1e-13);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-14);
        }
        // d=2, q̂ = S^z (κ = 1/4): ⟨S^z⟩ = ±0.05
        let q2 = ChargeSpec::spin_z(2).unwrap();
        assert_abs_diff_eq!(q2.norm_kappa, 0.25, epsilon = 1e-15);
        let state = Mpdo::domain_wall(4, &q2, 0.2).unwrap();
        let vals = state.site_expectations(&q2.op).unwrap();
        assert_abs_diff_eq!(vals[0].re, 0.05, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[3].re, -0.05, epsilon = 1e-14);
    }

    #[test]
    fn domain_wall_mu_zero_is_infinite_temperature() {
        let q = ChargeSpec::spin_z(2).unwrap();
        let a = Mpdo::domain_wall(4, &q, 0.0).unwrap();
        let b = Mpdo::infinite_temperature(4, 2).unwrap();
        for r in 0..4 {
            let diff = (&a.tensors[r] - &b.tensors[r]).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(diff < 1e-15);
        }
    }

    #[test]
    fn domain_wall_reflection_antisymmetry() {
        // The initial profile is odd under spatial reflection alone and odd
        // under μ → −μ alone (so even under the combination).
        let q = ChargeSpec::weight(3).unwrap();
        let l = 8;
        let plus = Mpdo::domain_wall(l, &q, 0.17).unwrap();
        let minus = Mpdo::domain_wall(l, &q, -0.17).unwrap();
        let vp = plus.site_expectations(&q.op).unwrap();
        let vm = minus.site_expectations(&q.op).unwrap();
        for r in 0..l {
            assert_abs_diff_eq!(vp[r].re, -vp[l - 1 - r].re, epsilon = 1e-15);
            assert_abs_diff_eq!(vp[r].re, -vm[r].re, epsilon = 1e-15);
            assert_abs_diff_eq!(vp[r].re, vm[l - 1 - r].re, epsilon = 1e-15);
        }
    }

    #[test]
    fn positivity_bound_is_enforced_and_named() {
        let q = ChargeSpec::weight(2).unwrap(); // eigenvalues ±1 ⇒ bound 1
        let err = Mpdo::domain_wall(4, &q, 1.2).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("positivity"), "message was: {msg}");
        assert!(Mpdo::domain_wall(4, &q, 0.99).is_ok());
        assert!(Mpdo::magnetized_domain_wall(4, &q, 0.6, 0.5).is_err());
    }

    #[test]
    fn magnetized_wall_additivity_and_total_charge() {
        let q = ChargeSpec::spin_z(2).unwrap();
        let l = 8;
        let (mu, delta) = (0.1, 0.1);
        let state = Mpdo::magnetized_domain_wall(l, &q, mu, delta).unwrap();
        let vals = state.site_expectations(&q.op).unwrap();
        for r in 0..l {
            let m = vals[r].re / q.norm_kappa;
            let expect = if r < l / 2 { 0.2 } else { 0.0 };
            assert_abs_diff_eq!(m, expect, epsilon = 1e-13);
        }
        let total: f64 = vals.iter().map(|v| v.re).sum();
        assert_abs_diff_eq!(total, l as f64 * delta * q.norm_kappa, epsilon = 1e-12);
    }

    #[test]
    fn sector_wall_marginals() {
        // n_h = 1/3, μ = 0 → maximally mixed
        let s = Mpdo::sector_domain_wall(4, Family::Super { m: 1, n: 2 }, 1.0 / 3.0, 0.0).unwrap();
        let id3 = Mpdo::infinite_temperature(4, 3).unwrap();
        for r in 0..4 {
            let diff = (&s.tensors[r] - &id3.tensors[r]).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(diff < 1e-14);
        }
        // n_h = 0.2, μ = 0.1 → left marginals (0.2, 0.44, 0.36)
        let s = Mpdo::sector_domain_wall(8, Family::Super { m: 1, n: 2 }, 0.2, 0.1).unwrap();
        for (level, expect) in [(1usize, 0.2), (2, 0.44), (3, 0.36)] {
            let op = algebra::matrix_unit(level, level, 3).unwrap();
            let v = s.expectation(&[(1, &op)]).unwrap();
            assert_abs_diff_eq!(v.re, expect, epsilon = 1e-13);
        }
        // n_h = 0 → two-level domain wall embedded in the spin sector
        let s = Mpdo::sector_domain_wall(4, Family::Super { m: 1, n: 2 }, 0.0, 0.3).unwrap();
        let up = algebra::matrix_unit(2, 2, 3).unwrap();
        let v = s.expectation(&[(1, &up)]).unwrap();
        assert_abs_diff_eq!(v.re, (1.0 + 0.3) / 2.0, epsilon = 1e-13);
        // super(2|2): doublon/vacancy wall with uniform spin density
        let s = Mpdo::sector_domain_wall(4, Family::Super { m: 2, n: 2 }, 0.4, 0.2).unwrap();
        let doublon = algebra::matrix_unit(1, 1, 4).unwrap();
        let spin_up = algebra::matrix_unit(3, 3, 4).unwrap();
        assert_abs_diff_eq!(
            s.expectation(&[(1, &doublon)]).unwrap().re,
            0.6 * 1.2 / 2.0,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(s.expectation(&[(1, &spin_up)]).unwrap().re, 0.2, epsilon = 1e-13);
    }

    #[test]
    fn expectation_factorizes_on_product_states() {
        let q = ChargeSpec::spin_z(3).unwrap();
        let state = Mpdo::domain_wall(8, &q, 0.15).unwrap();
        let single1 = state.expectation(&[(2, &q.op)]).unwrap();
        let single2 = state.expectation(&[(7, &q.op)]).unwrap();
        let joint = state.expectation(&[(2, &q.op), (7, &q.op)]).unwrap();
        assert_abs_diff_eq!(joint.re, (single1 * single2).re, epsilon = 1e-13);
        // identity list → trace
        assert_abs_diff_eq!(state.expectation(&[]).unwrap().re, 1.0, epsilon = 1e-13);
        // site collision rejected
        assert!(state.expectation(&[(2, &q.op), (2, &q.op)]).is_err());
        // out of range rejected
        assert!(state.expectation(&[(9, &q.op)]).is_err());
    }

    #[test]
    fn pair_expectation_matches_product_of_singles() {
        let q = ChargeSpec::spin_z(2).unwrap();
        let state = Mpdo::domain_wall(4, &q, 0.2).unwrap();
        let qq = crate::basis::kron(&q.op.entries.view(), &q.op.entries.view());
        let pair = state.pair_expectation(2, &qq.view()).unwrap();
        let s2 = state.expectation(&[(2, &q.op)]).unwrap();
        let s3 = state.expectation(&[(3, &q.op)]).unwrap();
        assert_abs_diff_eq!(pair.re, (s2 * s3).re, epsilon = 1e-14);
        let all = state.pair_expectations_all_bonds(&qq.view()).unwrap();
        assert_eq!(all.len(), 3);
        assert_abs_diff_eq!(all[1].re, pair.re, epsilon = 1e-15);
    }

    #[test]
    fn energy_wall_marginals_and_totals() {
        let spec = ModelSpec::uniform(Family::Su, 3, 8);
        let mu_e = 0.05;
        let state = Mpdo::energy_domain_wall(&spec, mu_e).unwrap();
        assert_abs_diff_eq!(state.trace(), 1.0, epsilon = 1e-12);
        // single-site charges identically zero
        let q = ChargeSpec::spin_z(3).unwrap();
        for v in state.site_expectations(&q.op).unwrap() {
            assert!(v.norm() < 1e-13);
        }
        // bond energies: ⟨h⟩ − tr(h)/d² = ±μ_E·κ_E with κ_E = tr(h_c²)/d²;
        // for the permutation coupling h_c = Π − 1/d so κ_E = (d²−1)/d² = 8/9.
        let c = algebra::pair_coupling(&spec).unwrap();
        let h = c.entries.clone();
        let d2 = 9.0;
        let tr_h: C64 = (0..9).map(|i| h[[i, i]]).sum();
        let background = tr_h.re / d2;
        let kappa_e = 8.0 / 9.0;
        let vals = state.pair_expectations_all_bonds(&h.view()).unwrap();
        assert_eq!(vals.len(), 7);
        for (k, v) in vals.iter().enumerate() {
            let bond = k + 1;
            let s = if bond < 4 {
                1.0
            } else if bond == 4 {
                0.0
            } else {
                -1.0
            };
            assert_abs_diff_eq!(v.re - background, s * mu_e * kappa_e, epsilon = 1e-11);
        }
        let total: f64 = vals.iter().map(|v| v.re - background).sum();
        assert_abs_diff_eq!(total, 0.0, epsilon = 1e-11);
        // μ_E = 0 reduces to infinite temperature in expectation
        let flat = Mpdo::energy_domain_wall(&spec, 0.0).unwrap();
        for v in flat.pair_expectations_all_bonds(&h.view()).unwrap() {
            assert_abs_diff_eq!(v.re, background, epsilon = 1e-12);
        }
        // positivity guard: Π has eigenvalues ±1, h_c ∈ {2/3, −4/3}, so the
        // marginal (1 + μ_E h_c)/9 fails for μ_E > 3/4 ⋅ ... = 0.75: use 0.8
        assert!(Mpdo::energy_domain_wall(&spec, 0.8).is_err());
    }

    #[test]
    fn to_dense_matches_product_construction() {
        let q = ChargeSpec::spin_z(2).unwrap();
        let l = 4;
        let mu = 0.2;
        let state = Mpdo::domain_wall(l, &q, mu).unwrap();
        let dense = state.to_dense().unwrap();
        // direct construction
        let mut site_left = Array2::<C64>::zeros((2, 2));
        let mut site_right = Array2::<C64>::zeros((2, 2));
        for i in 0..2 {
            let qv = q.op.entries[[i, i]].re;
            site_left[[i, i]] = C64::new((1.0 + mu * qv) / 2.0, 0.0);
            site_right[[i, i]] = C64::new((1.0 - mu * qv) / 2.0, 0.0);
        }
        let mut expect = crate::basis::kron(&site_left.view(), &site_left.view());
        expect = crate::basis::kron(&expect.view(), &site_right.view());
        expect = crate::basis::kron(&expect.view(), &site_right.view());
        let diff = dense
            .iter()
            .zip(expect.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-13);
        // trace of dense equals 1
        let tr: C64 = (0..16).map(|i| dense[[i, i]]).sum();
        assert_abs_diff_eq!(tr.re, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn gauge_moves_preserve_state() {
        let spec = ModelSpec::uniform(Family::Su, 2, 6);
        let mut state = Mpdo::energy_domain_wall(&spec, 0.1).unwrap();
        let h = algebra::pair_coupling(&spec).unwrap().entries;
        let before_trace = state.trace();
        let before_pairs: Vec<C64> = state.pair_expectations_all_bonds(&h.view()).unwrap();
        state.set_center(3).unwrap();
        assert_eq!(state.gauge_center(), Some(3));
        let after_trace = state.trace();
        let after_pairs = state.pair_expectations_all_bonds(&h.view()).unwrap();
        assert_abs_diff_eq!(before_trace, after_trace, epsilon = 1e-13);
        for (b, a) in before_pairs.iter().zip(after_pairs.iter()) {
            assert!((b - a).norm() < 1e-12);
        }
        // orthonormality: sites < center left-orthonormal, > center right-orthonormal
        for r in 0..3 {
            let t = &state.tensors[r];
            let (l, p, rr) = t.dim();
            let m = t.to_owned().into_shape((l * p, rr)).unwrap();
            let g = linalg::matmul(&m.t(), &m.view());
            for i in 0..rr {
                for j in 0..rr {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(g[[i, j]], expect, epsilon = 1e-12);
                }
            }
        }
        for r in 4..6 {
            let t = &state.tensors[r];
            let (l, p, rr) = t.dim();
            let m = t.to_owned().into_shape((l, p * rr)).unwrap();
            let g = linalg::matmul(&m.view(), &m.t());
            for i in 0..l {
                for j in 0..l {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(g[[i, j]], expect, epsilon = 1e-12);
                }
            }
        }
        // moving the center again still preserves everything
        state.set_center(0).unwrap();
        assert_abs_diff_eq!(state.trace(), before_trace, epsilon = 1e-13);
    }

    #[test]
    fn checkpoint_roundtrip_and_corruption_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.mpdo");
        let spec = ModelSpec::uniform(Family::Su, 3, 6);
        let state = Mpdo::energy_domain_wall(&spec, 0.05).unwrap();
        state.save_checkpoint(&path).unwrap();
        let loaded = Mpdo::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.length(), state.length());
        assert_eq!(loaded.local_dim(), state.local_dim());
        for r in 0..state.length() {
            assert_eq!(loaded.tensors[r].dim(), state.tensors[r].dim());
            let diff = (&loaded.tensors[r] - &state.tensors[r])
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()));
            assert_eq!(diff, 0.0, "tensors must round-trip bit-exactly");
        }
        // flip one byte → checksum must catch it
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        match Mpdo::load_checkpoint(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn recipe_validation_rejects_bad_densities() {
        let good = Array2::from_diag_elem(2, C64::new(0.5, 0.0));
        let mut bad_trace = good.clone();
        bad_trace[[0, 0]] = C64::new(0.9, 0.0);
        let recipe = ProductStateRecipe {
            per_site_density: vec![good.clone(), bad_trace],
            mu: 0.0,
            delta_mag: 0.0,
            hole_density: 0.0,
        };
        assert!(recipe.validate().is_err());
        let mut negative = Array2::<C64>::zeros((2, 2));
        negative[[0, 0]] = C64::new(1.5, 0.0);
        negative[[1, 1]] = C64::new(-0.5, 0.0);
        let recipe = ProductStateRecipe {
            per_site_density: vec![good.clone(), negative],
            mu: 0.0,
            delta_mag: 0.0,
            hole_density: 0.0,
        };
        assert!(recipe.validate().is_err());
    }

    #[test]
    fn expectation_matches_per_site_trace_formula() {
        // property: on any product state, expectation = Π_r tr(op_r ρ_r)
        let mut seed = 77u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10 {
            let d = 3;
            let l = 6;
            let mut sites = Vec::new();
            let mut diags = Vec::new();
            for _ in 0..l {
                let mut raw: Vec<f64> = (0..d).map(|_| next() + 0.05).collect();
                let s: f64 = raw.iter().sum();
                raw.iter_mut().for_each(|x| *x /= s);
                let mut rho = Array2::<C64>::zeros((d, d));
                for i in 0..d {
                    rho[[i, i]] = C64::new(raw[i], 0.0);
                }
                diags.push(raw);
                sites.push(rho);
            }
            let state = Mpdo::from_recipe(&ProductStateRecipe {
                per_site_density: sites,
                mu: 0.0,
                delta_mag: 0.0,
                hole_density: 0.0,
            })
            .unwrap();
            let q = ChargeSpec::spin_z(d).unwrap();
            let got = state.expectation(&[(2, &q.op), (5, &q.op)]).unwrap();
            let qdiag: Vec<f64> = (0..d).map(|i| q.op.entries[[i, i]].re).collect();
            let t2: f64 = (0..d).map(|i| qdiag[i] * diags[1][i]).sum();
            let t5: f64 = (0..d).map(|i| qdiag[i] * diags[4][i]).sum();
            assert_abs_diff_eq!(got.re, t2 * t5, epsilon = 1e-12);
        }
    }
}
