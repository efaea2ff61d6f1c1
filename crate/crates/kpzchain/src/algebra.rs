//! Local operators, integrable two-site couplings, and symmetry generators.
//!
//! Every model family is built from the matrix units `S^{α,β} = |α⟩⟨β|`
//! (1-indexed in the public API) and the two exchange-type operators on a
//! pair of sites,
//!
//! ```text
//!   Π    = Σ_{α,β} S^{α,β} ⊗ S^{β,α}              (permutation)
//!   Ξ^SO = Σ_{α,β} S^{α,β} ⊗ S^{ᾱ,β̄}             (reflection pairing)
//!   Ξ^SP = Σ_{α,β} θ_α θ_β S^{α,β} ⊗ S^{ᾱ,β̄}     (symplectic pairing)
//! ```
//!
//! with `ᾱ = N+1−α` and `θ_α = +1` for `α ≤ N/2`, `−1` otherwise. The family
//! couplings are `Π` (unitary), `Π − 2/(N−2)·Ξ^SO` (orthogonal),
//! `Π + 2/(N+2)·Ξ^SP` (symplectic), the graded permutation
//! `Σ (−1)^{P(α)P(β)} S^{α,β} ⊗ S^{β,α}` (superunitary, `P(α)=0` iff
//! `α ≤ M`), a hyperbolic-coefficient spin-1 family interpolating away from
//! the unitary point while keeping integrability, and the spin-1/2 XXZ chain.
//!
//! Tensor-product convention, fixed crate-wide: the **left** chain site is the
//! **slow** (first) Kronecker factor, i.e. a two-site matrix is indexed
//! row-major over `(site_i, site_j)` and `A ⊗ B` puts `A` on site `i`.

use crate::basis::{hermiticity_defect, kron, OperatorBasis};
use crate::error::{Error, Result};
use crate::linalg;
use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// Model family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Unitary-symmetric chain: coupling `Π` (for d = 2 this is the
    /// isotropic spin-1/2 exchange chain up to normalization).
    Su,
    /// Orthogonal-symmetric chain (`d ≥ 3`).
    So,
    /// Symplectic-symmetric chain (`d` even).
    Sp,
    /// Graded (superunitary) chain on `M` bosonic + `N` fermionic levels.
    Super { m: usize, n: usize },
    /// Integrable spin-1 family breaking the unitary symmetry down to U(1)
    /// with strength `delta`; at `delta = 0` it coincides with `Π`.
    IzerginKorepin,
    /// Spin-1/2 XXZ chain `SˣSˣ + SʸSʸ + (1+Δ)SᶻSᶻ`; `delta = 0` is the
    /// isotropic point.
    Xxz,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Su => write!(f, "su"),
            Family::So => write!(f, "so"),
            Family::Sp => write!(f, "sp"),
            Family::Super { m, n } => write!(f, "super({m}|{n})"),
            Family::IzerginKorepin => write!(f, "izergin_korepin"),
            Family::Xxz => write!(f, "xxz"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "su" => return Ok(Family::Su),
            "so" => return Ok(Family::So),
            "sp" => return Ok(Family::Sp),
            "izergin_korepin" | "izergin-korepin" | "ik" => return Ok(Family::IzerginKorepin),
            "xxz" => return Ok(Family::Xxz),
            _ => {}
        }
        if let Some(body) = t.strip_prefix("super(").and_then(|r| r.strip_suffix(')')) {
            if let Some((ms, ns)) = body.split_once('|') {
                let m = ms.trim().parse::<usize>();
                let n = ns.trim().parse::<usize>();
                if let (Ok(m), Ok(n)) = (m, n) {
                    return Ok(Family::Super { m, n });
                }
            }
        }
        Err(Error::Argument(format!(
            "unknown family '{s}' (expected su | so | sp | super(M|N) | izergin_korepin | xxz)"
        )))
    }
}

impl Serialize for Family {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Family {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Family::from_str(&s).map_err(D::Error::custom)
    }
}

/// Drive mode of the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    Static,
    /// Brickwork drive: odd-bond layer for `period/2`, then even-bond layer
    /// for `period/2`, repeated.
    Floquet { period: f64 },
}

impl fmt::Display for Drive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drive::Static => write!(f, "static"),
            Drive::Floquet { period } => write!(f, "floquet({period})"),
        }
    }
}

impl FromStr for Drive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "static" {
            return Ok(Drive::Static);
        }
        if let Some(body) = t.strip_prefix("floquet(").and_then(|r| r.strip_suffix(')')) {
            if let Ok(period) = body.trim().parse::<f64>() {
                return Ok(Drive::Floquet { period });
            }
        }
        Err(Error::Argument(format!(
            "unknown drive '{s}' (expected static | floquet(T))"
        )))
    }
}

impl Serialize for Drive {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Drive {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Drive::from_str(&s).map_err(D::Error::custom)
    }
}

/// Full chain description: family, geometry, perturbations, drive.
///
/// Boundary conditions are always open. The nearest-neighbour coupling sets
/// the unit of time (J = 1); `coupling_profile` multiplies it per bond and
/// `j_nnn` scales the next-nearest-neighbour terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub local_dim: usize,
    /// Symmetry-breaking / anisotropy strength (used by `izergin_korepin`
    /// and `xxz`; ignored elsewhere).
    #[serde(default)]
    pub delta: f64,
    /// Next-nearest-neighbour coupling strength (0 = integrable chain).
    #[serde(default)]
    pub j_nnn: f64,
    /// Per-bond multipliers `J(r)`, length `L−1`; `None` means uniform 1.
    #[serde(default)]
    pub coupling_profile: Option<Vec<f64>>,
    #[serde(default = "default_drive")]
    pub drive: Drive,
    pub length: usize,
}

fn default_drive() -> Drive {
    Drive::Static
}

impl ModelSpec {
    /// Uniform static chain of the given family.
    pub fn uniform(family: Family, local_dim: usize, length: usize) -> Self {
        Self {
            family,
            local_dim,
            delta: 0.0,
            j_nnn: 0.0,
            coupling_profile: None,
            drive: Drive::Static,
            length,
        }
    }

    /// Validate all invariants; every public operation calls this first.
    ///
    /// Chains as short as `L = 2` are accepted here so that exact small-system
    /// cross-checks can share the type; domain-wall state constructors
    /// additionally require `L ≥ 4`.
    pub fn validate(&self) -> Result<()> {
        let d = self.local_dim;
        let l = self.length;
        if l < 2 || l % 2 != 0 {
            return Err(Error::Argument(format!("length must be even and ≥ 2, got {l}")));
        }
        match self.family {
            Family::Su => {
                if d < 2 {
                    return Err(Error::Argument(format!("su family needs local_dim ≥ 2, got {d}")));
                }
            }
            Family::So => {
                if d < 3 {
                    return Err(Error::Argument(format!(
                        "so family needs local_dim ≥ 3 (the 2/(N−2) coefficient is singular at N=2), got {d}"
                    )));
                }
            }
            Family::Sp => {
                if d < 2 || d % 2 != 0 {
                    return Err(Error::Argument(format!("sp family needs even local_dim ≥ 2, got {d}")));
                }
            }
            Family::Super { m, n } => {
                if m == 0 || n == 0 {
                    return Err(Error::Argument(format!(
                        "super family needs M ≥ 1 and N ≥ 1, got ({m}|{n})"
                    )));
                }
                if m + n != d {
                    return Err(Error::Argument(format!(
                        "super({m}|{n}) requires local_dim = {}, got {d}",
                        m + n
                    )));
                }
            }
            Family::IzerginKorepin => {
                if d != 3 {
                    return Err(Error::Argument(format!(
                        "izergin_korepin is a spin-1 family: local_dim must be 3, got {d}"
                    )));
                }
            }
            Family::Xxz => {
                if d != 2 {
                    return Err(Error::Argument(format!(
                        "xxz is a spin-1/2 family: local_dim must be 2, got {d}"
                    )));
                }
            }
        }
        if !self.delta.is_finite() || !self.j_nnn.is_finite() {
            return Err(Error::Argument("delta and j_nnn must be finite".into()));
        }
        if let Some(profile) = &self.coupling_profile {
            if profile.len() != l - 1 {
                return Err(Error::Argument(format!(
                    "coupling_profile must have length L−1 = {}, got {}",
                    l - 1,
                    profile.len()
                )));
            }
            if profile.iter().any(|&j| !(j > 0.0) || !j.is_finite()) {
                return Err(Error::Argument("coupling_profile entries must be positive and finite".into()));
            }
        }
        if let Drive::Floquet { period } = self.drive {
            if !(period > 0.0) || !period.is_finite() {
                return Err(Error::Argument(format!("floquet period must be positive, got {period}")));
            }
        }
        Ok(())
    }

    /// Bond multiplier `J(r)` for the nearest-neighbour bond `r` (1-based).
    pub fn bond_coupling(&self, bond: usize) -> f64 {
        match &self.coupling_profile {
            Some(p) => p[bond - 1],
            None => 1.0,
        }
    }

    /// Whether the chain Hamiltonian is symmetric under spatial reflection
    /// (site `r` ↔ site `L+1−r`). Used to enable reflection-based checks.
    pub fn reflection_symmetric(&self) -> bool {
        let family_ok = !(matches!(self.family, Family::IzerginKorepin) && self.delta != 0.0);
        let profile_ok = match &self.coupling_profile {
            None => true,
            Some(p) => p.iter().zip(p.iter().rev()).all(|(a, b)| (a - b).abs() < 1e-12),
        };
        family_ok && profile_ok
    }
}

/// A dense operator acting on one site.
#[derive(Debug, Clone)]
pub struct LocalOperator {
    pub dim: usize,
    pub entries: Array2<C64>,
    pub label: String,
}

impl LocalOperator {
    pub fn new(entries: Array2<C64>, label: impl Into<String>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c || r < 2 {
            return Err(Error::Argument(format!("local operator must be square with dim ≥ 2, got {r}×{c}")));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Argument("local operator entries must be finite".into()));
        }
        Ok(Self { dim: r, entries, label: label.into() })
    }

    /// Identity on a `d`-level site.
    pub fn identity(d: usize) -> Self {
        Self {
            dim: d,
            entries: Array2::from_diag_elem(d, C64::new(1.0, 0.0)),
            label: "1".into(),
        }
    }
}

/// Matrix unit `S^{α,β} = |α⟩⟨β|`, 1-indexed.
pub fn matrix_unit(alpha: usize, beta: usize, d: usize) -> Result<LocalOperator> {
    if d < 2 {
        return Err(Error::Argument(format!("matrix_unit: d must be ≥ 2, got {d}")));
    }
    if alpha < 1 || alpha > d || beta < 1 || beta > d {
        return Err(Error::Argument(format!(
            "matrix_unit: indices must lie in 1..={d}, got ({alpha},{beta})"
        )));
    }
    let mut m = Array2::zeros((d, d));
    m[[alpha - 1, beta - 1]] = C64::new(1.0, 0.0);
    LocalOperator::new(m, format!("S^{{{alpha},{beta}}}"))
}

/// Spin matrices `(Sˣ, Sʸ, Sᶻ)` for spin `s = (d−1)/2`, in the basis ordered
/// by descending magnetic quantum number.
pub fn spin_matrices(d: usize) -> Result<(Array2<C64>, Array2<C64>, Array2<C64>)> {
    if d < 2 {
        return Err(Error::Argument(format!("spin_matrices: d must be ≥ 2, got {d}")));
    }
    let s = (d as f64 - 1.0) / 2.0;
    let mut sz = Array2::zeros((d, d));
    let mut sp = Array2::<C64>::zeros((d, d));
    for k in 0..d {
        let m = s - k as f64;
        sz[[k, k]] = C64::new(m, 0.0);
        if k > 0 {
            // raising: |m⟩ → |m+1⟩, i.e. row k−1, column k
            let m_lower = s - k as f64;
            sp[[k - 1, k]] = C64::new((s * (s + 1.0) - m_lower * (m_lower + 1.0)).sqrt(), 0.0);
        }
    }
    let sm = sp.t().mapv(|z| z.conj());
    let half = C64::new(0.5, 0.0);
    let half_i = C64::new(0.0, -0.5);
    let sx = (&sp + &sm).mapv(|z| z * half);
    let sy = (&sp - &sm).mapv(|z| z * half_i);
    Ok((sx, sy, sz))
}

/// Sign `θ_α` of the symplectic pairing, 1-indexed; `+1` for `α ≤ N/2`,
/// `−1` otherwise. `n` must be even.
pub fn theta(alpha: usize, n: usize) -> Result<f64> {
    if n % 2 != 0 || n == 0 {
        return Err(Error::Argument(format!("theta: N must be even and positive, got {n}")));
    }
    if alpha < 1 || alpha > n {
        return Err(Error::Argument(format!("theta: index {alpha} out of 1..={n}")));
    }
    Ok(if alpha <= n / 2 { 1.0 } else { -1.0 })
}

/// A two-site coupling matrix with its provenance.
#[derive(Debug, Clone)]
pub struct TwoSiteCoupling {
    pub dim: usize,
    /// `d²×d²`, indexed row-major over `(site_i, site_j)`.
    pub entries: Array2<C64>,
    pub hermitian: bool,
    pub family_tag: Family,
}

impl TwoSiteCoupling {
    fn checked(dim: usize, entries: Array2<C64>, family_tag: Family) -> Result<Self> {
        let defect = hermiticity_defect(&entries.view());
        if defect > 1e-12 {
            return Err(Error::Numeric(format!(
                "two-site coupling for {family_tag} has Hermiticity defect {defect:.2e}"
            )));
        }
        Ok(Self { dim, entries, hermitian: true, family_tag })
    }

    /// CSV dump for debugging: one line per row, each entry as `re[+-]imj`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let n = self.entries.dim().0;
        for i in 0..n {
            let row: Vec<String> = (0..n)
                .map(|j| {
                    let z = self.entries[[i, j]];
                    format!("{:+.12e}{:+.12e}j", z.re, z.im)
                })
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn czero() -> C64 {
    C64::new(0.0, 0.0)
}

/// `Π = Σ S^{α,β} ⊗ S^{β,α}`: the permutation operator on `d ⊗ d`.
pub(crate) fn permutation_matrix(d: usize) -> Array2<C64> {
    let mut m = Array2::zeros((d * d, d * d));
    for a in 0..d {
        for b in 0..d {
            // (S^{a,b} ⊗ S^{b,a}) has a single nonzero entry at
            // row (a,b), column (b,a).
            m[[a * d + b, b * d + a]] = C64::new(1.0, 0.0);
        }
    }
    m
}

/// `Ξ^SO = Σ S^{α,β} ⊗ S^{ᾱ,β̄}` with `ᾱ = N+1−α`.
fn xi_so_matrix(d: usize) -> Array2<C64> {
    let mut m = Array2::zeros((d * d, d * d));
    for a in 0..d {
        for b in 0..d {
            let ab = d - 1 - a;
            let bb = d - 1 - b;
            m[[a * d + ab, b * d + bb]] += C64::new(1.0, 0.0);
        }
    }
    m
}

/// `Ξ^SP = Σ θ_α θ_β S^{α,β} ⊗ S^{ᾱ,β̄}` (requires even `d`).
fn xi_sp_matrix(d: usize) -> Array2<C64> {
    let mut m = Array2::zeros((d * d, d * d));
    let th = |a: usize| if a < d / 2 { 1.0 } else { -1.0 };
    for a in 0..d {
        for b in 0..d {
            let ab = d - 1 - a;
            let bb = d - 1 - b;
            m[[a * d + ab, b * d + bb]] += C64::new(th(a) * th(b), 0.0);
        }
    }
    m
}

/// Graded permutation `Σ (−1)^{P(α)P(β)} S^{α,β} ⊗ S^{β,α}`, `P(α)=0` iff
/// `α ≤ m` (1-indexed).
fn graded_permutation_matrix(m_bos: usize, d: usize) -> Array2<C64> {
    let grade = |a: usize| usize::from(a >= m_bos); // 0-based index
    let mut m = Array2::zeros((d * d, d * d));
    for a in 0..d {
        for b in 0..d {
            let sign = if grade(a) * grade(b) == 1 { -1.0 } else { 1.0 };
            m[[a * d + b, b * d + a]] = C64::new(sign, 0.0);
        }
    }
    m
}

/// The hyperbolic-coefficient integrable spin-1 coupling; reduces to `Π`
/// at `delta = 0` and keeps only the `S^{1,1} − S^{3,3}` charge otherwise.
fn izergin_korepin_matrix(delta: f64) -> Array2<C64> {
    let d = 3usize;
    let ch = |x: f64| x.cosh();
    let sh = |x: f64| x.sinh();
    let pref = 1.0 / (ch(3.0 * delta) * ch(2.0 * delta));
    // term list: (alpha_i, beta_i, alpha_j, beta_j, coefficient), 1-indexed
    let terms: Vec<(usize, usize, usize, usize, f64)> = vec![
        (1, 1, 1, 1, ch(5.0 * delta)),
        (3, 3, 3, 3, ch(5.0 * delta)),
        (1, 1, 2, 2, sh(2.0 * delta) * (sh(3.0 * delta) - ch(3.0 * delta))),
        (2, 2, 3, 3, sh(2.0 * delta) * (sh(3.0 * delta) - ch(3.0 * delta))),
        (2, 2, 1, 1, sh(2.0 * delta) * (sh(3.0 * delta) + ch(3.0 * delta))),
        (3, 3, 2, 2, sh(2.0 * delta) * (sh(3.0 * delta) + ch(3.0 * delta))),
        (1, 1, 3, 3, 2.0 * sh(delta) * sh(2.0 * delta) * (-2.0 * delta).exp()),
        (3, 3, 1, 1, 2.0 * sh(delta) * sh(2.0 * delta) * (2.0 * delta).exp()),
        (1, 3, 3, 1, ch(delta)),
        (3, 1, 1, 3, ch(delta)),
        (1, 2, 2, 1, ch(3.0 * delta)),
        (2, 1, 1, 2, ch(3.0 * delta)),
        (2, 2, 2, 2, ch(3.0 * delta)),
        (2, 3, 3, 2, ch(3.0 * delta)),
        (3, 2, 2, 3, ch(3.0 * delta)),
        (1, 2, 3, 2, -sh(2.0 * delta) * (-2.0 * delta).exp()),
        (2, 1, 2, 3, -sh(2.0 * delta) * (-2.0 * delta).exp()),
        (2, 3, 2, 1, sh(2.0 * delta) * (2.0 * delta).exp()),
        (3, 2, 1, 2, sh(2.0 * delta) * (2.0 * delta).exp()),
    ];
    let mut m = Array2::zeros((d * d, d * d));
    for (ai, bi, aj, bj, coeff) in terms {
        // S^{ai,bi} ⊗ S^{aj,bj}: row (ai,aj), column (bi,bj), 0-based
        m[[(ai - 1) * d + (aj - 1), (bi - 1) * d + (bj - 1)]] += C64::new(pref * coeff, 0.0);
    }
    m
}

/// XXZ two-site matrix `SˣSˣ + SʸSʸ + (1+Δ)SᶻSᶻ` for spin 1/2.
fn xxz_matrix(delta: f64) -> Array2<C64> {
    let (sx, sy, sz) = spin_matrices(2).expect("d=2 is valid");
    let mut m = kron(&sx.view(), &sx.view()) + kron(&sy.view(), &sy.view());
    let zz = kron(&sz.view(), &sz.view());
    let w = C64::new(1.0 + delta, 0.0);
    m.zip_mut_with(&zz, |o, &z| *o += w * z);
    m
}

/// The two-site Hamiltonian of the family described by `spec`.
pub fn pair_coupling(spec: &ModelSpec) -> Result<TwoSiteCoupling> {
    spec.validate()?;
    let d = spec.local_dim;
    let entries = match spec.family {
        Family::Su => permutation_matrix(d),
        Family::So => {
            let coeff = C64::new(2.0 / (d as f64 - 2.0), 0.0);
            let mut m = permutation_matrix(d);
            m.zip_mut_with(&xi_so_matrix(d), |o, &x| *o -= coeff * x);
            m
        }
        Family::Sp => {
            let coeff = C64::new(2.0 / (d as f64 + 2.0), 0.0);
            let mut m = permutation_matrix(d);
            m.zip_mut_with(&xi_sp_matrix(d), |o, &x| *o += coeff * x);
            m
        }
        Family::Super { m, n: _ } => graded_permutation_matrix(m, d),
        Family::IzerginKorepin => izergin_korepin_matrix(spec.delta),
        Family::Xxz => xxz_matrix(spec.delta),
    };
    TwoSiteCoupling::checked(d, entries, spec.family)
}

/// A basis of one-site symmetry generators.
#[derive(Debug, Clone)]
pub struct SymmetryGenerators {
    pub generators: Vec<LocalOperator>,
}

impl SymmetryGenerators {
    /// Build from a list, enforcing tracelessness.
    pub fn new(generators: Vec<LocalOperator>) -> Result<Self> {
        for g in &generators {
            let tr: C64 = (0..g.dim).map(|i| g.entries[[i, i]]).sum();
            if tr.norm() > 1e-12 {
                return Err(Error::Argument(format!(
                    "generator '{}' is not traceless (trace {tr})",
                    g.label
                )));
            }
        }
        Ok(Self { generators })
    }

    pub fn local_dim(&self) -> usize {
        self.generators.first().map(|g| g.dim).unwrap_or(0)
    }

    /// Max over generator pairs of the residual of `[g_i, g_j]` outside the
    /// span of the generators — zero (to tolerance) iff the set closes into
    /// an algebra.
    pub fn closure_residual(&self) -> Result<f64> {
        let gens = &self.generators;
        if gens.len() < 2 {
            return Ok(0.0);
        }
        let d = self.local_dim();
        let n = gens.len();
        let vecs: Vec<Array1<C64>> = gens
            .iter()
            .map(|g| Array1::from_iter(g.entries.iter().cloned()))
            .collect();
        // Gram matrix of the generator vectors.
        let mut gram = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                gram[[i, j]] = vecs[i].iter().zip(vecs[j].iter()).map(|(a, b)| a.conj() * b).sum();
            }
        }
        let (w, v) = linalg::eigh_c(&gram.view())?;
        let wmax = w.iter().cloned().fold(0.0f64, f64::max);
        let tol = wmax * 1e-12;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let a = &gens[i].entries;
                let b = &gens[j].entries;
                let comm = linalg::matmul_c(&a.view(), &b.view()) - linalg::matmul_c(&b.view(), &a.view());
                let cvec = Array1::from_iter(comm.iter().cloned());
                let cnorm2: f64 = cvec.iter().map(|z| z.norm_sqr()).sum();
                if cnorm2 == 0.0 {
                    continue;
                }
                // Least-squares coefficients via the pseudo-inverse of the
                // Gram matrix, then the residual vector formed explicitly
                // (avoids cancellation in the ‖c‖² − fitted shortcut).
                let mut rhs = Array1::<C64>::zeros(n);
                for k in 0..n {
                    rhs[k] = vecs[k].iter().zip(cvec.iter()).map(|(a, b)| a.conj() * b).sum();
                }
                let mut x = Array1::<C64>::zeros(n);
                for e in 0..n {
                    if w[e] <= tol {
                        continue;
                    }
                    // eigh_c stores eigenvector e in row e of v
                    let proj: C64 = (0..n).map(|k| v[[e, k]].conj() * rhs[k]).sum();
                    let scale = proj / C64::new(w[e], 0.0);
                    for k in 0..n {
                        x[k] += scale * v[[e, k]];
                    }
                }
                let mut resid = cvec.clone();
                for k in 0..n {
                    let xk = x[k];
                    resid.zip_mut_with(&vecs[k], |r, &g| *r -= xk * g);
                }
                let resid_norm: f64 = resid.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                worst = worst.max(resid_norm);
                let _ = (d, cnorm2);
            }
        }
        Ok(worst)
    }
}

/// Spectral norm of a complex matrix via the largest eigenvalue of `M†M`.
pub fn spectral_norm(m: &ArrayView2<C64>) -> Result<f64> {
    let md = m.t().mapv(|z| z.conj());
    let mtm = linalg::matmul_c(&md.view(), m);
    let (w, _) = linalg::eigh_c(&mtm.view())?;
    Ok(w.iter().cloned().fold(0.0f64, f64::max).max(0.0).sqrt())
}

/// Max over generators `g` of the spectral norm of `[H_pair, g⊗1 + 1⊗g]`.
pub fn symmetry_residual(coupling: &TwoSiteCoupling, gens: &SymmetryGenerators) -> Result<f64> {
    let d = coupling.dim;
    if gens.generators.is_empty() {
        return Err(Error::Argument("symmetry_residual: empty generator set".into()));
    }
    if gens.local_dim() != d {
        return Err(Error::Argument(format!(
            "symmetry_residual: generator dimension {} does not match coupling dimension {d}",
            gens.local_dim()
        )));
    }
    let eye = Array2::from_diag_elem(d, C64::new(1.0, 0.0));
    let h = &coupling.entries;
    let mut worst = 0.0f64;
    for g in &gens.generators {
        let lift = kron(&g.entries.view(), &eye.view()) + kron(&eye.view(), &g.entries.view());
        let comm = linalg::matmul_c(&h.view(), &lift.view()) - linalg::matmul_c(&lift.view(), &h.view());
        worst = worst.max(spectral_norm(&comm.view())?);
    }
    Ok(worst)
}

/// Greedily select a maximal linearly independent subset (by Gram–Schmidt
/// on the vectorized matrices).
fn independent_subset(candidates: Vec<Array2<C64>>) -> Vec<Array2<C64>> {
    let mut ortho: Vec<Array1<C64>> = Vec::new();
    let mut kept = Vec::new();
    for cand in candidates {
        let mut v = Array1::from_iter(cand.iter().cloned());
        let norm0: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm0 < 1e-12 {
            continue;
        }
        for o in &ortho {
            let ip: C64 = o.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
            let vv = v.clone();
            v.zip_mut_with(o, |x, &y| *x = *x - ip * y);
            drop(vv);
        }
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-8 * norm0.max(1.0) {
            let vn = v.mapv(|z| z / C64::new(norm, 0.0));
            ortho.push(vn);
            kept.push(cand);
        }
    }
    kept
}

/// Traceless Hermitian basis of the one-site unitary algebra (`d²−1`
/// generators: the non-identity elements of [`OperatorBasis`]).
pub fn su_generators(d: usize) -> Result<SymmetryGenerators> {
    let basis = OperatorBasis::new(d)?;
    let gens = (1..basis.len())
        .map(|a| LocalOperator::new(basis.element(a).clone(), format!("T_{a}")))
        .collect::<Result<Vec<_>>>()?;
    SymmetryGenerators::new(gens)
}

/// Generators of the orthogonal subalgebra preserving the reflection
/// pairing: span of `S^{α,β} − S^{β̄,ᾱ}`; dimension `d(d−1)/2`.
pub fn so_generators(d: usize) -> Result<SymmetryGenerators> {
    if d < 3 {
        return Err(Error::Argument(format!("so generators need d ≥ 3, got {d}")));
    }
    let mut cands = Vec::new();
    for a in 0..d {
        for b in 0..d {
            let mut m = Array2::<C64>::zeros((d, d));
            m[[a, b]] += C64::new(1.0, 0.0);
            m[[d - 1 - b, d - 1 - a]] -= C64::new(1.0, 0.0);
            cands.push(m);
        }
    }
    let kept = independent_subset(cands);
    let expect = d * (d - 1) / 2;
    if kept.len() != expect {
        return Err(Error::Numeric(format!(
            "so({d}) generator construction produced {} independent elements, expected {expect}",
            kept.len()
        )));
    }
    let gens = kept
        .into_iter()
        .enumerate()
        .map(|(i, m)| LocalOperator::new(m, format!("so_{i}")))
        .collect::<Result<Vec<_>>>()?;
    SymmetryGenerators::new(gens)
}

/// Generators of the symplectic subalgebra: span of
/// `S^{α,β} − θ_α θ_β S^{β̄,ᾱ}`; dimension `d(d+1)/2`.
pub fn sp_generators(d: usize) -> Result<SymmetryGenerators> {
    if d < 2 || d % 2 != 0 {
        return Err(Error::Argument(format!("sp generators need even d ≥ 2, got {d}")));
    }
    let th = |a: usize| if a < d / 2 { 1.0 } else { -1.0 };
    let mut cands = Vec::new();
    for a in 0..d {
        for b in 0..d {
            let mut m = Array2::<C64>::zeros((d, d));
            m[[a, b]] += C64::new(1.0, 0.0);
            m[[d - 1 - b, d - 1 - a]] -= C64::new(th(a) * th(b), 0.0);
            cands.push(m);
        }
    }
    let kept = independent_subset(cands);
    let expect = d * (d + 1) / 2;
    if kept.len() != expect {
        return Err(Error::Numeric(format!(
            "sp({d}) generator construction produced {} independent elements, expected {expect}",
            kept.len()
        )));
    }
    let gens = kept
        .into_iter()
        .enumerate()
        .map(|(i, m)| LocalOperator::new(m, format!("sp_{i}")))
        .collect::<Result<Vec<_>>>()?;
    SymmetryGenerators::new(gens)
}

/// Even (grading-preserving) generators of the graded unitary algebra:
/// block `su(M) ⊕ su(N)` plus the graded charge `diag(N·1_M, −M·1_N)`;
/// dimension `M² + N² − 1`.
pub fn super_even_generators(m: usize, n: usize) -> Result<SymmetryGenerators> {
    if m == 0 || n == 0 {
        return Err(Error::Argument(format!("super generators need M,N ≥ 1, got ({m}|{n})")));
    }
    let d = m + n;
    let mut gens: Vec<LocalOperator> = Vec::new();
    let push = |mat: Array2<C64>, label: String, gens: &mut Vec<LocalOperator>| -> Result<()> {
        gens.push(LocalOperator::new(mat, label)?);
        Ok(())
    };
    // Off-diagonal matrix units within each grading block.
    for (lo, hi, tag) in [(0usize, m, "b"), (m, d, "f")] {
        for a in lo..hi {
            for b in lo..hi {
                if a == b {
                    continue;
                }
                let mut mat = Array2::zeros((d, d));
                mat[[a, b]] = C64::new(1.0, 0.0);
                push(mat, format!("{tag}_{a}{b}"), &mut gens)?;
            }
        }
        // Traceless diagonals within the block.
        for a in lo..(hi.saturating_sub(1)) {
            let mut mat = Array2::zeros((d, d));
            mat[[a, a]] = C64::new(1.0, 0.0);
            mat[[a + 1, a + 1]] = C64::new(-1.0, 0.0);
            push(mat, format!("{tag}_h{a}"), &mut gens)?;
        }
    }
    // The traceless grading charge.
    let mut q = Array2::zeros((d, d));
    for a in 0..m {
        q[[a, a]] = C64::new(n as f64, 0.0);
    }
    for a in m..d {
        q[[a, a]] = C64::new(-(m as f64), 0.0);
    }
    push(q, "grade".into(), &mut gens)?;
    debug_assert_eq!(gens.len(), m * m + n * n - 1);
    SymmetryGenerators::new(gens)
}

/// The single U(1) generator `S^{1,1} − S^{d,d}` conserved by every family
/// in the crate (for the symmetry-broken spin-1 family it is the only one).
pub fn u1_charge_generator(d: usize) -> Result<SymmetryGenerators> {
    let mut q = Array2::zeros((d, d));
    q[[0, 0]] = C64::new(1.0, 0.0);
    q[[d - 1, d - 1]] = C64::new(-1.0, 0.0);
    SymmetryGenerators::new(vec![LocalOperator::new(q, "q")?])
}

/// The natural generator set for a model family (what its Hamiltonian
/// actually commutes with).
pub fn generators_for(spec: &ModelSpec) -> Result<SymmetryGenerators> {
    spec.validate()?;
    match spec.family {
        Family::Su => su_generators(spec.local_dim),
        Family::So => so_generators(spec.local_dim),
        Family::Sp => sp_generators(spec.local_dim),
        Family::Super { m, n } => super_even_generators(m, n),
        Family::IzerginKorepin => u1_charge_generator(3),
        Family::Xxz => {
            let (_, _, sz) = spin_matrices(2)?;
            SymmetryGenerators::new(vec![LocalOperator::new(sz, "Sz")?])
        }
    }
}

/// Layer tag of an assembled term, used by the gate scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermLayer {
    /// Nearest-neighbour bond `(i, i+1)` with odd `i` (1-indexed).
    OddBond,
    /// Nearest-neighbour bond `(i, i+1)` with even `i`.
    EvenBond,
    /// Next-nearest-neighbour term `(i, i+2)`.
    NextNearest,
}

/// One term of the chain Hamiltonian: a coupling matrix (scale factors
/// already applied) acting on a pair of sites.
#[derive(Debug, Clone)]
pub struct HamiltonianTerm {
    /// 1-indexed support `(i, j)` with `i < j`; `j − i ∈ {1, 2}`.
    pub sites: (usize, usize),
    /// `d²×d²` matrix including the bond multiplier.
    pub matrix: Array2<C64>,
    pub layer: TermLayer,
}

/// All terms of the chain Hamiltonian in a fixed order: nearest-neighbour
/// bonds left to right, then next-nearest-neighbour terms left to right.
pub fn assemble_terms(spec: &ModelSpec) -> Result<Vec<HamiltonianTerm>> {
    spec.validate()?;
    let coupling = pair_coupling(spec)?;
    let l = spec.length;
    let mut terms = Vec::new();
    for i in 1..l {
        let j_bond = spec.bond_coupling(i);
        let w = C64::new(j_bond, 0.0);
        let matrix = coupling.entries.mapv(|z| z * w);
        let layer = if i % 2 == 1 { TermLayer::OddBond } else { TermLayer::EvenBond };
        terms.push(HamiltonianTerm { sites: (i, i + 1), matrix, layer });
    }
    if spec.j_nnn != 0.0 {
        let w = C64::new(spec.j_nnn, 0.0);
        for i in 1..(l - 1) {
            let matrix = coupling.entries.mapv(|z| z * w);
            terms.push(HamiltonianTerm { sites: (i, i + 2), matrix, layer: TermLayer::NextNearest });
        }
    }
    Ok(terms)
}

/// The connected part of a two-site coupling:
/// `h_c = h − a⊗1/d − 1⊗b/d + tr(h)·1⊗1/d²` with `a = tr_2 h`, `b = tr_1 h`.
/// Both partial traces of `h_c` vanish, so expectation values of `h_c`
/// against product states factor through two-site marginals only.
pub fn connected_part(coupling: &TwoSiteCoupling) -> Array2<C64> {
    let d = coupling.dim;
    let h = &coupling.entries;
    // a = tr over the right factor: a[i1, j1] = Σ_k h[(i1,k), (j1,k)]
    let mut a = Array2::<C64>::zeros((d, d));
    let mut b = Array2::<C64>::zeros((d, d));
    let mut tr = czero();
    for i1 in 0..d {
        for j1 in 0..d {
            for k in 0..d {
                a[[i1, j1]] += h[[i1 * d + k, j1 * d + k]];
                b[[i1, j1]] += h[[k * d + i1, k * d + j1]];
            }
        }
        tr += a[[i1, i1]];
    }
    let eye = Array2::from_diag_elem(d, C64::new(1.0, 0.0));
    let inv_d = C64::new(1.0 / d as f64, 0.0);
    let mut out = h.clone();
    let a_term = kron(&a.view(), &eye.view());
    let b_term = kron(&eye.view(), &b.view());
    out.zip_mut_with(&a_term, |o, &x| *o -= inv_d * x);
    out.zip_mut_with(&b_term, |o, &x| *o -= inv_d * x);
    let shift = tr * inv_d * inv_d;
    for i in 0..d * d {
        out[[i, i]] += shift;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_abs_c(m: &Array2<C64>) -> f64 {
        m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
    }

    fn eye_c(n: usize) -> Array2<C64> {
        Array2::from_diag_elem(n, C64::new(1.0, 0.0))
    }

    #[test]
    fn matrix_unit_definition_and_completeness() {
        let s11 = matrix_unit(1, 1, 2).unwrap();
        assert_abs_diff_eq!(s11.entries[[0, 0]].re, 1.0);
        assert_abs_diff_eq!(s11.entries[[1, 1]].re, 0.0);
        let mut sum = Array2::<C64>::zeros((3, 3));
        for a in 1..=3 {
            sum += &matrix_unit(a, a, 3).unwrap().entries;
        }
        assert!(max_abs_c(&(&sum - &eye_c(3))) < 1e-15);
        assert!(matrix_unit(0, 1, 2).is_err());
        assert!(matrix_unit(1, 3, 2).is_err());
    }

    #[test]
    fn matrix_unit_commutator_identity() {
        // [S^{α,β}, S^{μ,ν}] = δ_{β,μ} S^{α,ν} − δ_{ν,α} S^{μ,β}, exhaustively for d=3.
        let d = 3;
        for alpha in 1..=d {
            for beta in 1..=d {
                for mu in 1..=d {
                    for nu in 1..=d {
                        let sab = matrix_unit(alpha, beta, d).unwrap().entries;
                        let smn = matrix_unit(mu, nu, d).unwrap().entries;
                        let comm = linalg::matmul_c(&sab.view(), &smn.view())
                            - linalg::matmul_c(&smn.view(), &sab.view());
                        let mut expect = Array2::<C64>::zeros((d, d));
                        if beta == mu {
                            expect += &matrix_unit(alpha, nu, d).unwrap().entries;
                        }
                        if nu == alpha {
                            expect -= &matrix_unit(mu, beta, d).unwrap().entries;
                        }
                        assert!(max_abs_c(&(&comm - &expect)) < 1e-15);
                    }
                }
            }
        }
        // the spec case spelled out: [S^{1,2}, S^{2,1}] = S^{1,1} − S^{2,2}
        let s12 = matrix_unit(1, 2, 2).unwrap().entries;
        let s21 = matrix_unit(2, 1, 2).unwrap().entries;
        let comm = linalg::matmul_c(&s12.view(), &s21.view()) - linalg::matmul_c(&s21.view(), &s12.view());
        let expect = &matrix_unit(1, 1, 2).unwrap().entries - &matrix_unit(2, 2, 2).unwrap().entries;
        assert!(max_abs_c(&(&comm - &expect)) < 1e-15);
    }

    #[test]
    fn permutation_is_swap_and_squares_to_identity() {
        // d=2: Π must be the 4×4 SWAP matrix.
        let spec = ModelSpec::uniform(Family::Su, 2, 4);
        let c = pair_coupling(&spec).unwrap();
        let mut swap = Array2::<C64>::zeros((4, 4));
        swap[[0, 0]] = C64::new(1.0, 0.0);
        swap[[1, 2]] = C64::new(1.0, 0.0);
        swap[[2, 1]] = C64::new(1.0, 0.0);
        swap[[3, 3]] = C64::new(1.0, 0.0);
        assert!(max_abs_c(&(&c.entries - &swap)) < 1e-15);
        for d in 2..=5 {
            let pi = permutation_matrix(d);
            let sq = linalg::matmul_c(&pi.view(), &pi.view());
            assert!(max_abs_c(&(&sq - &eye_c(d * d))) < 1e-12, "Π² ≠ 1 for d={d}");
        }
    }

    #[test]
    fn graded_permutation_squares_to_identity() {
        for (m, n) in [(1usize, 1usize), (1, 2), (2, 2), (2, 1)] {
            let d = m + n;
            let p = graded_permutation_matrix(m, d);
            let sq = linalg::matmul_c(&p.view(), &p.view());
            assert!(max_abs_c(&(&sq - &eye_c(d * d))) < 1e-12, "(Π^Sup)² ≠ 1 for ({m}|{n})");
        }
    }

    #[test]
    fn theta_signs_for_n4() {
        let signs: Vec<f64> = (1..=4).map(|a| theta(a, 4).unwrap()).collect();
        assert_eq!(signs, vec![1.0, 1.0, -1.0, -1.0]);
        assert!(theta(1, 3).is_err());
    }

    #[test]
    fn xi_so_squares_to_n_times_itself() {
        // (Ξ^SO)² = c·Ξ^SO with c = 3 for the spin-1 case (c = N generally):
        // Ξ^SO is N times the projector onto the reflection-paired singlet.
        let xi = xi_so_matrix(3);
        let sq = linalg::matmul_c(&xi.view(), &xi.view());
        let scaled = xi.mapv(|z| z * C64::new(3.0, 0.0));
        assert!(max_abs_c(&(&sq - &scaled)) < 1e-12);
    }

    #[test]
    fn spin1_exchange_identity() {
        // For spin 1: Π = S⃗·S⃗ + (S⃗·S⃗)² − 1, i.e. the difference
        // Π − [S⃗·S⃗ + (S⃗·S⃗)²] is the constant −1 times the identity.
        let spec = ModelSpec::uniform(Family::Su, 3, 4);
        let pi = pair_coupling(&spec).unwrap().entries;
        let (sx, sy, sz) = spin_matrices(3).unwrap();
        let mut sdots = kron(&sx.view(), &sx.view());
        sdots += &kron(&sy.view(), &sy.view());
        sdots += &kron(&sz.view(), &sz.view());
        let sdots2 = linalg::matmul_c(&sdots.view(), &sdots.view());
        let combo = &sdots + &sdots2;
        let diff = &pi - &combo;
        for i in 0..9 {
            assert!((diff[[i, i]] - C64::new(-1.0, 0.0)).norm() < 1e-12);
            for j in 0..9 {
                if i != j {
                    assert!(diff[[i, j]].norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn all_family_couplings_are_hermitian() {
        let specs = vec![
            ModelSpec::uniform(Family::Su, 2, 4),
            ModelSpec::uniform(Family::Su, 3, 4),
            ModelSpec::uniform(Family::Su, 4, 4),
            ModelSpec::uniform(Family::So, 3, 4),
            ModelSpec::uniform(Family::So, 4, 4),
            ModelSpec::uniform(Family::Sp, 4, 4),
            ModelSpec::uniform(Family::Super { m: 1, n: 2 }, 3, 4),
            ModelSpec::uniform(Family::Super { m: 2, n: 2 }, 4, 4),
            {
                let mut s = ModelSpec::uniform(Family::IzerginKorepin, 3, 4);
                s.delta = 0.3;
                s
            },
            {
                let mut s = ModelSpec::uniform(Family::Xxz, 2, 4);
                s.delta = 1.0;
                s
            },
        ];
        for spec in specs {
            let c = pair_coupling(&spec).unwrap();
            assert!(c.hermitian, "family {} not Hermitian", spec.family);
        }
    }

    #[test]
    fn izergin_korepin_at_zero_is_permutation() {
        let spec = ModelSpec::uniform(Family::IzerginKorepin, 3, 4);
        let ik = pair_coupling(&spec).unwrap().entries;
        let pi = permutation_matrix(3);
        assert!(max_abs_c(&(&ik - &pi)) < 1e-14);
    }

    #[test]
    fn izergin_korepin_symmetry_pattern() {
        // Δ=0: full unitary symmetry (8 generators).
        let spec0 = ModelSpec::uniform(Family::IzerginKorepin, 3, 4);
        let c0 = pair_coupling(&spec0).unwrap();
        let su3 = su_generators(3).unwrap();
        assert!(symmetry_residual(&c0, &su3).unwrap() < 1e-12);
        // Δ=0.3: U(1) survives, full symmetry does not.
        let mut spec = ModelSpec::uniform(Family::IzerginKorepin, 3, 4);
        spec.delta = 0.3;
        let c = pair_coupling(&spec).unwrap();
        let u1 = u1_charge_generator(3).unwrap();
        assert!(symmetry_residual(&c, &u1).unwrap() < 1e-12);
        let broken = symmetry_residual(&c, &su3).unwrap();
        assert!(broken > 1e-3, "expected broken symmetry, residual {broken:.2e}");
    }

    #[test]
    fn family_generator_residuals_are_tiny() {
        let cases = vec![
            ModelSpec::uniform(Family::Su, 2, 4),
            ModelSpec::uniform(Family::Su, 3, 4),
            ModelSpec::uniform(Family::Su, 4, 4),
            ModelSpec::uniform(Family::So, 3, 4),
            ModelSpec::uniform(Family::So, 4, 4),
            ModelSpec::uniform(Family::Sp, 4, 4),
            ModelSpec::uniform(Family::Super { m: 1, n: 2 }, 3, 4),
            ModelSpec::uniform(Family::Super { m: 2, n: 2 }, 4, 4),
            ModelSpec::uniform(Family::Xxz, 2, 4),
        ];
        for spec in cases {
            let c = pair_coupling(&spec).unwrap();
            let g = generators_for(&spec).unwrap();
            let r = symmetry_residual(&c, &g).unwrap();
            assert!(r < 1e-10, "family {} residual {r:.2e}", spec.family);
        }
    }

    #[test]
    fn generator_sets_have_expected_dimension_and_close() {
        let cases: Vec<(SymmetryGenerators, usize, &str)> = vec![
            (su_generators(2).unwrap(), 3, "su2"),
            (su_generators(3).unwrap(), 8, "su3"),
            (su_generators(4).unwrap(), 15, "su4"),
            (so_generators(3).unwrap(), 3, "so3"),
            (so_generators(4).unwrap(), 6, "so4"),
            (sp_generators(4).unwrap(), 10, "sp4"),
            (super_even_generators(1, 2).unwrap(), 4, "super12"),
            (super_even_generators(2, 2).unwrap(), 7, "super22"),
        ];
        for (gens, expect, name) in cases {
            assert_eq!(gens.generators.len(), expect, "{name} dimension");
            let r = gens.closure_residual().unwrap();
            assert!(r < 1e-10, "{name} closure residual {r:.2e}");
        }
    }

    #[test]
    fn xxz_isotropic_point_matches_permutation_affinely() {
        // Π = 2·H_xxz(Δ=0) + 1/2, relating the two d=2 normalizations.
        let xxz = xxz_matrix(0.0);
        let pi = permutation_matrix(2);
        let mut rhs = xxz.mapv(|z| z * C64::new(2.0, 0.0));
        for i in 0..4 {
            rhs[[i, i]] += C64::new(0.5, 0.0);
        }
        assert!(max_abs_c(&(&pi - &rhs)) < 1e-14);
    }

    #[test]
    fn assemble_counts_and_layers() {
        let spec = ModelSpec::uniform(Family::Su, 2, 4);
        assert_eq!(assemble_terms(&spec).unwrap().len(), 3);

        let mut spec6 = ModelSpec::uniform(Family::Su, 2, 6);
        spec6.j_nnn = 1.0;
        let terms = assemble_terms(&spec6).unwrap();
        let nn = terms.iter().filter(|t| t.layer != TermLayer::NextNearest).count();
        let nnn = terms.iter().filter(|t| t.layer == TermLayer::NextNearest).count();
        assert_eq!((nn, nnn), (5, 4));

        let mut fl = ModelSpec::uniform(Family::Su, 3, 4);
        fl.drive = Drive::Floquet { period: 1.0 };
        let terms = assemble_terms(&fl).unwrap();
        let odd: Vec<(usize, usize)> = terms
            .iter()
            .filter(|t| t.layer == TermLayer::OddBond)
            .map(|t| t.sites)
            .collect();
        let even: Vec<(usize, usize)> = terms
            .iter()
            .filter(|t| t.layer == TermLayer::EvenBond)
            .map(|t| t.sites)
            .collect();
        assert_eq!(odd, vec![(1, 2), (3, 4)]);
        assert_eq!(even, vec![(2, 3)]);
    }

    #[test]
    fn coupling_profile_is_applied_to_nn_only() {
        let mut spec = ModelSpec::uniform(Family::Su, 2, 4);
        spec.coupling_profile = Some(vec![1.0, 2.0, 3.0]);
        spec.j_nnn = 0.5;
        let terms = assemble_terms(&spec).unwrap();
        let base = pair_coupling(&spec).unwrap().entries;
        for t in &terms {
            let scale = match t.layer {
                TermLayer::NextNearest => 0.5,
                _ => spec.bond_coupling(t.sites.0),
            };
            let expect = base.mapv(|z| z * C64::new(scale, 0.0));
            assert!(max_abs_c(&(&t.matrix - &expect)) < 1e-14);
        }
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let mut bad = ModelSpec::uniform(Family::So, 2, 4);
        assert!(bad.validate().is_err()); // N=2 orthogonal coefficient singular
        bad = ModelSpec::uniform(Family::Su, 2, 5);
        assert!(bad.validate().is_err()); // odd length
        bad = ModelSpec::uniform(Family::Su, 2, 4);
        bad.coupling_profile = Some(vec![1.0, -1.0, 1.0]);
        assert!(bad.validate().is_err()); // non-positive multiplier
        bad = ModelSpec::uniform(Family::Su, 2, 4);
        bad.coupling_profile = Some(vec![1.0]);
        assert!(bad.validate().is_err()); // wrong length
        bad = ModelSpec::uniform(Family::Super { m: 1, n: 2 }, 4, 4);
        assert!(bad.validate().is_err()); // M+N ≠ d
    }

    #[test]
    fn connected_part_has_vanishing_partial_traces() {
        for spec in [
            ModelSpec::uniform(Family::Su, 3, 4),
            ModelSpec::uniform(Family::So, 3, 4),
            {
                let mut s = ModelSpec::uniform(Family::Xxz, 2, 4);
                s.delta = 0.7;
                s
            },
        ] {
            let c = pair_coupling(&spec).unwrap();
            let hc = connected_part(&c);
            let d = c.dim;
            let mut worst = 0.0f64;
            for i1 in 0..d {
                for j1 in 0..d {
                    let mut tr_right = C64::new(0.0, 0.0);
                    let mut tr_left = C64::new(0.0, 0.0);
                    for k in 0..d {
                        tr_right += hc[[i1 * d + k, j1 * d + k]];
                        tr_left += hc[[k * d + i1, k * d + j1]];
                    }
                    worst = worst.max(tr_right.norm()).max(tr_left.norm());
                }
            }
            assert!(worst < 1e-13, "family {} partial trace {worst:.2e}", spec.family);
        }
    }

    #[test]
    fn family_and_drive_round_trip_through_strings() {
        for f in [
            Family::Su,
            Family::So,
            Family::Sp,
            Family::Super { m: 1, n: 2 },
            Family::IzerginKorepin,
            Family::Xxz,
        ] {
            let s = f.to_string();
            assert_eq!(Family::from_str(&s).unwrap(), f);
        }
        assert_eq!(Drive::from_str("static").unwrap(), Drive::Static);
        match Drive::from_str("floquet(0.5)").unwrap() {
            Drive::Floquet { period } => assert_abs_diff_eq!(period, 0.5),
            _ => panic!("expected floquet"),
        }
    }

    #[test]
    fn reflection_symmetry_flag() {
        let mut ik = ModelSpec::uniform(Family::IzerginKorepin, 3, 4);
        assert!(ik.reflection_symmetric());
        ik.delta = 0.3;
        assert!(!ik.reflection_symmetric());
        let mut su = ModelSpec::uniform(Family::Su, 2, 4);
        assert!(su.reflection_symmetric());
        su.coupling_profile = Some(vec![1.0, 2.0, 1.0]);
        assert!(su.reflection_symmetric());
        su.coupling_profile = Some(vec![1.0, 2.0, 3.0]);
        assert!(!su.reflection_symmetric());
    }
}
