//! Trotterized time evolution of an [`Mpdo`] with operator-preserving
//! truncation.
//!
//! # Gate schedule
//!
//! [`build_plan`] compiles a [`ModelSpec`] into layers of two-site gates.
//! Nearest-neighbour bonds form the usual even/odd brickwork; a second-order
//! step is the symmetric palindrome `odd(dt/2) · even(dt) · odd(dt/2)`
//! (generalized when next-nearest-neighbour layers are present). Across a
//! probe-free stretch of steps the trailing and leading half-layers of
//! adjacent steps merge into a single full layer — exact, because gates
//! within a layer act on disjoint bonds and same-bond half-gates compose to
//! the full gate.
//!
//! Next-nearest-neighbour terms `(i, i+2)` are routed through adjacent bonds
//! as `SWAP · gate · SWAP`: the SWAP on `(i+1, i+2)` brings site `i+2` next
//! to site `i`, the interaction acts on `(i, i+1)`, and the SWAP restores the
//! order. Terms are grouped by `(i−1) mod 3` so the wrapped windows of a
//! group never overlap.
//!
//! A brickwork (Floquet) drive applies the odd-bond layer for half a period
//! and the even-bond layer for the other half, each layer exponentiated
//! exactly — commuting gates need no further splitting.
//!
//! # Truncation
//!
//! After every gate the bond is split by SVD. If the rank exceeds
//! `chi_max` (or a singular-value cutoff is set), the correction is chosen so
//! that all operators supported within `preserve_radius` sites of the bond —
//! and all operators strictly on one side of it, at any distance — keep
//! their expectation values. Writing the bond matrix as `Σ` in the SVD
//! gauge, the left/right window contractions span subspaces `Q_L`, `Q_R`;
//! the preserved component `P_L Σ + Σ P_R − P_L Σ P_R` is kept exactly and
//! only the complement `D = P_L^⊥ Σ P_R^⊥` is truncated by (randomized) SVD.
//! Because the all-identity contraction lies in both window spans, the trace
//! and every one-sided observable (in particular the total conserved charge)
//! survive truncation to floating-point accuracy.
//!
//! In the Hermitian-basis representation the state's Hermiticity is
//! structural — real tensors cannot drift — so the re-symmetrization pass at
//! probe times is a no-op and `hermiticity_drift` is reported as zero. The
//! trace is monitored after every layer and the run aborts if it drifts.

use crate::algebra::{self, Drive, HamiltonianTerm, ModelSpec, TermLayer};
use crate::basis::{self, OperatorBasis};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mpdo::{ChargeSpec, Mpdo};
use ndarray::concatenate;
use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

/// Singular values below this fraction of the largest one are numerical
/// noise and are always dropped, gate or no gate.
const RANK_FLOOR: f64 = 1e-14;

/// Hard cap on the number of operator strings in one preservation window.
const WINDOW_STRING_CAP: usize = 65_536;

/// Abort threshold for the running trace drift.
const TRACE_DRIFT_LIMIT: f64 = 1e-6;

// ---------- truncation policy ----------

/// Compression contract for the evolution: bond-dimension cap, optional
/// singular-value cutoff, and the half-width of the window of operators
/// whose expectation values truncation must preserve.
#[derive(Debug, Clone)]
pub struct TruncationPolicy {
    /// Maximum bond dimension χ.
    pub chi_max: usize,
    /// Relative singular-value cutoff in `[0, 1)`: components of the
    /// truncatable correction below `sv_cutoff · ‖Σ‖_F` are dropped even
    /// when χ still has room. `0` disables the cutoff.
    pub sv_cutoff: f64,
    /// Preservation half-width ℓ: all operators within ℓ sites on each side
    /// of a truncated bond keep their expectation values. `ℓ = 0` reduces to
    /// plain trace-preserving SVD truncation.
    pub preserve_radius: usize,
    /// Skip the `chi_max ≥ d^(2ℓ)` feasibility check at validation time.
    /// Independently of this flag, a truncated bond whose two preservation
    /// windows cannot both fit under `chi_max` degrades to the largest
    /// radius that fits (the report's preserved dimensions record it), so
    /// exact preservation is only guaranteed when `chi_max` can hold both
    /// windows.
    pub override_feasibility: bool,
    /// Seed for the randomized SVD of the truncatable correction.
    pub seed: u64,
    /// Audit every n-th truncation event by re-contracting the preservation
    /// windows against the kept factors; `None` disables auditing and
    /// `Some(0)` is rejected.
    pub audit_stride: Option<u64>,
}

impl TruncationPolicy {
    pub fn new(chi_max: usize, preserve_radius: usize) -> Self {
        Self {
            chi_max,
            sv_cutoff: 0.0,
            preserve_radius,
            override_feasibility: false,
            seed: 0,
            audit_stride: None,
        }
    }

    /// Check internal consistency and feasibility for local dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.chi_max == 0 {
            return Err(Error::Policy("chi_max must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.sv_cutoff) {
            return Err(Error::Policy(format!(
                "sv_cutoff must lie in [0, 1), got {}",
                self.sv_cutoff
            )));
        }
        if self.audit_stride == Some(0) {
            return Err(Error::Policy("audit_stride must be ≥ 1 when set".into()));
        }
        let dd = d * d;
        let mut strings = 1usize;
        for _ in 0..self.preserve_radius {
            strings = strings.saturating_mul(dd);
            if strings > WINDOW_STRING_CAP {
                return Err(Error::Policy(format!(
                    "preserve_radius {} gives more than {WINDOW_STRING_CAP} window operator strings at d = {d}",
                    self.preserve_radius
                )));
            }
        }
        if !self.override_feasibility && self.chi_max < strings {
            return Err(Error::Policy(format!(
                "chi_max = {} cannot hold the d^(2ℓ) = {strings} preserved directions per side \
                 (d = {d}, ℓ = {}); raise chi_max, lower preserve_radius, or set override_feasibility",
                self.chi_max, self.preserve_radius
            )));
        }
        Ok(())
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self::new(64, 2)
    }
}

// ---------- gate plan ----------

/// Trotter splitting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrotterOrder {
    First,
    Second,
}

/// One gate: a real orthogonal superoperator acting on the pair coefficients
/// of bond `bond` (0-based index of the left site).
#[derive(Debug, Clone)]
pub struct GateOp {
    pub bond: usize,
    pub superop: Arc<Array2<f64>>,
}

/// A named sequence of gates executed in order. `advance` is the share of
/// simulated time attributed to the layer in the log (the full step always
/// sums to the step length).
#[derive(Debug, Clone)]
pub struct GateLayer {
    pub label: String,
    pub advance: f64,
    pub gates: Vec<GateOp>,
}

/// Compiled gate program for one probe-grain unit of evolution.
#[derive(Debug, Clone)]
enum StepProgram {
    /// First order: the layers of one step, applied in sequence.
    Plain { layers: Vec<GateLayer> },
    /// Second order: `head · body · head` for a single step; across `n`
    /// consecutive steps the inner `head · head` pairs merge into
    /// `junction`, giving `head · body · (junction · body)^(n−1) · head`.
    MergedSecond {
        head: GateLayer,
        body: Vec<GateLayer>,
        junction: GateLayer,
    },
    /// Brickwork drive: exact odd layer on even units, exact even layer on
    /// odd units, each advancing half a period.
    Floquet { odd: GateLayer, even: GateLayer },
}

/// Gate schedule compiled from a model: owns the gates, the probe grain (the
/// smallest time interval at which observables may be read out), and the
/// compiled step program.
#[derive(Debug, Clone)]
pub struct TrotterPlan {
    spec: ModelSpec,
    dt: f64,
    order: TrotterOrder,
    probe_grain: f64,
    program: StepProgram,
}

impl TrotterPlan {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn order(&self) -> TrotterOrder {
        self.order
    }

    /// Smallest interval at which the evolution can pause for probes: `dt`
    /// for a static chain, half a period for a brickwork drive.
    pub fn probe_grain(&self) -> f64 {
        self.probe_grain
    }

    pub fn is_floquet(&self) -> bool {
        matches!(self.program, StepProgram::Floquet { .. })
    }

    /// The layers of one standalone step (no cross-step merging), in
    /// execution order. Mostly useful for inspection and tests.
    pub fn standalone_step(&self) -> Vec<&GateLayer> {
        match &self.program {
            StepProgram::Plain { layers } => layers.iter().collect(),
            StepProgram::MergedSecond { head, body, .. } => {
                let mut v = vec![head];
                v.extend(body.iter());
                v.push(head);
                v
            }
            StepProgram::Floquet { odd, even } => vec![odd, even],
        }
    }
}

/// Small cache so identical (matrix, dt) pairs share one superoperator.
struct GateCache {
    entries: Vec<(Array2<C64>, f64, Arc<Array2<f64>>)>,
}

impl GateCache {
    fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn superop(
        &mut self,
        basis: &OperatorBasis,
        h: &Array2<C64>,
        dt: f64,
    ) -> Result<Arc<Array2<f64>>> {
        for (mat, t, sop) in &self.entries {
            if *t == dt && mat.dim() == h.dim() && mat.iter().zip(h.iter()).all(|(a, b)| a == b) {
                return Ok(Arc::clone(sop));
            }
        }
        let u = basis::expm_i(&h.view(), dt)?;
        let sop = Arc::new(basis.pair_gate_superop(&u.view())?);
        self.entries.push((h.clone(), dt, Arc::clone(&sop)));
        Ok(sop)
    }
}

fn nn_layer(
    basis: &OperatorBasis,
    terms: &[&HamiltonianTerm],
    dt: f64,
    advance: f64,
    label: &str,
    cache: &mut GateCache,
) -> Result<GateLayer> {
    let mut gates = Vec::with_capacity(terms.len());
    for t in terms {
        gates.push(GateOp {
            bond: t.sites.0 - 1,
            superop: cache.superop(basis, &t.matrix, dt)?,
        });
    }
    Ok(GateLayer { label: label.to_string(), advance, gates })
}

/// Wrap one group of NNN terms in SWAPs: for a term on `(i, i+2)` the gates
/// are SWAP on bond `(i+1, i+2)`, the interaction on `(i, i+1)`, SWAP back.
fn nnn_layer(
    basis: &OperatorBasis,
    terms: &[&HamiltonianTerm],
    dt: f64,
    advance: f64,
    label: &str,
    swap: &Arc<Array2<f64>>,
    cache: &mut GateCache,
) -> Result<GateLayer> {
    let mut gates = Vec::with_capacity(3 * terms.len());
    for t in terms {
        let i = t.sites.0; // 1-based; partner is i+2
        gates.push(GateOp { bond: i, superop: Arc::clone(swap) });
        gates.push(GateOp { bond: i - 1, superop: cache.superop(basis, &t.matrix, dt)? });
        gates.push(GateOp { bond: i, superop: Arc::clone(swap) });
    }
    Ok(GateLayer { label: label.to_string(), advance, gates })
}

/// Compile a model into a gate schedule.
///
/// Static chains get the even/odd brickwork (plus SWAP-wrapped layers for
/// next-nearest-neighbour terms) at the requested order; a brickwork drive
/// gets its two exact layers and requires `dt` to divide half the period.
pub fn build_plan(spec: &ModelSpec, dt: f64, order: TrotterOrder) -> Result<TrotterPlan> {
    spec.validate()?;
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Argument(format!("dt must be positive, got {dt}")));
    }
    let basis = OperatorBasis::new(spec.local_dim)?;
    let terms = algebra::assemble_terms(spec)?;
    let odd: Vec<&HamiltonianTerm> =
        terms.iter().filter(|t| t.layer == TermLayer::OddBond).collect();
    let even: Vec<&HamiltonianTerm> =
        terms.iter().filter(|t| t.layer == TermLayer::EvenBond).collect();
    let nnn: Vec<&HamiltonianTerm> =
        terms.iter().filter(|t| t.layer == TermLayer::NextNearest).collect();
    let mut cache = GateCache::new();

    if let Drive::Floquet { period } = spec.drive {
        if !nnn.is_empty() {
            return Err(Error::Unsupported(
                "brickwork drive with next-nearest-neighbour terms is not supported".into(),
            ));
        }
        let half = period / 2.0;
        let steps = half / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Argument(format!(
                "dt = {dt} must divide half the drive period ({half})"
            )));
        }
        let odd_layer = nn_layer(&basis, &odd, half, half, "floquet-odd", &mut cache)?;
        let even_layer = nn_layer(&basis, &even, half, half, "floquet-even", &mut cache)?;
        return Ok(TrotterPlan {
            spec: spec.clone(),
            dt,
            order,
            probe_grain: half,
            program: StepProgram::Floquet { odd: odd_layer, even: even_layer },
        });
    }

    // Static chain: layer order is odd, even, then the NNN groups. Terms
    // (i, i+2) with equal (i−1) mod 3 have disjoint SWAP windows and share a
    // layer.
    let mut nnn_groups: [Vec<&HamiltonianTerm>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for t in &nnn {
        nnn_groups[(t.sites.0 - 1) % 3].push(*t);
    }
    let swap = Arc::new(basis.pair_gate_superop(
        &algebra::permutation_matrix(spec.local_dim).view(),
    )?);

    let program = match order {
        TrotterOrder::First => {
            let mut layers = Vec::new();
            layers.push(nn_layer(&basis, &odd, dt, 0.0, "odd", &mut cache)?);
            layers.push(nn_layer(&basis, &even, dt, 0.0, "even", &mut cache)?);
            for (g, group) in nnn_groups.iter().enumerate() {
                if !group.is_empty() {
                    let label = format!("nnn-{g}");
                    layers.push(nnn_layer(&basis, group, dt, 0.0, &label, &swap, &mut cache)?);
                }
            }
            layers.retain(|l| !l.gates.is_empty());
            let share = dt / layers.len() as f64;
            for l in &mut layers {
                l.advance = share;
            }
            StepProgram::Plain { layers }
        }
        TrotterOrder::Second => {
            // Palindrome: odd(dt/2) · [inner halves · last(dt) · inner
            // halves reversed] · odd(dt/2). The body is everything between
            // the two odd half-layers.
            let head = nn_layer(&basis, &odd, dt / 2.0, dt / 4.0, "odd-half", &mut cache)?;
            let junction = nn_layer(&basis, &odd, dt, dt / 2.0, "odd", &mut cache)?;
            let mut inner: Vec<(String, Vec<&HamiltonianTerm>, bool)> = Vec::new();
            inner.push(("even".to_string(), even.clone(), false));
            for (g, group) in nnn_groups.iter().enumerate() {
                if !group.is_empty() {
                    inner.push((format!("nnn-{g}"), group.clone(), true));
                }
            }
            inner.retain(|(_, terms, _)| !terms.is_empty());
            let mut body = Vec::new();
            if inner.is_empty() {
                // Only odd bonds exist (L = 2): head·head is already exact.
            } else if inner.len() == 1 {
                let (label, terms, is_nnn) = &inner[0];
                body.push(if *is_nnn {
                    nnn_layer(&basis, terms, dt, 0.0, label, &swap, &mut cache)?
                } else {
                    nn_layer(&basis, terms, dt, 0.0, label, &mut cache)?
                });
            } else {
                for (label, terms, is_nnn) in inner.iter().take(inner.len() - 1) {
                    let label = format!("{label}-half");
                    body.push(if *is_nnn {
                        nnn_layer(&basis, terms, dt / 2.0, 0.0, &label, &swap, &mut cache)?
                    } else {
                        nn_layer(&basis, terms, dt / 2.0, 0.0, &label, &mut cache)?
                    });
                }
                let (label, terms, is_nnn) = inner.last().expect("nonempty");
                body.push(if *is_nnn {
                    nnn_layer(&basis, terms, dt, 0.0, label, &swap, &mut cache)?
                } else {
                    nn_layer(&basis, terms, dt, 0.0, label, &mut cache)?
                });
                for (label, terms, is_nnn) in inner.iter().rev().skip(1) {
                    let label = format!("{label}-half");
                    body.push(if *is_nnn {
                        nnn_layer(&basis, terms, dt / 2.0, 0.0, &label, &swap, &mut cache)?
                    } else {
                        nn_layer(&basis, terms, dt / 2.0, 0.0, &label, &mut cache)?
                    });
                }
            }
            if !body.is_empty() {
                let share = dt / 2.0 / body.len() as f64;
                for l in &mut body {
                    l.advance = share;
                }
            }
            StepProgram::MergedSecond { head, body, junction }
        }
    };
    Ok(TrotterPlan { spec: spec.clone(), dt, order, probe_grain: dt, program })
}

// ---------- reports and logs ----------

/// What one gate-plus-truncation event did to its bond.
#[derive(Debug, Clone)]
pub struct TruncationReport {
    /// 1-based bond index.
    pub bond: usize,
    /// Rank of the bond after the gate, before compression.
    pub rank_before: usize,
    /// Bond dimension kept.
    pub rank_after: usize,
    /// Dimensions of the protected left/right window subspaces (zero when
    /// no compression was needed).
    pub preserved_left: usize,
    pub preserved_right: usize,
    /// Sum of squared singular values removed from the correction.
    pub discarded_weight: f64,
    /// Max deviation of the re-contracted preservation windows, when this
    /// event was audited.
    pub audit_deviation: Option<f64>,
    /// Whether the operator-preserving compression ran (as opposed to a
    /// plain rank floor).
    pub truncated: bool,
}

/// Per-layer progress record.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Simulated time after the layer.
    pub time: f64,
    pub layer: String,
    pub max_bond: usize,
    /// Total discarded weight of the layer's truncations.
    pub discard_weight: f64,
    /// |trace − initial trace| after the layer.
    pub trace_drift: f64,
    /// Identically zero in this representation (kept for the record format:
    /// Hermiticity is structural, see the module docs).
    pub hermiticity_drift: f64,
    /// Wall-clock seconds since evolution started.
    pub wall_clock_s: f64,
}

/// Diagnostics accumulated by [`evolve`].
#[derive(Debug, Clone, Default)]
pub struct EvolutionLog {
    pub records: Vec<StepRecord>,
    /// Number of operator-preserving truncation events.
    pub truncation_events: u64,
    /// Number of those that were audited.
    pub audit_events: u64,
    /// Worst audited window deviation.
    pub audit_max_deviation: f64,
    /// Trace of the initial state (the drift reference).
    pub initial_trace: f64,
}

impl EvolutionLog {
    pub fn max_bond(&self) -> usize {
        self.records.iter().map(|r| r.max_bond).max().unwrap_or(0)
    }

    pub fn total_discarded_weight(&self) -> f64 {
        self.records.iter().map(|r| r.discard_weight).sum()
    }
}

// ---------- probes ----------

/// Observable read out at probe times.
#[derive(Debug, Clone)]
pub enum ProbeKind {
    /// Site-resolved charge profile `tr(ρ q̂_r) / κ` (normalized so a
    /// domain wall of contrast μ starts at ±μ).
    ChargeProfile(ChargeSpec),
    /// Unnormalized total charge `Σ_r tr(ρ q̂_r)`.
    TotalCharge(ChargeSpec),
    /// Nearest-neighbour bond energies `tr(ρ h_r)`, one per bond.
    BondEnergies,
    /// Bond dimensions, `L+1` entries including the trivial edges.
    BondDims,
    /// Trace of the state.
    Trace,
}

impl ProbeKind {
    fn base_label(&self) -> &'static str {
        match self {
            ProbeKind::ChargeProfile(_) => "charge_profile",
            ProbeKind::TotalCharge(_) => "total_charge",
            ProbeKind::BondEnergies => "bond_energies",
            ProbeKind::BondDims => "bond_dims",
            ProbeKind::Trace => "trace",
        }
    }
}

/// One probe's time series: `rows[k]` is the observable row at `times[k]`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeSeries {
    pub label: String,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

/// All probe series of one evolution run.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct Trajectory {
    pub series: Vec<ProbeSeries>,
}

impl Trajectory {
    pub fn series_by_label(&self, label: &str) -> Option<&ProbeSeries> {
        self.series.iter().find(|s| s.label == label)
    }
}

// ---------- public operations ----------

/// Apply a two-site unitary to bond `(bond, bond+1)` (1-based) and compress
/// the bond according to `policy`.
pub fn apply_gate(
    state: &mut Mpdo,
    bond: usize,
    gate: &ArrayView2<C64>,
    policy: &TruncationPolicy,
) -> Result<TruncationReport> {
    let l = state.length();
    let d = state.local_dim();
    if bond < 1 || bond >= l {
        return Err(Error::Argument(format!("bond {bond} out of range for L = {l}")));
    }
    policy.validate(d)?;
    let dd = d * d;
    if gate.dim() != (dd, dd) {
        return Err(Error::Argument(format!(
            "gate must be {dd}×{dd}, got {:?}",
            gate.dim()
        )));
    }
    let defect = basis::unitarity_defect(gate);
    if defect > 1e-12 * dd as f64 {
        return Err(Error::Argument(format!(
            "gate is not unitary (defect {defect:.2e})"
        )));
    }
    let sop = state.basis().pair_gate_superop(gate)?;
    let audit = policy.audit_stride.is_some();
    gate_and_truncate(state, bond - 1, Some(&sop), policy, mix_seed(policy.seed, 0, bond - 1), audit)
}

/// Compress bond `(bond, bond+1)` (1-based) in place without applying a
/// gate.
pub fn dmt_truncate(
    state: &mut Mpdo,
    bond: usize,
    policy: &TruncationPolicy,
) -> Result<TruncationReport> {
    let l = state.length();
    if bond < 1 || bond >= l {
        return Err(Error::Argument(format!("bond {bond} out of range for L = {l}")));
    }
    policy.validate(state.local_dim())?;
    let audit = policy.audit_stride.is_some();
    gate_and_truncate(state, bond - 1, None, policy, mix_seed(policy.seed, 0, bond - 1), audit)
}

/// Continuation point for resuming a long evolution mid-way: how many gate
/// layers and probe-grain units the state has already been through. The
/// truncation seed stream and the drive phase then continue exactly as in
/// an uninterrupted run, so a resumed evolution is bit-identical to one
/// that never stopped (provided the stop sat on a probe boundary).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ResumePoint {
    pub layers_done: u64,
    pub units_done: u64,
}

/// Evolve `state` to `t_max`, reading out `probes` at `probe_times`.
///
/// `t_max` and every probe time must sit on the plan's probe grain
/// ([`TrotterPlan::probe_grain`]); probe times are snapped to the nearest
/// grain point, deduplicated, and reported as snapped. The returned log has
/// one record per gate layer. The run aborts with a numeric error if the
/// trace drifts by more than 1e-6.
pub fn evolve(
    state: &mut Mpdo,
    plan: &TrotterPlan,
    policy: &TruncationPolicy,
    t_max: f64,
    probe_times: &[f64],
    probes: &[ProbeKind],
) -> Result<(Trajectory, EvolutionLog)> {
    evolve_resumed(state, plan, policy, t_max, probe_times, probes, ResumePoint::default())
}

/// [`evolve`] continuing from a checkpointed position: times are relative
/// to the resume point (the first grain unit applied is
/// `resume.units_done`, the first layer seed index `resume.layers_done`).
pub fn evolve_resumed(
    state: &mut Mpdo,
    plan: &TrotterPlan,
    policy: &TruncationPolicy,
    t_max: f64,
    probe_times: &[f64],
    probes: &[ProbeKind],
    resume: ResumePoint,
) -> Result<(Trajectory, EvolutionLog)> {
    let l = state.length();
    let d = state.local_dim();
    if plan.spec.length != l || plan.spec.local_dim != d {
        return Err(Error::Argument(format!(
            "plan is for L = {}, d = {} but the state has L = {l}, d = {d}",
            plan.spec.length, plan.spec.local_dim
        )));
    }
    policy.validate(d)?;
    if !t_max.is_finite() || t_max < 0.0 {
        return Err(Error::Argument(format!("t_max must be ≥ 0, got {t_max}")));
    }
    let grain = plan.probe_grain;
    let units_f = t_max / grain;
    let total_units = units_f.round();
    if (units_f - total_units).abs() > 1e-9 * units_f.max(1.0) {
        return Err(Error::Argument(format!(
            "t_max = {t_max} is not a whole number of {grain}-length steps"
        )));
    }
    let total_units = total_units as usize;

    // Snap probe times onto the grain.
    let mut probe_units: Vec<usize> = Vec::with_capacity(probe_times.len());
    let mut last = f64::NEG_INFINITY;
    for &t in probe_times {
        if !t.is_finite() || t < -1e-9 || t > t_max + 1e-9 * t_max.max(1.0) {
            return Err(Error::Argument(format!(
                "probe time {t} outside [0, {t_max}]"
            )));
        }
        if t < last {
            return Err(Error::Argument("probe times must be sorted ascending".into()));
        }
        last = t;
        let u = (t / grain).round().max(0.0) as usize;
        let u = u.min(total_units);
        if probe_units.last() != Some(&u) {
            probe_units.push(u);
        }
    }

    // Pre-resolve probe requirements.
    let mut bond_terms: Vec<Array2<C64>> = Vec::new();
    for p in probes {
        match p {
            ProbeKind::ChargeProfile(q) | ProbeKind::TotalCharge(q) => {
                if q.op.dim != d {
                    return Err(Error::Argument(format!(
                        "charge operator '{}' has dimension {}, chain has d = {d}",
                        q.op.label, q.op.dim
                    )));
                }
            }
            ProbeKind::BondEnergies => {
                if bond_terms.is_empty() {
                    let mut mats = vec![Array2::<C64>::zeros((d * d, d * d)); l - 1];
                    for t in algebra::assemble_terms(&plan.spec)? {
                        if t.layer != TermLayer::NextNearest {
                            mats[t.sites.0 - 1] = t.matrix;
                        }
                    }
                    bond_terms = mats;
                }
            }
            ProbeKind::BondDims | ProbeKind::Trace => {}
        }
    }

    // Series labels, deduplicated by suffixing repeats.
    let mut trajectory = Trajectory::default();
    for p in probes {
        let base = p.base_label();
        let dup = trajectory.series.iter().filter(|s| {
            s.label == base || s.label.starts_with(&format!("{base}_"))
        }).count();
        let label = if dup == 0 { base.to_string() } else { format!("{base}_{}", dup + 1) };
        trajectory.series.push(ProbeSeries { label, times: Vec::new(), rows: Vec::new() });
    }

    let mut log = EvolutionLog { initial_trace: state.trace(), ..Default::default() };
    let mut ctx = RunContext {
        sim_time: 0.0,
        layer_idx: resume.layers_done,
        unit_offset: resume.units_done,
        trace_ref: log.initial_trace,
        start: Instant::now(),
    };

    let mut current = 0usize;
    for &u in &probe_units {
        advance_units(state, plan, policy, current, u, &mut ctx, &mut log)?;
        ctx.sim_time = u as f64 * grain;
        record_probes(state, probes, &bond_terms, ctx.sim_time, &mut trajectory)?;
        current = u;
    }
    advance_units(state, plan, policy, current, total_units, &mut ctx, &mut log)?;
    Ok((trajectory, log))
}

// ---------- evolution internals ----------

struct RunContext {
    sim_time: f64,
    layer_idx: u64,
    /// Grain units applied before this call (keeps the drive phase of a
    /// resumed run aligned).
    unit_offset: u64,
    trace_ref: f64,
    start: Instant,
}

fn advance_units(
    state: &mut Mpdo,
    plan: &TrotterPlan,
    policy: &TruncationPolicy,
    from: usize,
    to: usize,
    ctx: &mut RunContext,
    log: &mut EvolutionLog,
) -> Result<()> {
    if to <= from {
        return Ok(());
    }
    let n = to - from;
    match &plan.program {
        StepProgram::Plain { layers } => {
            for _ in 0..n {
                for layer in layers {
                    apply_layer(state, layer, policy, ctx, log)?;
                }
            }
        }
        StepProgram::MergedSecond { head, body, junction } => {
            apply_layer(state, head, policy, ctx, log)?;
            for layer in body {
                apply_layer(state, layer, policy, ctx, log)?;
            }
            for _ in 1..n {
                apply_layer(state, junction, policy, ctx, log)?;
                for layer in body {
                    apply_layer(state, layer, policy, ctx, log)?;
                }
            }
            apply_layer(state, head, policy, ctx, log)?;
        }
        StepProgram::Floquet { odd, even } => {
            for u in from..to {
                let layer = if (ctx.unit_offset + u as u64) % 2 == 0 { odd } else { even };
                apply_layer(state, layer, policy, ctx, log)?;
            }
        }
    }
    Ok(())
}

fn apply_layer(
    state: &mut Mpdo,
    layer: &GateLayer,
    policy: &TruncationPolicy,
    ctx: &mut RunContext,
    log: &mut EvolutionLog,
) -> Result<()> {
    let mut discarded = 0.0;
    for gate in &layer.gates {
        let audit_due = match policy.audit_stride {
            Some(stride) => log.truncation_events % stride == 0,
            None => false,
        };
        let seed = mix_seed(policy.seed, ctx.layer_idx, gate.bond);
        let rep = gate_and_truncate(state, gate.bond, Some(&gate.superop), policy, seed, audit_due)?;
        discarded += rep.discarded_weight;
        if rep.truncated {
            log.truncation_events += 1;
        }
        if let Some(dev) = rep.audit_deviation {
            log.audit_events += 1;
            log.audit_max_deviation = log.audit_max_deviation.max(dev);
        }
    }
    ctx.layer_idx += 1;
    ctx.sim_time += layer.advance;
    let drift = (state.trace() - ctx.trace_ref).abs();
    if drift > TRACE_DRIFT_LIMIT {
        return Err(Error::Numeric(format!(
            "trace drifted by {drift:.3e} (> {TRACE_DRIFT_LIMIT:.0e}) after layer '{}' at t ≈ {:.6}",
            layer.label, ctx.sim_time
        )));
    }
    log.records.push(StepRecord {
        time: ctx.sim_time,
        layer: layer.label.clone(),
        max_bond: state.max_bond_dim(),
        discard_weight: discarded,
        trace_drift: drift,
        hermiticity_drift: 0.0,
        wall_clock_s: ctx.start.elapsed().as_secs_f64(),
    });
    Ok(())
}

fn record_probes(
    state: &Mpdo,
    probes: &[ProbeKind],
    bond_terms: &[Array2<C64>],
    time: f64,
    trajectory: &mut Trajectory,
) -> Result<()> {
    for (probe, series) in probes.iter().zip(trajectory.series.iter_mut()) {
        let row = match probe {
            ProbeKind::ChargeProfile(q) => {
                let vals = state.site_expectations(&q.op)?;
                vals.iter().map(|v| v.re / q.norm_kappa).collect()
            }
            ProbeKind::TotalCharge(q) => {
                let vals = state.site_expectations(&q.op)?;
                vec![vals.iter().map(|v| v.re).sum()]
            }
            ProbeKind::BondEnergies => {
                let mut row = Vec::with_capacity(bond_terms.len());
                for (b, h) in bond_terms.iter().enumerate() {
                    row.push(state.pair_expectation(b + 1, &h.view())?.re);
                }
                row
            }
            ProbeKind::BondDims => state.bond_dims().iter().map(|&b| b as f64).collect(),
            ProbeKind::Trace => vec![state.trace()],
        };
        series.times.push(time);
        series.rows.push(row);
    }
    Ok(())
}

// ---------- gate application + compression core ----------

/// SplitMix64-style mixing of (policy seed, layer, bond) into an event seed.
fn mix_seed(seed: u64, layer: u64, bond: usize) -> u64 {
    let mut z = seed
        .wrapping_add(layer.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((bond as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Left identity environment at the left edge of `site` (0-based): the
/// contraction of everything strictly left of it against the identity.
fn env_left_at(state: &Mpdo, site: usize) -> Array1<f64> {
    let mut v = Array1::from_elem(1, 1.0);
    for r in 0..site {
        let t = state.identity_transfer(r);
        v = v.dot(&t);
    }
    v
}

/// Right identity environment at the right edge of `site − 1`: everything
/// from `site` onward contracted against the identity.
fn env_right_at(state: &Mpdo, site: usize) -> Array1<f64> {
    let l = state.length();
    let mut v = Array1::from_elem(1, 1.0);
    for r in (site..l).rev() {
        let t = state.identity_transfer(r);
        v = t.dot(&v);
    }
    v
}

/// Stack the window contraction one site to the right:
/// `out[p·m + i, :] = Σ_k v[i, k] t[k, p, :]`.
fn grow_window_right(v: &Array2<f64>, t: &ArrayView3<f64>) -> Array2<f64> {
    let (m, _) = v.dim();
    let (_, dd, right) = t.dim();
    let mut out = Array2::zeros((m * dd, right));
    for p in 0..dd {
        let slab = t.index_axis(Axis(1), p);
        let prod = linalg::matmul(&v.view(), &slab);
        out.slice_mut(s![p * m..(p + 1) * m, ..]).assign(&prod);
    }
    out
}

/// Stack the window contraction one site to the left:
/// `out[:, p·c + j] = Σ_k t[:, p, k] w[k, j]`.
fn grow_window_left(t: &ArrayView3<f64>, w: &Array2<f64>) -> Array2<f64> {
    let (left, dd, _) = t.dim();
    let (_, c) = w.dim();
    let mut out = Array2::zeros((left, dd * c));
    for p in 0..dd {
        let slab = t.index_axis(Axis(1), p);
        let prod = linalg::matmul(&slab, &w.view());
        out.slice_mut(s![.., p * c..(p + 1) * c]).assign(&prod);
    }
    out
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    // Box–Muller on uniform draws; only the RNG stream order matters for
    // determinism.
    let mut out = Array2::zeros((rows, cols));
    let mut spare: Option<f64> = None;
    for x in out.iter_mut() {
        *x = match spare.take() {
            Some(v) => v,
            None => {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen::<f64>();
                let r = (-2.0 * u1.ln()).sqrt();
                let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
                spare = Some(r * s);
                r * c
            }
        };
    }
    out
}

/// Rank-`k` randomized SVD with oversampling 8 and two power iterations,
/// used when the direct SVD of the correction would cost much more than the
/// few directions we keep.
fn randomized_svd(
    m: &Array2<f64>,
    k: usize,
    seed: u64,
) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let (rows, cols) = m.dim();
    let kk = (k + 8).min(rows.min(cols));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gaussian_matrix(&mut rng, cols, kk);
    let y = linalg::matmul(&m.view(), &g.view());
    let (mut q, _) = linalg::qr_thin(&y.view())?;
    for _ in 0..2 {
        let z = linalg::matmul(&m.t(), &q.view());
        let (qz, _) = linalg::qr_thin(&z.view())?;
        let y = linalg::matmul(&m.view(), &qz.view());
        let (qy, _) = linalg::qr_thin(&y.view())?;
        q = qy;
    }
    let b = linalg::matmul(&q.t(), &m.view());
    let (ub, s, vt) = linalg::svd_thin(&b.view())?;
    let u = linalg::matmul(&q.view(), &ub.view());
    Ok((u, s, vt))
}

/// Contract the two site tensors at `b0`, optionally apply a gate
/// superoperator, split by SVD, and compress the bond. The gauge center
/// ends at `b0 + 1`.
fn gate_and_truncate(
    state: &mut Mpdo,
    b0: usize,
    superop: Option<&Array2<f64>>,
    policy: &TruncationPolicy,
    seed: u64,
    audit: bool,
) -> Result<TruncationReport> {
    let sites = state.length();
    let dd = state.basis().len();
    state.set_center(b0)?;

    let a = state.site_tensor(b0).to_owned();
    let b = state.site_tensor(b0 + 1).to_owned();
    let (al, _, ar) = a.dim();
    let (_, _, br) = b.dim();
    let am = a.into_shape((al * dd, ar)).expect("standard layout");
    let bm = b.into_shape((ar, dd * br)).expect("standard layout");
    let mut theta = linalg::matmul(&am.view(), &bm.view());
    if let Some(g) = superop {
        let t4 = theta
            .into_shape((al, dd, dd, br))
            .expect("shape")
            .permuted_axes([1, 2, 0, 3])
            .as_standard_layout()
            .to_owned();
        let tm = t4.into_shape((dd * dd, al * br)).expect("shape");
        let gated = linalg::matmul(&g.view(), &tm.view());
        let g4 = gated
            .into_shape((dd, dd, al, br))
            .expect("shape")
            .permuted_axes([2, 0, 1, 3])
            .as_standard_layout()
            .to_owned();
        theta = g4.into_shape((al * dd, dd * br)).expect("shape");
    }

    let (u, sv, vt) = linalg::svd_thin(&theta.view())?;
    let full = sv.len();
    let sigma_max = sv.iter().cloned().fold(0.0f64, f64::max);
    let theta_fro2: f64 = sv.iter().map(|s| s * s).sum();
    let mut rank = sv.iter().filter(|&&s| s > RANK_FLOOR * sigma_max).count().max(1);
    rank = rank.min(full);
    let floor_weight: f64 = sv.iter().skip(rank).map(|s| s * s).sum();

    let needs_compression = rank > policy.chi_max || policy.sv_cutoff > 0.0;
    if !needs_compression {
        let a_new = u.slice(s![.., ..rank]).to_owned();
        let mut b_new = Array2::zeros((rank, vt.dim().1));
        for i in 0..rank {
            let si = sv[i];
            b_new.row_mut(i).assign(&vt.row(i).mapv(|x| x * si));
        }
        install_pair(state, b0, a_new, b_new, al, dd, br, rank);
        return Ok(TruncationReport {
            bond: b0 + 1,
            rank_before: rank,
            rank_after: rank,
            preserved_left: 0,
            preserved_right: 0,
            discarded_weight: floor_weight,
            audit_deviation: None,
            truncated: false,
        });
    }

    // --- operator-preserving compression in the SVD gauge ---
    let u_cut = u.slice(s![.., ..rank]).to_owned();
    let vt_cut = vt.slice(s![..rank, ..]).to_owned();
    let svals: Vec<f64> = sv.iter().take(rank).cloned().collect();

    let u3 = u_cut.clone().into_shape((al, dd, rank)).expect("shape");
    let v3 = vt_cut.clone().into_shape((rank, dd, br)).expect("shape");

    // Window contractions: rows of `xl` are operator strings on the window
    // sites (row 0 = all-identity), columns live on the cut bond. A bond
    // whose two full windows cannot both fit under `chi_max` falls back to
    // the largest radius that fits — down to trace-only preservation at
    // radius 0 — and the report's preserved dimensions record the fallback.
    let mut radius = policy.preserve_radius;
    let (xl, xr, ql, qr, n_l, n_r) = loop {
        let lwin = radius.min(b0 + 1);
        let rwin = radius.min(sites - 1 - b0);
        let win_first = b0 + 1 - lwin;
        let win_last = b0 + rwin;

        let mut xl = env_left_at(state, win_first).insert_axis(Axis(0));
        for r in win_first..=b0 {
            let t = if r == b0 { u3.view() } else { state.site_tensor(r).view() };
            xl = grow_window_right(&xl, &t);
        }
        let mut xr = env_right_at(state, win_last + 1).insert_axis(Axis(1));
        for r in (b0 + 1..=win_last).rev() {
            let t = if r == b0 + 1 { v3.view() } else { state.site_tensor(r).view() };
            xr = grow_window_left(&t, &xr);
        }

        let (ql, _) = linalg::qr_thin(&xl.t())?;
        let (qr, _) = linalg::qr_thin(&xr.view())?;
        let n_l = ql.dim().1;
        let n_r = qr.dim().1;
        if rank <= policy.chi_max || n_l + n_r <= policy.chi_max {
            break (xl, xr, ql, qr, n_l, n_r);
        }
        if radius == 0 {
            return Err(Error::Policy(format!(
                "bond {} needs {n_l} + {n_r} preserved directions but chi_max = {}",
                b0 + 1,
                policy.chi_max
            )));
        }
        radius -= 1;
    };
    let k_cap = if rank > policy.chi_max { policy.chi_max - n_l - n_r } else { rank };

    // a1 = Q_Lᵀ Σ, a2 = Σ Q_R, cross = Q_Lᵀ Σ Q_R.
    let mut a1 = Array2::zeros((n_l, rank));
    for i in 0..n_l {
        for j in 0..rank {
            a1[[i, j]] = ql[[j, i]] * svals[j];
        }
    }
    let mut a2 = Array2::zeros((rank, n_r));
    for i in 0..rank {
        for j in 0..n_r {
            a2[[i, j]] = svals[i] * qr[[i, j]];
        }
    }
    let cross = linalg::matmul(&a1.view(), &qr.view());

    // D = Σ − P_L Σ − Σ P_R + P_L Σ P_R (the truncatable correction).
    let pl_sigma = linalg::matmul(&ql.view(), &a1.view());
    let sigma_pr = linalg::matmul(&a2.view(), &qr.t());
    let pl_sigma_pr = linalg::matmul(&ql.view(), &linalg::matmul(&cross.view(), &qr.t()).view());
    let mut dmat = pl_sigma_pr;
    dmat -= &pl_sigma;
    dmat -= &sigma_pr;
    for i in 0..rank {
        dmat[[i, i]] += svals[i];
    }
    let d_fro2: f64 = dmat.iter().map(|x| x * x).sum();

    let (ud, sd, vdt) = if k_cap + 16 >= rank {
        linalg::svd_thin(&dmat.view())?
    } else {
        randomized_svd(&dmat, k_cap, seed)?
    };
    let cutoff_abs = policy.sv_cutoff * theta_fro2.sqrt();
    let noise_abs = RANK_FLOOR * sigma_max;
    let mut keep = 0usize;
    while keep < k_cap && keep < sd.len() && sd[keep] > cutoff_abs.max(noise_abs) {
        keep += 1;
    }
    let kept_weight: f64 = sd.iter().take(keep).map(|s| s * s).sum();
    let discarded = (d_fro2 - kept_weight).max(0.0) + floor_weight;

    // X = [Q_L | P_L^⊥ Σ Q_R | U_D·diag(s_D)], Y = [Σ Q_L | Q_R | V_D];
    // M' = X Yᵀ = P_L Σ + Σ P_R − P_L Σ P_R + truncated D.
    let mut mid_x = a2.clone();
    mid_x -= &linalg::matmul(&ql.view(), &cross.view());
    let mut ud_s = ud.slice(s![.., ..keep]).to_owned();
    for j in 0..keep {
        let w = sd[j];
        ud_s.column_mut(j).mapv_inplace(|x| x * w);
    }
    let mut sigma_ql = Array2::zeros((rank, n_l));
    for i in 0..rank {
        for j in 0..n_l {
            sigma_ql[[i, j]] = svals[i] * ql[[i, j]];
        }
    }
    let vd = vdt.slice(s![..keep, ..]).t().to_owned();
    let x = concatenate(Axis(1), &[ql.view(), mid_x.view(), ud_s.view()]).expect("matching rows");
    let y = concatenate(Axis(1), &[sigma_ql.view(), qr.view(), vd.view()]).expect("matching rows");

    let (qx, rx) = linalg::qr_thin(&x.view())?;
    let (qy, ry) = linalg::qr_thin(&y.view())?;
    let core = linalg::matmul(&rx.view(), &ry.t());
    let (uc, sc, vct) = linalg::svd_thin(&core.view())?;
    let sc_max = sc.iter().cloned().fold(0.0f64, f64::max);
    let final_rank = sc
        .iter()
        .filter(|&&s| s > RANK_FLOOR * sc_max)
        .count()
        .max(1)
        .min(if rank > policy.chi_max { policy.chi_max } else { rank });

    let left_small = linalg::matmul(&qx.view(), &uc.slice(s![.., ..final_rank]));
    let right_unit = linalg::matmul(&vct.slice(s![..final_rank, ..]), &qy.t());

    let audit_deviation = if audit {
        // Re-contract the windows against Σ − M'' where M'' includes the
        // final rank floor; covers straddling and one-sided operators.
        let mut lw = left_small.clone();
        for j in 0..final_rank {
            let w = sc[j];
            lw.column_mut(j).mapv_inplace(|x| x * w);
        }
        let m_new = linalg::matmul(&lw.view(), &right_unit.view());
        let mut diff = m_new;
        diff.mapv_inplace(|x| -x);
        for i in 0..rank {
            diff[[i, i]] += svals[i];
        }
        let t1 = linalg::matmul(&xl.view(), &diff.view());
        let t2 = linalg::matmul(&t1.view(), &xr.view());
        Some(t2.iter().fold(0.0f64, |m, &x| m.max(x.abs())))
    } else {
        None
    };

    let a_new = linalg::matmul(&u_cut.view(), &left_small.view());
    let mut wright = right_unit;
    for i in 0..final_rank {
        let w = sc[i];
        wright.row_mut(i).mapv_inplace(|x| x * w);
    }
    let b_new = linalg::matmul(&wright.view(), &vt_cut.view());
    install_pair(state, b0, a_new, b_new, al, dd, br, final_rank);

    Ok(TruncationReport {
        bond: b0 + 1,
        rank_before: rank,
        rank_after: final_rank,
        preserved_left: n_l,
        preserved_right: n_r,
        discarded_weight: discarded,
        audit_deviation,
        truncated: true,
    })
}

fn install_pair(
    state: &mut Mpdo,
    b0: usize,
    a_new: Array2<f64>,
    b_new: Array2<f64>,
    al: usize,
    dd: usize,
    br: usize,
    rank: usize,
) {
    state.tensors[b0] = a_new.into_shape((al, dd, rank)).expect("shape");
    state.tensors[b0 + 1] = b_new.into_shape((rank, dd, br)).expect("shape");
    state.gauge_center = Some(b0 + 1);
}
