//! Transport observables derived from evolution trajectories: normalized
//! charge profiles, polarization transfer across the wall, discrete
//! gradients, continuity-equation currents, and energy light cones.
//!
//! Everything here is a pure function of trajectory data. Profiles are
//! site-indexed (`1..L`); gradients and currents are bond-indexed with the
//! same convention (bond `r` sits between sites `r` and `r+1`), so ratios of
//! the two need no interpolation.

use crate::engine::Trajectory;
use crate::error::{Error, Result};
use crate::mpdo::ChargeSpec;
use ndarray::prelude::*;

/// Site-resolved normalized polarization `m(r, t)`: one row per probe time,
/// one column per site (or per bond, for [`gradient_profile`] output).
#[derive(Debug, Clone)]
pub struct Profile {
    pub times: Vec<f64>,
    pub values: Array2<f64>,
}

impl Profile {
    /// Construct with shape/ordering validation but no magnitude bound
    /// (gradients legitimately reach `±2μ`).
    pub fn from_parts(times: Vec<f64>, values: Array2<f64>) -> Result<Self> {
        if times.len() != values.dim().0 {
            return Err(Error::Argument(format!(
                "{} times for {} rows",
                times.len(),
                values.dim().0
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument("times must be strictly increasing".into()));
        }
        Ok(Self { times, values })
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Number of columns (sites for a profile, bonds for a gradient).
    pub fn n_cols(&self) -> usize {
        self.values.dim().1
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.values.row(k)
    }
}

/// Polarization transferred across the wall as a function of time.
#[derive(Debug, Clone)]
pub struct TransferSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Bond currents reconstructed from the continuity equation. `values` has
/// one row per probe interval (at the midpoint time) and `L+1` columns:
/// column `s` is the current across the edge between sites `s` and `s+1`
/// (1-based), so columns `0` and `L` are the open ends and are zero up to
/// charge-conservation error.
#[derive(Debug, Clone)]
pub struct CurrentProfile {
    pub times: Vec<f64>,
    pub values: Array2<f64>,
}

/// Energy light-cone fit: front velocity plus the linear growth rate of the
/// energy transferred into the initially cold half.
#[derive(Debug, Clone)]
pub struct LightCone {
    /// Least-squares slope of front distance vs time.
    pub velocity: f64,
    /// `(t, distance from the wall)` pairs the fit used.
    pub front: Vec<(f64, f64)>,
    /// Least-squares slope of transferred energy vs time.
    pub energy_rate: f64,
    /// `(t, Σ_right δe)` pairs.
    pub energy_transferred: Vec<(f64, f64)>,
}

/// Extract the normalized charge profile `m(r, t) = ⟨q̂_r(t)⟩/κ` from a
/// trajectory (the charge-profile probe stores rows already normalized by
/// the κ of the charge it was given; `q` documents that charge and supplies
/// the magnitude bound `|m| ≤ max|eig(q̂)|/κ`, clipped at the contract's
/// `|m| ≤ 1`).
pub fn charge_profile(trajectory: &Trajectory, q: &ChargeSpec) -> Result<Profile> {
    let series = trajectory
        .series_by_label("charge_profile")
        .ok_or_else(|| Error::Data("trajectory has no charge-profile snapshots".into()))?;
    if series.times.is_empty() {
        return Err(Error::Data("charge-profile series is empty".into()));
    }
    let l = series.rows[0].len();
    let mut values = Array2::zeros((series.times.len(), l));
    let bound = (q.max_abs_eigenvalue() / q.norm_kappa).min(1.0) + 1e-9;
    for (k, row) in series.rows.iter().enumerate() {
        if row.len() != l {
            return Err(Error::Data(format!(
                "row {k} has {} sites, expected {l}",
                row.len()
            )));
        }
        for (r, &m) in row.iter().enumerate() {
            if m.abs() > bound {
                return Err(Error::Data(format!(
                    "normalized polarization |m({}, t={})| = {:.3} exceeds {bound:.3}",
                    r + 1,
                    series.times[k],
                    m.abs()
                )));
            }
            values[[k, r]] = m;
        }
    }
    Profile::from_parts(series.times.clone(), values)
}

/// Total polarization transferred across the central wall:
/// `P(t) = Σ_{r=1}^{L/2} (μ − m(r, t))`, the charge the left half has lost.
/// By conservation this equals the right-half gain `Σ (m + μ)`, and it grows
/// from zero as the wall melts.
pub fn polarization_transfer(profile: &Profile, mu: f64) -> Result<TransferSeries> {
    let l = profile.n_cols();
    if l < 2 || l % 2 != 0 {
        return Err(Error::Argument(format!(
            "polarization transfer needs an even number of sites, got {l}"
        )));
    }
    let half = l / 2;
    let mut values = Vec::with_capacity(profile.n_times());
    for k in 0..profile.n_times() {
        let row = profile.row(k);
        let p: f64 = (0..half).map(|r| mu - row[r]).sum();
        values.push(p);
    }
    if profile.times[0].abs() <= 1e-12 && values[0].abs() > 1e-10 {
        return Err(Error::Data(format!(
            "P(0) = {:.3e} but the initial wall should give exactly zero",
            values[0]
        )));
    }
    Ok(TransferSeries { times: profile.times.clone(), values })
}

/// Discrete spatial gradient, defined on bonds:
/// `g(r, t) = m(r+1, t) − m(r, t)` for `r = 1..L−1`.
pub fn gradient_profile(profile: &Profile) -> Result<Profile> {
    let l = profile.n_cols();
    if l < 2 {
        return Err(Error::Argument("gradient needs at least two sites".into()));
    }
    let n = profile.n_times();
    let mut values = Array2::zeros((n, l - 1));
    for k in 0..n {
        let row = profile.row(k);
        for r in 0..l - 1 {
            values[[k, r]] = row[r + 1] - row[r];
        }
    }
    Profile::from_parts(profile.times.clone(), values)
}

/// Bond currents from the discrete continuity equation
/// `m(r, t+Δt) − m(r, t) = −Δt·[j(r) − j(r−1)]`, accumulated from the open
/// left edge (`j(0) = 0`). Rows sit at interval midpoints; nonuniform probe
/// spacing is handled per interval.
pub fn current_profile(profile: &Profile) -> Result<CurrentProfile> {
    let n = profile.n_times();
    if n < 2 {
        return Err(Error::Argument("current reconstruction needs ≥ 2 probe times".into()));
    }
    let l = profile.n_cols();
    let mut times = Vec::with_capacity(n - 1);
    let mut values = Array2::zeros((n - 1, l + 1));
    for k in 0..n - 1 {
        let dt = profile.times[k + 1] - profile.times[k];
        times.push(0.5 * (profile.times[k] + profile.times[k + 1]));
        let before = profile.row(k);
        let after = profile.row(k + 1);
        let mut j = 0.0;
        for r in 0..l {
            j -= (after[r] - before[r]) / dt;
            values[[k, r + 1]] = j;
        }
    }
    Ok(CurrentProfile { times, values })
}

/// Fit the ballistic energy front of an energy-domain-wall run.
///
/// `energy` holds per-bond energies (one column per bond); deviations are
/// measured against the first row. A bond is "excited" once its deviation
/// exceeds `threshold` times the global maximum deviation; the front is the
/// outermost excited bond's distance from the central bond. The velocity is
/// the least-squares slope of that distance vs time, and the returned
/// energy rate is the slope of the energy accumulated right of center.
pub fn light_cone_velocity(energy: &Profile, threshold: f64) -> Result<LightCone> {
    let n = energy.n_times();
    if n < 3 {
        return Err(Error::Argument("light-cone fit needs ≥ 3 probe times".into()));
    }
    if !(0.0..1.0).contains(&threshold) || threshold <= 0.0 {
        return Err(Error::Argument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let n_bonds = energy.n_cols();
    if n_bonds < 3 {
        return Err(Error::Argument("light-cone fit needs ≥ 3 bonds".into()));
    }
    let base = energy.row(0).to_owned();
    let mut max_dev = 0.0f64;
    for k in 1..n {
        for b in 0..n_bonds {
            max_dev = max_dev.max((energy.values[[k, b]] - base[b]).abs());
        }
    }
    if max_dev <= 0.0 {
        return Err(Error::Data("energy profile never deviates from its initial row".into()));
    }
    let cut = threshold * max_dev;
    // Central bond: for L sites there are L−1 bonds and the wall sits on
    // bond L/2, i.e. column L/2 − 1.
    let center = (n_bonds + 1) / 2 - 1;
    let mut front = Vec::new();
    let mut energy_transferred = Vec::new();
    for k in 1..n {
        let t = energy.times[k];
        let mut outermost: Option<usize> = None;
        let mut touches_edge = false;
        for b in 0..n_bonds {
            if (energy.values[[k, b]] - base[b]).abs() > cut {
                let dist = b.abs_diff(center);
                if outermost.map_or(true, |d| dist > d) {
                    outermost = Some(dist);
                }
                if b == 0 || b == n_bonds - 1 {
                    touches_edge = true;
                }
            }
        }
        if touches_edge {
            return Err(Error::Window(format!(
                "energy front reached the chain boundary by t = {t}; shrink the fit window"
            )));
        }
        front.push((t, outermost.unwrap_or(0) as f64));
        let e_right: f64 = (center + 1..n_bonds).map(|b| energy.values[[k, b]] - base[b]).sum();
        energy_transferred.push((t, e_right));
    }
    let velocity = lsq_slope(&front)?;
    let energy_rate = lsq_slope(&energy_transferred)?;
    Ok(LightCone { velocity, front, energy_rate, energy_transferred })
}

fn lsq_slope(pts: &[(f64, f64)]) -> Result<f64> {
    if pts.len() < 2 {
        return Err(Error::Fit("need ≥ 2 points for a slope".into()));
    }
    let n = pts.len() as f64;
    let mx: f64 = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my: f64 = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for &(x, y) in pts {
        cov += (x - mx) * (y - my);
        var += (x - mx) * (x - mx);
    }
    if var <= 0.0 {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    Ok(cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{Family, ModelSpec};
    use crate::engine::{build_plan, evolve, ProbeKind, TrotterOrder, TruncationPolicy};
    use crate::mpdo::Mpdo;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn wall_run(
        spec: &ModelSpec,
        q: &ChargeSpec,
        mu: f64,
        dt: f64,
        t_max: f64,
        probe_times: &[f64],
    ) -> Trajectory {
        let mut state = Mpdo::domain_wall(spec.length, q, mu).unwrap();
        let plan = build_plan(spec, dt, TrotterOrder::Second).unwrap();
        let (traj, _) = evolve(
            &mut state,
            &plan,
            &TruncationPolicy::new(4096, 2),
            t_max,
            probe_times,
            &[ProbeKind::ChargeProfile(q.clone())],
        )
        .unwrap();
        traj
    }

    /// Synthetic diffusive melt: `m(r) = −μ·erf((r − c)/√(4Dt))` on `l`
    /// sites with the wall between `l/2` and `l/2 + 1`.
    fn diffusive_profile(l: usize, mu: f64, d_coef: f64, times: &[f64]) -> Profile {
        let c = l as f64 / 2.0 + 0.5;
        let mut values = Array2::zeros((times.len(), l));
        for (k, &t) in times.iter().enumerate() {
            for r in 1..=l {
                let m = if t == 0.0 {
                    if (r as f64) < c { mu } else { -mu }
                } else {
                    -mu * erf((r as f64 - c) / (4.0 * d_coef * t).sqrt())
                };
                values[[k, r - 1]] = m;
            }
        }
        Profile::from_parts(times.to_vec(), values).unwrap()
    }

    /// Abramowitz–Stegun 7.1.26 rational approximation (|err| < 1.5e-7),
    /// plenty for synthetic-profile fixtures.
    fn erf(x: f64) -> f64 {
        let s = x.signum();
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let poly = t
            * (0.254829592
                + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        s * (1.0 - poly * (-x * x).exp())
    }

    #[test]
    fn charge_profile_recovers_initial_step_and_bounds() {
        let spec = ModelSpec::uniform(Family::Su, 2, 4);
        let q = ChargeSpec::spin_z(2).unwrap();
        let traj = wall_run(&spec, &q, 0.2, 0.2, 0.4, &[0.0, 0.4]);
        let profile = charge_profile(&traj, &q).unwrap();
        assert_eq!(profile.n_times(), 2);
        assert_eq!(profile.n_cols(), 4);
        for r in 0..4 {
            let expect = if r < 2 { 0.2 } else { -0.2 };
            assert_abs_diff_eq!(profile.values[[0, r]], expect, epsilon = 1e-12);
        }

        // A trajectory without the probe is a data error.
        let empty = Trajectory::default();
        assert!(matches!(charge_profile(&empty, &q), Err(Error::Data(_))));
    }

    #[test]
    fn zero_contrast_profile_stays_zero() {
        let spec = ModelSpec::uniform(Family::Su, 2, 4);
        let q = ChargeSpec::spin_z(2).unwrap();
        let traj = wall_run(&spec, &q, 0.0, 0.2, 0.4, &[0.0, 0.4]);
        let profile = charge_profile(&traj, &q).unwrap();
        for &m in profile.values.iter() {
            assert!(m.abs() < 1e-12);
        }
    }

    /// The two inequivalent three-level charges relax identically in the
    /// linear-response regime: the normalized profiles collapse.
    #[test]
    fn inequivalent_charges_collapse_after_normalization() {
        let spec = ModelSpec::uniform(Family::Su, 3, 6);
        let mu = 0.05;
        let qz = ChargeSpec::spin_z(3).unwrap();
        let qa = ChargeSpec::three_level_alternate().unwrap();
        let times = [0.5, 1.0];
        let pz = charge_profile(&wall_run(&spec, &qz, mu, 0.25, 1.0, &times), &qz).unwrap();
        let pa = charge_profile(&wall_run(&spec, &qa, mu, 0.25, 1.0, &times), &qa).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in pz.values.iter().zip(pa.values.iter()) {
            worst = worst.max((a - b).abs());
        }
        assert!(
            worst < 5e-3,
            "normalized profiles of the two charges deviate by {worst:.2e}"
        );
    }

    #[test]
    fn polarization_transfer_starts_at_zero_and_balances_halves() {
        let spec = ModelSpec::uniform(Family::Su, 2, 6);
        let q = ChargeSpec::spin_z(2).unwrap();
        let mu = 0.3;
        let traj = wall_run(&spec, &q, mu, 0.1, 1.0, &[0.0, 0.5, 1.0]);
        let profile = charge_profile(&traj, &q).unwrap();
        let p = polarization_transfer(&profile, mu).unwrap();
        assert_abs_diff_eq!(p.values[0], 0.0, epsilon = 1e-10);
        assert!(p.values[2] > 1e-3, "the wall should have started melting");
        // Right-half computation agrees by charge conservation.
        for k in 0..profile.n_times() {
            let row = profile.row(k);
            let l = profile.n_cols();
            let right: f64 = (l / 2..l).map(|r| row[r] + mu).sum();
            assert_abs_diff_eq!(p.values[k], right, epsilon = 1e-8);
        }
    }

    #[test]
    fn polarization_transfer_matches_diffusive_closed_form() {
        // Times late enough that the site sum's discretization correction
        // (relative size ~1/(48Dt)) sits below the tolerance.
        let mu = 0.4;
        let d_coef = 1.3;
        let times = [30.0, 60.0, 120.0];
        let profile = diffusive_profile(200, mu, d_coef, &times);
        let p = polarization_transfer(&profile, mu).unwrap();
        for (k, &t) in times.iter().enumerate() {
            let analytic = mu * (4.0 * d_coef * t / std::f64::consts::PI).sqrt();
            assert_relative_eq!(p.values[k], analytic, max_relative = 1e-3);
        }
    }

    #[test]
    fn gradient_is_bondwise_difference_with_telescoping_sum() {
        // Constant rows give zero gradient.
        let flat = Profile::from_parts(
            vec![0.0, 1.0],
            Array2::from_elem((2, 5), 0.25),
        )
        .unwrap();
        let g = gradient_profile(&flat).unwrap();
        assert!(g.values.iter().all(|&x| x == 0.0));

        // A sharp wall has a single spike of −2μ at the wall bond.
        let mu = 0.3;
        let step = diffusive_profile(6, mu, 1.0, &[0.0]);
        let g = gradient_profile(&step).unwrap();
        assert_eq!(g.n_cols(), 5);
        for b in 0..5 {
            let expect = if b == 2 { -2.0 * mu } else { 0.0 };
            assert_abs_diff_eq!(g.values[[0, b]], expect, epsilon = 1e-12);
        }

        // Telescoping: the bond sum returns the edge difference exactly.
        let times = [1.0, 3.0];
        let smooth = diffusive_profile(40, 0.5, 0.8, &times);
        let g = gradient_profile(&smooth).unwrap();
        for k in 0..2 {
            let sum: f64 = g.row(k).sum();
            let edges = smooth.values[[k, 39]] - smooth.values[[k, 0]];
            assert_abs_diff_eq!(sum, edges, epsilon = 1e-12);
        }
    }

    #[test]
    fn current_profile_obeys_continuity_and_edges() {
        let times = [1.0, 2.0, 4.0];
        let profile = diffusive_profile(60, 0.4, 1.0, &times);
        let j = current_profile(&profile).unwrap();
        assert_eq!(j.times, vec![1.5, 3.0]);
        assert_eq!(j.values.dim(), (2, 61));
        for k in 0..2 {
            // Left edge is zero by construction; right edge vanishes up to
            // the conservation error of the synthetic profile.
            assert_eq!(j.values[[k, 0]], 0.0);
            assert!(j.values[[k, 60]].abs() < 1e-9);
            // Continuity residual is zero bond by bond.
            let dt = profile.times[k + 1] - profile.times[k];
            for r in 0..60 {
                let dm = profile.values[[k + 1, r]] - profile.values[[k, r]];
                let div = j.values[[k, r + 1]] - j.values[[k, r]];
                assert_abs_diff_eq!(div, -dm / dt, epsilon = 1e-12);
            }
        }

        // A static profile carries no current.
        let frozen = Profile::from_parts(
            vec![0.0, 1.0],
            ndarray::stack(
                Axis(0),
                &[profile.row(0), profile.row(0)],
            )
            .unwrap(),
        )
        .unwrap();
        let j0 = current_profile(&frozen).unwrap();
        assert!(j0.values.iter().all(|&x| x.abs() < 1e-14));
    }

    /// The wall current equals ΔP/Δt identically on the discrete data, so
    /// its deviation from the exact dP/dt of the fixture shrinks
    /// quadratically (midpoint rule) as the probe spacing is halved.
    #[test]
    fn wall_current_converges_to_transfer_rate() {
        let mu = 0.4;
        let d_coef = 1.0;
        let l = 120usize;
        // Exact time derivative of the discrete site sum:
        // dP/dt = −Σ_left ∂m/∂t with ∂m/∂t = μ z e^{−z²}/(√π t).
        let dp_exact = |t: f64| -> f64 {
            let w = (4.0 * d_coef * t).sqrt();
            let c = l as f64 / 2.0 + 0.5;
            (1..=l / 2)
                .map(|r| {
                    let z = (r as f64 - c) / w;
                    -mu * z * (-z * z).exp() / (std::f64::consts::PI.sqrt() * t)
                })
                .sum()
        };
        let residual = |dt: f64| -> f64 {
            let times = [4.0, 4.0 + dt];
            let profile = diffusive_profile(l, mu, d_coef, &times);
            let p = polarization_transfer(&profile, mu).unwrap();
            let j = current_profile(&profile).unwrap();
            let j_wall = j.values[[0, l / 2]];
            // Identity on the discrete data:
            let dp = (p.values[1] - p.values[0]) / dt;
            assert_abs_diff_eq!(j_wall, dp, epsilon = 1e-12);
            (j_wall - dp_exact(4.0 + dt / 2.0)).abs()
        };
        let r1 = residual(0.8);
        let r2 = residual(0.4);
        assert!(
            r1 / r2 > 3.0,
            "halving the probe spacing should quarter the residual: {r1:.2e} → {r2:.2e}"
        );
    }

    #[test]
    fn light_cone_recovers_synthetic_front_velocity() {
        // Box-shaped deviation spreading at v = 2.2 from the center of a
        // 100-site chain (99 bonds, wall at bond 50 = column 49).
        let l_bonds = 99;
        let v = 2.2;
        let times: Vec<f64> = (0..=8).map(|k| k as f64 * 2.0).collect();
        let mut values = Array2::zeros((times.len(), l_bonds));
        for (k, &t) in times.iter().enumerate() {
            for b in 0..l_bonds {
                let dist = (b as f64 - 49.0).abs();
                if t > 0.0 && dist <= v * t {
                    // Hot side loses, cold side gains.
                    values[[k, b]] = if b <= 49 { -0.05 } else { 0.05 };
                }
            }
        }
        let profile = Profile::from_parts(times, values).unwrap();
        let cone = light_cone_velocity(&profile, 0.02).unwrap();
        assert!(
            (cone.velocity - 2.2).abs() < 0.05,
            "fitted velocity {:.3} should be 2.2 ± 0.05",
            cone.velocity
        );
        // Transferred energy grows linearly: the fit matches 0.05·v·t.
        assert_relative_eq!(cone.energy_rate, 0.05 * 2.2, max_relative = 0.05);

        // Pushing the front past the boundary trips the finite-size guard.
        let times: Vec<f64> = (0..=8).map(|k| k as f64 * 4.0).collect();
        let mut values = Array2::zeros((times.len(), l_bonds));
        for (k, &t) in times.iter().enumerate() {
            for b in 0..l_bonds {
                let dist = (b as f64 - 49.0).abs();
                if t > 0.0 && dist <= v * t {
                    values[[k, b]] = 0.05;
                }
            }
        }
        let profile = Profile::from_parts(times, values).unwrap();
        match light_cone_velocity(&profile, 0.02) {
            Err(Error::Window(_)) => {}
            other => panic!("expected finite-size window error, got {other:?}"),
        }
    }
}
