//! Regenerates the vendored three-level reference gradient used by the
//! experiment planner's discrimination Monte Carlo: an SU(3) chain of 150
//! sites with a weak charge domain wall (μ = 0.1), evolved to t = 52 and
//! probed every 13 time units.
//!
//!     cargo run --release --example make_reference -- [t_max] [chi] [dt] [out.csv]

use kpzchain::algebra::{Family, ModelSpec};
use kpzchain::engine::{build_plan, evolve, ProbeKind, TrotterOrder, TruncationPolicy};
use kpzchain::error::Result;
use kpzchain::mpdo::{ChargeSpec, Mpdo};
use kpzchain::{io, observables};
use std::path::PathBuf;
use std::time::Instant;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let t_max: f64 = args.get(1).map_or(52.0, |s| s.parse().expect("t_max"));
    let chi: usize = args.get(2).map_or(96, |s| s.parse().expect("chi"));
    let dt: f64 = args.get(3).map_or(0.4, |s| s.parse().expect("dt"));
    let out = PathBuf::from(
        args.get(4)
            .cloned()
            .unwrap_or_else(|| "crates/kpzchain/data/su3_reference_gradient.csv".into()),
    );

    let length = 150;
    let mu = 0.1;
    let spec = ModelSpec::uniform(Family::Su, 3, length);
    let q = ChargeSpec::spin_z(3)?;
    let mut state = Mpdo::domain_wall(length, &q, mu)?;

    let mut policy = TruncationPolicy::new(chi, 2);
    policy.seed = 20260822;
    if chi < 81 {
        policy.override_feasibility = true;
    }
    let plan = build_plan(&spec, dt, TrotterOrder::Second)?;

    let mut probe_times: Vec<f64> = (0..).map(|k| 13.0 * k as f64).take_while(|&t| t < t_max).collect();
    probe_times.push(t_max);

    let started = Instant::now();
    let (trajectory, log) = evolve(
        &mut state,
        &plan,
        &policy,
        t_max,
        &probe_times,
        &[ProbeKind::ChargeProfile(q.clone()), ProbeKind::TotalCharge(q.clone()), ProbeKind::Trace],
    )?;
    let elapsed = started.elapsed().as_secs_f64();

    let profile = observables::charge_profile(&trajectory, &q)?;
    let gradient = observables::gradient_profile(&profile)?;
    io::write_profile_csv(&out, &gradient)?;
    let profile_out = out.with_file_name("su3_reference_profile.csv");
    io::write_profile_csv(&profile_out, &profile)?;

    let total = trajectory
        .series_by_label("total_charge")
        .expect("total_charge probe");
    let drift = total
        .rows
        .iter()
        .map(|r| (r[0] - total.rows[0][0]).abs())
        .fold(0.0_f64, f64::max);
    eprintln!(
        "t_max={t_max} chi={chi} dt={dt}: {elapsed:.1}s, max bond {}, truncations {}, \
         discarded weight {:.3e}, charge drift {drift:.3e}",
        log.max_bond(),
        log.truncation_events,
        log.total_discarded_weight(),
    );
    eprintln!("wrote {} and {}", out.display(), profile_out.display());
    Ok(())
}
