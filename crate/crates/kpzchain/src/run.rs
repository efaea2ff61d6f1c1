//! Run orchestration: execute a [`RunConfig`] end to end — build the model
//! and initial state, evolve with optional mid-run checkpoints, derive
//! observables, fit, and write every output plus a reproducibility manifest
//! into the configured directory.
//!
//! Checkpointing cuts the evolution at probe boundaries. A resumed run
//! continues the truncation seed stream and drive phase exactly where the
//! checkpoint stopped, so its outputs are byte-identical to an
//! uninterrupted run of the same configuration.

use crate::config::{AnalysisConfig, OutputFormat, RecipeKind, RunConfig};
use crate::engine::{
    build_plan, evolve_resumed, EvolutionLog, ResumePoint, Trajectory, TrotterPlan,
};
use crate::error::{Error, Result};
use crate::io::{self, FitReport, LogSummary, Manifest};
use crate::observables;
use crate::scaling::{self, ScalingFamily, ScalingFunctionTable};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const STATE_FILE: &str = "checkpoint_state.bin";
const PROGRESS_FILE: &str = "checkpoint_progress.json";

/// What `execute` produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub directory: PathBuf,
    pub trajectory: Trajectory,
    pub summary: LogSummary,
    /// Probe index the run resumed from (None = started fresh).
    pub resumed_at_probe: Option<usize>,
    /// Files written, relative to `directory`.
    pub files: Vec<String>,
}

/// Mid-run progress written next to the state checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    config_digest: String,
    probes_done: usize,
    resume: ResumePoint,
    trajectory: Trajectory,
    summary: LogSummary,
}

fn config_digest(config: &RunConfig) -> Result<String> {
    let json = serde_json::to_string(&config.to_json()?)
        .map_err(|e| Error::Config(format!("config digest: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Probe schedule in whole grain units, deduplicated after snapping.
fn snapped_units(config: &RunConfig, plan: &TrotterPlan) -> Vec<u64> {
    let grain = plan.probe_grain();
    let mut units: Vec<u64> = config
        .probe_times()
        .iter()
        .map(|&t| (t / grain).round().max(0.0) as u64)
        .collect();
    units.dedup();
    units
}

fn empty_summary() -> LogSummary {
    LogSummary {
        steps: 0,
        truncation_events: 0,
        audit_events: 0,
        audit_max_deviation: 0.0,
        total_discarded_weight: 0.0,
        max_bond: 0,
        trace_drift: 0.0,
    }
}

fn absorb_log(summary: &mut LogSummary, log: &EvolutionLog) {
    summary.truncation_events += log.truncation_events;
    summary.audit_events += log.audit_events;
    summary.audit_max_deviation = summary.audit_max_deviation.max(log.audit_max_deviation);
    summary.total_discarded_weight += log.total_discarded_weight();
    summary.max_bond = summary.max_bond.max(log.max_bond());
    summary.trace_drift = log
        .records
        .iter()
        .fold(summary.trace_drift, |m, r| m.max(r.trace_drift));
}

fn merge_trajectory(into: &mut Trajectory, part: &Trajectory, times: &[f64]) -> Result<()> {
    if into.series.is_empty() {
        for s in &part.series {
            into.series.push(crate::engine::ProbeSeries {
                label: s.label.clone(),
                times: Vec::new(),
                rows: Vec::new(),
            });
        }
    }
    if into.series.len() != part.series.len() {
        return Err(Error::Data("probe series changed between run segments".into()));
    }
    for (dst, src) in into.series.iter_mut().zip(&part.series) {
        if dst.label != src.label {
            return Err(Error::Data("probe series order changed between run segments".into()));
        }
        if src.times.len() != times.len() {
            return Err(Error::Data(format!(
                "segment produced {} probe rows, expected {}",
                src.times.len(),
                times.len()
            )));
        }
        dst.times.extend_from_slice(times);
        dst.rows.extend(src.rows.iter().cloned());
    }
    Ok(())
}

/// Execute the run. If the output directory holds a checkpoint written by
/// the same configuration, the evolution resumes from it; otherwise it
/// starts fresh. On success the checkpoint files are removed.
pub fn execute(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let dir = config.output.directory.clone();
    std::fs::create_dir_all(&dir)?;

    let plan = build_plan(&config.model, config.evolution.dt, config.evolution.order.into())?;
    let grain = plan.probe_grain();
    let policy = config.policy();
    let kinds = config.probe_kinds()?;
    let units = snapped_units(config, &plan);
    let t_max_units = (config.evolution.t_max / grain).round().max(0.0) as u64;
    let digest = config_digest(config)?;

    // Segment boundaries: after every k-th probe when checkpointing is on.
    let stride = config.evolution.checkpoint_every_probes.unwrap_or(usize::MAX);

    let state_path = dir.join(STATE_FILE);
    let progress_path = dir.join(PROGRESS_FILE);
    let mut resumed_at_probe = None;
    let (mut state, mut trajectory, mut summary, mut probes_done, mut resume) =
        match load_checkpoint(&state_path, &progress_path, &digest)? {
            Some((state, progress)) => {
                resumed_at_probe = Some(progress.probes_done);
                (
                    state,
                    progress.trajectory,
                    progress.summary,
                    progress.probes_done,
                    progress.resume,
                )
            }
            None => (
                config.build_initial_state()?,
                Trajectory::default(),
                empty_summary(),
                0,
                ResumePoint::default(),
            ),
        };

    while probes_done < units.len() {
        let seg_end = (probes_done + stride).min(units.len());
        let seg_units = &units[probes_done..seg_end];
        let start_u = resume.units_done;
        let rel_times: Vec<f64> = seg_units.iter().map(|&u| (u - start_u) as f64 * grain).collect();
        // The final segment also covers any evolution past the last probe.
        let end_u = if seg_end == units.len() {
            t_max_units.max(*seg_units.last().expect("non-empty segment"))
        } else {
            *seg_units.last().expect("non-empty segment")
        };
        let seg_t_max = (end_u - start_u) as f64 * grain;

        let (part, log) = evolve_resumed(
            &mut state,
            &plan,
            &policy,
            seg_t_max,
            &rel_times,
            &kinds,
            resume,
        )?;
        let abs_times: Vec<f64> = seg_units.iter().map(|&u| u as f64 * grain).collect();
        merge_trajectory(&mut trajectory, &part, &abs_times)?;
        absorb_log(&mut summary, &log);
        resume = ResumePoint {
            layers_done: resume.layers_done + log.records.len() as u64,
            units_done: end_u,
        };
        probes_done = seg_end;
        summary.steps = resume.units_done as usize;

        if probes_done < units.len() {
            save_checkpoint(
                &state,
                &state_path,
                &progress_path,
                &Progress {
                    config_digest: digest.clone(),
                    probes_done,
                    resume,
                    trajectory: trajectory.clone(),
                    summary: summary.clone(),
                },
            )?;
        }
    }

    let files = write_outputs(config, &dir, &trajectory, &summary, &digest)?;

    let _ = std::fs::remove_file(&state_path);
    let _ = std::fs::remove_file(&progress_path);

    Ok(RunOutcome { directory: dir, trajectory, summary, resumed_at_probe, files })
}

fn load_checkpoint(
    state_path: &Path,
    progress_path: &Path,
    digest: &str,
) -> Result<Option<(crate::mpdo::Mpdo, Progress)>> {
    if !state_path.exists() || !progress_path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(progress_path)?;
    let progress: Progress = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("corrupt checkpoint progress: {e}")))?;
    if progress.config_digest != digest {
        // A different configuration owns this directory's checkpoint.
        return Ok(None);
    }
    let state = crate::mpdo::Mpdo::load_checkpoint(state_path)?;
    Ok(Some((state, progress)))
}

fn save_checkpoint(
    state: &crate::mpdo::Mpdo,
    state_path: &Path,
    progress_path: &Path,
    progress: &Progress,
) -> Result<()> {
    let tmp = state_path.with_extension("bin.tmp");
    state.save_checkpoint(&tmp)?;
    std::fs::rename(&tmp, state_path)?;
    let body = serde_json::to_string(progress)
        .map_err(|e| Error::Data(format!("checkpoint progress serialization: {e}")))?;
    io::atomic_write(progress_path, body.as_bytes())
}

fn write_outputs(
    config: &RunConfig,
    dir: &Path,
    trajectory: &Trajectory,
    summary: &LogSummary,
    _digest: &str,
) -> Result<Vec<String>> {
    let csv = config.output.formats.contains(&OutputFormat::Csv);
    let json = config.output.formats.contains(&OutputFormat::Json);
    let mut files: Vec<String> = Vec::new();
    let mut manifest = Manifest::new(config.to_json()?, config.seed);
    manifest.log = Some(summary.clone());

    if csv {
        for series in &trajectory.series {
            let name = format!("{}.csv", series.label);
            io::write_series_csv(&dir.join(&name), series)?;
            files.push(name);
        }
    }

    // Derived observables and fits need the charge profile.
    if let Some(_series) = trajectory.series_by_label("charge_profile") {
        let q = config.charge_spec()?;
        let profile = observables::charge_profile(trajectory, &q)?;
        write_derived(config, dir, &profile, &mut manifest, &mut files)?;
    }

    if json {
        files.sort();
        for name in &files {
            let digest = io::file_sha256(&dir.join(name))?;
            manifest.outputs.insert(name.clone(), digest);
        }
        io::write_manifest(&dir.join("manifest.json"), &manifest)?;
        files.push("manifest.json".into());
    }
    Ok(files)
}

/// Derived observables (transfer, gradient, current) and, when an analysis
/// section is configured, the fit reports and the plot-ready comparison —
/// shared by a fresh `execute` and a standalone re-analysis.
fn write_derived(
    config: &RunConfig,
    dir: &Path,
    profile: &crate::observables::Profile,
    manifest: &mut Manifest,
    files: &mut Vec<String>,
) -> Result<()> {
    let csv = config.output.formats.contains(&OutputFormat::Csv);
    let json = config.output.formats.contains(&OutputFormat::Json);
    let mut reports: BTreeMap<String, FitReport> = BTreeMap::new();

    let mu = wall_contrast(config);
    let transfer = observables::polarization_transfer(profile, mu)?;
    let gradient = observables::gradient_profile(profile)?;
    let current = observables::current_profile(profile)?;
    if csv {
        io::write_transfer_csv(&dir.join("polarization_transfer.csv"), &transfer)?;
        files.push("polarization_transfer.csv".into());
        io::write_profile_csv(&dir.join("gradient_profile.csv"), &gradient)?;
        files.push("gradient_profile.csv".into());
        let current_as_profile = crate::observables::Profile {
            times: current.times.clone(),
            values: current.values.clone(),
        };
        io::write_profile_csv(&dir.join("current_profile.csv"), &current_as_profile)?;
        files.push("current_profile.csv".into());
    }

    if let Some(analysis) = &config.analysis {
        let table = match &analysis.scaling_table {
            Some(path) => ScalingFunctionTable::load(path)?,
            None => ScalingFunctionTable::bundled()?,
        };
        manifest
            .data_checksums
            .insert("scaling_table".into(), table.digest().to_string());

        if let Some(window) = analysis.transfer_window {
            match scaling::fit_power_law(&transfer, window) {
                Ok(fit) => {
                    reports.insert("polarization_transfer_power_law".into(), FitReport::from(&fit));
                }
                Err(Error::Window(_)) if mu.abs() < 1e-12 => {
                    // A μ = 0 run has nothing to fit; skip quietly.
                }
                Err(e) => return Err(e),
            }
        }

        if mu.abs() > 1e-12 {
            let rows = scaling_rows(analysis.scaling_times.as_deref(), &gradient);
            let mut comparison: Option<(f64, ScalingFamily)> = None;
            for &row in &rows {
                let t = gradient.times[row];
                for &family in &analysis.families {
                    let fit = scaling::fit_scaling_function(&gradient, row, mu, family, &table)?;
                    let name = format!("scaling_{}_t{t}", family_name(family));
                    reports.insert(name, FitReport::from(&fit.fit));
                    if family == ScalingFamily::Kpz && comparison.map_or(true, |(tc, _)| t > tc) {
                        comparison = Some((t, family));
                    }
                }
            }
            if csv {
                if let Some((t, family)) = comparison {
                    let row = gradient.times.iter().position(|&x| x == t).expect("row");
                    let fit = scaling::fit_scaling_function(&gradient, row, mu, family, &table)?;
                    let b = fit.fit.param("b").expect("b parameter");
                    write_comparison(dir, &gradient, row, mu, b, &table)?;
                    files.push("scaling_comparison.csv".into());
                }
            }
        }
    }

    if json && !reports.is_empty() {
        io::write_fit_reports(&dir.join("fit_reports.json"), &reports)?;
        files.push("fit_reports.json".into());
    }
    Ok(())
}

/// Recompute the derived observables and fits of an existing run directory
/// from its stored charge profile — optionally under different analysis
/// settings — and refresh the manifest. The trajectory files are left
/// untouched; only derived products and the manifest are rewritten.
pub fn analyze_directory(dir: &Path, analysis: Option<&AnalysisConfig>) -> Result<Vec<String>> {
    let stored = io::read_manifest(&dir.join("manifest.json"))?;
    let mut config: RunConfig = serde_json::from_value(stored.config.clone())
        .map_err(|e| Error::Data(format!("manifest config does not parse: {e}")))?;
    if let Some(a) = analysis {
        config.analysis = Some(a.clone());
    }
    config.validate()?;

    let series = io::read_series_csv(&dir.join("charge_profile.csv"))?;
    let mut trajectory = Trajectory::default();
    trajectory.series.push(series);
    let q = config.charge_spec()?;
    let profile = observables::charge_profile(&trajectory, &q)?;

    let mut manifest = Manifest::new(config.to_json()?, config.seed);
    manifest.log = stored.log.clone();
    let mut files: Vec<String> = stored
        .outputs
        .keys()
        .filter(|name| dir.join(name).exists())
        .cloned()
        .collect();
    // Stale derived products would otherwise survive an analysis change
    // with their old contents; drop them and let the shared writer decide
    // what the new settings produce.
    for name in ["fit_reports.json", "scaling_comparison.csv"] {
        if files.iter().any(|f| f == name) {
            std::fs::remove_file(dir.join(name))?;
        }
    }
    files.retain(|name| name != "manifest.json" && name != "fit_reports.json" && name != "scaling_comparison.csv");
    write_derived(&config, dir, &profile, &mut manifest, &mut files)?;

    files.sort();
    files.dedup();
    for name in &files {
        let digest = io::file_sha256(&dir.join(name))?;
        manifest.outputs.insert(name.clone(), digest);
    }
    io::write_manifest(&dir.join("manifest.json"), &manifest)?;
    files.push("manifest.json".into());
    Ok(files)
}

/// The wall contrast the polarization-transfer normalization uses; zero for
/// recipes without a charge wall.
fn wall_contrast(config: &RunConfig) -> f64 {
    match config.initial_state.recipe {
        RecipeKind::InfiniteTemperature | RecipeKind::EnergyDomainWall => 0.0,
        _ => config.initial_state.mu,
    }
}

fn family_name(family: ScalingFamily) -> &'static str {
    match family {
        ScalingFamily::Kpz => "kpz",
        ScalingFamily::Gauss => "gauss",
    }
}

/// Rows of the gradient profile to fit: the requested times snapped to the
/// probe grid, or the latest positive-time row by default.
fn scaling_rows(requested: Option<&[f64]>, gradient: &crate::observables::Profile) -> Vec<usize> {
    match requested {
        Some(wanted) => {
            let mut rows: Vec<usize> = wanted
                .iter()
                .filter_map(|&t| {
                    gradient
                        .times
                        .iter()
                        .enumerate()
                        .filter(|(_, &pt)| pt > 1e-12)
                        .min_by(|a, b| {
                            (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).expect("finite")
                        })
                        .map(|(k, _)| k)
                })
                .collect();
            rows.sort_unstable();
            rows.dedup();
            rows
        }
        None => gradient
            .times
            .iter()
            .rposition(|&t| t > 1e-12)
            .map(|k| vec![k])
            .unwrap_or_default(),
    }
}

/// Plot-ready collapse at one time: the rescaled measured gradient against
/// the reference shape and its moment-matched Gaussian on the same ξ axis.
fn write_comparison(
    dir: &Path,
    gradient: &crate::observables::Profile,
    row: usize,
    mu: f64,
    b: f64,
    table: &ScalingFunctionTable,
) -> Result<()> {
    let t = gradient.times[row];
    let tau = t.powf(2.0 / 3.0);
    let l = gradient.n_cols() + 1;
    let mut xi = Vec::new();
    let mut measured = Vec::new();
    let mut kpz = Vec::new();
    let mut gauss = Vec::new();
    for (bond, &g) in gradient.row(row).iter().enumerate() {
        let x = bond as f64 + 1.0 - l as f64 / 2.0;
        let q = b * x / tau;
        xi.push(q);
        measured.push(-g * tau / (2.0 * mu * b));
        kpz.push(table.f_kpz(q));
        gauss.push(table.f_gauss(q));
    }
    io::write_scaling_comparison_csv(&dir.join("scaling_comparison.csv"), &xi, &measured, &kpz, &gauss)
}
