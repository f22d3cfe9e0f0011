use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use saccade_oc::analysis::{
    amplitude_sweep, direction_sweep, fit_subject, main_sequence, main_sequence_points,
    prepare_subject, SubjectConditions, SweepKind, SweepReport, REFERENCE_TARGET, SWEEP_AMPLITUDES,
    SWEEP_DIRECTIONS,
};
use saccade_oc::fitting::{FitProblem, FitResult, FitStages, SearchRange};
use saccade_oc::signals::{
    generate_synthetic_subject, read_recording, standard_targets, PipelineConfig, RawRecording,
    Variability,
};
use saccade_oc::simulation::{simulate_monte_carlo, EndpointStats};
use saccade_oc::verify::{run_checks, template_saccade, CheckResult, Fault, VerifySettings};
use saccade_oc::{backward_pass, simulate_mean, CostSpec, Geometry};

use crate::config::{DataSource, Param, RunConfig};
use crate::output::{write_atomic, write_json};
use crate::CliError;

pub const DEFAULT_Q: f64 = 1e6;
pub const DEFAULT_ALPHA: f64 = 0.05;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(anyhow!(msg.into()))
}

fn geometry_for(direction_deg: f64) -> Geometry {
    if direction_deg.to_radians().sin().abs() < 1e-9 {
        Geometry::Horizontal
    } else {
        Geometry::Oblique
    }
}

fn fixed_params(cfg: &RunConfig, command: &str) -> Result<(f64, f64), CliError> {
    let pick = |p: Option<Param>, default: f64, key: &str| match p {
        None => Ok(default),
        Some(Param::Fixed(v)) => Ok(v),
        Some(Param::Fit) => Err(usage(format!("{command} needs a fixed {key}, got `fit`"))),
    };
    Ok((
        pick(cfg.q, DEFAULT_Q, "cost.q")?,
        pick(cfg.alpha, DEFAULT_ALPHA, "noise.alpha")?,
    ))
}

#[derive(Debug, Serialize)]
struct EnsembleSummary {
    trials: usize,
    seed: u64,
    endpoint: Vec<EndpointStats>,
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    amplitude_deg: f64,
    direction_deg: f64,
    q: f64,
    alpha: f64,
    dt: f64,
    steps: usize,
    final_displacement_deg: Vec<f64>,
    peak_speed_degps: f64,
    ensemble: Option<EnsembleSummary>,
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let (q, alpha) = fixed_params(cfg, "simulate")?;
    let geometry = geometry_for(cfg.direction);
    let params = cfg.model(q, alpha);
    let ds = params
        .system(geometry)
        .map_err(|e| CliError::Usage(e.into()))?;
    let run = || -> anyhow::Result<()> {
        let xd = template_saccade(cfg.amplitude, cfg.direction, cfg.dt, geometry)?;
        let horizon = xd.len();
        let x_1 = xd[0].clone();
        let cost = CostSpec::velocity_tracking(q, cfg.r_scale, geometry, xd)?;
        let sched = backward_pass(&ds, &cost, alpha).context("gain synthesis")?;
        let traj = simulate_mean(&ds, &sched, &x_1, horizon)?;
        let axes = traj.axes();
        let ensemble = if cfg.trials > 0 {
            let stats =
                simulate_monte_carlo(&ds, &sched, &x_1, horizon, cfg.trials, alpha, cfg.seed)?;
            write_atomic(&cfg.output.join("ensemble.csv"), |w| {
                let mut header = vec!["time_s".to_string()];
                for axis in ["h", "v"].iter().take(axes) {
                    for name in [format!("theta_{axis}_deg"), format!("vel_{axis}_degps")] {
                        header.push(format!("mean_{name}"));
                        header.push(format!("sd_{name}"));
                    }
                }
                writeln!(w, "{}", header.join(","))?;
                for (k, (m, c)) in stats.mean.iter().zip(&stats.covariance).enumerate() {
                    let mut row = vec![format!("{}", k as f64 * cfg.dt)];
                    for i in 0..m.len() {
                        row.push(format!("{}", m[i]));
                        row.push(format!("{}", c[(i, i)].max(0.0).sqrt()));
                    }
                    writeln!(w, "{}", row.join(","))?;
                }
                Ok(())
            })?;
            Some(EnsembleSummary {
                trials: stats.trials,
                seed: stats.seed,
                endpoint: stats.endpoint,
            })
        } else {
            None
        };
        write_atomic(&cfg.output.join("trajectory.csv"), |w| {
            Ok(traj.write_csv(w)?)
        })?;
        let vel: Vec<Vec<f64>> = (0..axes).map(|a| traj.velocity(a)).collect();
        let peak = (0..traj.len())
            .map(|k| vel.iter().map(|v| v[k] * v[k]).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let summary = SimulationSummary {
            amplitude_deg: cfg.amplitude,
            direction_deg: cfg.direction,
            q,
            alpha,
            dt: cfg.dt,
            steps: traj.len(),
            final_displacement_deg: (0..axes)
                .map(|a| *traj.displacement(a).last().unwrap_or(&0.0))
                .collect(),
            peak_speed_degps: peak,
            ensemble,
        };
        write_json(&cfg.output.join("summary.json"), &summary)
    };
    run().map_err(CliError::Failure)
}

fn load_subject(cfg: &RunConfig) -> Result<RawRecording, CliError> {
    match &cfg.data {
        DataSource::Recording {
            path,
            sample_rate,
            subject,
        } => {
            let mut rec = read_recording(path, *sample_rate, subject)
                .map_err(|e| CliError::Failure(anyhow!("ingest stage: {e}")))?;
            rec.assign_targets(&standard_targets())
                .map_err(|e| CliError::Failure(anyhow!("ingest stage: {e}")))?;
            Ok(rec)
        }
        DataSource::Synthetic {
            trials_per_target,
            sample_rate,
        } => generate_synthetic_subject(
            &standard_targets(),
            *trials_per_target,
            &Variability::default(),
            *sample_rate,
            cfg.seed,
            "S01",
        )
        .map_err(|e| CliError::Usage(anyhow!("synthetic subject: {e}"))),
    }
}

fn prepared(
    cfg: &RunConfig,
    targets: &[saccade_oc::signals::Target],
) -> Result<SubjectConditions, CliError> {
    let rec = load_subject(cfg)?;
    let subj = prepare_subject(&rec, targets, cfg.dt, &PipelineConfig::default());
    Ok(subj)
}

fn ranges(cfg: &RunConfig) -> Result<(SearchRange, SearchRange), CliError> {
    let q = SearchRange::new(cfg.q_range.0, cfg.q_range.1, cfg.grid_points)
        .map_err(|e| CliError::Usage(e.into()))?;
    let a = SearchRange::new(cfg.alpha_range.0, cfg.alpha_range.1, cfg.grid_points)
        .map_err(|e| CliError::Usage(e.into()))?;
    Ok((q, a))
}

pub fn fit(cfg: &RunConfig, q_only: bool) -> Result<FitResult, CliError> {
    if let Some(Param::Fixed(_)) = cfg.q {
        return Err(usage("fit estimates q; set `cost.q = fit` or leave it out"));
    }
    let fixed_alpha = match cfg.alpha {
        Some(Param::Fixed(a)) => Some(a),
        _ => None,
    };
    let stages = if q_only || fixed_alpha.is_some() {
        FitStages::QOnly
    } else {
        FitStages::Both
    };
    let (q_range, alpha_range) = ranges(cfg)?;
    let subj = prepared(cfg, &[REFERENCE_TARGET])?;
    if let Some((t, Err(reason))) = subj.conditions.first() {
        return Err(CliError::Failure(anyhow!(
            "pipeline stage failed on {}: {reason}",
            t.label()
        )));
    }
    let base = cfg.model(0.0, 0.0);
    let mut result = fit_subject(&subj, &base, &q_range, &alpha_range, stages)
        .map_err(|e| CliError::Failure(anyhow!("fit stage: {e}")))?;
    if let (Some(a), false) = (fixed_alpha, q_only) {
        let desired = subj.get(&REFERENCE_TARGET).expect("checked above").clone();
        let run = || -> saccade_oc::Result<(f64, f64)> {
            FitProblem::new(base.system(Geometry::Horizontal)?, desired, cfg.r_scale)?
                .errors(result.q, a)
        };
        let (d, v) = run().map_err(|e| CliError::Failure(anyhow!("fit stage: {e}")))?;
        result.alpha = a;
        result.displacement_error = d;
        result.velocity_error = v;
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&cfg.output.join("fit.json"), &result).map_err(CliError::Failure)?;
    Ok(result)
}

fn fit_source(cfg: &RunConfig, flag: Option<&Path>) -> Result<(f64, f64), CliError> {
    let path: Option<PathBuf> = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.fit_result.clone());
    if let Some(path) = path {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read fit result {}", path.display()))
            .map_err(CliError::Usage)?;
        let fit: FitResult = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a fit result", path.display()))
            .map_err(CliError::Usage)?;
        return Ok((fit.q, fit.alpha));
    }
    match (cfg.q, cfg.alpha) {
        (Some(Param::Fixed(q)), Some(Param::Fixed(a))) => Ok((q, a)),
        _ => Err(usage(
            "sweep needs a fit result: pass --fit-result, set run.fit_result, or fix both cost.q and noise.alpha",
        )),
    }
}

pub fn sweep(
    cfg: &RunConfig,
    kind: SweepKind,
    fit_file: Option<&Path>,
) -> Result<SweepReport, CliError> {
    let (q, alpha) = fit_source(cfg, fit_file)?;
    let params = [cfg.model(q, alpha)];
    let (targets, name) = match kind {
        SweepKind::Amplitude => (
            SWEEP_AMPLITUDES
                .iter()
                .map(|&a| saccade_oc::signals::Target::new(a, 0.0))
                .collect::<Vec<_>>(),
            "amplitude",
        ),
        SweepKind::Direction => (
            SWEEP_DIRECTIONS
                .iter()
                .map(|&d| saccade_oc::signals::Target::new(REFERENCE_TARGET.amplitude_deg, d))
                .collect(),
            "direction",
        ),
    };
    let subj = prepared(cfg, &targets)?;
    for (t, r) in &subj.conditions {
        if let Err(reason) = r {
            eprintln!("warning: pipeline stage dropped {}: {reason}", t.label());
        }
    }
    let subjects = [subj];
    let report = match kind {
        SweepKind::Amplitude => amplitude_sweep(&subjects, &params, &SWEEP_AMPLITUDES, 0.0),
        SweepKind::Direction => direction_sweep(
            &subjects,
            &params,
            &SWEEP_DIRECTIONS,
            REFERENCE_TARGET.amplitude_deg,
        ),
    }
    .map_err(|e| CliError::Failure(anyhow!("sweep: {e}")))?;
    let conds = &report.per_subject[0].conditions;
    write_atomic(&cfg.output.join(format!("sweep_{name}.csv")), |w| {
        writeln!(
            w,
            "label,amplitude_deg,direction_deg,subjects,displacement_error_pct,displacement_error_sd_pct,velocity_error_pct,velocity_error_sd_pct,data_amplitude_deg,model_amplitude_deg,data_peak_velocity_degps,model_peak_velocity_degps"
        )?;
        for ((t, s), c) in report.targets.iter().zip(&report.summary).zip(conds) {
            let pick = |f: fn(&saccade_oc::analysis::ConditionResult) -> f64| c.as_ref().map_or(f64::NAN, f);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.label,
                t.amplitude_deg,
                t.direction_deg,
                s.subjects,
                s.displacement_mean,
                s.displacement_std,
                s.velocity_mean,
                s.velocity_std,
                pick(|c| c.data_amplitude),
                pick(|c| c.model_amplitude),
                pick(|c| c.data_peak_velocity),
                pick(|c| c.model_peak_velocity),
            )?;
        }
        Ok(())
    })
    .map_err(CliError::Failure)?;
    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        report: &'a SweepReport,
        q: f64,
        alpha: f64,
        main_sequence: Option<saccade_oc::analysis::MainSequenceFit>,
    }
    let main_sequence = match kind {
        SweepKind::Amplitude => main_sequence(&main_sequence_points(conds)).ok(),
        SweepKind::Direction => None,
    };
    write_json(
        &cfg.output.join(format!("sweep_{name}.json")),
        &Report {
            report: &report,
            q,
            alpha,
            main_sequence,
        },
    )
    .map_err(CliError::Failure)?;
    Ok(report)
}

pub fn verify(
    cfg: &RunConfig,
    json: bool,
    fault: Option<Fault>,
) -> Result<Vec<CheckResult>, CliError> {
    let (q, alpha) = fixed_params(cfg, "verify")?;
    let settings = VerifySettings {
        tau1: cfg.tau1,
        tau2: cfg.tau2,
        dt: cfg.dt,
        discretization: cfg.discretization,
        q,
        alpha,
        r_scale: cfg.r_scale,
        seed: cfg.seed,
        fault,
        ..VerifySettings::default()
    };
    settings
        .system(Geometry::Horizontal)
        .map_err(|e| CliError::Usage(e.into()))?;
    let results = run_checks(&settings);
    let mut out = std::io::stdout().lock();
    let written = if json {
        serde_json::to_writer_pretty(&mut out, &results)
            .map_err(anyhow::Error::from)
            .and_then(|_| writeln!(out).map_err(Into::into))
    } else {
        results
            .iter()
            .try_for_each(|c| {
                writeln!(
                    out,
                    "{} {}: {:.3e} (tolerance {:.0e}) {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.metric,
                    c.tolerance,
                    c.detail
                )
            })
            .map_err(Into::into)
    };
    written.map_err(CliError::Failure)?;
    Ok(results)
}
