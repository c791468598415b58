use std::path::Path;

use serde::Serialize;
use serde_json::json;
use trec_core::ema::{schedule_timescale, summarize, write_coefficients_csv};
use trec_core::io::fmt_float;
use trec_core::placement::{write_curriculum_csv, AuditOptions};
use trec_core::predictor::{
    fit_m_with, fit_power_law_report, predict_schedule, read_fit_records, write_fit_records, FitFilters,
    FitOptions, FitRecord, MFit, MSource, PowerLawFit,
};
use trec_core::quadsim::{placement_experiment, simulate, simulated_trec_with, Optimizer, SimConfig};
use trec_core::schedule::write_lr_csv;
use trec_core::trec::{resample_onto, uniform_grid, ComparisonProtocol};
use trec_core::{
    build_trec, continuous_coefficients, effective_tpp, ema_coefficients, emit_curriculum, lr_array,
    parse_recipe, parse_schedule, recommend, smooth, LossLog, ScheduleSpec, Trec, TrecKind,
};

use crate::error::CliError;
use crate::output::Outputs;
use crate::svg::line_plot;
use crate::{AuditArgs, Cli, Command, CurveKind, FitArgs, PlaceArgs, PredictArgs, SimulateArgs};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.global.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    if cli.global.window == 0 {
        return Err(CliError::Usage("--window must be at least 1".into()));
    }
    let name = match &cli.command {
        Command::Schedule { .. } => "schedule",
        Command::Ema { .. } => "ema",
        Command::Predict(_) => "predict",
        Command::Trec { .. } => "trec",
        Command::Fit(_) => "fit",
        Command::FitPowerlaw { .. } => "fit-powerlaw",
        Command::Simulate(_) => "simulate",
        Command::Place(_) => "place",
        Command::Audit(_) => "audit",
    };
    let mut out = Outputs::new(&cli.global.out, name)?;
    out.set_options(json!({ "global": &cli.global, "command": &cli.command }));
    let g = &cli.global;
    match &cli.command {
        Command::Schedule { config } => schedule(&mut out, config)?,
        Command::Ema { config, tail_steps } => ema(&mut out, config, *tail_steps)?,
        Command::Predict(args) => predict(&mut out, g.grid, args)?,
        Command::Trec {
            log,
            normalize,
            total_steps,
        } => trec(&mut out, g.window, log, *normalize, *total_steps)?,
        Command::Fit(args) => fit(&mut out, protocol(cli), args)?,
        Command::FitPowerlaw {
            records,
            tau_min,
            tau_max,
            schedule_kind,
        } => {
            let filters = FitFilters {
                tau_min: *tau_min,
                tau_max: *tau_max,
                schedule_kind: schedule_kind.clone(),
            };
            fit_powerlaw(&mut out, records, &filters)?
        }
        Command::Simulate(args) => simulate_cmd(&mut out, protocol(cli), g.seed, args)?,
        Command::Place(args) => place(&mut out, g.grid, args)?,
        Command::Audit(args) => audit(&mut out, g.grid, args)?,
    }
    out.finish()?;
    Ok(())
}

fn protocol(cli: &Cli) -> ComparisonProtocol {
    ComparisonProtocol {
        window: cli.global.window,
        grid: cli.global.grid,
    }
}

fn read_schedule(out: &mut Outputs, path: &Path) -> Result<ScheduleSpec, CliError> {
    let text = out.read_input(path)?;
    Ok(parse_schedule(&text)?)
}

fn csv_into(
    write: impl FnOnce(&mut Vec<u8>) -> Result<(), trec_core::Error>,
) -> impl FnOnce(&mut Vec<u8>) -> Result<(), CliError> {
    move |buf| write(buf).map_err(CliError::from)
}

fn schedule(out: &mut Outputs, config: &Path) -> Result<(), CliError> {
    let spec = read_schedule(out, config)?;
    out.write_with("lr.csv", csv_into(|b| write_lr_csv(&spec, b)))?;
    Ok(())
}

fn ema(out: &mut Outputs, config: &Path, tail_steps: Option<usize>) -> Result<(), CliError> {
    let spec = read_schedule(out, config)?;
    let (rows, summary) = summarize(&spec, tail_steps)?;
    out.write_with("coefficients.csv", csv_into(|b| write_coefficients_csv(&rows, b)))?;
    out.write_json("ema_summary.json", &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionInfo {
    schedule_kind: String,
    total_steps: usize,
    tau: f64,
    m: f64,
    p: f64,
    grid: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    tpp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    effective_tpp: Option<f64>,
    argmin_t_hat: f64,
}

fn predict(out: &mut Outputs, grid: usize, args: &PredictArgs) -> Result<(), CliError> {
    let spec = read_schedule(out, &args.config)?;
    let mut used_tpp = None;
    let source = match (args.m, &args.powerlaw) {
        (Some(m), None) => MSource::Fixed(m),
        (None, Some(path)) => {
            let fit: PowerLawFit = read_json(out, path)?;
            let tpp = args
                .tpp
                .ok_or_else(|| CliError::Usage("--powerlaw needs --tpp".into()))?;
            let tpp = match (args.experts, args.active) {
                (Some(e), Some(a)) => effective_tpp(tpp, e, a)?,
                _ => tpp,
            };
            used_tpp = Some(tpp);
            MSource::PowerLaw { fit, tpp }
        }
        _ => {
            return Err(CliError::Usage(
                "give exactly one source for m: --m or --powerlaw with --tpp".into(),
            ))
        }
    };
    let pred = predict_schedule(&spec, &source, args.p, grid)?;
    out.write_with("predicted_trec.csv", csv_into(|b| pred.curve.write_csv(b)))?;
    let info = PredictionInfo {
        schedule_kind: spec.kind.name().to_string(),
        total_steps: spec.total_steps,
        tau: pred.tau,
        m: pred.m,
        p: pred.p,
        grid,
        tpp: args.tpp,
        effective_tpp: used_tpp.filter(|_| args.experts.is_some()),
        argmin_t_hat: pred.curve.argmin_t_hat(),
    };
    out.write_json("prediction.json", &info)?;
    if args.svg {
        let title = format!("predicted TREC, {} (m = {:.4})", spec.kind.name(), pred.m);
        let svg = line_plot(&title, &pred.curve.t_hat(), &pred.curve.values(), None);
        out.write_text("predicted_trec.svg", &svg)?;
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(out: &mut Outputs, path: &Path) -> Result<T, CliError> {
    let text = out.read_input(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn read_log(out: &mut Outputs, path: &Path, total_steps: Option<usize>) -> Result<LossLog, CliError> {
    let text = out.read_input(path)?;
    LossLog::read_csv(text.as_bytes(), total_steps).map_err(|e| with_path(path, e.into()))
}

fn with_path(path: &Path, e: trec_core::Error) -> CliError {
    match CliError::from(e) {
        CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
        CliError::Numeric(m) => CliError::Numeric(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn trec(
    out: &mut Outputs,
    window: usize,
    log: &Path,
    normalize: bool,
    total_steps: Option<usize>,
) -> Result<(), CliError> {
    let log = read_log(out, log, total_steps)?;
    let mut curve = smooth(&build_trec(&log)?, window)?;
    if normalize {
        curve = trec_core::normalize(&curve)?;
    }
    out.write_with("trec.csv", csv_into(|b| curve.write_csv(b)))?;
    Ok(())
}

/// The schedule a fit compares against: a schedule config, or the schedule
/// of an AdamW simulator config with the simulator's weight decay.
fn fit_schedule(out: &mut Outputs, path: &Path) -> Result<ScheduleSpec, CliError> {
    let text = out.read_input(path)?;
    let is_sim = serde_json::from_str::<serde_json::Value>(&text)
        .map(|v| v.get("lr_schedule").is_some())
        .unwrap_or(false);
    if !is_sim {
        return Ok(parse_schedule(&text)?);
    }
    let cfg = SimConfig::from_json(&text)?;
    if cfg.optimizer != Optimizer::AdamW {
        return Err(CliError::Numeric(
            "fitting needs an AdamW simulator config".into(),
        ));
    }
    let mut spec = cfg.lr_schedule;
    spec.weight_decay = cfg.weight_decay;
    Ok(spec)
}

#[derive(Serialize)]
struct FitEntry {
    input: String,
    source: &'static str,
    #[serde(flatten)]
    fit: MFit,
}

fn fit(out: &mut Outputs, proto: ComparisonProtocol, args: &FitArgs) -> Result<(), CliError> {
    let spec = fit_schedule(out, &args.config)?;
    let t = spec.total_steps;
    let tau = schedule_timescale(&spec)?.tau;
    let lr = lr_array(&spec)?;
    let c_curve = continuous_coefficients(&ema_coefficients(&lr, spec.weight_decay)?, proto.grid)?;
    let options = FitOptions {
        p: args.p,
        smooth_window: Some(proto.grid_window(t)),
        ..FitOptions::default()
    };
    let grid = uniform_grid(proto.grid);

    let mut records = Vec::new();
    let existing = out.path("fit_records.csv");
    if args.append && existing.exists() {
        let text = out.read_input(&existing)?;
        records = read_fit_records(text.as_bytes()).map_err(|e| with_path(&existing, e))?;
    }
    let mut entries = Vec::new();
    for input in &args.inputs {
        let text = out.read_input(input)?;
        let header = text.lines().next().unwrap_or("");
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        let (target, source) = if columns.contains(&"step") {
            let log = LossLog::read_csv(text.as_bytes(), Some(t)).map_err(|e| with_path(input, e.into()))?;
            (proto.prepare_measured(&build_trec(&log)?)?, "loss_log")
        } else {
            let curve = Trec::read_csv(text.as_bytes(), TrecKind::Measured)
                .map_err(|e| with_path(input, e.into()))?;
            let on_grid = trec_core::normalize(&resample_onto(&curve, &grid)?)?;
            (on_grid, "curve")
        };
        let m = fit_m_with(&c_curve, &target, &options).map_err(|e| with_path(input, e.into()))?;
        records.push(FitRecord {
            tpp: args.tpp,
            tau,
            m_star: m.m_star,
            r_p: m.r_p,
        });
        entries.push(FitEntry {
            input: input.display().to_string(),
            source,
            fit: m,
        });
    }
    out.write_with("fit_records.csv", csv_into(|b| write_fit_records(&records, b)))?;
    out.write_json(
        "fit_report.json",
        &json!({ "tau": tau, "tpp": args.tpp, "p": args.p, "fits": entries }),
    )?;
    Ok(())
}

fn fit_powerlaw(out: &mut Outputs, records: &Path, filters: &FitFilters) -> Result<(), CliError> {
    let text = out.read_input(records)?;
    let recs = read_fit_records(text.as_bytes()).map_err(|e| with_path(records, e))?;
    let report = fit_power_law_report(&recs, filters)?;
    out.write_json("powerlaw_fit.json", &report.fit)?;
    out.write_json("powerlaw_report.json", &report)?;
    if !report.excluded.is_empty() {
        eprintln!(
            "excluded {} record(s) with tau outside [{}, {}]",
            report.excluded.len(),
            filters.tau_min,
            filters.tau_max
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    segments: usize,
    hq_target_offset: f64,
    best_segment: usize,
    argmin_segment: usize,
    baseline_argmin_t_hat: f64,
    rows: &'a [trec_core::quadsim::SweepRow],
}

fn simulate_cmd(
    out: &mut Outputs,
    proto: ComparisonProtocol,
    seed: Option<u64>,
    args: &SimulateArgs,
) -> Result<(), CliError> {
    let text = out.read_input(&args.config)?;
    let mut cfg = SimConfig::from_json(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if args.check_decomposition {
        cfg.record_history = true;
    }
    if args.hq_offset.is_some() && args.placement_sweep.is_none() && cfg.hq_segment.is_none() {
        return Err(CliError::Usage(
            "--hq-offset needs --placement-sweep or an hq_segment".into(),
        ));
    }
    let run = simulate(&cfg)?;
    let mut summary = run.summary(args.hq_offset.filter(|_| args.placement_sweep.is_none()));
    let curve = simulated_trec_with(&run, &proto)?;
    summary.trec_argmin_t_hat = Some(curve.argmin_t_hat());
    if args.check_decomposition {
        let err = run.decomposition_error()?;
        summary.decomposition_max_rel_error = Some(err);
        println!("decomposition max relative error: {}", fmt_float(err));
    }
    out.write_json("sim_summary.json", &summary)?;
    out.write_with("sim_trec.csv", csv_into(|b| curve.write_csv(b)))?;
    out.write_with("reeval_losses.csv", csv_into(|b| run.reeval_losses.write_csv(b)))?;
    if args.steps_csv {
        out.write_with("steps.csv", csv_into(|b| run.write_steps_csv(b)))?;
    }
    if let (Some(k), Some(offset)) = (args.placement_sweep, args.hq_offset) {
        let mut base = cfg.clone();
        base.hq_segment = None;
        let sweep = placement_experiment(&base, k, offset)?;
        out.write_with("placement_sweep.csv", |b| {
            let mut s = String::from("segment,start_fraction,end_fraction,hq_eval_loss\n");
            for r in &sweep.rows {
                let seg = r.segment.map_or("baseline".to_string(), |i| i.to_string());
                s.push_str(&format!(
                    "{seg},{},{},{}\n",
                    fmt_float(r.start_fraction),
                    fmt_float(r.end_fraction),
                    fmt_float(r.hq_eval_loss)
                ));
            }
            b.extend_from_slice(s.as_bytes());
            Ok(())
        })?;
        let report = SweepReport {
            segments: k,
            hq_target_offset: offset,
            best_segment: sweep.best_segment(),
            argmin_segment: sweep.argmin_segment(),
            baseline_argmin_t_hat: sweep.baseline_argmin_t_hat(),
            rows: &sweep.rows,
        };
        out.write_json("placement_sweep.json", &report)?;
    }
    Ok(())
}

fn is_uniform(curve: &Trec) -> bool {
    let t = curve.t_hat();
    let n = t.len();
    if n < 2 {
        return true;
    }
    let step = 1.0 / n as f64;
    t.iter()
        .enumerate()
        .all(|(i, x)| (x - (i + 1) as f64 * step).abs() <= 1e-9)
}

fn place(out: &mut Outputs, grid: usize, args: &PlaceArgs) -> Result<(), CliError> {
    let text = out.read_input(&args.curve)?;
    let kind = match args.kind {
        CurveKind::Measured => TrecKind::Measured,
        CurveKind::Predicted => TrecKind::Predicted,
    };
    let mut curve = Trec::read_csv(text.as_bytes(), kind).map_err(|e| with_path(&args.curve, e.into()))?;
    if !is_uniform(&curve) {
        curve = resample_onto(&curve, &uniform_grid(grid))?;
    }
    let plan = recommend(&curve, args.hq_fraction)?;
    let total = args.total_steps.unwrap_or(curve.len());
    let labels = emit_curriculum(&plan, total)?;
    out.write_json("plan.json", &plan)?;
    out.write_with("curriculum.csv", csv_into(|b| write_curriculum_csv(&labels, b)))?;
    if args.svg {
        let svg = line_plot(
            "TREC with recommended high-quality window",
            &curve.t_hat(),
            &curve.values(),
            Some((plan.start_fraction, plan.end_fraction)),
        );
        out.write_text("plan.svg", &svg)?;
    }
    Ok(())
}

fn audit(out: &mut Outputs, grid: usize, args: &AuditArgs) -> Result<(), CliError> {
    let text = out.read_input(&args.recipe)?;
    let recipe = parse_recipe(&text)?;
    let fit: PowerLawFit = read_json(out, &args.fit)?;
    let options = AuditOptions {
        margin: args.margin,
        retention_threshold: args.retention_threshold,
        grid_size: grid,
        p: args.p,
    };
    let report = recipe.audit(&fit, &options)?;
    out.write_json("audit.json", &report)?;
    for flag in &report.flags {
        println!("{}: {flag}", recipe.name);
    }
    if args.svg {
        let svg = line_plot(
            &format!("{}: predicted TREC and high-quality window", recipe.name),
            &report.curve_t_hat,
            &report.curve_value,
            Some(report.hq_window),
        );
        out.write_text("audit.svg", &svg)?;
    }
    Ok(())
}
