//! The subcommands. Results are computed in full before any file is written.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use trafficfluid_core::compare::{non_increasing_in_n, CompareSetup, ErrorRow};
use trafficfluid_core::fleet::FleetState;
use trafficfluid_core::macro_model::{simulate_macro, MacroField};
use trafficfluid_core::microsim::{simulate_observed, GuardEvent, SimError};
use trafficfluid_core::Controller;

use crate::output::{create_dir, write_json, Csv, Timing};
use crate::scenario::{ComparePlan, Loaded, MacroPlan, MicroPlan};
use crate::CliError;

/// Progress lines for the terminal, silenced by `--quiet`.
pub struct Reporter {
    pub quiet: bool,
}

impl Reporter {
    pub fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

#[derive(Serialize)]
struct FinalState {
    t: f64,
    max_abs_speed_deviation: f64,
    max_abs_heading: f64,
    max_abs_lateral: f64,
    max_abs_u: f64,
    max_abs_f: f64,
    h: f64,
    h_r: f64,
}

#[derive(Serialize)]
struct MicroSummary<'a> {
    command: &'static str,
    status: &'static str,
    params: &'a MicroPlan,
    steps: usize,
    samples: usize,
    /// Guard triggers that a halved step recovered from.
    guard_events: &'a [GuardEvent],
    /// The event that stopped the run.
    failure: Option<&'a GuardEvent>,
    initial_energy: f64,
    max_energy_increase: f64,
    final_state: Option<FinalState>,
}

fn max_abs<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn run_micro(scenario: &Path, out: &Path, seed: Option<u64>, rep: &Reporter) -> Result<(), CliError> {
    let plan = Loaded::read(scenario)?.micro_plan(seed)?;
    let model = &plan.model;
    let n = model.n();
    let start = Instant::now();

    let mut header = vec!["t".to_string()];
    for i in 1..=n {
        header.extend(["x", "y", "theta", "v", "u", "F"].iter().map(|c| format!("{c}_{i}")));
    }
    let mut trajectory = Csv::new(&plan, &header)?;
    let diss = match model.controller {
        Controller::Prcc => "Delta",
        Controller::Ncc { .. } => "Gamma",
    };
    let mut energy = Csv::new(&plan, &["t".into(), "H".into(), "H_R".into(), diss.into()])?;

    let init = &plan.initial;
    let state = FleetState::from_components(&init.x, &init.y, &init.theta, &init.v)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let mut initial_energy = None;
    let mut last = None;
    let mut samples = 0;
    let result = simulate_observed(model, &state, &plan.integrator, |s| {
        let st = &s.state;
        let mut row = vec![s.t];
        for i in 0..n {
            row.extend([st.x()[i], st.y()[i], st.theta()[i], st.v()[i], s.controls.u[i], s.controls.f[i]]);
        }
        trajectory.row(row);
        energy.row([s.t, s.h, s.h_r, s.dissipation]);
        initial_energy.get_or_insert(s.clf(model));
        samples += 1;
        last = Some(FinalState {
            t: s.t,
            max_abs_speed_deviation: st.v().iter().fold(0.0, |m, v| m.max((v - model.road.v_star).abs())),
            max_abs_heading: max_abs(st.theta()),
            max_abs_lateral: max_abs(st.y()),
            max_abs_u: max_abs(&s.controls.u),
            max_abs_f: max_abs(&s.controls.f),
            h: s.h,
            h_r: s.h_r,
        });
    });
    let wall = start.elapsed().as_secs_f64();

    let (stats, failure) = match result {
        Ok(stats) => (stats, None),
        Err(SimError::Guard { event, stats }) => (*stats, Some(event)),
        Err(SimError::Invalid(e)) => return Err(CliError::Invalid(e.to_string())),
    };
    let summary = MicroSummary {
        command: "run-micro",
        status: if failure.is_some() { "guard-failure" } else { "ok" },
        params: &plan,
        steps: stats.steps,
        samples,
        guard_events: &stats.events,
        failure: failure.as_ref(),
        initial_energy: initial_energy.unwrap_or(f64::NAN),
        max_energy_increase: stats.max_energy_increase,
        final_state: last,
    };

    create_dir(out)?;
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("timing.json"), &Timing { command: "run-micro", params: &plan, wall_seconds: wall })?;
    trajectory.write(&out.join("trajectory.csv"))?;
    energy.write(&out.join("energy.csv"))?;
    if let Some(event) = failure {
        return Err(CliError::Guard(event.to_string()));
    }
    rep.say(format!(
        "{}: {} steps, {} samples, {} recovered guard events, {wall:.2} s; outputs in {}",
        plan.name,
        stats.steps,
        samples,
        stats.events.len(),
        out.display()
    ));
    Ok(())
}

#[derive(Serialize)]
struct MassReport {
    initial: f64,
    final_mass: f64,
    /// Largest `|M(t) - M(0)| / M(0)` over all steps.
    max_relative_drift: f64,
}

#[derive(Serialize)]
struct MacroSummary<'a> {
    command: &'static str,
    params: &'a MacroPlan,
    steps: usize,
    snapshot_times: Vec<f64>,
    mass: MassReport,
    /// Largest change of any cell from the initial field over all snapshots.
    max_change_rho: f64,
    max_change_v: f64,
}

fn initial_field(plan: &MacroPlan) -> Result<MacroField, CliError> {
    let p = plan.initial;
    let field = MacroField::from_profile(plan.grid, |x| p.rho(x), |x| p.v(x), plan.boundary, plan.frame_speed)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    field.check(&plan.params).map_err(|e| CliError::Invalid(format!("initial field: {e}")))?;
    Ok(field)
}

pub fn run_macro(scenario: &Path, out: &Path, seed: Option<u64>, rep: &Reporter) -> Result<(), CliError> {
    let plan = Loaded::read(scenario)?.macro_plan(seed)?;
    let field = initial_field(&plan)?;
    let start = Instant::now();
    let run = simulate_macro(&field, &plan.params, &plan.run).map_err(|e| match e {
        trafficfluid_core::Error::Invalid(_) => CliError::Invalid(e.to_string()),
        _ => CliError::Guard(e.to_string()),
    })?;
    let wall = start.elapsed().as_secs_f64();

    let mut fields = Csv::new(&plan, &["t".into(), "x".into(), "rho".into(), "v".into()])?;
    let (mut d_rho, mut d_v) = (0.0_f64, 0.0_f64);
    for (t, f) in &run.snapshots {
        for k in 0..f.grid.cells {
            fields.row([*t, f.grid.center(k), f.rho[k], f.v[k]]);
            d_rho = d_rho.max((f.rho[k] - field.rho[k]).abs());
            d_v = d_v.max((f.v[k] - field.v[k]).abs());
        }
    }
    let final_mass = run.snapshots.last().map(|s| s.1.mass()).unwrap_or(f64::NAN);
    let summary = MacroSummary {
        command: "run-macro",
        params: &plan,
        steps: run.steps,
        snapshot_times: run.snapshots.iter().map(|s| s.0).collect(),
        mass: MassReport { initial: field.mass(), final_mass, max_relative_drift: run.max_mass_drift },
        max_change_rho: d_rho,
        max_change_v: d_v,
    };
    create_dir(out)?;
    fields.write(&out.join("fields.csv"))?;
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("timing.json"), &Timing { command: "run-macro", params: &plan, wall_seconds: wall })?;
    rep.say(format!(
        "{}: {} steps, mass drift {:.3e}, {wall:.2} s; outputs in {}",
        plan.name,
        run.steps,
        run.max_mass_drift,
        out.display()
    ));
    Ok(())
}

#[derive(Serialize)]
struct CompareSummary<'a> {
    command: &'static str,
    params: &'a ComparePlan,
    rows: &'a [ErrorRow],
    /// Whether the L² density error does not increase with `n`, per time.
    l2_rho_non_increasing: Vec<(f64, bool)>,
}

pub fn run_compare(scenario: &Path, out: &Path, seed: Option<u64>, rep: &Reporter) -> Result<(), CliError> {
    let plan = Loaded::read(scenario)?.compare_plan(seed)?;
    let setup = CompareSetup::new(&plan.line, &plan.config).map_err(|e| CliError::Invalid(e.to_string()))?;
    let start = Instant::now();
    let setup = &setup;
    let (fields, micro) = std::thread::scope(|s| {
        let macro_leg = s.spawn(|| setup.macro_leg());
        let micro_legs: Vec<_> = plan.config.n_list.iter().map(|&n| s.spawn(move || setup.micro_leg(n))).collect();
        let micro: Vec<_> = micro_legs.into_iter().map(|h| h.join().expect("micro leg panicked")).collect();
        (macro_leg.join().expect("macro leg panicked"), micro)
    });
    let fields = fields.map_err(|e| CliError::Guard(format!("macro leg: {e}")))?;
    let mut rows = Vec::new();
    for (&n, leg) in plan.config.n_list.iter().zip(micro) {
        let samples = leg.map_err(|e| match e {
            SimError::Guard { event, .. } => CliError::Guard(format!("micro leg with n = {n}: {event}")),
            SimError::Invalid(e) => CliError::Invalid(format!("micro leg with n = {n}: {e}")),
        })?;
        rows.extend(setup.errors(n, &samples, &fields));
    }
    let wall = start.elapsed().as_secs_f64();
    let checks = plan
        .config
        .times
        .iter()
        .map(|&t| (t, non_increasing_in_n(&rows, t).unwrap_or(false)))
        .collect();
    let summary = CompareSummary { command: "compare", params: &plan, rows: &rows, l2_rho_non_increasing: checks };
    create_dir(out)?;
    write_json(&out.join("errors.json"), &summary)?;
    write_json(&out.join("timing.json"), &Timing { command: "compare", params: &plan, wall_seconds: wall })?;
    for r in &rows {
        rep.say(format!("n = {:>5}  t = {:<6}  L2(rho) = {:.4e}  Linf(rho) = {:.4e}", r.n, r.t, r.l2_rho, r.linf_rho));
    }
    Ok(())
}

pub fn validate(scenario: &Path, rep: &Reporter) -> Result<(), CliError> {
    let loaded = Loaded::read(scenario)?;
    let sc = &loaded.scenario;
    let mut checked = Vec::new();
    if sc.road.is_some() || sc.fleet.is_some() || sc.potentials.is_some() || sc.controller.is_some() {
        loaded.micro_plan(None)?;
        checked.push("micro");
    }
    if sc.macro_run.is_some() {
        let plan = loaded.macro_plan(None)?;
        initial_field(&plan)?;
        checked.push("macro");
    }
    if sc.compare.is_some() {
        let plan = loaded.compare_plan(None)?;
        CompareSetup::new(&plan.line, &plan.config).map_err(|e| CliError::Invalid(e.to_string()))?;
        checked.push("compare");
    }
    if checked.is_empty() {
        return Err(CliError::Invalid(format!("{}: no runnable sections", scenario.display())));
    }
    rep.say(format!("{}: valid ({})", scenario.display(), checked.join(", ")));
    Ok(())
}
