use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::fs::File;

use vegpattern::continuation::{
    continue_branch, full_diagram, seed_point, BifurcationEvent, Branch, ContinuationOptions, Problem,
};
use vegpattern::discretization::{rhs, FieldState, GridSpec};
use vegpattern::integrate::{integrate, settle, IntegratorOptions};
use vegpattern::model::{equilibrium, fold_point, homogeneous_equilibria, BranchTag, HomogeneousState};
use vegpattern::presets::{initial_state, PresetOptions};
use vegpattern::stability::{critical_domain_size, homogeneous_stability, turing_scan};
use vegpattern::symmetry::classify;
use vegpattern::Params;

use crate::config::{merge, read_json_arg, RunConfig, SCHEMA_VERSION};
use crate::output::Output;
use crate::{Cli, Command, UsageError};

pub enum Outcome {
    Complete,
    Partial,
}

/// Reference critical values of the labelled events at `L = 8`.
pub const REFERENCE: [(&str, f64); 9] = [
    ("LP1", 0.64),
    ("TB1", 1.14),
    ("TB2", 1.06),
    ("PF1", 0.99),
    ("PF2", 0.91),
    ("LP2", 0.54),
    ("LP3", 0.54),
    ("LP4", 0.44),
    ("LP5", 0.44),
];

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let json_arg = |a: &Option<String>| a.as_deref().map(read_json_arg).transpose();
    let mut params: Params = merge(&g.param_set.params(), json_arg(&g.params)?.as_ref())?;
    if let Some(l) = g.length {
        params.length = l;
    }
    params.validate()?;
    let integrator: IntegratorOptions = merge(&IntegratorOptions::default(), json_arg(&g.integrator)?.as_ref())?;
    integrator.validate()?;
    let continuation: ContinuationOptions =
        merge(&ContinuationOptions::default(), json_arg(&g.continuation)?.as_ref())?;
    continuation.validate()?;
    let mut presets: PresetOptions = merge(&PresetOptions::default(), json_arg(&g.preset_options)?.as_ref())?;
    presets.seed = g.seed;
    GridSpec::new(params.length, g.grid_n)?;

    let arguments = serde_json::to_value(&cli.command)?;
    let command = match &arguments {
        Value::Object(m) => m.get("command").and_then(Value::as_str).unwrap_or_default().to_string(),
        Value::String(s) => s.clone(),
        _ => String::new(),
    };
    Ok(RunConfig {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        arguments,
        param_set: g.param_set,
        params,
        grid_n: g.grid_n,
        seed: g.seed,
        integrator,
        continuation,
        presets,
    })
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve(cli)?;
    let out = Output::create(&cli.global.out, &cfg)?;
    match &cli.command {
        Command::Equilibria(a) => equilibria(&cfg, &out, a),
        Command::Stability(a) => stability(&cfg, &out, a),
        Command::TuringScan(a) => turing(&cfg, &out, a),
        Command::CriticalSize => critical_size(&cfg, &out),
        Command::Simulate(a) => simulate(&cfg, &out, a),
        Command::Continue(a) => continuation(&cfg, &out, a),
        Command::Diagram(a) => diagram(&cfg, &out, a),
    }
}

fn grid(cfg: &RunConfig) -> Result<GridSpec> {
    Ok(GridSpec::new(cfg.params.length, cfg.grid_n)?)
}

fn equilibria(cfg: &RunConfig, out: &Output, a: &crate::EquilibriaArgs) -> Result<Outcome> {
    if !(a.p_min >= 0.0 && a.p_min <= a.p_max) || a.steps < 2 {
        bail!(UsageError("need 0 <= p-min <= p-max and at least 2 steps".into()));
    }
    let mut w = out.csv("equilibria.csv")?;
    w.write_record(["p", "branch_tag", "B", "W", "T", "stable_at_L"])?;
    for i in 0..a.steps {
        let p = a.p_min + (a.p_max - a.p_min) * i as f64 / (a.steps - 1) as f64;
        for u in homogeneous_equilibria(p, &cfg.params)? {
            let stable = homogeneous_stability(&u, p, &cfg.params, a.n_max)?.stable;
            w.serialize((p, u.branch_tag.as_str(), u.b, u.w, u.t, stable))?;
        }
    }
    w.flush()?;
    Ok(Outcome::Complete)
}

fn homogeneous_state(name: &str, p: f64, params: &Params) -> Result<HomogeneousState<f64>> {
    let tag: BranchTag = name.parse().map_err(|e: vegpattern::Error| UsageError(e.to_string()))?;
    equilibrium(p, tag, params)?.with_context(|| format!("no {} homogeneous state at p = {p}", tag.as_str()))
}

fn stability(cfg: &RunConfig, out: &Output, a: &crate::StabilityArgs) -> Result<Outcome> {
    let u = homogeneous_state(&a.branch, a.p, &cfg.params)?;
    let report = homogeneous_stability(&u, a.p, &cfg.params, a.n_max)?;
    let mut w = out.csv("stability.csv")?;
    w.write_record(["n", "c2", "c1", "c0", "routh_hurwitz", "leading_real_part"])?;
    for m in &report.modes {
        w.serialize((m.n, m.coeffs.c2, m.coeffs.c1, m.coeffs.c0, m.routh_hurwitz_pass, m.leading_real_part))?;
    }
    w.flush()?;
    out.json(
        "stability.json",
        json!({
            "p": a.p,
            "state": u,
            "stable": report.stable,
            "first_violating_mode": report.first_violating_mode,
        }),
    )?;
    println!(
        "{} state at p = {}: {}",
        u.branch_tag.as_str(),
        a.p,
        match report.first_violating_mode {
            None => "stable".to_string(),
            Some(n) => format!("unstable, first unstable mode n = {n}"),
        }
    );
    Ok(Outcome::Complete)
}

fn turing(cfg: &RunConfig, out: &Output, a: &crate::TuringScanArgs) -> Result<Outcome> {
    if a.lengths.iter().any(|l| !(*l > 0.0)) {
        bail!(UsageError("lengths must be positive".into()));
    }
    let mut w = out.csv("turing_scan.csv")?;
    w.write_record(["L", "n", "p_c", "onset_flag"])?;
    for &len in &a.lengths {
        let params = cfg.params.with_length(len);
        let rows = turing_scan(len, a.n_max, &params);
        let unstable = rows.iter().filter(|r| r.onset().is_some()).count();
        for r in &rows {
            for (i, p) in r.roots.iter().enumerate() {
                w.serialize((len, r.n, p, i + 1 == r.roots.len()))?;
            }
        }
        println!("L = {len}: {unstable} unstable mode(s)");
    }
    w.flush()?;
    Ok(Outcome::Complete)
}

fn critical_size(cfg: &RunConfig, out: &Output) -> Result<Outcome> {
    let lstar = critical_domain_size(&cfg.params)?;
    let (pc0, b) = fold_point(&cfg.params).context("no homogeneous fold")?;
    out.json("critical_size.json", json!({ "L_star": lstar, "p_c0": pc0, "B_c0": b }))?;
    println!("L* = {lstar:.6} (fold at p = {pc0:.6})");
    Ok(Outcome::Complete)
}

fn write_state(out: &Output, name: &str, u: &FieldState) -> Result<()> {
    let mut w = out.csv(name)?;
    w.write_record(["x", "B", "W", "T"])?;
    for i in 0..u.grid.nodes() {
        w.serialize((u.grid.x(i), u.b[i], u.w[i], u.t[i]))?;
    }
    w.flush()?;
    Ok(())
}

fn max_residual(u: &FieldState, p: f64, params: &Params) -> f64 {
    rhs(&u.grid, &u.to_vec(), p, params).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn simulate(cfg: &RunConfig, out: &Output, a: &crate::SimulateArgs) -> Result<Outcome> {
    let g = grid(cfg)?;
    let integ = IntegratorOptions {
        snapshot_every: a.snapshot_every.or(cfg.integrator.snapshot_every),
        ..cfg.integrator
    };
    integ.validate()?;
    let u0 = initial_state(&a.preset, g, a.p, &cfg.params, &cfg.presets, &integ)?;
    let traj = integrate(&u0, a.p, &integ, &cfg.params)?;

    let mut w = out.csv("snapshots.csv")?;
    w.write_record(["t", "x", "B", "W", "T"])?;
    for (t, s) in traj.times.iter().zip(&traj.snapshots) {
        for i in 0..g.nodes() {
            w.serialize((t, g.x(i), s.b[i], s.w[i], s.t[i]))?;
        }
    }
    w.flush()?;

    let (last, settled, outcome) = if a.no_settle {
        (traj.last().clone(), false, Outcome::Complete)
    } else {
        match settle(traj.last(), a.p, &integ, &cfg.params) {
            Ok(u) => (u, true, Outcome::Complete),
            Err(vegpattern::Error::Timeout { last, .. }) => (*last, false, Outcome::Partial),
            Err(e) => return Err(e.into()),
        }
    };
    write_state(out, "final.csv", &last)?;
    let report = classify(&last);
    let residual = max_residual(&last, a.p, &cfg.params);
    out.json(
        "simulate.json",
        json!({
            "preset": a.preset.to_string(),
            "p": a.p,
            "termination": traj.termination,
            "final_time": traj.final_time(),
            "steps": traj.steps,
            "rejected": traj.rejected,
            "settled": settled,
            "residual": residual,
            "symmetry": report,
        }),
    )?;
    println!(
        "final shape {} (defect {:.2e}, residual {:.2e}{})",
        report.profile_shape,
        report.defect,
        residual,
        if settled { "" } else { ", not settled" }
    );
    Ok(outcome)
}

fn branch_rows(out: &Output, name: &str, b: &Branch) -> Result<()> {
    let mut w = out.csv(name)?;
    w.write_record([
        "p",
        "mean_B",
        "max_B",
        "l2_B",
        "first_moment",
        "n_unstable",
        "leading_eigenvalue",
        "tau_fold",
        "residual",
        "shape",
    ])?;
    for pt in &b.points {
        let m = &pt.measures;
        w.serialize((
            pt.p,
            m.mean_b,
            m.max_b,
            m.l2_b,
            m.first_moment,
            pt.n_unstable,
            pt.leading_eigenvalue,
            pt.tau_fold,
            pt.residual,
            classify(&pt.state).profile_shape.as_str(),
        ))?;
    }
    w.flush()?;
    Ok(())
}

fn branch_states(out: &Output, name: &str, b: &Branch) -> Result<()> {
    let mut w = out.csv(name)?;
    w.write_record(["point", "p", "x", "B", "W", "T"])?;
    for (k, pt) in b.points.iter().enumerate() {
        let s = &pt.state;
        for i in 0..s.grid.nodes() {
            w.serialize((k, pt.p, s.grid.x(i), s.b[i], s.w[i], s.t[i]))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn event_json(e: &BifurcationEvent) -> Value {
    json!({
        "label": e.label,
        "kind": e.kind,
        "p": e.p,
        "branch": e.branch,
        "test_value": e.test_value,
        "detection_interval": [e.detection_interval.0, e.detection_interval.1],
        "breaks_reflection": e.breaks_reflection,
        "shape": classify(&e.point.state).profile_shape,
        "measures": e.point.measures,
    })
}

fn branch_json(b: &Branch) -> Value {
    json!({
        "id": b.id,
        "provenance": b.provenance,
        "depth": b.depth,
        "seed_shape": b.seed_shape,
        "points": b.points.len(),
        "termination": b.termination,
        "conjugate_of": b.conjugate_of,
        "p_range": [
            b.points.iter().map(|p| p.p).fold(f64::INFINITY, f64::min),
            b.points.iter().map(|p| p.p).fold(f64::NEG_INFINITY, f64::max),
        ],
    })
}

fn continuation(cfg: &RunConfig, out: &Output, a: &crate::ContinueArgs) -> Result<Outcome> {
    if a.direction == 0.0 || !a.direction.is_finite() {
        bail!(UsageError("direction must be +1 or -1".into()));
    }
    let g = grid(cfg)?;
    let start = match a.from.strip_prefix("file:") {
        Some(path) => {
            let u = FieldState::read_csv(File::open(path).with_context(|| format!("opening {path}"))?)?;
            if u.grid.nodes() != g.nodes() {
                bail!(UsageError(format!("{path} has {} nodes, grid has {}", u.grid.nodes(), g.nodes())));
            }
            u
        }
        None => FieldState::homogeneous(g, &homogeneous_state(&a.from, a.p, &cfg.params)?),
    };
    let problem = Problem::new(g, &cfg.params, cfg.continuation.variable_scale);
    let seed = seed_point(&problem, &start, a.p, &cfg.continuation)?;
    let branch = continue_branch(&problem, &seed, a.direction.signum(), &cfg.continuation)?;
    branch_rows(out, "branch.csv", &branch)?;
    if a.dump_states {
        branch_states(out, "branch_states.csv", &branch)?;
    }
    out.json(
        "events.json",
        json!({
            "branch": branch_json(&branch),
            "events": branch.events.iter().map(event_json).collect::<Vec<_>>(),
        }),
    )?;
    for e in &branch.events {
        println!("{:<13} p = {:.6}", e.kind.as_str(), e.p);
    }
    Ok(match branch.termination {
        vegpattern::continuation::Termination::StepUnderflow(_) => Outcome::Partial,
        _ => Outcome::Complete,
    })
}

/// The comparison table of labelled events against the reference values.
pub fn report(events: &[BifurcationEvent], diagnostics: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:<13} {:>10} {:>10} {:>10}", "label", "kind", "p", "reference", "deviation");
    for (label, reference) in REFERENCE {
        match events.iter().find(|e| e.label.as_deref() == Some(label)) {
            Some(e) => {
                let _ = writeln!(
                    s,
                    "{label:<6} {:<13} {:>10.5} {reference:>10.2} {:>10.5}",
                    e.kind.as_str(),
                    e.p,
                    (e.p - reference).abs()
                );
            }
            None => {
                let _ = writeln!(s, "{label:<6} {:<13} {:>10} {reference:>10.2} {:>10}", "-", "missing", "-");
            }
        }
    }
    let extra: Vec<&BifurcationEvent> = events.iter().filter(|e| e.label.is_none()).collect();
    if !extra.is_empty() {
        let _ = writeln!(s, "\nunlabelled events:");
        for e in extra {
            let _ = writeln!(s, "  {:<13} p = {:.5} on branch {}", e.kind.as_str(), e.p, e.branch);
        }
    }
    if !diagnostics.is_empty() {
        let _ = writeln!(s, "\ndiagnostics:");
        for d in diagnostics {
            let _ = writeln!(s, "  {d}");
        }
    }
    s
}

fn diagram(cfg: &RunConfig, out: &Output, a: &crate::DiagramArgs) -> Result<Outcome> {
    let d = full_diagram(&cfg.params, grid(cfg)?, &cfg.continuation)?;
    for b in &d.branches {
        branch_rows(out, &format!("branches/branch_{:02}.csv", b.id), b)?;
        if a.dump_states {
            branch_states(out, &format!("branches/branch_{:02}_states.csv", b.id), b)?;
        }
    }
    out.json(
        "events.json",
        json!({
            "events": d.events.iter().map(event_json).collect::<Vec<_>>(),
            "branches": d.branches.iter().map(branch_json).collect::<Vec<_>>(),
            "diagnostics": d.diagnostics,
        }),
    )?;
    let text = report(&d.events, &d.diagnostics);
    out.write_text("report.txt", &format!("# manifest_sha256={}\n{text}", out.hash()))?;
    print!("{text}");
    Ok(if d.is_complete() { Outcome::Complete } else { Outcome::Partial })
}
