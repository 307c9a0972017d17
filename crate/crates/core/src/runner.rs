//! Closed-loop scenario execution: controller at the control rate, simulator substeps with
//! zero-order hold, domain switches, logging and summary metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DVector, Vector3};
use serde::Serialize;

use crate::constraints::ContactSpec;
use crate::error::{Error, Result};
use crate::gait::{Phase, Walker};
use crate::idqp::{ActiveContact, Controller, Fallback, Incident};
use crate::multibody::{FrameId, Kinematics, State, WeldedContact};
use crate::qp::QpStatus;
use crate::safety::{exponential_bound, BarrierSpec};
use crate::scenario::{Scenario, DOUBLE_SUPPORT, SINGLE_SUPPORT};
use crate::sim::{constrained_forward_dynamics, impact_projection, step};

/// Task outputs of the walking stacks, in column order.
const GAIT_TASKS: [(&str, usize); 6] =
    [("com", 3), ("com-height", 1), ("torso", 3), ("swing", 3), ("swing-orientation", 3), ("com-lip", 2)];

/// One control tick.
#[derive(Debug, Clone)]
pub struct Record {
    pub domain: String,
    pub status: QpStatus,
    pub fallback: Fallback,
    pub iterations: usize,
    /// Numeric columns after the leading `t, domain, status, fallback, iterations`.
    pub values: Vec<f64>,
}

/// Per-tick log with a fixed column schema.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryLog {
    pub columns: Vec<String>,
    pub records: Vec<Record>,
}

impl TrajectoryLog {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one numeric column, NaN where the quantity was inactive.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column(name)?;
        Some(self.records.iter().map(|r| r.values[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,domain,status,fallback,iterations");
        for c in &self.columns[1..] {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{:.16e},{},{},{},{}", r.values[0], r.domain, status_name(r.status), fallback_name(r.fallback), r.iterations);
            for v in &r.values[1..] {
                out.push(',');
                if v.is_finite() {
                    let _ = write!(out, "{v:.16e}");
                }
            }
            out.push('\n');
        }
        out
    }
}

fn status_name(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::MaxIterations => "max-iterations",
        QpStatus::Infeasible => "infeasible",
    }
}

fn fallback_name(f: Fallback) -> &'static str {
    match f {
        Fallback::None => "none",
        Fallback::Relaxed => "relaxed",
        Fallback::HoldPrevious => "hold-previous",
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverStats {
    pub optimal: usize,
    pub max_iterations: usize,
    pub infeasible: usize,
    pub relaxed: usize,
    pub held: usize,
    pub mean_iterations: f64,
    pub max_iterations_used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Metrics {
    pub scenario: String,
    pub model: String,
    pub ticks: usize,
    pub simulated_time: f64,
    pub fault: Option<String>,
    pub min_h: BTreeMap<String, f64>,
    /// Largest `bound − h` over ticks where the barrier was active.
    pub max_bound_violation: BTreeMap<String, f64>,
    pub max_task_error: BTreeMap<String, f64>,
    /// `‖q̈_sim − q̈*‖∞` with the simulator fed the controller's torques.
    pub max_consistency: f64,
    pub max_dynamics_residual: f64,
    pub max_constraint_residual: f64,
    /// Position-level drift of loop closures and welded contacts.
    pub max_drift: f64,
    pub min_zmp_margin: Option<f64>,
    pub min_friction_margin: Option<f64>,
    pub solver: SolverStats,
    pub steps: usize,
    pub min_separation: Option<f64>,
    pub min_torso_height: Option<f64>,
    pub mean_forward_speed: Option<f64>,
    pub commanded_speed: Option<f64>,
    pub incidents: Vec<Incident>,
    pub overrides: Vec<String>,
    pub assertions: Vec<AssertionResult>,
    pub passed: bool,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub metrics: Metrics,
    pub final_state: State,
}

/// Contacts currently welded, keyed by their index in the scenario.
#[derive(Debug, Clone, Default)]
struct ContactSet {
    active: Vec<(usize, ActiveContact)>,
}

impl ContactSet {
    fn indices(&self) -> Vec<usize> {
        self.active.iter().map(|(i, _)| *i).collect()
    }

    fn list(&self) -> Vec<ActiveContact> {
        self.active.iter().map(|(_, c)| c.clone()).collect()
    }

    fn welded(&self) -> Vec<WeldedContact> {
        self.active.iter().map(|(_, c)| c.welded()).collect()
    }
}

fn make_contact(spec: &ContactSpec, frame: FrameId, kin: &Kinematics, scenario: &Scenario) -> Result<ActiveContact> {
    Ok(ActiveContact { spec: spec.clone(), frame, anchor: kin.frame_pose(&scenario.model, frame)? })
}

struct BarrierTrack {
    eta0: Option<DVector<f64>>,
    t0: f64,
    min_h: f64,
    worst: f64,
}

/// Run a scenario to completion or to its first fault.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    let model = &scenario.model;
    let n = model.n();
    let file = &scenario.file;
    let dt_ctrl = 1.0 / file.control_rate;
    let mut state = State::new(scenario.q0.clone(), scenario.qdot0.clone(), 0.0);
    let mut controller = Controller::new(scenario.options.clone());

    let mut walker = match &scenario.gait {
        Some(g) => {
            let kin = Kinematics::new(model, &state.q, Some(&state.qdot));
            Some(Walker::new(model, &kin, g.section.params, g.section.weights, g.frames, g.section.shift, g.section.first_stance)?)
        }
        None => None,
    };

    // Column schema.
    let coords: Vec<String> = model.coordinate_names().iter().map(|s| s.to_string()).collect();
    let mut columns = vec!["t".to_string()];
    columns.extend(coords.iter().map(|c| format!("q_{c}")));
    columns.extend(coords.iter().map(|c| format!("qd_{c}")));
    columns.extend(coords.iter().map(|c| format!("qdd_{c}")));
    let actuated: Vec<String> = model.actuated_indices().iter().map(|&i| coords[i].clone()).collect();
    columns.extend(actuated.iter().map(|c| format!("u_{c}")));
    for l in model.loops() {
        columns.push(format!("lambda_{}", l.name));
    }
    for (c, _) in &scenario.contacts {
        for k in 0..c.dim() {
            columns.push(format!("lambda_{}_{k}", c.name));
        }
    }
    let mut task_cols: Vec<(String, usize)> = Vec::new();
    if walker.is_some() {
        task_cols.extend(GAIT_TASKS.iter().map(|(n, d)| (n.to_string(), *d)));
    }
    for (t, _) in &scenario.tasks {
        if !task_cols.iter().any(|(n, _)| n == &t.name) {
            task_cols.push((t.name.clone(), t.dim()));
        }
    }
    let task_start = columns.len();
    for (name, d) in &task_cols {
        for k in 0..*d {
            columns.push(format!("e_{name}_{k}"));
        }
    }
    let barrier_start = columns.len();
    for b in &scenario.barriers {
        columns.push(format!("h_{}", b.spec.name));
        columns.push(format!("bound_{}", b.spec.name));
    }
    let tail = ["com_x", "com_y", "com_z", "zmp_x", "zmp_y", "zmp_margin", "friction_margin", "consistency", "dynamics_residual", "drift", "separation", "target_x", "target_y"];
    let tail_start = columns.len();
    columns.extend(tail.iter().map(|s| s.to_string()));
    let col = |name: &str| tail_start + tail.iter().position(|s| *s == name).unwrap_or(0);

    let mut log = TrajectoryLog { columns, records: Vec::new() };
    let mut metrics = Metrics {
        scenario: file.name.clone(),
        model: model.name.clone(),
        overrides: scenario.overrides.clone(),
        commanded_speed: scenario.gait.as_ref().map(|g| g.section.params.speed),
        ..Metrics::default()
    };
    let mut tracks: Vec<BarrierTrack> =
        scenario.barriers.iter().map(|_| BarrierTrack { eta0: None, t0: 0.0, min_h: f64::INFINITY, worst: f64::NEG_INFINITY }).collect();
    let mut contacts = ContactSet::default();
    let mut last_step: Option<usize> = None;
    let mut iterations_total = 0usize;
    let mut speed_mark: Option<(f64, f64)> = None;
    let ground = walker.as_ref().map(|w| w.ground);
    let separation_frames = scenario.gait.as_ref().map(|g| (g.frames.left, g.frames.right));
    let torso_frame = scenario.gait.as_ref().map(|g| g.frames.torso);

    let ticks = scenario.ticks();
    for k in 0..ticks {
        let t = k as f64 * dt_ctrl;
        state.t = t;
        let kin = Kinematics::new(model, &state.q, Some(&state.qdot));

        // Domain and contact set for this tick.
        let (domain, wanted): (String, Vec<usize>) = match (&walker, &scenario.gait) {
            (Some(w), Some(g)) => match w.schedule.phase(t) {
                Phase::DoubleSupport { .. } => (DOUBLE_SUPPORT.into(), vec![g.left_contact, g.right_contact]),
                Phase::SingleSupport { stance, .. } => {
                    let c = if stance == crate::gait::Side::Left { g.left_contact } else { g.right_contact };
                    (SINGLE_SUPPORT.into(), vec![c])
                }
            },
            _ => {
                let d = scenario.domains.iter().rev().find(|d| d.start <= t + 1e-12).unwrap_or(&scenario.domains[0]);
                let idx = d
                    .contacts
                    .iter()
                    .filter_map(|name| scenario.contacts.iter().position(|(c, _)| &c.name == name))
                    .collect();
                (d.name.clone(), idx)
            }
        };
        if contacts.indices() != wanted {
            let mut next = ContactSet::default();
            let mut added = false;
            for &i in &wanted {
                match contacts.active.iter().find(|(j, _)| *j == i) {
                    Some(existing) => next.active.push(existing.clone()),
                    None => {
                        let (spec, frame) = &scenario.contacts[i];
                        next.active.push((i, make_contact(spec, *frame, &kin, scenario)?));
                        added = true;
                    }
                }
            }
            contacts = next;
            if added && k > 0 {
                let (qd, _) = impact_projection(model, &state.q, &state.qdot, &contacts.welded())?;
                state.qdot = qd;
            }
            controller.reset_warm_start();
        }
        let kin = Kinematics::new(model, &state.q, Some(&state.qdot));

        // Tasks for this tick.
        let mut target = None;
        let tasks = match walker.as_mut() {
            Some(w) => {
                let tick = w.tick(model, &kin, t)?;
                if let Phase::SingleSupport { step, .. } = tick.phase {
                    if last_step != Some(step) {
                        if step > 0 {
                            metrics.steps += 1;
                        }
                        let com = kin.com_position(model);
                        if step as f64 >= w.params.speed_ramp.max(1.0) && speed_mark.is_none() {
                            speed_mark = Some((t, com.x));
                        }
                        last_step = Some(step);
                    }
                }
                target = tick.target;
                let mut tasks = tick.tasks;
                tasks.extend(scenario.tasks.iter().filter(|(_, d)| d.is_empty() || d.contains(&domain)).map(|(t, _)| t.clone()));
                tasks
            }
            None => scenario.tasks.iter().filter(|(_, d)| d.is_empty() || d.contains(&domain)).map(|(t, _)| t.clone()).collect(),
        };

        if let Some(g) = &scenario.gait {
            controller.options.passive = match walker.as_ref().map(|w| w.schedule.phase(t)) {
                Some(Phase::SingleSupport { stance: crate::gait::Side::Left, .. }) => g.left_passive.clone(),
                Some(Phase::SingleSupport { stance: crate::gait::Side::Right, .. }) => g.right_passive.clone(),
                _ => Vec::new(),
            };
        }
        let enforced: Vec<&BarrierSpec> =
            scenario.barriers.iter().filter(|b| b.enforce && b.active_in(&domain)).map(|b| &b.spec).collect();
        let out = match controller.control_step(model, &state, &tasks, &contacts.list(), &enforced) {
            Ok(o) => o,
            Err(e) => {
                metrics.fault = Some(format!("t = {t:.4}: controller: {e}"));
                break;
            }
        };

        let mut values = vec![f64::NAN; log.columns.len()];
        values[0] = t;
        values[1..=n].copy_from_slice(state.q.as_slice());
        values[n + 1..=2 * n].copy_from_slice(state.qdot.as_slice());
        values[2 * n + 1..=3 * n].copy_from_slice(out.qddot.as_slice());
        values[3 * n + 1..=3 * n + model.m()].copy_from_slice(out.u.as_slice());
        let mut c0 = 3 * n + model.m() + 1;
        let loops = model.loops().len();
        for l in 0..loops {
            values[c0 + l] = out.lambda[l];
        }
        c0 += loops;
        let mut offset = loops;
        for (i, (c, _)) in scenario.contacts.iter().enumerate() {
            if contacts.indices().contains(&i) {
                for j in 0..c.dim() {
                    values[c0 + j] = out.lambda[offset + j];
                }
                offset += c.dim();
            }
            c0 += c.dim();
        }
        let mut tc = task_start;
        for (name, d) in &task_cols {
            if let Some(pos) = out.assembly.tasks.evals.iter().zip(&tasks).position(|(_, t)| &t.name == name) {
                let e = &out.diagnostics.task_errors[pos];
                for j in 0..*d {
                    values[tc + j] = e[j];
                }
                let m = metrics.max_task_error.entry(name.clone()).or_insert(0.0);
                *m = m.max(e.amax());
            }
            tc += d;
        }
        for (bi, b) in scenario.barriers.iter().enumerate() {
            let tr = &mut tracks[bi];
            if !b.active_in(&domain) {
                tr.eta0 = None;
                continue;
            }
            let eval = b.spec.evaluate(model, &kin)?;
            let eta = b.spec.eta(&eval);
            if tr.eta0.is_none() {
                tr.eta0 = Some(eta.clone());
                tr.t0 = t;
            }
            let bound = exponential_bound(&b.spec.k_alpha, tr.eta0.as_ref().unwrap(), t - tr.t0);
            tr.min_h = tr.min_h.min(eval.h);
            tr.worst = tr.worst.max(bound - eval.h);
            values[barrier_start + 2 * bi] = eval.h;
            values[barrier_start + 2 * bi + 1] = bound;
        }
        let com = kin.com_position(model);
        values[col("com_x")] = com.x;
        values[col("com_y")] = com.y;
        values[col("com_z")] = com.z;
        if let Some(p) = out.diagnostics.zmp {
            values[col("zmp_x")] = p.x;
            values[col("zmp_y")] = p.y;
        }
        if let Some(m) = out.diagnostics.zmp_margin {
            values[col("zmp_margin")] = m;
            metrics.min_zmp_margin = Some(metrics.min_zmp_margin.map_or(m, |x: f64| x.min(m)));
        }
        if let Some(m) = out.diagnostics.friction_margin {
            values[col("friction_margin")] = m;
            metrics.min_friction_margin = Some(metrics.min_friction_margin.map_or(m, |x: f64| x.min(m)));
        }
        let drift = if out.assembly.constraints.is_empty() { 0.0 } else { out.assembly.constraints.residual.amax() };
        values[col("drift")] = drift;
        metrics.max_drift = metrics.max_drift.max(drift);
        if out.fallback != Fallback::HoldPrevious {
            let welded = contacts.welded();
            let fd = constrained_forward_dynamics(model, &state.q, &state.qdot, &out.u, None, &welded, None)?;
            let c = (&fd.qddot - &out.qddot).amax();
            values[col("consistency")] = c;
            metrics.max_consistency = metrics.max_consistency.max(c);
            let r = crate::idqp::dynamics_residual(&out.assembly, &out.solution.x);
            values[col("dynamics_residual")] = r;
            metrics.max_dynamics_residual = metrics.max_dynamics_residual.max(r);
            let cr = crate::idqp::constraint_residual(&out.assembly, &out.solution.x);
            metrics.max_constraint_residual = metrics.max_constraint_residual.max(cr);
        }
        if let Some((l, r)) = separation_frames {
            let s = kin.frame_pose(model, l)?.position.y - kin.frame_pose(model, r)?.position.y;
            values[col("separation")] = s;
            if domain == SINGLE_SUPPORT {
                metrics.min_separation = Some(metrics.min_separation.map_or(s, |x: f64| x.min(s)));
            }
        }
        if let Some(tg) = &target {
            values[col("target_x")] = tg.x;
            values[col("target_y")] = tg.y;
        }
        match out.solution.status {
            QpStatus::Optimal => metrics.solver.optimal += 1,
            QpStatus::MaxIterations => metrics.solver.max_iterations += 1,
            QpStatus::Infeasible => metrics.solver.infeasible += 1,
        }
        match out.fallback {
            Fallback::Relaxed => metrics.solver.relaxed += 1,
            Fallback::HoldPrevious => metrics.solver.held += 1,
            Fallback::None => {}
        }
        iterations_total += out.solution.iterations;
        metrics.solver.max_iterations_used = metrics.solver.max_iterations_used.max(out.solution.iterations);
        log.records.push(Record {
            domain: domain.clone(),
            status: out.solution.status,
            fallback: out.fallback,
            iterations: out.solution.iterations,
            values,
        });
        metrics.ticks += 1;

        // Fall detection for walkers.
        if let (Some(tf), Some(g0), Some(gs)) = (torso_frame, ground, &scenario.gait) {
            let h = kin.frame_pose(model, tf)?.position.z - g0;
            metrics.min_torso_height = Some(metrics.min_torso_height.map_or(h, |x: f64| x.min(h)));
            if h < gs.section.fall_fraction * gs.section.params.height {
                metrics.fault = Some(format!("t = {t:.4}: torso height {h:.3} m below fall threshold"));
                break;
            }
        }

        // Physics with zero-order hold on u.
        let welded = contacts.welded();
        let mut faulted = false;
        for _ in 0..scenario.substeps {
            match step(model, &state, &out.u, &scenario.sim, &welded, &scenario.forces) {
                Ok(s) => state = s,
                Err(e) => {
                    metrics.fault = Some(format!("t = {:.4}: {e}", state.t));
                    faulted = true;
                    break;
                }
            }
        }
        if faulted {
            break;
        }
        metrics.simulated_time = (k + 1) as f64 * dt_ctrl;
    }
    state.t = metrics.simulated_time;

    metrics.incidents = controller.incidents.clone();
    metrics.solver.mean_iterations = if metrics.ticks > 0 { iterations_total as f64 / metrics.ticks as f64 } else { 0.0 };
    for (b, tr) in scenario.barriers.iter().zip(&tracks) {
        if tr.min_h.is_finite() {
            metrics.min_h.insert(b.spec.name.clone(), tr.min_h);
            metrics.max_bound_violation.insert(b.spec.name.clone(), tr.worst);
        }
    }
    if let (Some((t0, x0)), Some(last)) = (speed_mark, log.records.last()) {
        let t1 = last.values[0];
        let x1 = last.values[col("com_x")];
        if t1 > t0 {
            metrics.mean_forward_speed = Some((x1 - x0) / (t1 - t0));
        }
    }
    evaluate_assertions(scenario, &mut metrics);
    Ok(RunOutput { log, metrics, final_state: state })
}

fn evaluate_assertions(scenario: &Scenario, metrics: &mut Metrics) {
    let a = &scenario.file.assertions;
    let mut results = Vec::new();
    for (name, bound) in &a.min_h {
        let v = metrics.min_h.get(name).copied().unwrap_or(f64::NAN);
        results.push(AssertionResult { name: format!("min_h.{name}"), passed: v >= *bound, detail: format!("min h = {v:.6e}, required ≥ {bound:e}") });
    }
    for (name, bound) in &a.h_below {
        let v = metrics.min_h.get(name).copied().unwrap_or(f64::NAN);
        results.push(AssertionResult { name: format!("h_below.{name}"), passed: v < *bound, detail: format!("min h = {v:.6e}, required < {bound:e}") });
    }
    if let Some(s) = a.min_steps {
        results.push(AssertionResult { name: "min_steps".into(), passed: metrics.steps >= s, detail: format!("{} steps, required ≥ {s}", metrics.steps) });
    }
    if let Some(c) = a.max_consistency {
        results.push(AssertionResult {
            name: "max_consistency".into(),
            passed: metrics.max_consistency <= c && metrics.max_dynamics_residual <= c,
            detail: format!("consistency {:.3e}, dynamics residual {:.3e}, limit {c:e}", metrics.max_consistency, metrics.max_dynamics_residual),
        });
    }
    if let Some(s) = a.min_separation {
        let v = metrics.min_separation.unwrap_or(f64::NAN);
        results.push(AssertionResult { name: "min_separation".into(), passed: v >= s, detail: format!("min separation {v:.6e}, required ≥ {s:e}") });
    }
    metrics.passed = metrics.fault.is_none() && results.iter().all(|r| r.passed);
    metrics.assertions = results;
}

/// Write `trajectory.csv` and `metrics.json` into `dir`.
pub fn write_artifacts(out: &RunOutput, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
    };
    write("trajectory.csv", out.log.to_csv())?;
    write("metrics.json", out.metrics.to_json())
}

/// Centre of mass of a logged configuration.
pub fn com_of(scenario: &Scenario, q: &DVector<f64>) -> Vector3<f64> {
    Kinematics::new(&scenario.model, q, None).com_position(&scenario.model)
}
